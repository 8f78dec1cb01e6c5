use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use signstream::frames::{GestureSequence, StreamLayout};
use signstream::hmm::viterbi_score;
use signstream::isolated::{active_candidates, build_subsets, recognize_isolated, GateConfig};
use signstream::synth::{make_vocab, sample_sign, SynthConfig};
use signstream::tying::cluster_stream_states;

fn main() {
    let layout = StreamLayout::standard();
    for (delta, twin_f) in [(0.6f64, 0.3f64), (0.8, 0.3), (0.8, 0.5), (1.0, 0.5), (1.2, 0.5)] {
        let mut untied = 0.0; let mut t16 = 0.0; let mut t64 = 0.0; let mut t256 = 0.0;
        let mut gated = 0.0; let mut recall = 0.0; let mut fallback = 0.0; let mut ratio = 0.0;
        let seeds = 2u64;
        for seed in 0..seeds {
            let cfg = SynthConfig {
                vocab_size: 200, separation: delta, twin_fraction: twin_f,
                patterns_per_stream: 32, seed: 100 + seed, ..Default::default()
            };
            let (signs, _) = make_vocab(&cfg, &layout).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
            let tests: Vec<(usize, GestureSequence)> = (0..signs.len())
                .flat_map(|i| [i, i])
                .map(|i| (i, sample_sign(&signs[i], &layout, &mut rng)))
                .collect();
            let mut c = 0usize;
            for (truth, seq) in &tests {
                let mut best = (f64::NEG_INFINITY, usize::MAX);
                for (i, m) in signs.iter().enumerate() {
                    if let Ok((s, _)) = viterbi_score(m, seq, &layout) {
                        if s > best.0 { best = (s, i); }
                    }
                }
                c += (best.1 == *truth) as usize;
            }
            untied += c as f64 / tests.len() as f64;
            for k in [16usize, 64, 256] {
                let tms = cluster_stream_states(&signs, &layout, &[k; 6]).unwrap();
                let cb = build_subsets(&tms);
                let g0 = GateConfig { tau: 0.0, start_frames: 3 };
                let mut c0 = 0usize;
                for (truth, seq) in &tests {
                    let r = recognize_isolated(seq, &tms, &cb, &g0, 1).unwrap();
                    c0 += (tms.sign_index(&r.ranked[0].0).unwrap() == *truth) as usize;
                }
                let acc = c0 as f64 / tests.len() as f64;
                match k { 16 => t16 += acc, 64 => t64 += acc, _ => t256 += acc }
                if k == 256 {
                    let g1 = GateConfig { tau: 1e-3, start_frames: 3 };
                    let mut c1 = 0usize; let mut rec = 0usize; let mut fb = 0usize; let mut ev = 0usize;
                    for (truth, seq) in &tests {
                        let set = active_candidates(seq, &tms, &cb, &g1);
                        rec += set.mask[*truth] as usize;
                        fb += set.fallback as usize;
                        let r = recognize_isolated(seq, &tms, &cb, &g1, 1).unwrap();
                        c1 += (tms.sign_index(&r.ranked[0].0).unwrap() == *truth) as usize;
                        ev += r.stats.viterbi_evals;
                    }
                    let n = tests.len() as f64;
                    gated += c1 as f64 / n; recall += rec as f64 / n; fallback += fb as f64 / n;
                    ratio += signs.len() as f64 * n / ev as f64;
                }
            }
        }
        let n = seeds as f64;
        println!(
            "d {delta} tf {twin_f}: untied {:.3} K16 {:.3} K64 {:.3} K256 {:.3} | gated {:.3} recall {:.4} fb {:.3} evals x{:.1}",
            untied / n, t16 / n, t64 / n, t256 / n, gated / n, recall / n, fallback / n, ratio / n
        );
    }
}
