//! Ground-truth model generation and gesture sampling: the synthetic
//! counterpart of a glove corpus, used to validate the whole pipeline.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::decoder::BigramLm;
use crate::epenthesis::{interpolate_transition, TransitionModel};
use crate::error::{Error, Result};
use crate::frames::{Frame, GestureSequence, Label, StreamLayout, FRAME_DIM, STREAM_COUNT};
use crate::hmm::{SignHmm, StateModel, StreamDensity, VARIANCE_FLOOR};

/// Base per-component standard deviation of the synthetic state densities.
/// `SynthConfig::separation` scales how far apart state means are drawn in
/// units of this deviation.
pub const BASE_NOISE_STD: f64 = 0.02;

/// Controls for the synthetic vocabulary and its sampler.
///
/// Each stream carries a pool of archetype densities and every (sign,
/// state) picks one archetype per stream, mirroring the small per-stream
/// pattern inventories of real gesture data. A `twin_fraction` of signs
/// copies another sign's archetype choices except for a single swap in a
/// later state of one position/orientation stream: such pairs start
/// identically and diverge mid-gesture, which is what makes recognition
/// imperfect at a rate controlled by `separation`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub vocab_size: usize,
    pub n_states: usize,
    pub mixtures: usize,
    /// Archetype separation in units of the base noise deviation; expected
    /// inter-sign separation scales with it.
    pub separation: f64,
    /// Self-loop probability of every sign state (geometric dwell).
    pub self_loop: f64,
    /// Self-loop probability used when sampling epenthesis segments.
    pub epenthesis_self_loop: f64,
    /// Archetype pool size per stream.
    pub patterns_per_stream: usize,
    /// Fraction of signs drawn as near-duplicates of an earlier sign.
    pub twin_fraction: f64,
    /// Per-sign mean jitter around the archetype, in units of the base
    /// noise deviation.
    pub twin_jitter: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            vocab_size: 20,
            n_states: 3,
            mixtures: 1,
            separation: 4.0,
            self_loop: 0.6,
            epenthesis_self_loop: 0.5,
            patterns_per_stream: 32,
            twin_fraction: 0.2,
            twin_jitter: 0.25,
            seed: 7,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(Error::InvalidConfig("vocabulary must be non-empty".into()));
        }
        if !(self.separation > 0.0) {
            return Err(Error::InvalidConfig("separation must be positive".into()));
        }
        if self.n_states == 0 || self.mixtures == 0 || self.patterns_per_stream == 0 {
            return Err(Error::InvalidConfig("state, mixture, and pattern counts must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.self_loop) || !(0.0..1.0).contains(&self.epenthesis_self_loop) {
            return Err(Error::InvalidConfig("self-loop probabilities must lie in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.twin_fraction) || self.twin_jitter < 0.0 {
            return Err(Error::InvalidConfig("twin fraction must lie in [0, 1] and jitter be non-negative".into()));
        }
        Ok(())
    }
}

/// Draw a ground-truth vocabulary and a random bigram model, deterministic
/// for a fixed seed. Sign ids are zero-padded so lexicographic order is
/// numeric order.
pub fn make_vocab(cfg: &SynthConfig, layout: &StreamLayout) -> Result<(Vec<SignHmm>, BigramLm)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Per-stream archetype pools.
    let pools: Vec<Vec<Vec<f64>>> = layout
        .streams()
        .iter()
        .map(|info| {
            (0..cfg.patterns_per_stream)
                .map(|_| {
                    (0..info.dim)
                        .map(|_| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            (0.5 + cfg.separation * BASE_NOISE_STD * z).clamp(0.1, 0.9)
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    // Archetype choices per sign: `choices[sign][state][stream]`.
    let mut choices: Vec<Vec<[usize; STREAM_COUNT]>> = Vec::with_capacity(cfg.vocab_size);
    for i in 0..cfg.vocab_size {
        let twin = i > 0 && rng.random::<f64>() < cfg.twin_fraction;
        if twin {
            // Copy an earlier sign and swap one archetype in a later state
            // of a position or orientation stream.
            let base = rng.random_range(0..i);
            let mut tuple = choices[base].clone();
            let state = if cfg.n_states > 1 { rng.random_range(1..cfg.n_states) } else { 0 };
            let stream = rng.random_range(2..STREAM_COUNT);
            let old = tuple[state][stream];
            if cfg.patterns_per_stream > 1 {
                let mut new = rng.random_range(0..cfg.patterns_per_stream - 1);
                if new >= old {
                    new += 1;
                }
                tuple[state][stream] = new;
            }
            choices.push(tuple);
        } else {
            choices.push(
                (0..cfg.n_states)
                    .map(|_| {
                        let mut row = [0usize; STREAM_COUNT];
                        for slot in &mut row {
                            *slot = rng.random_range(0..cfg.patterns_per_stream);
                        }
                        row
                    })
                    .collect(),
            );
        }
    }

    let mut signs = Vec::with_capacity(cfg.vocab_size);
    for (i, tuple) in choices.iter().enumerate() {
        let states = (0..cfg.n_states)
            .map(|j| {
                let streams = layout
                    .streams()
                    .iter()
                    .enumerate()
                    .map(|(s, info)| {
                        // Sign-specific anchor: archetype plus jitter.
                        let anchor: Vec<f64> = pools[s][tuple[j][s]]
                            .iter()
                            .map(|&a| {
                                let z: f64 = StandardNormal.sample(&mut rng);
                                (a + cfg.twin_jitter * BASE_NOISE_STD * z).clamp(0.05, 0.95)
                            })
                            .collect();
                        let mut weights = Vec::with_capacity(cfg.mixtures);
                        let mut means = Vec::with_capacity(cfg.mixtures);
                        let mut variances = Vec::with_capacity(cfg.mixtures);
                        for c in 0..cfg.mixtures {
                            let mean: Vec<f64> = if cfg.mixtures == 1 && c == 0 {
                                anchor.clone()
                            } else {
                                anchor
                                    .iter()
                                    .map(|&a| {
                                        let z: f64 = StandardNormal.sample(&mut rng);
                                        (a + 0.5 * BASE_NOISE_STD * z).clamp(0.05, 0.95)
                                    })
                                    .collect()
                            };
                            let var: Vec<f64> = (0..info.dim)
                                .map(|_| {
                                    let scale = 0.8 + 0.4 * rng.random::<f64>();
                                    (BASE_NOISE_STD * scale).powi(2).max(VARIANCE_FLOOR)
                                })
                                .collect();
                            weights.push(1.0 + rng.random::<f64>());
                            means.push(mean);
                            variances.push(var);
                        }
                        let total: f64 = weights.iter().sum();
                        for w in &mut weights {
                            *w /= total;
                        }
                        StreamDensity { weights, means, variances }
                    })
                    .collect();
                StateModel { streams }
            })
            .collect();
        signs.push(SignHmm {
            id: format!("sign{i:04}"),
            states,
            self_loop: vec![cfg.self_loop; cfg.n_states],
            occupancy: vec![1.0; cfg.n_states],
        });
    }

    // Random bigram counts, then add-one smoothing via the estimator.
    let vocab: Vec<String> = signs.iter().map(|s| s.id.clone()).collect();
    let corpus: Vec<Vec<String>> = (0..cfg.vocab_size.max(4))
        .map(|_| {
            let len = rng.random_range(2..6);
            (0..len).map(|_| vocab[rng.random_range(0..vocab.len())].clone()).collect()
        })
        .collect();
    let lm = BigramLm::estimate(&corpus, &vocab)?;
    Ok((signs, lm))
}

fn sample_state_frame(state: &StateModel, layout: &StreamLayout, rng: &mut ChaCha8Rng) -> Frame {
    let mut values = vec![0.0; FRAME_DIM];
    for s in 0..STREAM_COUNT {
        let info = layout.stream(s);
        let density = &state.streams[s];
        // Pick a component, then draw a diagonal Gaussian sample.
        let mut pick = rng.random::<f64>();
        let mut comp = 0;
        for (c, &w) in density.weights.iter().enumerate() {
            comp = c;
            if pick < w {
                break;
            }
            pick -= w;
        }
        for d in 0..info.dim {
            let z: f64 = StandardNormal.sample(rng);
            let value = density.means[comp][d] + density.variances[comp][d].sqrt() * z;
            values[info.offset + d] = value.clamp(0.0, 1.0);
        }
    }
    Frame { values }
}

/// Sample one isolated sign: geometric dwell per state via the self-loop
/// probability, so the length is always at least the state count.
pub fn sample_sign(hmm: &SignHmm, layout: &StreamLayout, rng: &mut ChaCha8Rng) -> GestureSequence {
    let mut frames = Vec::new();
    for j in 0..hmm.n_states() {
        loop {
            frames.push(sample_state_frame(&hmm.states[j], layout, rng));
            let stay = hmm.self_loop[j].min(1.0 - 1e-9);
            if !rng.random_bool(stay) {
                break;
            }
        }
    }
    GestureSequence { label: Some(Label::Sign(hmm.id.clone())), frames }
}

/// How sentences join consecutive signs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EpenthesisMode {
    /// Signs abut directly.
    Off,
    /// Insert epenthesis frames sampled from the interpolated transition
    /// model between consecutive signs.
    On,
}

/// Sample a labeled sentence: the sign sequence is drawn from the bigram
/// model, and consecutive signs are joined per `mode`.
pub fn sample_sentence(
    vocab: &[SignHmm],
    lm: &BigramLm,
    layout: &StreamLayout,
    mode: EpenthesisMode,
    length_range: (usize, usize),
    epenthesis_self_loop: f64,
    rng: &mut ChaCha8Rng,
) -> Result<GestureSequence> {
    if vocab.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    let (lo, hi) = length_range;
    if lo == 0 || hi < lo {
        return Err(Error::InvalidConfig(format!("bad sentence length range {lo}..={hi}")));
    }
    let length = rng.random_range(lo..=hi);

    // Draw the sign sequence from the bigram conditionals.
    let mut order: Vec<usize> = Vec::with_capacity(length);
    for i in 0..length {
        let prev = if i == 0 { None } else { Some(order[i - 1]) };
        let probs = lm.probabilities(prev);
        let mut pick = rng.random::<f64>();
        let mut choice = probs.len() - 1;
        for (v, &p) in probs.iter().enumerate() {
            if pick < p {
                choice = v;
                break;
            }
            pick -= p;
        }
        order.push(choice);
    }

    let mut frames = Vec::new();
    let mut labels = Vec::with_capacity(length);
    for (i, &v) in order.iter().enumerate() {
        let sign = &vocab[v];
        labels.push(sign.id.clone());
        frames.extend(sample_sign(sign, layout, rng).frames);
        if mode == EpenthesisMode::On && i + 1 < order.len() {
            let transition: TransitionModel = interpolate_transition(sign, &vocab[order[i + 1]])?;
            loop {
                frames.push(sample_state_frame(&transition.states[0], layout, rng));
                if !rng.random_bool(epenthesis_self_loop.min(1.0 - 1e-9)) {
                    break;
                }
            }
        }
    }
    Ok(GestureSequence { label: Some(Label::Sentence(labels)), frames })
}
