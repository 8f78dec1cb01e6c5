//! Baum-Welch training of single-sign HMMs and the 3-vs-5 state selection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{GestureSequence, StreamLayout, STREAM_COUNT};
use crate::hmm::{
    forward_log_likelihood, log_add, state_log_likelihood, SignHmm, StateModel, StreamDensity,
    VARIANCE_FLOOR,
};

/// EM controls; the defaults match the toolkit-wide convention.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOptions {
    pub max_iterations: usize,
    pub rel_tolerance: f64,
    pub variance_floor: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { max_iterations: 20, rel_tolerance: 1e-4, variance_floor: VARIANCE_FLOOR }
    }
}

/// Trained model plus the per-iteration total log-likelihood trace.
#[derive(Debug, Clone)]
pub struct Trained {
    pub hmm: SignHmm,
    pub log_likelihoods: Vec<f64>,
    /// Sequences skipped because they were shorter than the state count.
    pub skipped: usize,
}

/// Estimate a left-to-right no-skip HMM with `n_states` states and
/// `mixtures` Gaussian components per stream density.
///
/// Initialization segments each sequence uniformly into `n_states` blocks,
/// so the result is deterministic given the input order. The total training
/// log-likelihood never decreases across iterations (up to variance
/// flooring).
pub fn baum_welch_train(
    id: &str,
    seqs: &[GestureSequence],
    layout: &StreamLayout,
    n_states: usize,
    mixtures: usize,
    opts: &TrainOptions,
) -> Result<Trained> {
    if seqs.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let usable: Vec<&GestureSequence> = seqs.iter().filter(|s| s.len() >= n_states).collect();
    let skipped = seqs.len() - usable.len();
    if usable.is_empty() {
        return Err(Error::AllSequencesInfeasible);
    }

    let mut hmm = initialize(id, &usable, layout, n_states, mixtures, opts);
    let mut log_likelihoods = Vec::new();

    for _ in 0..opts.max_iterations {
        let (ll, next) = em_iteration(&hmm, &usable, layout, mixtures, opts)?;
        log_likelihoods.push(ll);
        hmm = next;
        let k = log_likelihoods.len();
        if k >= 2 {
            let prev = log_likelihoods[k - 2];
            let rel = (log_likelihoods[k - 1] - prev).abs() / prev.abs().max(1.0);
            if rel < opts.rel_tolerance {
                break;
            }
        }
    }
    Ok(Trained { hmm, log_likelihoods, skipped })
}

/// Uniform-segmentation initialization: each sequence is cut into
/// `n_states` equal blocks and block moments seed the state densities.
fn initialize(
    id: &str,
    seqs: &[&GestureSequence],
    layout: &StreamLayout,
    n_states: usize,
    mixtures: usize,
    opts: &TrainOptions,
) -> SignHmm {
    // Gather the frames assigned to each state by uniform segmentation.
    let mut buckets: Vec<Vec<&[f64]>> = vec![Vec::new(); n_states];
    for seq in seqs {
        let t_len = seq.len();
        for (t, frame) in seq.frames.iter().enumerate() {
            let state = (t * n_states / t_len).min(n_states - 1);
            buckets[state].push(&frame.values);
        }
    }

    let mut states = Vec::with_capacity(n_states);
    let mut self_loop = Vec::with_capacity(n_states);
    let mut occupancy = Vec::with_capacity(n_states);
    for (i, bucket) in buckets.iter().enumerate() {
        let streams = (0..STREAM_COUNT)
            .map(|s| {
                let info = layout.stream(s);
                let vectors: Vec<&[f64]> =
                    bucket.iter().map(|f| &f[info.offset..info.offset + info.dim]).collect();
                init_density(&vectors, info.dim, mixtures, opts.variance_floor)
            })
            .collect();
        states.push(StateModel { streams });
        let dwell = (bucket.len() as f64 / seqs.len() as f64).max(1.0);
        self_loop.push(if i == n_states - 1 { 1.0 } else { (1.0 - 1.0 / dwell).clamp(0.1, 0.9) });
        occupancy.push(bucket.len() as f64);
    }
    SignHmm { id: id.to_string(), states, self_loop, occupancy }
}

/// Moment-based density init. For several mixture components the frames are
/// ordered by norm and chunked, which is deterministic and separates the
/// data enough for EM to refine.
fn init_density(vectors: &[&[f64]], dim: usize, mixtures: usize, floor: f64) -> StreamDensity {
    if vectors.is_empty() {
        return StreamDensity {
            weights: vec![1.0 / mixtures as f64; mixtures],
            means: vec![vec![0.5; dim]; mixtures],
            variances: vec![vec![0.1f64.max(floor); dim]; mixtures],
        };
    }
    let mut order: Vec<usize> = (0..vectors.len()).collect();
    if mixtures > 1 {
        let norms: Vec<f64> = vectors.iter().map(|v| v.iter().map(|x| x * x).sum()).collect();
        order.sort_by(|&a, &b| norms[a].total_cmp(&norms[b]).then(a.cmp(&b)));
    }
    let m = mixtures.min(vectors.len());
    let chunk = vectors.len().div_ceil(m);
    let mut weights = Vec::new();
    let mut means = Vec::new();
    let mut variances = Vec::new();
    for c in 0..m {
        let members = &order[c * chunk..((c + 1) * chunk).min(order.len())];
        let count = members.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for &idx in members {
            for d in 0..dim {
                mean[d] += vectors[idx][d];
                sq[d] += vectors[idx][d] * vectors[idx][d];
            }
        }
        for d in 0..dim {
            mean[d] /= count;
            sq[d] = (sq[d] / count - mean[d] * mean[d]).max(floor);
        }
        weights.push(count);
        means.push(mean);
        variances.push(sq);
    }
    // Pad with copies when there were fewer frames than components.
    while weights.len() < mixtures {
        weights.push(weights[0]);
        means.push(means[0].clone());
        variances.push(variances[0].clone());
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    StreamDensity { weights, means, variances }
}

struct Accumulator {
    // per state
    occupancy: Vec<f64>,
    self_count: Vec<f64>,
    advance_count: Vec<f64>,
    // per (state, stream, component)
    comp_weight: Vec<Vec<Vec<f64>>>,
    comp_sum: Vec<Vec<Vec<Vec<f64>>>>,
    comp_sq: Vec<Vec<Vec<Vec<f64>>>>,
}

impl Accumulator {
    fn new(hmm: &SignHmm, layout: &StreamLayout, mixtures: usize) -> Self {
        let n = hmm.n_states();
        let comp_weight = vec![vec![vec![0.0; mixtures]; STREAM_COUNT]; n];
        let comp_sum = (0..n)
            .map(|_| {
                (0..STREAM_COUNT)
                    .map(|s| vec![vec![0.0; layout.stream(s).dim]; mixtures])
                    .collect()
            })
            .collect();
        let comp_sq = (0..n)
            .map(|_| {
                (0..STREAM_COUNT)
                    .map(|s| vec![vec![0.0; layout.stream(s).dim]; mixtures])
                    .collect()
            })
            .collect();
        Accumulator {
            occupancy: vec![0.0; n],
            self_count: vec![0.0; n],
            advance_count: vec![0.0; n],
            comp_weight,
            comp_sum,
            comp_sq,
        }
    }
}

/// One EM step over all sequences; returns the current-model log-likelihood
/// and the re-estimated model.
fn em_iteration(
    hmm: &SignHmm,
    seqs: &[&GestureSequence],
    layout: &StreamLayout,
    mixtures: usize,
    opts: &TrainOptions,
) -> Result<(f64, SignHmm)> {
    let n = hmm.n_states();
    let mut acc = Accumulator::new(hmm, layout, mixtures);
    let mut total_ll = 0.0;

    for seq in seqs {
        let t_len = seq.len();
        // Emission cache: emit[t][j]
        let emit: Vec<Vec<f64>> = (0..t_len)
            .map(|t| {
                (0..n)
                    .map(|j| state_log_likelihood(&hmm.states[j], &seq.frames[t].values, layout))
                    .collect()
            })
            .collect();

        let log_self: Vec<f64> =
            (0..n).map(|j| if j == n - 1 { hmm.log_final_self() } else { hmm.log_self(j) }).collect();
        let log_fwd: Vec<f64> = (0..n).map(|j| hmm.log_forward(j)).collect();

        // Forward pass constrained to start at 0, end at n-1.
        let mut alpha = vec![vec![f64::NEG_INFINITY; n]; t_len];
        alpha[0][0] = emit[0][0];
        for t in 1..t_len {
            for j in 0..n {
                let stay = alpha[t - 1][j] + log_self[j];
                let adv = if j > 0 { alpha[t - 1][j - 1] + log_fwd[j - 1] } else { f64::NEG_INFINITY };
                let v = log_add(stay, adv);
                alpha[t][j] = if v == f64::NEG_INFINITY { v } else { v + emit[t][j] };
            }
        }
        let ll = alpha[t_len - 1][n - 1];
        if ll == f64::NEG_INFINITY {
            continue;
        }
        total_ll += ll;

        // Backward pass with the matching end constraint.
        let mut beta = vec![vec![f64::NEG_INFINITY; n]; t_len];
        beta[t_len - 1][n - 1] = 0.0;
        for t in (0..t_len - 1).rev() {
            for j in 0..n {
                let stay = log_self[j] + emit[t + 1][j] + beta[t + 1][j];
                let adv = if j + 1 < n {
                    log_fwd[j] + emit[t + 1][j + 1] + beta[t + 1][j + 1]
                } else {
                    f64::NEG_INFINITY
                };
                beta[t][j] = log_add(stay, adv);
            }
        }

        for t in 0..t_len {
            for j in 0..n {
                let lg = alpha[t][j] + beta[t][j] - ll;
                if lg < -700.0 {
                    continue;
                }
                let gamma = lg.exp();
                acc.occupancy[j] += gamma;

                // Per-component responsibilities within each stream mixture.
                let frame = &seq.frames[t].values;
                for s in 0..STREAM_COUNT {
                    let x = layout.slice(frame, s);
                    let density = &hmm.states[j].streams[s];
                    let m = density.mixtures();
                    if m == 1 {
                        accumulate_component(&mut acc, j, s, 0, gamma, x);
                    } else {
                        let comp_lls: Vec<f64> =
                            (0..m).map(|c| density.component_log_density(c, x)).collect();
                        let denom = crate::hmm::log_sum_exp(&comp_lls);
                        if denom == f64::NEG_INFINITY {
                            continue;
                        }
                        for c in 0..m {
                            let r = (comp_lls[c] - denom).exp() * gamma;
                            accumulate_component(&mut acc, j, s, c, r, x);
                        }
                    }
                }

                // Transition statistics (self vs advance) for t < T-1.
                if t + 1 < t_len {
                    let xi_self = alpha[t][j] + log_self[j] + emit[t + 1][j] + beta[t + 1][j] - ll;
                    if xi_self > -700.0 {
                        acc.self_count[j] += xi_self.exp();
                    }
                    if j + 1 < n {
                        let xi_adv =
                            alpha[t][j] + log_fwd[j] + emit[t + 1][j + 1] + beta[t + 1][j + 1] - ll;
                        if xi_adv > -700.0 {
                            acc.advance_count[j] += xi_adv.exp();
                        }
                    }
                }
            }
        }
    }

    if total_ll == 0.0 && acc.occupancy.iter().all(|&o| o == 0.0) {
        return Err(Error::AllSequencesInfeasible);
    }

    let next = reestimate(hmm, &acc, layout, opts);
    Ok((total_ll, next))
}

fn accumulate_component(acc: &mut Accumulator, state: usize, stream: usize, comp: usize, r: f64, x: &[f64]) {
    acc.comp_weight[state][stream][comp] += r;
    let sums = &mut acc.comp_sum[state][stream][comp];
    let sqs = &mut acc.comp_sq[state][stream][comp];
    for d in 0..x.len() {
        sums[d] += r * x[d];
        sqs[d] += r * x[d] * x[d];
    }
}

fn reestimate(hmm: &SignHmm, acc: &Accumulator, layout: &StreamLayout, opts: &TrainOptions) -> SignHmm {
    let n = hmm.n_states();
    const MIN_OCC: f64 = 1e-8;

    let mut states = Vec::with_capacity(n);
    for j in 0..n {
        let streams = (0..STREAM_COUNT)
            .map(|s| {
                let old = &hmm.states[j].streams[s];
                let m = old.mixtures();
                let total: f64 = acc.comp_weight[j][s].iter().sum();
                if total < MIN_OCC {
                    return old.clone();
                }
                let dim = layout.stream(s).dim;
                let mut weights = Vec::with_capacity(m);
                let mut means = Vec::with_capacity(m);
                let mut variances = Vec::with_capacity(m);
                for c in 0..m {
                    let w = acc.comp_weight[j][s][c];
                    if w < MIN_OCC {
                        weights.push(w);
                        means.push(old.means[c].clone());
                        variances.push(old.variances[c].clone());
                        continue;
                    }
                    let mut mean = vec![0.0; dim];
                    let mut var = vec![0.0; dim];
                    for d in 0..dim {
                        mean[d] = acc.comp_sum[j][s][c][d] / w;
                        var[d] = (acc.comp_sq[j][s][c][d] / w - mean[d] * mean[d])
                            .max(opts.variance_floor);
                    }
                    weights.push(w);
                    means.push(mean);
                    variances.push(var);
                }
                let wsum: f64 = weights.iter().sum();
                for w in &mut weights {
                    *w /= wsum;
                }
                StreamDensity { weights, means, variances }
            })
            .collect();
        states.push(StateModel { streams });
    }

    let mut self_loop = Vec::with_capacity(n);
    for j in 0..n {
        if j == n - 1 {
            // No exit events in isolated training data; the final state keeps
            // an absorbing self-loop.
            self_loop.push(1.0);
        } else {
            let denom = acc.self_count[j] + acc.advance_count[j];
            if denom < MIN_OCC {
                self_loop.push(hmm.self_loop[j]);
            } else {
                self_loop.push((acc.self_count[j] / denom).clamp(1e-6, 1.0 - 1e-6));
            }
        }
    }

    SignHmm { id: hmm.id.clone(), states, self_loop, occupancy: acc.occupancy.clone() }
}

/// Pick 3 or 5 states by held-out per-frame log-likelihood.
///
/// The last sequence is held out, both counts are trained on the rest, and
/// the higher held-out score wins; ties and degenerate inputs fall back
/// to 3.
pub fn select_state_count(
    seqs: &[GestureSequence],
    layout: &StreamLayout,
    mixtures: usize,
    opts: &TrainOptions,
) -> usize {
    if seqs.len() < 2 {
        return 3;
    }
    let (held_out, rest) = seqs.split_last().expect("len >= 2");
    let mut best = (3usize, f64::NEG_INFINITY);
    for n_states in [3usize, 5] {
        let Ok(trained) = baum_welch_train("probe", rest, layout, n_states, mixtures, opts) else {
            continue;
        };
        let Ok(ll) = forward_log_likelihood(&trained.hmm, held_out, layout) else {
            continue;
        };
        let per_frame = ll / held_out.len() as f64;
        if per_frame > best.1 {
            best = (n_states, per_frame);
        }
    }
    best.0
}
