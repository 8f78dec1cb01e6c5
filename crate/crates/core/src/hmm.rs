//! Untied multi-stream HMMs: Gaussian-mixture stream densities, exact state
//! scoring, and Viterbi / forward passes for single signs.
//!
//! Every sign model is left-to-right without skip: a state may loop on
//! itself or advance to its immediate successor, nothing else.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{GestureSequence, StreamLayout, STREAM_COUNT};

/// Lower bound applied to every trained variance.
pub const VARIANCE_FLOOR: f64 = 1e-4;
/// Floor for a single stream's log-density, keeping state sums finite.
pub const LOG_DENSITY_FLOOR: f64 = -1e10;

const LOG_2PI: f64 = 1.8378770664093453;

thread_local! {
    // Count of full density evaluations on this thread, used to verify that
    // tied scoring really is table lookups rather than re-evaluation.
    static DENSITY_EVALS: Cell<u64> = const { Cell::new(0) };
}

/// Number of `StreamDensity::log_density` calls on the current thread.
pub fn density_eval_count() -> u64 {
    DENSITY_EVALS.with(Cell::get)
}

/// Mixture of diagonal-covariance Gaussians over one stream's dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamDensity {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

impl StreamDensity {
    /// Single Gaussian with the given moments.
    pub fn gaussian(mean: Vec<f64>, variance: Vec<f64>) -> Self {
        StreamDensity { weights: vec![1.0], means: vec![mean], variances: vec![variance] }
    }

    pub fn mixtures(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.weights.len();
        if m == 0 || self.means.len() != m || self.variances.len() != m {
            return Err(Error::MixtureSizeMismatch(self.means.len(), m));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.weights.iter().any(|&w| w < 0.0) {
            return Err(Error::InvalidConfig(format!("mixture weights sum to {sum}")));
        }
        let d = self.dim();
        for (mu, var) in self.means.iter().zip(&self.variances) {
            if mu.len() != d || var.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: mu.len().min(var.len()) });
            }
            if var.iter().any(|&v| v < VARIANCE_FLOOR - 1e-12) {
                return Err(Error::InvalidConfig("variance below floor".into()));
            }
        }
        Ok(())
    }

    /// Log density at `x`, floored at [`LOG_DENSITY_FLOOR`].
    pub fn log_density(&self, x: &[f64]) -> f64 {
        DENSITY_EVALS.with(|c| c.set(c.get() + 1));
        let m = self.weights.len();
        if m == 1 {
            return self.component_log_density(0, x).max(LOG_DENSITY_FLOOR);
        }
        let terms: Vec<f64> = (0..m).map(|c| self.component_log_density(c, x)).collect();
        let best = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if best == f64::NEG_INFINITY {
            return LOG_DENSITY_FLOOR;
        }
        let sum: f64 = terms.iter().map(|&t| (t - best).exp()).sum();
        (best + sum.ln()).max(LOG_DENSITY_FLOOR)
    }

    /// Log of one weighted mixture component, used by EM responsibilities.
    pub(crate) fn component_log_density(&self, c: usize, x: &[f64]) -> f64 {
        let mut acc = if self.weights[c] > 0.0 { self.weights[c].ln() } else { return f64::NEG_INFINITY };
        let mean = &self.means[c];
        let var = &self.variances[c];
        for d in 0..x.len() {
            let diff = x[d] - mean[d];
            acc -= 0.5 * (diff * diff / var[d] + (LOG_2PI + var[d].ln()));
        }
        acc
    }

    /// Mixture mean: the occupancy-weighted average of component means.
    pub fn pooled_mean(&self) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d];
        for (w, mu) in self.weights.iter().zip(&self.means) {
            for i in 0..d {
                out[i] += w * mu[i];
            }
        }
        out
    }
}

/// Emission model of one HMM state: six per-stream mixture densities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateModel {
    pub streams: Vec<StreamDensity>,
}

impl StateModel {
    pub fn validate(&self, layout: &StreamLayout) -> Result<()> {
        if self.streams.len() != STREAM_COUNT {
            return Err(Error::DimensionMismatch { expected: STREAM_COUNT, got: self.streams.len() });
        }
        for (s, density) in self.streams.iter().enumerate() {
            density.validate()?;
            if density.dim() != layout.stream(s).dim {
                return Err(Error::DimensionMismatch {
                    expected: layout.stream(s).dim,
                    got: density.dim(),
                });
            }
        }
        Ok(())
    }
}

/// Per-state log observation probability: the sum of the six stream
/// log-densities.
pub fn state_log_likelihood(state: &StateModel, frame: &[f64], layout: &StreamLayout) -> f64 {
    let mut total = 0.0;
    for s in 0..STREAM_COUNT {
        total += state.streams[s].log_density(layout.slice(frame, s));
    }
    total
}

/// Left-to-right no-skip HMM for one sign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignHmm {
    pub id: String,
    pub states: Vec<StateModel>,
    /// Self-loop probability per state; the forward (or exit) probability is
    /// its complement.
    pub self_loop: Vec<f64>,
    /// Expected training frame count per state; 1.0 for hand-built models.
    pub occupancy: Vec<f64>,
}

impl SignHmm {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn log_self(&self, state: usize) -> f64 {
        self.self_loop[state].ln()
    }

    pub fn log_forward(&self, state: usize) -> f64 {
        (1.0 - self.self_loop[state]).ln()
    }

    /// Log probability of leaving the final state. A final self-loop of 1
    /// means the model dwells freely and exits unweighted.
    pub fn log_exit(&self) -> f64 {
        let last = self.n_states() - 1;
        if self.self_loop[last] >= 1.0 {
            0.0
        } else {
            (1.0 - self.self_loop[last]).ln()
        }
    }

    /// Log self-loop weight of the final state under the same convention.
    pub fn log_final_self(&self) -> f64 {
        let last = self.n_states() - 1;
        if self.self_loop[last] >= 1.0 {
            0.0
        } else {
            self.self_loop[last].ln()
        }
    }

    pub fn validate(&self, layout: &StreamLayout) -> Result<()> {
        let n = self.n_states();
        if n == 0 || self.self_loop.len() != n || self.occupancy.len() != n {
            return Err(Error::InvalidConfig(format!("sign `{}` has inconsistent state arrays", self.id)));
        }
        for state in &self.states {
            state.validate(layout)?;
        }
        if self.self_loop.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
            return Err(Error::InvalidConfig(format!("sign `{}` has out-of-range transition", self.id)));
        }
        Ok(())
    }
}

/// Best-path log score and state alignment of `seq` under `hmm`.
///
/// The path is pinned to start in the first state and end in the last; a
/// sequence shorter than the state count cannot satisfy that and errors.
pub fn viterbi_score(hmm: &SignHmm, seq: &GestureSequence, layout: &StreamLayout) -> Result<(f64, Vec<usize>)> {
    let t_len = seq.len();
    let n = hmm.n_states();
    if t_len < n {
        return Err(Error::InfeasibleSequence { frames: t_len, states: n });
    }
    let emit = |state: usize, t: usize| state_log_likelihood(&hmm.states[state], &seq.frames[t].values, layout);

    let mut prev = vec![f64::NEG_INFINITY; n];
    let mut cur = vec![f64::NEG_INFINITY; n];
    let mut back = vec![vec![0u8; n]; t_len]; // 0 = self, 1 = from predecessor

    prev[0] = emit(0, 0);
    for t in 1..t_len {
        for j in 0..n {
            let stay = if j == n - 1 {
                prev[j] + hmm.log_final_self()
            } else {
                prev[j] + hmm.log_self(j)
            };
            let advance = if j > 0 { prev[j - 1] + hmm.log_forward(j - 1) } else { f64::NEG_INFINITY };
            let (score, step) = if advance > stay { (advance, 1u8) } else { (stay, 0u8) };
            cur[j] = if score == f64::NEG_INFINITY { score } else { score + emit(j, t) };
            back[t][j] = step;
        }
        std::mem::swap(&mut prev, &mut cur);
    }

    let score = prev[n - 1];
    if score == f64::NEG_INFINITY {
        return Err(Error::InfeasibleSequence { frames: t_len, states: n });
    }
    let mut path = vec![0usize; t_len];
    let mut state = n - 1;
    path[t_len - 1] = state;
    for t in (1..t_len).rev() {
        if back[t][state] == 1 {
            state -= 1;
        }
        path[t - 1] = state;
    }
    Ok((score, path))
}

/// Total log-likelihood of `seq` summed over all start-to-end paths.
pub fn forward_log_likelihood(hmm: &SignHmm, seq: &GestureSequence, layout: &StreamLayout) -> Result<f64> {
    let t_len = seq.len();
    let n = hmm.n_states();
    if t_len < n {
        return Err(Error::InfeasibleSequence { frames: t_len, states: n });
    }
    let emit = |state: usize, t: usize| state_log_likelihood(&hmm.states[state], &seq.frames[t].values, layout);

    let mut prev = vec![f64::NEG_INFINITY; n];
    let mut cur = vec![f64::NEG_INFINITY; n];
    prev[0] = emit(0, 0);
    for t in 1..t_len {
        for j in 0..n {
            let stay = if j == n - 1 {
                prev[j] + hmm.log_final_self()
            } else {
                prev[j] + hmm.log_self(j)
            };
            let advance = if j > 0 { prev[j - 1] + hmm.log_forward(j - 1) } else { f64::NEG_INFINITY };
            let total = log_add(stay, advance);
            cur[j] = if total == f64::NEG_INFINITY { total } else { total + emit(j, t) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let ll = prev[n - 1];
    if ll == f64::NEG_INFINITY {
        return Err(Error::InfeasibleSequence { frames: t_len, states: n });
    }
    Ok(ll)
}

/// Numerically stable `log(exp(a) + exp(b))`.
pub fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let hi = a.max(b);
    hi + ((a - hi).exp() + (b - hi).exp()).ln()
}

/// Stable log-sum-exp over a slice.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + xs.iter().map(|&x| (x - hi).exp()).sum::<f64>().ln()
}
