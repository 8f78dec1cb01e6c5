//! Stream state tying: clusters every (sign, state) stream density into a
//! small per-stream pattern codebook and scores frames through a lookup
//! table, so per-frame density work is bounded by the codebook size instead
//! of the vocabulary size.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{Frame, StreamLayout, STREAM_COUNT};
use crate::hmm::{SignHmm, StreamDensity, VARIANCE_FLOOR};
use crate::kmeans;

/// Per-stream shared pattern densities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiedCodebook {
    /// `patterns[s]` holds stream `s`'s shared densities.
    pub patterns: Vec<Vec<StreamDensity>>,
}

impl TiedCodebook {
    pub fn pattern_counts(&self) -> Vec<usize> {
        self.patterns.iter().map(Vec::len).collect()
    }
}

/// Transition skeleton of one sign plus its (state, stream) -> pattern map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignSkeleton {
    pub id: String,
    pub self_loop: Vec<f64>,
    pub occupancy: Vec<f64>,
    /// `pattern[state][stream]` indexes into the codebook.
    pub pattern: Vec<[usize; STREAM_COUNT]>,
}

impl SignSkeleton {
    pub fn n_states(&self) -> usize {
        self.pattern.len()
    }

    pub fn log_self(&self, state: usize) -> f64 {
        self.self_loop[state].ln()
    }

    pub fn log_forward(&self, state: usize) -> f64 {
        (1.0 - self.self_loop[state]).ln()
    }

    /// Final-state conventions match [`SignHmm`]: a self-loop of 1 dwells
    /// and exits unweighted.
    pub fn log_final_self(&self) -> f64 {
        let p = self.self_loop[self.n_states() - 1];
        if p >= 1.0 {
            0.0
        } else {
            p.ln()
        }
    }

    pub fn log_exit(&self) -> f64 {
        let p = self.self_loop[self.n_states() - 1];
        if p >= 1.0 {
            0.0
        } else {
            (1.0 - p).ln()
        }
    }
}

/// The tied model set: sign skeletons, the shared codebook, and a scoring
/// order that lets signs with equal pattern prefixes share partial sums.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiedModelSet {
    pub layout: StreamLayout,
    pub skeletons: Vec<SignSkeleton>,
    pub codebook: TiedCodebook,
    /// Streams whose requested pattern count exceeded the number of
    /// distinct densities and was reduced.
    pub reduced_streams: Vec<usize>,
    /// All (sign, state) rows sorted by pattern tuple; scoring walks this
    /// order so shared prefixes are added once.
    sorted_rows: Vec<(u32, u8)>,
}

/// Per-frame log-likelihood of every pattern in every stream.
#[derive(Debug, Clone)]
pub struct FrameScoreTable {
    pub scores: Vec<Vec<f64>>,
}

impl FrameScoreTable {
    /// Total entries, i.e. the per-frame density evaluation count.
    pub fn len(&self) -> usize {
        self.scores.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl TiedModelSet {
    pub fn sign_count(&self) -> usize {
        self.skeletons.len()
    }

    pub fn sign_index(&self, id: &str) -> Option<usize> {
        self.skeletons.binary_search_by(|s| s.id.as_str().cmp(id)).ok()
    }

    pub fn sign_id(&self, index: usize) -> &str {
        &self.skeletons[index].id
    }
}

/// Cluster all (sign, state) stream densities into `k[s]` patterns per
/// stream and map every original density to its nearest final pattern.
///
/// Distances are Euclidean on mixture means scaled by the inverse pooled
/// per-dimension variance; cluster densities are re-estimated from the
/// occupancy-weighted moments of their members.
pub fn cluster_stream_states(
    models: &[SignHmm],
    layout: &StreamLayout,
    k: &[usize; STREAM_COUNT],
) -> Result<TiedModelSet> {
    if models.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let mut order: Vec<usize> = (0..models.len()).collect();
    order.sort_by(|&a, &b| models[a].id.cmp(&models[b].id));

    let mixtures = models[0].states[0].streams[0].mixtures();
    for m in models {
        m.validate(layout)?;
        for st in &m.states {
            for d in &st.streams {
                if d.mixtures() != mixtures {
                    return Err(Error::MixtureSizeMismatch(d.mixtures(), mixtures));
                }
            }
        }
    }

    // Rows in (sign, state) order over the sorted vocabulary.
    let mut row_entries: Vec<(usize, usize)> = Vec::new(); // (order index, state)
    for (si, &mi) in order.iter().enumerate() {
        for j in 0..models[mi].n_states() {
            row_entries.push((si, j));
        }
    }

    let mut pattern_maps: Vec<Vec<usize>> = vec![Vec::new(); STREAM_COUNT];
    let mut patterns: Vec<Vec<StreamDensity>> = Vec::new();
    let mut reduced_streams = Vec::new();

    for s in 0..STREAM_COUNT {
        let dim = layout.stream(s).dim;
        let densities: Vec<&StreamDensity> = row_entries
            .iter()
            .map(|&(si, j)| &models[order[si]].states[j].streams[s])
            .collect();
        let weights: Vec<f64> = row_entries
            .iter()
            .map(|&(si, j)| models[order[si]].occupancy[j].max(1e-6))
            .collect();
        let points: Vec<Vec<f64>> = densities.iter().map(|d| d.pooled_mean()).collect();

        let scale = inverse_pooled_variance(&densities, &weights, dim);
        let result = kmeans::cluster(&points, &weights, &scale, k[s], 100);
        if result.reduced {
            reduced_streams.push(s);
        }

        let stream_patterns =
            reestimate_patterns(&densities, &weights, &result.assignments, result.k, mixtures, dim);

        // Map each original density to its nearest final pattern.
        let pattern_means: Vec<Vec<f64>> = stream_patterns.iter().map(|p| p.pooled_mean()).collect();
        let mapping: Vec<usize> = points
            .iter()
            .map(|p| {
                let mut best = 0usize;
                let mut best_d = f64::INFINITY;
                for (c, pm) in pattern_means.iter().enumerate() {
                    let mut d2 = 0.0;
                    for d in 0..dim {
                        let diff = p[d] - pm[d];
                        d2 += scale[d] * diff * diff;
                    }
                    if d2 < best_d {
                        best_d = d2;
                        best = c;
                    }
                }
                best
            })
            .collect();

        pattern_maps[s] = mapping;
        patterns.push(stream_patterns);
    }

    let mut skeletons = Vec::with_capacity(models.len());
    let mut row = 0usize;
    for &mi in &order {
        let model = &models[mi];
        let mut pattern = Vec::with_capacity(model.n_states());
        for _ in 0..model.n_states() {
            let mut entry = [0usize; STREAM_COUNT];
            for (s, map) in pattern_maps.iter().enumerate() {
                entry[s] = map[row];
            }
            pattern.push(entry);
            row += 1;
        }
        skeletons.push(SignSkeleton {
            id: model.id.clone(),
            self_loop: model.self_loop.clone(),
            occupancy: model.occupancy.clone(),
            pattern,
        });
    }

    let sorted_rows = sort_rows(&skeletons);
    Ok(TiedModelSet {
        layout: layout.clone(),
        skeletons,
        codebook: TiedCodebook { patterns },
        reduced_streams,
        sorted_rows,
    })
}

/// Occupancy-weighted pooled variance of all densities, inverted for use as
/// a distance scale.
fn inverse_pooled_variance(densities: &[&StreamDensity], weights: &[f64], dim: usize) -> Vec<f64> {
    let mut mass = 0.0;
    let mut ex = vec![0.0; dim];
    let mut ex2 = vec![0.0; dim];
    for (density, &w) in densities.iter().zip(weights) {
        mass += w;
        for (c, &wc) in density.weights.iter().enumerate() {
            for d in 0..dim {
                let mu = density.means[c][d];
                ex[d] += w * wc * mu;
                ex2[d] += w * wc * (density.variances[c][d] + mu * mu);
            }
        }
    }
    (0..dim)
        .map(|d| {
            let mean = ex[d] / mass;
            let var = (ex2[d] / mass - mean * mean).max(VARIANCE_FLOOR);
            1.0 / var
        })
        .collect()
}

/// Re-estimate one pattern density per cluster from member moments,
/// component by component.
fn reestimate_patterns(
    densities: &[&StreamDensity],
    weights: &[f64],
    assignments: &[usize],
    k: usize,
    mixtures: usize,
    dim: usize,
) -> Vec<StreamDensity> {
    let mut members: Vec<Vec<(&StreamDensity, f64)>> = vec![Vec::new(); k];
    for ((density, &w), &cluster) in densities.iter().zip(weights).zip(assignments) {
        members[cluster].push((density, w));
    }
    members.iter().map(|m| pool_densities(m, mixtures, dim)).collect()
}

/// Moment-match a set of weighted densities into one: component weights,
/// means and variances are pooled component-by-component and floored.
pub(crate) fn pool_densities(members: &[(&StreamDensity, f64)], mixtures: usize, dim: usize) -> StreamDensity {
    let mut comp_mass = vec![0.0; mixtures];
    let mut comp_sum = vec![vec![0.0; dim]; mixtures];
    let mut comp_sq = vec![vec![0.0; dim]; mixtures];
    for (density, w) in members {
        for c in 0..mixtures {
            let mass = w * density.weights[c];
            comp_mass[c] += mass;
            for d in 0..dim {
                let mu = density.means[c][d];
                comp_sum[c][d] += mass * mu;
                comp_sq[c][d] += mass * (density.variances[c][d] + mu * mu);
            }
        }
    }
    let total: f64 = comp_mass.iter().sum();
    let mut weights_out = Vec::with_capacity(mixtures);
    let mut means = Vec::with_capacity(mixtures);
    let mut variances = Vec::with_capacity(mixtures);
    for c in 0..mixtures {
        let mass = comp_mass[c];
        if mass <= 0.0 || total <= 0.0 {
            weights_out.push(0.0);
            means.push(vec![0.5; dim]);
            variances.push(vec![VARIANCE_FLOOR; dim]);
            continue;
        }
        let mut mean = vec![0.0; dim];
        let mut var = vec![0.0; dim];
        for d in 0..dim {
            mean[d] = comp_sum[c][d] / mass;
            var[d] = (comp_sq[c][d] / mass - mean[d] * mean[d]).max(VARIANCE_FLOOR);
        }
        weights_out.push(mass / total);
        means.push(mean);
        variances.push(var);
    }
    StreamDensity { weights: weights_out, means, variances }
}

fn sort_rows(skeletons: &[SignSkeleton]) -> Vec<(u32, u8)> {
    let mut rows: Vec<(u32, u8)> = skeletons
        .iter()
        .enumerate()
        .flat_map(|(si, sk)| (0..sk.n_states()).map(move |j| (si as u32, j as u8)))
        .collect();
    rows.sort_by(|&(sa, ja), &(sb, jb)| {
        let pa = &skeletons[sa as usize].pattern[ja as usize];
        let pb = &skeletons[sb as usize].pattern[jb as usize];
        pa.cmp(pb).then(sa.cmp(&sb)).then(ja.cmp(&jb))
    });
    rows
}

/// Evaluate every pattern density once for this frame.
///
/// The cost is the total pattern count, independent of vocabulary size.
pub fn frame_score_table(codebook: &TiedCodebook, frame: &Frame, layout: &StreamLayout) -> FrameScoreTable {
    let scores = (0..STREAM_COUNT)
        .map(|s| {
            let x = layout.slice(&frame.values, s);
            codebook.patterns[s].iter().map(|p| p.log_density(x)).collect()
        })
        .collect();
    FrameScoreTable { scores }
}

/// Tied state score: six table lookups and five additions.
pub fn tied_state_log_likelihood(
    tms: &TiedModelSet,
    table: &FrameScoreTable,
    sign: usize,
    state: usize,
) -> Result<f64> {
    let skeleton = tms.skeletons.get(sign).ok_or_else(|| Error::UnknownSign(format!("#{sign}")))?;
    let row = skeleton
        .pattern
        .get(state)
        .ok_or_else(|| Error::UnknownState { sign: skeleton.id.clone(), state })?;
    let t = &table.scores;
    Ok(t[0][row[0]] + t[1][row[1]] + t[2][row[2]] + t[3][row[3]] + t[4][row[4]] + t[5][row[5]])
}

/// Combined scores for every (sign, state) row of the vocabulary.
///
/// Rows are walked in pattern-sorted order so a row reuses the partial sum
/// of the prefix it shares with its predecessor; the combination work per
/// row is at most five additions and often less.
pub fn score_all_states(tms: &TiedModelSet, table: &FrameScoreTable) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> =
        tms.skeletons.iter().map(|sk| vec![f64::NEG_INFINITY; sk.n_states()]).collect();
    score_rows(tms, table, None, &mut out);
    out
}

/// Same as [`score_all_states`] restricted to signs with `mask` set; other
/// rows stay at negative infinity.
pub fn score_masked_states(tms: &TiedModelSet, table: &FrameScoreTable, mask: &[bool]) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> =
        tms.skeletons.iter().map(|sk| vec![f64::NEG_INFINITY; sk.n_states()]).collect();
    score_rows(tms, table, Some(mask), &mut out);
    out
}

fn score_rows(tms: &TiedModelSet, table: &FrameScoreTable, mask: Option<&[bool]>, out: &mut [Vec<f64>]) {
    let mut prev: Option<&[usize; STREAM_COUNT]> = None;
    let mut partial = [0.0f64; STREAM_COUNT + 1];
    for &(si, j) in &tms.sorted_rows {
        let si = si as usize;
        if let Some(mask) = mask {
            if !mask[si] {
                continue;
            }
        }
        let row = &tms.skeletons[si].pattern[j as usize];
        let shared = match prev {
            Some(p) => (0..STREAM_COUNT).take_while(|&s| p[s] == row[s]).count(),
            None => 0,
        };
        for s in shared..STREAM_COUNT {
            partial[s + 1] = partial[s] + table.scores[s][row[s]];
        }
        out[si][j as usize] = partial[STREAM_COUNT];
        prev = Some(row);
    }
}

/// Tied Viterbi over precomputed per-frame score tables.
pub fn tied_viterbi_score(
    tms: &TiedModelSet,
    tables: &[FrameScoreTable],
    sign: usize,
) -> Result<(f64, Vec<usize>)> {
    let skeleton = tms.skeletons.get(sign).ok_or_else(|| Error::UnknownSign(format!("#{sign}")))?;
    let emit: Vec<Vec<f64>> = tables
        .iter()
        .map(|table| {
            (0..skeleton.n_states())
                .map(|j| tied_state_log_likelihood(tms, table, sign, j).expect("validated row"))
                .collect()
        })
        .collect();
    tied_viterbi_from_emissions(skeleton, &emit)
}

/// Tied Viterbi over an emission matrix `emit[t][state]` already gathered
/// for this sign (for example from [`score_masked_states`]).
pub fn tied_viterbi_from_emissions(skeleton: &SignSkeleton, emit: &[Vec<f64>]) -> Result<(f64, Vec<usize>)> {
    let t_len = emit.len();
    let n = skeleton.n_states();
    if t_len < n {
        return Err(Error::InfeasibleSequence { frames: t_len, states: n });
    }
    let mut prev = vec![f64::NEG_INFINITY; n];
    let mut cur = vec![f64::NEG_INFINITY; n];
    let mut back = vec![vec![0u8; n]; t_len];
    prev[0] = emit[0][0];
    for t in 1..t_len {
        for j in 0..n {
            let stay = if j == n - 1 {
                prev[j] + skeleton.log_final_self()
            } else {
                prev[j] + skeleton.log_self(j)
            };
            let advance =
                if j > 0 { prev[j - 1] + skeleton.log_forward(j - 1) } else { f64::NEG_INFINITY };
            let (score, step) = if advance > stay { (advance, 1u8) } else { (stay, 0u8) };
            cur[j] = if score == f64::NEG_INFINITY { score } else { score + emit[t][j] };
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
