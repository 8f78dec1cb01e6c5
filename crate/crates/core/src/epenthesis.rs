//! Movement-epenthesis (sign transition) models: linear-interpolation
//! construction, sentence-level training with the sign parameters frozen,
//! and transition-model tying.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frames::{GestureSequence, Label, StreamLayout, STREAM_COUNT};
use crate::hmm::{log_sum_exp, state_log_likelihood, SignHmm, StateModel, StreamDensity, VARIANCE_FLOOR};
use crate::kmeans;
use crate::train::TrainOptions;
use crate::tying::pool_densities;

/// HMM for the transitional movement between an ordered sign pair (u, v).
///
/// The arc from u's last state into this model carries probability 1; the
/// model itself is left-to-right without skip with 1 or 3 states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel {
    pub from: String,
    pub to: String,
    pub states: Vec<StateModel>,
    pub self_loop: Vec<f64>,
    /// Expected epenthesis frame count absorbed per state during training;
    /// zero for purely interpolated models.
    pub occupancy: Vec<f64>,
}

impl TransitionModel {
    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    /// Log probability of entering this model from the preceding sign's
    /// last state: fixed to 1, hence 0 in the log domain.
    pub fn entry_log_prob(&self) -> f64 {
        0.0
    }

    pub fn log_self(&self, state: usize) -> f64 {
        self.self_loop[state].ln()
    }

    /// Advance weight; for the last state this is the exit into the next
    /// sign's first state.
    pub fn log_forward(&self, state: usize) -> f64 {
        (1.0 - self.self_loop[state]).ln()
    }

    pub fn total_occupancy(&self) -> f64 {
        self.occupancy.iter().sum()
    }
}

/// Build the 1-state interpolated model `0.5 * (last state of u + first
/// state of v)`: means, variances, and mixture weights are averaged
/// componentwise.
pub fn interpolate_transition(u: &SignHmm, v: &SignHmm) -> Result<TransitionModel> {
    let from_state = u.states.last().expect("sign has states");
    let to_state = v.states.first().expect("sign has states");
    let mut streams = Vec::with_capacity(STREAM_COUNT);
    for s in 0..STREAM_COUNT {
        let a = &from_state.streams[s];
        let b = &to_state.streams[s];
        if a.mixtures() != b.mixtures() {
            return Err(Error::MixtureSizeMismatch(a.mixtures(), b.mixtures()));
        }
        let m = a.mixtures();
        let dim = a.dim();
        let mut weights = Vec::with_capacity(m);
        let mut means = Vec::with_capacity(m);
        let mut variances = Vec::with_capacity(m);
        for c in 0..m {
            weights.push(0.5 * (a.weights[c] + b.weights[c]));
            means.push((0..dim).map(|d| 0.5 * (a.means[c][d] + b.means[c][d])).collect());
            variances.push((0..dim).map(|d| 0.5 * (a.variances[c][d] + b.variances[c][d])).collect());
        }
        streams.push(StreamDensity { weights, means, variances });
    }
    Ok(TransitionModel {
        from: u.id.clone(),
        to: v.id.clone(),
        states: vec![StateModel { streams }],
        self_loop: vec![0.5],
        occupancy: vec![0.0],
    })
}

fn replicate(model: &TransitionModel, n_states: usize) -> TransitionModel {
    TransitionModel {
        from: model.from.clone(),
        to: model.to.clone(),
        states: vec![model.states[0].clone(); n_states],
        self_loop: vec![0.5; n_states],
        occupancy: vec![0.0; n_states],
    }
}

/// Output of sentence-level transition training.
#[derive(Debug, Clone)]
pub struct TransitionTraining {
    /// One model per ordered pair seen in the sentences, sorted by pair.
    pub models: Vec<TransitionModel>,
    /// Total linked-model log-likelihood per EM iteration.
    pub log_likelihoods: Vec<f64>,
    /// Pairs whose epenthesis states absorbed no frames; they keep their
    /// interpolated initialization.
    pub no_data_pairs: Vec<(String, String)>,
    /// Sentences skipped because they were shorter than their sign chain.
    pub skipped_sentences: usize,
}

// In the training graph the epenthesis block between two signs may be
// bypassed, splitting the sign's exit mass evenly. Sentences where signs
// abut directly then leave the transition states unoccupied instead of
// stealing sign frames.
const LOG_HALF: f64 = -0.6931471805599453;

enum NodeRef {
    Sign { sign: usize, state: usize },
    Trans { pair: usize, state: usize },
}

enum ArcKind {
    Fixed,
    TransSelf { pair: usize, state: usize },
    TransAdvance { pair: usize, state: usize },
}

struct Arc {
    from: usize,
    to: usize,
    kind: ArcKind,
    /// Weight for `Fixed` arcs; transition arcs read the current model.
    weight: f64,
}

struct Chain {
    nodes: Vec<NodeRef>,
    arcs: Vec<Arc>,
    incoming: Vec<Vec<usize>>,
    outgoing: Vec<Vec<usize>>,
    end: usize,
}

fn build_chain(
    sign_seq: &[usize],
    signs: &[&SignHmm],
    pair_of: &BTreeMap<(usize, usize), usize>,
    n_trans_states: usize,
) -> Chain {
    let mut nodes = Vec::new();
    let mut arcs = Vec::new();
    let mut sign_first = vec![0usize; sign_seq.len()];
    let mut trans_first = vec![0usize; sign_seq.len().saturating_sub(1)];

    for (i, &sv) in sign_seq.iter().enumerate() {
        sign_first[i] = nodes.len();
        for j in 0..signs[sv].n_states() {
            nodes.push(NodeRef::Sign { sign: sv, state: j });
        }
        if i + 1 < sign_seq.len() {
            trans_first[i] = nodes.len();
            let pair = pair_of[&(sv, sign_seq[i + 1])];
            for j in 0..n_trans_states {
                nodes.push(NodeRef::Trans { pair, state: j });
            }
        }
    }

    for (i, &sv) in sign_seq.iter().enumerate() {
        let hmm = signs[sv];
        let n = hmm.n_states();
        let base = sign_first[i];
        for j in 0..n - 1 {
            arcs.push(Arc { from: base + j, to: base + j, kind: ArcKind::Fixed, weight: hmm.log_self(j) });
            arcs.push(Arc { from: base + j, to: base + j + 1, kind: ArcKind::Fixed, weight: hmm.log_forward(j) });
        }
        let last = base + n - 1;
        arcs.push(Arc { from: last, to: last, kind: ArcKind::Fixed, weight: hmm.log_final_self() });
        if i + 1 < sign_seq.len() {
            let pair = pair_of[&(sv, sign_seq[i + 1])];
            let t_base = trans_first[i];
            let next_first = sign_first[i + 1];
            let exit = hmm.log_exit();
            arcs.push(Arc { from: last, to: t_base, kind: ArcKind::Fixed, weight: exit + LOG_HALF });
            arcs.push(Arc { from: last, to: next_first, kind: ArcKind::Fixed, weight: exit + LOG_HALF });
            for j in 0..n_trans_states {
                arcs.push(Arc {
                    from: t_base + j,
                    to: t_base + j,
                    kind: ArcKind::TransSelf { pair, state: j },
                    weight: 0.0,
                });
                let to = if j + 1 < n_trans_states { t_base + j + 1 } else { next_first };
                arcs.push(Arc {
                    from: t_base + j,
                    to,
                    kind: ArcKind::TransAdvance { pair, state: j },
                    weight: 0.0,
                });
            }
        }
    }

    let mut incoming = vec![Vec::new(); nodes.len()];
    let mut outgoing = vec![Vec::new(); nodes.len()];
    for (a, arc) in arcs.iter().enumerate() {
        incoming[arc.to].push(a);
        outgoing[arc.from].push(a);
    }
    let end = nodes.len() - 1;
    Chain { nodes, arcs, incoming, outgoing, end }
}

struct PairAccumulator {
    occupancy: Vec<f64>,
    self_count: Vec<f64>,
    advance_count: Vec<f64>,
    comp_mass: Vec<Vec<Vec<f64>>>,
    comp_sum: Vec<Vec<Vec<Vec<f64>>>>,
    comp_sq: Vec<Vec<Vec<Vec<f64>>>>,
}

impl PairAccumulator {
    fn new(n_states: usize, mixtures: usize, layout: &StreamLayout) -> Self {
        PairAccumulator {
            occupancy: vec![0.0; n_states],
            self_count: vec![0.0; n_states],
            advance_count: vec![0.0; n_states],
            comp_mass: vec![vec![vec![0.0; mixtures]; STREAM_COUNT]; n_states],
            comp_sum: (0..n_states)
                .map(|_| (0..STREAM_COUNT).map(|s| vec![vec![0.0; layout.stream(s).dim]; mixtures]).collect())
                .collect(),
            comp_sq: (0..n_states)
                .map(|_| (0..STREAM_COUNT).map(|s| vec![vec![0.0; layout.stream(s).dim]; mixtures]).collect())
                .collect(),
        }
    }
}

/// Estimate transition models from labeled sentences with every sign
/// parameter frozen.
///
/// Each sentence becomes a linked HMM (sign, transition, sign, ...) whose
/// epenthesis blocks may be bypassed; EM re-estimates only the transition
/// models, initialized from [`interpolate_transition`] (replicated for the
/// 3-state variant). The linked log-likelihood never decreases.
pub fn train_transitions(
    sentences: &[GestureSequence],
    signs: &[SignHmm],
    layout: &StreamLayout,
    n_states: usize,
    opts: &TrainOptions,
) -> Result<TransitionTraining> {
    if !(n_states == 1 || n_states == 3) {
        return Err(Error::InvalidConfig(format!("transition models have 1 or 3 states, not {n_states}")));
    }
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, sign) in signs.iter().enumerate() {
        index.insert(&sign.id, i);
    }

    // Resolve labels and collect the ordered pairs present in the data.
    let mut resolved: Vec<Vec<usize>> = Vec::new();
    for sentence in sentences {
        let ids = match &sentence.label {
            Some(Label::Sentence(ids)) => ids.clone(),
            Some(Label::Sign(id)) => vec![id.clone()],
            None => return Err(Error::InvalidConfig("sentence without a label".into())),
        };
        let seq: Vec<usize> = ids
            .iter()
            .map(|id| index.get(id.as_str()).copied().ok_or_else(|| Error::UnknownSign(id.clone())))
            .collect::<Result<_>>()?;
        resolved.push(seq);
    }

    let mut pair_of: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for seq in &resolved {
        for w in seq.windows(2) {
            pair_of.entry((w[0], w[1])).or_insert(0);
        }
    }
    // Index pairs in key order so `models[index]` lines up with the
    // sorted construction below.
    for (i, idx) in pair_of.values_mut().enumerate() {
        *idx = i;
    }

    let mixtures = signs
        .first()
        .map(|s| s.states[0].streams[0].mixtures())
        .ok_or(Error::EmptyTrainingSet)?;

    let mut models: Vec<TransitionModel> = Vec::with_capacity(pair_of.len());
    for (&(u, v), _) in &pair_of {
        let base = interpolate_transition(&signs[u], &signs[v])?;
        models.push(if n_states == 1 { base } else { replicate(&base, n_states) });
    }

    let sign_refs: Vec<&SignHmm> = signs.iter().collect();
    let chains: Vec<(Chain, &GestureSequence)> = resolved
        .iter()
        .zip(sentences)
        .filter(|(seq, sentence)| {
            let min_frames: usize = seq.iter().map(|&s| signs[s].n_states()).sum();
            !seq.is_empty() && sentence.len() >= min_frames
        })
        .map(|(seq, sentence)| (build_chain(seq, &sign_refs, &pair_of, n_states), sentence))
        .collect();
    let skipped_sentences = sentences.len() - chains.len();

    let mut log_likelihoods = Vec::new();
    if !chains.is_empty() && !models.is_empty() {
        for _ in 0..opts.max_iterations {
            let mut accs: Vec<PairAccumulator> =
                models.iter().map(|_| PairAccumulator::new(n_states, mixtures, layout)).collect();
            let mut total_ll = 0.0;
            for (chain, sentence) in &chains {
                if let Some(ll) = accumulate_chain(chain, sentence, &sign_refs, &models, layout, &mut accs) {
                    total_ll += ll;
                }
            }
            log_likelihoods.push(total_ll);

            for (model, acc) in models.iter_mut().zip(&accs) {
                reestimate_pair(model, acc, layout, opts);
            }

            let k = log_likelihoods.len();
            if k >= 2 {
                let prev = log_likelihoods[k - 2];
                let rel = (log_likelihoods[k - 1] - prev).abs() / prev.abs().max(1.0);
                if rel < opts.rel_tolerance {
                    break;
                }
            }
        }
    }

    let no_data_pairs = models
        .iter()
        .filter(|m| m.total_occupancy() < 1e-6)
        .map(|m| (m.from.clone(), m.to.clone()))
        .collect();

    Ok(TransitionTraining { models, log_likelihoods, no_data_pairs, skipped_sentences })
}

/// Forward-backward over one linked chain, accumulating statistics for
/// transition states only; returns the sentence log-likelihood.
fn accumulate_chain(
    chain: &Chain,
    sentence: &GestureSequence,
    signs: &[&SignHmm],
    models: &[TransitionModel],
    layout: &StreamLayout,
    accs: &mut [PairAccumulator],
) -> Option<f64> {
    let t_len = sentence.len();
    let n_nodes = chain.nodes.len();

    let arc_weight = |arc: &Arc| match arc.kind {
        ArcKind::Fixed => arc.weight,
        ArcKind::TransSelf { pair, state } => models[pair].log_self(state),
        ArcKind::TransAdvance { pair, state } => models[pair].log_forward(state),
    };

    let emit: Vec<Vec<f64>> = (0..t_len)
        .map(|t| {
            let frame = &sentence.frames[t].values;
            chain
                .nodes
                .iter()
                .map(|node| match node {
                    NodeRef::Sign { sign, state } => {
                        state_log_likelihood(&signs[*sign].states[*state], frame, layout)
                    }
                    NodeRef::Trans { pair, state } => {
                        state_log_likelihood(&models[*pair].states[*state], frame, layout)
                    }
                })
                .collect()
        })
        .collect();

    let mut alpha = vec![vec![f64::NEG_INFINITY; n_nodes]; t_len];
    alpha[0][0] = emit[0][0];
    let mut buf = Vec::new();
    for t in 1..t_len {
        for to in 0..n_nodes {
            buf.clear();
            for &a in &chain.incoming[to] {
                let arc = &chain.arcs[a];
                let v = alpha[t - 1][arc.from];
                if v != f64::NEG_INFINITY {
                    buf.push(v + arc_weight(arc));
                }
            }
            if !buf.is_empty() {
                alpha[t][to] = log_sum_exp(&buf) + emit[t][to];
            }
        }
    }
    let ll = alpha[t_len - 1][chain.end];
    if ll == f64::NEG_INFINITY {
        return None;
    }

    let mut beta = vec![vec![f64::NEG_INFINITY; n_nodes]; t_len];
    beta[t_len - 1][chain.end] = 0.0;
    for t in (0..t_len - 1).rev() {
        for from in 0..n_nodes {
            buf.clear();
            for &a in &chain.outgoing[from] {
                let arc = &chain.arcs[a];
                let v = beta[t + 1][arc.to];
                if v != f64::NEG_INFINITY {
                    buf.push(arc_weight(arc) + emit[t + 1][arc.to] + v);
                }
            }
            if !buf.is_empty() {
                beta[t][from] = log_sum_exp(&buf);
            }
        }
    }

    // Occupancy and emission statistics for transition nodes.
    for t in 0..t_len {
        let frame = &sentence.frames[t].values;
        for (node_idx, node) in chain.nodes.iter().enumerate() {
            let NodeRef::Trans { pair, state } = node else { continue };
            let lg = alpha[t][node_idx] + beta[t][node_idx] - ll;
            if lg < -700.0 {
                continue;
            }
            let gamma = lg.exp();
            let acc = &mut accs[*pair];
            acc.occupancy[*state] += gamma;
            let density_model = &models[*pair].states[*state];
            for s in 0..STREAM_COUNT {
                let x = layout.slice(frame, s);
                let density = &density_model.streams[s];
                let m = density.mixtures();
                if m == 1 {
                    add_moment(acc, *state, s, 0, gamma, x);
                } else {
                    let comp_lls: Vec<f64> =
                        (0..m).map(|c| density.component_log_density(c, x)).collect();
                    let denom = log_sum_exp(&comp_lls);
                    if denom == f64::NEG_INFINITY {
                        continue;
                    }
                    for c in 0..m {
                        add_moment(acc, *state, s, c, (comp_lls[c] - denom).exp() * gamma, x);
                    }
                }
            }
        }
    }

    // Self/advance statistics for the re-estimated arcs.
    for t in 0..t_len - 1 {
        for arc in &chain.arcs {
            let (pair, state, is_self) = match arc.kind {
                ArcKind::TransSelf { pair, state } => (pair, state, true),
                ArcKind::TransAdvance { pair, state } => (pair, state, false),
                ArcKind::Fixed => continue,
            };
            let num = alpha[t][arc.from] + arc_weight(arc) + emit[t + 1][arc.to] + beta[t + 1][arc.to] - ll;
            if num < -700.0 {
                continue;
            }
            let xi = num.exp();
            if is_self {
                accs[pair].self_count[state] += xi;
            } else {
                accs[pair].advance_count[state] += xi;
            }
        }
    }

    Some(ll)
}

fn add_moment(acc: &mut PairAccumulator, state: usize, stream: usize, comp: usize, r: f64, x: &[f64]) {
    acc.comp_mass[state][stream][comp] += r;
    for d in 0..x.len() {
        acc.comp_sum[state][stream][comp][d] += r * x[d];
        acc.comp_sq[state][stream][comp][d] += r * x[d] * x[d];
    }
}

fn reestimate_pair(model: &mut TransitionModel, acc: &PairAccumulator, layout: &StreamLayout, opts: &TrainOptions) {
    const MIN_OCC: f64 = 1e-6;
    let total: f64 = acc.occupancy.iter().sum();
    model.occupancy = acc.occupancy.clone();
    if total < MIN_OCC {
        // No epenthesis frames were absorbed; keep the interpolated
        // initialization.
        return;
    }
    for (j, state) in model.states.iter_mut().enumerate() {
        for s in 0..STREAM_COUNT {
            let density = &mut state.streams[s];
            let m = density.mixtures();
            let dim = layout.stream(s).dim;
            let mass_total: f64 = acc.comp_mass[j][s].iter().sum();
            if mass_total < MIN_OCC {
                continue;
            }
            let mut weights = Vec::with_capacity(m);
            let mut means = Vec::with_capacity(m);
            let mut variances = Vec::with_capacity(m);
            for c in 0..m {
                let mass = acc.comp_mass[j][s][c];
                if mass < MIN_OCC {
                    weights.push(mass);
                    means.push(density.means[c].clone());
                    variances.push(density.variances[c].clone());
                    continue;
                }
                let mut mean = vec![0.0; dim];
                let mut var = vec![0.0; dim];
                for d in 0..dim {
                    mean[d] = acc.comp_sum[j][s][c][d] / mass;
                    var[d] = (acc.comp_sq[j][s][c][d] / mass - mean[d] * mean[d]).max(opts.variance_floor);
                }
                weights.push(mass);
                means.push(mean);
                variances.push(var);
            }
            let wsum: f64 = weights.iter().sum();
            for w in &mut weights {
                *w /= wsum;
            }
            *density = StreamDensity { weights, means, variances };
        }
        let denom = acc.self_count[j] + acc.advance_count[j];
        if denom >= MIN_OCC {
            model.self_loop[j] = (acc.self_count[j] / denom).clamp(1e-6, 1.0 - 1e-6);
        }
    }
}

/// A tied set of transition models plus the pair-to-model map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiedTransitions {
    pub models: Vec<TransitionModel>,
    /// `(from, to, model index)` triples, sorted by pair.
    pub mapping: Vec<(String, String, usize)>,
    pub reduced: bool,
}

/// Cluster transition models into at most `k` shared models, mirroring the
/// stream-tying distance and re-estimation.
pub fn tie_transitions(models: &[TransitionModel], layout: &StreamLayout, k: usize) -> Result<TiedTransitions> {
    if models.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let n_states = models[0].n_states();
    let mixtures = models[0].states[0].streams[0].mixtures();
    for m in models {
        if m.n_states() != n_states {
            return Err(Error::InvalidConfig("transition models have mixed state counts".into()));
        }
    }

    // Feature: concatenated per-state per-stream pooled means.
    let feature = |m: &TransitionModel| -> Vec<f64> {
        let mut out = Vec::new();
        for state in &m.states {
            for s in 0..STREAM_COUNT {
                out.extend(state.streams[s].pooled_mean());
            }
        }
        out
    };
    let points: Vec<Vec<f64>> = models.iter().map(feature).collect();
    let weights: Vec<f64> = models.iter().map(|m| m.total_occupancy().max(1e-6)).collect();

    // Per-dimension inverse pooled variance over the concatenated layout.
    let dim = points[0].len();
    let mut scale = vec![0.0; dim];
    {
        let mut mass = 0.0;
        let mut ex = vec![0.0; dim];
        let mut ex2 = vec![0.0; dim];
        for (m, &w) in models.iter().zip(&weights) {
            mass += w;
            let mut offset = 0;
            for state in &m.states {
                for s in 0..STREAM_COUNT {
                    let density = &state.streams[s];
                    let sd = density.dim();
                    for (c, &wc) in density.weights.iter().enumerate() {
                        for d in 0..sd {
                            let mu = density.means[c][d];
                            ex[offset + d] += w * wc * mu;
                            ex2[offset + d] += w * wc * (density.variances[c][d] + mu * mu);
                        }
                    }
                    offset += sd;
                }
            }
        }
        for d in 0..dim {
            let mean = ex[d] / mass;
            scale[d] = 1.0 / (ex2[d] / mass - mean * mean).max(VARIANCE_FLOOR);
        }
    }

    let result = kmeans::cluster(&points, &weights, &scale, k, 100);

    // Re-estimate each cluster state-by-state, stream-by-stream.
    let mut tied = Vec::with_capacity(result.k);
    for cluster in 0..result.k {
        let members: Vec<usize> =
            (0..models.len()).filter(|&i| result.assignments[i] == cluster).collect();
        debug_assert!(!members.is_empty());
        let rep = members[0];
        let mut states = Vec::with_capacity(n_states);
        let mut self_loop = Vec::with_capacity(n_states);
        let mut occupancy = Vec::with_capacity(n_states);
        for j in 0..n_states {
            let streams = (0..STREAM_COUNT)
                .map(|s| {
                    let entries: Vec<(&StreamDensity, f64)> = members
                        .iter()
                        .map(|&i| (&models[i].states[j].streams[s], weights[i]))
                        .collect();
                    pool_densities(&entries, mixtures, layout.stream(s).dim)
                })
                .collect();
            states.push(StateModel { streams });
            let wsum: f64 = members.iter().map(|&i| weights[i]).sum();
            self_loop
                .push(members.iter().map(|&i| weights[i] * models[i].self_loop[j]).sum::<f64>() / wsum);
            occupancy.push(members.iter().map(|&i| models[i].occupancy[j]).sum());
        }
        tied.push(TransitionModel {
            from: models[rep].from.clone(),
            to: models[rep].to.clone(),
            states,
            self_loop,
            occupancy,
        });
    }

    // Map each pair to its nearest final tied model.
    let tied_features: Vec<Vec<f64>> = tied.iter().map(feature).collect();
    let mut mapping: Vec<(String, String, usize)> = models
        .iter()
        .zip(&points)
        .map(|(m, p)| {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (c, tf) in tied_features.iter().enumerate() {
                let mut d2 = 0.0;
                for d in 0..dim {
                    let diff = p[d] - tf[d];
                    d2 += scale[d] * diff * diff;
                }
                if d2 < best_d {
                    best_d = d2;
                    best = c;
                }
            }
            (m.from.clone(), m.to.clone(), best)
        })
        .collect();
    mapping.sort_by(|a, b| (&a.0, &a.1).cmp(&(&b.0, &b.1)));

    Ok(TiedTransitions { models: tied, mapping, reduced: result.reduced })
}

/// The transition-model stage stored in a bundle: per-pair models and the
/// optional tied set used when present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSet {
    pub n_states: usize,
    pub models: Vec<TransitionModel>,
    pub tied: Option<TiedTransitions>,
}

impl TransitionSet {
    pub fn new(mut models: Vec<TransitionModel>, n_states: usize) -> Self {
        models.sort_by(|a, b| (&a.from, &a.to).cmp(&(&b.from, &b.to)));
        TransitionSet { n_states, models, tied: None }
    }

    /// Resolve the model for an ordered pair, through the tie map when one
    /// exists.
    pub fn lookup(&self, from: &str, to: &str) -> Option<&TransitionModel> {
        if let Some(tied) = &self.tied {
            return tied
                .mapping
                .binary_search_by(|(f, t, _)| (f.as_str(), t.as_str()).cmp(&(from, to)))
                .ok()
                .map(|i| &tied.models[tied.mapping[i].2]);
        }
        self.models
            .binary_search_by(|m| (m.from.as_str(), m.to.as_str()).cmp(&(from, to)))
            .ok()
            .map(|i| &self.models[i])
    }
}
