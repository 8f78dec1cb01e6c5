//! Continuous sentence decoding over a recursive transition network:
//! time-synchronous tied-score Viterbi with state- and sign-level beams,
//! bigram-weighted cross-sign arcs, per-frame active-unit fast match, and
//! transition look-ahead gating.

use serde::{Deserialize, Serialize};

use crate::epenthesis::{interpolate_transition, TransitionModel, TransitionSet};
use crate::error::{Error, Result};
use crate::frames::{Frame, GestureSequence, StreamLayout, STREAM_COUNT};
use crate::hmm::{state_log_likelihood, SignHmm};
use crate::tying::{frame_score_table, score_all_states, FrameScoreTable, TiedModelSet};

/// Bigram language model with add-one smoothing and a sentence-start
/// context. Rows are conditional distributions over the vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BigramLm {
    /// Sorted sign ids.
    pub vocab: Vec<String>,
    /// Log conditional probabilities; rows 0..V condition on the matching
    /// sign, row V on sentence start.
    pub log_rows: Vec<Vec<f64>>,
    /// Log-probability scale applied on cross-sign arcs.
    pub scale: f64,
    /// Additive penalty per cross-sign arc.
    pub insertion_penalty: f64,
}

impl BigramLm {
    /// Add-one smoothed estimate from a corpus of sign sequences.
    pub fn estimate(corpus: &[Vec<String>], vocab: &[String]) -> Result<Self> {
        if vocab.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let mut vocab: Vec<String> = vocab.to_vec();
        vocab.sort();
        vocab.dedup();
        let v = vocab.len();
        let index = |id: &str| -> Result<usize> {
            vocab
                .binary_search_by(|probe| probe.as_str().cmp(id))
                .map_err(|_| Error::UnknownSign(id.to_string()))
        };

        let mut counts = vec![vec![0u64; v]; v + 1];
        for sentence in corpus {
            let mut prev: Option<usize> = None;
            for id in sentence {
                let cur = index(id)?;
                let row = prev.unwrap_or(v);
                counts[row][cur] += 1;
                prev = Some(cur);
            }
        }

        let log_rows = counts
            .iter()
            .map(|row| {
                let total: u64 = row.iter().sum();
                let denom = (total + v as u64) as f64;
                row.iter().map(|&c| (((c + 1) as f64) / denom).ln()).collect()
            })
            .collect();
        Ok(BigramLm { vocab, log_rows, scale: 1.0, insertion_penalty: 0.0 })
    }

    /// Uniform model over the vocabulary.
    pub fn uniform(vocab: &[String]) -> Result<Self> {
        Self::estimate(&[], vocab)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn index(&self, id: &str) -> Option<usize> {
        self.vocab.binary_search_by(|probe| probe.as_str().cmp(id)).ok()
    }

    /// log P(next | prev), with `None` as the sentence-start context.
    pub fn log_p(&self, next: usize, prev: Option<usize>) -> f64 {
        self.log_rows[prev.unwrap_or(self.vocab.len())][next]
    }

    /// Conditional probabilities of the row for `prev`.
    pub fn probabilities(&self, prev: Option<usize>) -> Vec<f64> {
        self.log_rows[prev.unwrap_or(self.vocab.len())].iter().map(|&l| l.exp()).collect()
    }
}

/// Beam and fast-match controls; `None` disables a mechanism.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BeamConfig {
    /// State-level beam: prune nodes below the frame best by more than this.
    pub state_beam: Option<f64>,
    /// Sign-level beam: block cross-sign expansion from last states below
    /// the best last-state score by more than this.
    pub sign_beam: Option<f64>,
    /// Active-unit threshold for the fast match; also gates transition
    /// look-ahead.
    pub unit_threshold: Option<f64>,
    /// Look-ahead window length in frames.
    pub lookahead_depth: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig { state_beam: None, sign_beam: None, unit_threshold: None, lookahead_depth: 3 }
    }
}

impl BeamConfig {
    fn validate(&self) -> Result<()> {
        for (name, beam) in
            [("state", self.state_beam), ("sign", self.sign_beam), ("unit", self.unit_threshold)]
        {
            if let Some(b) = beam {
                if b < 0.0 || b.is_nan() {
                    return Err(Error::InvalidConfig(format!("{name} beam must be non-negative")));
                }
            }
        }
        Ok(())
    }

    fn unit_gate(&self) -> Option<f64> {
        match self.unit_threshold {
            Some(t) if t.is_finite() => Some(t),
            _ => None,
        }
    }
}

/// Per-sign active score: for each stream take the best state's table
/// entry, then sum the streams. An upper bound on any single state's score
/// obtained purely by table lookups.
pub fn active_unit_scores(table: &FrameScoreTable, tms: &TiedModelSet) -> Vec<f64> {
    tms.skeletons
        .iter()
        .map(|sk| {
            (0..STREAM_COUNT)
                .map(|s| {
                    sk.pattern
                        .iter()
                        .map(|row| table.scores[s][row[s]])
                        .fold(f64::NEG_INFINITY, f64::max)
                })
                .sum()
        })
        .collect()
}

/// Units whose combined score reaches `best - threshold`.
pub fn active_units(scores: &[f64], threshold: f64) -> Vec<bool> {
    let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    scores.iter().map(|&s| s >= best - threshold).collect()
}

/// Rich-get-richer look-ahead score for a sign transition: the average of
/// the source's last-state and target's first-state scores plus the mean
/// first-state score over the next frames.
pub fn lookahead_score(p_u: f64, p_v: f64, future_first_scores: &[f64]) -> f64 {
    let base = 0.5 * (p_u + p_v);
    if future_first_scores.is_empty() {
        return base;
    }
    base + future_first_scores.iter().sum::<f64>() / future_first_scores.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum NodeKind {
    Sign { sign: u32, state: u8 },
    Trans { pair: u32, state: u8 },
}

/// The static decode network: sign states, transition-model states for
/// every ordered pair (when epenthesis models are in play), and the arc
/// weights implied by the skeletons, transition models, and bigram LM.
pub struct DecodeNetwork<'a> {
    pub tms: &'a TiedModelSet,
    pub lm: &'a BigramLm,
    /// Distinct transition models referenced by the pair table.
    trans_models: Vec<TransitionModel>,
    /// `pair_model[u * V + v]`: transition model index, or none for a
    /// direct arc.
    pair_model: Vec<Option<u32>>,
    nodes: Vec<NodeKind>,
    sign_base: Vec<usize>,
    pair_base: Vec<usize>,
    /// Dense pair index for pairs that have nodes; `u32::MAX` otherwise.
    pair_index: Vec<u32>,
}

impl<'a> DecodeNetwork<'a> {
    /// Assemble the network. With `transitions` set, every ordered pair
    /// routes through its transition model, interpolating missing pairs
    /// from the sign models on demand; without it, cross-sign arcs are
    /// direct.
    pub fn build(
        tms: &'a TiedModelSet,
        lm: &'a BigramLm,
        signs: &[SignHmm],
        transitions: Option<&TransitionSet>,
    ) -> Result<Self> {
        let v = tms.sign_count();
        if lm.vocab_size() != v {
            return Err(Error::InvalidConfig(format!(
                "bigram vocabulary has {} signs, model set has {v}",
                lm.vocab_size()
            )));
        }
        for (i, sk) in tms.skeletons.iter().enumerate() {
            if lm.vocab[i] != sk.id {
                return Err(Error::UnknownSign(sk.id.clone()));
            }
        }

        let mut trans_models: Vec<TransitionModel> = Vec::new();
        let mut pair_model: Vec<Option<u32>> = vec![None; v * v];
        if let Some(set) = transitions {
            // Distinct tied/trained models are shared; missing pairs fall
            // back to interpolation, built once here.
            let mut by_key: std::collections::HashMap<*const TransitionModel, u32> =
                std::collections::HashMap::new();
            let sign_by_id = |id: &str| signs.iter().find(|s| s.id == id);
            for u in 0..v {
                for w in 0..v {
                    let from = tms.sign_id(u);
                    let to = tms.sign_id(w);
                    let idx = if let Some(model) = set.lookup(from, to) {
                        *by_key.entry(model as *const _).or_insert_with(|| {
                            trans_models.push(model.clone());
                            (trans_models.len() - 1) as u32
                        })
                    } else {
                        let su = sign_by_id(from).ok_or_else(|| Error::UnknownSign(from.into()))?;
                        let sv = sign_by_id(to).ok_or_else(|| Error::UnknownSign(to.into()))?;
                        let mut model = interpolate_transition(su, sv)?;
                        if set.n_states > 1 {
                            model = TransitionModel {
                                states: vec![model.states[0].clone(); set.n_states],
                                self_loop: vec![0.5; set.n_states],
                                occupancy: vec![0.0; set.n_states],
                                ..model
                            };
                        }
                        trans_models.push(model);
                        (trans_models.len() - 1) as u32
                    };
                    pair_model[u * v + w] = Some(idx);
                }
            }
        }

        let mut nodes = Vec::new();
        let mut sign_base = Vec::with_capacity(v);
        for (i, sk) in tms.skeletons.iter().enumerate() {
            sign_base.push(nodes.len());
            for j in 0..sk.n_states() {
                nodes.push(NodeKind::Sign { sign: i as u32, state: j as u8 });
            }
        }
        let mut pair_base = Vec::new();
        let mut pair_index = vec![u32::MAX; v * v];
        for u in 0..v {
            for w in 0..v {
                if let Some(mi) = pair_model[u * v + w] {
                    pair_index[u * v + w] = pair_base.len() as u32;
                    pair_base.push(nodes.len());
                    let n = trans_models[mi as usize].n_states();
                    for j in 0..n {
                        nodes.push(NodeKind::Trans { pair: (u * v + w) as u32, state: j as u8 });
                    }
                }
            }
        }

        Ok(DecodeNetwork { tms, lm, trans_models, pair_model, nodes, sign_base, pair_base, pair_index })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn sign_node(&self, sign: usize, state: usize) -> usize {
        self.sign_base[sign] + state
    }

    fn last_node(&self, sign: usize) -> usize {
        self.sign_base[sign] + self.tms.skeletons[sign].n_states() - 1
    }
}

/// One decoded segment: `sign` spans frames `start..=end`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub sign: String,
    pub start: usize,
    pub end: usize,
}

/// Pruning and work counters for one utterance.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DecodeStats {
    pub frames: usize,
    pub network_nodes: usize,
    /// Mean count of live nodes per frame after pruning.
    pub mean_active_nodes: f64,
    pub state_beam_pruned: u64,
    pub sign_beam_blocked: u64,
    pub units_pruned: u64,
    pub lookahead_blocked: u64,
    /// Greatest number of frames read beyond the one being processed.
    pub max_lookahead: usize,
}

/// Decoder output: the sign sequence, its segmentation, and the best path
/// log score.
#[derive(Debug, Clone)]
pub struct DecodeOutput {
    pub signs: Vec<String>,
    pub segmentation: Vec<Segment>,
    pub score: f64,
    pub stats: DecodeStats,
}

/// Lazily filled per-frame scores; tracks the furthest frame touched so
/// the look-ahead window stays honest.
struct ScoreCache<'n, 'a> {
    net: &'n DecodeNetwork<'a>,
    frames: &'n [Frame],
    layout: &'n StreamLayout,
    sign_scores: Vec<Option<Vec<Vec<f64>>>>,
    trans_scores: Vec<Option<Vec<Vec<f64>>>>,
    unit_scores: Vec<Option<Vec<f64>>>,
    want_units: bool,
    max_filled: usize,
}

impl<'n, 'a> ScoreCache<'n, 'a> {
    fn new(net: &'n DecodeNetwork<'a>, frames: &'n [Frame], want_units: bool) -> Self {
        ScoreCache {
            net,
            frames,
            layout: &net.tms.layout,
            sign_scores: vec![None; frames.len()],
            trans_scores: vec![None; frames.len()],
            unit_scores: vec![None; frames.len()],
            want_units,
            max_filled: 0,
        }
    }

    fn ensure(&mut self, t: usize) {
        if self.sign_scores[t].is_some() {
            return;
        }
        self.max_filled = self.max_filled.max(t);
        let table = frame_score_table(&self.net.tms.codebook, &self.frames[t], self.layout);
        if self.want_units {
            self.unit_scores[t] = Some(active_unit_scores(&table, self.net.tms));
        }
        self.sign_scores[t] = Some(score_all_states(self.net.tms, &table));
        let trans = self
            .net
            .trans_models
            .iter()
            .map(|m| {
                (0..m.n_states())
                    .map(|j| state_log_likelihood(&m.states[j], &self.frames[t].values, self.layout))
                    .collect()
            })
            .collect();
        self.trans_scores[t] = Some(trans);
    }

    fn sign(&self, t: usize) -> &Vec<Vec<f64>> {
        self.sign_scores[t].as_ref().expect("frame filled")
    }

    fn trans(&self, t: usize) -> &Vec<Vec<f64>> {
        self.trans_scores[t].as_ref().expect("frame filled")
    }

    fn units(&self, t: usize) -> &Vec<f64> {
        self.unit_scores[t].as_ref().expect("frame filled")
    }
}

/// Time-synchronous Viterbi over the network. With every beam and gate
/// disabled the result is the exact joint maximum over sign sequences and
/// segmentations.
pub fn decode(net: &DecodeNetwork, seq: &GestureSequence, beams: &BeamConfig) -> Result<DecodeOutput> {
    beams.validate()?;
    let t_len = seq.len();
    let v = net.tms.sign_count();
    let n_nodes = net.nodes.len();
    let unit_gate = beams.unit_gate();

    let mut cache = ScoreCache::new(net, &seq.frames, unit_gate.is_some());
    let mut stats = DecodeStats {
        frames: t_len,
        network_nodes: n_nodes,
        ..Default::default()
    };

    let mut prev = vec![f64::NEG_INFINITY; n_nodes];
    let mut cur = vec![f64::NEG_INFINITY; n_nodes];
    // Back-pointers plus a cross-entry flag to distinguish re-entering a
    // one-state sign from looping in it.
    let mut bp: Vec<Vec<u32>> = vec![vec![u32::MAX; n_nodes]; t_len];
    let mut cross: Vec<Vec<bool>> = vec![vec![false; n_nodes]; t_len];

    cache.ensure(0);
    for sign in 0..v {
        let node = net.sign_node(sign, 0);
        prev[node] = net.lm.scale * net.lm.log_p(sign, None) + cache.sign(0)[sign][0];
    }
    let mut live = prune_frame(net, &mut prev, &cache, 0, beams, unit_gate, &mut stats);
    if live == 0 {
        return Err(Error::AllHypothesesPruned { frame: 0 });
    }
    stats.mean_active_nodes += live as f64;

    for t in 1..t_len {
        cache.ensure(t);
        cur.fill(f64::NEG_INFINITY);
        let bp_row = &mut bp[t];
        let cross_row = &mut cross[t];
        bp_row.fill(u32::MAX);
        cross_row.fill(false);

        // Sign-level beam: which last states may expand.
        let mut best_last = f64::NEG_INFINITY;
        for u in 0..v {
            best_last = best_last.max(prev[net.last_node(u)]);
        }
        let sign_floor = beams.sign_beam.map(|b| best_last - b);

        // Look-ahead gating over candidate transitions from frame t-1.
        let la_gate: Option<(Vec<f64>, Vec<f64>, f64)> = if unit_gate.is_some() && t_len > 1 {
            let depth = beams.lookahead_depth.min(t_len - t);
            for w in 0..depth {
                cache.ensure(t + w);
            }
            let future: Vec<f64> = (0..v)
                .map(|w| {
                    let scores: Vec<f64> = (0..depth).map(|d| cache.sign(t + d)[w][0]).collect();
                    if scores.is_empty() { 0.0 } else { scores.iter().sum::<f64>() / scores.len() as f64 }
                })
                .collect();
            let p_u: Vec<f64> = (0..v)
                .map(|u| cache.sign(t - 1)[u][net.tms.skeletons[u].n_states() - 1])
                .collect();
            let p_v: Vec<f64> = (0..v).map(|w| cache.sign(t - 1)[w][0]).collect();
            // score(u, w) = p_u/2 + (p_v/2 + future); separable maximum.
            let g: Vec<f64> = (0..v).map(|w| 0.5 * p_v[w] + future[w]).collect();
            let best = {
                let fu = p_u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let gv = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                0.5 * fu + gv
            };
            Some((p_u, g, best))
        } else {
            None
        };

        // Cross-sign expansions from u's last state at t-1.
        for u in 0..v {
            let from_node = net.last_node(u);
            let source = prev[from_node];
            if source == f64::NEG_INFINITY {
                continue;
            }
            if let Some(floor) = sign_floor {
                if source < floor {
                    stats.sign_beam_blocked += 1;
                    continue;
                }
            }
            let base = source + net.tms.skeletons[u].log_exit();
            for w in 0..v {
                if let Some((p_u, g, best)) = &la_gate {
                    let la = 0.5 * p_u[u] + g[w];
                    if la < best - unit_gate.expect("gate set") {
                        stats.lookahead_blocked += 1;
                        continue;
                    }
                }
                let weight =
                    net.lm.scale * net.lm.log_p(w, Some(u)) + net.lm.insertion_penalty;
                let cand = base + weight;
                if cand == f64::NEG_INFINITY {
                    continue;
                }
                let target = match net.pair_model[u * v + w] {
                    Some(_) => net.pair_base[net.pair_index[u * v + w] as usize],
                    None => net.sign_node(w, 0),
                };
                if cand > cur[target] {
                    cur[target] = cand;
                    bp_row[target] = from_node as u32;
                    cross_row[target] = true;
                }
            }
        }

        // Transition-model exits into the next sign's first state.
        for u in 0..v {
            for w in 0..v {
                let Some(mi) = net.pair_model[u * v + w] else { continue };
                let model = &net.trans_models[mi as usize];
                let base = net.pair_base[net.pair_index[u * v + w] as usize];
                let from_node = base + model.n_states() - 1;
                let source = prev[from_node];
                if source == f64::NEG_INFINITY {
                    continue;
                }
                let cand = source + model.log_forward(model.n_states() - 1);
                let target = net.sign_node(w, 0);
                if cand > cur[target] {
                    cur[target] = cand;
                    bp_row[target] = from_node as u32;
                    cross_row[target] = true;
                }
            }
        }

        // Internal arcs.
        for (node, kind) in net.nodes.iter().enumerate() {
            match *kind {
                NodeKind::Sign { sign, state } => {
                    let sk = &net.tms.skeletons[sign as usize];
                    let j = state as usize;
                    let stay = if j == sk.n_states() - 1 {
                        prev[node] + sk.log_final_self()
                    } else {
                        prev[node] + sk.log_self(j)
                    };
                    if stay > cur[node] {
                        cur[node] = stay;
                        bp_row[node] = node as u32;
                        cross_row[node] = false;
                    }
                    if j > 0 {
                        let adv = prev[node - 1] + sk.log_forward(j - 1);
                        if adv > cur[node] {
                            cur[node] = adv;
                            bp_row[node] = (node - 1) as u32;
                            cross_row[node] = false;
                        }
                    }
                }
                NodeKind::Trans { pair, state } => {
                    let mi = net.pair_model[pair as usize].expect("pair node has model") as usize;
                    let model = &net.trans_models[mi];
                    let j = state as usize;
                    let stay = prev[node] + model.log_self(j);
                    if stay > cur[node] {
                        cur[node] = stay;
                        bp_row[node] = node as u32;
                        cross_row[node] = false;
                    }
                    if j > 0 {
                        let adv = prev[node - 1] + model.log_forward(j - 1);
                        if adv > cur[node] {
                            cur[node] = adv;
                            bp_row[node] = (node - 1) as u32;
                            cross_row[node] = false;
                        }
                    }
                }
            }
        }

        // Emissions.
        for (node, kind) in net.nodes.iter().enumerate() {
            if cur[node] == f64::NEG_INFINITY {
                continue;
            }
            cur[node] += match *kind {
                NodeKind::Sign { sign, state } => cache.sign(t)[sign as usize][state as usize],
                NodeKind::Trans { pair, state } => {
                    let mi = net.pair_model[pair as usize].expect("pair node has model") as usize;
                    cache.trans(t)[mi][state as usize]
                }
            };
        }

        live = prune_frame(net, &mut cur, &cache, t, beams, unit_gate, &mut stats);
        if live == 0 {
            return Err(Error::AllHypothesesPruned { frame: t });
        }
        stats.mean_active_nodes += live as f64;
        stats.max_lookahead = stats.max_lookahead.max(cache.max_filled - t);
        std::mem::swap(&mut prev, &mut cur);
    }

    stats.mean_active_nodes /= t_len as f64;

    // Terminal: best final-state score over the vocabulary.
    let mut best_node = usize::MAX;
    let mut best_score = f64::NEG_INFINITY;
    for sign in 0..v {
        let node = net.last_node(sign);
        if prev[node] > best_score {
            best_score = prev[node];
            best_node = node;
        }
    }
    if best_node == usize::MAX {
        let min_states = net.tms.skeletons.iter().map(|s| s.n_states()).min().unwrap_or(1);
        return Err(Error::InfeasibleSequence { frames: t_len, states: min_states });
    }

    // Trace back and group frames into sign segments; transition-model
    // frames belong to neither sign.
    let mut path = vec![0usize; t_len];
    let mut crossed = vec![false; t_len];
    let mut node = best_node;
    path[t_len - 1] = node;
    crossed[t_len - 1] = cross[t_len - 1][node];
    for t in (1..t_len).rev() {
        node = bp[t][node] as usize;
        path[t - 1] = node;
        crossed[t - 1] = cross[t - 1][node];
    }

    let mut segmentation: Vec<Segment> = Vec::new();
    let mut current: Option<(usize, usize)> = None; // (sign, start)
    for (t, &node) in path.iter().enumerate() {
        match net.nodes[node] {
            NodeKind::Sign { sign, .. } => {
                let sign = sign as usize;
                let boundary = match current {
                    Some((s, _)) => s != sign || crossed[t],
                    None => true,
                };
                if boundary {
                    if let Some((s, start)) = current.take() {
                        segmentation.push(Segment {
                            sign: net.tms.sign_id(s).to_string(),
                            start,
                            end: t - 1,
                        });
                    }
                    current = Some((sign, t));
                }
            }
            NodeKind::Trans { .. } => {
                if let Some((s, start)) = current.take() {
                    segmentation.push(Segment {
                        sign: net.tms.sign_id(s).to_string(),
                        start,
                        end: t - 1,
                    });
                }
            }
        }
    }
    if let Some((s, start)) = current {
        segmentation.push(Segment { sign: net.tms.sign_id(s).to_string(), start, end: t_len - 1 });
    }
    let signs = segmentation.iter().map(|seg| seg.sign.clone()).collect();

    Ok(DecodeOutput { signs, segmentation, score: best_score, stats })
}

/// Apply unit gating and the state beam to one frame's scores; returns the
/// live node count.
fn prune_frame(
    net: &DecodeNetwork,
    scores: &mut [f64],
    cache: &ScoreCache,
    t: usize,
    beams: &BeamConfig,
    unit_gate: Option<f64>,
    stats: &mut DecodeStats,
) -> usize {
    if let Some(threshold) = unit_gate {
        let mask = active_units(cache.units(t), threshold);
        for (node, kind) in net.nodes.iter().enumerate() {
            if let NodeKind::Sign { sign, .. } = *kind {
                if !mask[sign as usize] && scores[node] != f64::NEG_INFINITY {
                    scores[node] = f64::NEG_INFINITY;
                    stats.units_pruned += 1;
                }
            }
        }
    }
    if let Some(beam) = beams.state_beam {
        let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if best > f64::NEG_INFINITY && beam.is_finite() {
            let floor = best - beam;
            for s in scores.iter_mut() {
                if *s != f64::NEG_INFINITY && *s < floor {
                    *s = f64::NEG_INFINITY;
                    stats.state_beam_pruned += 1;
                }
            }
        }
    }
    scores.iter().filter(|&&s| s != f64::NEG_INFINITY).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::{viterbi_score, SignHmm, StateModel, StreamDensity};
    use crate::tying::cluster_stream_states;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bigram_add_one_arithmetic() {
        let corpus = vec![vec!["A".to_string(), "B".to_string()]];
        let lm = BigramLm::estimate(&corpus, &["A".into(), "B".into()]).unwrap();
        let a = lm.index("A").unwrap();
        let b = lm.index("B").unwrap();
        assert!((lm.log_p(b, Some(a)).exp() - 2.0 / 3.0).abs() < 1e-12);
        assert!((lm.log_p(a, Some(a)).exp() - 1.0 / 3.0).abs() < 1e-12);
        assert!((lm.log_p(a, None).exp() - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn bigram_empty_corpus_is_uniform() {
        let vocab: Vec<String> = (0..5).map(|i| format!("s{i}")).collect();
        let lm = BigramLm::uniform(&vocab).unwrap();
        for prev in std::iter::once(None).chain((0..5).map(Some)) {
            for next in 0..5 {
                assert!((lm.log_p(next, prev).exp() - 0.2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bigram_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let vocab: Vec<String> = (0..8).map(|i| format!("s{i}")).collect();
        let corpus: Vec<Vec<String>> = (0..30)
            .map(|_| {
                (0..rng.random_range(1..6)).map(|_| vocab[rng.random_range(0..8)].clone()).collect()
            })
            .collect();
        let lm = BigramLm::estimate(&corpus, &vocab).unwrap();
        for row in &lm.log_rows {
            let sum: f64 = row.iter().map(|&l| l.exp()).sum();
            assert!((sum - 1.0).abs() < 1e-12, "row sums to {sum}");
        }
    }

    #[test]
    fn bigram_rejects_empty_vocab_and_unknown_signs() {
        assert!(matches!(BigramLm::estimate(&[], &[]), Err(Error::EmptyVocabulary)));
        let corpus = vec![vec!["zz".to_string()]];
        assert!(matches!(
            BigramLm::estimate(&corpus, &["a".into()]),
            Err(Error::UnknownSign(id)) if id == "zz"
        ));
    }

    #[test]
    fn lookahead_arithmetic_and_truncation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let p_u: f64 = rng.random_range(-30.0..0.0);
            let p_v: f64 = rng.random_range(-30.0..0.0);
            let future: Vec<f64> = (0..3).map(|_| rng.random_range(-30.0..0.0)).collect();
            let got = lookahead_score(p_u, p_v, &future);
            let want = 0.5 * (p_u + p_v) + (future[0] + future[1] + future[2]) / 3.0;
            assert!((got - want).abs() < 1e-12);
        }
        // Window truncated to a single frame.
        let got = lookahead_score(-1.0, -2.0, &[-4.0]);
        assert!((got - (-1.5 - 4.0)).abs() < 1e-12);
        // Identical first states: ranking is the (p_u + p_v)/2 offset.
        let a = lookahead_score(-1.0, -3.0, &[-4.0, -5.0]);
        let b = lookahead_score(-2.0, -3.0, &[-4.0, -5.0]);
        assert!(a > b);
        assert!((a - b - 0.5).abs() < 1e-12);
    }

    fn random_model(id: &str, rng: &mut ChaCha8Rng, layout: &StreamLayout) -> SignHmm {
        let states = (0..3)
            .map(|_| {
                let streams = layout
                    .streams()
                    .iter()
                    .map(|info| {
                        let mean: Vec<f64> =
                            (0..info.dim).map(|_| 0.1 + 0.8 * rng.random::<f64>()).collect();
                        StreamDensity::gaussian(mean, vec![0.01; info.dim])
                    })
                    .collect();
                StateModel { streams }
            })
            .collect();
        SignHmm { id: id.into(), states, self_loop: vec![0.6, 0.6, 0.6], occupancy: vec![1.0; 3] }
    }

    fn lossless_tied(models: &[SignHmm], layout: &StreamLayout) -> TiedModelSet {
        let entries = models.iter().map(|m| m.n_states()).sum::<usize>();
        cluster_stream_states(models, layout, &[entries; 6]).unwrap()
    }

    #[test]
    fn unit_scores_and_activity() {
        let layout = StreamLayout::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let models = vec![random_model("a", &mut rng, &layout)];
        let tms = lossless_tied(&models, &layout);
        let frame = Frame::new((0..48).map(|_| rng.random::<f64>()).collect()).unwrap();
        let table = frame_score_table(&tms.codebook, &frame, &layout);
        let scores = active_unit_scores(&table, &tms);
        assert_eq!(scores.len(), 1);
        // A single-sign vocabulary is always active, at any threshold.
        assert_eq!(active_units(&scores, 0.0), vec![true]);

        let models: Vec<SignHmm> =
            (0..6).map(|i| random_model(&format!("s{i}"), &mut rng, &layout)).collect();
        let tms = lossless_tied(&models, &layout);
        let table = frame_score_table(&tms.codebook, &frame, &layout);
        let scores = active_unit_scores(&table, &tms);
        assert!(active_units(&scores, f64::INFINITY).iter().all(|&a| a));
        // The per-stream max over states bounds every state's combined score.
        let state_scores = score_all_states(&tms, &table);
        for (sign, sk) in tms.skeletons.iter().enumerate() {
            for j in 0..sk.n_states() {
                assert!(scores[sign] >= state_scores[sign][j] - 1e-9);
            }
        }
    }

    fn sample_seq(models: &[SignHmm], order: &[usize], layout: &StreamLayout, rng: &mut ChaCha8Rng) -> GestureSequence {
        let mut frames = Vec::new();
        for &m in order {
            let hmm = &models[m];
            for j in 0..hmm.n_states() {
                loop {
                    let mut values = vec![0.0; 48];
                    for s in 0..STREAM_COUNT {
                        let info = layout.stream(s);
                        let d = &hmm.states[j].streams[s];
                        for i in 0..info.dim {
                            let z: f64 =
                                rand_distr::Distribution::sample(&rand_distr::StandardNormal, rng);
                            values[info.offset + i] = d.means[0][i] + d.variances[0][i].sqrt() * z;
                        }
                    }
                    frames.push(Frame::new(values).unwrap());
                    if !rng.random_bool(hmm.self_loop[j].min(0.9)) {
                        break;
                    }
                }
            }
        }
        GestureSequence::new(frames, None).unwrap()
    }

    #[test]
    fn single_sign_network_matches_viterbi_score() {
        let layout = StreamLayout::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let models = vec![random_model("only", &mut rng, &layout)];
        let tms = lossless_tied(&models, &layout);
        let lm = BigramLm::uniform(&["only".to_string()]).unwrap();
        let net = DecodeNetwork::build(&tms, &lm, &models, None).unwrap();
        for _ in 0..10 {
            let seq = sample_seq(&models, &[0], &layout, &mut rng);
            let out = decode(&net, &seq, &BeamConfig::default()).unwrap();
            let (want, _) = viterbi_score(&models[0], &seq, &layout).unwrap();
            // One sign: log P(only|start) = 0, so the scores coincide.
            assert!((out.score - want).abs() < 1e-8, "{} vs {want}", out.score);
            assert_eq!(out.signs, vec!["only".to_string()]);
            assert_eq!(out.segmentation.len(), 1);
            assert_eq!(out.segmentation[0].start, 0);
            assert_eq!(out.segmentation[0].end, seq.len() - 1);
        }
    }

    /// Exhaustive reference: enumerate every sign sequence and segmentation,
    /// scoring segments with the untied per-sign Viterbi.
    fn brute_force(
        models: &[SignHmm],
        lm: &BigramLm,
        seq: &GestureSequence,
        layout: &StreamLayout,
    ) -> (f64, Vec<usize>) {
        fn recurse(
            models: &[SignHmm],
            lm: &BigramLm,
            seq: &GestureSequence,
            layout: &StreamLayout,
            start: usize,
            prev: Option<usize>,
            acc: f64,
            labels: &mut Vec<usize>,
            best: &mut (f64, Vec<usize>),
        ) {
            let t_len = seq.len();
            for (m, model) in models.iter().enumerate() {
                let lm_term = lm.scale * lm.log_p(m, prev)
                    + if prev.is_some() { lm.insertion_penalty } else { 0.0 };
                for end in (start + model.n_states())..=t_len {
                    let segment = GestureSequence::new(seq.frames[start..end].to_vec(), None).unwrap();
                    let Ok((seg_score, _)) = viterbi_score(model, &segment, layout) else {
                        continue;
                    };
                    let mut total = acc + lm_term + seg_score;
                    labels.push(m);
                    if end == t_len {
                        if total > best.0 {
                            *best = (total, labels.clone());
                        }
                    } else {
                        total += models[m].log_exit();
                        recurse(models, lm, seq, layout, end, Some(m), total, labels, best);
                    }
                    labels.pop();
                }
            }
        }
        let mut best = (f64::NEG_INFINITY, Vec::new());
        let mut labels = Vec::new();
        recurse(models, lm, seq, layout, 0, None, 0.0, &mut labels, &mut best);
        best
    }

    #[test]
    fn decode_matches_brute_force_on_small_instances() {
        let layout = StreamLayout::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for round in 0..5 {
            let mut models: Vec<SignHmm> =
                (0..2).map(|i| random_model(&format!("s{i}"), &mut rng, &layout)).collect();
            for m in &mut models {
                m.self_loop = vec![0.4; 3]; // short dwell keeps enumeration small
            }
            let tms = lossless_tied(&models, &layout);
            let vocab: Vec<String> = models.iter().map(|m| m.id.clone()).collect();
            let corpus: Vec<Vec<String>> = (0..4)
                .map(|_| (0..3).map(|_| vocab[rng.random_range(0..2)].clone()).collect())
                .collect();
            let mut lm = BigramLm::estimate(&corpus, &vocab).unwrap();
            lm.scale = if round % 2 == 0 { 1.0 } else { 0.7 };
            lm.insertion_penalty = if round % 2 == 0 { 0.0 } else { -1.5 };
            let net = DecodeNetwork::build(&tms, &lm, &models, None).unwrap();

            let order: Vec<usize> = (0..rng.random_range(1..3)).map(|_| rng.random_range(0..2)).collect();
            let seq = sample_seq(&models, &order, &layout, &mut rng);
            if seq.len() > 14 {
                continue;
            }
            let out = decode(&net, &seq, &BeamConfig::default()).unwrap();
            let (want_score, want_labels) = brute_force(&models, &lm, &seq, &layout);
            assert!(
                (out.score - want_score).abs() < 1e-8,
                "round {round}: {} vs {want_score}",
                out.score
            );
            let got: Vec<usize> =
                out.signs.iter().map(|id| tms.sign_index(id).unwrap()).collect();
            assert_eq!(got, want_labels, "round {round}");
        }
    }

    #[test]
    fn widening_beams_never_lowers_the_score() {
        let layout = StreamLayout::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let models: Vec<SignHmm> =
            (0..3).map(|i| random_model(&format!("s{i}"), &mut rng, &layout)).collect();
        let tms = lossless_tied(&models, &layout);
        let vocab: Vec<String> = models.iter().map(|m| m.id.clone()).collect();
        let lm = BigramLm::uniform(&vocab).unwrap();
        let net = DecodeNetwork::build(&tms, &lm, &models, None).unwrap();
        for _ in 0..5 {
            let order: Vec<usize> = (0..2).map(|_| rng.random_range(0..3)).collect();
            let seq = sample_seq(&models, &order, &layout, &mut rng);
            let mut last = f64::NEG_INFINITY;
            for beam in [2.0, 5.0, 10.0, f64::INFINITY] {
                let cfg = BeamConfig {
                    state_beam: Some(beam),
                    sign_beam: Some(beam),
                    ..Default::default()
                };
                let score = match decode(&net, &seq, &cfg) {
                    Ok(out) => out.score,
                    Err(_) => f64::NEG_INFINITY,
                };
                assert!(score >= last - 1e-9, "beam {beam}: {score} < {last}");
                last = score;
            }
        }
    }

    #[test]
    fn unit_gating_can_prune_everything() {
        // Two well-separated signs and a sequence that flips which unit is
        // active: with a zero threshold every hypothesis eventually dies.
        let layout = StreamLayout::standard();
        let mut models = Vec::new();
        for (i, base) in [0.1, 0.9].iter().enumerate() {
            let states = (0..3)
                .map(|_| {
                    let streams = layout
                        .streams()
                        .iter()
                        .map(|info| StreamDensity::gaussian(vec![*base; info.dim], vec![0.0001; info.dim]))
                        .collect();
                    StateModel { streams }
                })
                .collect();
            models.push(SignHmm {
                id: format!("s{i}"),
                states,
                self_loop: vec![0.5, 0.5, 0.5],
                occupancy: vec![1.0; 3],
            });
        }
        let tms = cluster_stream_states(&models, &layout, &[6; 6]).unwrap();
        let vocab: Vec<String> = models.iter().map(|m| m.id.clone()).collect();
        let lm = BigramLm::uniform(&vocab).unwrap();
        let net = DecodeNetwork::build(&tms, &lm, &models, None).unwrap();
        let frames = vec![
            Frame::new(vec![0.1; 48]).unwrap(),
            Frame::new(vec![0.9; 48]).unwrap(),
            Frame::new(vec![0.9; 48]).unwrap(),
        ];
        let seq = GestureSequence::new(frames, None).unwrap();
        let cfg = BeamConfig { unit_threshold: Some(0.0), ..Default::default() };
        match decode(&net, &seq, &cfg) {
            Err(Error::AllHypothesesPruned { frame }) => assert!(frame >= 1),
            other => panic!("expected pruning error, got {other:?}"),
        }
    }

    #[test]
    fn fast_match_with_huge_threshold_is_identical() {
        let layout = StreamLayout::standard();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let models: Vec<SignHmm> =
            (0..3).map(|i| random_model(&format!("s{i}"), &mut rng, &layout)).collect();
        let tms = lossless_tied(&models, &layout);
        let vocab: Vec<String> = models.iter().map(|m| m.id.clone()).collect();
        let lm = BigramLm::uniform(&vocab).unwrap();
        let net = DecodeNetwork::build(&tms, &lm, &models, None).unwrap();
        for _ in 0..5 {
            let order: Vec<usize> = (0..2).map(|_| rng.random_range(0..3)).collect();
            let seq = sample_seq(&models, &order, &layout, &mut rng);
            let plain = decode(&net, &seq, &BeamConfig::default()).unwrap();
            let gated = decode(
                &net,
                &seq,
                &BeamConfig { unit_threshold: Some(1e12), ..Default::default() },
            )
            .unwrap();
            assert_eq!(plain.signs, gated.signs);
            assert_eq!(plain.score.to_bits(), gated.score.to_bits());
            assert_eq!(plain.segmentation, gated.segmentation);
            // The look-ahead window stays within its depth.
            assert!(gated.stats.max_lookahead <= 3);
            assert_eq!(plain.stats.max_lookahead, 0);
        }
    }
}
