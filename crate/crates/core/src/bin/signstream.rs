//! Command-line surface for the sign recognition toolkit.
//!
//! Pipeline: `synth` makes a ground-truth vocabulary and datasets, `train`
//! estimates sign HMMs, `tie` builds the stream-tying codebooks,
//! `train-transitions` adds epenthesis models and a bigram model, and
//! `decode-isolated` / `decode-continuous` / `eval` run recognition.
//!
//! Exit codes: 0 on success, 1 when at least one utterance failed to
//! decode, 2 for usage or data errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use signstream::bundle::{ModelBundle, Provenance};
use signstream::decoder::{decode, BeamConfig, BigramLm, DecodeNetwork};
use signstream::epenthesis::{tie_transitions, train_transitions, TransitionSet};
use signstream::error::{Error, Result};
use signstream::frames::{
    normalize_frame, read_dataset, write_dataset, GestureSequence, Label, NormalizationStats,
    StreamLayout,
};
use signstream::isolated::{recognize_isolated, GateConfig};
use signstream::metrics::{align, word_correct_rate, ErrorCounts};
use signstream::synth::{make_vocab, sample_sentence, sample_sign, EpenthesisMode, SynthConfig};
use signstream::train::{baum_welch_train, select_state_count, TrainOptions};
use signstream::tying::cluster_stream_states;

#[derive(Parser)]
#[command(name = "signstream", version, about = "Multi-stream tied-state HMM toolkit for glove sign sequences")]
struct Cli {
    /// Random seed for commands that sample.
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,
    /// Worker threads for per-sign / per-utterance parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic ground-truth vocabulary plus datasets.
    Synth(SynthArgs),
    /// Train one sign HMM per label in a dataset.
    Train(TrainArgs),
    /// Tie stream state densities into per-stream pattern codebooks.
    Tie(TieArgs),
    /// Train movement-epenthesis models on labeled sentences.
    TrainTransitions(TrainTransitionsArgs),
    /// Recognize isolated signs with fast-match gating.
    DecodeIsolated(DecodeIsolatedArgs),
    /// Decode continuous sentences over the transition network.
    DecodeContinuous(DecodeContinuousArgs),
    /// Decode a dataset and report accuracy metrics.
    Eval(EvalArgs),
}

#[derive(Args, Serialize)]
struct SynthArgs {
    /// Vocabulary size.
    #[arg(long, default_value_t = 20)]
    vocab: usize,
    /// States per sign model.
    #[arg(long, default_value_t = 3)]
    states: usize,
    /// Gaussian components per stream density.
    #[arg(long, default_value_t = 1)]
    mixtures: usize,
    /// Inter-sign separation in units of the base noise deviation.
    #[arg(long, default_value_t = 4.0)]
    separation: f64,
    /// Sign-state self-loop probability.
    #[arg(long, default_value_t = 0.6)]
    self_loop: f64,
    /// Epenthesis self-loop probability.
    #[arg(long, default_value_t = 0.5)]
    epenthesis_self_loop: f64,
    /// Training repetitions per sign.
    #[arg(long, default_value_t = 4)]
    train_reps: usize,
    /// Test repetitions per sign.
    #[arg(long, default_value_t = 1)]
    test_reps: usize,
    /// Training sentences.
    #[arg(long, default_value_t = 50)]
    sentences: usize,
    /// Test sentences.
    #[arg(long, default_value_t = 25)]
    test_sentences: usize,
    /// Sentence length range, e.g. 2-8.
    #[arg(long, default_value = "2-8")]
    sentence_length: String,
    /// Join sentence signs with epenthesis segments.
    #[arg(long, value_enum, default_value_t = Epenthesis::On)]
    epenthesis: Epenthesis,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
enum Epenthesis {
    On,
    Off,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    /// Training dataset (JSON lines).
    #[arg(long)]
    data: PathBuf,
    /// States per sign: 3, 5, or auto (held-out selection).
    #[arg(long, default_value = "3")]
    states: String,
    /// Gaussian components per stream density.
    #[arg(long, default_value_t = 1)]
    mixtures: usize,
    /// EM iteration cap.
    #[arg(long, default_value_t = 20)]
    em_iterations: usize,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct TieArgs {
    /// Input model bundle.
    #[arg(long)]
    model: PathBuf,
    /// Six pattern counts Lp,Lo,Ls,Rp,Ro,Rs (or one count for all).
    #[arg(long, default_value = "256")]
    patterns: String,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize)]
struct TrainTransitionsArgs {
    /// Input model bundle (tied).
    #[arg(long)]
    model: PathBuf,
    /// Labeled sentence dataset; also used to estimate the bigram model.
    #[arg(long)]
    data: PathBuf,
    /// Transition-model states: 1 or 3.
    #[arg(long, default_value_t = 1)]
    states: usize,
    /// Tie the pair models down to this many shared models.
    #[arg(long)]
    tie: Option<usize>,
    /// EM iteration cap.
    #[arg(long, default_value_t = 20)]
    em_iterations: usize,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Serialize, Clone)]
struct DecodeIsolatedArgs {
    /// Model bundle with tying.
    #[arg(long)]
    model: PathBuf,
    /// Dataset to decode.
    #[arg(long)]
    data: PathBuf,
    /// Codeword posterior threshold.
    #[arg(long, default_value_t = 1e-3)]
    tau: f64,
    /// Start frames averaged by the gate.
    #[arg(long, default_value_t = 3)]
    start_frames: usize,
    /// Ranked hypotheses to keep.
    #[arg(long, default_value_t = 5)]
    nbest: usize,
    /// Write per-sequence JSON lines here (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Serialize, Clone)]
struct DecodeContinuousArgs {
    /// Model bundle with tying (and optionally transitions).
    #[arg(long)]
    model: PathBuf,
    /// Sentence dataset to decode.
    #[arg(long)]
    data: PathBuf,
    /// State-level beam width (log domain); omit to disable.
    #[arg(long)]
    state_beam: Option<f64>,
    /// Sign-level beam width (log domain); omit to disable.
    #[arg(long)]
    sign_beam: Option<f64>,
    /// Active-unit fast-match threshold; omit to disable.
    #[arg(long)]
    unit_threshold: Option<f64>,
    /// Language model scale.
    #[arg(long, default_value_t = 1.0)]
    lm_scale: f64,
    /// Per-transition insertion penalty.
    #[arg(long, default_value_t = 0.0)]
    insertion_penalty: f64,
    /// Decode with direct sign-to-sign arcs even if the bundle has
    /// transition models.
    #[arg(long, default_value_t = false)]
    no_transitions: bool,
    /// Write per-sentence JSON lines here (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct EvalArgs {
    /// Model bundle.
    #[arg(long)]
    model: PathBuf,
    /// Dataset to evaluate.
    #[arg(long)]
    data: PathBuf,
    /// Evaluation mode.
    #[arg(long, value_enum)]
    mode: EvalMode,
    #[command(flatten)]
    isolated: IsolatedKnobs,
    #[command(flatten)]
    continuous: ContinuousKnobs,
    /// Write the JSON report here as well as printing the text summary.
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalMode {
    Isolated,
    Continuous,
}

#[derive(Args, Clone)]
struct IsolatedKnobs {
    #[arg(long, default_value_t = 1e-3)]
    tau: f64,
    #[arg(long, default_value_t = 3)]
    start_frames: usize,
}

#[derive(Args, Clone)]
struct ContinuousKnobs {
    #[arg(long)]
    state_beam: Option<f64>,
    #[arg(long)]
    sign_beam: Option<f64>,
    #[arg(long)]
    unit_threshold: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    lm_scale: f64,
    #[arg(long, default_value_t = 0.0)]
    insertion_penalty: f64,
    #[arg(long, default_value_t = false)]
    no_transitions: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.jobs > 1 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global() {
            eprintln!("error: failed to set up {} worker threads: {e}", cli.jobs);
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(failed_utterances) => {
            if failed_utterances > 0 {
                eprintln!("{failed_utterances} utterance(s) failed to decode");
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(error: &Error) -> u8 {
    match error {
        Error::AllHypothesesPruned { .. } | Error::InfeasibleSequence { .. } => 1,
        _ => 2,
    }
}

/// Runs the selected command; the Ok value counts utterance-level
/// recognition failures.
fn run(cli: Cli) -> Result<usize> {
    match cli.command {
        Command::Synth(args) => cmd_synth(cli.seed, &args).map(|()| 0),
        Command::Train(args) => cmd_train(cli.seed, &args).map(|()| 0),
        Command::Tie(args) => cmd_tie(cli.seed, &args).map(|()| 0),
        Command::TrainTransitions(args) => cmd_train_transitions(cli.seed, &args).map(|()| 0),
        Command::DecodeIsolated(args) => cmd_decode_isolated(&args),
        Command::DecodeContinuous(args) => cmd_decode_continuous(&args),
        Command::Eval(args) => cmd_eval(&args),
    }
}

fn parse_length_range(text: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = text.split('-').collect();
    let bad = || Error::InvalidConfig(format!("bad length range `{text}`, expected LO-HI"));
    match parts.as_slice() {
        [single] => {
            let v = single.parse().map_err(|_| bad())?;
            Ok((v, v))
        }
        [lo, hi] => Ok((lo.parse().map_err(|_| bad())?, hi.parse().map_err(|_| bad())?)),
        _ => Err(bad()),
    }
}

fn cmd_synth(seed: u64, args: &SynthArgs) -> Result<()> {
    let layout = StreamLayout::standard();
    let cfg = SynthConfig {
        vocab_size: args.vocab,
        n_states: args.states,
        mixtures: args.mixtures,
        separation: args.separation,
        self_loop: args.self_loop,
        epenthesis_self_loop: args.epenthesis_self_loop,
        seed,
    };
    let (signs, lm) = make_vocab(&cfg, &layout)?;
    std::fs::create_dir_all(&args.out)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let mut train = Vec::new();
    let mut test = Vec::new();
    for sign in &signs {
        for _ in 0..args.train_reps {
            train.push(sample_sign(sign, &layout, &mut rng));
        }
        for _ in 0..args.test_reps {
            test.push(sample_sign(sign, &layout, &mut rng));
        }
    }
    let mode = match args.epenthesis {
        Epenthesis::On => EpenthesisMode::On,
        Epenthesis::Off => EpenthesisMode::Off,
    };
    let range = parse_length_range(&args.sentence_length)?;
    let sentences: Vec<GestureSequence> = (0..args.sentences)
        .map(|_| sample_sentence(&signs, &lm, &layout, mode, range, cfg.epenthesis_self_loop, &mut rng))
        .collect::<Result<_>>()?;
    let test_sentences: Vec<GestureSequence> = (0..args.test_sentences)
        .map(|_| sample_sentence(&signs, &lm, &layout, mode, range, cfg.epenthesis_self_loop, &mut rng))
        .collect::<Result<_>>()?;

    write_dataset(&args.out.join("train.jsonl"), &train)?;
    write_dataset(&args.out.join("test.jsonl"), &test)?;
    write_dataset(&args.out.join("sentences-train.jsonl"), &sentences)?;
    write_dataset(&args.out.join("sentences-test.jsonl"), &test_sentences)?;

    let provenance = Provenance::new(seed, &serde_json::to_string(args)?);
    let mut bundle = ModelBundle::new(layout, NormalizationStats::identity(), signs, provenance);
    bundle.bigram = Some(lm);
    bundle.save(&args.out.join("truth.json"))?;
    eprintln!(
        "wrote {} training, {} test sequences, {} + {} sentences, and truth.json to {}",
        train.len(),
        test.len(),
        args.sentences,
        args.test_sentences,
        args.out.display()
    );
    Ok(())
}

fn group_by_sign(dataset: &[GestureSequence]) -> Result<BTreeMap<String, Vec<GestureSequence>>> {
    let mut groups: BTreeMap<String, Vec<GestureSequence>> = BTreeMap::new();
    for (i, seq) in dataset.iter().enumerate() {
        match &seq.label {
            Some(Label::Sign(id)) => groups.entry(id.clone()).or_default().push(seq.clone()),
            _ => {
                return Err(Error::MalformedRecord {
                    line: i + 1,
                    msg: "training records must carry a single-sign label".into(),
                })
            }
        }
    }
    Ok(groups)
}

fn cmd_train(seed: u64, args: &TrainArgs) -> Result<()> {
    let layout = StreamLayout::standard();
    let dataset = read_dataset(&args.data)?;
    if dataset.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let stats = NormalizationStats::fit(dataset.iter().flat_map(|s| s.frames.iter()))?;
    let degenerate = stats.degenerate_components();
    if !degenerate.is_empty() {
        eprintln!("warning: {} degenerate components map to 0.5", degenerate.len());
    }
    let normalized: Vec<GestureSequence> = dataset
        .iter()
        .map(|seq| {
            Ok(GestureSequence {
                label: seq.label.clone(),
                frames: seq
                    .frames
                    .iter()
                    .map(|f| normalize_frame(&f.values, &stats))
                    .collect::<Result<_>>()?,
            })
        })
        .collect::<Result<_>>()?;
    let groups = group_by_sign(&normalized)?;

    let opts = TrainOptions { max_iterations: args.em_iterations, ..Default::default() };
    let entries: Vec<(&String, &Vec<GestureSequence>)> = groups.iter().collect();
    use rayon::prelude::*;
    let signs: Vec<signstream::hmm::SignHmm> = entries
        .par_iter()
        .map(|(id, seqs)| {
            let n_states = match args.states.as_str() {
                "auto" => select_state_count(seqs, &layout, args.mixtures, &opts),
                text => text
                    .parse::<usize>()
                    .ok()
                    .filter(|n| *n == 3 || *n == 5)
                    .ok_or_else(|| Error::InvalidConfig(format!("--states must be 3, 5, or auto, got `{text}`")))?,
            };
            baum_welch_train(id, seqs, &layout, n_states, args.mixtures, &opts).map(|t| t.hmm)
        })
        .collect::<Result<_>>()?;

    let provenance = Provenance::new(seed, &serde_json::to_string(args)?);
    let mut bundle = ModelBundle::new(layout, stats, signs, provenance);
    // A uniform bigram keeps the bundle decodable before sentence training.
    let vocab: Vec<String> = bundle.signs.iter().map(|s| s.id.clone()).collect();
    bundle.bigram = Some(BigramLm::uniform(&vocab)?);
    bundle.save(&args.out)?;
    eprintln!("trained {} sign models -> {}", bundle.signs.len(), args.out.display());
    Ok(())
}

/// Pattern counts are given in the order Lp,Lo,Ls,Rp,Ro,Rs and mapped onto
/// the layout order (right-shape, left-shape, right-position,
/// left-position, right-orientation, left-orientation).
fn parse_patterns(text: &str) -> Result<[usize; 6]> {
    let parts: Vec<usize> = text
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| Error::InvalidConfig(format!("bad pattern count `{p}`"))))
        .collect::<Result<_>>()?;
    let (lp, lo, ls, rp, ro, rs) = match parts.as_slice() {
        [k] => (*k, *k, *k, *k, *k, *k),
        [lp, lo, ls, rp, ro, rs] => (*lp, *lo, *ls, *rp, *ro, *rs),
        _ => {
            return Err(Error::InvalidConfig(
                "--patterns takes one count or six (Lp,Lo,Ls,Rp,Ro,Rs)".into(),
            ))
        }
    };
    if [lp, lo, ls, rp, ro, rs].iter().any(|&k| k == 0) {
        return Err(Error::InvalidConfig("pattern counts must be at least 1".into()));
    }
    Ok([rs, ls, rp, lp, ro, lo])
}

fn cmd_tie(seed: u64, args: &TieArgs) -> Result<()> {
    let mut bundle = ModelBundle::load(&args.model)?;
    let k = parse_patterns(&args.patterns)?;
    let tied = cluster_stream_states(&bundle.signs, &bundle.layout, &k)?;
    if !tied.reduced_streams.is_empty() {
        eprintln!(
            "warning: pattern counts reduced to the number of distinct densities in {} stream(s)",
            tied.reduced_streams.len()
        );
    }
    bundle.start_codebook = Some(signstream::isolated::build_subsets(&tied));
    bundle.tied = Some(tied);
    bundle.provenance = Provenance::new(seed, &serde_json::to_string(args)?);
    bundle.save(&args.out)?;
    eprintln!("tied codebooks -> {}", args.out.display());
    Ok(())
}

fn cmd_train_transitions(seed: u64, args: &TrainTransitionsArgs) -> Result<()> {
    let mut bundle = ModelBundle::load(&args.model)?;
    let dataset = read_dataset(&args.data)?;
    if dataset.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let normalized: Vec<GestureSequence> = dataset
        .iter()
        .map(|seq| {
            Ok(GestureSequence {
                label: seq.label.clone(),
                frames: seq
                    .frames
                    .iter()
                    .map(|f| normalize_frame(&f.values, &bundle.stats))
                    .collect::<Result<_>>()?,
            })
        })
        .collect::<Result<_>>()?;

    let opts = TrainOptions { max_iterations: args.em_iterations, ..Default::default() };
    let outcome = train_transitions(&normalized, &bundle.signs, &bundle.layout, args.states, &opts)?;
    if !outcome.no_data_pairs.is_empty() {
        eprintln!(
            "note: {} pair(s) absorbed no epenthesis frames and keep their interpolation",
            outcome.no_data_pairs.len()
        );
    }
    if outcome.skipped_sentences > 0 {
        eprintln!("warning: skipped {} sentence(s) shorter than their sign chain", outcome.skipped_sentences);
    }

    let mut set = TransitionSet::new(outcome.models, args.states);
    if let Some(k) = args.tie {
        let tied = tie_transitions(&set.models, &bundle.layout, k)?;
        if tied.reduced {
            eprintln!("warning: transition tie count reduced to the number of distinct models");
        }
        set.tied = Some(tied);
    }
    let pair_count = set.models.len();
    bundle.transitions = Some(set);

    // Refresh the bigram from the sentence corpus.
    let corpus: Vec<Vec<String>> = normalized
        .iter()
        .filter_map(|s| s.label.as_ref().map(Label::signs))
        .collect();
    let vocab: Vec<String> = bundle.signs.iter().map(|s| s.id.clone()).collect();
    bundle.bigram = Some(BigramLm::estimate(&corpus, &vocab)?);

    bundle.provenance = Provenance::new(seed, &serde_json::to_string(args)?);
    bundle.save(&args.out)?;
    eprintln!("trained {pair_count} transition model(s) -> {}", args.out.display());
    Ok(())
}

fn normalize_input(seq: &GestureSequence, stats: &NormalizationStats) -> Result<GestureSequence> {
    Ok(GestureSequence {
        label: seq.label.clone(),
        frames: seq.frames.iter().map(|f| normalize_frame(&f.values, stats)).collect::<Result<_>>()?,
    })
}

fn write_results(lines: &[String], out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => Ok(std::fs::write(path, format!("{}\n", lines.join("\n")))?),
        None => {
            for line in lines {
                println!("{line}");
            }
            Ok(())
        }
    }
}

fn cmd_decode_isolated(args: &DecodeIsolatedArgs) -> Result<usize> {
    let bundle = ModelBundle::load(&args.model)?;
    let tms = bundle.tied()?;
    let cb = bundle.start_codebook()?;
    let dataset = read_dataset(&args.data)?;
    let cfg = GateConfig { tau: args.tau, start_frames: args.start_frames };

    use rayon::prelude::*;
    let results: Vec<Result<(String, bool)>> = dataset
        .par_iter()
        .map(|seq| {
            let normalized = normalize_input(seq, &bundle.stats)?;
            let result = recognize_isolated(&normalized, tms, cb, &cfg, args.nbest)?;
            let line = serde_json::json!({
                "label": seq.label,
                "nbest": result.ranked.iter().map(|(sign, score)| {
                    serde_json::json!({"sign": sign, "score": score})
                }).collect::<Vec<_>>(),
                "stats": result.stats,
                "diagnostic": result.diagnostic,
            });
            Ok((line.to_string(), result.ranked.is_empty()))
        })
        .collect();

    let mut lines = Vec::with_capacity(results.len());
    let mut failed = 0usize;
    for r in results {
        let (line, empty) = r?;
        if empty {
            failed += 1;
        }
        lines.push(line);
    }
    write_results(&lines, args.out.as_deref())?;
    Ok(failed)
}

fn beam_config(knobs: &ContinuousKnobs) -> BeamConfig {
    BeamConfig {
        state_beam: knobs.state_beam,
        sign_beam: knobs.sign_beam,
        unit_threshold: knobs.unit_threshold,
        lookahead_depth: 3,
    }
}

fn continuous_knobs(args: &DecodeContinuousArgs) -> ContinuousKnobs {
    ContinuousKnobs {
        state_beam: args.state_beam,
        sign_beam: args.sign_beam,
        unit_threshold: args.unit_threshold,
        lm_scale: args.lm_scale,
        insertion_penalty: args.insertion_penalty,
        no_transitions: args.no_transitions,
    }
}

fn cmd_decode_continuous(args: &DecodeContinuousArgs) -> Result<usize> {
    let bundle = ModelBundle::load(&args.model)?;
    let knobs = continuous_knobs(args);
    let (lines, failed, _, _) = decode_sentences(&bundle, &args.data, &knobs, true)?;
    write_results(&lines, args.out.as_deref())?;
    Ok(failed)
}

/// Decode every sentence in a dataset; returns JSONL lines, the failure
/// count, per-utterance (reference, hypothesis) pairs, and total frames.
fn decode_sentences(
    bundle: &ModelBundle,
    data: &Path,
    knobs: &ContinuousKnobs,
    want_lines: bool,
) -> Result<(Vec<String>, usize, Vec<(Vec<String>, Vec<String>)>, usize)> {
    let tms = bundle.tied()?;
    let mut lm = bundle.bigram()?.clone();
    lm.scale = knobs.lm_scale;
    lm.insertion_penalty = knobs.insertion_penalty;
    let transitions = if knobs.no_transitions { None } else { bundle.transitions.as_ref() };
    let network = DecodeNetwork::build(tms, &lm, &bundle.signs, transitions)?;
    let beams = beam_config(knobs);

    let dataset = read_dataset(data)?;
    use rayon::prelude::*;
    let outputs: Vec<Result<(Option<String>, Vec<String>, Vec<String>, usize)>> = dataset
        .par_iter()
        .map(|seq| {
            let normalized = normalize_input(seq, &bundle.stats)?;
            let reference = seq.label.as_ref().map(Label::signs).unwrap_or_default();
            match decode(&network, &normalized, &beams) {
                Ok(out) => {
                    let line = want_lines.then(|| {
                        serde_json::json!({
                            "label": seq.label,
                            "hypothesis": out.signs,
                            "score": out.score,
                            "segmentation": out.segmentation,
                            "stats": out.stats,
                        })
                        .to_string()
                    });
                    Ok((line, reference, out.signs, seq.len()))
                }
                Err(Error::AllHypothesesPruned { frame }) => {
                    let line = want_lines.then(|| {
                        serde_json::json!({
                            "label": seq.label,
                            "hypothesis": Vec::<String>::new(),
                            "error": format!("all hypotheses pruned at frame {frame}"),
                        })
                        .to_string()
                    });
                    Ok((line, reference, Vec::new(), seq.len()))
                }
                Err(e) => Err(e),
            }
        })
        .collect();

    let mut lines = Vec::new();
    let mut pairs = Vec::new();
    let mut failed = 0usize;
    let mut frames = 0usize;
    for out in outputs {
        let (line, reference, hypothesis, t) = out?;
        if hypothesis.is_empty() {
            failed += 1;
        }
        if let Some(line) = line {
            lines.push(line);
        }
        frames += t;
        pairs.push((reference, hypothesis));
    }
    Ok((lines, failed, pairs, frames))
}

fn cmd_eval(args: &EvalArgs) -> Result<usize> {
    match args.mode {
        EvalMode::Isolated => eval_isolated(args),
        EvalMode::Continuous => eval_continuous(args),
    }
}

fn eval_isolated(args: &EvalArgs) -> Result<usize> {
    let bundle = ModelBundle::load(&args.model)?;
    let tms = bundle.tied()?;
    let cb = bundle.start_codebook()?;
    let dataset = read_dataset(&args.data)?;
    let cfg = GateConfig { tau: args.isolated.tau, start_frames: args.isolated.start_frames };

    let started = Instant::now();
    use rayon::prelude::*;
    let outcomes: Vec<Result<(bool, bool, usize, usize, bool)>> = dataset
        .par_iter()
        .map(|seq| {
            let normalized = normalize_input(seq, &bundle.stats)?;
            let result = recognize_isolated(&normalized, tms, cb, &cfg, 1)?;
            let reference = match &seq.label {
                Some(Label::Sign(id)) => id.clone(),
                _ => String::new(),
            };
            let correct = result.ranked.first().map(|(sign, _)| sign == &reference).unwrap_or(false);
            Ok((
                correct,
                result.ranked.is_empty(),
                result.stats.candidates,
                result.stats.viterbi_evals,
                result.stats.fallback,
            ))
        })
        .collect();
    let elapsed = started.elapsed();

    let mut correct = 0usize;
    let mut failed = 0usize;
    let mut candidates = 0usize;
    let mut evals = 0usize;
    let mut fallbacks = 0usize;
    let n = dataset.len();
    for o in outcomes {
        let (ok, empty, cand, ev, fb) = o?;
        correct += ok as usize;
        failed += empty as usize;
        candidates += cand;
        evals += ev;
        fallbacks += fb as usize;
    }
    let accuracy = if n > 0 { correct as f64 / n as f64 } else { 0.0 };

    let report = serde_json::json!({
        "mode": "isolated",
        "sequences": n,
        "correct": correct,
        "accuracy": accuracy,
        "tau": args.isolated.tau,
        "start_frames": args.isolated.start_frames,
        "vocabulary": tms.sign_count(),
        "mean_candidates": if n > 0 { candidates as f64 / n as f64 } else { 0.0 },
        "viterbi_evals": evals,
        "fallbacks": fallbacks,
        "failed": failed,
        "elapsed_ms": elapsed.as_millis() as u64,
    });
    if let Some(path) = &args.json {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    println!("isolated evaluation over {n} sequences ({} signs)", tms.sign_count());
    println!("  accuracy      {:6.2}%  ({correct}/{n})", accuracy * 100.0);
    println!("  tau           {:>8}   start frames {}", args.isolated.tau, args.isolated.start_frames);
    println!("  candidates    {:8.1} mean of {}", if n > 0 { candidates as f64 / n as f64 } else { 0.0 }, tms.sign_count());
    println!("  viterbi evals {evals:>8}   fallbacks {fallbacks}");
    println!("  elapsed       {:8.1} ms", elapsed.as_millis());
    Ok(failed)
}

fn eval_continuous(args: &EvalArgs) -> Result<usize> {
    let bundle = ModelBundle::load(&args.model)?;
    let started = Instant::now();
    let (_, failed, pairs, frames) = decode_sentences(&bundle, &args.data, &args.continuous, false)?;
    let elapsed = started.elapsed();

    let mut totals = ErrorCounts::default();
    for (reference, hypothesis) in &pairs {
        totals.add(&align(reference, hypothesis));
    }
    let rate = word_correct_rate(&totals)?;

    let config = if args.continuous.no_transitions || bundle.transitions.is_none() {
        "direct-arcs".to_string()
    } else {
        let set = bundle.transitions.as_ref().expect("checked");
        match &set.tied {
            Some(t) => format!("{}-state transitions, tied to {}", set.n_states, t.models.len()),
            None => format!("{}-state transitions", set.n_states),
        }
    };
    let report = serde_json::json!({
        "mode": "continuous",
        "config": config,
        "utterances": pairs.len(),
        "deletions": totals.deletions,
        "insertions": totals.insertions,
        "substitutions": totals.substitutions,
        "reference_signs": totals.reference_count,
        "word_correct_rate": rate,
        "failed": failed,
        "frames": frames,
        "elapsed_ms": elapsed.as_millis() as u64,
    });
    if let Some(path) = &args.json {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }

    println!("continuous evaluation over {} sentences", pairs.len());
    println!("{:<34} {:>5} {:>5} {:>5} {:>6} {:>8}", "config", "D", "I", "S", "N", "WCR");
    println!(
        "{:<34} {:>5} {:>5} {:>5} {:>6} {:>7.2}%",
        config,
        totals.deletions,
        totals.insertions,
        totals.substitutions,
        totals.reference_count,
        rate * 100.0
    );
    println!("failed utterances: {failed}   elapsed: {} ms", elapsed.as_millis());
    Ok(failed)
}
