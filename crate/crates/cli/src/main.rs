//! `fairprune` command-line front end.
//!
//! Exit status: 0 on success, 1 on a runtime error (one `error: ...` line on
//! stderr), 2 on a usage error. `FAIRPRUNE_THREADS` caps the worker pool.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use fairprune::calibkit::{
    build_fair_input, build_fairness_testset, build_mixed_input, build_output_conditioned,
    build_single_sided, read_collections, read_pool, resolve_pool, write_collections, Corpus,
    Domain, InputCollection, SetKind,
};
use fairprune::fairmetrics::{
    aggregate_rows, evaluate_summary, match_labels, max_gap, Channel, DEFAULT_TAU_FAIR,
};
use fairprune::iofmt::{read_corpus, read_jsonl, read_tensor, reports_to_json, write_tensor, Report};
use fairprune::masking::Granularity;
use fairprune::pipeline::{layer_score_inputs, prune_network, run_sweep, score_layers, SweepConfig};
use fairprune::rater::{fleiss_kappa, rate, ranked_json, read_comparisons, read_votes, DEFAULT_INITIAL_RATING, DEFAULT_K_FACTOR};
use fairprune::refnet::{mse_loss, CalibrationBatch, Network, NormOrder};
use fairprune::scoring::{score_stats, Method, DEFAULT_ALPHA};
use fairprune::textmetrics::{rouge_f1_triplet, split_sentences};

const THREADS_ENV: &str = "FAIRPRUNE_THREADS";

#[derive(Parser)]
#[command(name = "fairprune", version, about = "Pruning scores, sparsity sweeps and fairness evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one score tensor per layer and print per-layer statistics.
    Score(ScoreArgs),
    /// Prune a network at one sparsity ratio.
    Prune(PruneArgs),
    /// Run a method × ratio sweep from a JSON config.
    Sweep(SweepArgs),
    /// Build a calibration set or a fairness test set.
    CalibBuild(CalibArgs),
    /// Second-order SPD, UER, SOF and BUR over a set of summaries.
    Fairness(FairnessArgs),
    /// ROUGE-1/2/L F1 for candidate/reference pairs.
    Rouge(RougeArgs),
    /// Elo ratings from pairwise comparisons.
    Elo(EloArgs),
    /// Fleiss' kappa from per-item votes.
    Kappa(KappaArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum GranularityArg {
    PerLayer,
    PerRow,
}

impl From<GranularityArg> for Granularity {
    fn from(g: GranularityArg) -> Self {
        match g {
            GranularityArg::PerLayer => Granularity::PerLayer,
            GranularityArg::PerRow => Granularity::PerRow,
        }
    }
}

#[derive(Args)]
struct ModelArgs {
    /// Network directory (manifest.json + layer tensors).
    #[arg(long)]
    net: PathBuf,
    /// Calibration batch directory (inputs.prnt, targets.prnt).
    #[arg(long)]
    batch: PathBuf,
    #[arg(long)]
    method: Method,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    /// Norm order for gradient aggregation over samples (1 or 2).
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u32).range(1..=2))]
    norm_p: u32,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Output directory for `layer<i>.prnt` score tensors.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PruneArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    ratio: f64,
    #[arg(long, value_enum, default_value = "per-layer")]
    granularity: GranularityArg,
    /// Output directory for the pruned network.
    #[arg(long)]
    out: PathBuf,
    /// Optional directory for `mask<i>.prnt` tensors (1 = kept, 0 = pruned).
    #[arg(long)]
    masks_out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated method list, overrides the config.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// Comma-separated ratio list, overrides the config.
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    granularity: Option<GranularityArg>,
    #[arg(long)]
    net: Option<PathBuf>,
    #[arg(long)]
    batch: Option<PathBuf>,
    /// Report file; stdout when neither this nor the config names one.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum BuildKind {
    SingleSided,
    FairInput,
    MixedInput,
    BiasedOutput,
    FairOutput,
    MixedOutput,
    Testset,
}

#[derive(Args)]
struct CalibArgs {
    /// Labeled corpus (JSONL documents).
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    domain: Domain,
    #[arg(long, value_enum)]
    kind: BuildKind,
    /// Label for single-sided sets.
    #[arg(long)]
    side: Option<String>,
    /// Pool of collections with unpruned-model SPD, for output-conditioned kinds.
    #[arg(long)]
    pool: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    tau_spd: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FairnessArgs {
    /// Summaries, one `{id, collection_id, [method], [sparsity], text}` per line.
    #[arg(long)]
    summaries: PathBuf,
    /// Source collections as written by `calib-build`.
    #[arg(long)]
    sources: PathBuf,
    /// Directory of `<summary id>.prnt` similarity matrices; repeatable.
    #[arg(long)]
    channel: Vec<PathBuf>,
    /// Add the built-in unigram-overlap channel (the default when no channel is given).
    #[arg(long)]
    ngram: bool,
    #[arg(long, default_value_t = DEFAULT_TAU_FAIR)]
    tau_fair: f64,
    /// SPD is `p(value_a) − p(value_b)`. Defaults to the later/earlier of the two sorted labels.
    #[arg(long)]
    value_a: Option<String>,
    #[arg(long)]
    value_b: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RougeArgs {
    /// Pairs, one `{id, [method], [sparsity], candidate, reference}` per line.
    #[arg(long)]
    pairs: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EloArgs {
    #[arg(long)]
    comparisons: PathBuf,
    #[arg(long, default_value_t = DEFAULT_INITIAL_RATING)]
    initial: f64,
    #[arg(long, default_value_t = DEFAULT_K_FACTOR)]
    k: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct KappaArgs {
    #[arg(long)]
    votes: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s
}

fn load_model(m: &ModelArgs) -> Result<(Network, CalibrationBatch)> {
    let net = Network::load(&m.net).with_context(|| format!("loading network {}", m.net.display()))?;
    let batch =
        CalibrationBatch::load(&m.batch).with_context(|| format!("loading batch {}", m.batch.display()))?;
    Ok((net, batch))
}

#[derive(Serialize)]
struct LayerStats {
    layer: usize,
    min: f64,
    mean: f64,
    max: f64,
}

fn cmd_score(args: ScoreArgs) -> Result<()> {
    let (net, batch) = load_model(&args.model)?;
    let inputs = layer_score_inputs(&net, &batch, args.model.alpha, NormOrder::from_p(args.model.norm_p)?)?;
    let scores = score_layers(args.model.method, &inputs)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let mut stats = Vec::with_capacity(scores.len());
    for (i, s) in scores.iter().enumerate() {
        write_tensor(args.out.join(format!("layer{i}.prnt")), s.values())?;
        let (min, mean, max) = score_stats(s);
        stats.push(LayerStats { layer: i, min, mean, max });
    }
    emit(None, &to_json(&stats))
}

fn cmd_prune(args: PruneArgs) -> Result<()> {
    let (net, batch) = load_model(&args.model)?;
    let inputs = layer_score_inputs(&net, &batch, args.model.alpha, NormOrder::from_p(args.model.norm_p)?)?;
    let (pruned, masks) =
        prune_network(&net, &inputs, args.model.method, args.ratio, args.granularity.into())?;
    pruned.save(&args.out)?;
    if let Some(dir) = &args.masks_out {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (i, m) in masks.iter().enumerate() {
            write_tensor(dir.join(format!("mask{i}.prnt")), &m.to_tensor())?;
        }
    }
    let total: usize = masks.iter().map(|m| m.keep().len()).sum();
    let removed: usize = masks.iter().map(|m| m.pruned_count()).sum();
    let report = Report::new(args.model.method.name(), args.ratio)
        .with("loss", mse_loss(&pruned, &batch)?)
        .with("baseline_loss", mse_loss(&net, &batch)?)
        .with("achieved_sparsity", removed as f64 / total.max(1) as f64);
    emit(None, &reports_to_json(&[report]))
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let mut cfg = SweepConfig::load(&args.config)
        .with_context(|| format!("loading config {}", args.config.display()))?;
    if let Some(m) = args.methods {
        cfg.methods = m;
    }
    if let Some(r) = args.ratios {
        cfg.ratios = r;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(g) = args.granularity {
        cfg.granularity = g.into();
    }
    if let Some(n) = args.net {
        cfg.net = n;
    }
    if let Some(b) = args.batch {
        cfg.batch = Some(b);
    }
    if let Some(o) = args.out {
        cfg.out = Some(o);
    }
    let outcome = run_sweep(&cfg)?;
    emit(cfg.out.as_deref(), &reports_to_json(&outcome.reports))
}

#[derive(Serialize)]
struct BuildSummary<'a> {
    kind: &'a str,
    domain: Domain,
    collections: usize,
    seed: u64,
}

fn cmd_calib_build(args: CalibArgs) -> Result<()> {
    let docs = read_corpus(&args.corpus)?;
    let corpus = Corpus::new(docs)?;
    let (name, collections, kind) = match args.kind {
        BuildKind::Testset => (
            "testset",
            build_fairness_testset(&corpus, args.domain, args.seed)?,
            None,
        ),
        other => {
            let set = match other {
                BuildKind::SingleSided => {
                    let side = args
                        .side
                        .as_deref()
                        .ok_or_else(|| anyhow!("single-sided sets need --side"))?;
                    build_single_sided(&corpus, args.domain, side, args.seed)?
                }
                BuildKind::FairInput => build_fair_input(&corpus, args.domain, args.seed)?,
                BuildKind::MixedInput => build_mixed_input(&corpus, args.domain, args.seed)?,
                _ => {
                    let kind = match other {
                        BuildKind::BiasedOutput => SetKind::BiasedOutput,
                        BuildKind::FairOutput => SetKind::FairOutput,
                        _ => SetKind::MixedOutput,
                    };
                    let path = args
                        .pool
                        .as_ref()
                        .ok_or_else(|| anyhow!("{kind} sets need --pool"))?;
                    let pool = resolve_pool(&read_pool(path)?, &corpus, args.domain)?;
                    build_output_conditioned(&pool, kind, args.tau_spd, args.seed)?
                }
            };
            (set.kind.name(), set.collections, Some(set.kind))
        }
    };
    write_collections(&args.out, &collections, kind)?;
    let summary = BuildSummary {
        kind: name,
        domain: args.domain,
        collections: collections.len(),
        seed: args.seed,
    };
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn default_method() -> String {
    "summary".into()
}

#[derive(Deserialize)]
struct SummaryLine {
    id: String,
    collection_id: String,
    #[serde(default = "default_method")]
    method: String,
    #[serde(default)]
    sparsity: f64,
    text: String,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    id: &'a str,
    collection_id: &'a str,
    method: &'a str,
    sparsity: f64,
    spd2: f64,
    uer: f64,
    sof: f64,
    max_gap: f64,
    unfair: bool,
}

#[derive(Serialize)]
struct FairnessOutput<'a> {
    value_a: &'a str,
    value_b: &'a str,
    tau_fair: f64,
    summaries: Vec<SummaryRow<'a>>,
    reports: Vec<Report>,
}

fn cmd_fairness(args: FairnessArgs) -> Result<()> {
    let sources: Vec<InputCollection> = read_collections(&args.sources)?;
    let by_id: HashMap<&str, &InputCollection> = sources.iter().map(|c| (c.id(), c)).collect();
    let mut values: Vec<String> = sources
        .iter()
        .flat_map(|c| c.labels().map(str::to_string))
        .collect();
    values.sort();
    values.dedup();
    let (value_a, value_b) = match (args.value_a, args.value_b) {
        (Some(a), Some(b)) => (a, b),
        (None, None) if values.len() == 2 => (values[1].clone(), values[0].clone()),
        (None, None) => bail!("sources carry {} labels {values:?}; pass --value-a and --value-b", values.len()),
        _ => bail!("--value-a and --value-b must be given together"),
    };
    for v in [&value_a, &value_b] {
        if !values.contains(v) {
            values.push(v.clone());
        }
    }

    let summaries: Vec<SummaryLine> = read_jsonl(&args.summaries)?;
    let mut rows = Vec::with_capacity(summaries.len());
    let mut flat = Vec::with_capacity(summaries.len());
    for s in &summaries {
        let source = by_id
            .get(s.collection_id.as_str())
            .ok_or_else(|| anyhow!("summary `{}`: unknown collection `{}`", s.id, s.collection_id))?;
        let mut channels = Vec::with_capacity(args.channel.len() + 1);
        for dir in &args.channel {
            let path = dir.join(format!("{}.prnt", s.id));
            channels.push(Channel::Matrix(
                read_tensor(&path).with_context(|| format!("summary `{}`", s.id))?,
            ));
        }
        if args.ngram || channels.is_empty() {
            channels.push(Channel::NGram);
        }
        let sentences = split_sentences(&s.text);
        let labeled = match_labels(&sentences, source, &channels, values.clone())
            .with_context(|| format!("summary `{}`", s.id))?;
        let row = evaluate_summary(&labeled, &value_a, &value_b, args.tau_fair)
            .with_context(|| format!("summary `{}`", s.id))?;
        let gap = max_gap(&labeled.source_distribution(), &labeled.distribution())?;
        rows.push(SummaryRow {
            id: &s.id,
            collection_id: &s.collection_id,
            method: &s.method,
            sparsity: s.sparsity,
            spd2: row.spd2,
            uer: row.uer,
            sof: row.sof,
            max_gap: gap,
            unfair: row.bur > 0.0,
        });
        flat.push((s.method.clone(), s.sparsity, row));
    }
    let output = FairnessOutput {
        value_a: &value_a,
        value_b: &value_b,
        tau_fair: args.tau_fair,
        summaries: rows,
        reports: aggregate_rows(&flat),
    };
    emit(args.out.as_deref(), &to_json(&output))
}

#[derive(Deserialize)]
struct PairLine {
    id: String,
    #[serde(default = "default_method")]
    method: String,
    #[serde(default)]
    sparsity: f64,
    candidate: String,
    reference: String,
}

#[derive(Serialize)]
struct PairRow<'a> {
    id: &'a str,
    method: &'a str,
    sparsity: f64,
    rouge1: f64,
    rouge2: f64,
    rouge_l: f64,
}

#[derive(Serialize)]
struct RougeOutput<'a> {
    pairs: Vec<PairRow<'a>>,
    reports: Vec<Report>,
}

fn cmd_rouge(args: RougeArgs) -> Result<()> {
    let pairs: Vec<PairLine> = read_jsonl(&args.pairs)?;
    let rows: Vec<PairRow> = pairs
        .iter()
        .map(|p| {
            let (r1, r2, rl) = rouge_f1_triplet(&p.candidate, &p.reference);
            PairRow {
                id: &p.id,
                method: &p.method,
                sparsity: p.sparsity,
                rouge1: r1,
                rouge2: r2,
                rouge_l: rl,
            }
        })
        .collect();
    let mut groups: BTreeMap<(&str, u64), Vec<&PairRow>> = BTreeMap::new();
    for r in &rows {
        groups.entry((r.method, r.sparsity.to_bits())).or_default().push(r);
    }
    let mut reports: Vec<Report> = groups
        .into_iter()
        .map(|((method, bits), v)| {
            let n = v.len() as f64;
            Report::new(method, f64::from_bits(bits))
                .with("rouge1", v.iter().map(|r| r.rouge1).sum::<f64>() / n)
                .with("rouge2", v.iter().map(|r| r.rouge2).sum::<f64>() / n)
                .with("rouge_l", v.iter().map(|r| r.rouge_l).sum::<f64>() / n)
                .with("n_pairs", n)
        })
        .collect();
    reports.sort_by(|a, b| a.method.cmp(&b.method).then(a.sparsity.total_cmp(&b.sparsity)));
    emit(args.out.as_deref(), &to_json(&RougeOutput { pairs: rows, reports }))
}

fn cmd_elo(args: EloArgs) -> Result<()> {
    let records = read_comparisons(&args.comparisons)?;
    let table = rate(&records, args.initial, args.k)?;
    emit(args.out.as_deref(), &ranked_json(&table))
}

#[derive(Serialize)]
struct KappaOutput {
    kappa: f64,
    items: usize,
    raters: u32,
}

fn cmd_kappa(args: KappaArgs) -> Result<()> {
    let (counts, raters) = read_votes(&args.votes)?;
    let kappa = fleiss_kappa(&counts, raters)?;
    let out = KappaOutput {
        kappa,
        items: counts.len(),
        raters,
    };
    emit(args.out.as_deref(), &to_json(&out))
}

fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| anyhow!("{THREADS_ENV} must be a positive integer, got `{raw}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Score(a) => cmd_score(a),
        Command::Prune(a) => cmd_prune(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::CalibBuild(a) => cmd_calib_build(a),
        Command::Fairness(a) => cmd_fairness(a),
        Command::Rouge(a) => cmd_rouge(a),
        Command::Elo(a) => cmd_elo(a),
        Command::Kappa(a) => cmd_kappa(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
