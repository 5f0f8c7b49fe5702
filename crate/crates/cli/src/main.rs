//! `ramm` — operator surface for the retrieval-augmented detection
//! pipeline: corpus synthesis, training, evaluation, retrieval
//! inspection, gradient checking, ablations, and hyperparameter sweeps.

mod manifest;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use ramm_core::corpus::{
    cross_check_ids, load_embeddings, save_embeddings_binary, save_embeddings_text, synth_generate,
    LabelRule, SynthConfig,
};
use ramm_core::narrative::{
    embed_narrative, extract_narrative, EndpointConfig, NarrativeClient, NarrativeRecord,
    NarrativeStore,
};
use ramm_core::retrieval::{cosine_sim, homogeneous_retrieve, inject_retrieval_noise, ScoredId};
use ramm_core::seeding::rng_for;
use ramm_core::training::{
    ablate, evaluate, grad_check, train, ClassificationPath, EvalReport, LossSelector, TrainConfig,
    Variant,
};
use ramm_core::{Corpus, Model, Split};

use manifest::RunManifest;

#[derive(Parser)]
#[command(
    name = "ramm",
    version,
    about = "Retrieval-augmented multimodal detection pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic clustered corpus plus narrative embeddings.
    Synth(SynthArgs),
    /// Train the full pipeline and write a checkpoint plus step log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Inspect domain-aware retrieval for one query id.
    Retrieve(RetrieveArgs),
    /// Verify analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Train and evaluate one ablation variant.
    Ablate(AblateArgs),
    /// Grid-sweep one hyperparameter and emit a CSV of metrics.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory (created if absent).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    clusters: usize,
    #[arg(long = "per-cluster", default_value_t = 50)]
    per_cluster: usize,
    #[arg(long, default_value_t = 4)]
    domains: usize,
    #[arg(long = "text-dim", default_value_t = 16)]
    text_dim: usize,
    #[arg(long = "image-dim", default_value_t = 16)]
    image_dim: usize,
    #[arg(long = "narrative-dim", default_value_t = 64)]
    narrative_dim: usize,
    #[arg(long = "noise-scale", default_value_t = 0.1)]
    noise_scale: f64,
    /// per-cluster | feature-threshold
    #[arg(long = "label-rule", default_value = "per-cluster")]
    label_rule: String,
    #[arg(long = "train-fraction", default_value_t = 0.8)]
    train_fraction: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Write embeddings in the binary table format instead of NDJSON.
    #[arg(long = "binary-embeddings")]
    binary_embeddings: bool,
}

/// Flags shared by every command that trains a model.
#[derive(Args, Clone, Default)]
struct TrainFlags {
    /// Corpus file (newline-delimited records).
    #[arg(long)]
    corpus: PathBuf,
    /// Narrative embedding table; when absent, narratives are embedded
    /// with the built-in offline embedder (items lacking narrative text
    /// are sent to the configured endpoint first, when one exists).
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Optional NDJSON of {"id", "narrative"} records merged over the
    /// corpus narrative texts before embedding.
    #[arg(long)]
    narratives: Option<PathBuf>,
    /// TOML config file; precedence: defaults < file < flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<u64>,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    #[arg(long = "k-in")]
    k_in: Option<usize>,
    #[arg(long = "k-out")]
    k_out: Option<usize>,
    #[arg(long)]
    lambda1: Option<f64>,
    #[arg(long)]
    lambda2: Option<f64>,
    #[arg(long)]
    lambda3: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    /// Latent dimension d_z.
    #[arg(long)]
    dz: Option<usize>,
    #[arg(long = "noise-ratio")]
    noise_ratio: Option<f64>,
    #[arg(long = "max-steps")]
    max_steps: Option<u64>,
    #[arg(long = "warmup-steps")]
    warmup_steps: Option<u64>,
    #[arg(long = "weight-decay")]
    weight_decay: Option<f64>,
    /// Let gradients flow into candidate encodings through fusion.
    #[arg(long = "fusion-backprop-neighbors")]
    fusion_backprop_neighbors: bool,
    /// Dimension used when embedding narrative texts offline.
    #[arg(long = "narrative-dim", default_value_t = 64)]
    narrative_dim: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    flags: TrainFlags,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Classification path: "demo" (demonstration-conditioned) or "solo".
    #[arg(long = "path", default_value = "demo")]
    path: String,
    /// Optional output directory for report.json and metrics.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RetrieveArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    narratives: Option<PathBuf>,
    #[arg(long = "narrative-dim", default_value_t = 64)]
    narrative_dim: usize,
    #[arg(long)]
    query: String,
    #[arg(long = "k-in", default_value_t = 3)]
    k_in: usize,
    #[arg(long = "k-out", default_value_t = 2)]
    k_out: usize,
    /// Replace this fraction of the top-ranked union with random train items.
    #[arg(long = "noise-ratio", default_value_t = 0.0)]
    noise_ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of random configurations to check.
    #[arg(long, default_value_t = 10)]
    configs: u64,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    flags: TrainFlags,
    /// Variant name, canonical ("-SRA") or slug ("no-sra").
    #[arg(long, allow_hyphen_values = true)]
    variant: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    flags: TrainFlags,
    /// One of: k-in, k-out, lambda1, lambda2, lambda3, tau, lr, noise-ratio.
    #[arg(long)]
    param: String,
    /// Comma-separated grid values.
    #[arg(long)]
    values: String,
    #[arg(long)]
    out: PathBuf,
}

/// Optional config file: `[train]` (with nested `[train.model]`) and
/// `[narrative]` for the extraction endpoint.
#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct FileConfig {
    train: Option<TrainConfig>,
    narrative: Option<EndpointConfig>,
}

fn load_file_config(path: Option<&Path>) -> Result<FileConfig> {
    match path {
        None => Ok(FileConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading config file {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config file {}", p.display()))
        }
    }
}

fn resolve_train_config(flags: &TrainFlags, file: &FileConfig) -> TrainConfig {
    let mut cfg = file.train.clone().unwrap_or_default();
    if let Some(v) = flags.seed {
        cfg.seed = v;
    }
    if let Some(v) = flags.lr {
        cfg.lr = v;
    }
    if let Some(v) = flags.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = flags.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = flags.k_in {
        cfg.k_in = v;
    }
    if let Some(v) = flags.k_out {
        cfg.k_out = v;
    }
    if let Some(v) = flags.lambda1 {
        cfg.lambda1 = v;
    }
    if let Some(v) = flags.lambda2 {
        cfg.lambda2 = v;
    }
    if let Some(v) = flags.lambda3 {
        cfg.lambda3 = v;
    }
    if let Some(v) = flags.tau {
        cfg.tau = v;
    }
    if let Some(v) = flags.dz {
        cfg.latent_dim = v;
    }
    if let Some(v) = flags.noise_ratio {
        cfg.noise_ratio = v;
    }
    if let Some(v) = flags.max_steps {
        cfg.max_steps = Some(v);
    }
    if let Some(v) = flags.warmup_steps {
        cfg.warmup_steps = v;
    }
    if let Some(v) = flags.weight_decay {
        cfg.weight_decay = v;
    }
    if flags.fusion_backprop_neighbors {
        cfg.backprop_neighbors = true;
    }
    cfg
}

fn endpoint_from_env() -> Option<EndpointConfig> {
    let endpoint = std::env::var("RAMM_NARRATIVE_ENDPOINT").ok()?;
    Some(EndpointConfig {
        endpoint,
        api_key: std::env::var("RAMM_NARRATIVE_API_KEY").ok(),
        model: std::env::var("RAMM_NARRATIVE_MODEL").unwrap_or_else(|_| "qwen3-max".into()),
        temperature: 0.7,
        max_retries: 3,
        timeout_secs: 30,
    })
}

/// Merge `--narratives` records into the corpus narrative texts.
fn merge_narratives(items: &mut [ramm_core::NewsItem], path: &Path) -> Result<()> {
    #[derive(Deserialize)]
    struct Row {
        id: String,
        narrative: String,
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut by_id: BTreeMap<String, String> = BTreeMap::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Row = serde_json::from_str(line)
            .with_context(|| format!("{}:{}", path.display(), idx + 1))?;
        by_id.insert(row.id, row.narrative);
    }
    for item in items.iter_mut() {
        if let Some(n) = by_id.get(&item.id) {
            item.narrative_text = Some(n.clone());
        }
    }
    Ok(())
}

fn load_corpus_with_narratives(flags: &TrainFlags) -> Result<Corpus> {
    let corpus = Corpus::load(&flags.corpus)?;
    match &flags.narratives {
        None => Ok(corpus),
        Some(narr) => {
            let mut items = corpus.items().to_vec();
            merge_narratives(&mut items, narr)?;
            Ok(Corpus::from_items(items)?)
        }
    }
}

/// Build the narrative store: prefer an embeddings file; otherwise embed
/// each item's narrative text offline, extracting missing narratives via
/// the configured endpoint when one is available.
fn resolve_store(
    corpus: &Corpus,
    embeddings: Option<&Path>,
    narrative_dim: usize,
    seed: u64,
    endpoint: Option<&EndpointConfig>,
) -> Result<NarrativeStore> {
    if let Some(path) = embeddings {
        let dim = detect_embedding_dim(path)?;
        let map = load_embeddings(path, dim)?;
        cross_check_ids(&map, corpus)?;
        return Ok(NarrativeStore::from_embeddings(&map)?);
    }
    let client = match endpoint {
        Some(cfg) => NarrativeClient::Http(cfg.clone()),
        None => NarrativeClient::Offline,
    };
    let mut records = Vec::with_capacity(corpus.len());
    for item in corpus.items() {
        let narrative = extract_narrative(&client, item)
            .with_context(|| format!("narrative for item {:?}", item.id))?;
        let embedding = embed_narrative(&narrative, narrative_dim, seed)?;
        records.push(NarrativeRecord {
            item_id: item.id.clone(),
            narrative_text: narrative,
            embedding,
        });
    }
    Ok(NarrativeStore::build(records)?)
}

/// Peek an embedding table to learn its dimension.
fn detect_embedding_dim(path: &Path) -> Result<usize> {
    use std::io::Read;
    let mut file = fs::File::open(path)?;
    let mut head = [0u8; 16];
    let n = file.read(&mut head)?;
    if n >= 16 && &head[..8] == ramm_core::corpus::EMBEDDING_MAGIC {
        return Ok(u32::from_le_bytes(head[12..16].try_into().unwrap()) as usize);
    }
    drop(file);
    let text = fs::read_to_string(path)?;
    let first = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .context("empty embedding table")?;
    #[derive(Deserialize)]
    struct Row {
        #[allow(dead_code)]
        id: String,
        vector: Vec<f64>,
    }
    let row: Row = serde_json::from_str(first).context("parsing first embedding row")?;
    Ok(row.vector.len())
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        other => bail!("unknown split {other:?} (expected train|test)"),
    }
}

fn write_report(report: &EvalReport, out: Option<&Path>) -> Result<()> {
    let json = serde_json::to_string_pretty(report)?;
    println!("{json}");
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), &json)?;
        let csv = format!("{}\n{}\n", EvalReport::csv_header(), report.csv_row());
        fs::write(dir.join("metrics.csv"), csv)?;
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let label_rule = match args.label_rule.as_str() {
        "per-cluster" => LabelRule::PerCluster,
        "feature-threshold" => LabelRule::FeatureThreshold,
        other => bail!("unknown label rule {other:?}"),
    };
    let config = SynthConfig {
        num_clusters: args.clusters,
        items_per_cluster: args.per_cluster,
        num_domains: args.domains,
        text_dim: args.text_dim,
        image_dim: args.image_dim,
        narrative_dim: args.narrative_dim,
        noise_scale: args.noise_scale,
        label_rule,
        seed: args.seed,
        train_fraction: args.train_fraction,
    };
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating output dir {}", args.out.display()))?;

    let corpus_path = args.out.join("corpus.ndjson");
    let emb_path = args.out.join(if args.binary_embeddings {
        "narratives.bin"
    } else {
        "narratives.ndjson"
    });
    let manifest_path = args.out.join("manifest.json");
    let mut manifest = RunManifest::start(
        "synth",
        config.seed,
        serde_json::to_value(&config)?,
        &[],
        &[corpus_path.clone(), emb_path.clone()],
    );
    manifest.write(&manifest_path)?;

    let (corpus, embeddings) = synth_generate(&config)?;
    corpus.save(&corpus_path)?;
    if args.binary_embeddings {
        save_embeddings_binary(&emb_path, &embeddings)?;
    } else {
        save_embeddings_text(&emb_path, &embeddings)?;
    }

    manifest.add_input(&corpus_path)?;
    manifest.add_input(&emb_path)?;
    manifest.finish(&manifest_path)?;
    println!(
        "wrote {} items to {} (embeddings: {})",
        corpus.len(),
        corpus_path.display(),
        emb_path.display()
    );
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let file = load_file_config(args.flags.config.as_deref())?;
    let cfg = resolve_train_config(&args.flags, &file);
    let corpus = load_corpus_with_narratives(&args.flags)?;
    let endpoint = file.narrative.clone().or_else(endpoint_from_env);
    let store = resolve_store(
        &corpus,
        args.flags.embeddings.as_deref(),
        args.flags.narrative_dim,
        cfg.seed,
        endpoint.as_ref(),
    )?;

    fs::create_dir_all(&args.out)?;
    let ckpt_path = args.out.join("checkpoint.ckpt");
    let log_path = args.out.join("steps.ndjson");
    let manifest_path = args.out.join("manifest.json");
    let mut inputs = vec![args.flags.corpus.clone()];
    if let Some(e) = &args.flags.embeddings {
        inputs.push(e.clone());
    }
    let mut manifest = RunManifest::start(
        "train",
        cfg.seed,
        serde_json::to_value(&cfg)?,
        &inputs,
        &[ckpt_path.clone(), log_path.clone()],
    );
    manifest.write(&manifest_path)?;

    let outcome = train(&corpus, &store, &cfg)?;
    outcome.model.save(&ckpt_path)?;
    ramm_core::training::write_step_log(&log_path, &outcome.log)?;
    manifest.finish(&manifest_path)?;

    let last = outcome.log.last().context("no steps ran")?;
    println!(
        "trained {} steps; final losses: alpha {:.4}, align {:.4}, recon {:.4}, compress {:.4}, total {:.4}",
        outcome.stats.steps, last.alpha, last.align, last.recon, last.compress, last.total
    );
    println!("checkpoint: {}", ckpt_path.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let model = Model::load(&args.checkpoint)?;
    let corpus = Corpus::load(&args.corpus)?;
    let split = parse_split(&args.split)?;
    let path = match args.path.as_str() {
        "demo" => ClassificationPath::Demonstration,
        "solo" => ClassificationPath::Solo,
        other => bail!("unknown classification path {other:?} (expected demo|solo)"),
    };
    let report = evaluate(&model, &corpus, split, path)?;
    write_report(&report, args.out.as_deref())
}

fn cmd_retrieve(args: &RetrieveArgs) -> Result<()> {
    let flags = TrainFlags {
        corpus: args.corpus.clone(),
        embeddings: args.embeddings.clone(),
        narratives: args.narratives.clone(),
        narrative_dim: args.narrative_dim,
        ..TrainFlags::default()
    };
    let corpus = load_corpus_with_narratives(&flags)?;
    let store = resolve_store(
        &corpus,
        args.embeddings.as_deref(),
        args.narrative_dim,
        args.seed,
        None,
    )?;
    let result = homogeneous_retrieve(&store, &corpus, &args.query, args.k_in, args.k_out)?;
    if args.noise_ratio > 0.0 {
        let mut union_ids: Vec<String> = result.union().into_iter().map(|s| s.id).collect();
        let mut rng = rng_for(args.seed, "retrieval-noise");
        inject_retrieval_noise(
            &mut union_ids,
            &corpus,
            &args.query,
            args.noise_ratio,
            &mut rng,
        );
        let query_emb = store.embedding(&args.query).expect("query in store");
        let rescored: Vec<ScoredId> = union_ids
            .into_iter()
            .map(|id| {
                let score = store
                    .embedding(&id)
                    .and_then(|e| cosine_sim(query_emb, e).ok())
                    .unwrap_or(f64::NAN);
                ScoredId { id, score }
            })
            .collect();
        let noised = serde_json::json!({
            "query_id": result.query_id,
            "in_domain": result.in_domain,
            "out_domain": result.out_domain,
            "noised_union": rescored,
        });
        println!("{}", serde_json::to_string_pretty(&noised)?);
    } else {
        println!("{}", serde_json::to_string_pretty(&result)?);
    }
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<()> {
    let mut all_passed = true;
    for i in 0..args.configs {
        let seed = args.seed.wrapping_add(i);
        let report = grad_check(seed, LossSelector::Total, args.tol)?;
        println!("config seed {seed}:");
        print!("{}", report.render_table());
        if !report.passed() {
            all_passed = false;
        }
    }
    if !all_passed {
        bail!("gradient check failed (tolerance {})", args.tol);
    }
    println!(
        "all {} configurations within tolerance {}",
        args.configs, args.tol
    );
    Ok(())
}

fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let variant = Variant::from_str(&args.variant)?;
    let file = load_file_config(args.flags.config.as_deref())?;
    let cfg = resolve_train_config(&args.flags, &file);
    let corpus = load_corpus_with_narratives(&args.flags)?;
    let endpoint = file.narrative.clone().or_else(endpoint_from_env);
    let store = resolve_store(
        &corpus,
        args.flags.embeddings.as_deref(),
        args.flags.narrative_dim,
        cfg.seed,
        endpoint.as_ref(),
    )?;

    fs::create_dir_all(&args.out)?;
    let manifest_path = args.out.join("manifest.json");
    let mut manifest = RunManifest::start(
        "ablate",
        cfg.seed,
        serde_json::json!({ "variant": variant.to_string(), "train": &cfg }),
        &[args.flags.corpus.clone()],
        &[args.out.join("report.json")],
    );
    manifest.write(&manifest_path)?;

    let run = ablate(&corpus, &store, &cfg, variant)?;
    write_report(&run.report, Some(&args.out))?;
    manifest.finish(&manifest_path)?;
    Ok(())
}

#[derive(Clone, Copy)]
enum SweepParam {
    KIn,
    KOut,
    Lambda1,
    Lambda2,
    Lambda3,
    Tau,
    Lr,
    NoiseRatio,
}

impl SweepParam {
    fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "k-in" | "k_in" => SweepParam::KIn,
            "k-out" | "k_out" => SweepParam::KOut,
            "lambda1" => SweepParam::Lambda1,
            "lambda2" => SweepParam::Lambda2,
            "lambda3" => SweepParam::Lambda3,
            "tau" => SweepParam::Tau,
            "lr" => SweepParam::Lr,
            "noise-ratio" | "noise_ratio" => SweepParam::NoiseRatio,
            other => bail!("unknown sweep parameter {other:?}"),
        })
    }

    fn apply(self, cfg: &mut TrainConfig, value: f64) -> Result<()> {
        match self {
            SweepParam::KIn => cfg.k_in = as_count(value)?,
            SweepParam::KOut => cfg.k_out = as_count(value)?,
            SweepParam::Lambda1 => cfg.lambda1 = value,
            SweepParam::Lambda2 => cfg.lambda2 = value,
            SweepParam::Lambda3 => cfg.lambda3 = value,
            SweepParam::Tau => cfg.tau = value,
            SweepParam::Lr => cfg.lr = value,
            SweepParam::NoiseRatio => cfg.noise_ratio = value,
        }
        Ok(())
    }
}

fn as_count(value: f64) -> Result<usize> {
    if value < 0.0 || value.fract() != 0.0 {
        bail!("expected a non-negative integer grid value, got {value}");
    }
    Ok(value as usize)
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let param = SweepParam::parse(&args.param)?;
    let values: Vec<f64> = args
        .values
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .with_context(|| format!("grid value {v:?}"))
        })
        .collect::<Result<_>>()?;
    if values.is_empty() {
        bail!("empty value grid");
    }

    let file = load_file_config(args.flags.config.as_deref())?;
    let base_cfg = resolve_train_config(&args.flags, &file);
    let corpus = load_corpus_with_narratives(&args.flags)?;
    let endpoint = file.narrative.clone().or_else(endpoint_from_env);
    let store = resolve_store(
        &corpus,
        args.flags.embeddings.as_deref(),
        args.flags.narrative_dim,
        base_cfg.seed,
        endpoint.as_ref(),
    )?;

    fs::create_dir_all(&args.out)?;
    let csv_path = args.out.join("sweep.csv");
    let manifest_path = args.out.join("manifest.json");
    let mut manifest = RunManifest::start(
        "sweep",
        base_cfg.seed,
        serde_json::json!({ "param": args.param, "values": values, "train": &base_cfg }),
        &[args.flags.corpus.clone()],
        &[csv_path.clone()],
    );
    manifest.write(&manifest_path)?;

    let mut csv = format!("param,value,{}\n", EvalReport::csv_header());
    for &value in &values {
        let mut cfg = base_cfg.clone();
        param.apply(&mut cfg, value)?;
        let outcome = train(&corpus, &store, &cfg)?;
        let report = evaluate(
            &outcome.model,
            &corpus,
            Split::Test,
            ClassificationPath::Demonstration,
        )?;
        csv.push_str(&format!("{},{},{}\n", args.param, value, report.csv_row()));
    }
    fs::write(&csv_path, &csv)?;
    manifest.finish(&manifest_path)?;
    print!("{csv}");
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Retrieve(args) => cmd_retrieve(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
