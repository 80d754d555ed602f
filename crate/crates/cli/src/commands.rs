use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use clap::Args;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use rgen_core::bridge::{BridgeClient, BridgeEndpoint};
use rgen_core::corpus::{
    build_dataset as extract_dataset, build_generative_negatives, extract_pairs, load_corpus,
    read_dataset, tokenize, write_dataset, CorpusConfig, CorpusFormat, Document,
    GenerativeNegativeConfig, TrainingTriple,
};
use rgen_core::decode::truncate_to_sentence;
use rgen_core::encoder::{encoder_vocab, EncoderParams};
use rgen_core::eval::{
    benchmark, format_table, generative_instances, inbook_instances, mauve_style,
    mine_hard_negatives, prefix_overlap, read_instances, rep_score, retrieval_groups,
    retrieval_recall, standard_grid, suffix_id_accuracy, write_grid_csv, write_instances,
    BenchResult, EvalReport, GridRow, MauveConfig,
};
use rgen_core::rng;
use rgen_core::scorers::{Scorer, ScorerSpec};
use rgen_core::synth::{synth_corpus as generate_corpus, write_corpus_jsonl, SynthConfig};
use rgen_core::trainer::{
    train, write_loss_curve, LossConfig, NegativeMode, Optimizer, TrainConfig,
};
use rgen_core::{
    rankgen_search, DecodeConfig, Error, Generator, NGramConfig, NGramModel, SamplingStrategy,
};

use crate::config::{usage, CliError, CliResult, ConfigFile, Settings};
use crate::{Format, Global};

/// Per-run state: resolved globals, resolved settings, outputs and manifest extras.
pub struct Ctx {
    pub seed: u64,
    pub jobs: Option<usize>,
    pub format: Format,
    manifest_dir: PathBuf,
    command: &'static str,
    pub settings: Settings,
    outputs: Vec<PathBuf>,
    extra: Map<String, Value>,
}

fn global_value<T: serde::de::DeserializeOwned>(
    file: &ConfigFile,
    key: &str,
) -> CliResult<Option<T>> {
    file.global(key)
        .map(|v| {
            v.clone()
                .try_into()
                .map_err(|e| usage(format!("config key `{key}`: {e}")))
        })
        .transpose()
}

impl Ctx {
    pub fn new(g: &Global, file: &ConfigFile, command: &'static str) -> CliResult<Self> {
        let jobs = match g.jobs {
            Some(j) => Some(j),
            None => global_value(file, "jobs")?,
        };
        if jobs == Some(0) {
            return Err(usage("--jobs must be >= 1"));
        }
        Ok(Ctx {
            seed: g
                .seed
                .map_or_else(|| global_value(file, "seed"), |s| Ok(Some(s)))?
                .unwrap_or(0),
            jobs,
            format: g
                .format
                .map_or_else(|| global_value(file, "format"), |f| Ok(Some(f)))?
                .unwrap_or(Format::Table),
            manifest_dir: g
                .manifest_dir
                .clone()
                .map_or_else(|| global_value(file, "manifest-dir"), |d| Ok(Some(d)))?
                .unwrap_or_else(|| PathBuf::from(".")),
            command,
            settings: Settings::new(file.section(command)),
            outputs: Vec::new(),
            extra: Map::new(),
        })
    }

    fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    fn note(&mut self, key: &str, v: impl Serialize) {
        self.extra
            .insert(key.into(), serde_json::to_value(v).unwrap_or(Value::Null));
    }

    /// `<first output>.manifest.json`, or `<manifest-dir>/rgen-<command>.manifest.json`.
    pub fn write_manifest(self) -> CliResult<()> {
        let path = match self.outputs.first() {
            Some(p) => {
                let mut s = p.clone().into_os_string();
                s.push(".manifest.json");
                PathBuf::from(s)
            }
            None => self
                .manifest_dir
                .join(format!("rgen-{}.manifest.json", self.command)),
        };
        let manifest = json!({
            "command": self.command,
            "argv": std::env::args().collect::<Vec<_>>(),
            "seed": self.seed,
            "jobs": self.jobs.unwrap_or_else(rayon::current_num_threads),
            "config": self.settings.into_resolved(),
            "versions": { "rgen": env!("CARGO_PKG_VERSION"), "rgen-core": rgen_core::VERSION },
            "outputs": self.outputs,
            "results": self.extra,
        });
        write_text(&path, &(serde_json::to_string_pretty(&manifest)? + "\n"))
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => fs::create_dir_all(dir)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display()))),
        None => Ok(()),
    }
}

fn parse<T: FromStr<Err = Error>>(flag: &str, s: &str) -> CliResult<T> {
    s.parse()
        .map_err(|e: Error| usage(format!("--{flag}: {e}")))
}

fn load_scorer(spec: &str) -> CliResult<Arc<dyn Scorer>> {
    Ok(parse::<ScorerSpec>("scorer", spec)?.load()?)
}

/// Checks every spec before anything is loaded, so a typo is a usage error.
fn parse_scorers(specs: &[String]) -> CliResult<Vec<ScorerSpec>> {
    specs.iter().map(|s| parse("scorer", s)).collect()
}

/// `bridge:URL` or an n-gram checkpoint path.
fn load_generator(spec: &str) -> CliResult<Arc<dyn Generator>> {
    Ok(match spec.strip_prefix("bridge:") {
        Some(url) => Arc::new(BridgeClient::new(BridgeEndpoint::new(url))?),
        None => Arc::new(NGramModel::load(Path::new(spec))?),
    })
}

/// One prefix per non-empty line.
fn read_prefixes(path: &Path) -> CliResult<Vec<Vec<String>>> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let prefixes: Vec<Vec<String>> = text
        .lines()
        .map(|l| tokenize(l).0)
        .filter(|t| !t.is_empty())
        .collect();
    if prefixes.is_empty() {
        return Err(CliError::Runtime(format!(
            "{}: no prefixes",
            path.display()
        )));
    }
    Ok(prefixes)
}

fn parse_usize_list(flag: &str, s: &str) -> CliResult<Vec<usize>> {
    s.split(',')
        .map(|x| {
            x.trim()
                .parse()
                .map_err(|_| usage(format!("--{flag}: `{x}` is not a count")))
        })
        .collect()
}

fn emit_reports(ctx: &mut Ctx, reports: &[EvalReport], out: Option<PathBuf>) -> CliResult<()> {
    match ctx.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(reports)?),
        Format::Table => print!("{}", format_table(reports)),
    }
    ctx.note("reports", reports);
    if let Some(out) = out {
        write_text(&out, &(serde_json::to_string_pretty(reports)? + "\n"))?;
        ctx.output(&out);
    }
    Ok(())
}

// ---------------------------------------------------------------------------------------

#[derive(Args, Debug, Default)]
pub struct CorpusArgs {
    /// Input corpus (required).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// `jsonl` or `plain_dir` [default: jsonl].
    #[arg(long)]
    pub corpus_format: Option<String>,
    /// Prefix length in words [default: 256].
    #[arg(long)]
    pub prefix_len: Option<usize>,
    /// Minimum continuation length in words [default: 10].
    #[arg(long)]
    pub cont_min: Option<usize>,
    /// Maximum continuation length in words [default: 128].
    #[arg(long)]
    pub cont_max: Option<usize>,
}

fn corpus_config(ctx: &mut Ctx, a: &CorpusArgs) -> CliResult<CorpusConfig> {
    let d = CorpusConfig::default();
    let cfg = CorpusConfig {
        prefix_len_words: ctx
            .settings
            .or("prefix-len", a.prefix_len, d.prefix_len_words)?,
        cont_min_words: ctx.settings.or("cont-min", a.cont_min, d.cont_min_words)?,
        cont_max_words: ctx.settings.or("cont-max", a.cont_max, d.cont_max_words)?,
        seed: ctx.seed,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn load_docs(ctx: &mut Ctx, a: &CorpusArgs) -> CliResult<Vec<Document>> {
    let path: PathBuf = ctx.settings.req("corpus", a.corpus.clone())?;
    let format = ctx
        .settings
        .or("corpus-format", a.corpus_format.clone(), "jsonl".into())?;
    let format: CorpusFormat = parse("corpus-format", &format)?;
    let docs = load_corpus(&path, format)?;
    log::info!("loaded {} documents from {}", docs.len(), path.display());
    Ok(docs)
}

// ---------------------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output JSONL (required).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of documents [default: 200].
    #[arg(long)]
    pub num_docs: Option<usize>,
}

pub fn synth_corpus(a: SynthArgs, ctx: &mut Ctx) -> CliResult<()> {
    let out: PathBuf = ctx.settings.req("out", a.out)?;
    let cfg = SynthConfig {
        num_docs: ctx
            .settings
            .or("num-docs", a.num_docs, SynthConfig::default().num_docs)?,
        seed: ctx.seed,
        ..Default::default()
    };
    let docs = generate_corpus(&cfg)?;
    ensure_parent(&out)?;
    write_corpus_jsonl(&out, &docs)?;
    ctx.output(&out);
    ctx.note("documents", docs.len());
    Ok(())
}

#[derive(Args, Debug)]
pub struct BuildDatasetArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Output JSONL of triples (required).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Generator for generative negatives: an n-gram checkpoint or `bridge:URL` [default: none].
    #[arg(long)]
    pub generator: Option<String>,
    /// Sampling strategy of the negatives [default: nucleus:0.9].
    #[arg(long)]
    pub gen_strategy: Option<String>,
    /// Shortest generated negative in words [default: 10].
    #[arg(long)]
    pub gen_min_words: Option<usize>,
    /// Longest generated negative in words [default: 128].
    #[arg(long)]
    pub gen_max_words: Option<usize>,
}

pub fn build_dataset(a: BuildDatasetArgs, ctx: &mut Ctx) -> CliResult<()> {
    let out: PathBuf = ctx.settings.req("out", a.out)?;
    let cfg = corpus_config(ctx, &a.corpus)?;
    let docs = load_docs(ctx, &a.corpus)?;
    let generator = ctx.settings.opt("generator", a.generator)?;
    let mut triples = extract_dataset(&docs, &cfg);
    if let Some(spec) = generator {
        let d = GenerativeNegativeConfig::default();
        let strategy = ctx
            .settings
            .or("gen-strategy", a.gen_strategy, d.strategy.to_string())?;
        let gcfg = GenerativeNegativeConfig {
            min_words: ctx
                .settings
                .or("gen-min-words", a.gen_min_words, d.min_words)?,
            max_words: ctx
                .settings
                .or("gen-max-words", a.gen_max_words, d.max_words)?,
            strategy: parse("gen-strategy", &strategy)?,
        };
        let generator = load_generator(&spec)?;
        triples = build_generative_negatives(
            triples,
            generator.as_ref(),
            &gcfg,
            rng::derive(ctx.seed, 1),
        )?;
        ctx.note("seed_attested", generator.seed_attested());
    }
    ensure_parent(&out)?;
    write_dataset(&out, &triples)?;
    ctx.output(&out);
    ctx.note("triples", triples.len());
    log::info!("wrote {} triples to {}", triples.len(), out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainLmArgs {
    /// Training corpus (this or --dataset is required).
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// `jsonl` or `plain_dir` [default: jsonl].
    #[arg(long)]
    pub corpus_format: Option<String>,
    /// Train on the prefix + continuation text of a triple dataset instead.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Output checkpoint (required).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// N-gram order [default: 3].
    #[arg(long)]
    pub order: Option<usize>,
    /// Comma-separated interpolation weights, lowest order first
    /// [default: 0.1,0.3,0.6 for order 3, otherwise uniform].
    #[arg(long)]
    pub lambdas: Option<String>,
    /// Additive smoothing of the unigram level [default: 0.1].
    #[arg(long)]
    pub alpha: Option<f64>,
}

pub fn train_lm(a: TrainLmArgs, ctx: &mut Ctx) -> CliResult<()> {
    let out: PathBuf = ctx.settings.req("out", a.out)?;
    let docs = match ctx.settings.opt("dataset", a.dataset)? {
        Some(path) => read_dataset(&path)?
            .into_iter()
            .enumerate()
            .map(|(i, t)| {
                Document::from_tokens(
                    format!("{}-{i}", t.doc_id),
                    [t.prefix, t.continuation].concat(),
                )
            })
            .collect(),
        None => {
            let corpus = CorpusArgs {
                corpus: a.corpus,
                corpus_format: a.corpus_format,
                ..Default::default()
            };
            load_docs(ctx, &corpus)?
        }
    };
    let d = NGramConfig::default();
    let order = ctx.settings.or("order", a.order, d.order)?;
    let lambdas = match ctx.settings.opt("lambdas", a.lambdas)? {
        Some(s) => s
            .split(',')
            .map(|x| {
                x.trim()
                    .parse()
                    .map_err(|_| usage(format!("--lambdas: `{x}` is not a number")))
            })
            .collect::<CliResult<Vec<f64>>>()?,
        None if order == d.order => d.lambdas.clone(),
        None => vec![1.0 / order as f64; order],
    };
    let cfg = NGramConfig {
        order,
        lambdas,
        alpha: ctx.settings.or("alpha", a.alpha, d.alpha)?,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let model = rgen_core::train_ngram(&docs, &cfg)?;
    ensure_parent(&out)?;
    model.save(&out)?;
    ctx.output(&out);
    ctx.note("vocab_size", model.vocab().len());
    Ok(())
}

#[derive(Args, Debug)]
pub struct TrainEncoderArgs {
    /// Triple dataset (required).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Output checkpoint (required).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Token embedding width [default: 64].
    #[arg(long)]
    pub d_emb: Option<usize>,
    /// Output embedding width [default: 64].
    #[arg(long)]
    pub dim: Option<usize>,
    /// Documents' worth of pairs per step [default: 32].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Optimizer steps [default: 1000].
    #[arg(long)]
    pub steps: Option<usize>,
    /// Learning rate [default: 0.01].
    #[arg(long)]
    pub lr: Option<f64>,
    /// `adam` or `sgd` [default: adam].
    #[arg(long)]
    pub optimizer: Option<String>,
    /// Negatives: `inbook`, `generative` or `both` [default: both].
    #[arg(long)]
    pub mode: Option<String>,
    /// Leave each item's own generation out of its denominator.
    #[arg(long)]
    pub exclude_own_generation: bool,
    /// Also write the per-step loss as CSV here.
    #[arg(long)]
    pub loss_curve: Option<PathBuf>,
}

pub fn train_encoder(a: TrainEncoderArgs, ctx: &mut Ctx) -> CliResult<()> {
    let dataset_path: PathBuf = ctx.settings.req("dataset", a.dataset)?;
    let out: PathBuf = ctx.settings.req("out", a.out)?;
    let d = TrainConfig::default();
    let lr = ctx.settings.or("lr", a.lr, d.optimizer.learning_rate())?;
    let optimizer = match ctx
        .settings
        .or("optimizer", a.optimizer, "adam".into())?
        .as_str()
    {
        "adam" => Optimizer::adam(lr),
        "sgd" => Optimizer::Sgd { learning_rate: lr },
        other => return Err(usage(format!("--optimizer: unknown optimizer `{other}`"))),
    };
    let mode: NegativeMode = parse("mode", &ctx.settings.or("mode", a.mode, "both".into())?)?;
    let exclude = ctx.settings.or(
        "exclude-own-generation",
        a.exclude_own_generation.then_some(true),
        false,
    )?;
    let cfg = TrainConfig {
        batch_size: ctx.settings.or("batch-size", a.batch_size, d.batch_size)?,
        steps: ctx.settings.or("steps", a.steps, d.steps)?,
        optimizer,
        loss: LossConfig {
            mode,
            include_own_generation: !exclude,
        },
        seed: ctx.seed,
    };
    let d_emb = ctx
        .settings
        .or("d-emb", a.d_emb, rgen_core::encoder::DEFAULT_DIM)?;
    let dim = ctx
        .settings
        .or("dim", a.dim, rgen_core::encoder::DEFAULT_DIM)?;
    let loss_curve = ctx.settings.opt("loss-curve", a.loss_curve)?;

    let dataset = read_dataset(&dataset_path)?;
    let vocab = encoder_vocab(dataset.iter().flat_map(|t: &TrainingTriple| {
        [
            Some(&t.prefix),
            Some(&t.continuation),
            t.generation.as_ref(),
        ]
        .into_iter()
        .flatten()
        .map(Vec::as_slice)
    }));
    let init = EncoderParams::<f32>::random(vocab, d_emb, dim, rng::derive(ctx.seed, 1));
    let (params, curve) = train(init, &dataset, &cfg)?;
    ensure_parent(&out)?;
    params.save(&out)?;
    ctx.output(&out);
    if let Some(path) = loss_curve {
        ensure_parent(&path)?;
        write_loss_curve(&path, &curve)?;
        ctx.output(&path);
    }
    let tail = &curve[curve.len().saturating_sub(10)..];
    ctx.note(
        "final_loss",
        tail.iter().map(|p| p.loss).sum::<f64>() / tail.len().max(1) as f64,
    );
    Ok(())
}

// ---------------------------------------------------------------------------------------

#[derive(Args, Debug, Default)]
pub struct SearchArgs {
    /// Generator: an n-gram checkpoint or `bridge:URL` (required).
    #[arg(long)]
    pub generator: Option<String>,
    /// Scorer, e.g. `rankgen:enc.ckpt`, `avg_cll:lm.ckpt`, `overlap`, `random:1` (required).
    #[arg(long)]
    pub scorer: Option<String>,
    /// Tokens generated per round [default: 20, or --max-length if smaller].
    #[arg(long = "L")]
    pub rerank_length: Option<usize>,
    /// Beams kept after each round [default: 2].
    #[arg(long = "B")]
    pub beam_size: Option<usize>,
    /// Samples drawn per beam and round [default: 10].
    #[arg(long = "N")]
    pub samples_per_beam: Option<usize>,
    /// Maximum continuation length in tokens [default: 128].
    #[arg(long)]
    pub max_length: Option<usize>,
    /// `greedy`, `ancestral`, `nucleus[:p]`, `top_k[:k]` or `typical[:tau]` [default: nucleus:0.9].
    #[arg(long)]
    pub strategy: Option<String>,
}

fn decode_config(ctx: &mut Ctx, a: &SearchArgs) -> CliResult<DecodeConfig> {
    let d = DecodeConfig::default();
    let strategy = ctx
        .settings
        .or("strategy", a.strategy.clone(), d.strategy.to_string())?;
    let max_length = ctx.settings.or("max-length", a.max_length, d.max_length)?;
    let cfg = DecodeConfig {
        rerank_length: ctx
            .settings
            .or("L", a.rerank_length, d.rerank_length.min(max_length))?,
        beam_size: ctx.settings.or("B", a.beam_size, d.beam_size)?,
        samples_per_beam: ctx
            .settings
            .or("N", a.samples_per_beam, d.samples_per_beam)?,
        max_length,
        strategy: parse("strategy", &strategy)?,
        seed: ctx.seed,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    Ok(cfg)
}

fn search_parts(
    ctx: &mut Ctx,
    generator: Option<String>,
    scorer: Option<String>,
) -> CliResult<(Arc<dyn Generator>, Arc<dyn Scorer>)> {
    let g: String = ctx.settings.req("generator", generator)?;
    let s: String = ctx.settings.req("scorer", scorer)?;
    let spec: ScorerSpec = parse("scorer", &s)?;
    Ok((load_generator(&g)?, spec.load()?))
}

#[derive(Args, Debug)]
pub struct DecodeArgs {
    /// One prefix per line (required).
    #[arg(long)]
    pub prefix_file: Option<PathBuf>,
    #[command(flatten)]
    pub search: SearchArgs,
    /// Output JSONL (required).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DecodedContinuation {
    pub tokens: Vec<String>,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DecodedPrefix {
    pub prefix: String,
    pub continuations: Vec<DecodedContinuation>,
}

pub fn decode(a: DecodeArgs, ctx: &mut Ctx) -> CliResult<()> {
    let prefix_file: PathBuf = ctx.settings.req("prefix-file", a.prefix_file)?;
    let out: PathBuf = ctx.settings.req("out", a.out)?;
    let cfg = decode_config(ctx, &a.search)?;
    let (generator, scorer) =
        search_parts(ctx, a.search.generator.clone(), a.search.scorer.clone())?;
    let prefixes = read_prefixes(&prefix_file)?;
    // Prefix i decodes with seed derive(seed, i), independent of scheduling.
    let decoded: Vec<DecodedPrefix> = prefixes
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let beams = rankgen_search(
                p,
                generator.as_ref(),
                scorer.as_ref(),
                &DecodeConfig {
                    seed: rng::derive(cfg.seed, i as u64),
                    ..cfg.clone()
                },
            )?;
            Ok(DecodedPrefix {
                prefix: p.join(" "),
                continuations: beams
                    .into_iter()
                    .enumerate()
                    .map(|(r, b)| DecodedContinuation {
                        tokens: b.tokens,
                        score: b.score,
                        rank: r + 1,
                    })
                    .collect(),
            })
        })
        .collect::<rgen_core::Result<_>>()?;
    ensure_parent(&out)?;
    let file =
        fs::File::create(&out).map_err(|e| CliError::Runtime(format!("{}: {e}", out.display())))?;
    let mut w = BufWriter::new(file);
    for d in &decoded {
        serde_json::to_writer(&mut w, d)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    ctx.output(&out);
    ctx.note("prefixes", decoded.len());
    ctx.note("seed_attested", generator.seed_attested());
    if !generator.seed_attested() {
        log::warn!(
            "the generator does not attest seed determinism; outputs may not be reproducible"
        );
    }
    Ok(())
}

fn read_decoded(path: &Path) -> CliResult<Vec<DecodedPrefix>> {
    let file =
        fs::File::open(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| {
                CliError::Runtime(format!("{}: line {}: {e}", path.display(), i + 1))
            })?,
        );
    }
    Ok(out)
}

// ---------------------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct EvalSuffixIdArgs {
    /// Pre-built instances (JSONL); otherwise built from --dataset or --corpus.
    #[arg(long)]
    pub instances: Option<PathBuf>,
    /// Dataset with generations: gold vs generated 2-way instances.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// In-document negatives per instance when building from --corpus [default: 1].
    #[arg(long)]
    pub negatives: Option<usize>,
    /// Scorer (repeatable) [default: overlap].
    #[arg(long)]
    pub scorer: Vec<String>,
    /// Save the instances used.
    #[arg(long)]
    pub write_instances: Option<PathBuf>,
    /// Write the reports as JSON here as well.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn eval_suffix_id(a: EvalSuffixIdArgs, ctx: &mut Ctx) -> CliResult<()> {
    let scorers = ctx.settings.list("scorer", a.scorer, &["overlap"])?;
    let specs = parse_scorers(&scorers)?;
    let instances = if let Some(path) = ctx.settings.opt("instances", a.instances)? {
        read_instances(&path)?
    } else if let Some(path) = ctx.settings.opt("dataset", a.dataset)? {
        generative_instances(&read_dataset(&path)?)
    } else {
        let cfg = corpus_config(ctx, &a.corpus)?;
        let docs = load_docs(ctx, &a.corpus)?;
        let negatives = ctx.settings.or("negatives", a.negatives, 1)?;
        inbook_instances(&docs, &cfg, negatives, rng::derive(ctx.seed, 2))
    };
    if let Some(path) = ctx.settings.opt("write-instances", a.write_instances)? {
        ensure_parent(&path)?;
        write_instances(&path, &instances)?;
        ctx.output(&path);
    }
    let out = ctx.settings.opt("out", a.out)?;
    let reports = scorers
        .iter()
        .zip(specs)
        .map(|(spec, parsed)| {
            let scorer = parsed.load()?;
            let mut r = suffix_id_accuracy(&instances, scorer.as_ref())?;
            r.metric = format!("suffix_id[{}]", scorer.name());
            Ok(r.with_config(json!({ "scorer": spec })))
        })
        .collect::<CliResult<Vec<_>>>()?;
    emit_reports(ctx, &reports, out)
}

#[derive(Args, Debug)]
pub struct MineHardArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Scorer ranking the candidate windows (required).
    #[arg(long)]
    pub scorer: Option<String>,
    /// Window budget in words [default: --cont-max].
    #[arg(long)]
    pub window_words: Option<usize>,
    /// Negatives kept per prefix [default: 10].
    #[arg(long)]
    pub count: Option<usize>,
    /// Output JSONL (required).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn mine_hard(a: MineHardArgs, ctx: &mut Ctx) -> CliResult<()> {
    let out: PathBuf = ctx.settings.req("out", a.out)?;
    let cfg = corpus_config(ctx, &a.corpus)?;
    let spec: String = ctx.settings.req("scorer", a.scorer)?;
    let window = ctx
        .settings
        .or("window-words", a.window_words, cfg.cont_max_words)?;
    let count = ctx.settings.or("count", a.count, 10)?;
    let scorer = load_scorer(&spec)?;
    let docs = load_docs(ctx, &a.corpus)?;
    let per_doc: Vec<Vec<Value>> = docs
        .par_iter()
        .map(|doc| {
            let mut rows = Vec::new();
            for pair in extract_pairs(doc, &cfg) {
                let prefix = doc.slice(pair.prefix);
                match mine_hard_negatives(
                    doc,
                    prefix,
                    pair.continuation,
                    scorer.as_ref(),
                    window,
                    count,
                ) {
                    Ok(neg) => rows.push(json!({
                        "doc_id": doc.doc_id,
                        "prefix": pair.prefix,
                        "gold": pair.continuation,
                        "negatives": neg,
                    })),
                    Err(Error::InsufficientCandidates { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
            Ok(rows)
        })
        .collect::<rgen_core::Result<_>>()?;
    let rows: Vec<Value> = per_doc.into_iter().flatten().collect();
    let mut body = String::new();
    for r in &rows {
        body.push_str(&serde_json::to_string(r)?);
        body.push('\n');
    }
    write_text(&out, &body)?;
    ctx.output(&out);
    ctx.note("prefixes", rows.len());
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalRetrievalArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    /// Scorer (repeatable) [default: overlap].
    #[arg(long)]
    pub scorer: Vec<String>,
    /// Comma-separated cutoffs [default: 1,3,5,10,50].
    #[arg(long)]
    pub ks: Option<String>,
    /// Write the reports as JSON here as well.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn eval_retrieval(a: EvalRetrievalArgs, ctx: &mut Ctx) -> CliResult<()> {
    let cfg = corpus_config(ctx, &a.corpus)?;
    let scorers = ctx.settings.list("scorer", a.scorer, &["overlap"])?;
    let specs = parse_scorers(&scorers)?;
    let ks = ctx.settings.or("ks", a.ks, "1,3,5,10,50".into())?;
    let ks = parse_usize_list("ks", &ks)?;
    let out = ctx.settings.opt("out", a.out)?;
    let docs = load_docs(ctx, &a.corpus)?;
    let groups = retrieval_groups(&docs, &cfg);
    let mut reports = Vec::new();
    for (spec, parsed) in scorers.iter().zip(specs) {
        let scorer = parsed.load()?;
        for r in retrieval_recall(&groups, scorer.as_ref(), &ks)? {
            reports.push(r.with_config(json!({ "scorer": spec })));
        }
    }
    emit_reports(ctx, &reports, out)
}

#[derive(Args, Debug)]
pub struct EvalGenArgs {
    /// Output of `decode`; the rank-1 continuation of each prefix is evaluated (required).
    #[arg(long)]
    pub generations: Option<PathBuf>,
    /// Triple dataset whose continuations are the human references, matched by position.
    #[arg(long)]
    pub references: Option<PathBuf>,
    /// Encoder checkpoint embedding texts for MAUVE (required with --references).
    #[arg(long)]
    pub embedder: Option<PathBuf>,
    /// Repetition look-back window [default: 20].
    #[arg(long)]
    pub rep_window: Option<usize>,
    /// Cut every text to whole sentences within this many words [default: no cut].
    #[arg(long)]
    pub max_words: Option<usize>,
    /// k-means clusters for MAUVE [default: pooled texts / 10].
    #[arg(long)]
    pub clusters: Option<usize>,
    /// MAUVE scaling constant [default: 5].
    #[arg(long)]
    pub mauve_c: Option<f64>,
    /// Write the reports as JSON here as well.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn eval_gen(a: EvalGenArgs, ctx: &mut Ctx) -> CliResult<()> {
    let generations: PathBuf = ctx.settings.req("generations", a.generations)?;
    let references = ctx.settings.opt("references", a.references)?;
    let embedder = ctx.settings.opt("embedder", a.embedder)?;
    let window = ctx.settings.or(
        "rep-window",
        a.rep_window,
        rgen_core::eval::DEFAULT_REP_WINDOW,
    )?;
    let max_words = ctx.settings.opt("max-words", a.max_words)?;
    let clusters = ctx.settings.opt("clusters", a.clusters)?;
    let c = ctx
        .settings
        .or("mauve-c", a.mauve_c, MauveConfig::default().c)?;
    let out = ctx.settings.opt("out", a.out)?;
    let cut = |t: Vec<String>| match max_words {
        Some(w) => truncate_to_sentence(&t, w),
        None => t,
    };

    let decoded = read_decoded(&generations)?;
    let pairs: Vec<(Vec<String>, Vec<String>)> = decoded
        .into_iter()
        .map(|d| {
            let top = d
                .continuations
                .into_iter()
                .next()
                .map(|c| c.tokens)
                .unwrap_or_default();
            (tokenize(&d.prefix).0, cut(top))
        })
        .collect();
    let model: Vec<Vec<String>> = pairs
        .iter()
        .map(|p| p.1.clone())
        .filter(|t| !t.is_empty())
        .collect();
    let mut reports = vec![
        rep_score(&model, window)?,
        prefix_overlap(
            &pairs
                .iter()
                .filter(|p| !p.1.is_empty())
                .cloned()
                .collect::<Vec<_>>(),
        )?,
    ];
    if let Some(path) = references {
        let embedder_path = embedder.ok_or_else(|| {
            usage("missing required argument --embedder (needed by --references)")
        })?;
        let enc = EncoderParams::<f32>::load(&embedder_path)?;
        let human: Vec<Vec<String>> = read_dataset(&path)?
            .into_iter()
            .take(pairs.len())
            .map(|t| cut(t.continuation))
            .filter(|t| !t.is_empty())
            .collect();
        let cfg = MauveConfig {
            n_clusters: clusters,
            c,
            seed: ctx.seed,
            ..Default::default()
        };
        let m = mauve_style(&human, &model, &enc, &cfg)?;
        reports.push(EvalReport::new("mauve", m.score, human.len() + model.len()));
    }
    emit_reports(ctx, &reports, out)
}

// ---------------------------------------------------------------------------------------

#[derive(Args, Debug)]
pub struct GridSearchArgs {
    /// One prefix per line (required).
    #[arg(long)]
    pub prefix_file: Option<PathBuf>,
    /// Generator: an n-gram checkpoint or `bridge:URL` (required).
    #[arg(long)]
    pub generator: Option<String>,
    /// Scorer used for reranking (required).
    #[arg(long)]
    pub scorer: Option<String>,
    /// Maximum continuation length in tokens [default: 128].
    #[arg(long)]
    pub max_length: Option<usize>,
    /// Sampling strategy [default: nucleus:0.9].
    #[arg(long)]
    pub strategy: Option<String>,
    /// Metric over the top beams: `score` (mean scorer score) or `rep` [default: score].
    #[arg(long)]
    pub metric: Option<String>,
    /// Output CSV (required).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn print_grid(format: Format, rows: &[GridRow]) -> CliResult<()> {
    match format {
        Format::Json => println!("{}", serde_json::to_string_pretty(rows)?),
        Format::Table => {
            println!("{:<18}  {:>10}  {:>14}", "config", "metric", "s/generation");
            for r in rows {
                println!(
                    "{:<18}  {:>10.4}  {:>14.6}",
                    r.point.to_string(),
                    r.metric,
                    r.seconds_per_generation
                );
            }
        }
    }
    Ok(())
}

pub fn grid_search(a: GridSearchArgs, ctx: &mut Ctx) -> CliResult<()> {
    let prefix_file: PathBuf = ctx.settings.req("prefix-file", a.prefix_file)?;
    let out: PathBuf = ctx.settings.req("out", a.out)?;
    let d = DecodeConfig::default();
    let max_length = ctx.settings.or("max-length", a.max_length, d.max_length)?;
    let strategy = ctx
        .settings
        .or("strategy", a.strategy, d.strategy.to_string())?;
    let strategy: SamplingStrategy = parse("strategy", &strategy)?;
    if max_length == 0 {
        return Err(usage("--max-length must be >= 1"));
    }
    let metric_name = ctx.settings.or("metric", a.metric, "score".into())?;
    let (generator, scorer) = search_parts(ctx, a.generator, a.scorer)?;
    let prefixes = read_prefixes(&prefix_file)?;
    let score_metric = |p: &[Vec<String>], outs: &[Vec<String>]| -> rgen_core::Result<f64> {
        let mut total = 0.0;
        for (a, b) in p.iter().zip(outs) {
            if !b.is_empty() {
                total += scorer.score(a, b)?;
            }
        }
        Ok(total / p.len() as f64)
    };
    let rep_metric = |_: &[Vec<String>], outs: &[Vec<String>]| -> rgen_core::Result<f64> {
        let kept: Vec<Vec<String>> = outs.iter().filter(|o| !o.is_empty()).cloned().collect();
        Ok(rep_score(&kept, rgen_core::eval::DEFAULT_REP_WINDOW)?.value)
    };
    let metric: &rgen_core::eval::GridMetric<'_> = match metric_name.as_str() {
        "score" => &score_metric,
        "rep" => &rep_metric,
        other => return Err(usage(format!("--metric: unknown metric `{other}`"))),
    };
    let rows = rgen_core::eval::grid_search(
        &prefixes,
        generator.as_ref(),
        scorer.as_ref(),
        &standard_grid(),
        max_length,
        &strategy,
        ctx.seed,
        metric,
    )?;
    ensure_parent(&out)?;
    write_grid_csv(&out, &rows)?;
    ctx.output(&out);
    print_grid(ctx.format, &rows)?;
    ctx.note("rows", rows.len());
    Ok(())
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// One prefix per line (required).
    #[arg(long)]
    pub prefix_file: Option<PathBuf>,
    #[command(flatten)]
    pub search: SearchArgs,
    /// Passes over the prefixes [default: 3].
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Write the results as JSON here as well.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn bench(a: BenchArgs, ctx: &mut Ctx) -> CliResult<()> {
    let prefix_file: PathBuf = ctx.settings.req("prefix-file", a.prefix_file)?;
    let cfg = decode_config(ctx, &a.search)?;
    let iterations = ctx.settings.or("iterations", a.iterations, 3)?;
    let out = ctx.settings.opt("out", a.out)?;
    let (generator, scorer) =
        search_parts(ctx, a.search.generator.clone(), a.search.scorer.clone())?;
    let prefixes = read_prefixes(&prefix_file)?;
    let n = iterations * prefixes.len();
    let mut i = 0;
    let decode = benchmark("decode (generations)", n, || {
        let p = &prefixes[i % prefixes.len()];
        i += 1;
        rankgen_search(p, generator.as_ref(), scorer.as_ref(), &cfg).map(drop)
    })?;
    let mut i = 0;
    let sample = benchmark("sample (generations)", n, || {
        let p = &prefixes[i % prefixes.len()];
        i += 1;
        generator
            .generate(p, cfg.max_length, 1, &cfg.strategy, i as u64)
            .map(drop)
    })?;
    let mut i = 0;
    let score = benchmark("score (pairs)", n, || {
        let p = &prefixes[i % prefixes.len()];
        i += 1;
        scorer.score(p, p).map(drop)
    })?;
    let results: Vec<BenchResult> = vec![decode, sample, score];
    match ctx.format {
        Format::Json => println!("{}", serde_json::to_string_pretty(&results)?),
        Format::Table => {
            println!(
                "{:<22}  {:>10}  {:>12}  {:>12}",
                "benchmark", "iterations", "seconds", "per second"
            );
            for r in &results {
                println!(
                    "{:<22}  {:>10}  {:>12.4}  {:>12.2}",
                    r.name, r.iterations, r.total_seconds, r.per_second
                );
            }
        }
    }
    ctx.note("benchmarks", &results);
    if let Some(out) = out {
        write_text(&out, &(serde_json::to_string_pretty(&results)? + "\n"))?;
        ctx.output(&out);
    }
    Ok(())
}
