//! Command-line front end for `crossmap`.

use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crossmap::embedio::save_dictionary;
use crossmap::evalharness::{write_profile_csv, export_profile, RunRecord, SUCCESS_THRESHOLD};
use crossmap::pipeline::Timings;
use crossmap::{
    evaluate, generate_synthetic, load_dictionary, load_embeddings, multi_run, run_pipeline,
    run_synthetic, save_embeddings, Embedding, MappingPair, PipelineConfig, Retrieval, RunReport,
    SeedDictionary, SynthSpec, WordPairList,
};

/// Environment variable holding the default worker thread count.
pub const THREADS_ENV: &str = "CROSSMAP_THREADS";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failed(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Failed(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<crossmap::Error> for CliError {
    fn from(e: crossmap::Error) -> Self {
        match e {
            crossmap::Error::InvalidConfig(m) => CliError::Usage(m),
            other => CliError::Failed(other.into()),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Failed(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "crossmap", version, about = "Unsupervised cross-lingual embedding mapping")]
pub struct Cli {
    /// Worker threads (defaults to one per core).
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Learn a mapping and write both embedding files in the shared space.
    Map(MapArgs),
    /// Score mapped embeddings against a gold dictionary.
    Eval(EvalArgs),
    /// Run the planted-isometry benchmark.
    Synth(SynthArgs),
    /// Export similarity-distribution profiles as CSV.
    Profile(ProfileArgs),
}

/// Where self-learning starts when the unsupervised initialization is off.
#[derive(Clone, Debug, PartialEq)]
pub enum SeedSource {
    Random,
    File(PathBuf),
}

impl FromStr for SeedSource {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(if s == "random" {
            SeedSource::Random
        } else {
            SeedSource::File(PathBuf::from(s))
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RetrievalArg {
    Csls,
    Nn,
}

impl From<RetrievalArg> for Retrieval {
    fn from(r: RetrievalArg) -> Self {
        match r {
            RetrievalArg::Csls => Retrieval::Csls,
            RetrievalArg::Nn => Retrieval::NearestNeighbor,
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct PipelineFlags {
    /// JSON file with pipeline settings; explicit flags take precedence.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Initial keep probability of stochastic induction [default: 0.1]
    #[arg(long)]
    pub keep_prob: Option<f64>,
    /// Factor applied to the keep probability on each stall [default: 2]
    #[arg(long)]
    pub keep_prob_growth: Option<f64>,
    /// Minimum objective gain that resets the stall counter [default: 1e-6]
    #[arg(long)]
    pub stall_tolerance: Option<f64>,
    /// Iterations without gain before the keep probability grows [default: 50]
    #[arg(long)]
    pub stall_patience: Option<usize>,
    /// Most frequent words used during self-learning [default: 20000]
    #[arg(long)]
    pub cutoff: Option<usize>,
    /// Neighborhood size of CSLS [default: 10]
    #[arg(long)]
    pub csls_k: Option<usize>,
    /// Most frequent words used by the unsupervised initialization [default: 4000]
    #[arg(long)]
    pub init_cutoff: Option<usize>,
    /// Hard cap on self-learning iterations [default: 10000]
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Random seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Rows of the similarity matrix materialized at once [default: 4096]
    #[arg(long)]
    pub block_rows: Option<usize>,
    /// Deterministic induction (keep probability 1 throughout).
    #[arg(long)]
    pub no_stochastic: bool,
    /// Nearest-neighbor retrieval instead of CSLS, in initialization and self-learning.
    #[arg(long)]
    pub no_csls: bool,
    /// Induce the dictionary in the source-to-target direction only.
    #[arg(long)]
    pub no_bidirectional: bool,
    /// Skip the final symmetric re-weighting.
    #[arg(long)]
    pub no_reweight: bool,
    /// Start from --seed-dict instead of the unsupervised initialization.
    #[arg(long, requires = "seed_dict")]
    pub no_unsup_init: bool,
    /// Seed dictionary file, or `random` for a random dictionary.
    #[arg(long, value_name = "PATH|random", requires = "no_unsup_init")]
    pub seed_dict: Option<SeedSource>,
}

impl PipelineFlags {
    /// Built-in defaults, overlaid by the config file, overlaid by flags.
    pub fn resolve(&self) -> CliResult<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str::<PipelineConfig>(&text).map_err(|e| {
                    CliError::Usage(format!("invalid config {}: {e}", path.display()))
                })?
            }
            None => PipelineConfig::default(),
        };
        let sl = &mut cfg.self_learn;
        set(&mut sl.keep_prob_initial, self.keep_prob);
        set(&mut sl.keep_prob_growth, self.keep_prob_growth);
        set(&mut sl.stall_tolerance, self.stall_tolerance);
        set(&mut sl.stall_patience, self.stall_patience);
        set(&mut sl.vocab_cutoff, self.cutoff);
        set(&mut sl.max_iterations, self.max_iterations);
        set(&mut sl.seed, self.seed);
        set(&mut sl.block_rows, self.block_rows);
        set(&mut sl.csls_k, self.csls_k);
        set(&mut cfg.init.csls_k, self.csls_k);
        set(&mut cfg.init.vocab_cutoff_init, self.init_cutoff);
        if self.no_stochastic {
            cfg.self_learn.stochastic = false;
        }
        if self.no_csls {
            cfg.self_learn.retrieval = Retrieval::NearestNeighbor;
            cfg.init.use_csls = false;
        }
        if self.no_bidirectional {
            cfg.self_learn.bidirectional = false;
            cfg.init.bidirectional = false;
        }
        if self.no_reweight {
            cfg.reweight = false;
        }
        cfg.init.validate()?;
        cfg.self_learn.validate()?;
        Ok(cfg)
    }

    fn seed_label(&self) -> String {
        match &self.seed_dict {
            None => "unsupervised".into(),
            Some(SeedSource::Random) => "random".into(),
            Some(SeedSource::File(p)) => p.display().to_string(),
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

#[derive(Args, Debug)]
pub struct MapArgs {
    /// Source embeddings (word2vec text format).
    #[arg(long)]
    pub src: PathBuf,
    /// Target embeddings (word2vec text format).
    #[arg(long)]
    pub tgt: PathBuf,
    /// Output path for the mapped source embeddings.
    #[arg(long)]
    pub src_out: PathBuf,
    /// Output path for the mapped target embeddings.
    #[arg(long)]
    pub tgt_out: PathBuf,
    /// Output path for the JSON run record.
    #[arg(long)]
    pub record: Option<PathBuf>,
    /// Output path for the final induced dictionary.
    #[arg(long)]
    pub dict_out: Option<PathBuf>,
    /// Read at most this many words from each embedding file.
    #[arg(long)]
    pub max_vocab: Option<usize>,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Mapped source embeddings; repeat to evaluate several runs.
    #[arg(long, required = true)]
    pub src: Vec<PathBuf>,
    /// Mapped target embeddings, one per --src.
    #[arg(long, required = true)]
    pub tgt: Vec<PathBuf>,
    /// Gold dictionary; give one for all pairs or one per --src.
    #[arg(long, required = true)]
    pub dict: Vec<PathBuf>,
    #[arg(long, value_enum, default_value = "csls")]
    pub retrieval: RetrievalArg,
    /// Read at most this many words from each embedding file.
    #[arg(long)]
    pub max_vocab: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    /// Standard deviation of the noise added to the rotated copy.
    #[arg(long, default_value_t = 0.02)]
    pub sigma: f64,
    #[arg(long, default_value_t = 2000)]
    pub n_words: usize,
    #[arg(long, default_value_t = 50)]
    pub dim: usize,
    /// Decay rate of the per-dimension scales of the source space.
    #[arg(long, default_value_t = 0.0)]
    pub decay: f64,
    /// Keep the target vocabulary in source order.
    #[arg(long)]
    pub no_permute: bool,
    #[arg(long, value_enum, default_value = "csls")]
    pub retrieval: RetrievalArg,
    /// Write the first instance (src.vec, tgt.vec, gold.txt) to this directory.
    #[arg(long, value_name = "DIR")]
    pub emit: Option<PathBuf>,
    /// Write one JSON record per run to this file.
    #[arg(long, value_name = "PATH")]
    pub json_out: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineFlags,
}

#[derive(Args, Debug)]
pub struct ProfileArgs {
    /// Embeddings (word2vec text format).
    #[arg(long)]
    pub emb: PathBuf,
    /// Comma-separated words to export.
    #[arg(long, value_delimiter = ',')]
    pub words: Vec<String>,
    /// File with one word per line to export.
    #[arg(long)]
    pub words_file: Option<PathBuf>,
    /// Number of most frequent words spanning the profile.
    #[arg(long, default_value_t = 4000)]
    pub cutoff: usize,
    /// CSV destination; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub max_vocab: Option<usize>,
}

/// Run record written by `map`. Only `timings` varies between identical runs.
#[derive(Debug, Serialize)]
pub struct MapRecord<'a> {
    pub seed: u64,
    pub seed_dictionary: String,
    pub config: &'a PipelineConfig,
    pub seed_entries: usize,
    pub dictionary_entries: usize,
    pub iterations: usize,
    pub final_keep_prob: f64,
    pub hit_iteration_cap: bool,
    pub final_objective: f64,
    pub objective_trace: &'a [f64],
    pub timings: &'a Timings,
}

pub fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("thread count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Map(a) => run_map(&a),
        Command::Eval(a) => run_eval(&a),
        Command::Synth(a) => run_synth(&a),
        Command::Profile(a) => run_profile(&a),
    }
}

fn read_embeddings(path: &Path, max_vocab: Option<usize>) -> CliResult<Embedding> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(load_embeddings(BufReader::new(file), max_vocab)
        .with_context(|| format!("reading {}", path.display()))?)
}

fn read_dictionary(path: &Path) -> CliResult<WordPairList> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(load_dictionary(BufReader::new(file))
        .with_context(|| format!("reading {}", path.display()))?)
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_embeddings(emb: &Embedding, path: &Path) -> CliResult<()> {
    let mut w = create(path)?;
    save_embeddings(emb, &mut w).with_context(|| format!("writing {}", path.display()))?;
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn run_map(args: &MapArgs) -> CliResult<()> {
    let cfg = args.pipeline.resolve()?;
    let x = read_embeddings(&args.src, args.max_vocab)?;
    let z = read_embeddings(&args.tgt, args.max_vocab)?;
    let seed = match &args.pipeline.seed_dict {
        None => SeedDictionary::Unsupervised,
        Some(SeedSource::Random) => SeedDictionary::Random,
        Some(SeedSource::File(p)) => SeedDictionary::Supplied(read_dictionary(p)?),
    };

    let out = run_pipeline(&x, &z, &seed, &cfg)?;
    let (xm, zm) = out.mapped_embeddings()?;
    write_embeddings(&xm, &args.src_out)?;
    write_embeddings(&zm, &args.tgt_out)?;

    let dictionary = &out.self_learning.dictionary;
    if let Some(path) = &args.dict_out {
        let pairs = WordPairList::new(dictionary.entries().iter().map(|&(i, j)| {
            (out.source.words()[i].clone(), out.target.words()[j].clone())
        }));
        let mut w = create(path)?;
        save_dictionary(&pairs, &mut w).with_context(|| format!("writing {}", path.display()))?;
    }

    let state = &out.self_learning.state;
    let record = MapRecord {
        seed: cfg.self_learn.seed,
        seed_dictionary: args.pipeline.seed_label(),
        config: &cfg,
        seed_entries: out.seed_entries,
        dictionary_entries: dictionary.len(),
        iterations: state.iterations,
        final_keep_prob: state.keep_prob,
        hit_iteration_cap: state.hit_iteration_cap,
        final_objective: state.final_objective,
        objective_trace: &state.trace,
        timings: &out.timings,
    };
    if let Some(path) = &args.record {
        let mut w = create(path)?;
        serde_json::to_writer_pretty(&mut w, &record).context("serializing run record")?;
        writeln!(w).and_then(|_| w.flush()).with_context(|| format!("writing {}", path.display()))?;
    }
    println!(
        "mapped {} source and {} target words in {} iterations ({:.1}s)",
        xm.len(),
        zm.len(),
        state.iterations,
        out.timings.total_seconds
    );
    Ok(())
}

pub fn run_eval(args: &EvalArgs) -> CliResult<()> {
    if args.src.len() != args.tgt.len() {
        return Err(CliError::Usage(format!(
            "{} --src files but {} --tgt files",
            args.src.len(),
            args.tgt.len()
        )));
    }
    if args.dict.len() != 1 && args.dict.len() != args.src.len() {
        return Err(CliError::Usage(
            "give one --dict for all pairs or one per --src".into(),
        ));
    }
    let mut records = Vec::new();
    let mut shared_dict = None;
    for (run, (src, tgt)) in args.src.iter().zip(&args.tgt).enumerate() {
        let gold = match (args.dict.len(), &shared_dict) {
            (1, Some(d)) => Clone::clone(d),
            (1, None) => {
                let d = read_dictionary(&args.dict[0])?;
                shared_dict = Some(d.clone());
                d
            }
            _ => read_dictionary(&args.dict[run])?,
        };
        let x = read_embeddings(src, args.max_vocab)?;
        let z = read_embeddings(tgt, args.max_vocab)?;
        if x.dim() != z.dim() {
            return Err(CliError::Failed(anyhow::anyhow!(
                "{} has dimension {} but {} has {}",
                src.display(),
                x.dim(),
                tgt.display(),
                z.dim()
            )));
        }
        let start = Instant::now();
        let result = evaluate(&x, &z, &MappingPair::identity(x.dim()), &gold, args.retrieval.into())?;
        let correct = result.outcomes.iter().filter(|o| o.correct).count();
        let total = result.covered + result.oov;
        println!(
            "{}: P@1 {:.2}% ({}/{}), coverage {}/{} ({:.2}%)",
            src.display(),
            100.0 * result.accuracy,
            correct,
            result.covered,
            result.covered,
            total,
            100.0 * result.covered as f64 / total as f64
        );
        records.push(RunRecord {
            run,
            seed: 0,
            accuracy: result.accuracy,
            success: result.accuracy > SUCCESS_THRESHOLD,
            iterations: 0,
            objective_trace: Vec::new(),
            error: None,
            wall_seconds: start.elapsed().as_secs_f64(),
        });
    }
    if records.len() > 1 {
        print!("{}", RunReport::from_runs(records).table("eval"));
    }
    Ok(())
}

pub fn run_synth(args: &SynthArgs) -> CliResult<()> {
    let cfg = args.pipeline.resolve()?;
    let mode = match &args.pipeline.seed_dict {
        None => SeedDictionary::Unsupervised,
        Some(SeedSource::Random) => SeedDictionary::Random,
        Some(SeedSource::File(_)) => {
            return Err(CliError::Usage(
                "synth only accepts `--seed-dict random`".into(),
            ))
        }
    };
    if !(args.sigma >= 0.0) {
        return Err(CliError::Usage("--sigma must be nonnegative".into()));
    }
    let spec = SynthSpec {
        n_words: args.n_words,
        dim: args.dim,
        noise_sigma: args.sigma,
        permute: !args.no_permute,
        spectrum_decay: args.decay,
        seed: cfg.self_learn.seed,
    };
    if let Some(dir) = &args.emit {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let inst = generate_synthetic(&spec)?;
        write_embeddings(&inst.source, &dir.join("src.vec"))?;
        write_embeddings(&inst.target, &dir.join("tgt.vec"))?;
        let path = dir.join("gold.txt");
        let mut w = create(&path)?;
        save_dictionary(&inst.gold, &mut w).with_context(|| format!("writing {}", path.display()))?;
    }

    let retrieval = args.retrieval.into();
    let report = multi_run(args.runs, cfg.self_learn.seed, |seed| {
        run_synthetic(&spec, seed, &mode, &cfg, retrieval)
    })?;
    for r in &report.runs {
        match &r.error {
            None => println!(
                "run {} seed {}: P@1 {:.2}% in {} iterations ({:.1}s)",
                r.run,
                r.seed,
                100.0 * r.accuracy,
                r.iterations,
                r.wall_seconds
            ),
            Some(e) => println!("run {} seed {}: failed: {e}", r.run, r.seed),
        }
    }
    print!("{}", report.table(&format!("synthetic sigma={}", args.sigma)));
    if let Some(path) = &args.json_out {
        let mut w = create(path)?;
        report
            .write_json_lines(&mut w)
            .with_context(|| format!("writing {}", path.display()))?;
        w.flush().with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

pub fn run_profile(args: &ProfileArgs) -> CliResult<()> {
    let mut words = args.words.clone();
    if let Some(path) = &args.words_file {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        words.extend(text.split_whitespace().map(str::to_owned));
    }
    if words.is_empty() {
        return Err(CliError::Usage("give --words or --words-file".into()));
    }
    let emb = read_embeddings(&args.emb, args.max_vocab)?;
    let rows = export_profile(&emb, &words, args.cutoff)?;
    match &args.out {
        Some(path) => {
            write_profile_csv(&rows, create(path)?)
                .with_context(|| format!("writing {}", path.display()))?;
        }
        None => write_profile_csv(&rows, io::stdout().lock()).context("writing CSV")?,
    }
    Ok(())
}
