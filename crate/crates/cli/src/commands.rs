use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use redkgr::eval::{bench_inference, evaluate, per_distance, BenchReport, FilterIndex, RankingReport};
use redkgr::explain::{explain, to_dot, to_json, Labels};
use redkgr::kg::{load_dataset, DatasetLayout, KnowledgeGraph, Mode, Triple};
use redkgr::model::{checkpoint, ModelConfig, ParameterSet, Query};
use redkgr::selftest::{self, SelftestOptions, SuiteReport};
use redkgr::synth::degree_controlled;
use redkgr::train::{fit, TrainConfig, TrainData};

use crate::error::{io_err, CliError};
use crate::{Cli, Command};

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModeArg {
    Transductive,
    Inductive,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Transductive => Mode::Transductive,
            ModeArg::Inductive => Mode::Inductive,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Valid,
    Test,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Format {
    Dot,
    Json,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Dataset directory. A relative path that does not exist is looked up
    /// under the data root.
    #[arg(long)]
    pub data: PathBuf,

    #[arg(long, value_enum, default_value = "transductive")]
    pub mode: ModeArg,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// Where the index files go.
    #[arg(long, default_value = "runs/prepare")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,

    /// `key = value` config file; unset keys keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Override one config key, e.g. `--set lr=0.003`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,

    /// Overrides `max_epochs` from the config.
    #[arg(long)]
    pub max_epochs: Option<usize>,

    #[arg(long, default_value = "runs/train")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,

    #[command(flatten)]
    pub data: DataArgs,

    #[arg(long, value_enum, default_value = "test")]
    pub split: Split,

    /// Add the table of MRR by head-to-answer hop distance.
    #[arg(long)]
    pub per_distance: bool,

    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,

    #[arg(long, default_value = "runs/eval")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,

    #[command(flatten)]
    pub data: DataArgs,

    /// `head,relation,tail` tokens; suffix the relation with `^-1` for its
    /// reverse.
    #[arg(long)]
    pub triple: String,

    /// Attention threshold for keeping an edge.
    #[arg(long, default_value_t = 0.5)]
    pub theta: f64,

    #[arg(long, value_enum, default_value = "dot")]
    pub format: Format,

    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Entity counts; one synthetic graph and CSV row per value.
    #[arg(long, value_delimiter = ',', default_value = "1000")]
    pub entities: Vec<u32>,

    /// Mean augmented degree.
    #[arg(long, default_value_t = 10.0)]
    pub degree: f64,

    #[arg(long, default_value_t = 10)]
    pub relations: u32,

    #[arg(long, default_value_t = 3)]
    pub depth: usize,

    #[arg(long, default_value_t = 48)]
    pub dim: usize,

    #[arg(long, default_value_t = 5)]
    pub queries: usize,

    #[arg(long, default_value = "runs/bench")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SelftestArgs {
    /// Check the single-pair equivalence on these trained parameters
    /// instead of random ones.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,

    #[arg(long, default_value_t = 200)]
    pub frontier_cases: usize,

    #[arg(long, default_value_t = 500)]
    pub single_pair_cases: usize,

    #[arg(long, default_value_t = 50)]
    pub gradient_cases: usize,

    /// Directory for the JSON report.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let start = Instant::now();
    let (name, manifest_path, config) = match &cli.command {
        Command::Prepare(a) => ("prepare", Some(a.out.join("run.json")), prepare(cli, a)?),
        Command::Train(a) => ("train", Some(a.out.join("run.json")), train(cli, a)?),
        Command::Eval(a) => ("eval", Some(a.out.join("run.json")), eval(cli, a)?),
        Command::Explain(a) => ("explain", a.out.as_ref().map(|p| sidecar(p)), run_explain(cli, a)?),
        Command::Bench(a) => ("bench", Some(a.out.join("run.json")), bench(cli, a)?),
        Command::Selftest(a) => {
            let (config, result) = run_selftest(cli, a);
            if let Some(dir) = &a.out {
                write_manifest(&dir.join("run.json"), cli, "selftest", config, start)?;
            }
            return result;
        }
    };
    if let Some(path) = manifest_path {
        write_manifest(&path, cli, name, config, start)?;
    }
    Ok(())
}

/// `out.dot` → `out.dot.run.json`.
fn sidecar(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".run.json");
    path.with_file_name(name)
}

fn write_manifest(path: &Path, cli: &Cli, command: &str, config: Value, start: Instant) -> Result<(), CliError> {
    let manifest = json!({
        "command": command,
        "args": std::env::args().skip(1).collect::<Vec<_>>(),
        "seed": cli.seed,
        "threads": rayon::current_num_threads(),
        "deterministic": cli.deterministic,
        "version": env!("CARGO_PKG_VERSION"),
        "config": config,
        "seconds": start.elapsed().as_secs_f64(),
    });
    write_text(path, &(serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n"))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Sizes the global pool. Must run before anything touches rayon.
fn init_threads(cli: &Cli, deterministic: bool) -> Result<(), CliError> {
    let threads = if deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    Ok(())
}

fn resolve_data(cli: &Cli, data: &Path) -> PathBuf {
    if data.is_absolute() || data.exists() {
        data.to_path_buf()
    } else {
        cli.data_root.join(data)
    }
}

fn load(cli: &Cli, args: &DataArgs) -> Result<DatasetLayout, CliError> {
    let dir = resolve_data(cli, &args.data);
    if !dir.is_dir() {
        return Err(CliError::Data(format!("dataset directory {} not found", dir.display())));
    }
    Ok(load_dataset(&dir, args.mode.into())?)
}

fn load_checkpoint(path: &Path, ds: &DatasetLayout) -> Result<ParameterSet<f32>, CliError> {
    let (params, _) = checkpoint::load(path)?;
    let have = params.relation_space.num_raw();
    let want = ds.relations().len();
    if have != want {
        return Err(CliError::Data(format!(
            "checkpoint was trained with {have} relations, dataset has {want}"
        )));
    }
    Ok(params)
}

fn prepare(cli: &Cli, a: &PrepareArgs) -> Result<Value, CliError> {
    init_threads(cli, cli.deterministic)?;
    let ds = load(cli, &a.data)?;
    ds.write_index(&a.out)?;
    let stats = ds.stats();
    println!(
        "{} dataset: {} entities, {} relations, {} facts, {} valid, {} test",
        stats.mode, stats.num_entities, stats.num_relations, stats.num_facts, stats.num_valid, stats.num_test
    );
    if let (Some(e), Some(f)) = (stats.num_test_entities, stats.num_test_facts) {
        println!("test graph: {e} entities, {f} facts, entity overlap with training {}", stats.entity_overlap.unwrap_or(0));
    }
    println!("index written to {}", a.out.display());
    Ok(json!({ "data": resolve_data(cli, &a.data.data), "mode": stats.mode, "stats": stats }))
}

/// Copies every line to stdout and a log file.
struct Tee<W: Write> {
    file: W,
}

impl<W: Write> Write for Tee<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        io::stdout().write_all(buf)?;
        self.file.write_all(buf)?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        io::stdout().flush()?;
        self.file.flush()
    }
}

fn train(cli: &Cli, a: &TrainArgs) -> Result<Value, CliError> {
    let mut cfg = TrainConfig::for_mode(a.data.mode.into());
    if let Some(path) = &a.config {
        cfg.apply_file(path)?;
    }
    for kv in &a.overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim(), 0)?;
    }
    if let Some(n) = a.max_epochs {
        cfg.max_epochs = n;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.deterministic |= cli.deterministic;
    cfg.validate()?;
    init_threads(cli, cfg.deterministic)?;

    let ds = load(cli, &a.data)?;
    let data = match &ds {
        DatasetLayout::Transductive(d) => TrainData::Transductive(d),
        DatasetLayout::Inductive(d) => TrainData::Inductive(d),
    };
    fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    write_text(&a.out.join("config.txt"), &cfg.to_text())?;
    let log_path = a.out.join("train.log");
    let file = File::create(&log_path).map_err(|e| io_err(&log_path, e))?;
    let mut log = Tee { file: BufWriter::new(file) };
    let report = fit(&cfg, data, Some(&a.out), &mut log)?;
    log.flush().map_err(|e| io_err(&log_path, e))?;

    let summary = json!({
        "best_epoch": report.best_epoch,
        "best_val_mrr": report.best_val_mrr,
        "epochs_run": report.epochs_run,
        "stopped_early": report.stopped_early,
        "checkpoint": report.checkpoint,
    });
    write_text(&a.out.join("summary.json"), &(serde_json::to_string_pretty(&summary).expect("summary") + "\n"))?;
    match &report.checkpoint {
        Some(dir) => println!(
            "best validation MRR {:.4} at epoch {}, checkpoint {}",
            report.best_val_mrr,
            report.best_epoch,
            dir.display()
        ),
        None => println!("no validation run; nothing saved"),
    }
    Ok(json!({
        "data": resolve_data(cli, &a.data.data),
        "mode": ds.mode(),
        "train_config": cfg,
        "summary": summary,
    }))
}

/// Inference graph, queries (both directions) and filter for one split.
fn eval_target(ds: &DatasetLayout, split: Split) -> Result<(&KnowledgeGraph, Vec<Triple>, FilterIndex), CliError> {
    let rels = ds.relation_space();
    Ok(match (ds, split) {
        (DatasetLayout::Transductive(d), split) => {
            let set = if split == Split::Valid { &d.valid } else { &d.test };
            (&d.graph, rels.with_reverses(&set.triples), FilterIndex::new(rels, &d.known_triples()))
        }
        (DatasetLayout::Inductive(d), Split::Valid) => (
            &d.train_graph,
            rels.with_reverses(&d.valid.triples),
            FilterIndex::new(rels, &d.known_train_triples()),
        ),
        (DatasetLayout::Inductive(d), Split::Test) => (
            &d.test_graph,
            rels.with_reverses(&d.test.triples),
            FilterIndex::new(rels, &d.known_test_triples()),
        ),
    })
}

fn eval(cli: &Cli, a: &EvalArgs) -> Result<Value, CliError> {
    init_threads(cli, cli.deterministic)?;
    let ds = load(cli, &a.data)?;
    let params = load_checkpoint(&a.checkpoint, &ds)?;
    let (graph, queries, filter) = eval_target(&ds, a.split)?;
    if queries.is_empty() {
        return Err(CliError::Data(format!("{:?} split is empty", a.split).to_lowercase()));
    }
    let mut report = evaluate(&params, graph, &queries, &filter, a.batch_size)?;
    if a.per_distance {
        report.per_distance = Some(per_distance(&report, graph));
    }
    print!("{}", report.to_table());

    fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    write_text(&a.out.join("ranks.tsv"), &ranks_tsv(&report, &ds))?;
    let metrics = json!({
        "count": report.count,
        "mrr": report.mrr,
        "hit1": report.hit1,
        "hit3": report.hit3,
        "hit10": report.hit10,
        "per_distance": report.per_distance,
    });
    write_text(&a.out.join("metrics.json"), &(serde_json::to_string_pretty(&metrics).expect("metrics") + "\n"))?;
    Ok(json!({
        "data": resolve_data(cli, &a.data.data),
        "mode": ds.mode(),
        "checkpoint": a.checkpoint,
        "split": format!("{:?}", a.split).to_lowercase(),
        "batch_size": a.batch_size,
        "metrics": metrics,
    }))
}

fn ranks_tsv(report: &RankingReport, ds: &DatasetLayout) -> String {
    let labels = Labels {
        entities: Some(ds.entities()),
        relations: Some(ds.relations()),
        space: ds.relation_space(),
    };
    let mut s = String::from("head\trelation\ttail\trank\n");
    for r in &report.ranks {
        let t = r.triple;
        s.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            labels.entity(t.head),
            labels.relation(t.rel),
            labels.entity(t.tail),
            r.rank.value()
        ));
    }
    s
}

fn parse_triple(text: &str, ds: &DatasetLayout) -> Result<Triple, CliError> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let [h, r, t] = parts[..] else {
        return Err(CliError::Config(format!("--triple expects head,relation,tail, got `{text}`")));
    };
    let entity = |tok: &str| {
        ds.entities()
            .id(tok)
            .ok_or_else(|| CliError::Data(format!("unknown entity `{tok}`")))
    };
    let space = ds.relation_space();
    let (name, reverse) = match r.strip_suffix("^-1") {
        Some(base) => (base, true),
        None => (r, false),
    };
    let rel = ds
        .relations()
        .id(name)
        .ok_or_else(|| CliError::Data(format!("unknown relation `{name}`")))?;
    let rel = if reverse { space.inverse(rel) } else { rel };
    Ok(Triple::new(entity(h)?, rel, entity(t)?))
}

fn run_explain(cli: &Cli, a: &ExplainArgs) -> Result<Value, CliError> {
    init_threads(cli, cli.deterministic)?;
    let ds = load(cli, &a.data)?;
    let params = load_checkpoint(&a.checkpoint, &ds)?;
    let triple = parse_triple(&a.triple, &ds)?;
    let graph = match &ds {
        DatasetLayout::Transductive(d) => &d.graph,
        DatasetLayout::Inductive(d) if d.test_graph.contains_entity(triple.head) => &d.test_graph,
        DatasetLayout::Inductive(d) => &d.train_graph,
    };
    if !graph.contains_entity(triple.tail) {
        return Err(CliError::Data("head and tail belong to different graphs".into()));
    }
    let x = explain(&params, &graph.view(), triple, a.theta)?;
    if !x.reachable {
        eprintln!("tail is not reachable from the head within {} hops; explanation is empty", params.config.depth);
    }
    let labels = Labels {
        entities: Some(ds.entities()),
        relations: Some(ds.relations()),
        space: ds.relation_space(),
    };
    let text = match a.format {
        Format::Dot => to_dot(&x, &labels),
        Format::Json => to_json(&x) + "\n",
    };
    match &a.out {
        Some(path) => write_text(path, &text)?,
        None => print!("{text}"),
    }
    Ok(json!({
        "data": resolve_data(cli, &a.data.data),
        "mode": ds.mode(),
        "checkpoint": a.checkpoint,
        "triple": a.triple,
        "theta": a.theta,
        "edges": x.num_edges(),
        "reachable": x.reachable,
    }))
}

fn bench(cli: &Cli, a: &BenchArgs) -> Result<Value, CliError> {
    init_threads(cli, cli.deterministic)?;
    let seed = cli.seed.unwrap_or(0);
    let config = ModelConfig {
        dim: a.dim,
        depth: a.depth,
        ..ModelConfig::default()
    };
    let mut rows = Vec::new();
    let mut csv = format!("{}\n", BenchReport::csv_header());
    for &n in &a.entities {
        if n == 0 {
            return Err(CliError::Config("--entities values must be positive".into()));
        }
        let graph = degree_controlled(n, a.degree, a.relations, seed);
        let params = ParameterSet::<f32>::init(config.clone(), graph.relations(), seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let queries: Vec<Query> = (0..a.queries)
            .map(|_| Query::new(rng.gen_range(0..n), rng.gen_range(0..a.relations)))
            .collect();
        let report = bench_inference(&params, &graph, &queries)?;
        println!(
            "|V|={n} edges={} recursive {:.3}s single-pair {:.3}s speedup {:.1}x",
            report.num_edges, report.seconds_recursive, report.seconds_single_pair, report.speedup
        );
        csv.push_str(&report.to_csv_row());
        csv.push('\n');
        rows.push(report);
    }
    fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    write_text(&a.out.join("bench.csv"), &csv)?;
    Ok(json!({
        "entities": a.entities,
        "degree": a.degree,
        "relations": a.relations,
        "depth": a.depth,
        "dim": a.dim,
        "queries": a.queries,
        "graph_seed": seed,
    }))
}

/// Returns the manifest config and the outcome separately so a failing run
/// still leaves its report behind.
fn run_selftest(cli: &Cli, a: &SelftestArgs) -> (Value, Result<(), CliError>) {
    let opts = SelftestOptions {
        seed: cli.seed.unwrap_or(0),
        frontier_cases: a.frontier_cases,
        single_pair_cases: a.single_pair_cases,
        gradient_cases: a.gradient_cases,
    };
    let config = json!({
        "checkpoint": a.checkpoint,
        "frontier_cases": a.frontier_cases,
        "single_pair_cases": a.single_pair_cases,
        "gradient_cases": a.gradient_cases,
    });
    if let Err(e) = init_threads(cli, cli.deterministic) {
        return (config, Err(e));
    }

    let mut reports = match &a.checkpoint {
        None => selftest::run_all(&opts, None),
        Some(path) => match checkpoint::load(path) {
            Ok((params, _)) => selftest::run_all(&opts, Some(&params.cast::<f64>())),
            Err(e) => {
                let mut rejected = SuiteReport::new("single-pair-vs-recursive");
                rejected.cases = 1;
                rejected.fail(format!("checkpoint {} rejected: {e}", path.display()));
                let mut rs = selftest::run_all(
                    &SelftestOptions {
                        single_pair_cases: 0,
                        ..opts.clone()
                    },
                    None,
                );
                rs[1] = rejected;
                rs
            }
        },
    };
    let failed = reports.iter().filter(|r| !r.passed()).count();
    for r in &reports {
        println!("{r}");
    }
    println!("{} suites, {} failed", reports.len(), failed);

    if let Some(dir) = &a.out {
        let suites: Vec<Value> = reports
            .iter_mut()
            .map(|r| {
                json!({
                    "name": r.name,
                    "passed": r.passed(),
                    "cases": r.cases,
                    "failures": r.failures,
                    "max_error": r.max_error,
                    "first_failure": r.first_failure,
                    "seconds": r.seconds,
                })
            })
            .collect();
        let text = serde_json::to_string_pretty(&json!({ "suites": suites })).expect("report") + "\n";
        if let Err(e) = write_text(&dir.join("selftest.json"), &text) {
            return (config, Err(e));
        }
    }
    let result = if failed == 0 {
        Ok(())
    } else {
        Err(CliError::Selftest(format!("{failed} selftest suite(s) failed")))
    };
    (config, result)
}
