use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use zcpt_core::data::Split;
use zcpt_core::proxies::{compute_proxy_batched, ProxyId};
use zcpt_core::report::{self, Method};
use zcpt_core::scoring::{
    initial_analysis, progressive_analysis, AnalysisContext, CorrelationReport, OracleTable, Policy,
    ProxyEvaluator, RawScoreTable, Trajectory,
};
use zcpt_core::search::{zero_cost_pt, EdgeOrder, SearchConfig};
use zcpt_core::tabular::{
    generate_mini_benchmark, synth_dataset, toy_benchmark, BenchTrainCfg, MiniBenchCfg, SynthDatasetCfg,
    TabularBenchmark,
};
use zcpt_core::{ArchState, Error, NetConfig, Space};

#[derive(Parser)]
#[command(name = "zcpt", version, about = "Zero-cost operation scoring and perturbation-based architecture search")]
struct Cli {
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true, env = "ZCPT_JOBS", default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Score one genotype (or the supernet) with a zero-cost proxy.
    Score(ScoreArgs),
    /// Run the perturbation search and print the winning genotype.
    Search(SearchArgs),
    /// Train every genotype of a space and write a JSONL benchmark.
    Benchgen(BenchgenArgs),
    /// Rank-correlation analyses of operation scores, as CSV.
    Analyze(AnalyzeArgs),
    /// Test error and rank of the architecture each method selects, as CSV.
    Report(ReportArgs),
}

/// Synthetic data and network skeleton. Defaults match the bundled toy
/// benchmark.
#[derive(Args, Clone)]
struct DataArgs {
    /// JSON file with a dataset config; individual flags override it.
    #[arg(long)]
    data_config: Option<PathBuf>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    samples_per_class: Option<usize>,
    #[arg(long)]
    image_size: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    data_seed: Option<u64>,
    /// Channels of the first stage.
    #[arg(long, default_value_t = 8)]
    width: usize,
    #[arg(long, default_value_t = 1)]
    cells_per_stage: usize,
    /// Seed of the network weights.
    #[arg(long, default_value_t = 0)]
    init_seed: u64,
}

impl DataArgs {
    fn dataset_cfg(&self) -> Result<SynthDatasetCfg, Error> {
        let mut cfg = match &self.data_config {
            Some(p) => serde_json::from_str(&fs::read_to_string(p)?)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => MiniBenchCfg::toy().data,
        };
        if let Some(v) = self.classes {
            cfg.num_classes = v;
        }
        if let Some(v) = self.samples_per_class {
            cfg.samples_per_class = v;
        }
        if let Some(v) = self.image_size {
            cfg.image_size = v;
        }
        if let Some(v) = self.noise {
            cfg.noise = v;
        }
        if let Some(v) = self.data_seed {
            cfg.seed = v;
        }
        Ok(cfg)
    }

    fn net(&self, data: &SynthDatasetCfg) -> NetConfig {
        NetConfig {
            width: self.width,
            cells_per_stage: self.cells_per_stage,
            input_shape: vec![data.channels, data.image_size, data.image_size],
            num_classes: data.num_classes,
            init_seed: self.init_seed,
        }
    }

    /// Dataset config, net config and the training split.
    fn resolve(&self) -> Result<(SynthDatasetCfg, NetConfig, Split), Error> {
        let cfg = self.dataset_cfg()?;
        let net = self.net(&cfg);
        let data = synth_dataset(&cfg)?;
        Ok((cfg, net, data.train))
    }
}

#[derive(Args)]
struct ScoreArgs {
    /// nb201, toy, chain:<layers>[:<ops>] or darts:<nodes>[:<ops>].
    #[arg(long, default_value = "toy")]
    space: Space,
    #[arg(long, conflicts_with = "supernet", required_unless_present = "supernet")]
    genotype: Option<String>,
    /// Score the untrained supernet instead of a genotype.
    #[arg(long)]
    supernet: bool,
    #[arg(long, default_value = "nwot")]
    proxy: ProxyId,
    /// Batch seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long, default_value = "toy")]
    space: Space,
    #[arg(long, default_value = "nwot")]
    proxy: ProxyId,
    #[arg(long, default_value = "random")]
    order: EdgeOrder,
    /// Proposal iterations.
    #[arg(short = 'N', long = "proposals", default_value_t = 10)]
    proposals: usize,
    /// Validation minibatches.
    #[arg(short = 'V', long = "validations", default_value_t = 100)]
    validations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// Fresh supernet weights for every proposal.
    #[arg(long)]
    reinit: bool,
    /// Where to write the trace JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct BenchgenArgs {
    #[arg(long, default_value = "toy")]
    space: Space,
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.9)]
    momentum: f64,
    /// Training seeds, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    seeds: Vec<u64>,
    /// Proxies stored per genotype, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "nwot,synflow")]
    proxies: Vec<ProxyId>,
    #[arg(long, default_value_t = 0)]
    proxy_seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Initial,
    Progressive,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrajectoryArg {
    Oracle,
    #[value(name = "self")]
    SelfPolicy,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// JSONL benchmark; the bundled toy benchmark when omitted.
    #[arg(long)]
    bench: Option<PathBuf>,
    #[arg(long, default_value = "toy")]
    space: Space,
    /// Correlate the rows of the bundled raw-score table instead.
    #[arg(long, conflicts_with_all = ["bench", "raw_scores"])]
    fixture: bool,
    /// Correlate the rows of a raw-score CSV instead.
    #[arg(long, conflicts_with = "bench")]
    raw_scores: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "initial")]
    mode: Mode,
    /// Methods, comma separated. Defaults to every fixture method, or
    /// best-acc,avg-acc,zc-pt,disc-zc on a benchmark.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    #[arg(long, default_value = "nwot")]
    proxy: ProxyId,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3")]
    seeds: Vec<u64>,
    #[arg(long, value_enum, default_value = "oracle")]
    trajectory: TrajectoryArg,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    bench: Option<PathBuf>,
    #[arg(long, default_value = "toy")]
    space: Space,
    #[arg(long, value_delimiter = ',', default_value = "best-acc,avg-acc,best-zc,disc-zc,zc-pt,zero-cost-pt")]
    methods: Vec<Method>,
    #[arg(long, default_value = "nwot")]
    proxy: ProxyId,
    /// Edge order of every method.
    #[arg(long, default_value = "random")]
    order: EdgeOrder,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3")]
    seeds: Vec<u64>,
    #[arg(short = 'N', long = "proposals", default_value_t = 10)]
    proposals: usize,
    #[arg(short = 'V', long = "validations", default_value_t = 100)]
    validations: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
}

fn print_config(v: serde_json::Value) {
    eprintln!("config: {v}");
}

fn load_bench(path: Option<&Path>, space: &Space) -> Result<TabularBenchmark, Error> {
    let b = match path {
        Some(p) => TabularBenchmark::load(p)?,
        None => toy_benchmark(),
    };
    b.check_complete(space)?;
    Ok(b)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn data_json(cfg: &SynthDatasetCfg, net: &NetConfig) -> serde_json::Value {
    json!({ "data": cfg, "net": net })
}

fn cmd_score(a: ScoreArgs) -> Result<(), Error> {
    let (dcfg, net, train) = a.data.resolve()?;
    let arch = match &a.genotype {
        Some(g) => ArchState::from_genotype(&a.space, g)?,
        None => a.space.supernet(),
    };
    print_config(json!({
        "command": "score",
        "space": a.space.to_string(),
        "genotype": a.genotype,
        "proxy": a.proxy,
        "seed": a.seed,
        "batch_size": a.batch_size,
        "setup": data_json(&dcfg, &net),
    }));
    let mut nets = vec![arch.instantiate(&net)?];
    let score = compute_proxy_batched(&mut nets, a.proxy, Some(&train), a.batch_size, a.seed)?.remove(0);
    println!("{}", serde_json::to_string(&score).expect("score serializes"));
    if score.degenerate {
        return Err(Error::Degenerate(1));
    }
    Ok(())
}

fn cmd_search(a: SearchArgs) -> Result<(), Error> {
    let (dcfg, net, train) = a.data.resolve()?;
    let cfg = SearchConfig {
        proposals: a.proposals,
        validations: a.validations,
        order: a.order,
        proxy: a.proxy,
        seed: a.seed,
        batch_size: a.batch_size,
        reinit_per_proposal: a.reinit,
    };
    cfg.validate()?;
    print_config(json!({
        "command": "search",
        "space": a.space.to_string(),
        "search": cfg,
        "setup": data_json(&dcfg, &net),
        "out": a.out,
    }));
    let ev = ProxyEvaluator::new(net, train);
    let (winner, trace) = zero_cost_pt(&a.space.supernet(), &cfg, &ev)?;
    if let Some(p) = &a.out {
        fs::write(p, trace.to_json() + "\n")?;
    }
    println!("{winner}");
    Ok(())
}

fn cmd_benchgen(a: BenchgenArgs) -> Result<(), Error> {
    let data = a.data.dataset_cfg()?;
    let cfg = MiniBenchCfg {
        data,
        width: a.data.width,
        cells_per_stage: a.data.cells_per_stage,
        train: BenchTrainCfg {
            epochs: a.epochs,
            lr: a.lr,
            batch_size: a.batch_size,
            momentum: a.momentum,
            seeds: a.seeds,
        },
        proxies: a.proxies,
        proxy_seed: a.proxy_seed,
    };
    print_config(json!({
        "command": "benchgen",
        "space": a.space.to_string(),
        "bench": cfg,
        "out": a.out,
    }));
    let out = generate_mini_benchmark(&a.space, &cfg)?;
    for f in &out.failures {
        eprintln!("training failed: {} seed {}: {}", f.genotype, f.seed, f.error);
    }
    out.bench.save(&a.out)?;
    eprintln!("wrote {} genotypes to {}", out.bench.len(), a.out.display());
    Ok(())
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<(), Error> {
    if a.fixture || a.raw_scores.is_some() {
        let raw = match &a.raw_scores {
            Some(p) => RawScoreTable::from_reader(fs::File::open(p)?)?,
            None => RawScoreTable::bundled(),
        };
        let methods = if a.methods.is_empty() { raw.methods().to_vec() } else { a.methods.clone() };
        print_config(json!({
            "command": "analyze",
            "source": a.raw_scores.as_ref().map_or("bundled raw scores".to_string(), |p| p.display().to_string()),
            "methods": methods,
        }));
        let report = raw.correlations(&methods)?;
        return emit(a.out.as_deref(), &report.to_csv_string());
    }
    let bench = load_bench(a.bench.as_deref(), &a.space)?;
    let methods = if a.methods.is_empty() {
        vec![Policy::BestAcc, Policy::AvgAcc, Policy::ZcPt, Policy::DiscZc]
    } else {
        a.methods.iter().map(|m| m.parse()).collect::<Result<Vec<Policy>, Error>>()?
    };
    let (dcfg, net, train) = a.data.resolve()?;
    print_config(json!({
        "command": "analyze",
        "space": a.space.to_string(),
        "bench": a.bench,
        "mode": match a.mode { Mode::Initial => "initial", Mode::Progressive => "progressive" },
        "methods": methods.iter().map(|p| p.name()).collect::<Vec<_>>(),
        "proxy": a.proxy,
        "seeds": a.seeds,
        "trajectory": match a.trajectory { TrajectoryArg::Oracle => "oracle", TrajectoryArg::SelfPolicy => "self" },
        "batch_size": a.batch_size,
        "setup": data_json(&dcfg, &net),
    }));
    let oracle = OracleTable::new(&bench, &a.space)?;
    let mut ev = ProxyEvaluator::new(net, train);
    ev.batch_size = a.batch_size;
    let ctx = AnalysisContext {
        oracle: &oracle,
        evaluator: Some(&ev),
        proxy: a.proxy,
    };
    let a0 = a.space.supernet();
    let report = match a.mode {
        Mode::Initial => initial_analysis(&ctx, &a0, &methods, &a.seeds)?,
        Mode::Progressive => {
            let traj = match a.trajectory {
                TrajectoryArg::Oracle => Trajectory::Oracle,
                TrajectoryArg::SelfPolicy => Trajectory::SelfPolicy,
            };
            let mut all = CorrelationReport::default();
            for &p in &methods {
                all.rows.extend(progressive_analysis(&ctx, &a0, p, traj, &a.seeds)?.rows);
            }
            all
        }
    };
    emit(a.out.as_deref(), &report.to_csv_string())
}

fn cmd_report(a: ReportArgs) -> Result<(), Error> {
    let bench = load_bench(a.bench.as_deref(), &a.space)?;
    let (dcfg, net, train) = a.data.resolve()?;
    let search = SearchConfig {
        proposals: a.proposals,
        validations: a.validations,
        order: a.order,
        proxy: a.proxy,
        seed: 0,
        batch_size: a.batch_size,
        reinit_per_proposal: false,
    };
    print_config(json!({
        "command": "report",
        "space": a.space.to_string(),
        "bench": a.bench,
        "methods": a.methods.iter().map(|m| m.name()).collect::<Vec<_>>(),
        "proxy": a.proxy,
        "order": a.order,
        "seeds": a.seeds,
        "search": search,
        "setup": data_json(&dcfg, &net),
    }));
    let oracle = OracleTable::new(&bench, &a.space)?;
    let mut ev = ProxyEvaluator::new(net, train);
    ev.batch_size = a.batch_size;
    let ctx = AnalysisContext {
        oracle: &oracle,
        evaluator: Some(&ev),
        proxy: a.proxy,
    };
    let sel = report::selections(&ctx, &bench, &a.space.supernet(), &a.methods, a.order, &a.seeds, &search)?;
    for s in &sel {
        eprintln!("{} seed {}: {} (error {:.4}, rank {})", s.method, s.seed, s.genotype, s.test_error, s.rank);
    }
    let mut buf = vec![];
    report::write_summary_csv(&report::summarize(&sel), &mut buf)?;
    emit(a.out.as_deref(), &String::from_utf8(buf).expect("csv is utf-8"))
}

/// 2 for bad input or configuration, 1 for failures while running.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_)
        | Error::Parse { .. }
        | Error::Genotype(..)
        | Error::UnknownOp(_)
        | Error::Incomplete(_)
        | Error::UnknownGenotype(_)
        | Error::Duplicate { .. }
        | Error::AccuracyRange(_)
        | Error::MissingInput { .. }
        | Error::NoTopology
        | Error::Io(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.jobs == 0 {
        eprintln!("error: --jobs must be at least 1");
        return ExitCode::from(2);
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build_global()
        .expect("thread pool is configured once");
    let res = match cli.cmd {
        Cmd::Score(a) => cmd_score(a),
        Cmd::Search(a) => cmd_search(a),
        Cmd::Benchgen(a) => cmd_benchgen(a),
        Cmd::Analyze(a) => cmd_analyze(a),
        Cmd::Report(a) => cmd_report(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
