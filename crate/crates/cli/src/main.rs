use std::fmt;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use forge_core::arena::{run_battle, BattleConfig, Metric};
use forge_core::complexity::ComplexityReport;
use forge_core::data::{BlobsConfig, DataError, Dataset, DatasetSpec};
use forge_core::engine::TrainConfig;
use forge_core::metrics::{chip_rating, write_csv};
use forge_core::training::{TrainError, TrainingRun};
use forge_core::{parse, validate, ValidatedGraph};

#[derive(Parser)]
#[command(
    name = "forge",
    version,
    about = "Build, train and compare small dataflow classifiers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a .graph file and print its node count and shape table.
    Parse { file: PathBuf },
    /// Train a graph and write its metric curve as CSV.
    Train {
        #[arg(long)]
        graph: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Where to write the metric CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train two graphs under identical conditions and print the result as JSON.
    Battle {
        a: PathBuf,
        b: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Comparison order, e.g. `accuracy,infoacc`.
        #[arg(long, value_delimiter = ',', default_values = ["accuracy", "infoacc"])]
        priority: Vec<MetricArg>,
    },
    /// Print the complexity report of a graph as JSON.
    Complexity {
        #[arg(long)]
        graph: PathBuf,
        /// Reference graph for the normalized compression distance.
        #[arg(long)]
        ncd: Option<PathBuf>,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Synthetic blobs as `key=value` pairs: n, dim, m (per class), spread, seed.
    #[arg(long, conflicts_with_all = ["idx_images", "idx_labels"])]
    synthetic: Option<SyntheticArg>,
    /// IDX image file; without --idx-test-* every fifth row is held out.
    #[arg(long, requires = "idx_labels")]
    idx_images: Option<PathBuf>,
    #[arg(long, requires = "idx_images")]
    idx_labels: Option<PathBuf>,
    #[arg(long, requires_all = ["idx_images", "idx_test_labels"])]
    idx_test_images: Option<PathBuf>,
    #[arg(long, requires_all = ["idx_images", "idx_test_images"])]
    idx_test_labels: Option<PathBuf>,
    /// Number of classes in the IDX labels.
    #[arg(long, default_value_t = 10)]
    classes: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, visible_alias = "batch-size", default_value_t = 100)]
    batch: usize,
    #[arg(long, visible_alias = "learning-rate", default_value_t = 0.5)]
    lr: f64,
    #[arg(long, default_value_t = 1000)]
    steps: u64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, visible_alias = "eval-interval", default_value_t = 20)]
    eval_every: u64,
    #[arg(long, visible_alias = "eval-batch-size", default_value_t = 100)]
    eval_batch: usize,
}

impl TrainArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch,
            learning_rate: self.lr,
            steps: self.steps,
            seed: self.seed,
            eval_interval: self.eval_every,
            eval_batch_size: self.eval_batch,
        }
    }
}

#[derive(Clone)]
struct SyntheticArg(BlobsConfig);

impl FromStr for SyntheticArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let mut cfg = BlobsConfig::default();
        for pair in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| format!("expected key=value, got `{pair}`"))?;
            let bad = |e: &dyn fmt::Display| format!("bad value for `{key}`: {e}");
            match key.trim() {
                "n" => cfg.n_classes = value.parse().map_err(|e| bad(&e))?,
                "dim" => cfg.dim = value.parse().map_err(|e| bad(&e))?,
                "m" => cfg.m_per_class = value.parse().map_err(|e| bad(&e))?,
                "spread" => cfg.spread = value.parse().map_err(|e| bad(&e))?,
                "seed" => cfg.seed = value.parse().map_err(|e| bad(&e))?,
                other => {
                    return Err(format!(
                        "unknown key `{other}` (expected n, dim, m, spread, seed)"
                    ))
                }
            }
        }
        Ok(SyntheticArg(cfg))
    }
}

#[derive(Clone)]
struct MetricArg(Metric);

impl FromStr for MetricArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "accuracy" => Ok(MetricArg(Metric::Accuracy)),
            "infoacc" => Ok(MetricArg(Metric::Infoacc)),
            _ => Err(format!("unknown metric `{s}`")),
        }
    }
}

enum Failure {
    /// Bad input: exit code 1.
    Invalid(String),
    /// File system or network trouble: exit code 2.
    Io(String),
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Data(d) => d.into(),
            other => Failure::Invalid(other.to_string()),
        }
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { .. } => Failure::Io(e.to_string()),
            other => Failure::Invalid(other.to_string()),
        }
    }
}

fn load_graph(path: &Path) -> Result<ValidatedGraph, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Io(format!("cannot read {}: {e}", path.display())))?;
    let spec = parse(&text).map_err(|errs| {
        let lines: Vec<String> = errs
            .iter()
            .map(|e| format!("{}:{e}", path.display()))
            .collect();
        Failure::Invalid(lines.join("\n"))
    })?;
    validate(&spec).map_err(|errs| {
        let lines: Vec<String> = errs
            .iter()
            .map(|e| format!("{}: {e}", path.display()))
            .collect();
        Failure::Invalid(lines.join("\n"))
    })
}

fn dataset_spec(args: &DataArgs) -> Result<DatasetSpec, Failure> {
    match (&args.synthetic, &args.idx_images, &args.idx_labels) {
        (Some(s), _, _) => Ok(DatasetSpec::Synthetic(s.0)),
        (None, Some(images), Some(labels)) => Ok(DatasetSpec::Idx {
            images: images.clone(),
            labels: labels.clone(),
            test_images: args.idx_test_images.clone(),
            test_labels: args.idx_test_labels.clone(),
            n_classes: args.classes,
        }),
        _ => Err(Failure::Invalid(
            "a dataset is required: --synthetic or --idx-images with --idx-labels".into(),
        )),
    }
}

fn load_data(args: &DataArgs) -> Result<(DatasetSpec, Arc<Dataset>), Failure> {
    let spec = dataset_spec(args)?;
    let data = spec.load()?;
    Ok((spec, Arc::new(data)))
}

fn to_json(value: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(value).expect("report serializes")
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Parse { file } => {
            let g = load_graph(&file)?;
            println!("{} nodes", g.node_count());
            for d in &g.spec().inputs {
                println!("{}\tinput\t{}", d.name, d.shape);
            }
            for d in &g.spec().params {
                println!("{}\tparam\t{}", d.name, d.shape);
            }
            for name in g.topo_names() {
                let node = g
                    .spec()
                    .nodes
                    .iter()
                    .find(|n| n.name == name)
                    .expect("node");
                println!("{name}\t{}\t{}", node.op, g.shape_of(name).expect("shape"));
            }
        }
        Command::Train {
            graph,
            data,
            train,
            out,
        } => {
            let g = Arc::new(load_graph(&graph)?);
            let (_, data) = load_data(&data)?;
            let mut run = TrainingRun::new(g, data, train.config())?;
            run.run_to_end()?;
            let fin = run.final_eval()?;
            if let Some(path) = out {
                let io = |e: std::io::Error| {
                    Failure::Io(format!("cannot write {}: {e}", path.display()))
                };
                let file = fs::File::create(&path).map_err(io)?;
                write_csv(run.points(), std::io::BufWriter::new(file)).map_err(io)?;
            }
            println!("step: {}", fin.step);
            println!("accuracy: {:.6}", fin.accuracy);
            println!("infoacc: {}", chip_rating(fin.infoacc));
        }
        Command::Battle {
            a,
            b,
            data,
            train,
            priority,
        } => {
            let ga = Arc::new(load_graph(&a)?);
            let gb = Arc::new(load_graph(&b)?);
            let (spec, data) = load_data(&data)?;
            let config = BattleConfig {
                train_config: train.config(),
                dataset: spec.label(),
                priority: priority.into_iter().map(|m| m.0).collect(),
            };
            let (ida, idb) = (a.display().to_string(), b.display().to_string());
            let result = run_battle((&ida, ga), (&idb, gb), data, &config)?;
            println!("{}", to_json(&result));
        }
        Command::Complexity { graph, ncd } => {
            let g = load_graph(&graph)?;
            let reference = ncd.as_deref().map(load_graph).transpose()?;
            println!(
                "{}",
                to_json(&ComplexityReport::new(&g, reference.as_ref()))
            );
        }
        Command::Serve { port, host } => {
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|e| Failure::Invalid(format!("bad address {host}:{port}: {e}")))?;
            eprintln!("listening on http://{addr}");
            forge_service::run(addr).map_err(|e| Failure::Io(format!("server error: {e}")))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(1)
        }
        Err(Failure::Io(msg)) => {
            eprintln!("{msg}");
            ExitCode::from(2)
        }
    }
}
