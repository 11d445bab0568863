//! Command-line front end: score prediction dumps, compare checkpoints
//! under different selection metrics, and run the reference trainer.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use mpcs::analysis::{
    select_checkpoint, similarity_table, tradeoff_report, trajectories, CheckpointRecord,
    TradeoffReport,
};
use mpcs::config::MpcsConfig;
use mpcs::data::{
    generate_synthetic, load_csv_dataset, load_idx, read_dump, write_dump, DumpMeta, LabelColumn,
    SyntheticSpec, TabularDataset,
};
use mpcs::error::ErrorKind;
use mpcs::metrics::MetricReport;
use mpcs::trainer::{train_with, LrModulation, ModelConfig, Optimizer, TrainConfig};
use mpcs::types::LabelSpace;
use mpcs::{Error, Result};

#[derive(Parser)]
#[command(name = "mpcs", version, about = "Meta Pattern Concern Score toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score a prediction dump and report every metric
    Evaluate(EvaluateArgs),
    /// Select checkpoints per metric over a directory of dumps and compare
    /// each benchmark choice against the score's choice
    Compare(CompareArgs),
    /// Train the reference MLP, dumping per-epoch checkpoints, a training
    /// log, and the trajectory similarity table
    Train(TrainArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Prediction dump (csv rows under a #c=..,tag=..,epoch=.. header)
    dump: PathBuf,
    /// Score configuration file
    #[arg(long)]
    config: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Write the report here instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Directory containing two or more prediction dumps
    dir: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// Benchmark metrics to select by, besides the score itself
    #[arg(long, value_delimiter = ',', default_value = "accuracy,f1,mcc,ms,ce")]
    select_by: Vec<String>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Score configuration file
    #[arg(long)]
    config: PathBuf,
    /// Output directory for dumps, the training log, and the similarity table
    #[arg(long)]
    out: PathBuf,

    /// Train on a CSV dataset (features plus one integer label column)
    #[arg(long, conflicts_with_all = ["idx_images", "synthetic"])]
    data: Option<PathBuf>,
    /// Label column index in the CSV; the last column when omitted
    #[arg(long, requires = "data")]
    label_col: Option<usize>,
    /// Z-score the feature columns after loading
    #[arg(long, requires = "data")]
    normalize: bool,

    /// Train on an IDX image file (with --idx-labels)
    #[arg(long, requires = "idx_labels", conflicts_with = "synthetic")]
    idx_images: Option<PathBuf>,
    /// IDX label file matching --idx-images
    #[arg(long)]
    idx_labels: Option<PathBuf>,

    /// Train on the built-in synthetic blob dataset
    #[arg(long)]
    synthetic: bool,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 200)]
    per_class: usize,
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 4.0)]
    spread: f64,
    #[arg(long, default_value_t = 1.0)]
    noise: f64,
    /// Confusable class pairs, e.g. "0:1,1:0"
    #[arg(long, default_value = "")]
    confusable: String,
    /// Seed for the synthetic dataset
    #[arg(long, default_value_t = 0)]
    data_seed: u64,

    #[arg(long, default_value_t = 150)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Hidden layer widths, e.g. "16" or "32,16"
    #[arg(long, default_value = "16")]
    hidden: String,
    #[arg(long, value_enum, default_value = "adam")]
    optimizer: OptimizerArg,
    /// Scale the learning rate by the previous epoch's score
    #[arg(long, value_enum, default_value = "off")]
    modulate: Toggle,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Toggle {
    On,
    Off,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Evaluate(args) => cmd_evaluate(&args),
        Command::Compare(args) => cmd_compare(&args),
        Command::Train(args) => cmd_train(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err.kind() {
                ErrorKind::Io => ExitCode::from(1),
                ErrorKind::Validation => ExitCode::from(2),
                ErrorKind::Numeric => ExitCode::from(3),
            }
        }
    }
}

fn load_config_file(path: &Path) -> Result<MpcsConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    MpcsConfig::from_toml(&text)
}

fn emit(text: &str, output: Option<&Path>) -> Result<()> {
    match output {
        Some(path) => fs::write(path, text).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        }),
        None => {
            use std::io::Write;
            let mut stdout = std::io::stdout().lock();
            // a closed pipe downstream is not our error
            let _ = writeln!(stdout, "{text}");
            Ok(())
        }
    }
}

fn report_csv(report: &MetricReport) -> String {
    let mut out = String::from("metric,value\n");
    for (name, value) in [
        ("accuracy", report.accuracy),
        ("macro_precision", report.macro_precision),
        ("macro_recall", report.macro_recall),
        ("macro_f1", report.macro_f1),
        ("mcc", report.mcc),
        ("ms_loss", report.ms_loss),
        ("ce_loss", report.ce_loss),
        ("mpcs", report.mpcs),
    ] {
        out.push_str(&format!("{name},{value}\n"));
    }
    out.push_str(&format!("dangerous_count,{}\n", report.dangerous_count));
    out
}

fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let cfg = load_config_file(&args.config)?;
    let (meta, preds) = read_dump(&args.dump)?;
    let space = LabelSpace::new(meta.class_count)?;
    let report = MetricReport::compute(&preds, &space, &cfg)?;
    let text = match args.format {
        Format::Json => serde_json::to_string_pretty(&report).expect("report serializes"),
        Format::Csv => report_csv(&report),
    };
    emit(&text, args.output.as_deref())
}

/// Dumps from a directory, as checkpoint records ordered by epoch.
fn load_records(dir: &Path, cfg: &MpcsConfig) -> Result<(LabelSpace, Vec<CheckpointRecord>)> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "csv"))
        // other csv files (training logs, notes) lack the dump header
        .filter(|p| {
            fs::read_to_string(p)
                .map(|text| text.starts_with("#c="))
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    let mut class_count = None;
    let mut records = Vec::new();
    for path in paths {
        let (meta, preds) = read_dump(&path)?;
        let c = *class_count.get_or_insert(meta.class_count);
        if meta.class_count != c {
            return Err(Error::Config(format!(
                "{} has {} classes, other dumps have {c}",
                path.display(),
                meta.class_count
            )));
        }
        let space = LabelSpace::new(c)?;
        let report = MetricReport::compute(&preds, &space, cfg)?;
        records.push(CheckpointRecord {
            epoch: meta.epoch,
            predictions: Some(preds),
            report,
        });
    }
    if records.len() < 2 {
        return Err(Error::Config(format!(
            "need at least 2 dumps to compare, found {}",
            records.len()
        )));
    }
    records.sort_by_key(|r| r.epoch);
    let space = LabelSpace::new(class_count.expect("at least two dumps"))?;
    Ok((space, records))
}

#[derive(Serialize)]
struct ComparisonReport {
    /// Selected epoch per metric, the score itself included.
    selection: BTreeMap<String, usize>,
    /// Trade-off of each benchmark metric's choice (a) against the score's
    /// choice (b).
    tradeoff_vs_mpcs: BTreeMap<String, TradeoffReport>,
}

fn comparison_csv(report: &ComparisonReport) -> String {
    let mut out = String::from("section,metric,field,value\n");
    for (metric, epoch) in &report.selection {
        out.push_str(&format!("selection,{metric},epoch,{epoch}\n"));
    }
    for (metric, t) in &report.tradeoff_vs_mpcs {
        for (field, value) in [
            ("accuracy_benchmark", t.accuracy_a),
            ("accuracy_mpcs", t.accuracy_b),
            ("accuracy_delta", t.accuracy_delta),
            ("destructive_rate_benchmark", t.destructive_rate_a),
            ("destructive_rate_mpcs", t.destructive_rate_b),
        ] {
            out.push_str(&format!("tradeoff,{metric},{field},{value}\n"));
        }
        for (field, value) in [
            ("errors_benchmark", t.errors_a as i64),
            ("errors_mpcs", t.errors_b as i64),
            ("errors_delta", t.errors_delta),
            ("dangerous_benchmark", t.dangerous_a as i64),
            ("dangerous_mpcs", t.dangerous_b as i64),
            ("dangerous_delta", t.dangerous_delta),
        ] {
            out.push_str(&format!("tradeoff,{metric},{field},{value}\n"));
        }
    }
    out
}

fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let cfg = load_config_file(&args.config)?;
    let (_space, records) = load_records(&args.dir, &cfg)?;
    let by_score = select_checkpoint(&records, "mpcs")?;

    let mut selection = BTreeMap::new();
    let mut tradeoffs = BTreeMap::new();
    selection.insert("mpcs".to_string(), by_score.epoch);
    for metric in &args.select_by {
        if metric == "mpcs" {
            continue;
        }
        let pick = select_checkpoint(&records, metric)?;
        selection.insert(metric.clone(), pick.epoch);
        tradeoffs.insert(metric.clone(), tradeoff_report(pick, by_score, &cfg)?);
    }
    let report = ComparisonReport {
        selection,
        tradeoff_vs_mpcs: tradeoffs,
    };
    let text = match args.format {
        Format::Json => serde_json::to_string_pretty(&report).expect("report serializes"),
        Format::Csv => comparison_csv(&report),
    };
    emit(&text, args.output.as_deref())
}

fn parse_confusable(text: &str) -> Result<Vec<(usize, usize)>> {
    let mut pairs = Vec::new();
    for part in text.split(',').filter(|p| !p.trim().is_empty()) {
        let (a, b) = part
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("bad confusable pair `{part}`, want A:B")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad confusable label `{v}`")))
        };
        pairs.push((parse(a)?, parse(b)?));
    }
    Ok(pairs)
}

fn parse_hidden(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad hidden layer width `{p}`")))
        })
        .collect()
}

fn load_training_data(args: &TrainArgs) -> Result<TabularDataset> {
    if let Some(path) = &args.data {
        let column = args.label_col.map_or(LabelColumn::Last, LabelColumn::Index);
        load_csv_dataset(path, column, args.normalize)
    } else if let (Some(images), Some(labels)) = (&args.idx_images, &args.idx_labels) {
        load_idx(images, labels)
    } else if args.synthetic {
        generate_synthetic(&SyntheticSpec {
            seed: args.data_seed,
            classes: args.classes,
            per_class: args.per_class,
            dim: args.dim,
            spread: args.spread,
            noise_std: args.noise,
            confusable: parse_confusable(&args.confusable)?,
        })
    } else {
        Err(Error::Config(
            "pick a data source: --data, --idx-images/--idx-labels, or --synthetic".into(),
        ))
    }
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let cfg = load_config_file(&args.config)?;
    let dataset = load_training_data(args)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;

    let model_cfg = ModelConfig {
        hidden: parse_hidden(&args.hidden)?,
    };
    let train_cfg = TrainConfig {
        epochs: args.epochs,
        base_lr: args.lr,
        batch_size: args.batch,
        optimizer: match args.optimizer {
            OptimizerArg::Adam => Optimizer::default(),
            OptimizerArg::Sgd => Optimizer::Sgd,
        },
        seed: args.seed,
        modulation: match args.modulate {
            Toggle::On => LrModulation::mpcs(),
            Toggle::Off => LrModulation::Off,
        },
    };

    let mut log = String::from("epoch,lr,ce,mpcs,accuracy,dangerous_count\n");
    let out_dir = args.out.clone();
    let class_count = dataset.space.class_count();
    let records = train_with(&dataset, &model_cfg, &train_cfg, &cfg, |lr, record| {
        let dump_path = out_dir.join(format!("epoch_{:03}.csv", record.epoch));
        let meta = DumpMeta {
            class_count,
            tag: "train".to_string(),
            epoch: record.epoch,
        };
        write_dump(
            &dump_path,
            &meta,
            record.predictions.as_ref().expect("trainer keeps dumps"),
        )?;
        log.push_str(&format!(
            "{},{},{},{},{},{}\n",
            record.epoch,
            lr,
            record.report.ce_loss,
            record.report.mpcs,
            record.report.accuracy,
            record.report.dangerous_count
        ));
        Ok(())
    });

    // the log covers every completed epoch, also on divergence
    let log_path = args.out.join("train_log.csv");
    fs::write(&log_path, &log).map_err(|e| Error::Io {
        path: log_path.clone(),
        source: e,
    })?;
    let records = records?;

    let table = similarity_table(&trajectories(&records), "mpcs")?;
    let similarity: BTreeMap<String, Option<f64>> = table.into_iter().collect();
    let similarity_path = args.out.join("similarity.json");
    let text =
        serde_json::to_string_pretty(&similarity).expect("similarity table serializes");
    fs::write(&similarity_path, text).map_err(|e| Error::Io {
        path: similarity_path.clone(),
        source: e,
    })?;

    let last = records.last().expect("at least one epoch");
    println!(
        "trained {} epochs: accuracy {:.4}, ce {:.4}, mpcs {:.4}, dangerous {}",
        records.len(),
        last.report.accuracy,
        last.report.ce_loss,
        last.report.mpcs,
        last.report.dangerous_count
    );
    println!(
        "wrote {} dumps, {}, {}",
        records.len(),
        log_path.display(),
        similarity_path.display()
    );
    Ok(())
}
