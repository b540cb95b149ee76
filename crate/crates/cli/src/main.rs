use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use trendfair::backbone::BackboneRegistry;
use trendfair::experiment::checkpoint;
use trendfair::experiment::report::{group_statistics_csv, summary_csv};
use trendfair::experiment::runs::{training_group_statistics, SCALE_FRACTIONS};
use trendfair::experiment::{
    complete_run, emit_report, evaluate_embeddings, generate_synthetic, load_dataset, prepare, read_report,
    run_ablation_suite, run_experiment_with, run_fairness_plugin, run_scalability, single_run_report, Ablation,
    CheckpointPolicy, DataSource, ExperimentConfig, ExperimentReport, FairGrouping, Trainer, TrainingData,
};
use trendfair::graph_store::{build_snapshots, degree_series, read_snapshots, write_log, write_snapshots, DynamicGraph};
use trendfair::labeler::{group_statistics, label, pattern_threshold, write_labels, DegreePattern, EvolutionLabel};
use trendfair::Scalar;

#[derive(Parser, Debug)]
#[command(name = "trendfair", version, about = "Fair trend-aware embeddings of dynamic user-item graphs")]
struct Cli {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

/// Configuration sources, lowest precedence first: defaults, `--config`,
/// `--set`, then the named flags.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// Flat key=value configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Any configuration key. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Interaction log path, or `synthetic`.
    #[arg(long, global = true)]
    data: Option<String>,
    /// Log field delimiter, one character or `tab`.
    #[arg(long, global = true)]
    delimiter: Option<String>,
    #[arg(long, global = true)]
    snapshots: Option<usize>,
    #[arg(long, global = true)]
    windows: Option<usize>,
    #[arg(long, global = true)]
    dim: Option<usize>,
    #[arg(long, global = true)]
    lr: Option<f64>,
    #[arg(long, global = true)]
    gamma1: Option<f64>,
    #[arg(long, global = true)]
    gamma2: Option<f64>,
    #[arg(long, global = true)]
    gamma3: Option<f64>,
    #[arg(long, global = true)]
    gamma4: Option<f64>,
    #[arg(long, global = true)]
    tau: Option<f64>,
    #[arg(long, global = true)]
    head_ratio: Option<f64>,
    #[arg(long, global = true)]
    theta: Option<u32>,
    /// `slope` or `threshold`.
    #[arg(long, global = true)]
    labeler: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Comma-separated seed list.
    #[arg(long, global = true)]
    seeds: Option<String>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// no_fair, no_class, no_contrast, no_deg, no_gru or none.
    #[arg(long, global = true)]
    ablate: Option<String>,
    #[arg(long, global = true)]
    backbone: Option<String>,
    /// Floating-point width of training.
    #[arg(long, global = true, value_enum, default_value_t = Precision::F64)]
    precision: Precision,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
enum Precision {
    #[default]
    #[value(name = "64")]
    F64,
    #[value(name = "32")]
    F32,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the snapshot sequence of the data source and write it out.
    Ingest {
        #[arg(long)]
        out: PathBuf,
    },
    /// Label every vertex and print group statistics.
    Label {
        /// Snapshot dump written by `ingest` instead of the data source.
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Write `vertex<TAB>label` lines here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also print the four threshold-crossing patterns.
        #[arg(long)]
        patterns: bool,
    },
    /// Write a synthetic interaction log and its planted labels.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Train and evaluate every seed, or continue a checkpoint.
    Train {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        #[arg(long)]
        checkpoint_every: Option<usize>,
        /// Continue this checkpoint; `--epochs` raises its budget.
        #[arg(long, conflicts_with = "checkpoint_dir")]
        resume: Option<PathBuf>,
    },
    /// Evaluate the embeddings stored in a checkpoint.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Metrics JSON path; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Full model against every switch, or only `--ablate`.
    Ablate {
        #[arg(long)]
        out: PathBuf,
    },
    /// A registered backbone trained without and with the fairness term.
    Plugin {
        backbone_name: String,
        #[arg(long)]
        out: PathBuf,
        /// `trend` or `degree`.
        #[arg(long, default_value = "trend")]
        grouping: FairGrouping,
        /// Only the run without the fairness term.
        #[arg(long)]
        without_fair: bool,
    },
    /// Mean epoch time on user subsamples.
    Scale {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',')]
        fractions: Vec<f64>,
    },
    /// Print the tables of a written report, optionally re-emitting them.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for pair in &self.set {
            let Some((k, v)) = pair.split_once('=') else {
                bail!("--set expects KEY=VALUE, got `{pair}`");
            };
            cfg.apply(k, v)?;
        }
        let flags: [(&str, Option<String>); 19] = [
            ("data", self.data.clone()),
            ("delimiter", self.delimiter.clone()),
            ("snapshots", self.snapshots.map(|x| x.to_string())),
            ("windows", self.windows.map(|x| x.to_string())),
            ("dim", self.dim.map(|x| x.to_string())),
            ("lr", self.lr.map(|x| x.to_string())),
            ("gamma1", self.gamma1.map(|x| x.to_string())),
            ("gamma2", self.gamma2.map(|x| x.to_string())),
            ("gamma3", self.gamma3.map(|x| x.to_string())),
            ("gamma4", self.gamma4.map(|x| x.to_string())),
            ("tau", self.tau.map(|x| x.to_string())),
            ("head_ratio", self.head_ratio.map(|x| x.to_string())),
            ("theta", self.theta.map(|x| x.to_string())),
            ("labeler", self.labeler.clone()),
            ("seed", self.seed.map(|x| x.to_string())),
            ("seeds", self.seeds.clone()),
            ("epochs", self.epochs.map(|x| x.to_string())),
            ("ablate", self.ablate.clone()),
            ("backbone", self.backbone.clone()),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.apply(k, &v).with_context(|| format!("--{}", k.replace('_', "-")))?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = cli.config.resolve()?;
    let precision = cli.config.precision;
    match cli.command {
        Command::Ingest { out } => ingest(&cfg, &out),
        Command::Label { graph, out, patterns } => label_vertices(&cfg, graph.as_deref(), out.as_deref(), patterns),
        Command::Synth { out, labels } => synth(&cfg, &out, labels.as_deref()),
        Command::Train {
            out,
            checkpoint_dir,
            checkpoint_every,
            resume,
        } => {
            let policy = CheckpointPolicy {
                dir: checkpoint_dir,
                every: checkpoint_every,
            };
            let report = match (resume, precision) {
                (Some(path), _) => match checkpoint_scalar(&path)?.as_str() {
                    "f32" => resume_run::<f32>(&path, cli.config.epochs)?,
                    _ => resume_run::<f64>(&path, cli.config.epochs)?,
                },
                (None, Precision::F64) => train::<f64>(&cfg, &policy)?,
                (None, Precision::F32) => train::<f32>(&cfg, &policy)?,
            };
            finish(&out, &report)
        }
        Command::Evaluate { checkpoint, out } => {
            let metrics = match checkpoint_scalar(&checkpoint)?.as_str() {
                "f32" => evaluate_checkpoint::<f32>(&checkpoint)?,
                _ => evaluate_checkpoint::<f64>(&checkpoint)?,
            };
            let json = serde_json::to_string_pretty(&metrics)?;
            match out {
                Some(path) => fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?,
                None => println!("{json}"),
            }
            Ok(())
        }
        Command::Ablate { out } => {
            let report = match precision {
                Precision::F64 => ablate::<f64>(&cfg)?,
                Precision::F32 => ablate::<f32>(&cfg)?,
            };
            finish(&out, &report)
        }
        Command::Plugin {
            backbone_name,
            out,
            grouping,
            without_fair,
        } => {
            let p = prepare(&cfg)?;
            let report = match precision {
                Precision::F64 => {
                    run_fairness_plugin(&backbone_name, !without_fair, grouping, &cfg, &p, &BackboneRegistry::<f64>::default())?
                }
                Precision::F32 => {
                    run_fairness_plugin(&backbone_name, !without_fair, grouping, &cfg, &p, &BackboneRegistry::<f32>::default())?
                }
            };
            finish(&out, &report)
        }
        Command::Scale { out, fractions } => {
            let fractions = if fractions.is_empty() { SCALE_FRACTIONS.to_vec() } else { fractions };
            let report = match precision {
                Precision::F64 => run_scalability(&cfg, &fractions, &BackboneRegistry::<f64>::default())?,
                Precision::F32 => run_scalability(&cfg, &fractions, &BackboneRegistry::<f32>::default())?,
            };
            for pt in &report.scalability {
                println!(
                    "fraction {:.2}: {} vertices, {} edges, {:.4} s per epoch",
                    pt.fraction, pt.vertices, pt.edges, pt.mean_epoch_seconds
                );
            }
            finish(&out, &report)
        }
        Command::Report { input, out } => {
            let report = read_report(&input)?;
            print_tables(&report);
            if let Some(dir) = out {
                emit_report(&dir, &report)?;
            }
            Ok(())
        }
    }
}

fn ingest(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let data = load_dataset(cfg)?;
    let g = build_snapshots(&data.records, cfg.snapshots, cfg.windows)?;
    write_snapshots(&g, out)?;
    println!("{} interactions, {} vertices", data.records.len(), g.num_vertices());
    for s in g.snapshots() {
        println!("snapshot {}: {} edges", s.index, s.edge_count());
    }
    Ok(())
}

fn label_vertices(cfg: &ExperimentConfig, graph: Option<&Path>, out: Option<&Path>, patterns: bool) -> Result<()> {
    let g: DynamicGraph = match graph {
        Some(path) => read_snapshots(path)?,
        None => build_snapshots(&load_dataset(cfg)?.records, cfg.snapshots, cfg.windows)?,
    };
    let series = degree_series(&g);
    let labels = label(&series, &cfg.labeler)?;
    println!("group\tcount\tratio\tmean degree per snapshot");
    for (l, s) in group_statistics(&labels, &series, &EvolutionLabel::ALL)? {
        let means = s
            .mean_degree
            .map(|m| m.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(","))
            .unwrap_or_else(|| "-".into());
        println!("{l}\t{}\t{:.4}\t{means}", s.count, s.ratio);
    }
    if patterns {
        let found = pattern_threshold(&series, cfg.labeler.degree_threshold);
        let mut counts: BTreeMap<&str, usize> = DegreePattern::ALL.iter().map(|p| (p.as_str(), 0)).collect();
        for p in found.values() {
            *counts.entry(p.as_str()).or_default() += 1;
        }
        println!("pattern\tcount\tpercent");
        for p in DegreePattern::ALL {
            let c = counts[p.as_str()];
            println!("{}\t{c}\t{:.2}", p.as_str(), 100.0 * c as f64 / series.len().max(1) as f64);
        }
    }
    if let Some(path) = out {
        write_labels(&labels, g.names(), path)?;
        info!("labels written to {}", path.display());
    }
    Ok(())
}

fn synth(cfg: &ExperimentConfig, out: &Path, labels: Option<&Path>) -> Result<()> {
    let DataSource::Synthetic(spec) = &cfg.data else {
        bail!("synth needs the synthetic data source");
    };
    let d = generate_synthetic(spec, cfg.snapshots, cfg.data_seed)?;
    write_log(&d.records, out, ',')?;
    println!("{} interactions written to {}", d.records.len(), out.display());
    if let Some(path) = labels {
        let names: Vec<String> = d.planted.keys().cloned().collect();
        let by_index = d.planted.values().copied().enumerate().collect();
        write_labels(&by_index, &names, path)?;
    }
    Ok(())
}

fn train<T: Scalar>(cfg: &ExperimentConfig, policy: &CheckpointPolicy) -> Result<ExperimentReport> {
    let p = prepare(cfg)?;
    if let Some(dir) = &policy.dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(run_experiment_with(cfg, &p, &BackboneRegistry::<T>::default(), policy)?)
}

fn checkpoint_scalar(path: &Path) -> Result<String> {
    Ok(checkpoint::load::<f64>(path)?.header.scalar)
}

fn resume_run<T: Scalar>(path: &Path, epochs: Option<usize>) -> Result<ExperimentReport> {
    let header = checkpoint::load::<f64>(path)?.header;
    let cfg = header.config;
    let p = prepare(&cfg)?;
    let registry = BackboneRegistry::<T>::default();
    let data = TrainingData::<T>::new(&p, &cfg)?;
    let mut t = Trainer::resume(path, &data, &registry)?;
    if let Some(e) = epochs {
        t.cfg.epochs = e;
    }
    info!("resuming seed {} at epoch {}", t.seed, t.epoch);
    let run = complete_run(&mut t, &p, Some(path), None)?;
    let name = cfg.ablation.map_or("full", Ablation::as_str);
    Ok(single_run_report("train", name, &cfg, &p, run)?)
}

fn evaluate_checkpoint<T: Scalar>(path: &Path) -> Result<trendfair::metrics::MetricsReport> {
    let cfg = checkpoint::load::<f64>(path)?.header.config;
    let p = prepare(&cfg)?;
    let registry = BackboneRegistry::<T>::default();
    let data = TrainingData::<T>::new(&p, &cfg)?;
    let t = Trainer::resume(path, &data, &registry)?;
    Ok(evaluate_embeddings(&t.embeddings(), &p, &t.cfg)?)
}

fn ablate<T: Scalar>(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let p = prepare(cfg)?;
    let switches: Vec<Ablation> = match cfg.ablation {
        Some(a) => vec![a],
        None => Ablation::ALL.to_vec(),
    };
    info!(
        "training groups: {:?}",
        training_group_statistics(&p)?
            .iter()
            .map(|(k, v)| (k.clone(), v.count))
            .collect::<Vec<_>>()
    );
    Ok(run_ablation_suite(cfg, &switches, &p, &BackboneRegistry::<T>::default())?)
}

fn print_tables(report: &ExperimentReport) {
    if !report.variants.is_empty() {
        print!("{}", summary_csv(report));
    }
    if !report.group_statistics.is_empty() {
        print!("{}", group_statistics_csv(report));
    }
}

fn finish(out: &Path, report: &ExperimentReport) -> Result<()> {
    let files = emit_report(out, report)?;
    print_tables(report);
    for f in files {
        info!("wrote {}", f.display());
    }
    Ok(())
}
