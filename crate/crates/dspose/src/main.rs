//! Command-line front end: dataset synthesis, training, single-image
//! estimation and metric evaluation.
//!
//! Exit codes: 0 success, 1 validation error (bad flags, bad config,
//! out-of-range arguments), 2 runtime error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use dspose::config::RunConfig;
use dspose::dataset::DatasetManifest;
use dspose::eval::{mean_normalized_error, pcp, pdj_curve, pdj_curve_for_joints, PcpResult};
use dspose::net::{InputSources, NetworkParams};
use dspose::pipeline;
use dspose::plot::Series;
use dspose::sampling::torso_diameter;

#[derive(Parser)]
#[command(name = "dspose", version, about = "Dual-source patch-based pose estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override every per-stage seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path).map_err(|e| CliError::Validation(e.to_string()))?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.figure.seed = seed;
            cfg.sampling.seed = seed;
            cfg.train.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SourceVariant {
    Part,
    Body,
    Dual,
}

impl SourceVariant {
    fn sources(self) -> InputSources {
        match self {
            SourceVariant::Part => InputSources::PartOnly,
            SourceVariant::Body => InputSources::BodyOnly,
            SourceVariant::Dual => InputSources::Dual,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic figure dataset (PNGs plus manifest.json).
    Synth {
        #[command(flatten)]
        config: ConfigArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Number of images.
        #[arg(long)]
        count: usize,
    },
    /// Train a network on a dataset and write a JSON checkpoint.
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Path to a dataset manifest.json.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        /// Train on samples [skip, skip + limit).
        #[arg(long, default_value_t = 0)]
        skip: usize,
        #[arg(long)]
        limit: Option<usize>,
        /// Continue from an existing checkpoint instead of initializing.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Restrict the network input to one source family.
        #[arg(long, value_enum)]
        ablation: Option<SourceVariant>,
        /// Per-epoch loss CSV output.
        #[arg(long)]
        history: Option<PathBuf>,
        /// Optional SVG loss-curve output.
        #[arg(long)]
        loss_plot: Option<PathBuf>,
    },
    /// Estimate the pose of one dataset sample.
    Estimate {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Sample index within the manifest.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Pose JSON output path.
        #[arg(long)]
        out: PathBuf,
        /// Directory for per-joint heatmap PGMs (optional).
        #[arg(long)]
        heatmaps: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset: PCP, PDJ curve, mean error.
    Eval {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Evaluate samples [skip, skip + limit).
        #[arg(long, default_value_t = 0)]
        skip: usize,
        #[arg(long)]
        limit: Option<usize>,
        /// JSON report output path (stdout summary is always printed).
        #[arg(long)]
        out: Option<PathBuf>,
        /// PDJ CSV output: one row per threshold fraction.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Optional SVG of the PDJ curve per joint group.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Train part-only, body-only and dual variants and compare their
    /// patch-detection mAP on a held-out split.
    Ablation {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        /// Number of leading samples used for training; the rest are the
        /// held-out split.
        #[arg(long)]
        train_count: usize,
        /// CSV report output path (variant, map).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum CliError {
    Validation(String),
    Runtime(String),
}

impl<E: std::error::Error> From<E> for CliError {
    fn from(err: E) -> Self {
        CliError::Runtime(err.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() {
                ExitCode::from(1) // bad flags are validation errors
            } else {
                ExitCode::SUCCESS // --help / --version
            };
        }
    };
    if let Ok(threads) = std::env::var("DSPOSE_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn split_indices(total: usize, skip: usize, limit: Option<usize>) -> Result<Vec<usize>, CliError> {
    if skip >= total {
        return Err(CliError::Validation(format!(
            "skip {skip} is beyond the dataset ({total} samples)"
        )));
    }
    let end = match limit {
        Some(n) => (skip + n).min(total),
        None => total,
    };
    Ok((skip..end).collect())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), CliError> {
    std::fs::write(
        path,
        serde_json::to_string_pretty(value).expect("serializable report"),
    )?;
    Ok(())
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth { config, out, count } => {
            let cfg = config.load()?;
            let path = dspose::dataset::write_synthetic_dataset(&cfg.figure, count, &out)?;
            println!("wrote {count} images and {}", path.display());
        }
        Command::Train {
            config,
            data,
            out,
            skip,
            limit,
            resume,
            ablation,
            history,
            loss_plot,
        } => {
            let mut cfg = config.load()?;
            if let Some(variant) = ablation {
                cfg.net.sources = variant.sources();
            }
            let manifest = DatasetManifest::load(&data)?;
            let indices = split_indices(manifest.samples.len(), skip, limit)?;
            let samples =
                pipeline::prepare_samples(&manifest, &data, &cfg.sampling, &cfg.net, &indices)?;
            println!(
                "training on {} patch pairs from {} images",
                dspose::training::SampleSource::len(&samples),
                indices.len()
            );
            let on_epoch = |stats: &dspose::training::EpochStats, params: &NetworkParams| {
                println!(
                    "epoch {:>3}  lr {:.5}  loss {:.5}  (det {:.5}, loc {:.5})",
                    stats.epoch,
                    stats.learning_rate,
                    stats.mean_loss,
                    stats.mean_det_loss,
                    stats.mean_loc_loss
                );
                if cfg.train.checkpoint_every > 0
                    && (stats.epoch + 1) % cfg.train.checkpoint_every == 0
                {
                    let path = out.with_extension(format!("epoch{}.json", stats.epoch));
                    if let Err(err) = params.save(&path) {
                        eprintln!("warning: failed to write {}: {err}", path.display());
                    }
                }
            };
            let (params, epochs) = match resume {
                Some(ckpt) => {
                    let mut params = NetworkParams::load(&ckpt)?;
                    if params.spec != cfg.net {
                        return Err(CliError::Validation(
                            "checkpoint network shape differs from the configured one".into(),
                        ));
                    }
                    let epochs =
                        dspose::training::train(&samples, &mut params, &cfg.train, on_epoch)?;
                    (params, epochs)
                }
                None => pipeline::train_network(&samples, &cfg.net, &cfg.train, on_epoch)?,
            };
            params.save(&out)?;
            println!("wrote {}", out.display());
            if let Some(path) = history {
                let mut csv = String::from("epoch,learning_rate,loss,detection_loss,localization_loss\n");
                for s in &epochs {
                    writeln!(
                        csv,
                        "{},{},{},{},{}",
                        s.epoch, s.learning_rate, s.mean_loss, s.mean_det_loss, s.mean_loc_loss
                    )
                    .expect("in-memory write");
                }
                std::fs::write(&path, csv)?;
                println!("wrote {}", path.display());
            }
            if let Some(plot_path) = loss_plot {
                let series = vec![
                    Series {
                        name: "total".into(),
                        points: epochs.iter().map(|s| (s.epoch as f64, s.mean_loss)).collect(),
                    },
                    Series {
                        name: "detection".into(),
                        points: epochs
                            .iter()
                            .map(|s| (s.epoch as f64, s.mean_det_loss))
                            .collect(),
                    },
                    Series {
                        name: "localization".into(),
                        points: epochs
                            .iter()
                            .map(|s| (s.epoch as f64, s.mean_loc_loss))
                            .collect(),
                    },
                ];
                dspose::plot::write_line_chart(
                    &plot_path,
                    "training loss",
                    "epoch",
                    "mean loss",
                    &series,
                )?;
                println!("wrote {}", plot_path.display());
            }
        }
        Command::Estimate {
            config,
            data,
            checkpoint,
            index,
            out,
            heatmaps,
        } => {
            let cfg = config.load()?;
            let manifest = DatasetManifest::load(&data)?;
            if index >= manifest.samples.len() {
                return Err(CliError::Validation(format!(
                    "sample index {index} out of range (dataset has {})",
                    manifest.samples.len()
                )));
            }
            let params = NetworkParams::load(&checkpoint)?;
            let record = &manifest.samples[index];
            let image = manifest.load_sample_image(&data, record)?;
            let d = torso_diameter(&manifest.pose(record), manifest.torso_pair);
            let pairs = dspose::inference::run_windows(&image, &params, d, &cfg.sampling)?;
            let body = dspose::inference::whole_image_patch(image.width(), image.height());
            let estimate = dspose::inference::estimate_from_outputs(
                &pairs,
                (image.width(), image.height()),
                params.spec.joints,
                &body,
                &cfg.inference,
            )?;
            write_json(&out, &estimate)?;
            println!("wrote {}", out.display());
            if let Some(dir) = heatmaps {
                std::fs::create_dir_all(&dir)?;
                let maps = dspose::inference::build_heatmaps(
                    &pairs,
                    (image.width(), image.height()),
                    params.spec.joints,
                    cfg.inference.argmax_includes_background,
                );
                let mut scales = Vec::new();
                for i in 0..params.spec.joints {
                    let name = &manifest.joint_names[i];
                    let path = dir.join(format!("{i:02}_{name}.pgm"));
                    let (min, max) = dspose::imageio::write_pgm16(maps.joint(i), &path)?;
                    scales.push(serde_json::json!({
                        "joint": name,
                        "file": path.file_name().unwrap().to_string_lossy(),
                        "min": min,
                        "max": max,
                    }));
                }
                write_json(&dir.join("scales.json"), &scales)?;
                println!("wrote {} heatmaps to {}", params.spec.joints, dir.display());
            }
        }
        Command::Eval {
            config,
            data,
            checkpoint,
            skip,
            limit,
            out,
            csv,
            plot,
        } => {
            let cfg = config.load()?;
            let manifest = DatasetManifest::load(&data)?;
            let params = NetworkParams::load(&checkpoint)?;
            let indices = split_indices(manifest.samples.len(), skip, limit)?;
            let scored = pipeline::evaluate_split(&manifest, &data, &indices, &params, &cfg)?;

            let mut pcp_total = PcpResult::default();
            for s in &scored {
                pcp_total.merge(&pcp(&s.estimate, &s.truth, &manifest.limbs)?);
            }
            let fractions: Vec<f64> = (0..=10).map(|i| i as f64 * 0.05).collect();
            let curve = pdj_curve(&scored, &fractions)?;
            let mut group_curves = Vec::new();
            for (name, group) in &manifest.joint_groups {
                group_curves.push((name.clone(), pdj_curve_for_joints(&scored, group, &fractions)?));
            }
            let mean_err = mean_normalized_error(&scored)?;
            println!(
                "images {}  PCP {:.3}  PDJ@0.5 {:.3}  mean error {:.3} d",
                scored.len(),
                pcp_total.rate(),
                curve.last().copied().unwrap_or(0.0),
                mean_err
            );
            if let Some(path) = out {
                let report = serde_json::json!({
                    "images": scored.len(),
                    "pcp": pcp_total,
                    "pdj_fractions": fractions,
                    "pdj": curve,
                    "pdj_groups": group_curves,
                    "mean_normalized_error": mean_err,
                });
                write_json(&path, &report)?;
                println!("wrote {}", path.display());
            }
            if let Some(path) = csv {
                let mut text = String::from("fraction,pdj_all");
                for (name, _) in &group_curves {
                    write!(text, ",pdj_{name}").expect("in-memory write");
                }
                text.push('\n');
                for (i, f) in fractions.iter().enumerate() {
                    write!(text, "{f},{}", curve[i]).expect("in-memory write");
                    for (_, c) in &group_curves {
                        write!(text, ",{}", c[i]).expect("in-memory write");
                    }
                    text.push('\n');
                }
                std::fs::write(&path, text)?;
                println!("wrote {}", path.display());
            }
            if let Some(path) = plot {
                let mut series = vec![Series {
                    name: "all joints".into(),
                    points: fractions.iter().copied().zip(curve.iter().copied()).collect(),
                }];
                for (name, c) in &group_curves {
                    series.push(Series {
                        name: name.clone(),
                        points: fractions.iter().copied().zip(c.iter().copied()).collect(),
                    });
                }
                dspose::plot::write_line_chart(
                    &path,
                    "PDJ vs threshold",
                    "threshold (fraction of torso diameter)",
                    "PDJ",
                    &series,
                )?;
                println!("wrote {}", path.display());
            }
        }
        Command::Ablation {
            config,
            data,
            train_count,
            out,
        } => {
            let cfg = config.load()?;
            let manifest = DatasetManifest::load(&data)?;
            let total = manifest.samples.len();
            if train_count == 0 || train_count >= total {
                return Err(CliError::Validation(format!(
                    "train_count must be in [1, {total}), got {train_count}"
                )));
            }
            let train_idx: Vec<usize> = (0..train_count).collect();
            let test_idx: Vec<usize> = (train_count..total).collect();
            let train_samples =
                pipeline::prepare_samples(&manifest, &data, &cfg.sampling, &cfg.net, &train_idx)?;
            let test_samples =
                pipeline::prepare_samples(&manifest, &data, &cfg.sampling, &cfg.net, &test_idx)?;
            let result =
                pipeline::run_ablation(&train_samples, &test_samples, &cfg.net, &cfg.train)?;
            println!(
                "detection mAP  part-only {:.3}  body-only {:.3}  dual {:.3}",
                result.part_only, result.body_only, result.dual
            );
            if let Some(path) = out {
                let csv = format!(
                    "variant,map\npart_only,{}\nbody_only,{}\ndual,{}\n",
                    result.part_only, result.body_only, result.dual
                );
                std::fs::write(&path, csv)?;
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}
