//! Command-line entry point: dataset synthesis, training, evaluation,
//! gradient verification, ablation grids, and feature export.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use sfhead::backbone::BackboneConfig;
use sfhead::data::{load_dataset, save_dataset, DatasetManifest, SkeletonGraph, SkeletonSequence};
use sfhead::gradcheck::run_suite;
use sfhead::losses::LossConfig;
use sfhead::sf_head::SfHeadConfig;
use sfhead::synth::{synth_generate, SynthSpec};
use sfhead::trainer::{
    evaluate, export_features, group_deltas, load_checkpoint, run_ablation, save_checkpoint,
    train, AblationGrid, MetricsReport, Model, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "sfhead",
    version,
    about = "Skeleton-based action recognition with an auxiliary synchronized feature head"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Profile {
    /// Two-block backbone, 30 epochs, batch 32.
    Tiny,
    /// Ten-block backbone, 90 epochs, batch 64.
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Grid {
    Submodules,
    Dimensions,
}

#[derive(Args, Clone)]
struct ModelOpts {
    #[arg(long, value_enum, default_value = "tiny")]
    profile: Profile,
    /// Backbone blocks hosting the auxiliary head (comma list).
    #[arg(long, value_delimiter = ',')]
    attach_blocks: Option<Vec<usize>>,
    /// Channel group count in the head (default: 1 for tiny, 2 for paper).
    #[arg(long)]
    groups: Option<usize>,
    /// Aggregation weights: channel, temporal, spatial, original.
    #[arg(long, value_delimiter = ',', num_args = 4)]
    eta: Option<Vec<f64>>,
}

#[derive(Args, Clone)]
struct LossOpts {
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    tau: f64,
    #[arg(long, default_value_t = 0.4)]
    m_scale: f64,
    #[arg(long, default_value_t = 0.4)]
    m_margin: f64,
    #[arg(long, default_value_t = 2.0)]
    gamma: f64,
    #[arg(long, default_value_t = 0.05)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.2)]
    lambda_con: f64,
    #[arg(long, default_value_t = 0.1)]
    lambda_red: f64,
    /// Use the degenerate (constant) redundancy form.
    #[arg(long)]
    frl_literal: bool,
}

#[derive(Args, Clone)]
struct AblationOpts {
    #[arg(long)]
    no_sste: bool,
    #[arg(long)]
    no_acfa: bool,
    #[arg(long)]
    no_frcl: bool,
    #[arg(long)]
    no_acda: bool,
    #[arg(long)]
    no_atda: bool,
    #[arg(long)]
    no_asda: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic ambiguous-action dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        samples_per_class: usize,
        #[arg(long, default_value_t = 32)]
        t_target: usize,
        /// Wrist amplitude factor separating the wave pair.
        #[arg(long)]
        amp_scale: Option<f64>,
        /// Cycle-fraction offset separating the raise pair.
        #[arg(long)]
        phase_offset: Option<f64>,
        /// Coordinate noise std-dev in meters.
        #[arg(long)]
        noise_sigma: Option<f64>,
        /// Half-width of the random time-warp interval.
        #[arg(long)]
        time_warp: Option<f64>,
    },
    /// Train a model; writes metrics.jsonl and model.ckpt into --out.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[command(flatten)]
        model: ModelOpts,
        #[command(flatten)]
        loss: LossOpts,
        #[command(flatten)]
        ablation: AblationOpts,
    },
    /// Evaluate a checkpoint on a dataset (inference path only).
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Earlier eval report (JSON) to compute ambiguous-group deltas against.
        #[arg(long)]
        baseline_report: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        model: ModelOpts,
    },
    /// Run the 64-bit gradient verification suite.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        instances: usize,
    },
    /// Train every row of an ablation grid and print the comparison table.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        grid: Grid,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[command(flatten)]
        model: ModelOpts,
        #[command(flatten)]
        loss: LossOpts,
    },
    /// Export pooled tap features as CSV.
    Export {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Tap block index to export from.
        #[arg(long, default_value_t = 1)]
        layer: usize,
        #[command(flatten)]
        model: ModelOpts,
    },
}

fn backbone_config(profile: Profile, manifest: &DatasetManifest) -> BackboneConfig {
    match profile {
        Profile::Tiny => BackboneConfig::tiny(manifest.num_classes(), manifest.joints),
        Profile::Paper => BackboneConfig::paper_scale(manifest.num_classes(), manifest.joints),
    }
}

fn head_config(opts: &ModelOpts) -> SfHeadConfig {
    let attach_blocks = opts.attach_blocks.clone().unwrap_or_else(|| match opts.profile {
        Profile::Tiny => vec![1],
        Profile::Paper => vec![4, 6, 8],
    });
    // At tiny width a group count of 2 leaves two-channel branches, too
    // narrow for the feature losses to shape anything; one group keeps the
    // branches four channels wide.
    let groups = opts.groups.unwrap_or(match opts.profile {
        Profile::Tiny => 1,
        Profile::Paper => 2,
    });
    let mut cfg = SfHeadConfig { groups, attach_blocks, ..SfHeadConfig::default() };
    if let Some(eta) = &opts.eta {
        cfg.eta = [eta[0], eta[1], eta[2], eta[3]];
    }
    cfg
}

fn loss_config(opts: &LossOpts) -> LossConfig {
    LossConfig {
        alpha: opts.alpha,
        tau: opts.tau,
        m_scale: opts.m_scale,
        m_margin: opts.m_margin,
        gamma: opts.gamma,
        epsilon: opts.epsilon,
        lambda_con: opts.lambda_con,
        lambda_red: opts.lambda_red,
        frl_literal: opts.frl_literal,
    }
}

fn train_config(
    profile: Profile,
    seed: u64,
    epochs: Option<usize>,
    batch_size: Option<usize>,
    ab: &AblationOpts,
) -> TrainConfig {
    let mut cfg = match profile {
        Profile::Tiny => TrainConfig::desk(seed),
        Profile::Paper => TrainConfig::paper(seed),
    };
    if let Some(e) = epochs {
        cfg.epochs = e;
        cfg.warmup_epochs = cfg.warmup_epochs.min(e as f64 / 2.0);
    }
    if let Some(b) = batch_size {
        cfg.batch_size = b;
    }
    cfg.sste = !ab.no_sste;
    cfg.acfa = !ab.no_acfa;
    cfg.frcl = !ab.no_frcl;
    cfg.acda = !ab.no_acda;
    cfg.atda = !ab.no_atda;
    cfg.asda = !ab.no_asda;
    cfg
}

fn load_data(dir: &Path) -> Result<(DatasetManifest, Vec<SkeletonSequence>, SkeletonGraph), String> {
    let (manifest, sequences) = load_dataset(dir).map_err(|e| format!("loading {dir:?}: {e}"))?;
    let graph = SkeletonGraph::new(&manifest.edge_pairs(), manifest.joints)
        .map_err(|e| format!("dataset graph: {e}"))?;
    Ok((manifest, sequences, graph))
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.cmd {
        Cmd::Synth {
            out,
            seed,
            samples_per_class,
            t_target,
            amp_scale,
            phase_offset,
            noise_sigma,
            time_warp,
        } => {
            let mut spec = SynthSpec::default_four_class(samples_per_class, t_target);
            if let Some(a) = amp_scale {
                spec.classes[1].perturbation = sfhead::synth::Perturbation::AmplitudeScale(a);
            }
            if let Some(p) = phase_offset {
                spec.classes[3].perturbation = sfhead::synth::Perturbation::PhaseOffset(p);
            }
            if let Some(s) = noise_sigma {
                spec.noise_sigma = s;
            }
            if let Some(w) = time_warp {
                spec.time_warp = w;
            }
            let (manifest, sequences) = synth_generate(&spec, seed).map_err(|e| e.to_string())?;
            std::fs::create_dir_all(&out).map_err(|e| e.to_string())?;
            save_dataset(&out, &manifest, &sequences).map_err(|e| e.to_string())?;
            println!(
                "wrote {} samples ({} classes, T={}) to {}",
                manifest.count,
                manifest.num_classes(),
                manifest.t_target,
                out.display()
            );
            Ok(())
        }
        Cmd::Train { data, out, seed, epochs, batch_size, model, loss, ablation } => {
            let (manifest, sequences, graph) = load_data(&data)?;
            let bb_cfg = backbone_config(model.profile, &manifest);
            let head_cfg = head_config(&model);
            let cfg = train_config(model.profile, seed, epochs, batch_size, &ablation);
            let loss_cfg = loss_config(&loss);
            loss_cfg.validate();
            let m = Model::new(bb_cfg, head_cfg, &graph, seed);
            println!("backbone parameters: {}", m.backbone.param_count());
            println!("auxiliary head parameters: {}", m.head.param_count());
            std::fs::create_dir_all(&out).map_err(|e| e.to_string())?;
            let mut metrics_file = BufWriter::new(
                File::create(out.join("metrics.jsonl")).map_err(|e| e.to_string())?,
            );
            let outcome = train(&m, &sequences, &manifest.class_names, &cfg, &loss_cfg, Some(&mut metrics_file))
                .map_err(|e| e.to_string())?;
            metrics_file.flush().map_err(|e| e.to_string())?;
            save_checkpoint(&out.join("model.ckpt"), &m, true, seed, cfg.epochs)
                .map_err(|e| e.to_string())?;
            if let Some(last) = outcome.metrics.last() {
                println!(
                    "epoch {}: total {:.4}, train acc {:.2}%, val acc {:.2}%",
                    last.epoch, last.total, last.train_acc, last.val_acc
                );
            }
            Ok(())
        }
        Cmd::Eval { data, checkpoint, out, baseline_report, seed, model } => {
            let (manifest, sequences, graph) = load_data(&data)?;
            let bb_cfg = backbone_config(model.profile, &manifest);
            let head_cfg = head_config(&model);
            let m = Model::new(bb_cfg, head_cfg, &graph, seed);
            let info = load_checkpoint(&checkpoint, &m).map_err(|e| e.to_string())?;
            if !info.head_loaded {
                println!("checkpoint carries backbone state only; head left at init");
            }
            let all: Vec<usize> = (0..sequences.len()).collect();
            let report = evaluate(&m.backbone, &sequences, &all, &manifest.class_names)
                .map_err(|e| e.to_string())?;
            print!("{}", report.render());
            if let Some(base_path) = baseline_report {
                let text = std::fs::read_to_string(&base_path).map_err(|e| e.to_string())?;
                let baseline: MetricsReport = serde_json::from_str(&text)
                    .map_err(|e| format!("baseline report parse: {e}"))?;
                println!("ambiguous-group deltas vs {}:", base_path.display());
                for (group, delta) in group_deltas(&report, &baseline) {
                    println!("  {group:<28} {delta:+.2} pp");
                }
            }
            if let Some(path) = out {
                std::fs::write(&path, serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?)
                    .map_err(|e| e.to_string())?;
            }
            Ok(())
        }
        Cmd::Gradcheck { seed, instances } => {
            let report = run_suite(seed, instances);
            print!("{}", report.render());
            if report.all_passed() {
                Ok(())
            } else {
                Err("gradient check failed".to_string())
            }
        }
        Cmd::Ablate { data, grid, out, seed, epochs, batch_size, model, loss } => {
            let (manifest, sequences, graph) = load_data(&data)?;
            let bb_cfg = backbone_config(model.profile, &manifest);
            let head_cfg = head_config(&model);
            let base = train_config(model.profile, seed, epochs, batch_size, &AblationOpts {
                no_sste: false,
                no_acfa: false,
                no_frcl: false,
                no_acda: false,
                no_atda: false,
                no_asda: false,
            });
            let loss_cfg = loss_config(&loss);
            let grid = match grid {
                Grid::Submodules => AblationGrid::Submodules,
                Grid::Dimensions => AblationGrid::Dimensions,
            };
            let rows = run_ablation(
                grid, &base, &bb_cfg, &head_cfg, &loss_cfg, &graph, &sequences,
                &manifest.class_names,
            )
            .map_err(|e| e.to_string())?;
            println!("{:<24} val acc", "configuration");
            for r in &rows {
                println!("{:<24} {:.2}%", r.label, r.val_acc);
            }
            if let Some(path) = out {
                std::fs::write(&path, serde_json::to_string_pretty(&rows).map_err(|e| e.to_string())?)
                    .map_err(|e| e.to_string())?;
            }
            Ok(())
        }
        Cmd::Export { data, checkpoint, out, layer, model } => {
            let (manifest, sequences, graph) = load_data(&data)?;
            let bb_cfg = backbone_config(model.profile, &manifest);
            if layer >= bb_cfg.block_channels.len() {
                return Err(format!(
                    "layer {layer} out of range: backbone has {} blocks",
                    bb_cfg.block_channels.len()
                ));
            }
            let head_cfg = head_config(&model);
            let m = Model::new(bb_cfg, head_cfg, &graph, 0);
            load_checkpoint(&checkpoint, &m).map_err(|e| e.to_string())?;
            let mut w = BufWriter::new(File::create(&out).map_err(|e| e.to_string())?);
            export_features(&m.backbone, &sequences, layer, &mut w).map_err(|e| e.to_string())?;
            w.flush().map_err(|e| e.to_string())?;
            println!("wrote {} feature rows to {}", sequences.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    // Configuration validators assert; surface those as ordinary CLI errors
    // (exit 1) rather than a panic trace.
    std::panic::set_hook(Box::new(|info| {
        let msg = info
            .payload()
            .downcast_ref::<String>()
            .map(String::as_str)
            .or_else(|| info.payload().downcast_ref::<&str>().copied())
            .unwrap_or("internal error");
        eprintln!("error: {msg}");
    }));
    let outcome = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| run(cli)));
    let _ = std::panic::take_hook();
    match outcome {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
        Err(_) => ExitCode::FAILURE,
    }
}
