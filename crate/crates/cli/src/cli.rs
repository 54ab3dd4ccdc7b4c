use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ilvm_core::dataset::DatasetManifest;
use ilvm_core::model::ModelKind;
use ilvm_core::planner::CostWeights;

use crate::commands::{self, Loaded, SampleFile, SampleSource};
use crate::config::ExperimentConfig;
use crate::error::{usage, CliResult};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "ILVM_OUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "ilvm",
    version,
    about = "Joint multi-actor motion forecasting toolkit"
)]
pub struct Cli {
    /// Output directory for every command.
    #[arg(long, global = true, env = OUT_DIR_ENV, default_value = "ilvm-out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Default)]
pub struct Overrides {
    /// Override a config field, e.g. `--set train.steps=500`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Default)]
pub struct SceneArgs {
    /// Scene file: a `.jsonl` split or JSON with one scene or an array.
    /// Defaults to the test split of the dataset.
    #[arg(long)]
    pub scenes: Option<PathBuf>,
    #[arg(long, conflicts_with = "index")]
    pub scene_id: Option<u64>,
    #[arg(long)]
    pub index: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic dataset.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Standalone dataset manifest replacing `data.manifest`.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Train a model on the training split and write a checkpoint.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint path (default `<out>/checkpoint`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        model: Option<ModelKind>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Draw joint samples for scenes.
    Sample {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        scenes: SceneArgs,
        /// Sample only the first N scenes.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        /// Render overlays for at most this many scenes.
        #[arg(long, default_value_t = 10)]
        svg_limit: usize,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Score samples against the ground truth.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Config used when no checkpoint is given.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Evaluate a `samples.json` instead of sampling a model.
        #[arg(long)]
        from_samples: Option<PathBuf>,
        #[arg(long)]
        scenes: Option<PathBuf>,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        /// Use squared displacement errors.
        #[arg(long)]
        squared: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Pick an ego trajectory by expected cost under model samples.
    Plan {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        scenes: SceneArgs,
        #[arg(long)]
        samples: Option<usize>,
        /// Index of the self-driving actor in the scene.
        #[arg(long)]
        sdv: Option<usize>,
        /// Cost weights as JSON, e.g. `{"w_collision":1,"w_progress":0}`.
        #[arg(long)]
        weights: Option<String>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Decode along the segment between two distinct prior samples.
    Interpolate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[command(flatten)]
        scenes: SceneArgs,
        #[arg(long, default_value_t = 5)]
        steps: usize,
        /// Prior samples to choose the two endpoints from.
        #[arg(long, default_value_t = 15)]
        pool: usize,
        #[command(flatten)]
        overrides: Overrides,
    },
}

fn base_config(path: Option<&Path>) -> CliResult<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn apply(cfg: ExperimentConfig, o: &Overrides) -> CliResult<ExperimentConfig> {
    let mut cfg = cfg.with_assignments(&o.sets)?;
    if let Some(s) = o.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn checkpoint_or_default(out: &Path, p: &Option<PathBuf>) -> PathBuf {
    p.clone().unwrap_or_else(|| out.join("checkpoint.json"))
}

fn load_with(out: &Path, ckpt: &Option<PathBuf>, o: &Overrides) -> CliResult<Loaded> {
    let mut l = commands::load_checkpoint(&checkpoint_or_default(out, ckpt))?;
    l.config = apply(l.config, o)?;
    Ok(l)
}

fn scene_file(out: &Path, cfg: &ExperimentConfig, given: &Option<PathBuf>, split: &str) -> PathBuf {
    given
        .clone()
        .unwrap_or_else(|| cfg.data_dir(out).join(format!("{split}.jsonl")))
}

fn report(paths: &[PathBuf]) {
    for p in paths {
        println!("wrote {}", p.display());
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let out = cli.out.as_path();
    match cli.command {
        Command::GenData {
            config,
            manifest,
            overrides,
        } => {
            let cfg = apply(base_config(config.as_deref())?, &overrides)?;
            let manifest = match manifest {
                Some(p) => {
                    let text = std::fs::read_to_string(&p)
                        .map_err(|e| usage(format!("{}: {e}", p.display())))?;
                    Some(
                        serde_json::from_str::<DatasetManifest>(&text)
                            .map_err(|e| usage(format!("{}: {e}", p.display())))?,
                    )
                }
                None => None,
            };
            report(&commands::gen_data(out, &cfg, manifest)?);
        }
        Command::Train {
            config,
            checkpoint,
            steps,
            model,
            overrides,
        } => {
            let mut cfg = apply(base_config(config.as_deref())?, &overrides)?;
            if let Some(s) = steps {
                cfg.train.steps = s;
            }
            if let Some(m) = model {
                cfg.model = m;
            }
            let s = commands::train_cmd(out, &cfg, checkpoint)?;
            if let Some(r) = s.final_record {
                println!(
                    "step {} recon {:.5} kl {:.5} total {:.5}",
                    r.step, r.recon, r.kl, r.total
                );
            }
            println!(
                "checkpoint {} sha256 {}",
                s.checkpoint.display(),
                s.blob_sha256
            );
            report(&s.written);
        }
        Command::Sample {
            checkpoint,
            scenes,
            limit,
            samples,
            svg_limit,
            overrides,
        } => {
            let mut l = load_with(out, &checkpoint, &overrides)?;
            if let Some(s) = samples {
                l.config.eval.samples = s;
            }
            let file = scene_file(out, &l.config, &scenes.scenes, "test");
            let picked = commands::select(
                commands::load_scenes(&file)?,
                scenes.scene_id,
                scenes.index,
                limit,
            )?;
            let (json, svgs) =
                commands::sample_cmd(out, &l, &picked, l.config.eval.samples, svg_limit)?;
            report(&[json]);
            report(&svgs);
        }
        Command::Eval {
            checkpoint,
            config,
            from_samples,
            scenes,
            limit,
            samples,
            squared,
            overrides,
        } => {
            // without a sample file the checkpoint (default path if absent) is required
            let loaded = if from_samples.is_none() || checkpoint.is_some() {
                Some(load_with(out, &checkpoint, &overrides)?)
            } else {
                None
            };
            let mut cfg = match &loaded {
                Some(l) => l.config.clone(),
                None => apply(base_config(config.as_deref())?, &overrides)?,
            };
            if let Some(s) = samples {
                cfg.eval.samples = s;
            }
            if limit.is_some() {
                cfg.eval.limit = limit;
            }
            cfg.eval.metrics.squared |= squared;
            if cfg.eval.samples == 0 {
                return Err(usage("--samples must be positive"));
            }
            let file = scene_file(out, &cfg, &scenes, cfg.eval.split.name());
            let all = commands::load_scenes(&file)?;
            let (source, picked) = match (&from_samples, &loaded) {
                (Some(p), _) => {
                    let bytes =
                        std::fs::read(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
                    let sf: SampleFile = serde_json::from_slice(&bytes)?;
                    (SampleSource::File(sf), all)
                }
                (None, Some(l)) => (
                    SampleSource::Model(l),
                    commands::select(all, None, None, cfg.eval.limit)?,
                ),
                (None, None) => {
                    unreachable!("a checkpoint is loaded whenever no sample file is given")
                }
            };
            let (ev, paths) = commands::eval_cmd(out, &cfg, &picked, source)?;
            let r = &ev.report;
            println!(
                "scenes {} minSADE {:.4} meanSADE {:.4} minSFDE {:.4} meanSFDE {:.4} SCR {:.4}",
                r.num_scenes, r.min_sade, r.mean_sade, r.min_sfde, r.mean_sfde, r.scr
            );
            report(&paths);
        }
        Command::Plan {
            checkpoint,
            scenes,
            samples,
            sdv,
            weights,
            overrides,
        } => {
            let mut l = load_with(out, &checkpoint, &overrides)?;
            if let Some(s) = samples {
                l.config.plan.samples = s;
            }
            if let Some(k) = sdv {
                l.config.plan.sdv = k;
            }
            if let Some(w) = weights {
                l.config.plan.weights = serde_json::from_str::<CostWeights>(&w)
                    .map_err(|e| usage(format!("--weights: {e}")))?;
            }
            if l.config.plan.samples == 0 {
                return Err(usage("--samples must be positive"));
            }
            let file = scene_file(out, &l.config, &scenes.scenes, "test");
            let picked = commands::select(
                commands::load_scenes(&file)?,
                scenes.scene_id,
                Some(scenes.index.unwrap_or(0)).filter(|_| scenes.scene_id.is_none()),
                None,
            )?;
            let (p, paths) = commands::plan_cmd(out, &l, &picked[0])?;
            println!(
                "scene {} chose candidate {} (collision {:.3}, cost {:.4})",
                p.scene_id, p.chosen, p.cost.collision, p.cost.total
            );
            report(&paths);
        }
        Command::Interpolate {
            checkpoint,
            scenes,
            steps,
            pool,
            overrides,
        } => {
            let l = load_with(out, &checkpoint, &overrides)?;
            let file = scene_file(out, &l.config, &scenes.scenes, "test");
            let picked = commands::select(
                commands::load_scenes(&file)?,
                scenes.scene_id,
                Some(scenes.index.unwrap_or(0)).filter(|_| scenes.scene_id.is_none()),
                None,
            )?;
            report(&commands::interpolate_cmd(
                out, &l, &picked[0], steps, pool,
            )?);
        }
    }
    Ok(())
}
