use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use lookout_core::datagen::{build_dataset, random_free_pose, Dataset, TrajectoryParams};
use lookout_core::eval::{run_trials, write_cells_csv, write_tier_csv, write_trials_csv, EvalConfig};
use lookout_core::model::{cosine_similarity, evaluate, train, HyperParams, Vocabulary, WorldModel};
use lookout_core::planning::{
    execute_episode, EpisodePlanner, FileProposer, LearnedPlanner, OracleModel, OraclePlanner, OracleProposer,
    PlannerConfig, PlannerKind, PrimitiveProposer, ProposalSource, RandomPlanner,
};
use lookout_core::reward::SuccessThresholds;
use lookout_core::scene::{ActionLimits, CameraModel, Pose, Scene};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(
    name = "lookout",
    version,
    about = "Active object localization with a latent world model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled trajectory dataset for one scene.
    GenData {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long = "n-traj", default_value_t = 30)]
        n_traj: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Trajectory parameters (JSON); missing fields take defaults.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Vocabulary file whose digest is recorded in the header.
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Train a world model on one or more datasets.
    Train {
        #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
        data: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Hyperparameters (JSON); missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Held-out datasets scored after training.
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        eval_data: Vec<PathBuf>,
    },
    /// Run one localization episode and print its trace as JSON.
    Rollout {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        query: String,
        #[arg(long, value_parser = parse_planner)]
        planner: PlannerKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Target object id; defaults to the target whose label best matches the query.
        #[arg(long)]
        target: Option<String>,
        /// Start pose as `x,y,theta`; defaults to a seeded random free pose.
        #[arg(long, value_parser = parse_pose)]
        start: Option<Pose>,
        #[arg(long, default_value_t = 40)]
        max_steps: usize,
        /// Planner settings (JSON); missing fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Ranked proposals (JSON) used instead of the scripted primitive choice.
        #[arg(long)]
        proposals: Option<PathBuf>,
        /// Plan against the true scene and reward instead of the model.
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a seeded trial battery and write per-trial and per-cell reports.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write pooled per-tier and per-cell tables for plotting.
        #[arg(long)]
        plot_data: bool,
    },
}

fn parse_planner(s: &str) -> Result<PlannerKind, String> {
    s.parse().map_err(|e: lookout_core::Error| e.to_string())
}

fn parse_pose(s: &str) -> Result<Pose, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [x, y, th] => Ok(Pose::new(x, y, th)),
        _ => Err("expected x,y,theta".into()),
    }
}

/// The target whose label embedding is nearest the query.
fn match_target(scene: &Scene, vocab: &Vocabulary, query: &str) -> Result<String> {
    let q = vocab.embed(query)?;
    let mut best: Option<(String, f64)> = None;
    for t in scene.targets() {
        let s = cosine_similarity(&q, &vocab.embed(t.label())?)?;
        if best.as_ref().map_or(true, |(_, b)| s > *b) {
            best = Some((t.id.clone(), s));
        }
    }
    best.map(|(id, _)| id).context("scene has no targets")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn load_vocab(path: Option<&Path>) -> Result<Vocabulary> {
    Ok(match path {
        Some(p) => Vocabulary::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => Vocabulary::shipped(),
    })
}

fn load_scene(path: &Path) -> Result<Scene> {
    Scene::load(path).with_context(|| format!("loading scene {}", path.display()))
}

fn load_datasets(paths: &[PathBuf]) -> Result<Vec<Dataset>> {
    paths
        .iter()
        .map(|p| Dataset::load(p).with_context(|| format!("loading dataset {}", p.display())))
        .collect()
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::GenData {
            scene,
            out,
            n_traj,
            seed,
            params,
            vocab,
        } => {
            let sc = load_scene(&scene)?;
            let params: TrajectoryParams = match params {
                Some(p) => read_json(&p)?,
                None => TrajectoryParams::default(),
            };
            let vocab = load_vocab(vocab.as_deref())?;
            let ds = build_dataset(&sc, n_traj, &CameraModel::default(), &params, seed, &vocab.digest())?;
            ds.save(&out)?;
            eprintln!("wrote {} records to {}", ds.len(), out.display());
        }
        Command::Train {
            data,
            out,
            config,
            seed,
            vocab,
            eval_data,
        } => {
            let hyper: HyperParams = match config {
                Some(p) => read_json(&p)?,
                None => HyperParams::default(),
            };
            let datasets = load_datasets(&data)?;
            let vocab = load_vocab(vocab.as_deref())?;
            let cam = datasets.first().map_or_else(CameraModel::default, |d| d.header.camera);
            let mut model = WorldModel::new(hyper, cam, ActionLimits::default(), vocab, seed)?;
            let (log, optim) = train(&mut model, &datasets, seed)?;
            for e in &log {
                eprintln!(
                    "epoch {:3} lr {:.1e} dyn {:9.3} rew {:.4} rew_rollout {:.4}",
                    e.epoch, e.lr, e.dyn_loss, e.rew_loss, e.rew_rollout_loss
                );
            }
            model.save(&out, Some(optim), &log)?;
            if !eval_data.is_empty() {
                let metrics = evaluate(&model, &load_datasets(&eval_data)?)?;
                println!("{}", serde_json::to_string_pretty(&metrics)?);
            }
        }
        Command::Rollout {
            scene,
            ckpt,
            query,
            planner,
            seed,
            target,
            start,
            max_steps,
            config,
            proposals,
            oracle,
            out,
        } => {
            let sc = load_scene(&scene)?;
            sc.require_targets()?;
            let (model, _) = WorldModel::load(&ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
            let cfg: PlannerConfig = match config {
                Some(p) => read_json(&p)?,
                None => PlannerConfig::default(),
            };
            cfg.validate()?;
            let target = match target {
                Some(t) => t,
                None => match_target(&sc, &model.vocab, &query)?,
            };
            let start = match start {
                Some(p) => p,
                None => random_free_pose(&sc, None, &mut ChaCha8Rng::seed_from_u64(seed))?,
            };
            let cam = model.camera;
            let proposer: Box<dyn ProposalSource> = match (&proposals, oracle) {
                (Some(p), _) => Box::new(FileProposer::load(p)?),
                (None, true) => Box::new(OracleProposer {
                    scale: cfg.primitive_scale,
                    horizon: cfg.horizon,
                }),
                (None, false) => Box::new(PrimitiveProposer::new(model.vocab.clone(), cfg.primitive_scale)),
            };
            let mut runner: Box<dyn EpisodePlanner> = match (planner, oracle) {
                (PlannerKind::Random, _) => Box::new(RandomPlanner::new(cfg, seed)),
                (kind, true) => Box::new(OraclePlanner::new(
                    OracleModel::new(&sc, cam, &cfg.limits),
                    kind,
                    cfg,
                    proposer,
                    seed,
                )),
                (kind, false) => Box::new(LearnedPlanner::new(&model, kind, cfg, proposer, seed)),
            };
            let trace = execute_episode(
                &sc,
                &cam,
                runner.as_mut(),
                &target,
                &query,
                start,
                max_steps,
                &SuccessThresholds::default(),
            )?;
            let json = serde_json::to_string_pretty(&trace)?;
            match out {
                Some(p) => write_file(&p, json.as_bytes())?,
                None => println!("{json}"),
            }
            eprintln!(
                "{} after {} steps, distance {:.3} m",
                if trace.success { "success" } else { "failure" },
                trace.steps(),
                trace.distance
            );
        }
        Command::Eval { config, out, plot_data } => {
            let text = std::fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let cfg = EvalConfig::from_json(&text).with_context(|| format!("parsing {}", config.display()))?;
            let base = config.parent().unwrap_or(Path::new("."));
            let scenes = cfg
                .scenes
                .iter()
                .map(|s| {
                    let path = base.join(s);
                    let name = path
                        .file_stem()
                        .map_or_else(|| s.clone(), |n| n.to_string_lossy().into_owned());
                    Ok((name, load_scene(&path)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let load = |p: &str| -> Result<WorldModel> {
                let path = base.join(p);
                Ok(WorldModel::load(&path)
                    .with_context(|| format!("loading {}", path.display()))?
                    .0)
            };
            let full = load(&cfg.ckpt)?;
            let narrow = cfg.narrow_ckpt.as_deref().map(load).transpose()?;
            let mut models = vec![("full".to_string(), &full)];
            if let Some(m) = &narrow {
                models.push(("narrow".to_string(), m));
            }
            let mut done = 0usize;
            let report = run_trials(&cfg, &scenes, &models, &mut |t| {
                done += 1;
                eprintln!(
                    "[{done}] {} {} {} {} trial {}: {}",
                    t.scene,
                    t.model,
                    t.planner.name(),
                    t.tier.name(),
                    t.trial,
                    match &t.error {
                        Some(e) => format!("error: {e}"),
                        None if t.success => "success".into(),
                        None => "failure".into(),
                    }
                );
            })?;
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let mut csv = Vec::new();
            write_trials_csv(&report.trials, &mut csv)?;
            write_file(&out.join("trials.csv"), &csv)?;
            write_file(
                &out.join("summary.json"),
                serde_json::to_string_pretty(&report)?.as_bytes(),
            )?;
            if plot_data {
                let mut tiers = Vec::new();
                write_tier_csv(&report.cells, &mut tiers)?;
                write_file(&out.join("plot_tiers.csv"), &tiers)?;
                let mut cells = Vec::new();
                write_cells_csv(&report.cells, &mut cells)?;
                write_file(&out.join("plot_cells.csv"), &cells)?;
            }
            eprintln!("wrote {} trials to {}", report.trials.len(), out.display());
        }
    }
    Ok(())
}
