//! The three command-line verbs as library functions. The `pinode` binary
//! only parses arguments and calls these.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::dataset::{manifest_path, read_dataset, write_dataset, Role, TrajectoryDataset};
use crate::error::{Error, Result};
use crate::nn::ParameterSet;
use crate::pendulum::generate_dataset_with;
use crate::trainer::{evaluate, train, Evaluation, RolloutObjective, TrainStatus};
use crate::vectorfield::ModelKind;

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.txt";
pub const SUMMARY_FILE: &str = "summary.json";
pub const EVAL_FILE: &str = "eval.json";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(io_err(path))
}

/// Generates the training and test datasets under `data.dir` (or `out`).
/// Refuses to replace an existing dataset unless `overwrite`.
pub fn gen_data(cfg: &RunConfig, out: Option<&Path>, overwrite: bool) -> Result<Vec<PathBuf>> {
    let mut data = cfg.data.clone();
    if let Some(out) = out {
        data.dir = out.to_path_buf();
    }
    let jobs = [
        (
            Role::Train,
            data.train_dir(),
            data.train_trajectories,
            data.train_seed,
        ),
        (
            Role::Test,
            data.test_dir(),
            data.test_trajectories,
            data.test_seed,
        ),
    ];
    for (_, dir, ..) in &jobs {
        if manifest_path(dir).exists() && !overwrite {
            return Err(Error::InvalidArgument(format!(
                "{} already holds a dataset; pass --overwrite to replace it",
                dir.display()
            )));
        }
    }
    let mut written = Vec::new();
    for (role, dir, n, seed) in jobs {
        let ds = generate_dataset_with(role, n, seed, &cfg.physics, data.points, data.dt)?;
        write_dataset(&ds, &dir)?;
        written.push(dir);
    }
    Ok(written)
}

fn load_dataset(dir: &Path, role: Role) -> Result<TrajectoryDataset> {
    if !manifest_path(dir).exists() {
        return Err(Error::InvalidArgument(format!(
            "no {} dataset at {}; run `gen-data` first",
            role.as_str(),
            dir.display()
        )));
    }
    let ds = read_dataset(dir)?;
    if ds.role != role {
        return Err(Error::InvalidArgument(format!(
            "{} holds a {} dataset, expected {}",
            dir.display(),
            ds.role.as_str(),
            role.as_str()
        )));
    }
    Ok(ds)
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub label: String,
    pub model: ModelKind,
    pub seed: u64,
    pub steps: usize,
    pub inner_cap_hits: usize,
    #[serde(flatten)]
    pub status: TrainStatus,
    pub outer: Vec<crate::trainer::OuterRecord>,
    pub evaluation: Evaluation,
    pub wall_seconds: f64,
}

impl RunSummary {
    pub fn cap_hit(&self) -> bool {
        matches!(self.status, TrainStatus::OuterCapHit { .. })
    }
}

/// Trains one run per seed and writes `<out>/<label>/<seed>/` with the
/// resolved config, metrics CSV, checkpoint and summary. `seeds` and `out`
/// override the config. Existing run directories are refused unless
/// `overwrite`.
pub fn train_runs(
    cfg: &RunConfig,
    seeds: Option<&[u64]>,
    out: Option<&Path>,
    overwrite: bool,
) -> Result<Vec<RunSummary>> {
    let mut cfg = cfg.clone();
    if let Some(out) = out {
        cfg.run.out = out.to_path_buf();
    }
    if let Some(seeds) = seeds {
        cfg.run.seeds = seeds.to_vec();
    }
    cfg.validate()?;
    if cfg.model.kind == ModelKind::Reference {
        return Err(Error::InvalidArgument(
            "the reference model has no parameters to train; use `eval` directly".into(),
        ));
    }
    for &seed in &cfg.run.seeds {
        let dir = cfg.run_dir(seed);
        if dir.exists() && !overwrite {
            return Err(Error::InvalidArgument(format!(
                "{} already exists; pass --overwrite to replace it",
                dir.display()
            )));
        }
    }
    let train_ds = load_dataset(&cfg.data.train_dir(), Role::Train)?;
    let test_ds = load_dataset(&cfg.data.test_dir(), Role::Test)?;
    let field = cfg.model.kind.pendulum_field(cfg.physics);

    let mut summaries = Vec::new();
    for &seed in &cfg.run.seeds {
        let start = std::time::Instant::now();
        let dir = cfg.run_dir(seed);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut resolved = cfg.clone();
        resolved.run.seeds = vec![seed];
        write_file(&dir.join(CONFIG_FILE), &resolved.to_toml())?;

        let init = ParameterSet::init(&cfg.specs(), seed)?;
        let mut objective = RolloutObjective::new(
            field.as_ref(),
            &train_ds,
            &test_ds,
            cfg.model.horizon,
            cfg.train.batch_size,
        )?;
        objective.steps_per_interval = cfg.model.steps_per_interval;
        let program = cfg.training_program(seed)?;
        let outcome = train(&objective, init, program.as_ref(), &cfg.train, seed)?;

        write_file(&dir.join(METRICS_FILE), &outcome.log.to_csv())?;
        Checkpoint {
            model: cfg.model.kind,
            params: outcome.params.clone(),
            multipliers: outcome.multipliers.clone(),
        }
        .save(&dir.join(CHECKPOINT_FILE))?;

        let held_out = cfg.evaluation_program(seed)?;
        let evaluation = evaluate(
            field.as_ref(),
            &outcome.params,
            &test_ds,
            cfg.model.horizon,
            cfg.model.steps_per_interval,
            held_out.as_ref(),
        )?;
        let summary = RunSummary {
            label: cfg.label(),
            model: cfg.model.kind,
            seed,
            steps: outcome.steps,
            inner_cap_hits: outcome.inner_cap_hits,
            status: outcome.status,
            outer: outcome.log.outer,
            evaluation,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
        write_file(&dir.join(SUMMARY_FILE), &(json + "\n"))?;
        summaries.push(summary);
    }
    Ok(summaries)
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub checkpoint: Option<PathBuf>,
    pub model: ModelKind,
    #[serde(flatten)]
    pub evaluation: Evaluation,
}

/// Evaluates a checkpoint (or the parameter-free reference model when
/// `checkpoint` is `None` and the config names it) on the configured test
/// set. The checkpoint must match the config's model and widths.
pub fn eval(cfg: &RunConfig, checkpoint: Option<&Path>, seed: u64) -> Result<EvalReport> {
    let (model, params) = match checkpoint {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            if ckpt.model != cfg.model.kind {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint holds a `{}` model but the config says `{}`",
                    ckpt.model, cfg.model.kind
                )));
            }
            let expected = cfg.specs();
            if ckpt.params.specs() != expected {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint networks {:?} do not match the config (hidden width {})",
                    ckpt.params
                        .specs()
                        .iter()
                        .map(|s| s.hidden.clone())
                        .collect::<Vec<_>>(),
                    cfg.model.hidden
                )));
            }
            (ckpt.model, ckpt.params)
        }
        None if cfg.model.kind == ModelKind::Reference => {
            (ModelKind::Reference, ParameterSet::empty())
        }
        None => {
            return Err(Error::InvalidArgument(format!(
                "a `{}` model needs --checkpoint",
                cfg.model.kind
            )))
        }
    };
    let test_ds = load_dataset(&cfg.data.test_dir(), Role::Test)?;
    let field = model.pendulum_field(cfg.physics);
    let held_out = cfg.evaluation_program(seed)?;
    let evaluation = evaluate(
        field.as_ref(),
        &params,
        &test_ds,
        cfg.model.horizon,
        cfg.model.steps_per_interval,
        held_out.as_ref(),
    )?;
    Ok(EvalReport {
        checkpoint: checkpoint.map(Path::to_path_buf),
        model,
        evaluation,
    })
}

/// Writes an evaluation report as JSON to `path`.
pub fn write_report(report: &EvalReport, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    write_file(path, &(json + "\n"))
}

/// Geometric mean; zero if any value is zero, infinite if any is infinite.
pub fn geometric_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    (values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(root: &Path) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.data.dir = root.join("data");
        cfg.data.points = 40;
        cfg.data.test_trajectories = 2;
        cfg.model.hidden = 8;
        cfg.model.horizon = 2;
        cfg.train.max_inner_steps = 20;
        cfg.train.eval_every = 10;
        cfg.train.batch_size = 8;
        cfg.run.out = root.join("runs");
        cfg.run.seeds = vec![3];
        cfg
    }

    #[test]
    fn gen_data_refuses_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        gen_data(&cfg, None, false).unwrap();
        assert!(gen_data(&cfg, None, false).is_err());
        gen_data(&cfg, None, true).unwrap();
    }

    #[test]
    fn train_needs_data_and_respects_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let err = train_runs(&cfg, None, None, false).unwrap_err();
        assert!(err.to_string().contains("gen-data"), "{err}");

        gen_data(&cfg, None, false).unwrap();
        let runs = train_runs(&cfg, None, None, false).unwrap();
        assert_eq!(runs.len(), 1);
        let run_dir = cfg.run_dir(3);
        for f in [CONFIG_FILE, METRICS_FILE, CHECKPOINT_FILE, SUMMARY_FILE] {
            assert!(run_dir.join(f).exists(), "{f}");
        }
        assert!(train_runs(&cfg, None, None, false).is_err());
        train_runs(&cfg, None, None, true).unwrap();

        // the resolved config reproduces the run
        let resolved = RunConfig::load(&run_dir.join(CONFIG_FILE)).unwrap();
        assert_eq!(resolved.run.seeds, vec![3]);
        assert_eq!(resolved.model, cfg.model);
    }

    #[test]
    fn eval_checks_checkpoint_against_config() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        gen_data(&cfg, None, false).unwrap();
        train_runs(&cfg, None, None, false).unwrap();
        let ckpt = cfg.run_dir(3).join(CHECKPOINT_FILE);

        let report = eval(&cfg, Some(&ckpt), 3).unwrap();
        assert!(report.evaluation.test_loss.is_finite());
        assert!(report.evaluation.constraint_loss.is_some());

        let mut wide = cfg.clone();
        wide.model.hidden = 16;
        let err = eval(&wide, Some(&ckpt), 3).unwrap_err();
        assert!(err.to_string().contains("hidden width"), "{err}");

        let broken = dir.path().join("broken.txt");
        fs::write(&broken, "pinode-checkpoint 1\nmodel k1\nparameters 3\n1\n").unwrap();
        assert!(matches!(
            eval(&cfg, Some(&broken), 3),
            Err(Error::Parse { .. })
        ));

        let mut reference = cfg.clone();
        reference.model.kind = ModelKind::Reference;
        let report = eval(&reference, None, 0).unwrap();
        assert!(
            report.evaluation.test_loss < 1e-6,
            "{:?}",
            report.evaluation
        );
        assert!(
            report.evaluation.rollout_error < 1e-6,
            "{:?}",
            report.evaluation
        );
        assert!(eval(&cfg, None, 0).is_err());
    }

    #[test]
    fn geometric_mean_basics() {
        assert!((geometric_mean(&[1.0, 100.0]) - 10.0).abs() < 1e-12);
        assert_eq!(geometric_mean(&[0.0, 5.0]), 0.0);
    }
}
