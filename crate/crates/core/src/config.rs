//! Run configuration, read from TOML. Every section and key is optional and
//! falls back to the defaults below; unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::constraints::{pendulum_symmetry, BoxDomain, ConstraintProgram};
use crate::error::{Error, Result};
use crate::nn::MlpSpec;
use crate::pendulum::{PendulumParams, POINTS_PER_TRAJECTORY, TIMESTEP};
use crate::trainer::TrainConfig;
use crate::vectorfield::ModelKind;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub physics: PendulumParams,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub constraints: ConstraintConfig,
    pub run: RunSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Width of each of the two hidden layers.
    pub hidden: usize,
    /// Rollout steps past the first in the training loss.
    pub horizon: usize,
    /// RK4 substeps per sampling interval.
    pub steps_per_interval: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kind: ModelKind::K1,
            hidden: 128,
            horizon: 5,
            steps_per_interval: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Holds `train/` and `test/` dataset directories.
    pub dir: PathBuf,
    pub train_trajectories: usize,
    pub test_trajectories: usize,
    pub train_seed: u64,
    pub test_seed: u64,
    pub points: usize,
    pub dt: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data"),
            train_trajectories: 1,
            test_trajectories: 10,
            train_seed: 0,
            test_seed: 1,
            points: POINTS_PER_TRAJECTORY,
            dt: TIMESTEP,
        }
    }
}

impl DataConfig {
    pub fn train_dir(&self) -> PathBuf {
        self.dir.join("train")
    }

    pub fn test_dir(&self) -> PathBuf {
        self.dir.join("test")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintFamily {
    /// Odd-in-angle and even-in-rate symmetry of both forcing terms.
    PendulumSymmetry,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstraintConfig {
    /// Enforce the constraints during training.
    pub enabled: bool,
    pub family: ConstraintFamily,
    /// Size of the training collocation set.
    pub collocation_points: usize,
    /// Size of the fresh set used to report constraint loss.
    pub eval_points: usize,
    /// `[lo, hi]` per state coordinate.
    pub domain: Vec<[f64; 2]>,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            family: ConstraintFamily::PendulumSymmetry,
            collocation_points: 2000,
            eval_points: 2000,
            domain: vec![[-0.5, 0.5], [-0.5, 0.5], [-1.0, 1.0], [-1.0, 1.0]],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Directory name for this configuration's runs; derived from the model
    /// when empty.
    pub name: String,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            name: String::new(),
            seeds: vec![0, 1, 2],
            out: PathBuf::from("runs"),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.model.hidden == 0 {
            return bad("model.hidden must be positive".into());
        }
        if self.model.steps_per_interval == 0 {
            return bad("model.steps_per_interval must be positive".into());
        }
        self.physics.validate()?;
        if self.data.train_trajectories == 0 || self.data.test_trajectories == 0 {
            return bad("data needs at least one train and one test trajectory".into());
        }
        if self.data.points < self.model.horizon + 2 {
            return bad(format!(
                "data.points = {} is too short for horizon {}",
                self.data.points, self.model.horizon
            ));
        }
        if !(self.data.dt > 0.0) {
            return bad("data.dt must be positive".into());
        }
        self.train.validate()?;
        if self.constraints.enabled {
            if self.model.kind != ModelKind::K1 {
                return bad(format!(
                    "pendulum symmetry constraints act on the k1 forcing networks, not on `{}`",
                    self.model.kind
                ));
            }
            if self.constraints.collocation_points == 0 {
                return bad("constraints.collocation_points must be positive".into());
            }
        }
        if self.constraints.domain.len() != 4 {
            return bad("constraints.domain needs one [lo, hi] per state coordinate (4)".into());
        }
        if self.constraints.domain.iter().any(|[lo, hi]| !(lo <= hi)) {
            return bad("constraints.domain has an empty interval".into());
        }
        if self.run.seeds.is_empty() {
            return bad("run.seeds is empty".into());
        }
        Ok(())
    }

    /// Directory name under `run.out`: `run.name`, or the model kind with
    /// `k2` standing for constrained k1.
    pub fn label(&self) -> String {
        if !self.run.name.is_empty() {
            return self.run.name.clone();
        }
        match (self.model.kind, self.constraints.enabled) {
            (ModelKind::K1, true) => "k2".into(),
            (kind, _) => kind.as_str().into(),
        }
    }

    pub fn specs(&self) -> Vec<MlpSpec> {
        self.model.kind.pendulum_specs(self.model.hidden)
    }

    pub fn run_dir(&self, seed: u64) -> PathBuf {
        self.run.out.join(self.label()).join(seed.to_string())
    }

    fn constraint_specs(&self) -> Vec<crate::constraints::ConstraintSpec> {
        match self.constraints.family {
            ConstraintFamily::PendulumSymmetry => {
                vec![pendulum_symmetry(BoxDomain::new(
                    self.constraints.domain.clone(),
                ))]
            }
        }
    }

    /// Collocation program used for training, when constraints are enabled.
    pub fn training_program(&self, seed: u64) -> Result<Option<ConstraintProgram>> {
        if !self.constraints.enabled {
            return Ok(None);
        }
        ConstraintProgram::new(
            self.constraint_specs(),
            self.constraints.collocation_points,
            derived_seed(seed, 1),
        )
        .map(Some)
    }

    /// Fresh collocation points for reporting constraint loss. Defined for
    /// every model with forcing networks, constrained or not.
    pub fn evaluation_program(&self, seed: u64) -> Result<Option<ConstraintProgram>> {
        if self.model.kind != ModelKind::K1 || self.constraints.eval_points == 0 {
            return Ok(None);
        }
        ConstraintProgram::new(
            self.constraint_specs(),
            self.constraints.eval_points,
            derived_seed(seed, 2),
        )
        .map(Some)
    }
}

/// Independent sub-seed `k` of a run seed.
pub fn derived_seed(seed: u64, k: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ k.wrapping_mul(0xD1B5_4A32_D192_ED03)
}
