//! Trajectory datasets and their on-disk form: one CSV per trajectory plus a
//! JSON manifest.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pendulum::PendulumParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Train => "train",
            Role::Test => "test",
        }
    }
}

/// Uniformly spaced samples of one trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Empty rows when the system has no control input.
    pub controls: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

/// Box bounds used to sample initial states, one `[lo, hi]` per coordinate.
pub type Intervals = Vec<[f64; 2]>;

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDataset {
    pub role: Role,
    pub dt: f64,
    pub seed: u64,
    pub intervals: Intervals,
    pub params: PendulumParams,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectoryDataset {
    pub fn state_dim(&self) -> usize {
        self.trajectories
            .first()
            .and_then(|t| t.states.first())
            .map_or(0, Vec::len)
    }

    /// Checks uniform spacing and consistent widths.
    pub fn validate(&self) -> Result<()> {
        let n = self.state_dim();
        for (k, traj) in self.trajectories.iter().enumerate() {
            if traj.times.len() != traj.states.len() || traj.controls.len() != traj.states.len() {
                return Err(Error::Shape(format!(
                    "trajectory {k} has mismatched column lengths"
                )));
            }
            if traj.states.iter().any(|s| s.len() != n) {
                return Err(Error::Shape(format!(
                    "trajectory {k} has inconsistent state width"
                )));
            }
            for w in traj.times.windows(2) {
                let step = w[1] - w[0];
                if !(step > 0.0) || (step - self.dt).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "trajectory {k} is not uniformly spaced at dt = {}",
                        self.dt
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub role: Role,
    pub dt: f64,
    pub seed: u64,
    pub points_per_trajectory: usize,
    pub intervals: Intervals,
    pub params: PendulumParams,
    pub files: Vec<String>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CSV_HEADER: &str = "t,phi1,phi2,dphi1,dphi2";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn trajectory_csv(traj: &Trajectory) -> String {
    let mut out = String::with_capacity(traj.len() * 96);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for (t, s) in traj.times.iter().zip(&traj.states) {
        out.push_str(&t.to_string());
        for v in s {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out
}

/// Writes `<dir>/<role>_NNN.csv` files and the manifest. Existing files are
/// replaced; callers decide whether that is allowed.
pub fn write_dataset(dataset: &TrajectoryDataset, dir: &Path) -> Result<Manifest> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut files = Vec::with_capacity(dataset.trajectories.len());
    for (k, traj) in dataset.trajectories.iter().enumerate() {
        let name = format!("{}_{k:03}.csv", dataset.role.as_str());
        let path = dir.join(&name);
        fs::write(&path, trajectory_csv(traj)).map_err(io_err(&path))?;
        files.push(name);
    }
    let manifest = Manifest {
        role: dataset.role,
        dt: dataset.dt,
        seed: dataset.seed,
        points_per_trajectory: dataset.trajectories.first().map_or(0, Trajectory::len),
        intervals: dataset.intervals.clone(),
        params: dataset.params,
        files,
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(io_err(&path))?;
    Ok(manifest)
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}

pub fn read_dataset(dir: &Path) -> Result<TrajectoryDataset> {
    let path = manifest_path(dir);
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let mut trajectories = Vec::with_capacity(manifest.files.len());
    for name in &manifest.files {
        let path = dir.join(name);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        trajectories.push(parse_trajectory_csv(&text).map_err(|message| Error::Parse {
            path: path.display().to_string(),
            message,
        })?);
    }
    let dataset = TrajectoryDataset {
        role: manifest.role,
        dt: manifest.dt,
        seed: manifest.seed,
        intervals: manifest.intervals,
        params: manifest.params,
        trajectories,
    };
    dataset.validate()?;
    Ok(dataset)
}

fn parse_trajectory_csv(text: &str) -> std::result::Result<Trajectory, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty file")?;
    let width = header.split(',').count();
    if width < 2 {
        return Err(format!("header `{header}` has no state columns"));
    }
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        controls: Vec::new(),
    };
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format!("line {}: {e}", lineno + 2))?;
        if values.len() != width {
            return Err(format!("line {}: expected {width} columns", lineno + 2));
        }
        traj.times.push(values[0]);
        traj.states.push(values[1..].to_vec());
        traj.controls.push(Vec::new());
    }
    Ok(traj)
}
