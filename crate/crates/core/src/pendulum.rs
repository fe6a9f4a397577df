//! Reference double-pendulum dynamics, its symmetry and energy oracles, and
//! dataset generation.
//!
//! State layout: `(phi1, phi2, dphi1, dphi2)`, angles measured from the
//! downward vertical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Intervals, Role, Trajectory, TrajectoryDataset};
use crate::error::{Error, Result};
use crate::odeint::{dopri_integrate, DopriOptions};

/// Threshold on `|1 - a1 a2|` below which the dynamics are treated as singular.
pub const SINGULARITY_TOLERANCE: f64 = 1e-9;

pub const TIMESTEP: f64 = 0.01;
pub const POINTS_PER_TRAJECTORY: usize = 300;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PendulumParams {
    /// kg
    pub m1: f64,
    /// kg
    pub m2: f64,
    /// m
    pub l1: f64,
    /// m
    pub l2: f64,
    /// m/s^2
    pub g: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            m1: 1.0,
            m2: 1.0,
            l1: 1.0,
            l2: 1.0,
            g: 9.81,
        }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.m1, self.m2, self.l1, self.l2, self.g];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "pendulum constants must be positive: {self:?}"
            )))
        }
    }

    /// Coefficient of `cos(phi1 - phi2)` in `alpha1`.
    pub fn alpha1_coeff(&self) -> f64 {
        self.l1 / self.l2 * (self.m1 / (self.m1 + self.m2))
    }

    /// Coefficient of `cos(phi1 - phi2)` in `alpha2`.
    pub fn alpha2_coeff(&self) -> f64 {
        self.l1 / self.l2
    }
}

pub fn alpha1(phi1: f64, phi2: f64, p: &PendulumParams) -> f64 {
    p.alpha1_coeff() * (phi1 - phi2).cos()
}

pub fn alpha2(phi1: f64, phi2: f64, p: &PendulumParams) -> f64 {
    p.alpha2_coeff() * (phi1 - phi2).cos()
}

/// Velocity- and gravity-dependent forcing of the first link.
pub fn g1(x: &[f64], p: &PendulumParams) -> f64 {
    let (phi1, phi2, dphi2) = (x[0], x[1], x[3]);
    -p.l1 / p.l2 * (p.m2 / (p.m1 + p.m2)) * dphi2 * dphi2 * (phi1 - phi2).sin()
        - p.g / p.l1 * phi1.sin()
}

/// Velocity- and gravity-dependent forcing of the second link.
pub fn g2(x: &[f64], p: &PendulumParams) -> f64 {
    let (phi1, phi2, dphi1) = (x[0], x[1], x[2]);
    p.l1 / p.l2 * dphi1 * dphi1 * (phi1 - phi2).sin() - p.g / p.l2 * phi2.sin()
}

/// Angular accelerations from the two forcing terms and the coupling
/// coefficients.
pub fn accelerations(x: &[f64], g1v: f64, g2v: f64, p: &PendulumParams) -> Result<(f64, f64)> {
    let a1 = alpha1(x[0], x[1], p);
    let a2 = alpha2(x[0], x[1], p);
    let denom = 1.0 - a1 * a2;
    if denom.abs() < SINGULARITY_TOLERANCE {
        return Err(Error::SingularPendulum { denominator: denom });
    }
    Ok(((g1v - a1 * g2v) / denom, (-a2 * g1v + g2v) / denom))
}

/// Full vector field `(dphi1, dphi2, ddphi1, ddphi2)`.
pub fn true_field(x: &[f64], p: &PendulumParams) -> Result<[f64; 4]> {
    let (dd1, dd2) = accelerations(x, g1(x, p), g2(x, p), p)?;
    Ok([x[2], x[3], dd1, dd2])
}

/// Residuals of the four symmetries of the forcing terms:
/// oddness in the angles and evenness in the velocities.
pub fn symmetry_residuals<G1, G2>(g1: G1, g2: G2, x: &[f64]) -> [f64; 4]
where
    G1: Fn(&[f64]) -> f64,
    G2: Fn(&[f64]) -> f64,
{
    let reflect_angles = [-x[0], -x[1], x[2], x[3]];
    let reflect_rates = [x[0], x[1], -x[2], -x[3]];
    [
        g1(x) + g1(&reflect_angles),
        g2(x) + g2(&reflect_angles),
        g1(x) - g1(&reflect_rates),
        g2(x) - g2(&reflect_rates),
    ]
}

/// Kinetic plus potential energy of the two-link point-mass pendulum, with
/// the pivot as the potential-energy zero level.
pub fn energy(x: &[f64], p: &PendulumParams) -> f64 {
    let (phi1, phi2, w1, w2) = (x[0], x[1], x[2], x[3]);
    let kinetic = 0.5 * p.m1 * p.l1 * p.l1 * w1 * w1
        + 0.5
            * p.m2
            * (p.l1 * p.l1 * w1 * w1
                + p.l2 * p.l2 * w2 * w2
                + 2.0 * p.l1 * p.l2 * w1 * w2 * (phi1 - phi2).cos());
    let potential = -(p.m1 + p.m2) * p.g * p.l1 * phi1.cos() - p.m2 * p.g * p.l2 * phi2.cos();
    kinetic + potential
}

pub fn train_intervals() -> Intervals {
    vec![[-0.5, 0.0], [-0.5, 0.0], [-0.3, 0.3], [-0.3, 0.3]]
}

pub fn test_intervals() -> Intervals {
    vec![[-0.5, 0.5], [-0.5, 0.5], [-0.6, 0.6], [-0.6, 0.6]]
}

pub fn intervals_for(role: Role) -> Intervals {
    match role {
        Role::Train => train_intervals(),
        Role::Test => test_intervals(),
    }
}

/// Integrates the reference dynamics from `x0` and samples `points` states
/// spaced `dt` apart, starting at t = 0.
pub fn simulate(
    x0: &[f64],
    params: &PendulumParams,
    dt: f64,
    points: usize,
    options: DopriOptions,
) -> Result<Trajectory> {
    let times: Vec<f64> = (0..points).map(|k| k as f64 * dt).collect();
    let end = times.last().copied().unwrap_or(0.0);
    let mut failure = None;
    let states = dopri_integrate(
        |_, x| match true_field(x, params) {
            Ok(d) => d.to_vec(),
            Err(e) => {
                failure.get_or_insert(e);
                vec![f64::NAN; 4]
            }
        },
        x0,
        (0.0, end),
        &times,
        options,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(Trajectory {
        controls: vec![Vec::new(); times.len()],
        times,
        states: states?,
    })
}

/// Samples initial states uniformly from the role's box (bounds inclusive)
/// and integrates each for 300 points at 0.01 s. Trajectory `k` draws from
/// stream `k` of a ChaCha generator keyed by `seed`.
pub fn generate_dataset(
    role: Role,
    n_trajectories: usize,
    seed: u64,
    params: &PendulumParams,
) -> Result<TrajectoryDataset> {
    generate_dataset_with(
        role,
        n_trajectories,
        seed,
        params,
        POINTS_PER_TRAJECTORY,
        TIMESTEP,
    )
}

pub fn generate_dataset_with(
    role: Role,
    n_trajectories: usize,
    seed: u64,
    params: &PendulumParams,
    points: usize,
    dt: f64,
) -> Result<TrajectoryDataset> {
    if n_trajectories == 0 {
        return Err(Error::InvalidArgument(
            "need at least one trajectory".into(),
        ));
    }
    params.validate()?;
    let intervals = intervals_for(role);
    let trajectories = (0..n_trajectories)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let x0: Vec<f64> = intervals
                .iter()
                .map(|[lo, hi]| rng.gen_range(*lo..=*hi))
                .collect();
            simulate(&x0, params, dt, points, DopriOptions::default())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrajectoryDataset {
        role,
        dt,
        seed,
        intervals,
        params: *params,
        trajectories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_states(n: usize, seed: u64) -> Vec<[f64; 4]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                [
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                ]
            })
            .collect()
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        assert_eq!(
            true_field(&[0.0; 4], &PendulumParams::default()).unwrap(),
            [0.0; 4]
        );
    }

    #[test]
    fn horizontal_first_link_fixture() {
        let p = PendulumParams::default();
        let f = true_field(&[std::f64::consts::FRAC_PI_2, 0.0, 0.0, 0.0], &p).unwrap();
        assert_eq!(f[0], 0.0);
        assert_eq!(f[1], 0.0);
        assert!((f[2] + 9.81).abs() < 1e-14);
        assert!((f[3] - 6.006892549817768e-16).abs() < 1e-18);
    }

    #[test]
    fn unequal_constants_fixture() {
        let p = PendulumParams {
            m1: 1.5,
            m2: 0.7,
            l1: 1.2,
            l2: 0.8,
            g: 9.81,
        };
        let f = true_field(&[0.3, -0.4, 0.5, -0.2], &p).unwrap();
        assert_eq!(&f[..2], &[0.5, -0.2]);
        assert!((f[2] + 61.92567997610624).abs() < 1e-10);
        assert!((f[3] - 76.06188283828045).abs() < 1e-10);
    }

    #[test]
    fn singular_configuration_is_rejected() {
        // a1 a2 = (l1/l2)^2 m1/(m1+m2) cos^2 = 1 at phi1 = phi2 with this choice.
        let p = PendulumParams {
            m1: 1.0,
            m2: 1.0,
            l1: 2f64.sqrt(),
            l2: 1.0,
            g: 9.81,
        };
        assert!(matches!(
            true_field(&[0.2, 0.2, 0.0, 0.0], &p),
            Err(Error::SingularPendulum { .. })
        ));
    }

    #[test]
    fn g1_is_odd_in_angles() {
        let p = PendulumParams::default();
        for x in random_states(100, 1) {
            let flipped = [-x[0], -x[1], x[2], x[3]];
            assert!((g1(&flipped, &p) + g1(&x, &p)).abs() < 1e-12);
        }
    }

    #[test]
    fn reference_terms_satisfy_symmetries() {
        let p = PendulumParams::default();
        for x in random_states(100, 2) {
            let r = symmetry_residuals(|s| g1(s, &p), |s| g2(s, &p), &x);
            assert!(r.iter().all(|v| v.abs() < 1e-12), "{r:?}");
        }
    }

    #[test]
    fn constant_function_residuals() {
        let x = [0.3, -0.1, 0.7, 0.2];
        let r = symmetry_residuals(|_| 1.5, |_| -2.0, &x);
        assert_eq!(r, [3.0, -4.0, 0.0, 0.0]);
        let origin = [0.0; 4];
        let r = symmetry_residuals(|s| s[2] + 0.25, |_| 0.0, &origin);
        assert_eq!(r[0], 0.5);
        assert_eq!(r[2], 0.0);
    }

    #[test]
    fn energy_rest_and_parity() {
        let p = PendulumParams {
            m1: 1.3,
            m2: 0.6,
            l1: 0.9,
            l2: 1.4,
            g: 9.81,
        };
        let rest = energy(&[0.0; 4], &p);
        assert!((rest - (-(p.m1 + p.m2) * p.g * p.l1 - p.m2 * p.g * p.l2)).abs() < 1e-12);
        let x = [0.4, -0.2, 0.7, -1.1];
        assert_eq!(energy(&x, &p), energy(&[0.4, -0.2, -0.7, 1.1], &p));
    }

    #[test]
    fn trajectory_conserves_energy() {
        let p = PendulumParams::default();
        let traj = simulate(
            &[-0.4, 0.3, 0.2, -0.5],
            &p,
            TIMESTEP,
            300,
            DopriOptions::default(),
        )
        .unwrap();
        let e0 = energy(&traj.states[0], &p);
        let drift = traj
            .states
            .iter()
            .map(|s| ((energy(s, &p) - e0) / e0).abs())
            .fold(0.0, f64::max);
        assert!(drift < 1e-6, "relative energy drift {drift}");
    }

    #[test]
    fn dataset_shapes_and_bounds() {
        let p = PendulumParams::default();
        let train = generate_dataset(Role::Train, 1, 0, &p).unwrap();
        assert_eq!(train.trajectories.len(), 1);
        let t = &train.trajectories[0];
        assert_eq!(t.len(), 300);
        assert_eq!(t.times[0], 0.0);
        assert!((t.times[299] - 2.99).abs() < 1e-12);
        train.validate().unwrap();

        let test = generate_dataset(Role::Test, 10, 1, &p).unwrap();
        assert_eq!(test.trajectories.len(), 10);
        for (ds, bounds) in [(&train, train_intervals()), (&test, test_intervals())] {
            for traj in &ds.trajectories {
                assert!(traj.len() == 300);
                for (v, [lo, hi]) in traj.states[0].iter().zip(&bounds) {
                    assert!(*lo <= *v && *v <= *hi);
                }
            }
        }
        assert!(generate_dataset(Role::Test, 0, 1, &p).is_err());
    }

    #[test]
    fn dataset_is_deterministic() {
        let p = PendulumParams::default();
        let a = generate_dataset(Role::Test, 2, 9, &p).unwrap();
        let b = generate_dataset(Role::Test, 2, 9, &p).unwrap();
        assert_eq!(a, b);
        let c = generate_dataset(Role::Test, 2, 10, &p).unwrap();
        assert_ne!(a.trajectories[0].states[0], c.trajectories[0].states[0]);
    }
}
