//! Constant-velocity Kalman filter baseline.
//!
//! State is `(x, y, x_dot, y_dot)` in the ego frame. Process noise is
//! continuous white acceleration with per-axis standard deviation
//! `q_accel`, so the discretized covariance over any horizon `dt` is
//! `q^2 [[dt^3/3, dt^2/2], [dt^2/2, dt]]` per axis. Measurements observe
//! position only, with noise `r_pos` on each axis.

use nalgebra::{Matrix2, Matrix2x4, Matrix4, Matrix4x2, Vector2, Vector4};
use thiserror::Error;

use crate::grid::{GridGeometry, OccupancyMap};

#[derive(Debug, Error, PartialEq)]
pub enum KalmanError {
    #[error("covariance is no longer positive definite")]
    Divergence,
    #[error("invalid argument: {0}")]
    Argument(String),
}

/// Noise settings of the baseline filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KfConfig {
    /// White-acceleration standard deviation, longitudinal and lateral (m/s^2).
    pub q_accel: (f64, f64),
    /// Position measurement standard deviation (m).
    pub r_pos: f64,
    /// Initial velocity standard deviation when seeding a track (m/s).
    pub init_velocity_std: f64,
}

impl Default for KfConfig {
    fn default() -> Self {
        Self {
            q_accel: (0.5, 0.3),
            r_pos: 0.3,
            init_velocity_std: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KfTrack {
    pub mean: Vector4<f64>,
    pub covariance: Matrix4<f64>,
    pub q_accel: (f64, f64),
    pub r_pos: f64,
}

fn transition(dt: f64) -> Matrix4<f64> {
    let mut f = Matrix4::identity();
    f[(0, 2)] = dt;
    f[(1, 3)] = dt;
    f
}

fn process_noise(dt: f64, q_accel: (f64, f64)) -> Matrix4<f64> {
    let mut q = Matrix4::zeros();
    for (axis, sigma) in [(0usize, q_accel.0), (1, q_accel.1)] {
        let s2 = sigma * sigma;
        let (p, v) = (axis, axis + 2);
        q[(p, p)] = s2 * dt.powi(3) / 3.0;
        q[(p, v)] = s2 * dt.powi(2) / 2.0;
        q[(v, p)] = s2 * dt.powi(2) / 2.0;
        q[(v, v)] = s2 * dt;
    }
    q
}

fn observation() -> Matrix2x4<f64> {
    let mut h = Matrix2x4::zeros();
    h[(0, 0)] = 1.0;
    h[(1, 1)] = 1.0;
    h
}

fn symmetrize(m: &Matrix4<f64>) -> Matrix4<f64> {
    (m + m.transpose()) * 0.5
}

impl KfTrack {
    /// Seeds a track at a measured position and velocity.
    pub fn new(position: (f64, f64), velocity: (f64, f64), config: &KfConfig) -> Self {
        let r2 = config.r_pos * config.r_pos;
        let v2 = config.init_velocity_std * config.init_velocity_std;
        Self {
            mean: Vector4::new(position.0, position.1, velocity.0, velocity.1),
            covariance: Matrix4::from_diagonal(&Vector4::new(r2, r2, v2, v2)),
            q_accel: config.q_accel,
            r_pos: config.r_pos,
        }
    }

    /// Mean and covariance propagated `dt` seconds without a measurement.
    pub fn propagate(&self, dt: f64) -> (Vector4<f64>, Matrix4<f64>) {
        let f = transition(dt);
        let p = f * self.covariance * f.transpose() + process_noise(dt, self.q_accel);
        (f * self.mean, symmetrize(&p))
    }

    pub fn is_positive_definite(&self) -> bool {
        self.covariance.cholesky().is_some()
    }

    /// Position covariance diagonal `(var_x, var_y)`.
    pub fn position_variance(&self) -> (f64, f64) {
        (self.covariance[(0, 0)], self.covariance[(1, 1)])
    }
}

/// One predict-update cycle with a position measurement `dt` after the
/// track's current time.
pub fn kf_update(track: &KfTrack, measurement: (f64, f64), dt: f64) -> Result<KfTrack, KalmanError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(KalmanError::Argument(format!("dt must be positive, got {dt}")));
    }
    if !(measurement.0.is_finite() && measurement.1.is_finite()) {
        return Err(KalmanError::Argument("measurement must be finite".into()));
    }
    let (mean, p) = track.propagate(dt);
    let h = observation();
    let r = Matrix2::identity() * (track.r_pos * track.r_pos);
    let s = h * p * h.transpose() + r;
    let s_inv = s.try_inverse().ok_or(KalmanError::Divergence)?;
    let k: Matrix4x2<f64> = p * h.transpose() * s_inv;
    let z = Vector2::new(measurement.0, measurement.1);
    let mean = mean + k * (z - h * mean);
    // Joseph form keeps the update symmetric positive semi-definite.
    let a = Matrix4::identity() - k * h;
    let cov = symmetrize(&(a * p * a.transpose() + k * r * k.transpose()));
    let next = KfTrack {
        mean,
        covariance: cov,
        q_accel: track.q_accel,
        r_pos: track.r_pos,
    };
    if !next.is_positive_definite() || !next.mean.iter().all(|v| v.is_finite()) {
        return Err(KalmanError::Divergence);
    }
    Ok(next)
}

/// Runs the filter over positions sampled every `dt` seconds, seeded at the
/// first sample with its measured velocity.
pub fn kf_filter(
    positions: &[(f64, f64)],
    first_velocity: (f64, f64),
    dt: f64,
    config: &KfConfig,
) -> Result<KfTrack, KalmanError> {
    let (first, rest) = positions
        .split_first()
        .ok_or_else(|| KalmanError::Argument("no measurements".into()))?;
    let mut track = KfTrack::new(*first, first_velocity, config);
    for &z in rest {
        track = kf_update(&track, z, dt)?;
    }
    Ok(track)
}

/// Constant-velocity point prediction `delta` seconds ahead.
pub fn kf_predict_point(track: &KfTrack, delta: f64) -> (f64, f64) {
    let m = &track.mean;
    (m[0] + m[2] * delta, m[1] + m[3] * delta)
}

/// Probability of the predictive position density over every grid cell.
///
/// The x and y marginals are integrated independently (product of 1-D
/// Gaussian CDF differences); mass outside the grid goes to `p_oob`.
pub fn kf_predict_grid(
    track: &KfTrack,
    delta: f64,
    geometry: &GridGeometry,
) -> Result<OccupancyMap, KalmanError> {
    if !(delta > 0.0) {
        return Err(KalmanError::Argument(format!("delta must be positive, got {delta}")));
    }
    let (mean, cov) = track.propagate(delta);
    if cov.cholesky().is_none() {
        return Err(KalmanError::Divergence);
    }
    let px = axis_masses(mean[0], cov[(0, 0)].sqrt(), geometry.x_min, geometry.cell_length, geometry.m_x);
    let py = axis_masses(mean[1], cov[(1, 1)].sqrt(), geometry.y_min, geometry.cell_width, geometry.m_y);
    let mut map = OccupancyMap::zeros(*geometry);
    for (ix, &a) in px.iter().enumerate() {
        for (iy, &b) in py.iter().enumerate() {
            map.p[ix * geometry.m_y + iy] = a * b;
        }
    }
    let inside: f64 = px.iter().sum::<f64>() * py.iter().sum::<f64>();
    map.p_oob = (1.0 - inside).max(0.0);
    Ok(map)
}

/// Mass of `N(mean, sd^2)` in each of `n` consecutive bins of width `width`
/// starting at `origin`.
fn axis_masses(mean: f64, sd: f64, origin: f64, width: f64, n: usize) -> Vec<f64> {
    let cdf: Vec<f64> = (0..=n)
        .map(|k| normal_cdf((origin + k as f64 * width - mean) / sd))
        .collect();
    cdf.windows(2).map(|w| (w[1] - w[0]).max(0.0)).collect()
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Complementary error function.
///
/// Maclaurin series of `erf` for `|x| < 3`, Lentz continued fraction for the
/// tail. Absolute error is below 1e-13 everywhere.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x < 3.0 {
        return 1.0 - erf_series(x);
    }
    erfc_continued_fraction(x)
}

fn erf_series(x: f64) -> f64 {
    // erf(x) = 2/sqrt(pi) * sum_n (-1)^n x^(2n+1) / (n! (2n+1))
    let x2 = x * x;
    let mut term = x;
    let mut sum = x;
    for k in 1..200 {
        let n = k as f64;
        term *= -x2 / n;
        let add = term / (2.0 * n + 1.0);
        sum += add;
        if add.abs() <= 1e-17 * sum.abs() {
            break;
        }
    }
    sum * std::f64::consts::FRAC_2_SQRT_PI
}

fn erfc_continued_fraction(x: f64) -> f64 {
    // erfc(x) = exp(-x^2)/sqrt(pi) * 1/(x + (1/2)/(x + 1/(x + (3/2)/(x + 2/(x + ...)))))
    let tiny = 1e-300;
    let mut f = x;
    let mut c = x;
    let mut d = 0.0;
    for k in 1..500 {
        let a = k as f64 / 2.0;
        d = x + a * d;
        d = if d.abs() < tiny { tiny } else { d };
        c = x + a / c;
        c = if c.abs() < tiny { tiny } else { c };
        d = 1.0 / d;
        let delta = c * d;
        f *= delta;
        if (delta - 1.0).abs() < 1e-16 {
            break;
        }
    }
    (-x * x).exp() / (f * std::f64::consts::PI.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{cell_center, GridIndex};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    #[allow(clippy::excessive_precision)]
    fn erfc_matches_reference_values() {
        // Reference values from mpmath at 30 significant digits.
        let cases = [
            (0.0, 1.0),
            (0.5, 0.4795001221869534623),
            (1.0, 0.1572992070502851307),
            (2.0, 0.004677734981047265838),
            (2.9, 0.000041097878099458858),
            (3.0, 0.00002209049699858544137),
            (4.5, 1.966160441542887476e-10),
            (-1.0, 1.842700792949714869),
            (-3.5, 1.999999256901627658),
        ];
        for (x, want) in cases {
            let got = erfc(x);
            assert!((got - want).abs() < 1e-13, "erfc({x}) = {got}, want {want}");
        }
        assert!((normal_cdf(1.96) - 0.9750021048517795).abs() < 1e-13);
    }

    #[test]
    fn erfc_is_continuous_at_branch_switch() {
        let below = erfc(3.0 - 1e-12);
        let above = erfc(3.0);
        assert!((below - above).abs() < 1e-13);
    }

    #[test]
    fn velocity_converges_on_straight_line() {
        // Seeded at zero velocity, so the velocity prior must be diffuse.
        let cfg = KfConfig {
            init_velocity_std: 10.0,
            ..KfConfig::default()
        };
        let (vx, vy) = (-2.5, 0.8);
        let dt = 0.1;
        let mut track = KfTrack::new((50.0, 1.0), (0.0, 0.0), &cfg);
        for k in 1..=20 {
            let t = k as f64 * dt;
            track = kf_update(&track, (50.0 + vx * t, 1.0 + vy * t), dt).unwrap();
        }
        assert!((track.mean[2] - vx).abs() < 0.01 * vx.abs(), "vx {}", track.mean[2]);
        assert!((track.mean[3] - vy).abs() < 0.01 * vy.abs(), "vy {}", track.mean[3]);
    }

    #[test]
    fn tiny_measurement_noise_snaps_to_measurement() {
        let cfg = KfConfig {
            r_pos: 1e-5,
            ..KfConfig::default()
        };
        let track = KfTrack::new((10.0, 0.0), (1.0, 0.0), &cfg);
        let next = kf_update(&track, (10.3, -0.2), 0.1).unwrap();
        assert!((next.mean[0] - 10.3).abs() < 1e-6);
        assert!((next.mean[1] + 0.2).abs() < 1e-6);
    }

    #[test]
    fn covariance_stays_symmetric_and_positive_definite() {
        let cfg = KfConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut track = KfTrack::new((30.0, 0.0), (0.0, 0.0), &cfg);
        for _ in 0..200 {
            let z = (rng.random_range(0.0..100.0), rng.random_range(-8.0..8.0));
            track = kf_update(&track, z, rng.random_range(0.01..0.5)).unwrap();
            let p = &track.covariance;
            assert!((p - p.transpose()).abs().max() < 1e-9);
            assert!(track.is_positive_definite());
        }
    }

    #[test]
    fn update_rejects_bad_input() {
        let track = KfTrack::new((0.0, 0.0), (0.0, 0.0), &KfConfig::default());
        assert!(kf_update(&track, (1.0, 1.0), 0.0).is_err());
        assert!(kf_update(&track, (f64::NAN, 1.0), 0.1).is_err());
    }

    #[test]
    fn point_prediction_examples() {
        let mut track = KfTrack::new((10.0, 0.0), (2.0, 0.0), &KfConfig::default());
        assert_eq!(kf_predict_point(&track, 0.5), (11.0, 0.0));
        track.mean[2] = 0.0;
        assert_eq!(kf_predict_point(&track, 7.0), (10.0, 0.0));
    }

    #[test]
    fn point_prediction_equals_iterated_transition() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let track = KfTrack::new(
                (rng.random_range(0.0..180.0), rng.random_range(-9.0..9.0)),
                (rng.random_range(-5.0..5.0), rng.random_range(-2.0..2.0)),
                &KfConfig::default(),
            );
            let dt = 0.1;
            let steps = rng.random_range(1..=20);
            let f = transition(dt);
            let mut m = track.mean;
            for _ in 0..steps {
                m = f * m;
            }
            let (x, y) = kf_predict_point(&track, steps as f64 * dt);
            assert!((x - m[0]).abs() < 1e-9 && (y - m[1]).abs() < 1e-9);
        }
    }

    #[test]
    fn propagation_composes() {
        // Continuous white-acceleration noise is closed under composition.
        let track = KfTrack::new((20.0, 1.0), (1.0, -0.5), &KfConfig::default());
        let (m2, p2) = track.propagate(2.0);
        let (m1, p1) = track.propagate(1.0);
        let half = KfTrack {
            mean: m1,
            covariance: p1,
            ..track.clone()
        };
        let (m11, p11) = half.propagate(1.0);
        assert!((m2 - m11).abs().max() < 1e-12);
        assert!((p2 - p11).abs().max() < 1e-12);
    }

    #[test]
    fn tight_gaussian_fills_one_cell() {
        let g = GridGeometry::default();
        let (cx, cy) = cell_center(&g, GridIndex::new(12, 8)).unwrap();
        let track = KfTrack {
            mean: Vector4::new(cx, cy, 0.0, 0.0),
            covariance: Matrix4::from_diagonal(&Vector4::new(1e-4, 1e-4, 1e-12, 1e-12)),
            q_accel: (1e-6, 1e-6),
            r_pos: 0.01,
        };
        let map = kf_predict_grid(&track, 0.1, &g).unwrap();
        assert!(map.get(GridIndex::new(12, 8)) > 0.999);
    }

    #[test]
    fn grid_mass_sums_to_one() {
        let g = GridGeometry::default();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let track = KfTrack::new(
                (rng.random_range(-20.0..200.0), rng.random_range(-12.0..12.0)),
                (rng.random_range(-5.0..5.0), rng.random_range(-2.0..2.0)),
                &KfConfig::default(),
            );
            let map = kf_predict_grid(&track, rng.random_range(0.1..3.0), &g).unwrap();
            assert!(map.p.iter().all(|&p| p >= 0.0));
            assert!((map.total_mass() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn position_variance_grows_with_horizon() {
        let track = KfTrack::new((50.0, 0.0), (0.0, 0.0), &KfConfig::default());
        let mut last = 0.0;
        for k in 1..=30 {
            let (_, p) = track.propagate(k as f64 * 0.1);
            let tr = p[(0, 0)] + p[(1, 1)];
            assert!(tr >= last);
            last = tr;
        }
    }

    #[test]
    fn grid_matches_monte_carlo_for_one_gaussian() {
        let g = GridGeometry::default();
        let track = KfTrack::new((60.0, 0.3), (-1.0, 0.4), &KfConfig::default());
        let delta = 1.0;
        let map = kf_predict_grid(&track, delta, &g).unwrap();
        let (mean, cov) = track.propagate(delta);
        let chol = cov.cholesky().unwrap().l();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 200_000;
        let mut counts = vec![0usize; g.total_classes()];
        for _ in 0..n {
            let z = Vector4::from_fn(|_, _| StandardNormal.sample(&mut rng));
            let s = mean + chol * z;
            let label = crate::grid::coord_to_label(&g, s[0], s[1]).unwrap();
            counts[label.linear_class(&g)] += 1;
        }
        for (k, &c) in counts.iter().enumerate() {
            let p = map.class_probs()[k];
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((c as f64 / n as f64 - p).abs() <= 4.0 * se + 1e-9, "class {k}");
        }
    }
}
