//! Synthetic highway traffic in the ego frame.
//!
//! Four scenario kinds: cruising in a lane with a slow lateral weave, a lane
//! change following a quintic smoothstep, a cut-in from an adjacent lane into
//! the ego lane while closing in, and a braking lead vehicle. Samples are
//! emitted every 10 ms with Gaussian measurement noise.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::parallel::Execution;

use super::resample::RESAMPLE_PERIOD;
use super::{DataError, RawSample, Track};

/// Raw sample period, seconds.
pub const RAW_PERIOD: f64 = 0.01;

const LANE_COUNT_EACH_SIDE: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Cruise,
    LaneChange,
    CutIn,
    DecelLead,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::Cruise,
        ScenarioKind::LaneChange,
        ScenarioKind::CutIn,
        ScenarioKind::DecelLead,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Cruise => "cruise",
            ScenarioKind::LaneChange => "lane_change",
            ScenarioKind::CutIn => "cut_in",
            ScenarioKind::DecelLead => "decel_lead",
        }
    }
}

/// Fractions of each scenario kind. Normalized by their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioMix {
    pub cruise: f64,
    pub lane_change: f64,
    pub cut_in: f64,
    pub decel_lead: f64,
}

impl Default for ScenarioMix {
    fn default() -> Self {
        Self {
            cruise: 0.50,
            lane_change: 0.30,
            cut_in: 0.15,
            decel_lead: 0.05,
        }
    }
}

impl ScenarioMix {
    pub fn only(kind: ScenarioKind) -> Self {
        let mut mix = Self {
            cruise: 0.0,
            lane_change: 0.0,
            cut_in: 0.0,
            decel_lead: 0.0,
        };
        match kind {
            ScenarioKind::Cruise => mix.cruise = 1.0,
            ScenarioKind::LaneChange => mix.lane_change = 1.0,
            ScenarioKind::CutIn => mix.cut_in = 1.0,
            ScenarioKind::DecelLead => mix.decel_lead = 1.0,
        }
        mix
    }

    fn fractions(&self) -> [f64; 4] {
        [self.cruise, self.lane_change, self.cut_in, self.decel_lead]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n_tracks: usize,
    pub mix: ScenarioMix,
    /// Track duration range, seconds.
    pub duration: (f64, f64),
    /// Position measurement noise standard deviation, meters.
    pub position_noise: f64,
    /// Velocity measurement noise standard deviation, m/s.
    pub velocity_noise: f64,
    /// Largest amplitude of the lateral weave, meters.
    pub lateral_jitter: f64,
    pub lane_width: f64,
    /// Lane-change duration range, seconds.
    pub lane_change_duration: (f64, f64),
    /// Longitudinal range the noiseless trajectory is kept in, meters.
    pub x_range: (f64, f64),
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            n_tracks: 500,
            mix: ScenarioMix::default(),
            duration: (8.0, 15.0),
            position_noise: 0.15,
            velocity_noise: 0.15,
            lateral_jitter: 0.3,
            lane_width: 3.5,
            lane_change_duration: (3.0, 5.0),
            x_range: (5.0, 175.0),
        }
    }
}

fn valid_range(r: (f64, f64)) -> bool {
    r.0.is_finite() && r.1.is_finite() && r.0 <= r.1
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::Config(m.into()));
        if self.n_tracks == 0 {
            return bad("n_tracks must be at least 1");
        }
        let f = self.mix.fractions();
        if f.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || f.iter().sum::<f64>() <= 0.0 {
            return bad("mix fractions must be non-negative with a positive sum");
        }
        if !valid_range(self.duration) || self.duration.0 <= 0.0 {
            return bad("duration range must be positive and ordered");
        }
        if !valid_range(self.lane_change_duration) || self.lane_change_duration.0 <= 0.0 {
            return bad("lane change duration range must be positive and ordered");
        }
        if self.duration.0 < self.lane_change_duration.1 + 1.0 {
            return bad("tracks must be at least 1 s longer than the longest lane change");
        }
        if !valid_range(self.x_range) {
            return bad("x range must be ordered");
        }
        for (name, v) in [
            ("position_noise", self.position_noise),
            ("velocity_noise", self.velocity_noise),
            ("lateral_jitter", self.lateral_jitter),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(DataError::Config(format!("{name} must be non-negative")));
            }
        }
        if !(self.lane_width > 0.0) {
            return bad("lane width must be positive");
        }
        Ok(())
    }
}

/// Exact per-kind track counts for `n` tracks by the largest-remainder rule.
pub fn scenario_counts(mix: &ScenarioMix, n: usize) -> [usize; 4] {
    let f = mix.fractions();
    let total: f64 = f.iter().sum();
    let quotas: Vec<f64> = f.iter().map(|v| v / total * n as f64).collect();
    let mut counts = [0usize; 4];
    for (c, q) in counts.iter_mut().zip(&quotas) {
        *c = q.floor() as usize;
    }
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let assigned: usize = counts.iter().sum();
    for &k in order.iter().take(n - assigned) {
        counts[k] += 1;
    }
    counts
}

/// `10u^3 - 15u^4 + 6u^5` with `u` clamped to [0, 1].
pub fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * u * (10.0 + u * (-15.0 + 6.0 * u))
}

fn smoothstep_derivative(u: f64) -> f64 {
    if !(0.0..=1.0).contains(&u) {
        return 0.0;
    }
    30.0 * u * u * (1.0 - u) * (1.0 - u)
}

/// A lateral shift of `dy` meters starting `start` seconds into the track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Maneuver {
    pub start: f64,
    pub duration: f64,
    pub dy: f64,
}

/// A constant relative deceleration applied over an interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Brake {
    pub start: f64,
    pub duration: f64,
    pub decel: f64,
}

/// Everything needed to render one noiseless trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub kind: ScenarioKind,
    /// Start time in 10 ms ticks.
    pub start_tick: u64,
    pub n_samples: usize,
    pub x0: f64,
    pub y0: f64,
    /// Relative longitudinal velocity before any braking, m/s.
    pub vx: f64,
    pub weave_amplitude: f64,
    pub weave_period: f64,
    pub weave_phase: f64,
    pub maneuver: Option<Maneuver>,
    pub brake: Option<Brake>,
    pub ego_speed: f64,
    pub ego_speed_amplitude: f64,
    pub ego_speed_period: f64,
    pub ego_yaw_amplitude: f64,
    pub ego_yaw_period: f64,
    pub ego_phase: f64,
}

impl ScenarioParams {
    /// Noiseless `(x, y, vx, vy)` at `tau` seconds after the track start.
    pub fn state(&self, tau: f64) -> (f64, f64, f64, f64) {
        let mut x = self.x0 + self.vx * tau;
        let mut vx = self.vx;
        if let Some(b) = self.brake {
            let active = (tau - b.start).clamp(0.0, b.duration);
            let after = (tau - b.start - b.duration).max(0.0);
            x -= 0.5 * b.decel * active * active + b.decel * b.duration * after;
            vx -= b.decel * active;
        }
        let w = TAU / self.weave_period;
        let mut y = self.y0 + self.weave_amplitude * (w * tau + self.weave_phase).sin();
        let mut vy = self.weave_amplitude * w * (w * tau + self.weave_phase).cos();
        if let Some(m) = self.maneuver {
            let u = (tau - m.start) / m.duration;
            y += m.dy * smoothstep(u);
            vy += m.dy * smoothstep_derivative(u) / m.duration;
        }
        (x, y, vx, vy)
    }

    fn ego(&self, tau: f64) -> (f64, f64) {
        let speed = self.ego_speed
            + self.ego_speed_amplitude * (TAU * tau / self.ego_speed_period + self.ego_phase).sin();
        let yaw = self.ego_yaw_amplitude * (TAU * tau / self.ego_yaw_period + self.ego_phase).cos();
        (yaw, speed)
    }

    /// Samples the trajectory every 10 ms, adding Gaussian noise with the
    /// given position and velocity standard deviations.
    pub fn render<R: Rng>(
        &self,
        id: &str,
        position_noise: f64,
        velocity_noise: f64,
        rng: &mut R,
    ) -> Track {
        let np = Normal::new(0.0, position_noise).expect("finite noise");
        let nv = Normal::new(0.0, velocity_noise).expect("finite noise");
        let samples = (0..self.n_samples)
            .map(|k| {
                let tau = k as f64 * RAW_PERIOD;
                let (x, y, vx, vy) = self.state(tau);
                let (yaw, speed) = self.ego(tau);
                RawSample {
                    t: (self.start_tick + k as u64) as f64 * RAW_PERIOD,
                    track_id: id.to_owned(),
                    x: x + np.sample(rng),
                    y: y + np.sample(rng),
                    vx: vx + nv.sample(rng),
                    vy: vy + nv.sample(rng),
                    ego_yaw_rate: yaw,
                    ego_speed: speed,
                }
            })
            .collect();
        Track {
            id: id.to_owned(),
            samples,
        }
    }

    fn duration(&self) -> f64 {
        (self.n_samples.saturating_sub(1)) as f64 * RAW_PERIOD
    }

    /// Smallest and largest noiseless x offset from `x0` over the track.
    fn x_excursion(&self) -> (f64, f64) {
        let mut lo = 0.0f64;
        let mut hi = 0.0f64;
        let steps = (self.duration() / RESAMPLE_PERIOD).ceil() as usize;
        for k in 0..=steps {
            let tau = (k as f64 * RESAMPLE_PERIOD).min(self.duration());
            let dx = self.state(tau).0 - self.x0;
            lo = lo.min(dx);
            hi = hi.max(dx);
        }
        (lo, hi)
    }
}

fn lane_center(lane: i32, width: f64) -> f64 {
    lane as f64 * width
}

/// Draws the parameters of one scenario.
pub fn sample_params<R: Rng>(kind: ScenarioKind, spec: &ScenarioSpec, rng: &mut R) -> ScenarioParams {
    let lanes = LANE_COUNT_EACH_SIDE;
    let duration = rng.random_range(spec.duration.0..=spec.duration.1);
    let n_samples = (duration / RAW_PERIOD).round() as usize + 1;
    let lane_change = |rng: &mut R| {
        let d = rng.random_range(spec.lane_change_duration.0..=spec.lane_change_duration.1);
        let start = rng.random_range(0.5..=(duration - d - 0.5).max(0.5));
        (start, d)
    };
    let mut maneuver = None;
    let mut brake = None;
    let (lane, vx) = match kind {
        ScenarioKind::Cruise => (rng.random_range(-lanes..=lanes), rng.random_range(-3.0..=3.0)),
        ScenarioKind::LaneChange => {
            let lane = rng.random_range(-lanes..=lanes);
            let dir = if lane == lanes {
                -1
            } else if lane == -lanes || rng.random_bool(0.5) {
                1
            } else {
                -1
            };
            let (start, d) = lane_change(rng);
            maneuver = Some(Maneuver {
                start,
                duration: d,
                dy: dir as f64 * spec.lane_width,
            });
            (lane, rng.random_range(-3.0..=3.0))
        }
        ScenarioKind::CutIn => {
            let lane = if rng.random_bool(0.5) { 1 } else { -1 };
            let (start, d) = lane_change(rng);
            maneuver = Some(Maneuver {
                start,
                duration: d,
                dy: -lane as f64 * spec.lane_width,
            });
            (lane, rng.random_range(-3.0..=-0.5))
        }
        ScenarioKind::DecelLead => {
            let d = rng.random_range(1.0..=2.0);
            brake = Some(Brake {
                start: rng.random_range(1.0..=(duration - d - 1.0).max(1.0)),
                duration: d,
                decel: rng.random_range(1.0..=2.0),
            });
            (0, rng.random_range(-0.5..=0.5))
        }
    };
    let mut params = ScenarioParams {
        kind,
        start_tick: rng.random_range(0..100_000),
        n_samples,
        x0: 0.0,
        y0: lane_center(lane, spec.lane_width),
        vx,
        weave_amplitude: rng.random_range(0.0..=spec.lateral_jitter),
        weave_period: rng.random_range(3.0..=8.0),
        weave_phase: rng.random_range(0.0..TAU),
        maneuver,
        brake,
        ego_speed: rng.random_range(22.0..=33.0),
        ego_speed_amplitude: rng.random_range(0.0..=2.0),
        ego_speed_period: rng.random_range(10.0..=30.0),
        ego_yaw_amplitude: rng.random_range(0.0..=0.02),
        ego_yaw_period: rng.random_range(8.0..=20.0),
        ego_phase: rng.random_range(0.0..TAU),
    };
    let (lo, hi) = params.x_excursion();
    let (a, b) = (spec.x_range.0 - lo, spec.x_range.1 - hi);
    params.x0 = if a < b { rng.random_range(a..=b) } else { 0.5 * (a + b) };
    params
}

/// One generated track and how it was made.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub params: ScenarioParams,
    pub track: Track,
}

/// Generates `spec.n_tracks` tracks. Kinds are assigned in exact
/// largest-remainder counts and shuffled; each track draws from its own
/// random stream, so the output does not depend on execution order.
pub fn generate_scenarios(spec: &ScenarioSpec, seed: u64) -> Result<Vec<Scenario>, DataError> {
    spec.validate()?;
    let counts = scenario_counts(&spec.mix, spec.n_tracks);
    let mut kinds: Vec<ScenarioKind> = ScenarioKind::ALL
        .iter()
        .zip(counts)
        .flat_map(|(&k, c)| std::iter::repeat_n(k, c))
        .collect();
    kinds.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let indexed: Vec<(usize, ScenarioKind)> = kinds.into_iter().enumerate().collect();
    Ok(Execution::default().map(&indexed, |&(i, kind)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        let params = sample_params(kind, spec, &mut rng);
        let track = params.render(
            &format!("trk-{i:05}"),
            spec.position_noise,
            spec.velocity_noise,
            &mut rng,
        );
        Scenario {
            kind,
            params,
            track,
        }
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub track_id: String,
    pub kind: ScenarioKind,
}

/// Provenance sidecar of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator: String,
    pub seed: u64,
    pub raw_sample_period: f64,
    pub resampled_period: f64,
    pub spec: ScenarioSpec,
    pub counts: BTreeMap<String, usize>,
    pub tracks: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(spec: &ScenarioSpec, seed: u64, scenarios: &[Scenario]) -> Self {
        let mut counts: BTreeMap<String, usize> =
            ScenarioKind::ALL.iter().map(|k| (k.name().to_owned(), 0)).collect();
        for s in scenarios {
            *counts.get_mut(s.kind.name()).expect("known kind") += 1;
        }
        Self {
            generator: format!("trajgrid {}", env!("CARGO_PKG_VERSION")),
            seed,
            raw_sample_period: RAW_PERIOD,
            resampled_period: RESAMPLE_PERIOD,
            spec: spec.clone(),
            counts,
            tracks: scenarios
                .iter()
                .map(|s| ManifestEntry {
                    track_id: s.track.id.clone(),
                    kind: s.kind,
                })
                .collect(),
        }
    }

    /// Kind of each track id.
    pub fn kinds(&self) -> BTreeMap<&str, ScenarioKind> {
        self.tracks
            .iter()
            .map(|e| (e.track_id.as_str(), e.kind))
            .collect()
    }
}
