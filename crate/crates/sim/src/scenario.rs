//! Scenario files: deployment, trajectory, noise and strategy settings.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use slash_core::beam_search::{RateTable, SlashConfig, DEFAULT_FRAME_TIME_S};
use slash_core::geometry::{angle_diff, wrap_angle};
use slash_core::positioning::{AccessPoint, ApDeployment, SchedulerConfig};
use slash_core::rotation::RotationConfig;
use slash_core::{ApId, Point2};

use crate::channel::ChannelConfig;
use crate::rates;

/// Raw ToF sample standard deviation, m. Chosen so that 20-sample windows
/// and multilateration over the bundled testbed give a median static
/// positioning error close to 1.6 m.
pub const DEFAULT_TOF_SIGMA: f64 = 7.0;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Parse(#[from] serde_json::Error),
    #[error("{field}: {message}")]
    Field { field: String, message: String },
}

fn field_err(field: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::Field { field: field.into(), message: message.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApSpec {
    pub id: u16,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    /// s; derived from `walk_speed` when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    pub x: f64,
    pub y: f64,
    /// rad; the direction of travel when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heading: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotationEvent {
    pub start: f64,
    pub end: f64,
    /// rad/s, positive counter-clockwise; `rotation_speed` when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultipathComponent {
    pub probability: f64,
    /// Extra path length, m.
    pub excess: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Slash,
    Exhaustive,
    Constant,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [StrategyKind::Slash, StrategyKind::Exhaustive, StrategyKind::Constant];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Slash => "slash",
            StrategyKind::Exhaustive => "exhaustive",
            StrategyKind::Constant => "constant",
        }
    }
}

impl std::str::FromStr for StrategyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "slash" => Ok(StrategyKind::Slash),
            "exhaustive" => Ok(StrategyKind::Exhaustive),
            "constant" => Ok(StrategyKind::Constant),
            other => Err(format!("unknown strategy {other:?} (expected slash, exhaustive or constant)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategyConfig {
    pub enabled: Vec<StrategyKind>,
    pub slash: SlashConfig,
    /// Position error assumed by the constant-error method, m.
    pub constant_error_m: f64,
    pub frame_time_s: f64,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        Self {
            enabled: StrategyKind::ALL.to_vec(),
            slash: SlashConfig::default(),
            constant_error_m: 2.0,
            frame_time_s: DEFAULT_FRAME_TIME_S,
        }
    }
}

/// Static link-establishment trials at random positions in the deployment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StaticTrialConfig {
    pub trials: usize,
    /// ToF rounds observed before training.
    pub observation_rounds: usize,
    /// Minimum distance between the UE and any AP, m.
    pub min_ap_distance_m: f64,
}

impl Default for StaticTrialConfig {
    fn default() -> Self {
        Self { trials: 500, observation_rounds: 10, min_ap_distance_m: 1.5 }
    }
}

fn default_name() -> String {
    "scenario".into()
}
fn default_walk_speed() -> f64 {
    0.5
}
fn default_rotation_speed() -> f64 {
    0.35
}
fn default_rotation_radius() -> f64 {
    0.3
}
fn default_tof_sigma() -> f64 {
    DEFAULT_TOF_SIGMA
}
fn default_step() -> f64 {
    0.25
}
fn default_observation_rounds() -> usize {
    10
}
fn default_handover_rounds() -> usize {
    5
}
fn default_rotation() -> RotationConfig {
    RotationConfig { window_s: 8.0, ..RotationConfig::default() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default = "default_name")]
    pub name: String,
    pub deployment: Vec<ApSpec>,
    pub mmwave_aps: Vec<u16>,
    pub trajectory: Vec<Waypoint>,
    #[serde(default)]
    pub rotation_events: Vec<RotationEvent>,
    /// m/s
    #[serde(default = "default_walk_speed")]
    pub walk_speed: f64,
    /// rad/s
    #[serde(default = "default_rotation_speed")]
    pub rotation_speed: f64,
    /// Antenna offset from the user's rotation axis, m.
    #[serde(default = "default_rotation_radius")]
    pub rotation_radius: f64,
    /// m
    #[serde(default = "default_tof_sigma")]
    pub tof_noise_sigma: f64,
    #[serde(default)]
    pub multipath: Vec<MultipathComponent>,
    #[serde(default)]
    pub seed: u64,
    /// Trajectory step, m.
    #[serde(default = "default_step")]
    pub step_m: f64,
    /// ToF rounds over which range spread is measured.
    #[serde(default = "default_observation_rounds")]
    pub observation_rounds: usize,
    /// ToF rounds averaged per AP for the nearest-AP comparison.
    #[serde(default = "default_handover_rounds")]
    pub handover_rounds: usize,
    #[serde(default)]
    pub scheduler: SchedulerConfig,
    #[serde(default = "default_rotation")]
    pub rotation: RotationConfig,
    #[serde(default)]
    pub channel: ChannelConfig,
    #[serde(default)]
    pub strategies: StrategyConfig,
    /// CSV rate table, relative to the scenario file; the bundled
    /// 802.11ad table when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_table: Option<PathBuf>,
    #[serde(default)]
    pub static_trials: StaticTrialConfig,
}

/// Timed, headed trajectory point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub t: f64,
    pub position: Point2,
    pub heading: f64,
}

/// A scenario with derived quantities resolved and checked.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub scenario: Scenario,
    pub deployment: ApDeployment,
    pub mmwave_aps: Vec<ApId>,
    pub waypoints: Vec<Pose>,
    /// (start, end, ω)
    pub rotation_events: Vec<(f64, f64, f64)>,
    pub rates: RateTable,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    /// Reads and resolves a scenario file.
    pub fn load(path: &Path) -> Result<Resolved, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let mut scenario = Self::from_json(&text)?;
        if let Some(table) = &scenario.rate_table {
            if table.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                scenario.rate_table = Some(base.join(table));
            }
        }
        scenario.resolve()
    }

    /// Checks every field and derives waypoint times and headings.
    pub fn resolve(self) -> Result<Resolved, ConfigError> {
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(field_err(field, format!("must be positive, got {v}")))
            }
        };
        positive("walk_speed", self.walk_speed)?;
        positive("step_m", self.step_m)?;
        if !(self.rotation_speed.is_finite()) {
            return Err(field_err("rotation_speed", "must be finite"));
        }
        if !(self.rotation_radius >= 0.0) {
            return Err(field_err("rotation_radius", "must be non-negative"));
        }
        if !(self.tof_noise_sigma >= 0.0) || !self.tof_noise_sigma.is_finite() {
            return Err(field_err("tof_noise_sigma", "must be non-negative"));
        }
        if self.observation_rounds == 0 {
            return Err(field_err("observation_rounds", "must be at least 1"));
        }
        if self.handover_rounds == 0 {
            return Err(field_err("handover_rounds", "must be at least 1"));
        }
        let mut total_p = 0.0;
        for (i, m) in self.multipath.iter().enumerate() {
            if !(0.0..=1.0).contains(&m.probability) {
                return Err(field_err(format!("multipath[{i}].probability"), "must lie in [0, 1]"));
            }
            if !(m.excess >= 0.0) {
                return Err(field_err(format!("multipath[{i}].excess"), "must be non-negative"));
            }
            total_p += m.probability;
        }
        if total_p > 1.0 + 1e-12 {
            return Err(field_err("multipath", "probabilities sum above 1"));
        }

        let deployment = ApDeployment::new(
            self.deployment.iter().map(|a| AccessPoint { id: ApId(a.id), position: Point2::new(a.x, a.y) }).collect(),
        )
        .map_err(|e| field_err("deployment", e.to_string()))?;
        if deployment.len() < 3 {
            return Err(field_err("deployment", "positioning needs at least 3 access points"));
        }
        if self.mmwave_aps.is_empty() {
            return Err(field_err("mmwave_aps", "at least one mmWave access point is required"));
        }
        let mut mmwave_aps = Vec::new();
        for (i, id) in self.mmwave_aps.iter().enumerate() {
            if !deployment.contains(ApId(*id)) {
                return Err(field_err(format!("mmwave_aps[{i}]"), format!("AP{id} is not in the deployment")));
            }
            if mmwave_aps.contains(&ApId(*id)) {
                return Err(field_err(format!("mmwave_aps[{i}]"), format!("AP{id} listed twice")));
            }
            mmwave_aps.push(ApId(*id));
        }

        let waypoints = self.resolve_trajectory()?;
        let mut rotation_events = Vec::new();
        for (i, e) in self.rotation_events.iter().enumerate() {
            let omega = e.omega.unwrap_or(self.rotation_speed);
            if !(e.end > e.start) || !e.start.is_finite() || !e.end.is_finite() {
                return Err(field_err(format!("rotation_events[{i}]"), "end must follow start"));
            }
            if !omega.is_finite() {
                return Err(field_err(format!("rotation_events[{i}].omega"), "must be finite"));
            }
            rotation_events.push((e.start, e.end, omega));
        }

        let sched = &self.scheduler;
        if !(sched.token_s > 0.0) || !(sched.drain_s >= 0.0) || sched.samples_per_token < 2 {
            return Err(field_err("scheduler", "needs token_s > 0, drain_s >= 0 and samples_per_token >= 2"));
        }
        let rot = &self.rotation;
        if !(rot.window_s > 0.0) || rot.upsample == 0 || !(rot.gate_band > 0.0) {
            return Err(field_err("rotation", "needs window_s > 0, upsample >= 1 and gate_band > 0"));
        }
        self.channel.validate().map_err(|m| field_err("channel", m))?;
        let strat = &self.strategies;
        strat.slash.validate().map_err(|e| field_err("strategies.slash", e.to_string()))?;
        positive("strategies.constant_error_m", strat.constant_error_m)?;
        positive("strategies.frame_time_s", strat.frame_time_s)?;
        if strat.enabled.is_empty() {
            return Err(field_err("strategies.enabled", "no strategy enabled"));
        }
        if self.static_trials.observation_rounds == 0 {
            return Err(field_err("static_trials.observation_rounds", "must be at least 1"));
        }

        let rates = match &self.rate_table {
            Some(path) => rates::load(path).map_err(|e| field_err("rate_table", format!("{e:#}")))?,
            None => rates::bundled(),
        };

        Ok(Resolved { deployment, mmwave_aps, waypoints, rotation_events, rates, scenario: self })
    }

    fn resolve_trajectory(&self) -> Result<Vec<Pose>, ConfigError> {
        let pts = &self.trajectory;
        if pts.len() < 2 {
            return Err(field_err("trajectory", "needs at least two waypoints"));
        }
        let mut poses: Vec<Pose> = Vec::with_capacity(pts.len());
        for (i, w) in pts.iter().enumerate() {
            let position = Point2::new(w.x, w.y);
            if !position.is_finite() {
                return Err(field_err(format!("trajectory[{i}]"), "non-finite position"));
            }
            let t = match (w.t, poses.last()) {
                (Some(t), _) => t,
                (None, None) => 0.0,
                (None, Some(prev)) => prev.t + prev.position.distance(position) / self.walk_speed,
            };
            if !t.is_finite() || poses.last().is_some_and(|p| !(t > p.t)) {
                return Err(field_err(format!("trajectory[{i}].t"), "times must increase strictly"));
            }
            poses.push(Pose { t, position, heading: w.heading.unwrap_or(f64::NAN) });
        }
        // missing headings follow the direction of travel
        let n = poses.len();
        let mut last_heading = 0.0;
        for i in 0..n {
            if pts[i].heading.is_some() {
                last_heading = poses[i].heading;
                continue;
            }
            let travel = |a: Point2, b: Point2| (a.distance(b) > 1e-9).then(|| a.bearing_to(b));
            let h = (i + 1 < n)
                .then(|| travel(poses[i].position, poses[i + 1].position))
                .flatten()
                .or_else(|| (i > 0).then(|| travel(poses[i - 1].position, poses[i].position)).flatten())
                .unwrap_or(last_heading);
            poses[i].heading = h;
            last_heading = h;
        }
        Ok(poses)
    }
}

impl Resolved {
    pub fn duration(&self) -> f64 {
        self.waypoints.last().map_or(0.0, |p| p.t) - self.waypoints[0].t
    }

    pub fn start_time(&self) -> f64 {
        self.waypoints[0].t
    }

    /// Accumulated heading change from rotation events up to `t`, rad.
    pub fn rotation_offset(&self, t: f64) -> f64 {
        self.rotation_events.iter().map(|(s, e, w)| w * (t.min(*e) - s).max(0.0)).sum()
    }

    /// True angular speed from rotation events at `t`, rad/s.
    pub fn omega_true(&self, t: f64) -> f64 {
        self.rotation_events.iter().filter(|(s, e, _)| t >= *s && t < *e).map(|(_, _, w)| w).sum()
    }

    /// User position and heading at `t`; headings turn along the shorter arc
    /// between waypoints.
    pub fn pose_at(&self, t: f64) -> Pose {
        let w = &self.waypoints;
        let (position, base) = if t <= w[0].t {
            (w[0].position, w[0].heading)
        } else if t >= w[w.len() - 1].t {
            (w[w.len() - 1].position, w[w.len() - 1].heading)
        } else {
            let i = w.partition_point(|p| p.t <= t) - 1;
            let (a, b) = (w[i], w[i + 1]);
            let u = (t - a.t) / (b.t - a.t);
            (a.position + (b.position - a.position) * u, a.heading + angle_diff(b.heading, a.heading) * u)
        };
        Pose { t, position, heading: wrap_angle(base + self.rotation_offset(t)) }
    }

    /// Antenna position, offset from the rotation axis along the heading.
    pub fn antenna_at(&self, t: f64) -> Point2 {
        let pose = self.pose_at(t);
        pose.position + Point2::from_polar(self.scenario.rotation_radius, pose.heading)
    }

    /// Simulation tick: one trajectory step at walking speed, shortened so
    /// the heading moves at most half a UE beamwidth per tick.
    pub fn tick(&self) -> f64 {
        let mut dt = self.scenario.step_m / self.scenario.walk_speed;
        let max_omega = self.rotation_events.iter().map(|e| e.2.abs()).fold(0.0, f64::max);
        let half_beam = self.scenario.channel.beamwidth_deg.to_radians() / 2.0;
        if max_omega > 0.0 {
            let n = (dt * max_omega / half_beam).ceil().max(1.0);
            dt /= n;
        }
        dt
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn minimal() -> &'static str {
        r#"{
            "deployment": [{"id": 1, "x": 0, "y": 0}, {"id": 2, "x": 10, "y": 0}, {"id": 3, "x": 0, "y": 10}],
            "mmwave_aps": [1],
            "trajectory": [{"x": 2, "y": 2}, {"x": 6, "y": 5}]
        }"#
    }

    #[test]
    fn defaults_and_derived_times() {
        let r = Scenario::from_json(minimal()).unwrap().resolve().unwrap();
        assert_eq!(r.scenario.walk_speed, 0.5);
        assert_eq!(r.scenario.step_m, 0.25);
        assert_eq!(r.waypoints[1].t, 10.0);
        let h = r.waypoints[0].heading;
        assert!((h - (3.0f64).atan2(4.0)).abs() < 1e-12);
        assert_eq!(r.waypoints[1].heading, h);
        assert_eq!(r.rates.max_rate(), 4620.0);
        assert_eq!(r.tick(), 0.5);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = minimal().replacen("\"mmwave_aps\"", "\"bogus\": 1, \"mmwave_aps\"", 1);
        let err = Scenario::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        let nested = minimal().replacen("{\"id\": 1,", "{\"id\": 1, \"z\": 3,", 1);
        assert!(Scenario::from_json(&nested).is_err());
    }

    #[test]
    fn field_level_diagnostics() {
        let mut s = Scenario::from_json(minimal()).unwrap();
        s.mmwave_aps = vec![9];
        let err = s.resolve().unwrap_err().to_string();
        assert!(err.starts_with("mmwave_aps[0]"), "{err}");

        let mut s = Scenario::from_json(minimal()).unwrap();
        s.multipath = vec![MultipathComponent { probability: 1.5, excess: 3.0 }];
        assert!(s.resolve().unwrap_err().to_string().starts_with("multipath[0].probability"));

        let mut s = Scenario::from_json(minimal()).unwrap();
        s.trajectory[1].t = Some(0.0);
        s.trajectory[0].t = Some(1.0);
        assert!(s.resolve().unwrap_err().to_string().starts_with("trajectory[1].t"));

        let mut s = Scenario::from_json(minimal()).unwrap();
        s.rotation_events = vec![RotationEvent { start: 2.0, end: 1.0, omega: None }];
        assert!(s.resolve().unwrap_err().to_string().starts_with("rotation_events[0]"));
    }

    #[test]
    fn poses_follow_waypoints_and_rotations() {
        let mut s = Scenario::from_json(minimal()).unwrap();
        s.rotation_events = vec![RotationEvent { start: 2.0, end: 4.0, omega: None }];
        let r = s.resolve().unwrap();
        let base = r.waypoints[0].heading;
        let mid = r.pose_at(5.0);
        assert!(mid.position.distance(Point2::new(4.0, 3.5)) < 1e-12);
        assert!((angle_diff(mid.heading, base) - 0.7).abs() < 1e-12);
        assert!((angle_diff(r.pose_at(3.0).heading, base) - 0.35).abs() < 1e-12);
        assert_eq!(r.omega_true(3.0), 0.35);
        assert_eq!(r.omega_true(4.0), 0.0);
        let antenna = r.antenna_at(0.0);
        assert!((antenna.distance(Point2::new(2.0, 2.0)) - 0.3).abs() < 1e-12);
        // 0.35 rad/s moves 0.175 rad per 0.5 s step; 3.5° is 0.061 rad
        assert!((r.tick() - 0.5 / 3.0).abs() < 1e-12);
    }
}
