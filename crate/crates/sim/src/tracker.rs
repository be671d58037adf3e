//! UE-side measurement loop: scheduled ToF rounds feed ranging,
//! multilateration and rotation estimation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use slash_core::positioning::{multilaterate, MeasurementScheduler, PositionEstimate};
use slash_core::rotation::{estimate_rotation, RangeSeries, RotationEstimate};
use slash_core::tof_ranging::{derive_seed, estimate_range, RangeEstimate, ToFSampleSet};
use slash_core::{ApId, Point2};

use crate::scenario::Resolved;
use crate::tof::draw_sample;

const SCHEDULER_STREAM: u64 = 1;
const SAMPLE_STREAM: u64 = 2;
const GMM_STREAM: u64 = 3;

pub struct Tracker<'a> {
    resolved: &'a Resolved,
    scheduler: MeasurementScheduler,
    rng: ChaCha8Rng,
    gmm_seed: u64,
    rounds: u64,
    /// Range estimates, oldest first; trimmed to what the estimators read.
    pub history: Vec<RangeEstimate>,
    /// Estimates of the most recent round.
    pub latest: Vec<RangeEstimate>,
    pub position: Option<PositionEstimate>,
    pub rotation: Vec<RotationEstimate>,
}

impl<'a> Tracker<'a> {
    pub fn new(resolved: &'a Resolved, seed: u64, start: f64) -> Self {
        let scheduler = MeasurementScheduler::new(
            &resolved.deployment,
            resolved.scenario.scheduler,
            derive_seed(seed, SCHEDULER_STREAM),
            start,
        )
        .expect("scheduler validated with the scenario");
        Self {
            resolved,
            scheduler,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, SAMPLE_STREAM)),
            gmm_seed: derive_seed(seed, GMM_STREAM),
            rounds: 0,
            history: Vec::new(),
            latest: Vec::new(),
            position: None,
            rotation: Vec::new(),
        }
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    pub fn round_duration(&self) -> f64 {
        self.scheduler.round_duration()
    }

    /// Runs every round that finishes by `t`, with the UE antenna at
    /// `antenna(time)`. Returns the number of rounds completed.
    pub fn advance(&mut self, t: f64, antenna: impl Fn(f64) -> Point2) -> usize {
        let mut done = 0;
        while self.scheduler.next_start() + self.scheduler.round_duration() <= t + 1e-9 {
            self.run_round(&antenna);
            done += 1;
        }
        done
    }

    fn run_round(&mut self, antenna: &impl Fn(f64) -> Point2) {
        let sc = &self.resolved.scenario;
        let slots = self.scheduler.next_round();
        let mut ranges = Vec::with_capacity(slots.len());
        for (i, slot) in slots.iter().enumerate() {
            let ap = self.resolved.deployment.position(slot.ap_id).expect("scheduled APs come from the deployment");
            let times = slot.sample_times(sc.scheduler.samples_per_token);
            let samples = times
                .iter()
                .map(|&ts| draw_sample(antenna(ts).distance(ap), sc.tof_noise_sigma, &sc.multipath, &mut self.rng))
                .collect();
            let Ok(set) = ToFSampleSet::new(slot.ap_id, samples, times) else {
                continue;
            };
            if let Ok(r) = estimate_range(&set, derive_seed(self.gmm_seed, (self.rounds << 8) | i as u64)) {
                ranges.push(r);
            }
        }
        self.rounds += 1;
        ranges.sort_by_key(|r| r.ap_id);
        if ranges.len() >= 3 {
            if let Ok(p) = multilaterate(&ranges, &self.resolved.deployment, self.position.as_ref()) {
                self.position = Some(p);
            }
        }
        self.history.extend(ranges.iter().cloned());
        self.latest = ranges;
        self.update_rotation();
        self.trim();
    }

    fn keep_rounds(&self) -> usize {
        let window_rounds = (self.resolved.scenario.rotation.window_s / self.round_duration()).ceil() as usize + 1;
        window_rounds.max(self.resolved.scenario.observation_rounds).max(self.resolved.scenario.handover_rounds)
    }

    fn trim(&mut self) {
        let keep = self.keep_rounds() * self.resolved.deployment.len();
        if self.history.len() > keep {
            self.history.drain(..self.history.len() - keep);
        }
        let keep_rot = 64;
        if self.rotation.len() > keep_rot {
            self.rotation.drain(..self.rotation.len() - keep_rot);
        }
    }

    fn update_rotation(&mut self) {
        let Some(end) = self.history.iter().map(|r| r.timestamp).reduce(f64::max) else {
            return;
        };
        let start = end - self.resolved.scenario.rotation.window_s;
        let series: Vec<RangeSeries> = self
            .resolved
            .deployment
            .ids()
            .filter_map(|id| {
                let own: Vec<RangeEstimate> =
                    self.history.iter().filter(|r| r.ap_id == id && r.timestamp >= start).cloned().collect();
                RangeSeries::from_estimates(id, &own).ok()
            })
            .collect();
        if let Ok(est) = estimate_rotation(&series, &self.resolved.scenario.rotation) {
            self.rotation.push(est);
        }
    }

    /// The last `observation_rounds` estimates per AP.
    pub fn observation(&self, rounds: usize) -> Vec<RangeEstimate> {
        let mut out = Vec::new();
        for id in self.resolved.deployment.ids() {
            let own: Vec<&RangeEstimate> = self.history.iter().filter(|r| r.ap_id == id).collect();
            let skip = own.len().saturating_sub(rounds);
            out.extend(own[skip..].iter().map(|r| (*r).clone()));
        }
        out
    }

    /// Per-AP mean range over the last `rounds` rounds, stamped with the
    /// latest window end.
    pub fn fused_ranges(&self, rounds: usize) -> Vec<RangeEstimate> {
        let rounds = rounds.max(1);
        let mut out = Vec::new();
        for id in self.resolved.deployment.ids() {
            let own: Vec<&RangeEstimate> = self.history.iter().filter(|r| r.ap_id == id).collect();
            let recent = &own[own.len().saturating_sub(rounds)..];
            let Some(last) = recent.last() else { continue };
            let d_hat = recent.iter().map(|r| r.d_hat).sum::<f64>() / recent.len() as f64;
            out.push(RangeEstimate { d_hat, ..(*last).clone() });
        }
        out
    }

    /// Latest gated rotation speed, rad/s.
    pub fn omega_hat(&self) -> Option<f64> {
        self.rotation.last().map(|r| r.omega_hat)
    }

    /// Nearest AP among `candidates` by latest range.
    pub fn nearest(&self, candidates: &[ApId]) -> Option<ApId> {
        self.latest
            .iter()
            .filter(|r| candidates.contains(&r.ap_id))
            .min_by(|a, b| a.d_hat.total_cmp(&b.d_hat).then(a.ap_id.cmp(&b.ap_id)))
            .map(|r| r.ap_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Scenario;

    fn resolved(sigma: f64) -> Resolved {
        let mut s = Scenario::from_json(
            r#"{
                "deployment": [{"id": 1, "x": 0, "y": 0}, {"id": 2, "x": 10, "y": 0},
                               {"id": 3, "x": 0, "y": 10}, {"id": 4, "x": 10, "y": 10}],
                "mmwave_aps": [1, 2],
                "trajectory": [{"x": 3, "y": 4}, {"x": 3.001, "y": 4}]
            }"#,
        )
        .unwrap();
        s.tof_noise_sigma = sigma;
        s.resolve().unwrap()
    }

    #[test]
    fn noiseless_rounds_locate_the_antenna() {
        let r = resolved(0.0);
        let mut tr = Tracker::new(&r, 5, 0.0);
        let ue = Point2::new(3.0, 4.0);
        assert_eq!(tr.advance(0.5, |_| ue), 0);
        assert!(tr.position.is_none());
        let n = tr.advance(3.0 * tr.round_duration(), |_| ue);
        assert_eq!(n, 3);
        let p = tr.position.as_ref().unwrap();
        assert!(p.p_hat.distance(ue) < 1e-6, "{:?}", p.p_hat);
        assert_eq!(tr.latest.len(), 4);
        assert_eq!(tr.nearest(&[ApId(1), ApId(2)]), Some(ApId(1)));
        assert_eq!(tr.observation(2).len(), 8);
        let fused = tr.fused_ranges(3);
        assert_eq!(fused.len(), 4);
        assert!((fused[0].d_hat - 5.0).abs() < 1e-9);
    }

    #[test]
    fn deterministic_for_a_seed() {
        let r = resolved(1.0);
        let ue = Point2::new(3.0, 4.0);
        let run = |seed| {
            let mut tr = Tracker::new(&r, seed, 0.0);
            tr.advance(10.0, |_| ue);
            tr.position.unwrap().p_hat
        };
        assert_eq!(run(1), run(1));
        assert_ne!(run(1), run(2));
    }

    #[test]
    fn history_is_bounded() {
        let r = resolved(0.5);
        let mut tr = Tracker::new(&r, 1, 0.0);
        tr.advance(200.0, |_| Point2::new(3.0, 4.0));
        assert!(tr.history.len() <= tr.keep_rounds() * 4);
        assert!(tr.rotation.len() <= 64);
        assert!(!tr.rotation.is_empty());
    }
}
