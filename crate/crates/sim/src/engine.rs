//! Mobile scenario execution: one record per tick per strategy.

use serde::Serialize;
use slash_core::angle_error::theta_from_error;
use slash_core::beam_search::{
    constant_error_establish, exhaustive_sls, handover_target, needs_maintenance, normalized_rate, slash_establish,
    slash_half_widths, slash_maintain, Action, Beam, Codebooks, LinkContext, LinkState, ProbeBudgetReport, RssProber,
};
use slash_core::positioning::hdop;
use slash_core::tof_ranging::{derive_seed, observation_sigma, RangeEstimate};
use slash_core::{ApId, Error, Point2};

use crate::channel::TruthProber;
use crate::scenario::{Resolved, StrategyKind};
use crate::tracker::Tracker;

const TRACKER_STREAM: u64 = 10;

/// One simulation step of one strategy. Angles in degrees, rates in Mb/s,
/// powers in dBm, positions in metres.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub time_s: f64,
    pub strategy: &'static str,
    pub true_x_m: f64,
    pub true_y_m: f64,
    pub est_x_m: Option<f64>,
    pub est_y_m: Option<f64>,
    pub position_error_m: Option<f64>,
    pub serving_ap: Option<u16>,
    /// `AP<n>=<metres>` pairs from the latest round, `;`-separated.
    pub d_hat_m: String,
    /// Same layout as `d_hat_m`, over the observation period.
    pub sigma_d_m: String,
    pub hdop: Option<f64>,
    pub theta_p_deg: Option<f64>,
    pub sectors_probed_ap: usize,
    pub sectors_probed_ue: usize,
    pub action: String,
    pub omega_true_rad_s: f64,
    pub omega_hat_rad_s: Option<f64>,
    pub rss_dbm: Option<f64>,
    pub rate_mbps: f64,
    pub normalized_rate_mbps: f64,
}

/// A training event triggered on an established link.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaintenanceEvent {
    pub time_s: f64,
    pub strategy: &'static str,
    pub action: String,
    pub from_ap: u16,
    pub to_ap: u16,
    pub true_x_m: f64,
    pub true_y_m: f64,
    pub probes: usize,
    pub rate_before_mbps: f64,
    pub rate_after_mbps: f64,
    pub normalized_rate_mbps: f64,
    /// Exhaustive re-training at the same instant.
    pub exhaustive_rate_mbps: f64,
    pub exhaustive_normalized_rate_mbps: f64,
    /// Index of the rotation event in progress, if any.
    pub rotation_event: Option<usize>,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategySummary {
    pub strategy: &'static str,
    pub mean_rate_mbps: f64,
    pub mean_normalized_rate_mbps: f64,
    pub total_probes: usize,
    pub trainings: usize,
    pub handovers: usize,
    pub maintenance_events: usize,
    /// Fraction of linked steps with zero rate.
    pub outage_fraction: f64,
    /// (quantile, Mb/s) over all steps.
    pub normalized_rate_ecdf: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub scenario: String,
    pub seed: u64,
    pub duration_s: f64,
    pub tick_s: f64,
    pub steps: usize,
    pub tof_rounds: u64,
    pub median_position_error_m: Option<f64>,
    pub p90_position_error_m: Option<f64>,
    pub strategies: Vec<StrategySummary>,
    pub events: Vec<MaintenanceEvent>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub trace: Vec<TraceRecord>,
    pub summary: RunSummary,
}

/// Shared per-step view handed to the strategies.
struct Step<'a> {
    resolved: &'a Resolved,
    codebooks: &'a Codebooks,
    tracker: &'a Tracker<'a>,
    observation: &'a [RangeEstimate],
    /// Ranges for the nearest-AP comparison.
    fused: &'a [RangeEstimate],
    prober: &'a TruthProber<'a>,
    t: f64,
    heading: f64,
    new_round: bool,
}

impl Step<'_> {
    fn ctx(&self) -> Option<LinkContext<'_>> {
        Some(LinkContext {
            deployment: &self.resolved.deployment,
            codebooks: self.codebooks,
            rates: &self.resolved.rates,
            position: self.tracker.position.as_ref()?,
            history: self.observation,
            ue_heading: self.heading,
            now: self.t,
        })
    }

    fn exhaustive(&self, ap: ApId) -> Option<(LinkState, ProbeBudgetReport)> {
        exhaustive_sls(self.prober, self.codebooks, &self.resolved.rates, ap, self.t).ok()
    }
}

struct StrategyRun {
    kind: StrategyKind,
    link: Option<LinkState>,
}

struct Outcome {
    report: ProbeBudgetReport,
    action: String,
    event: Option<(ApId, ApId, f64, bool)>,
}

fn failed_probes(e: &Error) -> usize {
    match e {
        Error::EstablishFailed { probes } | Error::MaintainFailed { probes } => *probes,
        _ => 0,
    }
}

impl StrategyRun {
    /// Strategy-specific establishment with exhaustive fallback.
    fn establish(&self, step: &Step<'_>, ap: ApId) -> (Option<LinkState>, ProbeBudgetReport, bool) {
        let cfg = &step.resolved.scenario.strategies;
        let attempt = step.ctx().map(|ctx| match self.kind {
            StrategyKind::Slash => slash_establish(step.prober, &ctx, ap, &cfg.slash),
            StrategyKind::Constant => constant_error_establish(step.prober, &ctx, ap, cfg.constant_error_m),
            StrategyKind::Exhaustive => exhaustive_sls(step.prober, step.codebooks, &step.resolved.rates, ap, step.t),
        });
        match attempt {
            Some(Ok((link, report))) => (Some(link), report, false),
            Some(Err(e)) => {
                let spent = ProbeBudgetReport::new(failed_probes(&e), 0);
                match step.exhaustive(ap) {
                    Some((link, report)) => (Some(link), spent + report, true),
                    None => (None, spent + exhaustive_cost(step.codebooks), true),
                }
            }
            None => (None, ProbeBudgetReport::default(), false),
        }
    }

    fn step(&mut self, step: &Step<'_>) -> Outcome {
        let mmwave = &step.resolved.mmwave_aps;
        let margin = step.resolved.scenario.strategies.slash.handover_margin;
        let idle = Outcome { report: ProbeBudgetReport::default(), action: String::new(), event: None };
        if step.tracker.position.is_none() {
            return idle;
        }
        let Some(link) = self.link.clone() else {
            let nearest = step
                .fused
                .iter()
                .filter(|r| mmwave.contains(&r.ap_id))
                .min_by(|a, b| a.d_hat.total_cmp(&b.d_hat).then(a.ap_id.cmp(&b.ap_id)));
            let Some(target) = nearest.map(|r| r.ap_id) else {
                return idle;
            };
            let (link, report, _) = self.establish(step, target);
            self.link = link;
            return Outcome { report, action: "ESTABLISH".into(), event: None };
        };

        if step.new_round {
            if let Some(target) = handover_target(link.ap_id, step.fused, mmwave, margin) {
                let (new, report, fallback) = self.establish(step, target);
                self.link = new;
                return Outcome {
                    report,
                    action: "HANDOVER".into(),
                    event: Some((link.ap_id, target, link.rate, fallback)),
                };
            }
        }

        let rates = &step.resolved.rates;
        let current =
            step.prober.probe(link.ap_id, Beam::Sector(link.best_ap_sector), Beam::Sector(link.best_ue_sector));
        let rate = rates.rate(current);
        if !needs_maintenance(rate, rates) {
            self.link = Some(LinkState { rss: current.unwrap_or(f64::NEG_INFINITY), ..link });
            return idle;
        }

        let before = rate;
        let (new, report, action, fallback) = match self.kind {
            StrategyKind::Slash => {
                let state = LinkState { rss: current.unwrap_or(f64::NEG_INFINITY), ..link.clone() };
                let ctx = step.ctx().expect("position checked above");
                let cfg = &step.resolved.scenario.strategies.slash;
                match slash_maintain(step.prober, &ctx, &state, &step.tracker.rotation, step.fused, mmwave, cfg) {
                    Ok((l, r, Action::Refine))
                        if l.rate < rates.max_rate()
                            && l.best_ap_sector == state.best_ap_sector
                            && l.best_ue_sector == state.best_ue_sector =>
                    {
                        // no better neighbour: search again around the position estimate
                        let (l2, r2, fb) = self.establish(step, l.ap_id);
                        (l2, r + r2, "REESTABLISH".to_string(), fb)
                    }
                    Ok((l, r, a)) => (Some(l), r, a.to_string(), false),
                    Err(e) => {
                        let spent = ProbeBudgetReport::new(failed_probes(&e), 0);
                        let (l, r, _) =
                            StrategyRun { kind: StrategyKind::Slash, link: None }.establish(step, link.ap_id);
                        (l, spent + r, "REESTABLISH".to_string(), true)
                    }
                }
            }
            StrategyKind::Exhaustive | StrategyKind::Constant => {
                let (l, r, fb) = self.establish(step, link.ap_id);
                (l, r, "RETRAIN".to_string(), fb)
            }
        };
        let to = new.as_ref().map_or(link.ap_id, |l| l.ap_id);
        self.link = new;
        Outcome { report, action, event: Some((link.ap_id, to, before, fallback)) }
    }
}

fn exhaustive_cost(cb: &Codebooks) -> ProbeBudgetReport {
    ProbeBudgetReport::new(cb.ap.count(), cb.ue.count())
}

fn format_per_ap(values: &[(ApId, f64)]) -> String {
    values.iter().map(|(id, v)| format!("{id}={v:.4}")).collect::<Vec<_>>().join(";")
}

fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    Some(sorted[idx])
}

/// Runs a mobile scenario.
pub fn run_scenario(resolved: &Resolved, seed: u64, strategies: &[StrategyKind]) -> RunOutput {
    let sc = &resolved.scenario;
    let codebooks = sc.channel.codebooks();
    let dt = resolved.tick();
    let t0 = resolved.start_time();
    let steps = (resolved.duration() / dt - 1e-9).ceil() as usize + 1;
    let frame = sc.strategies.frame_time_s;
    let mut tracker = Tracker::new(resolved, derive_seed(seed, TRACKER_STREAM), t0);
    let mut runs: Vec<StrategyRun> = strategies.iter().map(|&kind| StrategyRun { kind, link: None }).collect();
    let mut trace = Vec::with_capacity(steps * runs.len());
    let mut events = Vec::new();
    let mut errors = Vec::new();
    let mut per_strategy: Vec<Vec<(f64, f64, usize, bool)>> = vec![Vec::new(); runs.len()];

    for k in 0..steps {
        let t = (t0 + k as f64 * dt).min(t0 + resolved.duration());
        let new_round = tracker.advance(t, |ts| resolved.antenna_at(ts)) > 0;
        let pose = resolved.pose_at(t);
        let ue = resolved.antenna_at(t);
        let prober = TruthProber {
            channel: &sc.channel,
            deployment: &resolved.deployment,
            codebooks: &codebooks,
            ue,
            ue_heading: pose.heading,
        };
        let observation = tracker.observation(sc.observation_rounds);
        let fused = tracker.fused_ranges(sc.handover_rounds);
        let step = Step {
            resolved,
            codebooks: &codebooks,
            tracker: &tracker,
            observation: &observation,
            fused: &fused,
            prober: &prober,
            t,
            heading: pose.heading,
            new_round,
        };
        let est = tracker.position.as_ref().map(|p| p.p_hat);
        if let Some(p) = est {
            errors.push(p.distance(ue));
        }
        let d_hat: Vec<(ApId, f64)> = tracker.latest.iter().map(|r| (r.ap_id, r.d_hat)).collect();
        let sigma: Vec<(ApId, f64)> = resolved
            .deployment
            .ids()
            .filter_map(|id| {
                let own: Vec<RangeEstimate> = observation.iter().filter(|r| r.ap_id == id).cloned().collect();
                observation_sigma(&own).ok().map(|s| (id, s))
            })
            .collect();
        let h = est.and_then(|p| hdop(&resolved.deployment, p).ok());
        let omega_true = resolved.omega_true(t);
        let rotation_event = resolved.rotation_events.iter().position(|(s, e, _)| t >= *s && t <= *e + dt);

        for (i, run) in runs.iter_mut().enumerate() {
            let out = run.step(&step);
            let rss = run
                .link
                .as_ref()
                .and_then(|l| prober.probe(l.ap_id, Beam::Sector(l.best_ap_sector), Beam::Sector(l.best_ue_sector)));
            let rate = resolved.rates.rate(rss);
            let norm = normalized_rate(rate, &out.report, frame);
            let serving = run.link.as_ref().map(|l| l.ap_id);
            let theta = match (run.kind, serving, step.ctx()) {
                (StrategyKind::Slash, Some(ap), Some(ctx)) => {
                    slash_half_widths(&ctx, ap, &sc.strategies.slash).ok().map(|(a, _)| a.degrees())
                }
                (StrategyKind::Constant, Some(ap), Some(ctx)) => resolved
                    .deployment
                    .position(ap)
                    .ok()
                    .and_then(|a| theta_from_error(sc.strategies.constant_error_m, a.distance(ctx.position.p_hat)).ok())
                    .map(|a| a.degrees()),
                _ => None,
            };
            if let Some((from, to, before, fallback)) = out.event {
                let (exh_rate, exh_norm) = match step.exhaustive(to) {
                    Some((l, r)) => (l.rate, normalized_rate(l.rate, &r, frame)),
                    None => (0.0, 0.0),
                };
                events.push(MaintenanceEvent {
                    time_s: t,
                    strategy: run.kind.name(),
                    action: out.action.clone(),
                    from_ap: from.0,
                    to_ap: to.0,
                    true_x_m: ue.x,
                    true_y_m: ue.y,
                    probes: out.report.total(),
                    rate_before_mbps: before,
                    rate_after_mbps: rate,
                    normalized_rate_mbps: norm,
                    exhaustive_rate_mbps: exh_rate,
                    exhaustive_normalized_rate_mbps: exh_norm,
                    rotation_event,
                    fallback,
                });
            }
            per_strategy[i].push((rate, norm, out.report.total(), serving.is_some()));
            trace.push(TraceRecord {
                time_s: t,
                strategy: run.kind.name(),
                true_x_m: ue.x,
                true_y_m: ue.y,
                est_x_m: est.map(|p| p.x),
                est_y_m: est.map(|p| p.y),
                position_error_m: est.map(|p| p.distance(ue)),
                serving_ap: serving.map(|a| a.0),
                d_hat_m: format_per_ap(&d_hat),
                sigma_d_m: format_per_ap(&sigma),
                hdop: h,
                theta_p_deg: theta,
                sectors_probed_ap: out.report.sectors_probed_ap,
                sectors_probed_ue: out.report.sectors_probed_ue,
                action: out.action,
                omega_true_rad_s: omega_true,
                omega_hat_rad_s: tracker.omega_hat(),
                rss_dbm: rss,
                rate_mbps: rate,
                normalized_rate_mbps: norm,
            });
        }
    }

    errors.sort_by(f64::total_cmp);
    let summaries = runs
        .iter()
        .zip(&per_strategy)
        .map(|(run, rows)| {
            let n = rows.len().max(1) as f64;
            let linked: Vec<_> = rows.iter().filter(|r| r.3).collect();
            let mut norms: Vec<f64> = rows.iter().map(|r| r.1).collect();
            norms.sort_by(f64::total_cmp);
            let name = run.kind.name();
            let mine = events.iter().filter(|e| e.strategy == name);
            StrategySummary {
                strategy: name,
                mean_rate_mbps: rows.iter().map(|r| r.0).sum::<f64>() / n,
                mean_normalized_rate_mbps: rows.iter().map(|r| r.1).sum::<f64>() / n,
                total_probes: rows.iter().map(|r| r.2).sum(),
                trainings: rows.iter().filter(|r| r.2 > 0).count(),
                handovers: mine.clone().filter(|e| e.action == "HANDOVER").count(),
                maintenance_events: mine.count(),
                outage_fraction: if linked.is_empty() {
                    0.0
                } else {
                    linked.iter().filter(|r| r.0 == 0.0).count() as f64 / linked.len() as f64
                },
                normalized_rate_ecdf: [0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95]
                    .iter()
                    .filter_map(|&q| quantile(&norms, q).map(|v| (q, v)))
                    .collect(),
            }
        })
        .collect();

    RunOutput {
        trace,
        summary: RunSummary {
            scenario: sc.name.clone(),
            seed,
            duration_s: resolved.duration(),
            tick_s: dt,
            steps,
            tof_rounds: tracker.rounds(),
            median_position_error_m: quantile(&errors, 0.5),
            p90_position_error_m: quantile(&errors, 0.9),
            strategies: summaries,
            events,
        },
    }
}

/// Signed distance of `p` from the perpendicular bisector of `a`–`b`, m.
pub fn bisector_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    (p.distance(a).powi(2) - p.distance(b).powi(2)) / (2.0 * a.distance(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Scenario;

    const WALK: &str = r#"[{"x": 4, "y": 3}, {"x": 5, "y": 3}]"#;

    fn resolved(trajectory: &str, extra: &str) -> Resolved {
        let text = format!(
            r#"{{
                "deployment": [{{"id": 1, "x": 0, "y": 0}}, {{"id": 2, "x": 12, "y": 0}},
                               {{"id": 3, "x": 0, "y": 8}}, {{"id": 4, "x": 12, "y": 8}}],
                "mmwave_aps": [1],
                "trajectory": {trajectory}
                {extra}
            }}"#
        );
        Scenario::from_json(&text).unwrap().resolve().unwrap()
    }

    #[test]
    fn noiseless_static_link_holds_its_rate() {
        let r = resolved(
            r#"[{"t": 0, "x": 4, "y": 3}, {"t": 20, "x": 4, "y": 3}]"#,
            r#", "tof_noise_sigma": 0, "rotation_radius": 0"#,
        );
        let out = run_scenario(&r, 1, &[StrategyKind::Slash]);
        let rows: Vec<_> = out.trace.iter().filter(|t| t.serving_ap.is_some()).collect();
        assert!(!rows.is_empty());
        let first = rows[0];
        assert_eq!(first.action, "ESTABLISH");
        assert!(first.sectors_probed_ap + first.sectors_probed_ue <= 4, "{first:?}");
        assert!(rows[1..].iter().all(|t| t.rate_mbps == first.rate_mbps && t.action.is_empty()));
        assert_eq!(first.rate_mbps, r.rates.max_rate());
    }

    #[test]
    fn one_record_per_step_per_strategy() {
        let r = resolved(WALK, "");
        let out = run_scenario(&r, 3, &StrategyKind::ALL);
        assert_eq!(out.trace.len(), out.summary.steps * 3);
        assert_eq!(out.summary.strategies.len(), 3);
    }

    #[test]
    fn rss_within_link_budget() {
        let r = resolved(WALK, "");
        let out = run_scenario(&r, 4, &StrategyKind::ALL);
        let d_min = 4.0f64.hypot(3.0) - 1.5;
        let cap = r.scenario.channel.max_rss(d_min);
        assert!(out.trace.iter().filter_map(|t| t.rss_dbm).all(|p| p <= cap));
    }

    #[test]
    fn bisector_distance_sign_and_scale() {
        let a = Point2::new(0.0, 0.0);
        let b = Point2::new(10.0, 0.0);
        assert!(bisector_distance(Point2::new(5.0, 3.0), a, b).abs() < 1e-12);
        assert!((bisector_distance(Point2::new(6.0, 1.0), a, b) - 1.0).abs() < 1e-12);
    }
}
