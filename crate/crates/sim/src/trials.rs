//! Static link-establishment trials and the confidence-level sweep.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use slash_core::beam_search::{
    constant_error_establish, exhaustive_sls, normalized_rate, region_centers, sectors_in_region, slash_establish,
    slash_half_widths, Codebooks, LinkContext, LinkState, ProbeBudgetReport, SlashConfig,
};
use slash_core::positioning::{hdop, PositionEstimate};
use slash_core::tof_ranging::{derive_seed, observation_sigma, RangeEstimate};
use slash_core::{ApId, Error, Point2};

use crate::channel::TruthProber;
use crate::scenario::Resolved;
use crate::tracker::Tracker;

const POSE_STREAM: u64 = 20;
const TRIAL_STREAM: u64 = 21;
const MAX_POSE_DRAWS: usize = 10_000;

/// A static UE after its observation period.
#[derive(Debug, Clone)]
pub struct TrialSetup {
    pub index: usize,
    /// True antenna position.
    pub ue: Point2,
    pub heading: f64,
    pub position: PositionEstimate,
    pub observation: Vec<RangeEstimate>,
    pub serving: ApId,
}

impl TrialSetup {
    pub fn position_error(&self) -> f64 {
        self.position.p_hat.distance(self.ue)
    }

    fn ctx<'a>(&'a self, resolved: &'a Resolved, codebooks: &'a Codebooks) -> LinkContext<'a> {
        LinkContext {
            deployment: &resolved.deployment,
            codebooks,
            rates: &resolved.rates,
            position: &self.position,
            history: &self.observation,
            ue_heading: self.heading,
            now: 0.0,
        }
    }

    fn prober<'a>(&self, resolved: &'a Resolved, codebooks: &'a Codebooks) -> TruthProber<'a> {
        TruthProber {
            channel: &resolved.scenario.channel,
            deployment: &resolved.deployment,
            codebooks,
            ue: self.ue,
            ue_heading: self.heading,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinkResult {
    pub probes: usize,
    pub rate_mbps: f64,
    pub normalized_rate_mbps: f64,
    pub ap_sector: Option<usize>,
}

impl LinkResult {
    fn from(result: slash_core::Result<(LinkState, ProbeBudgetReport)>, frame: f64) -> Self {
        match result {
            Ok((link, report)) => Self {
                probes: report.total(),
                rate_mbps: link.rate,
                normalized_rate_mbps: normalized_rate(link.rate, &report, frame),
                ap_sector: Some(link.best_ap_sector),
            },
            Err(e) => Self {
                probes: match e {
                    Error::EstablishFailed { probes } => probes,
                    _ => 0,
                },
                rate_mbps: 0.0,
                normalized_rate_mbps: 0.0,
                ap_sector: None,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub index: usize,
    pub position_error_m: f64,
    pub d_hat_m: f64,
    pub sigma_d_m: f64,
    pub hdop: f64,
    pub theta_ap_deg: f64,
    pub theta_ue_deg: f64,
    /// AP sector chosen by exhaustive search on the true channel.
    pub true_best_ap_sector: Option<usize>,
    pub contains_best_ap_sector: bool,
    pub exhaustive: LinkResult,
    pub slash: LinkResult,
    pub constant: LinkResult,
}

/// Random static poses at least `min_ap_distance_m` from every AP, inside
/// the deployment's bounding box, each observed for the configured rounds.
pub fn prepare_trials(resolved: &Resolved, seed: u64, count: usize) -> Vec<TrialSetup> {
    let cfg = resolved.scenario.static_trials;
    let aps: Vec<Point2> = resolved.deployment.aps().iter().map(|a| a.position).collect();
    let (mut lo, mut hi) = (aps[0], aps[0]);
    for p in &aps {
        lo = Point2::new(lo.x.min(p.x), lo.y.min(p.y));
        hi = Point2::new(hi.x.max(p.x), hi.y.max(p.y));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, POSE_STREAM));
    let mut out = Vec::with_capacity(count);
    for index in 0..count {
        let mut ue = None;
        for _ in 0..MAX_POSE_DRAWS {
            let p = Point2::new(rng.random_range(lo.x..=hi.x), rng.random_range(lo.y..=hi.y));
            if aps.iter().all(|a| a.distance(p) >= cfg.min_ap_distance_m) {
                ue = Some(p);
                break;
            }
        }
        let Some(ue) = ue else { continue };
        let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let mut tracker = Tracker::new(resolved, derive_seed(seed, (TRIAL_STREAM << 32) | index as u64), 0.0);
        tracker.advance(cfg.observation_rounds as f64 * tracker.round_duration(), |_| ue);
        let (Some(position), Some(serving)) = (tracker.position.clone(), tracker.nearest(&resolved.mmwave_aps)) else {
            continue;
        };
        out.push(TrialSetup {
            index,
            ue,
            heading,
            position,
            observation: tracker.observation(cfg.observation_rounds),
            serving,
        });
    }
    out
}

/// SLASH establishment for one trial.
pub fn slash_link(resolved: &Resolved, setup: &TrialSetup, config: &SlashConfig) -> LinkResult {
    let codebooks = resolved.scenario.channel.codebooks();
    let prober = setup.prober(resolved, &codebooks);
    let ctx = setup.ctx(resolved, &codebooks);
    LinkResult::from(slash_establish(&prober, &ctx, setup.serving, config), resolved.scenario.strategies.frame_time_s)
}

pub fn exhaustive_link(resolved: &Resolved, setup: &TrialSetup) -> LinkResult {
    let codebooks = resolved.scenario.channel.codebooks();
    let prober = setup.prober(resolved, &codebooks);
    LinkResult::from(
        exhaustive_sls(&prober, &codebooks, &resolved.rates, setup.serving, 0.0),
        resolved.scenario.strategies.frame_time_s,
    )
}

/// All three strategies plus the region diagnostics for one trial.
pub fn evaluate_trial(
    resolved: &Resolved,
    setup: &TrialSetup,
    config: &SlashConfig,
) -> slash_core::Result<TrialOutcome> {
    let sc = &resolved.scenario;
    let codebooks = sc.channel.codebooks();
    let prober = setup.prober(resolved, &codebooks);
    let ctx = setup.ctx(resolved, &codebooks);
    let frame = sc.strategies.frame_time_s;
    let (theta_ap, theta_ue) = slash_half_widths(&ctx, setup.serving, config)?;
    let (ap_center, _) = region_centers(&ctx, setup.serving)?;
    let region = sectors_in_region(&codebooks.ap, ap_center, theta_ap.theta_p)?;
    let exhaustive = exhaustive_link(resolved, setup);
    let own: Vec<RangeEstimate> = setup.observation.iter().filter(|r| r.ap_id == setup.serving).cloned().collect();
    Ok(TrialOutcome {
        index: setup.index,
        position_error_m: setup.position_error(),
        d_hat_m: resolved.deployment.position(setup.serving)?.distance(setup.position.p_hat),
        sigma_d_m: observation_sigma(&own)?,
        hdop: hdop(&resolved.deployment, setup.position.p_hat)?,
        theta_ap_deg: theta_ap.degrees(),
        theta_ue_deg: theta_ue.degrees(),
        true_best_ap_sector: exhaustive.ap_sector,
        contains_best_ap_sector: exhaustive.ap_sector.is_some_and(|s| region.contains(&s)),
        exhaustive,
        slash: LinkResult::from(slash_establish(&prober, &ctx, setup.serving, config), frame),
        constant: LinkResult::from(
            constant_error_establish(&prober, &ctx, setup.serving, sc.strategies.constant_error_m),
            frame,
        ),
    })
}

/// Runs `trials` static trials with the scenario's SLASH settings.
pub fn run_static_trials(resolved: &Resolved, seed: u64, trials: usize) -> Vec<TrialOutcome> {
    prepare_trials(resolved, seed, trials)
        .iter()
        .filter_map(|s| evaluate_trial(resolved, s, &resolved.scenario.strategies.slash).ok())
        .collect()
}

/// One cell of the confidence sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub p_i: f64,
    pub p_ii: f64,
    /// Mean of `1 − R_norm / R_exhaustive` over links, R_exhaustive taken
    /// without overhead.
    pub mean_loss: f64,
    pub mean_normalized_rate_mbps: f64,
    pub mean_probes: f64,
    pub links: usize,
}

/// Parses `start:step:end` into an inclusive grid.
pub fn parse_grid(grid: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = grid.split(':').collect();
    let [a, s, b] = parts[..] else {
        return Err(format!("grid {grid:?} is not start:step:end"));
    };
    let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("grid {grid:?}: {e}"));
    let (start, step, end) = (num(a)?, num(s)?, num(b)?);
    if !(step > 0.0) || !(end >= start) {
        return Err(format!("grid {grid:?} needs step > 0 and end >= start"));
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    let values: Vec<f64> = (0..=n).map(|i| start + i as f64 * step).collect();
    if values.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
        return Err(format!("grid {grid:?} must lie inside (0, 1)"));
    }
    Ok(values)
}

/// Data-rate loss against exhaustive search for every `(p_I, p_II)` pair.
pub fn sweep_confidence(
    resolved: &Resolved,
    setups: &[TrialSetup],
    p_i_grid: &[f64],
    p_ii_grid: &[f64],
) -> Vec<SweepRow> {
    let references: Vec<f64> = setups.iter().map(|s| exhaustive_link(resolved, s).rate_mbps).collect();
    let base = resolved.scenario.strategies.slash;
    let mut rows = Vec::with_capacity(p_i_grid.len() * p_ii_grid.len());
    for &p_i in p_i_grid {
        for &p_ii in p_ii_grid {
            let cfg = SlashConfig { p_i, p_ii: Some(p_ii), ..base };
            let (mut loss, mut norm, mut probes, mut links) = (0.0, 0.0, 0.0, 0usize);
            for (s, &r_exh) in setups.iter().zip(&references) {
                if r_exh <= 0.0 {
                    continue;
                }
                let link = slash_link(resolved, s, &cfg);
                loss += 1.0 - link.normalized_rate_mbps / r_exh;
                norm += link.normalized_rate_mbps;
                probes += link.probes as f64;
                links += 1;
            }
            let n = links.max(1) as f64;
            rows.push(SweepRow {
                p_i,
                p_ii,
                mean_loss: loss / n,
                mean_normalized_rate_mbps: norm / n,
                mean_probes: probes / n,
                links,
            });
        }
    }
    rows
}
