//! Beam training strategies over an abstract RSS prober.
//!
//! Two-phase sector sweeps: the AP sweeps its sectors while the UE listens
//! quasi-omnidirectionally, then the UE sweeps with the AP fixed on its best
//! sector. SLASH restricts both phases to the angular region implied by the
//! position estimate; maintenance reacts to estimated rotation, small drift
//! and AP handover.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use std::ops::Add;

use serde::{Deserialize, Serialize};

use crate::angle_error::{angle_error_inputs, theta_from_error, theta_p, AngleError};
use crate::geometry::{angle_diff, wrap_angle};
use crate::positioning::{ApDeployment, PositionEstimate};
use crate::rotation::{accumulated_rotation, RotationEstimate};
use crate::tof_ranging::RangeEstimate;
use crate::{ApId, Error, Result};

/// Duration of one training frame, s.
pub const PROBE_DURATION_S: f64 = 15.8e-6;
/// Data frame duration used for normalising rates, s.
pub const DEFAULT_FRAME_TIME_S: f64 = 2e-3;
pub const DEFAULT_BEAMWIDTH_DEG: f64 = 7.0;
pub const DEFAULT_P_I: f64 = 0.63;
/// Range margin before handing over to a closer AP, m.
pub const DEFAULT_HANDOVER_MARGIN_M: f64 = 0.5;

/// Uniformly spaced sectors covering the full circle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorCodebook {
    beamwidth: f64,
    boresights: Vec<f64>,
}

impl SectorCodebook {
    pub fn new(beamwidth: f64) -> Result<Self> {
        if !(beamwidth > 0.0 && beamwidth <= TAU) {
            return Err(Error::invalid(format!("beamwidth must lie in (0, 2π], got {beamwidth}")));
        }
        // tolerate beamwidths that divide the circle up to rounding
        let count = ((TAU / beamwidth) - 1e-9).ceil().max(1.0) as usize;
        let spacing = TAU / count as f64;
        Ok(Self { beamwidth, boresights: (0..count).map(|i| i as f64 * spacing).collect() })
    }

    pub fn from_degrees(beamwidth_deg: f64) -> Result<Self> {
        Self::new(beamwidth_deg.to_radians())
    }

    pub fn beamwidth(&self) -> f64 {
        self.beamwidth
    }

    pub fn count(&self) -> usize {
        self.boresights.len()
    }

    pub fn spacing(&self) -> f64 {
        TAU / self.count() as f64
    }

    pub fn boresights(&self) -> &[f64] {
        &self.boresights
    }

    pub fn boresight(&self, sector: usize) -> f64 {
        self.boresights[sector]
    }

    /// Sector whose boresight is closest to `angle`.
    pub fn nearest(&self, angle: f64) -> usize {
        (wrap_angle(angle) / self.spacing()).round() as usize % self.count()
    }

    /// Sector `offset` steps away from `sector`, wrapping around.
    pub fn offset(&self, sector: usize, offset: i64) -> usize {
        (sector as i64 + offset).rem_euclid(self.count() as i64) as usize
    }
}

/// AP and UE codebooks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Codebooks {
    pub ap: SectorCodebook,
    pub ue: SectorCodebook,
}

impl Codebooks {
    pub fn symmetric(beamwidth: f64) -> Result<Self> {
        let cb = SectorCodebook::new(beamwidth)?;
        Ok(Self { ap: cb.clone(), ue: cb })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Beam {
    Omni,
    Sector(usize),
}

/// Measures the RSS of one training frame. `None` means below the noise
/// floor.
pub trait RssProber {
    fn probe(&self, ap_id: ApId, ap_beam: Beam, ue_beam: Beam) -> Option<f64>;
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeBudgetReport {
    pub sectors_probed_ap: usize,
    pub sectors_probed_ue: usize,
}

impl ProbeBudgetReport {
    pub fn new(ap: usize, ue: usize) -> Self {
        Self { sectors_probed_ap: ap, sectors_probed_ue: ue }
    }

    pub fn total(&self) -> usize {
        self.sectors_probed_ap + self.sectors_probed_ue
    }

    /// Training overhead, s.
    pub fn tau(&self) -> f64 {
        self.total() as f64 * PROBE_DURATION_S
    }
}

impl Add for ProbeBudgetReport {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self::new(self.sectors_probed_ap + rhs.sectors_probed_ap, self.sectors_probed_ue + rhs.sectors_probed_ue)
    }
}

/// RSS threshold to rate steps, ordered ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<RateStep>", into = "Vec<RateStep>")]
pub struct RateTable {
    steps: Vec<RateStep>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateStep {
    /// dBm
    pub min_rss: f64,
    /// Mb/s
    pub rate: f64,
}

impl TryFrom<Vec<RateStep>> for RateTable {
    type Error = Error;
    fn try_from(steps: Vec<RateStep>) -> Result<Self> {
        Self::new(steps)
    }
}

impl From<RateTable> for Vec<RateStep> {
    fn from(t: RateTable) -> Self {
        t.steps
    }
}

impl RateTable {
    pub fn new(steps: Vec<RateStep>) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::invalid("rate table is empty"));
        }
        if steps.iter().any(|s| !s.min_rss.is_finite() || !(s.rate > 0.0)) {
            return Err(Error::invalid("rate table entries must be finite with positive rates"));
        }
        if steps.windows(2).any(|w| !(w[1].min_rss > w[0].min_rss) || !(w[1].rate > w[0].rate)) {
            return Err(Error::invalid("rate table must increase strictly in both columns"));
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[RateStep] {
        &self.steps
    }

    /// Highest rate whose threshold is at or below `rss`; zero below all.
    pub fn rate(&self, rss: Option<f64>) -> f64 {
        let Some(rss) = rss else { return 0.0 };
        self.steps.iter().rev().find(|s| s.min_rss <= rss).map_or(0.0, |s| s.rate)
    }

    pub fn max_rate(&self) -> f64 {
        self.steps[self.steps.len() - 1].rate
    }

    pub fn min_rss(&self) -> f64 {
        self.steps[0].min_rss
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkState {
    pub ap_id: ApId,
    pub best_ap_sector: usize,
    pub best_ue_sector: usize,
    /// dBm
    pub rss: f64,
    /// Mb/s
    pub rate: f64,
    pub established_at: f64,
    pub last_alignment: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Action {
    RotationFix,
    Refine,
    Handover,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::RotationFix => "ROTATION_FIX",
            Action::Refine => "REFINE",
            Action::Handover => "HANDOVER",
        })
    }
}

/// Where the UE sweep is centred.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UeCentering {
    /// On the direction from the position estimate to the AP.
    #[default]
    Position,
    /// On the reverse of the AP sector that won the AP sweep.
    ApSector,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SlashConfig {
    /// Confidence of the AP sweep region.
    pub p_i: f64,
    /// Confidence of the UE sweep region; half of `p_i` when unset.
    pub p_ii: Option<f64>,
    pub ue_centering: UeCentering,
    /// m
    pub handover_margin: f64,
}

impl Default for SlashConfig {
    fn default() -> Self {
        Self {
            p_i: DEFAULT_P_I,
            p_ii: None,
            ue_centering: UeCentering::Position,
            handover_margin: DEFAULT_HANDOVER_MARGIN_M,
        }
    }
}

impl SlashConfig {
    pub fn p_ii(&self) -> f64 {
        self.p_ii.unwrap_or(self.p_i / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |p: f64| p > 0.0 && p < 1.0;
        if !ok(self.p_i) || !ok(self.p_ii()) {
            return Err(Error::invalid("confidence levels must lie in (0, 1)"));
        }
        if !(self.handover_margin >= 0.0) {
            return Err(Error::invalid("handover margin must be non-negative"));
        }
        Ok(())
    }
}

/// What the UE side knows when training starts.
#[derive(Debug, Clone, Copy)]
pub struct LinkContext<'a> {
    /// Ranging deployment, used for HDOP.
    pub deployment: &'a ApDeployment,
    pub codebooks: &'a Codebooks,
    pub rates: &'a RateTable,
    pub position: &'a PositionEstimate,
    /// Range history over the observation period.
    pub history: &'a [RangeEstimate],
    /// Believed UE heading, rad. UE sectors are indexed in the body frame.
    pub ue_heading: f64,
    pub now: f64,
}

/// Sectors to probe for a region of `±half_width` around `center`: every
/// sector whose boresight lies inside the region, plus the sector nearest
/// to `center`. Ascending index order.
pub fn sectors_in_region(codebook: &SectorCodebook, center: f64, half_width: f64) -> Result<Vec<usize>> {
    if !(0.0..=FRAC_PI_2).contains(&half_width) {
        return Err(Error::invalid(format!("half width must lie in [0, π/2], got {half_width}")));
    }
    let nearest = codebook.nearest(center);
    let eps = 1e-12;
    Ok(codebook
        .boresights()
        .iter()
        .enumerate()
        .filter(|(i, b)| *i == nearest || angle_diff(**b, center).abs() <= half_width + eps)
        .map(|(i, _)| i)
        .collect())
}

/// Strongest beam among `candidates`; ties go to the lowest index.
fn strongest(candidates: &[usize], mut measure: impl FnMut(usize) -> Option<f64>) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    let mut order = candidates.to_vec();
    order.sort_unstable();
    for i in order {
        if let Some(rss) = measure(i) {
            if best.is_none_or(|(_, b)| rss > b) {
                best = Some((i, rss));
            }
        }
    }
    best
}

fn sweep_pair(
    prober: &dyn RssProber,
    ap_id: ApId,
    ap_sectors: &[usize],
    ue_sectors: impl FnOnce(usize) -> Vec<usize>,
    rates: &RateTable,
    now: f64,
) -> Result<(LinkState, ProbeBudgetReport)> {
    let ap_probes = ap_sectors.len();
    let Some((best_ap, _)) = strongest(ap_sectors, |i| prober.probe(ap_id, Beam::Sector(i), Beam::Omni)) else {
        return Err(Error::EstablishFailed { probes: ap_probes });
    };
    let ue = ue_sectors(best_ap);
    let report = ProbeBudgetReport::new(ap_probes, ue.len());
    let Some((best_ue, rss)) = strongest(&ue, |j| prober.probe(ap_id, Beam::Sector(best_ap), Beam::Sector(j))) else {
        return Err(Error::EstablishFailed { probes: report.total() });
    };
    Ok((
        LinkState {
            ap_id,
            best_ap_sector: best_ap,
            best_ue_sector: best_ue,
            rss,
            rate: rates.rate(Some(rss)),
            established_at: now,
            last_alignment: now,
        },
        report,
    ))
}

/// Full two-phase sweep over both codebooks.
pub fn exhaustive_sls(
    prober: &dyn RssProber,
    codebooks: &Codebooks,
    rates: &RateTable,
    ap_id: ApId,
    now: f64,
) -> Result<(LinkState, ProbeBudgetReport)> {
    let ap: Vec<usize> = (0..codebooks.ap.count()).collect();
    let ue: Vec<usize> = (0..codebooks.ue.count()).collect();
    sweep_pair(prober, ap_id, &ap, |_| ue, rates, now)
}

/// Centres of the AP and UE regions for `ap_id` (UE centre in the body
/// frame, position-based).
pub fn region_centers(ctx: &LinkContext<'_>, ap_id: ApId) -> Result<(f64, f64)> {
    let ap = ctx.deployment.position(ap_id)?;
    let ap_center = ap.bearing_to(ctx.position.p_hat);
    let ue_center = wrap_angle(ap_center + PI - ctx.ue_heading);
    Ok((ap_center, ue_center))
}

/// Angular half-widths of the two SLASH sweeps.
pub fn slash_half_widths(ctx: &LinkContext<'_>, ap_id: ApId, config: &SlashConfig) -> Result<(AngleError, AngleError)> {
    config.validate()?;
    let inputs = angle_error_inputs(ctx.deployment, ctx.position, ctx.history, ap_id, config.p_i)?;
    Ok((theta_p(&inputs)?, theta_p(&inputs.with_p(config.p_ii())?)?))
}

fn region_sweep(
    prober: &dyn RssProber,
    ctx: &LinkContext<'_>,
    ap_id: ApId,
    ap_half: f64,
    ue_half: f64,
    centering: UeCentering,
) -> Result<(LinkState, ProbeBudgetReport)> {
    let (ap_center, ue_center) = region_centers(ctx, ap_id)?;
    let ap_sectors = sectors_in_region(&ctx.codebooks.ap, ap_center, ap_half)?;
    let ue_region = |best_ap: usize| {
        let center = match centering {
            UeCentering::Position => ue_center,
            UeCentering::ApSector => wrap_angle(ctx.codebooks.ap.boresight(best_ap) + PI - ctx.ue_heading),
        };
        sectors_in_region(&ctx.codebooks.ue, center, ue_half).unwrap_or_default()
    };
    sweep_pair(prober, ap_id, &ap_sectors, ue_region, ctx.rates, ctx.now)
}

/// SLASH link establishment toward `ap_id`.
///
/// The AP sweeps `±θ_{p_I}` around its bearing to the position estimate;
/// the UE sweeps `±θ_{p_II}` around its bearing to the AP.
pub fn slash_establish(
    prober: &dyn RssProber,
    ctx: &LinkContext<'_>,
    ap_id: ApId,
    config: &SlashConfig,
) -> Result<(LinkState, ProbeBudgetReport)> {
    let (ap_half, ue_half) = slash_half_widths(ctx, ap_id, config)?;
    region_sweep(prober, ctx, ap_id, ap_half.theta_p, ue_half.theta_p, config.ue_centering)
}

/// Region search with a fixed position error `e_const` for both phases.
pub fn constant_error_establish(
    prober: &dyn RssProber,
    ctx: &LinkContext<'_>,
    ap_id: ApId,
    e_const: f64,
) -> Result<(LinkState, ProbeBudgetReport)> {
    if !(e_const > 0.0) {
        return Err(Error::invalid("constant error must be positive"));
    }
    let d_hat = ctx.deployment.position(ap_id)?.distance(ctx.position.p_hat);
    let half = if d_hat > 0.0 { theta_from_error(e_const, d_hat)?.theta_p } else { FRAC_PI_2 };
    region_sweep(prober, ctx, ap_id, half, half, UeCentering::Position)
}

/// Whether the link rate calls for maintenance.
pub fn needs_maintenance(rate: f64, rates: &RateTable) -> bool {
    rate < rates.max_rate()
}

/// Latest range estimate per AP.
fn latest_ranges(ranges: &[RangeEstimate]) -> Vec<&RangeEstimate> {
    let mut latest: Vec<&RangeEstimate> = Vec::new();
    for r in ranges {
        match latest.iter_mut().find(|l| l.ap_id == r.ap_id) {
            Some(l) if l.timestamp <= r.timestamp => *l = r,
            Some(_) => {}
            None => latest.push(r),
        }
    }
    latest
}

/// The AP to hand over to, if a candidate is closer than the serving AP by
/// more than `margin`.
pub fn handover_target(serving: ApId, ranges: &[RangeEstimate], candidates: &[ApId], margin: f64) -> Option<ApId> {
    let latest = latest_ranges(ranges);
    let nearest = latest
        .iter()
        .filter(|r| candidates.contains(&r.ap_id))
        .min_by(|a, b| a.d_hat.total_cmp(&b.d_hat).then(a.ap_id.cmp(&b.ap_id)))?;
    if nearest.ap_id == serving {
        return None;
    }
    match latest.iter().find(|r| r.ap_id == serving) {
        Some(s) if nearest.d_hat + margin >= s.d_hat => None,
        _ => Some(nearest.ap_id),
    }
}

/// Link maintenance after a rate drop.
///
/// `state.rss` must hold the RSS currently observed on the link. Estimated
/// rotation beyond half a UE beamwidth since the last alignment probes the
/// two UE sectors that rotation could have moved the AP into (the sense of
/// rotation is unknown). Otherwise the link is refined around the current
/// pair unless a closer mmWave AP calls for a handover.
pub fn slash_maintain(
    prober: &dyn RssProber,
    ctx: &LinkContext<'_>,
    state: &LinkState,
    rotation: &[RotationEstimate],
    ranges: &[RangeEstimate],
    mmwave_aps: &[ApId],
    config: &SlashConfig,
) -> Result<(LinkState, ProbeBudgetReport, Action)> {
    let ue_cb = &ctx.codebooks.ue;
    let ap_cb = &ctx.codebooks.ap;
    let ap_id = state.ap_id;
    let rotated = accumulated_rotation(rotation, state.last_alignment, ctx.now);

    if rotated > ue_cb.beamwidth() / 2.0 {
        let k = ((rotated / ue_cb.spacing()).round() as i64).max(1);
        let candidates = [ue_cb.offset(state.best_ue_sector, -k), ue_cb.offset(state.best_ue_sector, k)];
        let report = ProbeBudgetReport::new(0, 2);
        let best = strongest(&candidates, |j| prober.probe(ap_id, Beam::Sector(state.best_ap_sector), Beam::Sector(j)));
        let Some((sector, rss)) = best else {
            return Err(Error::MaintainFailed { probes: 2 });
        };
        let link = LinkState {
            best_ue_sector: sector,
            rss,
            rate: ctx.rates.rate(Some(rss)),
            last_alignment: ctx.now,
            ..state.clone()
        };
        return Ok((link, report, Action::RotationFix));
    }

    if let Some(target) = handover_target(ap_id, ranges, mmwave_aps, config.handover_margin) {
        let (link, report) = slash_establish(prober, ctx, target, config).map_err(|e| match e {
            Error::EstablishFailed { probes } => Error::MaintainFailed { probes },
            other => other,
        })?;
        return Ok((link, report, Action::Handover));
    }

    let current = state.rss;
    let ue_side = [ue_cb.offset(state.best_ue_sector, -1), ue_cb.offset(state.best_ue_sector, 1)];
    let mut report = ProbeBudgetReport::new(0, 2);
    let ue_best = strongest(&ue_side, |j| prober.probe(ap_id, Beam::Sector(state.best_ap_sector), Beam::Sector(j)));
    let mut link = state.clone();
    link.last_alignment = ctx.now;
    if let Some((sector, rss)) = ue_best.filter(|(_, rss)| *rss > current) {
        link.best_ue_sector = sector;
        link.rss = rss;
    } else {
        let ap_side = [ap_cb.offset(state.best_ap_sector, -1), ap_cb.offset(state.best_ap_sector, 1)];
        report = report + ProbeBudgetReport::new(2, 0);
        let ap_best = strongest(&ap_side, |i| prober.probe(ap_id, Beam::Sector(i), Beam::Sector(state.best_ue_sector)));
        match ap_best.filter(|(_, rss)| *rss > current) {
            Some((sector, rss)) => {
                link.best_ap_sector = sector;
                link.rss = rss;
            }
            None if ue_best.is_none() && ap_best.is_none() && current < ctx.rates.min_rss() => {
                return Err(Error::MaintainFailed { probes: report.total() });
            }
            None => {}
        }
    }
    link.rate = ctx.rates.rate(Some(link.rss));
    Ok((link, report, Action::Refine))
}

/// Rate discounted by the training overhead: `R·T/(T + τ)`.
pub fn normalized_rate(rate: f64, report: &ProbeBudgetReport, frame_time: f64) -> f64 {
    rate * frame_time / (frame_time + report.tau())
}
