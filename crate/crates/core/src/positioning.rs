//! Multilateration from per-AP range estimates, geometric dilution of
//! precision, and the time-division measurement scheduler.

use nalgebra::{Matrix2, Matrix3, Vector2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tof_ranging::RangeEstimate;
use crate::{ApId, Error, Point2, Result};

/// Added to the absolute range error before inverting it into a weight, m.
pub const WEIGHT_EPSILON: f64 = 0.1;
pub const MAX_ITERATIONS: usize = 50;
/// Gauss-Newton step size below which the solver stops, m.
pub const STEP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccessPoint {
    pub id: ApId,
    pub position: Point2,
}

/// Known AP coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<AccessPoint>", into = "Vec<AccessPoint>")]
pub struct ApDeployment {
    aps: Vec<AccessPoint>,
}

impl TryFrom<Vec<AccessPoint>> for ApDeployment {
    type Error = Error;
    fn try_from(aps: Vec<AccessPoint>) -> Result<Self> {
        Self::new(aps)
    }
}

impl From<ApDeployment> for Vec<AccessPoint> {
    fn from(d: ApDeployment) -> Self {
        d.aps
    }
}

impl ApDeployment {
    pub fn new(aps: Vec<AccessPoint>) -> Result<Self> {
        if aps.is_empty() {
            return Err(Error::invalid("deployment has no access points"));
        }
        for (i, ap) in aps.iter().enumerate() {
            if !ap.position.is_finite() {
                return Err(Error::invalid(format!("{} has a non-finite position", ap.id)));
            }
            if aps[..i].iter().any(|other| other.id == ap.id) {
                return Err(Error::invalid(format!("duplicate access point id {}", ap.id)));
            }
        }
        if aps.len() >= 2 && aps.iter().all(|ap| ap.position == aps[0].position) {
            return Err(Error::invalid("all access points share one position"));
        }
        Ok(Self { aps })
    }

    pub fn from_positions(positions: &[(u16, f64, f64)]) -> Result<Self> {
        Self::new(
            positions.iter().map(|&(id, x, y)| AccessPoint { id: ApId(id), position: Point2::new(x, y) }).collect(),
        )
    }

    pub fn aps(&self) -> &[AccessPoint] {
        &self.aps
    }

    pub fn ids(&self) -> impl Iterator<Item = ApId> + '_ {
        self.aps.iter().map(|ap| ap.id)
    }

    pub fn len(&self) -> usize {
        self.aps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aps.is_empty()
    }

    pub fn position(&self, id: ApId) -> Result<Point2> {
        self.aps.iter().find(|ap| ap.id == id).map(|ap| ap.position).ok_or(Error::UnknownAp(id))
    }

    pub fn contains(&self, id: ApId) -> bool {
        self.aps.iter().any(|ap| ap.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionEstimate {
    pub p_hat: Point2,
    /// Unweighted RMS of the range residuals at `p_hat`, m.
    pub residual_rms: f64,
    pub ranges_used: Vec<RangeEstimate>,
    pub weights: Vec<f64>,
    /// Latest range timestamp, s.
    pub timestamp: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryMetrics {
    pub hdop: f64,
    /// Distance RMS error, m.
    pub drms: f64,
}

impl GeometryMetrics {
    pub fn new(hdop: f64, sigma_d: f64) -> Self {
        Self { hdop, drms: drms(hdop, sigma_d) }
    }
}

/// Per-AP weights from each new range's disagreement with the previous
/// position: `1 / (ε + |‖prev − p_n‖ − d̂_n|)`, scaled to mean one. Uniform
/// without a previous position.
pub fn range_weights(prev: Option<Point2>, anchors: &[(Point2, f64)]) -> Vec<f64> {
    let Some(prev) = prev else {
        return vec![1.0; anchors.len()];
    };
    let raw: Vec<f64> = anchors.iter().map(|(ap, d)| 1.0 / (WEIGHT_EPSILON + (prev.distance(*ap) - d).abs())).collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    raw.iter().map(|w| w / mean).collect()
}

fn weighted_cost(p: Point2, anchors: &[(Point2, f64)], weights: &[f64]) -> f64 {
    anchors.iter().zip(weights).map(|((ap, d), w)| w * (p.distance(*ap) - d).powi(2)).sum()
}

/// Normal-equation matrix and gradient of the weighted cost at `p`.
fn normal_equations(p: Point2, anchors: &[(Point2, f64)], weights: &[f64]) -> (Matrix2<f64>, Vector2<f64>) {
    let mut h = Matrix2::zeros();
    let mut g = Vector2::zeros();
    for ((ap, d), w) in anchors.iter().zip(weights) {
        let diff = p - *ap;
        let range = diff.norm();
        let j = Vector2::new(diff.x / range, diff.y / range);
        h += *w * j * j.transpose();
        g += *w * (range - d) * j;
    }
    (h, g)
}

fn is_rank_deficient2(h: &Matrix2<f64>) -> bool {
    let trace = h.trace();
    !(h.determinant() > 1e-10 * trace * trace)
}

fn centroid(anchors: &[(Point2, f64)]) -> Point2 {
    anchors.iter().fold(Point2::default(), |acc, (ap, _)| acc + *ap) * (1.0 / anchors.len() as f64)
}

/// Least-squares solution of the range equations linearised by subtracting
/// their mean; exact for consistent ranges.
fn linear_fix(anchors: &[(Point2, f64)]) -> Option<Point2> {
    let n = anchors.len() as f64;
    let c = centroid(anchors);
    let sq = |(ap, d): &(Point2, f64)| (ap.x * ap.x + ap.y * ap.y) - d * d;
    let mean_sq = anchors.iter().map(sq).sum::<f64>() / n;
    let mut ata = Matrix2::zeros();
    let mut atb = Vector2::zeros();
    for a in anchors {
        let row = Vector2::new(2.0 * (a.0.x - c.x), 2.0 * (a.0.y - c.y));
        ata += row * row.transpose();
        atb += row * (sq(a) - mean_sq);
    }
    if is_rank_deficient2(&ata) {
        return None;
    }
    let x = ata.lu().solve(&atb)?;
    Some(Point2::new(x.x, x.y)).filter(|p| p.x.is_finite() && p.y.is_finite())
}

/// Weighted Gauss-Newton multilateration with Levenberg damping.
///
/// Minimises `Σ w_n (‖p − p_n‖ − d̂_n)²`. With `prev`, weights come from
/// [`range_weights`] and the solver starts from the previous fix; otherwise
/// weights are uniform and it starts from the linearised solution.
pub fn multilaterate(
    ranges: &[RangeEstimate],
    deployment: &ApDeployment,
    prev: Option<&PositionEstimate>,
) -> Result<PositionEstimate> {
    if ranges.len() < 3 {
        return Err(Error::invalid(format!("multilateration needs at least 3 ranges, got {}", ranges.len())));
    }
    let mut anchors = Vec::with_capacity(ranges.len());
    for (i, r) in ranges.iter().enumerate() {
        if ranges[..i].iter().any(|o| o.ap_id == r.ap_id) {
            return Err(Error::invalid(format!("two ranges from {}", r.ap_id)));
        }
        if !(r.d_hat > 0.0) || !r.d_hat.is_finite() {
            return Err(Error::invalid(format!("range from {} is not positive", r.ap_id)));
        }
        anchors.push((deployment.position(r.ap_id)?, r.d_hat));
    }

    let prev_point = prev.map(|p| p.p_hat);
    let weights = range_weights(prev_point, &anchors);
    let mut p = prev_point.or_else(|| linear_fix(&anchors)).unwrap_or_else(|| centroid(&anchors));
    // the Jacobian is undefined on top of an AP
    if anchors.iter().any(|(ap, _)| p.distance(*ap) < 1e-9) {
        p = p + Point2::new(1e-6, 1e-6);
    }

    let mut cost = weighted_cost(p, &anchors, &weights);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let (h, g) = normal_equations(p, &anchors, &weights);
        if is_rank_deficient2(&h) {
            return Err(Error::SingularGeometry);
        }
        if cost == 0.0 || g.norm() < 1e-14 {
            converged = true;
            break;
        }
        let scale = h.trace() / 2.0;
        let mut accepted = None;
        while lambda < 1e12 {
            let damped = h + Matrix2::identity() * (lambda * scale);
            let Some(step) = damped.lu().solve(&(-g)) else {
                lambda *= 10.0;
                continue;
            };
            let candidate = p + Point2::new(step.x, step.y);
            let candidate_cost = weighted_cost(candidate, &anchors, &weights);
            if candidate_cost < cost {
                lambda = (lambda / 10.0).max(1e-12);
                accepted = Some((candidate, candidate_cost, step.norm()));
                break;
            }
            lambda *= 10.0;
        }
        match accepted {
            Some((next, next_cost, step)) => {
                p = next;
                cost = next_cost;
                if step < STEP_TOLERANCE {
                    converged = true;
                    break;
                }
            }
            // no descent direction left: at the minimum to machine precision
            None => {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        return Err(Error::NoConvergence { iterations });
    }

    let residual_rms =
        (anchors.iter().map(|(ap, d)| (p.distance(*ap) - d).powi(2)).sum::<f64>() / anchors.len() as f64).sqrt();
    let timestamp = ranges.iter().map(|r| r.timestamp).fold(f64::NEG_INFINITY, f64::max);
    Ok(PositionEstimate { p_hat: p, residual_rms, ranges_used: ranges.to_vec(), weights, timestamp, iterations })
}

/// Horizontal dilution of precision at `p_hat`.
///
/// Rows of `A` are `[unit vector from p_hat toward AP_n, −1]`;
/// `HDOP = sqrt(Q11 + Q22)` with `Q = (AᵀA)⁻¹`.
pub fn hdop(deployment: &ApDeployment, p_hat: Point2) -> Result<f64> {
    if deployment.len() < 3 {
        return Err(Error::invalid("HDOP needs at least 3 access points"));
    }
    let mut ata = Matrix3::<f64>::zeros();
    for ap in deployment.aps() {
        let diff = ap.position - p_hat;
        let range = diff.norm();
        if range < 1e-9 {
            return Err(Error::invalid(format!("position coincides with {}", ap.id)));
        }
        let row = nalgebra::Vector3::new(diff.x / range, diff.y / range, -1.0);
        ata += row * row.transpose();
    }
    let scale = ata.trace() / 3.0;
    if !(ata.determinant() > 1e-20 * scale.powi(3)) {
        return Err(Error::SingularGeometry);
    }
    let q = ata.try_inverse().ok_or(Error::SingularGeometry)?;
    let h = (q[(0, 0)] + q[(1, 1)]).sqrt();
    if !h.is_finite() {
        return Err(Error::SingularGeometry);
    }
    Ok(h)
}

/// `dRMS = HDOP · σ_d̂`.
pub fn drms(hdop: f64, sigma_d: f64) -> f64 {
    hdop * sigma_d
}

/// A uniformly random ordering of the deployment's APs for one round.
pub fn schedule_round(deployment: &ApDeployment, seed: u64) -> Vec<ApId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ids: Vec<ApId> = deployment.ids().collect();
    ids.shuffle(&mut rng);
    ids
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerConfig {
    /// Time one AP holds the measurement token, s.
    pub token_s: f64,
    /// Interval after the last token that drains the measurement queues, s.
    pub drain_s: f64,
    pub samples_per_token: usize,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self { token_s: 0.2, drain_s: 0.05, samples_per_token: crate::tof_ranging::DEFAULT_WINDOW }
    }
}

/// One AP's exclusive measurement slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenSlot {
    pub ap_id: ApId,
    pub start: f64,
    pub end: f64,
}

impl TokenSlot {
    /// Evenly spaced probe times inside the slot.
    pub fn sample_times(&self, count: usize) -> Vec<f64> {
        let dt = (self.end - self.start) / count as f64;
        (0..count).map(|i| self.start + (i as f64 + 0.5) * dt).collect()
    }
}

/// Time-division scheduler: exactly one AP holds the token at a time, the AP
/// order is reshuffled every round, and each round ends with a drain
/// interval.
#[derive(Debug, Clone)]
pub struct MeasurementScheduler {
    ids: Vec<ApId>,
    config: SchedulerConfig,
    rng: ChaCha8Rng,
    next_start: f64,
}

impl MeasurementScheduler {
    pub fn new(deployment: &ApDeployment, config: SchedulerConfig, seed: u64, start: f64) -> Result<Self> {
        if !(config.token_s > 0.0) || !(config.drain_s >= 0.0) || config.samples_per_token < 2 {
            return Err(Error::invalid("scheduler needs token_s > 0, drain_s >= 0 and ≥ 2 samples"));
        }
        Ok(Self { ids: deployment.ids().collect(), config, rng: ChaCha8Rng::seed_from_u64(seed), next_start: start })
    }

    pub fn config(&self) -> &SchedulerConfig {
        &self.config
    }

    pub fn round_duration(&self) -> f64 {
        self.ids.len() as f64 * self.config.token_s + self.config.drain_s
    }

    /// Start time of the next round.
    pub fn next_start(&self) -> f64 {
        self.next_start
    }

    pub fn next_round(&mut self) -> Vec<TokenSlot> {
        let mut order = self.ids.clone();
        order.shuffle(&mut self.rng);
        let mut t = self.next_start;
        let slots = order
            .into_iter()
            .map(|ap_id| {
                let slot = TokenSlot { ap_id, start: t, end: t + self.config.token_s };
                t = slot.end;
                slot
            })
            .collect();
        self.next_start = t + self.config.drain_s;
        slots
    }
}
