//! Angular half-width of the beam search region at a given confidence.
//!
//! A position error of modulus `e` seen from an AP at distance `d̂` subtends
//! at most `asin(e/d̂)`. With zero-mean, uncorrelated, equal-variance axis
//! errors the modulus is Rayleigh with `E[e²] = dRMS²`, which gives the
//! closed form
//!
//! `θ_p = asin(HDOP · σ_d̂ / d̂ · sqrt(−ln(1 − p)))`.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::positioning::{drms, hdop, ApDeployment, PositionEstimate};
use crate::tof_ranging::{observation_sigma, RangeEstimate};
use crate::{ApId, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleErrorInputs {
    /// AP–UE estimated distance, m.
    pub d_hat: f64,
    /// m
    pub sigma_d: f64,
    pub hdop: f64,
    pub p: f64,
}

impl AngleErrorInputs {
    pub fn new(d_hat: f64, sigma_d: f64, hdop: f64, p: f64) -> Result<Self> {
        let inputs = Self { d_hat, sigma_d, hdop, p };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_hat > 0.0) || !self.d_hat.is_finite() {
            return Err(Error::invalid(format!("d_hat must be positive, got {}", self.d_hat)));
        }
        if !(self.sigma_d >= 0.0) || !self.sigma_d.is_finite() {
            return Err(Error::invalid(format!("sigma_d must be non-negative, got {}", self.sigma_d)));
        }
        if !(self.hdop > 0.0) || !self.hdop.is_finite() {
            return Err(Error::invalid(format!("hdop must be positive, got {}", self.hdop)));
        }
        if !(0.0..1.0).contains(&self.p) {
            return Err(Error::invalid(format!("confidence must lie in [0, 1), got {}", self.p)));
        }
        Ok(())
    }

    pub fn drms(&self) -> f64 {
        drms(self.hdop, self.sigma_d)
    }

    /// Same inputs at another confidence level.
    pub fn with_p(self, p: f64) -> Result<Self> {
        Self::new(self.d_hat, self.sigma_d, self.hdop, p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngleError {
    /// Half-width, rad, in `[0, π/2]`.
    pub theta_p: f64,
    /// Set when the position error reaches the AP distance.
    pub clamped: bool,
}

impl AngleError {
    fn from_ratio(ratio: f64) -> Self {
        if ratio >= 1.0 {
            Self { theta_p: FRAC_PI_2, clamped: true }
        } else {
            Self { theta_p: ratio.asin(), clamped: false }
        }
    }

    pub fn degrees(&self) -> f64 {
        self.theta_p.to_degrees()
    }
}

/// Angle subtended at the AP by a position error of modulus `e`.
pub fn theta_from_error(e: f64, d_hat: f64) -> Result<AngleError> {
    if !(d_hat > 0.0) || !(e >= 0.0) {
        return Err(Error::invalid("theta_from_error needs d_hat > 0 and e >= 0"));
    }
    Ok(AngleError::from_ratio(e / d_hat))
}

/// `Pr(Θ ≤ θ) = 1 − exp(−(d̂·sin θ / dRMS)²)` up to `π/2`, one beyond.
pub fn angle_cdf(theta: f64, d_hat: f64, drms: f64) -> f64 {
    if theta > FRAC_PI_2 {
        return 1.0;
    }
    if theta <= 0.0 {
        return 0.0;
    }
    let x = d_hat * theta.sin() / drms;
    -(-x * x).exp_m1()
}

/// Closed-form half-width at confidence `p`; the inverse of [`angle_cdf`]
/// below the clamp.
pub fn theta_p(inputs: &AngleErrorInputs) -> Result<AngleError> {
    inputs.validate()?;
    let ratio = inputs.hdop * (inputs.sigma_d / inputs.d_hat) * (-(-inputs.p).ln_1p()).sqrt();
    Ok(AngleError::from_ratio(ratio))
}

/// Inputs for one AP: `d̂` from the AP to the position estimate, `σ_d̂` over
/// the AP's range history, and HDOP of the deployment at the estimate.
pub fn angle_error_inputs(
    deployment: &ApDeployment,
    position: &PositionEstimate,
    history: &[RangeEstimate],
    ap_id: ApId,
    p: f64,
) -> Result<AngleErrorInputs> {
    let ap = deployment.position(ap_id)?;
    let own: Vec<RangeEstimate> = history.iter().filter(|r| r.ap_id == ap_id).cloned().collect();
    let sigma_d = observation_sigma(&own)?;
    let d_hat = ap.distance(position.p_hat);
    if !(d_hat > 0.0) {
        // estimate on top of the AP: any direction is possible
        return AngleErrorInputs::new(f64::MIN_POSITIVE, sigma_d.max(f64::MIN_POSITIVE), 1.0, p);
    }
    let h = hdop(deployment, position.p_hat)?;
    AngleErrorInputs::new(d_hat, sigma_d, h, p)
}

pub fn estimate_angle_error(
    deployment: &ApDeployment,
    position: &PositionEstimate,
    history: &[RangeEstimate],
    ap_id: ApId,
    p: f64,
) -> Result<AngleError> {
    theta_p(&angle_error_inputs(deployment, position, history, ap_id, p)?)
}
