//! Angular speed of the UE from ToF range series.
//!
//! An antenna offset `δ_z` from the rotation axis makes the squared range
//! oscillate as `d̂² = d₀² + δ_z² + 2·d₀·δ_z·cos(ωt)`. The pipeline keeps the
//! single-path windows, upsamples, takes the spectrum of `d̂²` and reads the
//! angular speed off the median frequency of the DC-free spectrum.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::tof_ranging::RangeEstimate;
use crate::{ApId, Error, Result};

pub const DEFAULT_UPSAMPLE: usize = 10;
pub const FIR_TAPS: usize = 63;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeSeries {
    pub ap_id: ApId,
    pub timestamps: Vec<f64>,
    pub d_hat_values: Vec<f64>,
    pub kappa_flags: Vec<usize>,
}

impl RangeSeries {
    pub fn new(ap_id: ApId, timestamps: Vec<f64>, d_hat_values: Vec<f64>, kappa_flags: Vec<usize>) -> Result<Self> {
        if timestamps.len() != d_hat_values.len() || timestamps.len() != kappa_flags.len() {
            return Err(Error::invalid("range series columns differ in length"));
        }
        if timestamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("range series timestamps must increase strictly"));
        }
        if timestamps.iter().chain(&d_hat_values).any(|v| !v.is_finite()) {
            return Err(Error::invalid("range series contains non-finite values"));
        }
        Ok(Self { ap_id, timestamps, d_hat_values, kappa_flags })
    }

    /// Builds a series from consecutive estimates of one AP.
    pub fn from_estimates(ap_id: ApId, estimates: &[RangeEstimate]) -> Result<Self> {
        if estimates.iter().any(|e| e.ap_id != ap_id) {
            return Err(Error::invalid("estimates from more than one access point"));
        }
        Self::new(
            ap_id,
            estimates.iter().map(|e| e.timestamp).collect(),
            estimates.iter().map(|e| e.d_hat).collect(),
            estimates.iter().map(|e| e.kappa).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    /// Time span from first to last sample, s.
    pub fn duration(&self) -> f64 {
        match (self.timestamps.first(), self.timestamps.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        }
    }

    /// Mean sampling interval, s.
    pub fn mean_interval(&self) -> Option<f64> {
        (self.len() >= 2).then(|| self.duration() / (self.len() - 1) as f64)
    }

    /// The sub-series with timestamps in `[start, end]`.
    pub fn slice_time(&self, start: f64, end: f64) -> RangeSeries {
        let keep: Vec<usize> =
            (0..self.len()).filter(|&i| self.timestamps[i] >= start && self.timestamps[i] <= end).collect();
        self.select(&keep)
    }

    fn select(&self, idx: &[usize]) -> RangeSeries {
        RangeSeries {
            ap_id: self.ap_id,
            timestamps: idx.iter().map(|&i| self.timestamps[i]).collect(),
            d_hat_values: idx.iter().map(|&i| self.d_hat_values[i]).collect(),
            kappa_flags: idx.iter().map(|&i| self.kappa_flags[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumEstimate {
    /// Bin centre frequencies, Hz; the first entry is DC.
    pub frequencies: Vec<f64>,
    /// Normalised power per bin; the DC entry is zero.
    pub power: Vec<f64>,
    pub f_half: f64,
    /// Power before normalisation.
    pub total_power: f64,
}

impl SpectrumEstimate {
    pub fn bin_width(&self) -> f64 {
        self.frequencies[1] - self.frequencies[0]
    }

    /// Cumulative normalised power below `f`, treating each bin as uniform
    /// over `[f_k − Δ/2, f_k + Δ/2]`.
    pub fn power_below(&self, f: f64) -> f64 {
        let df = self.bin_width();
        self.frequencies
            .iter()
            .zip(&self.power)
            .skip(1)
            .map(|(fk, pk)| pk * ((f - (fk - df / 2.0)) / df).clamp(0.0, 1.0))
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotationEstimate {
    /// Gated angular speed: `fused` when the spectrum indicates rotation,
    /// otherwise zero.
    pub omega_hat: f64,
    pub window_start: f64,
    pub window_end: f64,
    pub per_ap: Vec<(ApId, f64)>,
    /// Median of `per_ap`, rad/s.
    pub fused: f64,
    /// Median fraction of power in the low band across APs.
    pub low_band_fraction: f64,
    pub rotating: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarmonicFit {
    /// m²
    pub offset: f64,
    /// m²
    pub amplitude: f64,
    pub angular_freq: f64,
    pub phase: f64,
    /// m²
    pub rms_residual: f64,
}

impl HarmonicFit {
    pub fn eval(&self, t: f64) -> f64 {
        self.offset + self.amplitude * (self.angular_freq * t + self.phase).cos()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RotationConfig {
    /// Analysis window, s.
    pub window_s: f64,
    pub upsample: usize,
    /// Low band edge as a fraction of the original Nyquist frequency.
    pub gate_band: f64,
    /// Low-band power fraction above which rotation is declared.
    pub gate_threshold: f64,
}

impl Default for RotationConfig {
    fn default() -> Self {
        Self { window_s: 1.0, upsample: DEFAULT_UPSAMPLE, gate_band: 0.2, gate_threshold: 0.5 }
    }
}

/// Keeps entries whose window was explained by a single cluster.
pub fn filter_single_path(series: &RangeSeries) -> Result<RangeSeries> {
    let keep: Vec<usize> = (0..series.len()).filter(|&i| series.kappa_flags[i] == 1).collect();
    if keep.is_empty() {
        return Err(Error::EmptySeries);
    }
    Ok(series.select(&keep))
}

/// Hamming-windowed sinc low-pass, unit DC gain. `cutoff` in cycles/sample.
fn lowpass_kernel(taps: usize, cutoff: f64) -> Vec<f64> {
    let m = (taps - 1) as f64 / 2.0;
    let mut h: Vec<f64> = (0..taps)
        .map(|k| {
            let x = k as f64 - m;
            let sinc = if x == 0.0 { 2.0 * cutoff } else { (2.0 * PI * cutoff * x).sin() / (PI * x) };
            let w = 0.54 - 0.46 * (2.0 * PI * k as f64 / (taps - 1) as f64).cos();
            sinc * w
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);
    h
}

/// Zero-phase FIR filtering with odd reflection at both ends, which carries
/// linear trends through the edges.
fn filter_reflect(x: &[f64], h: &[f64]) -> Vec<f64> {
    let n = x.len() as isize;
    let half = (h.len() / 2) as isize;
    let at = |i: isize| -> f64 {
        if i < 0 {
            2.0 * x[0] - x[(-i).min(n - 1) as usize]
        } else if i >= n {
            2.0 * x[(n - 1) as usize] - x[(2 * (n - 1) - i).max(0) as usize]
        } else {
            x[i as usize]
        }
    };
    (0..n).map(|i| h.iter().enumerate().map(|(k, hk)| hk * at(i + half - k as isize)).sum()).collect()
}

/// Linear interpolation onto a grid `factor` times denser than the mean
/// input rate, followed by a low-pass at the original Nyquist frequency.
pub fn resample(series: &RangeSeries, factor: usize) -> Result<RangeSeries> {
    if series.len() < 4 {
        return Err(Error::TooFewSamples { need: 4, got: series.len() });
    }
    if factor == 0 {
        return Err(Error::invalid("resample factor must be at least 1"));
    }
    let t = &series.timestamps;
    let d = &series.d_hat_values;
    let out_len = (series.len() - 1) * factor + 1;
    let dt = series.duration() / (out_len - 1) as f64;
    let mut j = 0;
    let mut times = Vec::with_capacity(out_len);
    let mut values = Vec::with_capacity(out_len);
    for k in 0..out_len {
        let tk = if k + 1 == out_len { t[t.len() - 1] } else { t[0] + k as f64 * dt };
        while j + 2 < t.len() && t[j + 1] < tk {
            j += 1;
        }
        let u = ((tk - t[j]) / (t[j + 1] - t[j])).clamp(0.0, 1.0);
        times.push(tk);
        values.push(d[j] + u * (d[j + 1] - d[j]));
    }
    if factor > 1 {
        let h = lowpass_kernel(FIR_TAPS, 0.5 / factor as f64);
        values = filter_reflect(&values, &h);
    }
    // the grid may repeat the final instant under rounding
    let mut keep = vec![0usize];
    for i in 1..out_len {
        if times[i] > times[*keep.last().unwrap()] {
            keep.push(i);
        }
    }
    Ok(RangeSeries {
        ap_id: series.ap_id,
        timestamps: keep.iter().map(|&i| times[i]).collect(),
        d_hat_values: keep.iter().map(|&i| values[i]).collect(),
        kappa_flags: vec![1; keep.len()],
    })
}

/// Hann-tapered periodogram of `d̂²(t)` after mean removal, normalised to
/// unit power with the DC bin zeroed.
pub fn power_spectrum(series: &RangeSeries) -> Result<SpectrumEstimate> {
    let n = series.len();
    if n < 8 {
        return Err(Error::TooFewSamples { need: 8, got: n });
    }
    let dt = series.mean_interval().unwrap_or(0.0);
    let uniform = series.timestamps.windows(2).all(|w| ((w[1] - w[0]) - dt).abs() <= 1e-6 * dt.max(1e-12));
    if !uniform {
        return Err(Error::invalid("power spectrum needs uniform sampling"));
    }
    let sq: Vec<f64> = series.d_hat_values.iter().map(|d| d * d).collect();
    if sq.iter().all(|v| *v == sq[0]) {
        return Err(Error::ZeroPower);
    }
    let mean = sq.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> = sq
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos();
            Complex::new((v - mean) * w, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);

    let half = n / 2;
    let df = 1.0 / (n as f64 * dt);
    let frequencies: Vec<f64> = (0..=half).map(|k| k as f64 * df).collect();
    let mut power: Vec<f64> = (0..=half)
        .map(|k| {
            // interior bins carry the mirrored negative frequency too
            let fold = if k == 0 || (n.is_multiple_of(2) && k == half) { 1.0 } else { 2.0 };
            fold * buf[k].norm_sqr()
        })
        .collect();
    power[0] = 0.0;
    let total_power: f64 = power.iter().sum();
    if !(total_power > 1e-24 * mean * mean * n as f64) {
        return Err(Error::ZeroPower);
    }
    power.iter_mut().for_each(|p| *p /= total_power);

    let mut cum = 0.0;
    let mut f_half = frequencies[half];
    for k in 1..=half {
        if cum + power[k] >= 0.5 {
            let frac = if power[k] > 0.0 { (0.5 - cum) / power[k] } else { 0.0 };
            f_half = frequencies[k] - df / 2.0 + frac * df;
            break;
        }
        cum += power[k];
    }
    let f_half = f_half.clamp(frequencies[1], frequencies[half]);
    Ok(SpectrumEstimate { frequencies, power, f_half, total_power })
}

struct ApSpectrum {
    omega: f64,
    low_band: f64,
}

fn analyse_ap(series: &RangeSeries, config: &RotationConfig) -> Result<ApSpectrum> {
    let single = filter_single_path(series)?;
    let dt = single.mean_interval().ok_or(Error::TooFewSamples { need: 4, got: 1 })?;
    let nyquist = 0.5 / dt;
    let spectrum = power_spectrum(&resample(&single, config.upsample)?)?;
    Ok(ApSpectrum { omega: 2.0 * PI * spectrum.f_half, low_band: spectrum.power_below(config.gate_band * nyquist) })
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Per-AP `ω̂ = 2π·f_half`, fused by the median. APs whose series cannot be
/// analysed are skipped; `NoEstimate` if none remain.
pub fn estimate_rotation(series: &[RangeSeries], config: &RotationConfig) -> Result<RotationEstimate> {
    let mut per_ap = Vec::new();
    let mut low = Vec::new();
    let mut reasons = Vec::new();
    let mut window_start = f64::INFINITY;
    let mut window_end = f64::NEG_INFINITY;
    for s in series {
        if let (Some(a), Some(b)) = (s.timestamps.first(), s.timestamps.last()) {
            window_start = window_start.min(*a);
            window_end = window_end.max(*b);
        }
        match analyse_ap(s, config) {
            Ok(a) => {
                per_ap.push((s.ap_id, a.omega));
                low.push(a.low_band);
            }
            Err(e) => reasons.push(format!("{}: {e}", s.ap_id)),
        }
    }
    if per_ap.is_empty() {
        return Err(Error::NoEstimate(if reasons.is_empty() { "no range series".into() } else { reasons.join("; ") }));
    }
    let mut omegas: Vec<f64> = per_ap.iter().map(|(_, w)| *w).collect();
    let fused = median(&mut omegas);
    let low_band_fraction = median(&mut low);
    let rotating = low_band_fraction > config.gate_threshold;
    Ok(RotationEstimate {
        omega_hat: if rotating { fused } else { 0.0 },
        window_start,
        window_end,
        per_ap,
        fused,
        low_band_fraction,
        rotating,
    })
}

/// Least-squares `offset + amplitude·cos(ωt + phase)` fit to `d̂²(t)`, with
/// `ω` picked from `omega_grid` by minimum residual.
pub fn fit_harmonic(series: &RangeSeries, omega_grid: &[f64]) -> Result<HarmonicFit> {
    if series.len() < 5 {
        return Err(Error::TooFewSamples { need: 5, got: series.len() });
    }
    if omega_grid.is_empty() || omega_grid.iter().any(|w| !w.is_finite() || *w <= 0.0) {
        return Err(Error::invalid("omega grid must hold positive frequencies"));
    }
    let y: Vec<f64> = series.d_hat_values.iter().map(|d| d * d).collect();
    let mut best: Option<HarmonicFit> = None;
    for &w in omega_grid {
        let mut ata = Matrix3::<f64>::zeros();
        let mut aty = Vector3::<f64>::zeros();
        for (t, v) in series.timestamps.iter().zip(&y) {
            let row = Vector3::new(1.0, (w * t).cos(), (w * t).sin());
            ata += row * row.transpose();
            aty += row * *v;
        }
        let Some(coef) = ata.lu().solve(&aty) else {
            continue;
        };
        let (a, b, c) = (coef[0], coef[1], coef[2]);
        let sse: f64 = series
            .timestamps
            .iter()
            .zip(&y)
            .map(|(t, v)| (v - a - b * (w * t).cos() - c * (w * t).sin()).powi(2))
            .sum();
        let fit = HarmonicFit {
            offset: a,
            amplitude: b.hypot(c),
            angular_freq: w,
            phase: (-c).atan2(b),
            rms_residual: (sse / y.len() as f64).sqrt(),
        };
        if best.is_none_or(|cur| fit.rms_residual < cur.rms_residual) {
            best = Some(fit);
        }
    }
    best.ok_or_else(|| Error::invalid("every grid frequency gave a singular fit"))
}

/// Rotation magnitude accumulated over `[since, until]`, rad.
///
/// Each estimate's gated `omega_hat` holds from the later of its window
/// start and the previous estimate's window end up to its own window end.
pub fn accumulated_rotation(history: &[RotationEstimate], since: f64, until: f64) -> f64 {
    if !(until > since) {
        return 0.0;
    }
    let mut ordered: Vec<&RotationEstimate> = history.iter().collect();
    ordered.sort_by(|a, b| a.window_end.total_cmp(&b.window_end));
    let mut prev_end = f64::NEG_INFINITY;
    let mut total = 0.0;
    for est in ordered {
        let lo = est.window_start.max(prev_end).max(since);
        let hi = est.window_end.min(until);
        if hi > lo {
            total += est.omega_hat * (hi - lo);
        }
        prev_end = prev_end.max(est.window_end);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn eq1_series(d0: f64, dz: f64, omega: f64, rate: f64, duration: f64) -> RangeSeries {
        let n = (duration * rate).round() as usize + 1;
        let t: Vec<f64> = (0..n).map(|i| i as f64 / rate).collect();
        let d: Vec<f64> = t.iter().map(|t| (d0 * d0 + dz * dz + 2.0 * d0 * dz * (omega * t).cos()).sqrt()).collect();
        RangeSeries::new(ApId(1), t, d, vec![1; n]).unwrap()
    }

    fn series_from_sq(t: Vec<f64>, sq: Vec<f64>) -> RangeSeries {
        let n = t.len();
        RangeSeries::new(ApId(1), t, sq.iter().map(|v| v.sqrt()).collect(), vec![1; n]).unwrap()
    }

    fn estimate(omega_hat: f64, start: f64, end: f64) -> RotationEstimate {
        RotationEstimate {
            omega_hat,
            window_start: start,
            window_end: end,
            per_ap: vec![(ApId(1), omega_hat)],
            fused: omega_hat,
            low_band_fraction: 1.0,
            rotating: true,
        }
    }

    #[test]
    fn series_validation() {
        assert!(RangeSeries::new(ApId(1), vec![0.0, 1.0], vec![1.0], vec![1, 1]).is_err());
        assert!(RangeSeries::new(ApId(1), vec![0.0, 0.0], vec![1.0, 1.0], vec![1, 1]).is_err());
        assert!(RangeSeries::new(ApId(1), vec![0.0, 1.0], vec![1.0, 2.0], vec![1, 2]).is_ok());
    }

    #[test]
    fn single_path_filter() {
        let s = eq1_series(5.0, 0.5, 0.35, 10.0, 2.0);
        assert_eq!(filter_single_path(&s).unwrap(), s);
        let mut all_two = s.clone();
        all_two.kappa_flags = vec![2; s.len()];
        assert_eq!(filter_single_path(&all_two), Err(Error::EmptySeries));
        let mut mixed = s.clone();
        mixed.kappa_flags = (0..s.len()).map(|i| 1 + (i * 7 % 3)).collect();
        let expected = mixed.kappa_flags.iter().filter(|&&k| k == 1).count();
        let kept = filter_single_path(&mixed).unwrap();
        assert_eq!(kept.len(), expected);
        assert!(kept.kappa_flags.iter().all(|&k| k == 1));
    }

    #[test]
    fn resample_constant() {
        let n = 12;
        let s = RangeSeries::new(ApId(1), (0..n).map(|i| i as f64 * 0.1).collect(), vec![4.2; n], vec![1; n]).unwrap();
        for factor in [1, 3, 10] {
            let r = resample(&s, factor).unwrap();
            assert_eq!(r.len(), (n - 1) * factor + 1);
            assert!(r.d_hat_values.iter().all(|v| (v - 4.2).abs() < 1e-12));
            assert_eq!(r.timestamps.last(), s.timestamps.last());
        }
        assert!(matches!(resample(&s, 0), Err(Error::InvalidInput(_))));
        let short = s.slice_time(0.0, 0.25);
        assert_eq!(resample(&short, 10), Err(Error::TooFewSamples { need: 4, got: 3 }));
    }

    #[test]
    fn resample_sinusoid_matches_analytic() {
        let rate = 20.0;
        let n = 41;
        let t: Vec<f64> = (0..n).map(|i| i as f64 / rate).collect();
        let d: Vec<f64> = t.iter().map(|t| 10.0 + (2.0 * PI * t).sin()).collect();
        let s = RangeSeries::new(ApId(1), t, d, vec![1; n]).unwrap();
        let r = resample(&s, 10).unwrap();
        let edge = FIR_TAPS / 2 + 1;
        let inner = &r.timestamps[edge..r.len() - edge];
        let err: f64 = inner
            .iter()
            .zip(&r.d_hat_values[edge..])
            .map(|(t, v)| (v - 10.0 - (2.0 * PI * t).sin()).powi(2))
            .sum::<f64>()
            / inner.len() as f64;
        assert!(err.sqrt() < 0.02, "rms {}", err.sqrt());
    }

    #[test]
    fn spectrum_of_constant_is_zero_power() {
        let n = 32;
        let s = RangeSeries::new(ApId(1), (0..n).map(|i| i as f64).collect(), vec![3.0; n], vec![1; n]).unwrap();
        assert_eq!(power_spectrum(&s), Err(Error::ZeroPower));
    }

    #[test]
    fn slow_cosine_in_short_window() {
        // 25 + 5·cos(2π·0.0557·t) over 1 s at 200 Hz: the bin width is 1 Hz,
        // so the best available answer is the first non-DC bin
        let rate = 200.0;
        let t: Vec<f64> = (0..=200).map(|i| i as f64 / rate).collect();
        let sq: Vec<f64> = t.iter().map(|t| 25.0 + 5.0 * (2.0 * PI * 0.0557 * t).cos()).collect();
        let spec = power_spectrum(&series_from_sq(t, sq)).unwrap();
        let df = spec.bin_width();
        let peak = (1..spec.power.len()).max_by(|&a, &b| spec.power[a].total_cmp(&spec.power[b])).unwrap();
        assert!((spec.frequencies[peak] - 0.0557).abs() <= df, "peak bin {peak}");
        assert!((spec.f_half - 0.0557).abs() <= df, "f_half {}", spec.f_half);
    }

    #[test]
    fn white_noise_centres_mid_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let noise = Normal::new(0.0, 1.0).unwrap();
        let mut fractions = Vec::new();
        for _ in 0..200 {
            let n = 256;
            let t: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
            let sq: Vec<f64> = (0..n).map(|_| 100.0 + noise.sample(&mut rng)).collect();
            let spec = power_spectrum(&series_from_sq(t, sq)).unwrap();
            let sum: f64 = spec.power.iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(spec.power.iter().all(|p| *p >= 0.0));
            fractions.push(spec.f_half / spec.frequencies.last().unwrap());
        }
        let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
        assert!((mean - 0.5).abs() < 0.05, "mean f_half fraction {mean}");
    }

    #[test]
    fn eq1_over_many_periods() {
        // 60 s at 10 Hz: bin width 1/60 Hz ≈ 0.105 rad/s
        for &omega in &[0.35, 0.7, 1.5] {
            let s = eq1_series(5.0, 0.5, omega, 10.0, 60.0);
            let est = estimate_rotation(&[s], &RotationConfig::default()).unwrap();
            let bin = 2.0 * PI / 60.0;
            assert!((est.fused - omega).abs() <= bin, "{omega}: {}", est.fused);
            assert!(est.rotating);
            assert_eq!(est.omega_hat, est.fused);
        }
    }

    #[test]
    fn eq1_one_second_window_is_bin_limited() {
        let s = eq1_series(5.0, 0.5, 0.35, 100.0, 1.0);
        let est = estimate_rotation(&[s], &RotationConfig::default()).unwrap();
        // one bin of a 1 s window spans 2π rad/s
        assert!((est.fused - 0.35).abs() <= 2.0 * PI, "{}", est.fused);
    }

    #[test]
    fn rotation_about_own_axis_gives_no_estimate() {
        let s = eq1_series(5.0, 0.0, 0.35, 10.0, 20.0);
        assert!(matches!(estimate_rotation(&[s], &RotationConfig::default()), Err(Error::NoEstimate(_))));
        assert!(matches!(estimate_rotation(&[], &RotationConfig::default()), Err(Error::NoEstimate(_))));
    }

    #[test]
    fn fusion_takes_the_median() {
        let cfg = RotationConfig::default();
        let mut series = Vec::new();
        for (i, omega) in [0.4, 0.8, 3.0].iter().enumerate() {
            let mut s = eq1_series(5.0 + i as f64, 0.5, *omega, 10.0, 60.0);
            s.ap_id = ApId(i as u16);
            series.push(s);
        }
        let est = estimate_rotation(&series, &cfg).unwrap();
        assert_eq!(est.per_ap.len(), 3);
        let mut w: Vec<f64> = est.per_ap.iter().map(|p| p.1).collect();
        w.sort_by(f64::total_cmp);
        assert_eq!(est.fused, w[1]);
    }

    #[test]
    fn white_noise_is_gated_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let n = 60;
        let t: Vec<f64> = (0..n).map(|i| i as f64 * 0.1).collect();
        let d: Vec<f64> = (0..n).map(|_| 5.0 + noise.sample(&mut rng)).collect();
        let s = RangeSeries::new(ApId(1), t, d, vec![1; n]).unwrap();
        let est = estimate_rotation(&[s], &RotationConfig::default()).unwrap();
        assert!(!est.rotating, "low band {}", est.low_band_fraction);
        assert_eq!(est.omega_hat, 0.0);
    }

    #[test]
    fn harmonic_fit_exact() {
        let s = eq1_series(5.0, 0.5, 0.35, 10.0, 20.0);
        let grid: Vec<f64> = (1..=100).map(|i| i as f64 * 0.01).collect();
        let fit = fit_harmonic(&s, &grid).unwrap();
        assert!((fit.angular_freq - 0.35).abs() < 1e-12);
        assert!(fit.rms_residual < 1e-9);
        assert!((fit.amplitude - 5.0).abs() < 1e-9);
        assert!((fit.offset - 25.25).abs() < 1e-9);
        assert!((fit.eval(3.0) - s.d_hat_values[30].powi(2)).abs() < 1e-9);
        assert!(fit_harmonic(&s.slice_time(0.0, 0.35), &grid).is_err());
    }

    #[test]
    fn harmonic_amplitude_tracks_radius() {
        let grid: Vec<f64> = (1..=100).map(|i| i as f64 * 0.01).collect();
        let a = fit_harmonic(&eq1_series(5.0, 0.2, 0.35, 10.0, 20.0), &grid).unwrap();
        let b = fit_harmonic(&eq1_series(5.0, 0.5, 0.35, 10.0, 20.0), &grid).unwrap();
        assert!((a.amplitude / b.amplitude - 0.4).abs() < 0.04);
    }

    #[test]
    fn harmonic_fit_noisy() {
        // amplitude 5 m² cosine, SNR 10 dB → noise variance 12.5/10
        let noise = Normal::new(0.0, (12.5f64 / 10.0).sqrt()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let grid: Vec<f64> = (1..=100).map(|i| i as f64 * 0.01).collect();
        let mut ok = 0;
        for _ in 0..100 {
            let clean = eq1_series(5.0, 0.5, 0.35, 10.0, 20.0);
            let sq: Vec<f64> = clean.d_hat_values.iter().map(|d| d * d + noise.sample(&mut rng)).collect();
            let fit = fit_harmonic(&series_from_sq(clean.timestamps, sq), &grid).unwrap();
            ok += usize::from((fit.amplitude - 5.0).abs() < 1.0);
        }
        assert!(ok >= 95, "{ok}/100 within 20%");
    }

    #[test]
    fn accumulation() {
        let constant = [estimate(0.35, 0.0, 1.0), estimate(0.35, 1.0, 2.0)];
        assert!((accumulated_rotation(&constant, 0.0, 2.0) - 0.7).abs() < 1e-12);
        assert_eq!(accumulated_rotation(&constant, 1.0, 1.0), 0.0);
        let steps = [estimate(0.7, 1.0, 2.0), estimate(0.1, 0.0, 1.0)];
        assert!((accumulated_rotation(&steps, 0.0, 2.0) - 0.8).abs() < 1e-12);
        assert!((accumulated_rotation(&steps, 0.5, 1.5) - 0.4).abs() < 1e-12);
        // overlapping windows are not double counted
        let overlap = [estimate(1.0, 0.0, 1.0), estimate(1.0, 0.5, 1.5)];
        assert!((accumulated_rotation(&overlap, 0.0, 2.0) - 1.5).abs() < 1e-12);
        let mut gated = estimate(0.35, 0.0, 1.0);
        gated.omega_hat = 0.0;
        assert_eq!(accumulated_rotation(&[gated], 0.0, 1.0), 0.0);
    }

    proptest! {
        #[test]
        fn single_cosine_within_one_bin(k in 2.0f64..60.0, phase in 0.0f64..std::f64::consts::TAU) {
            // 256 samples at 100 Hz; frequencies well inside the band
            let n = 256;
            let rate = 100.0;
            let f = k * rate / n as f64;
            let t: Vec<f64> = (0..n).map(|i| i as f64 / rate).collect();
            let sq: Vec<f64> = t.iter().map(|t| 30.0 + 4.0 * (2.0 * PI * f * t + phase).cos()).collect();
            let spec = power_spectrum(&series_from_sq(t, sq)).unwrap();
            prop_assert!((spec.f_half - f).abs() <= spec.bin_width());
        }

        #[test]
        fn scale_and_dc_invariance(scale in 0.1f64..10.0, shift in 0.0f64..100.0,
                                   omega in 0.5f64..10.0) {
            let s = eq1_series(5.0, 0.5, omega, 20.0, 10.0);
            let sq: Vec<f64> = s.d_hat_values.iter().map(|d| d * d).collect();
            let base = power_spectrum(&s).unwrap();
            let scaled = power_spectrum(&series_from_sq(s.timestamps.clone(),
                sq.iter().map(|v| v * scale).collect())).unwrap();
            let shifted = power_spectrum(&series_from_sq(s.timestamps.clone(),
                sq.iter().map(|v| v + shift).collect())).unwrap();
            prop_assert!((base.f_half - scaled.f_half).abs() < 1e-9);
            prop_assert!((base.f_half - shifted.f_half).abs() < 1e-6);
            for (a, b) in base.power.iter().zip(&scaled.power) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn radius_independence(omega in 0.3f64..3.0) {
            let cfg = RotationConfig::default();
            let a = estimate_rotation(&[eq1_series(5.0, 0.2, omega, 10.0, 60.0)], &cfg).unwrap();
            let b = estimate_rotation(&[eq1_series(5.0, 0.5, omega, 10.0, 60.0)], &cfg).unwrap();
            prop_assert!((a.fused - b.fused).abs() <= 2.0 * PI / 60.0);
        }
    }
}
