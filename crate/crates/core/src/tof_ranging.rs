//! Two-way ToF ranging with multipath separation.
//!
//! A window of range samples `d_k = c·δ_ToF,k` is modelled as a mixture of
//! normals sharing one standard deviation, one component per resolvable
//! propagation path. The mixture is fitted by EM from a k-means++ start, the
//! cluster count is chosen by AIC over `κ ∈ {1, 2, 3}`, and the direct path
//! is the component with the least positive mean.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{ApId, Error, Result};

/// Samples per ranging window.
pub const DEFAULT_WINDOW: usize = 20;
/// Lower bound on the tied standard deviation, in metres.
pub const SIGMA_FLOOR: f64 = 1e-3;
pub const MAX_CLUSTERS: usize = 3;

const EM_TOLERANCE: f64 = 1e-8;
const EM_MAX_ITERATIONS: usize = 200;
const KMEANS_RESTARTS: u64 = 5;
const LLOYD_MAX_ITERATIONS: usize = 100;

/// A window of raw range samples from one AP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToFSampleSet {
    pub ap_id: ApId,
    /// Metres.
    pub samples: Vec<f64>,
    /// Seconds, non-decreasing.
    pub timestamps: Vec<f64>,
}

impl ToFSampleSet {
    pub fn new(ap_id: ApId, samples: Vec<f64>, timestamps: Vec<f64>) -> Result<Self> {
        if samples.len() != timestamps.len() {
            return Err(Error::invalid(format!("{} samples but {} timestamps", samples.len(), timestamps.len())));
        }
        if samples.len() < 2 {
            return Err(Error::TooFewSamples { need: 2, got: samples.len() });
        }
        if samples.iter().chain(&timestamps).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite sample or timestamp"));
        }
        if timestamps.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("timestamps must be non-decreasing"));
        }
        Ok(Self { ap_id, samples, timestamps })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn end_time(&self) -> f64 {
        *self.timestamps.last().expect("validated non-empty")
    }
}

/// How a continuous sample stream is cut into ranging windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// Disjoint consecutive windows (one estimate per `size` samples).
    #[default]
    Tumbling,
    /// One window ending at every sample once `size` samples are available.
    Sliding,
}

/// Cuts a sample stream into windows of `size` samples. A trailing partial
/// window is dropped.
pub fn windows(
    ap_id: ApId,
    samples: &[f64],
    timestamps: &[f64],
    size: usize,
    mode: WindowMode,
) -> Result<Vec<ToFSampleSet>> {
    if samples.len() != timestamps.len() {
        return Err(Error::invalid("samples and timestamps differ in length"));
    }
    if size < 2 {
        return Err(Error::invalid("window size must be at least 2"));
    }
    let step = match mode {
        WindowMode::Tumbling => size,
        WindowMode::Sliding => 1,
    };
    let mut out = Vec::new();
    let mut start = 0;
    while start + size <= samples.len() {
        let end = start + size;
        out.push(ToFSampleSet::new(ap_id, samples[start..end].to_vec(), timestamps[start..end].to_vec())?);
        start += step;
    }
    Ok(out)
}

/// A tied-variance Gaussian mixture fitted to one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    pub kappa: usize,
    /// Component means in metres, ascending.
    pub means: Vec<f64>,
    /// Shared standard deviation in metres.
    pub sigma: f64,
    pub weights: Vec<f64>,
    pub aic: f64,
    pub log_likelihood: f64,
    pub iterations: usize,
}

impl GmmFit {
    /// Builds a fit from explicit parameters, sorting components by mean.
    /// The log-likelihood and AIC are evaluated on `samples`.
    pub fn from_parameters(means: Vec<f64>, sigma: f64, weights: Vec<f64>, samples: &[f64]) -> Result<Self> {
        let kappa = means.len();
        if kappa == 0 || kappa > MAX_CLUSTERS || weights.len() != kappa {
            return Err(Error::invalid("need 1..=3 components with matching weights"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::invalid("weights must be non-negative and sum to 1"));
        }
        if !(sigma >= SIGMA_FLOOR) {
            return Err(Error::invalid("sigma below floor"));
        }
        let mut params = Params { means, weights, sigma };
        params.sort();
        let ll = mixture_log_likelihood(samples, &params);
        Ok(Self::finish(params, ll, 0))
    }

    fn finish(params: Params, log_likelihood: f64, iterations: usize) -> Self {
        let kappa = params.means.len();
        Self {
            kappa,
            aic: aic(kappa, log_likelihood),
            means: params.means,
            sigma: params.sigma,
            weights: params.weights,
            log_likelihood,
            iterations,
        }
    }

    fn params(&self) -> Params {
        Params { means: self.means.clone(), weights: self.weights.clone(), sigma: self.sigma }
    }

    /// Posterior component probabilities for one sample.
    pub fn responsibilities(&self, x: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.kappa];
        posterior(x, &self.params(), &mut out);
        out
    }

    /// Index of the component with the highest posterior for `x`
    /// (lowest index on ties).
    pub fn assign(&self, x: f64) -> usize {
        argmax(&self.responsibilities(x))
    }

    /// Component with the smallest strictly positive mean.
    pub fn least_positive_component(&self) -> Option<usize> {
        // means are ascending
        self.means.iter().position(|m| *m > 0.0)
    }
}

/// Number of free parameters: `κ` means, `κ − 1` weights, one shared sigma.
pub fn parameter_count(kappa: usize) -> usize {
    kappa + (kappa - 1) + 1
}

pub fn aic(kappa: usize, log_likelihood: f64) -> f64 {
    2.0 * parameter_count(kappa) as f64 - 2.0 * log_likelihood
}

#[derive(Debug, Clone)]
struct Params {
    means: Vec<f64>,
    weights: Vec<f64>,
    sigma: f64,
}

impl Params {
    fn sort(&mut self) {
        let mut idx: Vec<usize> = (0..self.means.len()).collect();
        idx.sort_by(|&a, &b| self.means[a].total_cmp(&self.means[b]));
        self.means = idx.iter().map(|&i| self.means[i]).collect();
        self.weights = idx.iter().map(|&i| self.weights[i]).collect();
    }
}

/// Per-component terms of the log-density that do not depend on the sample.
struct LogTerms {
    ln_weights: Vec<f64>,
    /// `−½·ln 2π − ln σ`
    norm: f64,
}

impl LogTerms {
    fn new(p: &Params) -> Self {
        Self { ln_weights: p.weights.iter().map(|w| w.ln()).collect(), norm: -0.5 * (2.0 * PI).ln() - p.sigma.ln() }
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Writes posteriors into `out` and returns the sample's log-density.
fn posterior(x: f64, p: &Params, out: &mut [f64]) -> f64 {
    posterior_with(x, p, &LogTerms::new(p), out)
}

fn posterior_with(x: f64, p: &Params, terms: &LogTerms, out: &mut [f64]) -> f64 {
    for (k, o) in out.iter_mut().enumerate() {
        let z = (x - p.means[k]) / p.sigma;
        *o = terms.ln_weights[k] + (terms.norm - 0.5 * z * z);
    }
    let lse = log_sum_exp(out);
    for o in out.iter_mut() {
        *o = (*o - lse).exp();
    }
    lse
}

fn mixture_log_likelihood(xs: &[f64], p: &Params) -> f64 {
    let terms = LogTerms::new(p);
    let mut scratch = vec![0.0; p.means.len()];
    xs.iter().map(|&x| posterior_with(x, p, &terms, &mut scratch)).sum()
}

/// E-step: fills the `n × κ` responsibility matrix, returns the log-likelihood.
fn e_step(xs: &[f64], p: &Params, resp: &mut [f64]) -> f64 {
    let k = p.means.len();
    let terms = LogTerms::new(p);
    xs.iter().zip(resp.chunks_mut(k)).map(|(&x, row)| posterior_with(x, p, &terms, row)).sum()
}

fn m_step(xs: &[f64], resp: &[f64], p: &mut Params) {
    let k = p.means.len();
    let n = xs.len() as f64;
    for c in 0..k {
        let (mut nk, mut sx) = (0.0, 0.0);
        for (i, &x) in xs.iter().enumerate() {
            let r = resp[i * k + c];
            nk += r;
            sx += r * x;
        }
        p.weights[c] = nk / n;
        // an empty component keeps its previous mean
        if nk > 1e-300 {
            p.means[c] = sx / nk;
        }
    }
    let mut ss = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        for c in 0..k {
            let d = x - p.means[c];
            ss += resp[i * k + c] * d * d;
        }
    }
    p.sigma = (ss / n).sqrt().max(SIGMA_FLOOR);
}

/// Runs EM to a fixed point. Returns the final parameters, their
/// log-likelihood, the iteration count and the per-iteration likelihoods.
fn run_em(xs: &[f64], mut p: Params) -> (Params, f64, usize, Vec<f64>) {
    let k = p.means.len();
    let mut resp = vec![0.0; xs.len() * k];
    let mut ll = e_step(xs, &p, &mut resp);
    let mut trace = vec![ll];
    let mut iterations = 0;
    while iterations < EM_MAX_ITERATIONS {
        m_step(xs, &resp, &mut p);
        let next = e_step(xs, &p, &mut resp);
        iterations += 1;
        debug_assert!(next >= ll - 1e-9 * ll.abs().max(1.0), "EM decreased the likelihood: {ll} -> {next}");
        trace.push(next);
        let improvement = next - ll;
        ll = next;
        if improvement < EM_TOLERANCE {
            break;
        }
    }
    (p, ll, iterations, trace)
}

/// Independent seed for sub-stream `stream` of `seed` (splitmix64
/// finaliser, so neighbouring inputs do not share streams).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// k-means++ seeding followed by Lloyd iterations on sorted 1-D data.
fn kmeans_pp(sorted: &[f64], kappa: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = sorted.len();
    let mut centers = vec![sorted[rng.random_range(0..n)]];
    let mut d2 = vec![0.0; n];
    while centers.len() < kappa {
        for (d, &x) in d2.iter_mut().zip(sorted) {
            *d = centers.iter().map(|c| (x - c) * (x - c)).fold(f64::INFINITY, f64::min);
        }
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if target < *d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centers.push(sorted[next]);
    }

    let mut labels = vec![0usize; n];
    for _ in 0..LLOYD_MAX_ITERATIONS {
        let mut changed = false;
        for (l, &x) in labels.iter_mut().zip(sorted) {
            let best = nearest(&centers, x);
            if best != *l {
                *l = best;
                changed = true;
            }
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let (sum, count) = sorted
                .iter()
                .zip(&labels)
                .filter(|(_, l)| **l == c)
                .fold((0.0, 0usize), |(s, n), (x, _)| (s + x, n + 1));
            if count > 0 {
                *center = sum / count as f64;
            }
        }
        if !changed {
            break;
        }
    }
    centers
}

fn nearest(centers: &[f64], x: f64) -> usize {
    let mut best = 0;
    for (i, c) in centers.iter().enumerate() {
        if (x - c).abs() < (x - centers[best]).abs() {
            best = i;
        }
    }
    best
}

fn initial_params(sorted: &[f64], centers: Vec<f64>) -> Params {
    let n = sorted.len() as f64;
    let k = centers.len();
    let mut counts = vec![0.0f64; k];
    let mut ss = 0.0;
    for &x in sorted {
        let c = nearest(&centers, x);
        counts[c] += 1.0;
        ss += (x - centers[c]).powi(2);
    }
    // keep every component alive at the start
    let weights: Vec<f64> = counts.iter().map(|c| c.max(0.5)).collect();
    let total: f64 = weights.iter().sum();
    Params {
        means: centers,
        weights: weights.iter().map(|w| w / total).collect(),
        sigma: (ss / n).sqrt().max(SIGMA_FLOOR),
    }
}

fn validate_kappa(samples: &[f64], kappa: usize) -> Result<()> {
    if !(1..=MAX_CLUSTERS).contains(&kappa) {
        return Err(Error::invalid(format!("kappa must be in 1..=3, got {kappa}")));
    }
    if samples.len() < kappa.max(1) {
        return Err(Error::TooFewSamples { need: kappa, got: samples.len() });
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("non-finite sample"));
    }
    Ok(())
}

fn fit_sorted(sorted: &[f64], kappa: usize, seed: u64) -> Result<(GmmFit, Vec<f64>)> {
    let degenerate = sorted.first() == sorted.last();
    if degenerate && kappa > 1 {
        return Err(Error::DegenerateWindow { kappa });
    }
    let mut best: Option<(Params, f64, usize, Vec<f64>)> = None;
    let restarts = if kappa == 1 { 1 } else { KMEANS_RESTARTS };
    for r in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, r));
        let centers = kmeans_pp(sorted, kappa, &mut rng);
        let run = run_em(sorted, initial_params(sorted, centers));
        if best.as_ref().is_none_or(|b| run.1 > b.1) {
            best = Some(run);
        }
    }
    let (mut params, ll, iterations, trace) = best.expect("at least one restart");
    params.sort();
    Ok((GmmFit::finish(params, ll, iterations), trace))
}

fn sorted_copy(samples: &[f64]) -> Vec<f64> {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Fits a `kappa`-component tied-variance mixture.
///
/// Initialisation runs on the samples sorted ascending, so the result does
/// not depend on sample order. The best of several k-means++ restarts (by
/// final log-likelihood) is returned.
pub fn fit_gmm(samples: &[f64], kappa: usize, seed: u64) -> Result<GmmFit> {
    validate_kappa(samples, kappa)?;
    fit_sorted(&sorted_copy(samples), kappa, seed).map(|(fit, _)| fit)
}

/// Like [`fit_gmm`] but also returns the log-likelihood after every EM
/// iteration of the winning restart.
pub fn fit_gmm_traced(samples: &[f64], kappa: usize, seed: u64) -> Result<(GmmFit, Vec<f64>)> {
    validate_kappa(samples, kappa)?;
    fit_sorted(&sorted_copy(samples), kappa, seed)
}

/// Fits `κ = 1, 2, 3` and returns the fit with the lowest AIC. Cluster
/// counts that cannot be fitted (identical samples) are skipped; ties go to
/// the smaller `κ`.
pub fn select_model(samples: &[f64], seed: u64) -> Result<GmmFit> {
    if samples.len() < 3 {
        return Err(Error::TooFewSamples { need: 3, got: samples.len() });
    }
    let sorted = sorted_copy(samples);
    let mut best: Option<GmmFit> = None;
    for kappa in 1..=MAX_CLUSTERS {
        validate_kappa(&sorted, kappa)?;
        let fit = match fit_sorted(&sorted, kappa, seed) {
            Ok((fit, _)) => fit,
            Err(Error::DegenerateWindow { .. }) => continue,
            Err(e) => return Err(e),
        };
        if best.as_ref().is_none_or(|b| fit.aic < b.aic) {
            best = Some(fit);
        }
    }
    Ok(best.expect("kappa = 1 always fits"))
}

/// Distance estimate for one AP window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RangeEstimate {
    pub ap_id: ApId,
    /// Least positive cluster mean, metres.
    pub d_hat: f64,
    /// Cluster count of the selected fit.
    pub kappa: usize,
    /// Sample standard deviation of the samples assigned to the direct-path
    /// cluster, metres.
    pub sigma_d: f64,
    /// Number of samples assigned to the direct-path cluster.
    pub support: usize,
    /// Window end, seconds.
    pub timestamp: f64,
}

impl RangeEstimate {
    /// Standard error of `d_hat` implied by the window itself.
    pub fn standard_error(&self) -> f64 {
        if self.support == 0 {
            self.sigma_d
        } else {
            self.sigma_d / (self.support as f64).sqrt()
        }
    }
}

fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Picks the least-positive-mean component of `fit` as the direct path.
pub fn range_from_fit(set: &ToFSampleSet, fit: &GmmFit) -> Result<RangeEstimate> {
    let idx = fit.least_positive_component().ok_or(Error::NoPositivePath)?;
    let assigned: Vec<f64> = set.samples.iter().copied().filter(|&x| fit.assign(x) == idx).collect();
    let sigma_d = if assigned.len() >= 2 { sample_std(&assigned) } else { fit.sigma };
    Ok(RangeEstimate {
        ap_id: set.ap_id,
        d_hat: fit.means[idx],
        kappa: fit.kappa,
        sigma_d,
        support: assigned.len(),
        timestamp: set.end_time(),
    })
}

/// Model selection followed by least-positive-mean extraction.
pub fn estimate_range(set: &ToFSampleSet, seed: u64) -> Result<RangeEstimate> {
    let fit = select_model(&set.samples, seed)?;
    range_from_fit(set, &fit)
}

/// Standard deviation of the distance estimates over an observation period.
/// With a single estimate, falls back to that window's standard error.
pub fn observation_sigma(history: &[RangeEstimate]) -> Result<f64> {
    match history {
        [] => Err(Error::invalid("empty range history")),
        [only] => Ok(only.standard_error()),
        _ => {
            let d: Vec<f64> = history.iter().map(|r| r.d_hat).collect();
            Ok(sample_std(&d))
        }
    }
}
