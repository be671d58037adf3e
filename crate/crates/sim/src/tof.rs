//! Synthetic two-way ToF samples with optional multipath components.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use slash_core::tof_ranging::{ToFSampleSet, DEFAULT_WINDOW};
use slash_core::ApId;

use crate::scenario::MultipathComponent;

/// Sample interval used by [`synthesize_tof_samples`], s.
pub const SAMPLE_INTERVAL_S: f64 = 0.01;

/// One ranging sample: the direct path, or with the configured
/// probabilities a longer reflected path, plus Gaussian noise.
pub fn draw_sample(true_distance: f64, sigma: f64, multipath: &[MultipathComponent], rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut excess = 0.0;
    for m in multipath {
        cum += m.probability;
        if u < cum {
            excess = m.excess;
            break;
        }
    }
    let noise = if sigma > 0.0 { Normal::new(0.0, sigma).expect("finite sigma").sample(rng) } else { 0.0 };
    true_distance + excess + noise
}

/// A window of samples at a fixed distance.
pub fn synthesize_tof_samples(
    ap_id: ApId,
    true_distance: f64,
    sigma: f64,
    multipath: &[MultipathComponent],
    seed: u64,
) -> slash_core::Result<ToFSampleSet> {
    if !(true_distance > 0.0) {
        return Err(slash_core::Error::InvalidInput("true distance must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..DEFAULT_WINDOW).map(|_| draw_sample(true_distance, sigma, multipath, &mut rng)).collect();
    let times = (0..DEFAULT_WINDOW).map(|i| i as f64 * SAMPLE_INTERVAL_S).collect();
    ToFSampleSet::new(ap_id, samples, times)
}
