//! Ranging through beam training on an ideal line-of-sight channel.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use slash_core::angle_error::estimate_angle_error;
use slash_core::beam_search::{
    exhaustive_sls, slash_establish, Beam, Codebooks, LinkContext, RateStep, RateTable, RssProber, SlashConfig,
};
use slash_core::geometry::angle_diff;
use slash_core::positioning::{multilaterate, ApDeployment, PositionEstimate};
use slash_core::tof_ranging::{estimate_range, RangeEstimate, ToFSampleSet};
use slash_core::{ApId, Point2};

const BEAMWIDTH_DEG: f64 = 10.0;

struct LineOfSight<'a> {
    deployment: &'a ApDeployment,
    codebooks: &'a Codebooks,
    ue: Point2,
    heading: f64,
}

impl LineOfSight<'_> {
    fn gain(&self, boresight: Option<f64>, bearing: f64) -> f64 {
        match boresight {
            None => 0.0,
            Some(b) if angle_diff(bearing, b).abs() <= BEAMWIDTH_DEG.to_radians() / 2.0 => 20.0,
            Some(_) => -20.0,
        }
    }
}

impl RssProber for LineOfSight<'_> {
    fn probe(&self, ap_id: ApId, ap_beam: Beam, ue_beam: Beam) -> Option<f64> {
        let ap = self.deployment.position(ap_id).ok()?;
        let ap_b = match ap_beam {
            Beam::Omni => None,
            Beam::Sector(i) => Some(self.codebooks.ap.boresight(i)),
        };
        let ue_b = match ue_beam {
            Beam::Omni => None,
            Beam::Sector(i) => Some(self.codebooks.ue.boresight(i) + self.heading),
        };
        let rss = -40.0 + self.gain(ap_b, ap.bearing_to(self.ue)) + self.gain(ue_b, self.ue.bearing_to(ap))
            - 20.0 * ap.distance(self.ue).log10();
        (rss > -80.0).then_some(rss)
    }
}

fn rates() -> RateTable {
    RateTable::new(vec![
        RateStep { min_rss: -70.0, rate: 1000.0 },
        RateStep { min_rss: -60.0, rate: 2000.0 },
        RateStep { min_rss: -30.0, rate: 4000.0 },
    ])
    .unwrap()
}

fn observe(
    deployment: &ApDeployment,
    ue: Point2,
    rounds: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<RangeEstimate>, PositionEstimate) {
    let noise = Normal::new(0.0, 0.3).unwrap();
    let mut history = Vec::new();
    let mut position: Option<PositionEstimate> = None;
    for round in 0..rounds {
        let mut latest = Vec::new();
        for (k, ap) in deployment.aps().iter().enumerate() {
            let d = ap.position.distance(ue);
            let t0 = (round * deployment.len() + k) as f64 * 0.2;
            let samples: Vec<f64> = (0..20).map(|_| d + noise.sample(rng)).collect();
            let times = (0..20).map(|i| t0 + i as f64 * 0.01).collect();
            let set = ToFSampleSet::new(ap.id, samples, times).unwrap();
            latest.push(estimate_range(&set, rng.random()).unwrap());
        }
        position = Some(multilaterate(&latest, deployment, position.as_ref()).unwrap());
        history.extend(latest);
    }
    (history, position.unwrap())
}

#[test]
fn ranging_to_link_establishment() {
    let deployment =
        ApDeployment::from_positions(&[(1, 0.0, 0.0), (2, 12.0, 0.0), (3, 0.0, 10.0), (4, 12.0, 10.0)]).unwrap();
    let codebooks = Codebooks::symmetric(BEAMWIDTH_DEG.to_radians()).unwrap();
    let rates = rates();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let trials = 40;
    let mut same_rate = 0;
    for _ in 0..trials {
        let ue = Point2::new(rng.random_range(2.0..10.0), rng.random_range(2.0..8.0));
        let heading = rng.random_range(-PI..PI);
        let (history, position) = observe(&deployment, ue, 5, &mut rng);
        assert!(position.p_hat.distance(ue) < 0.5, "position error {}", position.p_hat.distance(ue));

        let serving = ApId(1);
        let theta = estimate_angle_error(&deployment, &position, &history, serving, 0.63).unwrap();
        assert!(!theta.clamped);

        let prober = LineOfSight { deployment: &deployment, codebooks: &codebooks, ue, heading };
        let ctx = LinkContext {
            deployment: &deployment,
            codebooks: &codebooks,
            rates: &rates,
            position: &position,
            history: &history,
            ue_heading: heading,
            now: 0.0,
        };
        let (slash, slash_cost) = slash_establish(&prober, &ctx, serving, &SlashConfig::default()).unwrap();
        let (exhaustive, exhaustive_cost) = exhaustive_sls(&prober, &codebooks, &rates, serving, 0.0).unwrap();
        assert!(slash_cost.total() < exhaustive_cost.total());
        assert!(slash.rate <= exhaustive.rate);
        same_rate += usize::from(slash.rate == exhaustive.rate);
    }
    assert!(same_rate * 10 >= trials * 9, "slash matched exhaustive in {same_rate}/{trials}");
}
