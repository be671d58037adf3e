//! 60 GHz free-space link budget with ideal sector patterns.

use serde::{Deserialize, Serialize};
use slash_core::beam_search::{Beam, Codebooks, RssProber, SectorCodebook};
use slash_core::geometry::angle_diff;
use slash_core::positioning::ApDeployment;
use slash_core::{ApId, Point2};

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Straight wall that attenuates any link crossing it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Wall {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
    pub attenuation_db: f64,
}

impl Wall {
    fn blocks(&self, a: Point2, b: Point2) -> bool {
        let p = Point2::new(self.x1, self.y1);
        let q = Point2::new(self.x2, self.y2);
        let cross = |o: Point2, u: Point2, v: Point2| (u.x - o.x) * (v.y - o.y) - (u.y - o.y) * (v.x - o.x);
        let d1 = cross(p, q, a);
        let d2 = cross(p, q, b);
        let d3 = cross(a, b, p);
        let d4 = cross(a, b, q);
        d1 * d2 < 0.0 && d3 * d4 < 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    pub tx_power_dbm: f64,
    pub noise_floor_dbm: f64,
    pub carrier_hz: f64,
    pub mainlobe_gain_dbi: f64,
    pub sidelobe_gain_dbi: f64,
    /// Quasi-omnidirectional reception gain.
    pub omni_gain_dbi: f64,
    pub beamwidth_deg: f64,
    pub walls: Vec<Wall>,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            tx_power_dbm: 15.0,
            noise_floor_dbm: -87.0,
            carrier_hz: 60e9,
            mainlobe_gain_dbi: 22.0,
            sidelobe_gain_dbi: -18.0,
            omni_gain_dbi: 0.0,
            beamwidth_deg: 7.0,
            walls: Vec::new(),
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.mainlobe_gain_dbi > self.sidelobe_gain_dbi) {
            return Err("mainlobe gain must exceed sidelobe gain".into());
        }
        if !(self.noise_floor_dbm < self.tx_power_dbm) {
            return Err("noise floor must lie below transmit power".into());
        }
        if !(self.carrier_hz > 0.0) {
            return Err("carrier frequency must be positive".into());
        }
        if !(self.beamwidth_deg > 0.0 && self.beamwidth_deg <= 360.0) {
            return Err("beamwidth must lie in (0, 360] degrees".into());
        }
        if self.walls.iter().any(|w| !(w.attenuation_db >= 0.0)) {
            return Err("wall attenuation must be non-negative".into());
        }
        Ok(())
    }

    pub fn beamwidth(&self) -> f64 {
        self.beamwidth_deg.to_radians()
    }

    pub fn codebooks(&self) -> Codebooks {
        Codebooks::symmetric(self.beamwidth()).expect("validated beamwidth")
    }

    /// Friis free-space path loss, dB.
    pub fn fspl_db(&self, distance: f64) -> f64 {
        20.0 * (4.0 * std::f64::consts::PI * distance * self.carrier_hz / SPEED_OF_LIGHT).log10()
    }

    /// Gain toward `bearing` of a sector pointing at `boresight`, or of the
    /// omnidirectional pattern when `boresight` is `None`.
    pub fn gain(&self, boresight: Option<f64>, bearing: f64) -> f64 {
        match boresight {
            None => self.omni_gain_dbi,
            Some(b) if angle_diff(bearing, b).abs() <= self.beamwidth() / 2.0 => self.mainlobe_gain_dbi,
            Some(_) => self.sidelobe_gain_dbi,
        }
    }

    /// Received power, dBm, or `None` below the noise floor.
    pub fn rss(&self, tx: Point2, tx_boresight: Option<f64>, rx: Point2, rx_boresight: Option<f64>) -> Option<f64> {
        let d = tx.distance(rx);
        assert!(d > 0.0, "transmitter and receiver coincide");
        let blockage: f64 = self.walls.iter().filter(|w| w.blocks(tx, rx)).map(|w| w.attenuation_db).sum();
        let p =
            self.tx_power_dbm + self.gain(tx_boresight, tx.bearing_to(rx)) + self.gain(rx_boresight, rx.bearing_to(tx))
                - self.fspl_db(d)
                - blockage;
        (p >= self.noise_floor_dbm).then_some(p)
    }

    /// Upper bound on RSS at distance `d`.
    pub fn max_rss(&self, d: f64) -> f64 {
        self.tx_power_dbm + 2.0 * self.mainlobe_gain_dbi.max(self.omni_gain_dbi) - self.fspl_db(d)
    }
}

/// Ground-truth prober for one UE pose. AP sectors are fixed in the world
/// frame; UE sectors turn with the user.
pub struct TruthProber<'a> {
    pub channel: &'a ChannelConfig,
    pub deployment: &'a ApDeployment,
    pub codebooks: &'a Codebooks,
    pub ue: Point2,
    pub ue_heading: f64,
}

impl TruthProber<'_> {
    fn boresight(cb: &SectorCodebook, beam: Beam, frame: f64) -> Option<f64> {
        match beam {
            Beam::Omni => None,
            Beam::Sector(i) => Some(cb.boresight(i) + frame),
        }
    }
}

impl RssProber for TruthProber<'_> {
    fn probe(&self, ap_id: ApId, ap_beam: Beam, ue_beam: Beam) -> Option<f64> {
        let ap = self.deployment.position(ap_id).ok()?;
        self.channel.rss(
            ap,
            Self::boresight(&self.codebooks.ap, ap_beam, 0.0),
            self.ue,
            Self::boresight(&self.codebooks.ue, ue_beam, self.ue_heading),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn friis_at_one_metre() {
        let c = ChannelConfig::default();
        assert!((c.fspl_db(1.0) - 68.0).abs() < 0.05, "{}", c.fspl_db(1.0));
        assert!((c.fspl_db(10.0) - c.fspl_db(1.0) - 20.0).abs() < 1e-9);
    }

    #[test]
    fn alignment_and_misalignment() {
        let c = ChannelConfig::default();
        let tx = Point2::new(0.0, 0.0);
        let rx = Point2::new(5.0, 0.0);
        let aligned = c.rss(tx, Some(0.0), rx, Some(PI)).unwrap();
        assert!((aligned - (15.0 + 44.0 - c.fspl_db(5.0))).abs() < 1e-9);
        assert!((aligned - c.max_rss(5.0)).abs() < 1e-9);
        let off = c.rss(tx, Some(0.0), rx, Some(PI + c.beamwidth()));
        let drop = c.mainlobe_gain_dbi - c.sidelobe_gain_dbi;
        match off {
            Some(v) => assert!((aligned - v - drop).abs() < 1e-9),
            None => assert!(aligned - drop < c.noise_floor_dbm),
        }
        assert!(c.rss(tx, Some(PI), rx, Some(0.0)).is_none());
        let omni = c.rss(tx, Some(0.0), rx, None).unwrap();
        assert!((aligned - omni - c.mainlobe_gain_dbi).abs() < 1e-9);
    }

    #[test]
    fn walls_attenuate_crossing_links() {
        let c = ChannelConfig {
            walls: vec![Wall { x1: 2.0, y1: -1.0, x2: 2.0, y2: 1.0, attenuation_db: 10.0 }],
            ..ChannelConfig::default()
        };
        let open = ChannelConfig::default();
        let tx = Point2::new(0.0, 0.0);
        let blocked = c.rss(tx, Some(0.0), Point2::new(5.0, 0.0), Some(PI)).unwrap();
        let clear = open.rss(tx, Some(0.0), Point2::new(5.0, 0.0), Some(PI)).unwrap();
        assert!((clear - blocked - 10.0).abs() < 1e-9);
        let beside = Point2::new(1.0, 3.0);
        let b = tx.bearing_to(beside);
        assert_eq!(c.rss(tx, Some(b), beside, Some(b + PI)), open.rss(tx, Some(b), beside, Some(b + PI)));
    }

    #[test]
    fn validation() {
        let mut c = ChannelConfig::default();
        assert!(c.validate().is_ok());
        c.sidelobe_gain_dbi = 30.0;
        assert!(c.validate().is_err());
        let c = ChannelConfig { noise_floor_dbm: 20.0, ..ChannelConfig::default() };
        assert!(c.validate().is_err());
    }
}
