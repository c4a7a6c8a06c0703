//! Wireless topology, channel gains, SINR, and uplink rates.
//!
//! Geometry: one macro base station at the origin, small-cell base stations
//! (SBSs) and UEs placed uniformly in a disc around it. The channel between
//! a UE and an SBS is distance-dependent path loss plus log-normal shadowing,
//! drawn once per link and then held fixed (block fading). Uplink bandwidth
//! is a grid of equal-width subbands split across the SBSs.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::{dbm_to_mw, mw_to_dbm};

/// Errors from topology generation and rate computation.
#[derive(Debug, Error, PartialEq)]
pub enum RadioError {
    /// Placement constraints cannot be satisfied (radius, minimum distance).
    #[error("bad geometry: {0}")]
    BadGeometry(String),
    /// Transmit power or noise level is not a usable positive quantity.
    #[error("non-positive power: {0}")]
    NonPositivePower(String),
    /// A SINR denominator degenerated to zero or a non-finite value.
    #[error("degenerate channel for ue {ue} towards sbs {sbs}")]
    DegenerateChannel { ue: usize, sbs: usize },
    /// A rate was requested over an empty SBS set.
    #[error("empty assignment for ue {0}")]
    EmptyAssignment(usize),
    /// The configuration violates a structural invariant.
    #[error("invalid radio config: {0}")]
    InvalidConfig(String),
}

/// Static radio parameters for one experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioConfig {
    /// Total uplink bandwidth in Hz.
    pub bandwidth_hz: f64,
    /// Number of equal-width subbands the bandwidth is divided into.
    pub num_subbands: usize,
    /// Width of one subband in Hz; must equal bandwidth / num_subbands.
    pub rb_bandwidth_hz: f64,
    /// Subbands owned by each SBS; the sum must cover the whole grid.
    pub subbands_per_sbs: Vec<usize>,
    /// SBS transmit power in dBm (shared by all SBSs).
    pub tx_power_dbm: f64,
    /// Thermal noise power spectral density in dBm/Hz.
    pub noise_psd_dbm_hz: f64,
    /// Log-normal shadowing standard deviation in dB.
    pub shadowing_std_db: f64,
    /// Fixed term of the path-loss law in dB.
    pub pathloss_fixed_db: f64,
    /// Distance slope of the path-loss law in dB per decade of km.
    pub pathloss_slope_db: f64,
    /// Radius of the served region in meters.
    pub network_radius_m: f64,
    /// Minimum distance between a UE and any base station in meters.
    pub min_link_distance_m: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        // 3 MHz channel on the standard grid: 15 subbands of 180 kHz.
        RadioConfig {
            bandwidth_hz: 2.7e6,
            num_subbands: 15,
            rb_bandwidth_hz: 180e3,
            subbands_per_sbs: Vec::new(),
            tx_power_dbm: 23.0,
            noise_psd_dbm_hz: -174.0,
            shadowing_std_db: 3.0,
            pathloss_fixed_db: 128.1,
            pathloss_slope_db: 37.6,
            network_radius_m: 100.0,
            min_link_distance_m: 2.0,
        }
    }
}

impl RadioConfig {
    /// Fills `subbands_per_sbs` with an even split across `n_sbs` cells.
    pub fn with_even_subbands(mut self, n_sbs: usize) -> Self {
        self.subbands_per_sbs = vec![self.num_subbands; n_sbs];
        self
    }

    /// Checks structural invariants; call before any generation step.
    pub fn validate(&self) -> Result<(), RadioError> {
        if !(self.bandwidth_hz > 0.0) || !(self.rb_bandwidth_hz > 0.0) || self.num_subbands == 0 {
            return Err(RadioError::InvalidConfig(
                "bandwidth, subband width, and subband count must be positive".into(),
            ));
        }
        let grid = self.rb_bandwidth_hz * self.num_subbands as f64;
        if ((grid - self.bandwidth_hz) / self.bandwidth_hz).abs() > 1e-9 {
            return Err(RadioError::InvalidConfig(format!(
                "subband grid {grid} Hz does not tile the {0} Hz bandwidth",
                self.bandwidth_hz
            )));
        }
        if self.subbands_per_sbs.is_empty() {
            return Err(RadioError::InvalidConfig("no SBS subband shares".into()));
        }
        let total: usize = self.subbands_per_sbs.iter().sum();
        let expected = self.num_subbands * self.subbands_per_sbs.len();
        if total != expected {
            return Err(RadioError::InvalidConfig(format!(
                "subband shares sum to {total}, expected {expected} across the grid"
            )));
        }
        if !self.tx_power_dbm.is_finite() {
            return Err(RadioError::NonPositivePower("tx power is not finite".into()));
        }
        if !self.noise_psd_dbm_hz.is_finite() {
            return Err(RadioError::NonPositivePower("noise PSD is not finite".into()));
        }
        if self.shadowing_std_db < 0.0 {
            return Err(RadioError::InvalidConfig("negative shadowing spread".into()));
        }
        if !(self.network_radius_m > self.min_link_distance_m) || self.min_link_distance_m < 0.0 {
            return Err(RadioError::BadGeometry(format!(
                "radius {} m incompatible with minimum link distance {} m",
                self.network_radius_m, self.min_link_distance_m
            )));
        }
        Ok(())
    }

    /// Distance-only path loss in dB at `d_m` meters.
    pub fn pathloss_db(&self, d_m: f64) -> f64 {
        let d_km = d_m / 1000.0;
        self.pathloss_fixed_db + self.pathloss_slope_db * d_km.log10()
    }

    /// Noise power in mW integrated over one subband.
    pub fn noise_mw_per_subband(&self) -> f64 {
        dbm_to_mw(self.noise_psd_dbm_hz + 10.0 * self.rb_bandwidth_hz.log10())
    }
}

/// A drawn topology with its block-fading channel realization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkInstance {
    /// SBS positions in meters, relative to the macro station at the origin.
    pub sbs_positions: Vec<[f64; 2]>,
    /// UE positions in meters.
    pub ue_positions: Vec<[f64; 2]>,
    /// Linear channel gain per (UE, SBS) link, in (0, 1].
    pub channel_gain: Array2<f64>,
    /// Received power per (UE, SBS) link in dBm.
    pub rsrp_dbm: Array2<f64>,
    /// Seed the instance was drawn from.
    pub seed: u64,
}

impl NetworkInstance {
    /// Number of UEs in the instance.
    pub fn n_ues(&self) -> usize {
        self.ue_positions.len()
    }

    /// Number of SBSs in the instance.
    pub fn n_sbs(&self) -> usize {
        self.sbs_positions.len()
    }
}

/// Per-link SINR values and the interference-plus-noise floor behind them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SinrTable {
    /// Linear SINR per (UE, SBS) link.
    pub gamma: Array2<f64>,
    /// Interference-plus-noise power per (UE, SBS) link in dBm.
    pub interference_dbm: Array2<f64>,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn uniform_in_disc(rng: &mut ChaCha8Rng, radius: f64) -> [f64; 2] {
    let r = radius * rng.random::<f64>().sqrt();
    let theta = 2.0 * std::f64::consts::PI * rng.random::<f64>();
    [r * theta.cos(), r * theta.sin()]
}

/// Draws SBS and UE positions and one shadowing realization per link.
///
/// UEs are resampled until they sit at least the minimum link distance from
/// the macro station and from every SBS. Channel gains are clamped to at
/// most 1 (a link cannot amplify), keeping them in (0, 1].
pub fn generate_topology(
    cfg: &RadioConfig,
    n_ues: usize,
    n_sbs: usize,
    seed: u64,
) -> Result<NetworkInstance, RadioError> {
    cfg.validate()?;
    if n_ues == 0 || n_sbs == 0 {
        return Err(RadioError::BadGeometry(
            "need at least one UE and one SBS".into(),
        ));
    }
    if n_sbs != cfg.subbands_per_sbs.len() {
        return Err(RadioError::InvalidConfig(format!(
            "config carries {} SBS subband shares but topology has {} SBSs",
            cfg.subbands_per_sbs.len(),
            n_sbs
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sbs_positions: Vec<[f64; 2]> = (0..n_sbs)
        .map(|_| uniform_in_disc(&mut rng, cfg.network_radius_m))
        .collect();

    let origin = [0.0, 0.0];
    let mut ue_positions = Vec::with_capacity(n_ues);
    for _ in 0..n_ues {
        let mut tries = 0;
        let pos = loop {
            let candidate = uniform_in_disc(&mut rng, cfg.network_radius_m);
            let clear = dist(candidate, origin) >= cfg.min_link_distance_m
                && sbs_positions
                    .iter()
                    .all(|sbs| dist(candidate, *sbs) >= cfg.min_link_distance_m);
            if clear {
                break candidate;
            }
            tries += 1;
            if tries > 10_000 {
                return Err(RadioError::BadGeometry(
                    "could not place a UE clear of all base stations".into(),
                ));
            }
        };
        ue_positions.push(pos);
    }

    let shadowing = Normal::new(0.0, cfg.shadowing_std_db)
        .map_err(|e| RadioError::InvalidConfig(format!("shadowing draw: {e}")))?;
    let mut channel_gain = Array2::zeros((n_ues, n_sbs));
    let mut rsrp_dbm = Array2::zeros((n_ues, n_sbs));
    for n in 0..n_ues {
        for s in 0..n_sbs {
            let d = dist(ue_positions[n], sbs_positions[s]);
            let shadow = if cfg.shadowing_std_db > 0.0 {
                shadowing.sample(&mut rng)
            } else {
                0.0
            };
            let loss_db = (cfg.pathloss_db(d) + shadow).max(0.0);
            channel_gain[[n, s]] = dbm_to_mw(-loss_db);
            rsrp_dbm[[n, s]] = cfg.tx_power_dbm - loss_db;
        }
    }

    Ok(NetworkInstance {
        sbs_positions,
        ue_positions,
        channel_gain,
        rsrp_dbm,
        seed,
    })
}

/// Computes per-link SINR: own-cell signal over other-cell interference
/// plus per-subband thermal noise.
pub fn compute_sinr(net: &NetworkInstance, cfg: &RadioConfig) -> Result<SinrTable, RadioError> {
    let p_mw = dbm_to_mw(cfg.tx_power_dbm);
    if !(p_mw > 0.0) || !p_mw.is_finite() {
        return Err(RadioError::NonPositivePower(format!(
            "tx power {} dBm",
            cfg.tx_power_dbm
        )));
    }
    let noise_mw = cfg.noise_mw_per_subband();
    let (n_ues, n_sbs) = net.channel_gain.dim();
    let mut gamma = Array2::zeros((n_ues, n_sbs));
    let mut interference_dbm = Array2::zeros((n_ues, n_sbs));
    for n in 0..n_ues {
        let row_total: f64 = (0..n_sbs).map(|s| p_mw * net.channel_gain[[n, s]]).sum();
        for s in 0..n_sbs {
            let signal = p_mw * net.channel_gain[[n, s]];
            let interference = row_total - signal;
            let floor = interference + noise_mw;
            if !(floor > 0.0) || !floor.is_finite() {
                return Err(RadioError::DegenerateChannel { ue: n, sbs: s });
            }
            gamma[[n, s]] = signal / floor;
            interference_dbm[[n, s]] = mw_to_dbm(floor);
        }
    }
    Ok(SinrTable {
        gamma,
        interference_dbm,
    })
}

/// Uplink rate in bit/s for a UE holding `n_rbs` whole subbands at one SBS.
pub fn rate_single(
    ue: usize,
    sbs: usize,
    n_rbs: usize,
    sinr: &SinrTable,
    cfg: &RadioConfig,
) -> f64 {
    n_rbs as f64 * cfg.rb_bandwidth_hz * (1.0 + sinr.gamma[[ue, sbs]]).log2()
}

/// Uplink rate in bit/s for a UE splitting fractions of several SBSs'
/// subband shares; `beta[i]` is the fraction of SBS `sbs_set[i]`'s share.
pub fn rate_general(
    ue: usize,
    sbs_set: &[usize],
    beta: &[f64],
    sinr: &SinrTable,
    cfg: &RadioConfig,
) -> Result<f64, RadioError> {
    if sbs_set.is_empty() {
        return Err(RadioError::EmptyAssignment(ue));
    }
    if sbs_set.len() != beta.len() {
        return Err(RadioError::InvalidConfig(format!(
            "{} SBS entries but {} fractions for ue {ue}",
            sbs_set.len(),
            beta.len()
        )));
    }
    let mut rate = 0.0;
    for (i, &s) in sbs_set.iter().enumerate() {
        let share = cfg.subbands_per_sbs[s] as f64 * cfg.rb_bandwidth_hz;
        rate += beta[i] * share * (1.0 + sinr.gamma[[ue, s]]).log2();
    }
    Ok(rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_cfg(n_sbs: usize) -> RadioConfig {
        RadioConfig::default().with_even_subbands(n_sbs)
    }

    #[test]
    fn test_pathloss_anchor_100m() {
        let cfg = test_cfg(1);
        // 128.1 + 37.6 * log10(0.1) = 128.1 - 37.6
        assert!((cfg.pathloss_db(100.0) - 90.5).abs() < 1e-12);
    }

    #[test]
    fn test_pathloss_increases_with_distance() {
        let cfg = test_cfg(1);
        let mut last = f64::NEG_INFINITY;
        for d in [2.0, 5.0, 10.0, 30.0, 60.0, 100.0] {
            let pl = cfg.pathloss_db(d);
            assert!(pl > last);
            last = pl;
        }
    }

    #[test]
    fn test_validate_rejects_broken_grid() {
        let mut cfg = test_cfg(2);
        cfg.rb_bandwidth_hz = 170e3;
        assert!(matches!(cfg.validate(), Err(RadioError::InvalidConfig(_))));

        let mut cfg = test_cfg(2);
        cfg.subbands_per_sbs = vec![15, 14];
        assert!(matches!(cfg.validate(), Err(RadioError::InvalidConfig(_))));
    }

    #[test]
    fn test_subband_conservation() {
        let cfg = test_cfg(4);
        cfg.validate().unwrap();
        let total: usize = cfg.subbands_per_sbs.iter().sum();
        assert_eq!(total, cfg.num_subbands * 4);
    }

    #[test]
    fn test_topology_respects_geometry() {
        let cfg = test_cfg(3);
        let net = generate_topology(&cfg, 40, 3, 7).unwrap();
        for ue in &net.ue_positions {
            let r = (ue[0].powi(2) + ue[1].powi(2)).sqrt();
            assert!(r <= cfg.network_radius_m + 1e-9);
            assert!(r >= cfg.min_link_distance_m);
            for sbs in &net.sbs_positions {
                assert!(dist(*ue, *sbs) >= cfg.min_link_distance_m);
            }
        }
        for sbs in &net.sbs_positions {
            let r = (sbs[0].powi(2) + sbs[1].powi(2)).sqrt();
            assert!(r <= cfg.network_radius_m + 1e-9);
        }
    }

    #[test]
    fn test_gains_in_unit_interval_and_rsrp_below_tx() {
        let cfg = test_cfg(3);
        let net = generate_topology(&cfg, 50, 3, 99).unwrap();
        for g in net.channel_gain.iter() {
            assert!(*g > 0.0 && *g <= 1.0);
        }
        for r in net.rsrp_dbm.iter() {
            assert!(*r <= cfg.tx_power_dbm + 1e-12);
        }
    }

    #[test]
    fn test_topology_deterministic_per_seed() {
        let cfg = test_cfg(2);
        let a = generate_topology(&cfg, 10, 2, 42).unwrap();
        let b = generate_topology(&cfg, 10, 2, 42).unwrap();
        let c = generate_topology(&cfg, 10, 2, 43).unwrap();
        assert_eq!(a.channel_gain, b.channel_gain);
        assert_eq!(a.ue_positions, b.ue_positions);
        assert_ne!(a.channel_gain, c.channel_gain);
    }

    #[test]
    fn test_gain_monotone_in_distance_without_shadowing() {
        let mut cfg = test_cfg(2);
        cfg.shadowing_std_db = 0.0;
        let net = generate_topology(&cfg, 30, 2, 5).unwrap();
        for n in 0..30 {
            for s in 0..2 {
                for s2 in 0..2 {
                    let d1 = dist(net.ue_positions[n], net.sbs_positions[s]);
                    let d2 = dist(net.ue_positions[n], net.sbs_positions[s2]);
                    if d1 < d2 {
                        assert!(net.channel_gain[[n, s]] >= net.channel_gain[[n, s2]]);
                    }
                }
            }
        }
    }

    /// Hand-built instance helper for SINR arithmetic tests.
    fn manual_net(gains: Array2<f64>) -> NetworkInstance {
        let (n, s) = gains.dim();
        NetworkInstance {
            sbs_positions: vec![[0.0, 0.0]; s],
            ue_positions: vec![[0.0, 0.0]; n],
            rsrp_dbm: gains.mapv(|g| mw_to_dbm(g)),
            channel_gain: gains,
            seed: 0,
        }
    }

    #[test]
    fn test_sinr_two_equal_cells() {
        let cfg = test_cfg(2);
        let g = 1e-9;
        let net = manual_net(Array2::from_elem((1, 2), g));
        let sinr = compute_sinr(&net, &cfg).unwrap();
        let p = dbm_to_mw(cfg.tx_power_dbm);
        let expected = p * g / (p * g + cfg.noise_mw_per_subband());
        assert!((sinr.gamma[[0, 0]] - expected).abs() / expected < 1e-12);
        assert!((sinr.gamma[[0, 1]] - expected).abs() / expected < 1e-12);
    }

    #[test]
    fn test_sinr_single_cell_unit_case() {
        // One SBS, gain such that received power equals the noise floor:
        // no interference term, so SINR is exactly 1.
        let mut cfg = test_cfg(1);
        cfg.tx_power_dbm = 0.0;
        let g = cfg.noise_mw_per_subband();
        let net = manual_net(Array2::from_elem((1, 1), g));
        let sinr = compute_sinr(&net, &cfg).unwrap();
        assert!((sinr.gamma[[0, 0]] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn test_sinr_rises_with_tx_power_under_noise() {
        let cfg = test_cfg(2);
        let mut louder = cfg.clone();
        louder.tx_power_dbm += 3.0;
        let net = generate_topology(&cfg, 10, 2, 11).unwrap();
        let base = compute_sinr(&net, &cfg).unwrap();
        let boosted = compute_sinr(&net, &louder).unwrap();
        for n in 0..10 {
            for s in 0..2 {
                // Noise stays fixed while signal and interference scale up,
                // so every SINR strictly improves.
                assert!(boosted.gamma[[n, s]] > base.gamma[[n, s]]);
            }
        }
    }

    #[test]
    fn test_sinr_power_scale_invariant_when_noise_negligible() {
        let mut cfg = test_cfg(2);
        cfg.noise_psd_dbm_hz = -400.0;
        let mut louder = cfg.clone();
        louder.tx_power_dbm += 6.0;
        let net = generate_topology(&cfg, 8, 2, 13).unwrap();
        let a = compute_sinr(&net, &cfg).unwrap();
        let b = compute_sinr(&net, &louder).unwrap();
        for n in 0..8 {
            for s in 0..2 {
                assert!((a.gamma[[n, s]] - b.gamma[[n, s]]).abs() / a.gamma[[n, s]] < 1e-9);
            }
        }
    }

    #[test]
    fn test_rate_single_anchor() {
        // 3 subbands of 180 kHz at SINR 3: 3 * 180e3 * log2(4) = 1.08e6 bit/s.
        let cfg = test_cfg(1);
        let sinr = SinrTable {
            gamma: Array2::from_elem((1, 1), 3.0),
            interference_dbm: Array2::zeros((1, 1)),
        };
        let r = rate_single(0, 0, 3, &sinr, &cfg);
        assert!((r - 1.08e6).abs() < 1e-6);
    }

    #[test]
    fn test_rate_general_matches_single_on_full_share() {
        let cfg = test_cfg(2);
        let sinr = SinrTable {
            gamma: Array2::from_elem((1, 2), 1.0),
            interference_dbm: Array2::zeros((1, 2)),
        };
        let full = rate_general(0, &[0], &[1.0], &sinr, &cfg).unwrap();
        assert!((full - rate_single(0, 0, cfg.num_subbands, &sinr, &cfg)).abs() < 1e-9);
        let split = rate_general(0, &[0, 1], &[0.5, 0.5], &sinr, &cfg).unwrap();
        assert!((split - full).abs() < 1e-9);
    }

    #[test]
    fn test_rate_general_monotone_in_beta_and_sinr() {
        let cfg = test_cfg(1);
        let low = SinrTable {
            gamma: Array2::from_elem((1, 1), 0.5),
            interference_dbm: Array2::zeros((1, 1)),
        };
        let high = SinrTable {
            gamma: Array2::from_elem((1, 1), 2.0),
            interference_dbm: Array2::zeros((1, 1)),
        };
        let r1 = rate_general(0, &[0], &[0.3], &low, &cfg).unwrap();
        let r2 = rate_general(0, &[0], &[0.6], &low, &cfg).unwrap();
        let r3 = rate_general(0, &[0], &[0.6], &high, &cfg).unwrap();
        assert!(r2 > r1);
        assert!(r3 > r2);
    }

    #[test]
    fn test_rate_general_rejects_empty_set() {
        let cfg = test_cfg(1);
        let sinr = SinrTable {
            gamma: Array2::zeros((1, 1)),
            interference_dbm: Array2::zeros((1, 1)),
        };
        assert_eq!(
            rate_general(0, &[], &[], &sinr, &cfg),
            Err(RadioError::EmptyAssignment(0))
        );
    }

    #[test]
    fn test_instance_serializes_round_trip() {
        let cfg = test_cfg(2);
        let net = generate_topology(&cfg, 4, 2, 3).unwrap();
        let json = serde_json::to_string(&net).unwrap();
        let back: NetworkInstance = serde_json::from_str(&json).unwrap();
        assert_eq!(net.channel_gain, back.channel_gain);
        assert_eq!(net.rsrp_dbm, back.rsrp_dbm);
    }
}
