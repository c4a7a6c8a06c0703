//! A fully drawn system instance: topology, channels, compute profiles,
//! and the accuracy budget, bundled for the association and delay layers.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::alloc::AllocProblem;
use crate::latency::{iters_global, t_comp, LatencyError, LearningBudget, UeComputeProfile};
use crate::radio::{compute_sinr, generate_topology, NetworkInstance, RadioConfig, RadioError, SinrTable};
use crate::units::sub_seed;

/// Ranges for the per-UE draws that accompany a topology.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileDraw {
    /// CPU cycles per training sample, drawn uniformly.
    pub cycles_per_sample: (f64, f64),
    /// Maximum CPU frequency in Hz, drawn uniformly.
    pub cpu_freq_max_hz: (f64, f64),
    /// Fixed minimum CPU frequency in Hz.
    pub cpu_freq_min_hz: f64,
    /// Model update size in bytes, drawn uniformly.
    pub model_bytes: (f64, f64),
    /// Local training-set size in samples, drawn uniformly; replaced by the
    /// actual shard sizes when a data partition is attached.
    pub data_samples: (u64, u64),
    /// Per-UE local iteration scale, drawn uniformly.
    pub local_iter_scale: (f64, f64),
}

impl Default for ProfileDraw {
    fn default() -> Self {
        ProfileDraw {
            cycles_per_sample: (1e4, 3e4),
            cpu_freq_max_hz: (1e9, 2e9),
            cpu_freq_min_hz: 0.5e9,
            model_bytes: (1_000_000.0, 8_000_000.0),
            data_samples: (100, 400),
            local_iter_scale: (0.5, 2.0),
        }
    }
}

/// Accuracy targets shared by all UEs; the per-UE scales are drawn.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BudgetDraw {
    /// Target global accuracy in (0, 1).
    pub global_accuracy: f64,
    /// Target local accuracy in (0, 1).
    pub local_accuracy: f64,
    /// Scale on the global iteration count.
    pub global_iter_scale: f64,
}

impl Default for BudgetDraw {
    fn default() -> Self {
        BudgetDraw {
            global_accuracy: 0.1,
            local_accuracy: 0.5,
            global_iter_scale: 1.0,
        }
    }
}

/// One drawn system instance.
#[derive(Debug, Clone)]
pub struct Scenario {
    /// Radio parameters the instance was drawn under.
    pub radio: RadioConfig,
    /// Topology and block-fading channel realization.
    pub net: NetworkInstance,
    /// Per-link SINR.
    pub sinr: SinrTable,
    /// Per-UE compute profiles, frequencies pinned at their maxima.
    pub profiles: Vec<UeComputeProfile>,
    /// Accuracy budget with drawn per-UE iteration scales.
    pub budget: LearningBudget,
    /// Reserved uplink rate on the fallback edge node, bit/s.
    pub edge_rate_bps: f64,
    /// Global iteration count implied by the budget.
    pub i_global: u64,
    /// Cached per-UE computation time per global round, seconds.
    comp_s: Vec<f64>,
}

/// Errors from scenario assembly.
#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Radio(#[from] RadioError),
    #[error(transparent)]
    Latency(#[from] LatencyError),
}

impl Scenario {
    /// Draws a scenario: topology and channels from one seed stream,
    /// compute profiles from another, so resizing one concern never
    /// shifts the draws of the other.
    pub fn build(
        radio: RadioConfig,
        n_ues: usize,
        n_sbs: usize,
        profile_draw: &ProfileDraw,
        budget_draw: &BudgetDraw,
        edge_rate_override_bps: Option<f64>,
        seed: u64,
    ) -> Result<Scenario, ScenarioError> {
        let net = generate_topology(&radio, n_ues, n_sbs, sub_seed(seed, 1))?;
        let sinr = compute_sinr(&net, &radio)?;

        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, 2));
        let mut profiles = Vec::with_capacity(n_ues);
        let mut local_iter_scale = Vec::with_capacity(n_ues);
        for _ in 0..n_ues {
            let f_max = rng.random_range(profile_draw.cpu_freq_max_hz.0..=profile_draw.cpu_freq_max_hz.1);
            profiles.push(UeComputeProfile {
                cycles_per_sample: rng
                    .random_range(profile_draw.cycles_per_sample.0..=profile_draw.cycles_per_sample.1),
                data_samples: rng
                    .random_range(profile_draw.data_samples.0..=profile_draw.data_samples.1),
                cpu_freq_hz: f_max,
                cpu_freq_min_hz: profile_draw.cpu_freq_min_hz.min(f_max),
                cpu_freq_max_hz: f_max,
                model_bytes: rng.random_range(profile_draw.model_bytes.0..=profile_draw.model_bytes.1),
            });
            local_iter_scale.push(
                rng.random_range(profile_draw.local_iter_scale.0..=profile_draw.local_iter_scale.1),
            );
        }

        let budget = LearningBudget {
            global_accuracy: budget_draw.global_accuracy,
            local_accuracy: budget_draw.local_accuracy,
            global_iter_scale: budget_draw.global_iter_scale,
            local_iter_scale,
        };
        let i_global = iters_global(&budget)?;

        let edge_rate_bps = edge_rate_override_bps.unwrap_or_else(|| {
            let median = median_iter(sinr.gamma.iter().cloned());
            radio.rb_bandwidth_hz * (1.0 + median).log2()
        });

        let mut scenario = Scenario {
            radio,
            net,
            sinr,
            profiles,
            budget,
            edge_rate_bps,
            i_global,
            comp_s: Vec::new(),
        };
        scenario.refresh_comp_cache()?;
        Ok(scenario)
    }

    /// Assembles a scenario from pre-built parts, deriving SINR, the edge
    /// rate, and the iteration counts. Useful for hand-crafted instances.
    pub fn from_parts(
        radio: RadioConfig,
        net: NetworkInstance,
        profiles: Vec<UeComputeProfile>,
        budget: LearningBudget,
        edge_rate_override_bps: Option<f64>,
    ) -> Result<Scenario, ScenarioError> {
        let sinr = compute_sinr(&net, &radio)?;
        let i_global = iters_global(&budget)?;
        let edge_rate_bps = edge_rate_override_bps.unwrap_or_else(|| {
            let median = median_iter(sinr.gamma.iter().cloned());
            radio.rb_bandwidth_hz * (1.0 + median).log2()
        });
        let mut scenario = Scenario {
            radio,
            net,
            sinr,
            profiles,
            budget,
            edge_rate_bps,
            i_global,
            comp_s: Vec::new(),
        };
        scenario.refresh_comp_cache()?;
        Ok(scenario)
    }

    fn refresh_comp_cache(&mut self) -> Result<(), LatencyError> {
        self.comp_s = (0..self.n_ues())
            .map(|n| t_comp(&self.profiles[n], &self.budget, n))
            .collect::<Result<_, _>>()?;
        Ok(())
    }

    /// Replaces the drawn training-set sizes with actual shard sizes.
    pub fn set_data_samples(&mut self, sizes: &[u64]) -> Result<(), LatencyError> {
        assert_eq!(sizes.len(), self.n_ues());
        for (profile, &size) in self.profiles.iter_mut().zip(sizes) {
            profile.data_samples = size.max(1);
        }
        self.refresh_comp_cache()
    }

    /// Number of UEs.
    pub fn n_ues(&self) -> usize {
        self.net.n_ues()
    }

    /// Number of SBSs.
    pub fn n_sbs(&self) -> usize {
        self.net.n_sbs()
    }

    /// Upload size of UE `n` in bits.
    pub fn com_bits(&self, n: usize) -> f64 {
        8.0 * self.profiles[n].model_bytes
    }

    /// Full-share upload rate of UE `n` at SBS `s` in bit/s.
    pub fn rate_coeff(&self, n: usize, s: usize) -> f64 {
        self.radio.subbands_per_sbs[s] as f64
            * self.radio.rb_bandwidth_hz
            * (1.0 + self.sinr.gamma[[n, s]]).log2()
    }

    /// Computation time of UE `n` for one global round, seconds.
    pub fn comp_s(&self, n: usize) -> f64 {
        self.comp_s[n]
    }

    /// Round delay of UE `n` when served by the edge node, seconds.
    pub fn edge_round_delay_s(&self, n: usize) -> f64 {
        self.com_bits(n) / self.edge_rate_bps + self.comp_s[n]
    }

    /// Builds the allocation problem for one cell's member set.
    pub fn alloc_problem(&self, sbs: usize, members: &[usize]) -> AllocProblem {
        AllocProblem {
            ue_ids: members.to_vec(),
            com_bits: members.iter().map(|&n| self.com_bits(n)).collect(),
            rate_coeff: members.iter().map(|&n| self.rate_coeff(n, sbs)).collect(),
            comp_s: members.iter().map(|&n| self.comp_s(n)).collect(),
            cpu_freq_hz: members.iter().map(|&n| self.profiles[n].cpu_freq_max_hz).collect(),
        }
    }
}

fn median_iter(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = v.len();
    if m == 0 {
        return 0.0;
    }
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn small_scenario(n_ues: usize, n_sbs: usize, seed: u64) -> Scenario {
        let radio = RadioConfig::default().with_even_subbands(n_sbs);
        Scenario::build(
            radio,
            n_ues,
            n_sbs,
            &ProfileDraw::default(),
            &BudgetDraw::default(),
            None,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn test_build_is_deterministic() {
        let a = small_scenario(12, 3, 5);
        let b = small_scenario(12, 3, 5);
        assert_eq!(a.net.channel_gain, b.net.channel_gain);
        assert_eq!(a.edge_rate_bps, b.edge_rate_bps);
        for n in 0..12 {
            assert_eq!(a.profiles[n].model_bytes, b.profiles[n].model_bytes);
            assert_eq!(a.comp_s(n), b.comp_s(n));
        }
    }

    #[test]
    fn test_profiles_within_draw_ranges() {
        let scn = small_scenario(30, 2, 9);
        let draw = ProfileDraw::default();
        for p in &scn.profiles {
            assert!(p.validate());
            assert!(p.cycles_per_sample >= draw.cycles_per_sample.0);
            assert!(p.cycles_per_sample <= draw.cycles_per_sample.1);
            assert!(p.cpu_freq_max_hz >= draw.cpu_freq_max_hz.0);
            assert!(p.cpu_freq_max_hz <= draw.cpu_freq_max_hz.1);
            assert!(p.model_bytes >= draw.model_bytes.0);
            assert!(p.model_bytes <= draw.model_bytes.1);
            assert_eq!(p.cpu_freq_hz, p.cpu_freq_max_hz);
        }
    }

    #[test]
    fn test_edge_rate_is_one_subband_at_median_sinr() {
        let scn = small_scenario(9, 3, 21);
        let mut gammas: Vec<f64> = scn.sinr.gamma.iter().cloned().collect();
        gammas.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = gammas.len();
        let median = if m % 2 == 1 {
            gammas[m / 2]
        } else {
            0.5 * (gammas[m / 2 - 1] + gammas[m / 2])
        };
        let expected = scn.radio.rb_bandwidth_hz * (1.0 + median).log2();
        assert!((scn.edge_rate_bps - expected).abs() < 1e-9);

        let radio = RadioConfig::default().with_even_subbands(2);
        let forced = Scenario::build(
            radio,
            4,
            2,
            &ProfileDraw::default(),
            &BudgetDraw::default(),
            Some(123_456.0),
            3,
        )
        .unwrap();
        assert_eq!(forced.edge_rate_bps, 123_456.0);
    }

    #[test]
    fn test_set_data_samples_refreshes_comp_times() {
        let mut scn = small_scenario(4, 2, 17);
        let before = scn.comp_s(0);
        let sizes = vec![10_000u64; 4];
        scn.set_data_samples(&sizes).unwrap();
        assert!(scn.comp_s(0) > before);
        assert_eq!(scn.profiles[0].data_samples, 10_000);
    }
}
