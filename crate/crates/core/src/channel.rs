//! Multicore fiber link model: per-core loss, inter-core cross-talk, skew,
//! loss equalization, and stochastic relative-phase drift between arms.
//!
//! Individual matrix entries of the measured loss/cross-talk profile are not
//! published, so `paper_fiber_profile` uses a documented default assignment
//! that respects the published constraints: per-core loss in [2.7, 10] dB
//! with cores 1, 2, 5, 7 lowest, cross-talk at or below -46 dB, skew
//! 100 ps/km, length 2 km. Every value is overridable from configuration.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ChannelError {
    #[error("core {0} is not part of the fiber")]
    UnknownCore(usize),
    #[error("cross-talk is undefined for a core with itself (core {0})")]
    SelfCoupling(usize),
    #[error("no target cores given for equalization")]
    EmptyTargetSet,
    #[error("equalization ceiling {ceiling_db} dB is below the loss of core {core} ({loss_db} dB)")]
    CeilingTooLow {
        core: usize,
        loss_db: f64,
        ceiling_db: f64,
    },
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
}

/// Static description of the multicore fiber link including fan-in/fan-out.
///
/// Core labels are 1-based physical indices; losses are stored as positive
/// attenuation magnitudes in dB.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FiberSpec {
    pub n_cores: usize,
    pub length_km: f64,
    /// Fiber plus fan-in/fan-out loss per core, indexed by label - 1.
    pub core_loss_db: Vec<f64>,
    /// Off-diagonal entries are cross-talk in dB (negative); the diagonal
    /// mirrors `core_loss_db`.
    pub crosstalk_db: Vec<Vec<f64>>,
    pub skew_ps_per_km: f64,
    pub selected_cores: Vec<usize>,
}

impl FiberSpec {
    fn check_core(&self, core: usize) -> Result<usize, ChannelError> {
        if core == 0 || core > self.n_cores {
            return Err(ChannelError::UnknownCore(core));
        }
        Ok(core - 1)
    }

    pub fn loss_db(&self, core: usize) -> Result<f64, ChannelError> {
        Ok(self.core_loss_db[self.check_core(core)?])
    }

    /// Linear power transmittance of a core, 10^(-loss/10).
    pub fn transmittance(&self, core: usize) -> Result<f64, ChannelError> {
        Ok(db_to_linear(-self.loss_db(core)?))
    }

    /// Linear fraction of power coupled from one core into another.
    pub fn crosstalk_probability(&self, from: usize, to: usize) -> Result<f64, ChannelError> {
        if from == to {
            return Err(ChannelError::SelfCoupling(from));
        }
        let (i, j) = (self.check_core(from)?, self.check_core(to)?);
        Ok(db_to_linear(self.crosstalk_db[i][j]))
    }

    /// Extra attenuation per target core that brings every target to the
    /// loss of the worst one.
    pub fn equalize_losses(&self, target_cores: &[usize]) -> Result<Vec<f64>, ChannelError> {
        let mut max_loss = f64::NEG_INFINITY;
        for &core in target_cores {
            max_loss = max_loss.max(self.loss_db(core)?);
        }
        if target_cores.is_empty() {
            return Err(ChannelError::EmptyTargetSet);
        }
        self.equalize_losses_to(target_cores, max_loss)
    }

    /// Extra attenuation per target core that brings every target to a
    /// common ceiling (e.g. the 7 dB worst path after delay compensation).
    pub fn equalize_losses_to(
        &self,
        target_cores: &[usize],
        ceiling_db: f64,
    ) -> Result<Vec<f64>, ChannelError> {
        if target_cores.is_empty() {
            return Err(ChannelError::EmptyTargetSet);
        }
        target_cores
            .iter()
            .map(|&core| {
                let loss = self.loss_db(core)?;
                if loss > ceiling_db {
                    return Err(ChannelError::CeilingTooLow {
                        core,
                        loss_db: loss,
                        ceiling_db,
                    });
                }
                Ok(ceiling_db - loss)
            })
            .collect()
    }
}

/// Worst equalized path loss of the installed link, after time-of-arrival
/// compensation patches.
pub const PAPER_MAX_CHANNEL_LOSS_DB: f64 = 7.0;

/// Default seven-core, 2 km profile. See module docs for provenance of the
/// individual entries.
pub fn paper_fiber_profile() -> FiberSpec {
    let core_loss_db = vec![2.7, 3.1, 8.5, 9.2, 3.6, 10.0, 4.3];
    let n = core_loss_db.len();
    let mut crosstalk_db = vec![vec![-50.0; n]; n];
    for (i, row) in crosstalk_db.iter_mut().enumerate() {
        row[i] = core_loss_db[i];
    }
    FiberSpec {
        n_cores: n,
        length_km: 2.0,
        core_loss_db,
        crosstalk_db,
        skew_ps_per_km: 100.0,
        selected_cores: vec![1, 2, 5, 7],
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    if db == f64::NEG_INFINITY {
        0.0
    } else {
        10f64.powf(db / 10.0)
    }
}

/// Visibility penalty from residual differential delay between the two
/// arms of an interfering pair, for Gaussian pulses of the given FWHM.
pub fn pulse_overlap_factor(residual_delay_ps: f64, pulse_fwhm_ps: f64) -> f64 {
    let sigma = pulse_fwhm_ps / (8.0 * 2f64.ln()).sqrt();
    (-(residual_delay_ps * residual_delay_ps) / (2.0 * sigma * sigma)).exp()
}

/// Kind of stochastic model for the relative phase between two arms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    Wiener,
    OrnsteinUhlenbeck,
}

/// Parameters of a relative-phase drift process. One process per
/// interfering core pair; only the relative phase is observable.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct DriftProcess {
    pub kind: DriftKind,
    /// Phase diffusion in rad^2/s.
    pub diffusion: f64,
    /// Mean-reversion rate in 1/s (Ornstein-Uhlenbeck only).
    pub reversion_rate: f64,
    pub initial_phase: f64,
    pub rng_seed: u64,
}

impl DriftProcess {
    /// Drift between two cores of the same multicore fiber: fringe
    /// decorrelation time of 1 s.
    pub fn mcf_default(rng_seed: u64) -> Self {
        Self {
            kind: DriftKind::Wiener,
            diffusion: 2.0,
            reversion_rate: 0.0,
            initial_phase: 0.0,
            rng_seed,
        }
    }

    /// Drift between two independent single-mode fibers: fringe
    /// decorrelation time of 1 ms.
    pub fn smf_default(rng_seed: u64) -> Self {
        Self {
            kind: DriftKind::Wiener,
            diffusion: 2000.0,
            reversion_rate: 0.0,
            initial_phase: 0.0,
            rng_seed,
        }
    }

    pub fn sampler(&self) -> DriftSampler {
        DriftSampler {
            process: *self,
            phase: self.initial_phase,
            rng: ChaCha12Rng::seed_from_u64(self.rng_seed),
        }
    }

    /// Stationary expectation E[cos(phi(t + lag) - phi(t))].
    ///
    /// Wiener: exp(-D lag / 2). Ornstein-Uhlenbeck (stationary start):
    /// exp(-sigma^2 (1 - e^(-lambda lag))) with sigma^2 = D / (2 lambda).
    pub fn fringe_autocorrelation(&self, lag: f64) -> f64 {
        match self.kind {
            DriftKind::Wiener => (-self.diffusion * lag / 2.0).exp(),
            DriftKind::OrnsteinUhlenbeck => {
                let var = self.diffusion / (2.0 * self.reversion_rate);
                (-var * (1.0 - (-self.reversion_rate * lag).exp())).exp()
            }
        }
    }

    /// Lag at which the fringe autocorrelation has fallen to 1/e.
    pub fn decorrelation_time(&self) -> f64 {
        match self.kind {
            DriftKind::Wiener => 2.0 / self.diffusion,
            DriftKind::OrnsteinUhlenbeck => {
                let var = self.diffusion / (2.0 * self.reversion_rate);
                if var <= 1.0 {
                    f64::INFINITY
                } else {
                    -(1.0 - 1.0 / var).ln() / self.reversion_rate
                }
            }
        }
    }
}

/// Advancing state of one drift sample path. A path must be stepped
/// sequentially; independent paths may run concurrently.
#[derive(Debug, Clone)]
pub struct DriftSampler {
    process: DriftProcess,
    phase: f64,
    rng: ChaCha12Rng,
}

impl DriftSampler {
    pub fn phase(&self) -> f64 {
        self.phase
    }

    /// Advances the phase by `dt` seconds and returns the new value.
    ///
    /// The Ornstein-Uhlenbeck update uses the exact discretization, so the
    /// statistics are independent of the step size.
    pub fn step(&mut self, dt: f64) -> Result<f64, ChannelError> {
        if dt <= 0.0 {
            return Err(ChannelError::NonPositiveStep(dt));
        }
        match self.process.kind {
            DriftKind::Wiener => {
                let std = (self.process.diffusion * dt).sqrt();
                if std > 0.0 {
                    let noise = Normal::new(0.0, std).expect("finite std");
                    self.phase += noise.sample(&mut self.rng);
                }
            }
            DriftKind::OrnsteinUhlenbeck => {
                let lambda = self.process.reversion_rate;
                let decay = (-lambda * dt).exp();
                let var = self.process.diffusion / (2.0 * lambda) * (1.0 - decay * decay);
                let mut next = self.phase * decay;
                if var > 0.0 {
                    let noise = Normal::new(0.0, var.sqrt()).expect("finite std");
                    next += noise.sample(&mut self.rng);
                }
                self.phase = next;
            }
        }
        Ok(self.phase)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn paper_profile_respects_published_constraints() {
        let spec = paper_fiber_profile();
        assert_eq!(spec.n_cores, 7);
        assert_abs_diff_eq!(spec.length_km, 2.0);
        assert_abs_diff_eq!(spec.skew_ps_per_km, 100.0);
        assert_eq!(spec.selected_cores, vec![1, 2, 5, 7]);
        let min = spec.core_loss_db.iter().cloned().fold(f64::MAX, f64::min);
        let max = spec.core_loss_db.iter().cloned().fold(f64::MIN, f64::max);
        assert!(min >= 2.7 && max <= 10.0, "losses {min}..{max} out of range");
        // Selected cores are the four lowest-loss ones.
        let mut ranked: Vec<usize> = (1..=7).collect();
        ranked.sort_by(|&a, &b| {
            spec.core_loss_db[a - 1]
                .partial_cmp(&spec.core_loss_db[b - 1])
                .unwrap()
        });
        let mut lowest: Vec<usize> = ranked[..4].to_vec();
        lowest.sort_unstable();
        assert_eq!(lowest, spec.selected_cores);
        for i in 1..=7usize {
            for j in 1..=7usize {
                if i != j {
                    assert!(spec.crosstalk_db[i - 1][j - 1] <= -46.0);
                    assert!(spec.crosstalk_probability(i, j).unwrap() <= db_to_linear(-46.0));
                }
            }
        }
    }

    #[test]
    fn transmittance_spot_values() {
        let mut spec = paper_fiber_profile();
        spec.core_loss_db[0] = 0.0;
        spec.core_loss_db[1] = 7.0;
        spec.core_loss_db[2] = 10.0;
        assert_abs_diff_eq!(spec.transmittance(1).unwrap(), 1.0);
        assert_abs_diff_eq!(spec.transmittance(2).unwrap(), 0.1995, epsilon = 1e-4);
        assert_abs_diff_eq!(spec.transmittance(3).unwrap(), 0.1, epsilon = 1e-12);
        assert!(matches!(
            spec.transmittance(8),
            Err(ChannelError::UnknownCore(8))
        ));
    }

    #[test]
    fn crosstalk_conversion() {
        let spec = paper_fiber_profile();
        assert_abs_diff_eq!(db_to_linear(-46.0), 2.511886e-5, epsilon = 1e-10);
        assert_eq!(db_to_linear(f64::NEG_INFINITY), 0.0);
        assert!(matches!(
            spec.crosstalk_probability(3, 3),
            Err(ChannelError::SelfCoupling(3))
        ));
    }

    #[test]
    fn equalization_aligns_to_worst_path() {
        let mut spec = paper_fiber_profile();
        spec.core_loss_db = vec![5.0, 7.0, 6.0, 7.0, 1.0, 1.0, 1.0];
        let add = spec.equalize_losses(&[1, 2, 3, 4]).unwrap();
        assert_eq!(add, vec![2.0, 0.0, 1.0, 0.0]);

        spec.core_loss_db = vec![4.0; 7];
        let add = spec.equalize_losses(&[1, 2, 3]).unwrap();
        assert!(add.iter().all(|&a| a == 0.0));

        assert_eq!(
            spec.equalize_losses(&[]),
            Err(ChannelError::EmptyTargetSet)
        );
    }

    #[test]
    fn equalization_to_installed_ceiling() {
        let spec = paper_fiber_profile();
        let add = spec
            .equalize_losses_to(&spec.selected_cores.clone(), PAPER_MAX_CHANNEL_LOSS_DB)
            .unwrap();
        for (k, &core) in spec.selected_cores.iter().enumerate() {
            let total = spec.loss_db(core).unwrap() + add[k];
            assert_abs_diff_eq!(total, 7.0, epsilon = 1e-12);
            assert!(add[k] >= 0.0);
        }
        assert!(matches!(
            spec.equalize_losses_to(&[6], 7.0),
            Err(ChannelError::CeilingTooLow { .. })
        ));
    }

    #[test]
    fn frozen_process_never_moves() {
        let p = DriftProcess {
            kind: DriftKind::Wiener,
            diffusion: 0.0,
            reversion_rate: 0.0,
            initial_phase: 0.4,
            rng_seed: 3,
        };
        let mut s = p.sampler();
        for _ in 0..100 {
            assert_eq!(s.step(0.01).unwrap(), 0.4);
        }
    }

    #[test]
    fn step_rejects_non_positive_dt() {
        let mut s = DriftProcess::mcf_default(1).sampler();
        assert!(matches!(s.step(0.0), Err(ChannelError::NonPositiveStep(_))));
    }

    #[test]
    fn identical_seeds_reproduce_bitwise() {
        let p = DriftProcess::mcf_default(42);
        let mut a = p.sampler();
        let mut b = p.sampler();
        for _ in 0..1000 {
            let x = a.step(1e-3).unwrap();
            let y = b.step(1e-3).unwrap();
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn wiener_variance_matches_analytic() {
        let t = 0.5;
        let d = 2.0;
        let n = 10_000;
        let mut sum_sq = 0.0;
        for seed in 0..n {
            let p = DriftProcess {
                kind: DriftKind::Wiener,
                diffusion: d,
                reversion_rate: 0.0,
                initial_phase: 0.0,
                rng_seed: seed,
            };
            let mut s = p.sampler();
            let mut phase = 0.0;
            for _ in 0..50 {
                phase = s.step(t / 50.0).unwrap();
            }
            sum_sq += phase * phase;
        }
        let var = sum_sq / n as f64;
        assert_relative_eq!(var, d * t, max_relative = 0.05);
    }

    #[test]
    fn ou_stationary_variance_matches_analytic() {
        let p = DriftProcess {
            kind: DriftKind::OrnsteinUhlenbeck,
            diffusion: 8.0,
            reversion_rate: 4.0,
            initial_phase: 0.0,
            rng_seed: 7,
        };
        let mut s = p.sampler();
        // Burn in several reversion times, then sample at decorrelated lags.
        for _ in 0..100 {
            s.step(0.25).unwrap();
        }
        let n = 20_000;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let phase = s.step(1.0).unwrap();
            sum_sq += phase * phase;
        }
        let var = sum_sq / n as f64;
        assert_relative_eq!(var, 1.0, max_relative = 0.05); // D/(2 lambda) = 1
    }

    #[test]
    fn wiener_increments_are_independent() {
        let p = DriftProcess::mcf_default(11);
        let mut s = p.sampler();
        let n = 100_000;
        let dt = 1e-3;
        let mut prev_phase = 0.0;
        let mut incs = Vec::with_capacity(n);
        for _ in 0..n {
            let phase = s.step(dt).unwrap();
            incs.push(phase - prev_phase);
            prev_phase = phase;
        }
        let mean = incs.iter().sum::<f64>() / n as f64;
        let var: f64 = incs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        let mut cov = 0.0;
        for w in incs.windows(2) {
            cov += (w[0] - mean) * (w[1] - mean);
        }
        cov /= (n - 1) as f64;
        // Lag-1 autocovariance of iid increments: 0 +/- var/sqrt(n).
        let bound = 3.0 * var / (n as f64).sqrt();
        assert!(cov.abs() < bound, "cov {cov:.3e} exceeds 3 sigma {bound:.3e}");
    }

    #[test]
    fn autocorrelation_closed_forms() {
        let w = DriftProcess::mcf_default(0);
        assert_abs_diff_eq!(w.fringe_autocorrelation(0.0), 1.0);
        // lag 2/D gives exactly 1/e.
        assert_relative_eq!(
            w.fringe_autocorrelation(2.0 / w.diffusion),
            (-1f64).exp(),
            max_relative = 1e-12
        );
        assert_abs_diff_eq!(w.decorrelation_time(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            DriftProcess::smf_default(0).decorrelation_time(),
            1e-3,
            epsilon = 1e-15
        );
    }

    #[test]
    fn monte_carlo_autocorrelation_matches_analytic_both_kinds() {
        let processes = [
            DriftProcess {
                kind: DriftKind::Wiener,
                diffusion: 2.0,
                reversion_rate: 0.0,
                initial_phase: 0.0,
                rng_seed: 0,
            },
            DriftProcess {
                kind: DriftKind::OrnsteinUhlenbeck,
                diffusion: 1.0,
                reversion_rate: 2.0,
                initial_phase: 0.0,
                rng_seed: 0,
            },
        ];
        for proc in processes {
            let lag = 0.3;
            let n = 10_000u64;
            let mut sum_cos = 0.0;
            let mut sum_cos_sq = 0.0;
            for seed in 0..n {
                let mut s = DriftProcess { rng_seed: seed, ..proc }.sampler();
                // Burn-in puts the OU process at stationarity; harmless for
                // Wiener, whose increments are stationary anyway.
                let mut start = 0.0;
                for _ in 0..40 {
                    start = s.step(0.5).unwrap();
                }
                let mut end = start;
                for _ in 0..10 {
                    end = s.step(lag / 10.0).unwrap();
                }
                let c = (end - start).cos();
                sum_cos += c;
                sum_cos_sq += c * c;
            }
            let mean = sum_cos / n as f64;
            let std = ((sum_cos_sq / n as f64 - mean * mean) / n as f64).sqrt();
            let expected = proc.fringe_autocorrelation(lag);
            assert!(
                (mean - expected).abs() < 3.0 * std,
                "{:?}: mc {mean:.4} vs analytic {expected:.4} (3 sigma {:.4})",
                proc.kind,
                3.0 * std
            );
        }
    }

    #[test]
    fn pulse_overlap_penalty() {
        assert_abs_diff_eq!(pulse_overlap_factor(0.0, 150.0), 1.0);
        // At one sigma of delay the overlap drops to e^(-1/2).
        let sigma = 150.0 / (8.0 * 2f64.ln()).sqrt();
        assert_relative_eq!(
            pulse_overlap_factor(sigma, 150.0),
            (-0.5f64).exp(),
            max_relative = 1e-12
        );
        assert!(pulse_overlap_factor(200.0, 150.0) < 0.01);
    }
}
