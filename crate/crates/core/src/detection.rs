//! Photon-counting statistics for weak coherent pulses on free-running
//! avalanche photodiodes: click probabilities, dark counts, non-paralyzable
//! dead time, and Poisson count sampling.
//!
//! Dead time has two representations that agree in the linear regime:
//! a rate-level correction R / (1 + R tau) for long simulations, and an
//! explicit per-click blanking interval in pulse-level mode.

use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

/// Intensity levels of the decoy-state source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intensity {
    Signal,
    Decoy,
    Vacuum,
}

impl fmt::Display for Intensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Signal => "signal",
            Self::Decoy => "decoy",
            Self::Vacuum => "vacuum",
        };
        f.write_str(s)
    }
}

/// Pulsed weak-coherent source parameters.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SourceSpec {
    pub rep_rate_hz: f64,
    pub pulse_fwhm_ps: f64,
    /// Mean photons per pulse for each configured intensity level.
    pub mean_photon_numbers: BTreeMap<Intensity, f64>,
}

impl Default for SourceSpec {
    fn default() -> Self {
        let mut mean_photon_numbers = BTreeMap::new();
        mean_photon_numbers.insert(Intensity::Signal, 0.0052);
        mean_photon_numbers.insert(Intensity::Decoy, 0.0026);
        Self {
            rep_rate_hz: 600e6,
            pulse_fwhm_ps: 150.0,
            mean_photon_numbers,
        }
    }
}

impl SourceSpec {
    pub fn mean_photon_number(&self, intensity: Intensity) -> f64 {
        if intensity == Intensity::Vacuum {
            return 0.0;
        }
        self.mean_photon_numbers.get(&intensity).copied().unwrap_or(0.0)
    }
}

/// Single-photon detector parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct DetectorSpec {
    pub efficiency: f64,
    pub dead_time_us: f64,
    pub dark_rate_hz: f64,
}

impl DetectorSpec {
    /// Detectors on the four quantum outputs.
    pub fn quantum_default() -> Self {
        Self {
            efficiency: 0.20,
            dead_time_us: 20.0,
            dark_rate_hz: 500.0,
        }
    }

    /// Detector on the counter-propagating control signal.
    pub fn control_default() -> Self {
        Self {
            efficiency: 0.10,
            dead_time_us: 5.0,
            dark_rate_hz: 500.0,
        }
    }

    pub fn dead_time_s(&self) -> f64 {
        self.dead_time_us * 1e-6
    }

    /// Dark-click probability within one pulse period.
    pub fn dark_probability_per_pulse(&self, rep_rate_hz: f64) -> f64 {
        self.dark_rate_hz / rep_rate_hz
    }
}

/// Per-pulse click probability of a detector watching one measurement
/// outcome: Poissonian photon statistics thinned by path transmittance,
/// outcome probability and detector efficiency, combined with the dark
/// probability as the complement of no-click.
pub fn click_probability(
    mu: f64,
    path_transmittance: f64,
    outcome_probability: f64,
    det: &DetectorSpec,
    rep_rate_hz: f64,
) -> f64 {
    let p_signal = 1.0 - (-mu * path_transmittance * outcome_probability * det.efficiency).exp();
    let p_dark = det.dark_probability_per_pulse(rep_rate_hz);
    1.0 - (1.0 - p_signal) * (1.0 - p_dark)
}

/// Non-paralyzable dead-time correction: observed rate R / (1 + R tau).
pub fn apply_dead_time(true_rate_hz: f64, dead_time_s: f64) -> f64 {
    true_rate_hz / (1.0 + true_rate_hz * dead_time_s)
}

/// Poisson count over an integration window at an already dead-time
/// corrected rate. Deterministic for a given RNG state.
pub fn sample_counts(rate_hz: f64, window_s: f64, rng: &mut ChaCha12Rng) -> u64 {
    let mean = rate_hz * window_s;
    if mean <= 0.0 {
        return 0;
    }
    Poisson::new(mean).expect("positive mean").sample(rng) as u64
}

/// Pulse-by-pulse detector simulation with explicit dead-time blanking:
/// after every click the detector ignores the next `dead_pulses` slots.
/// Returns the number of registered clicks over `n_pulses` slots.
pub fn sample_clicks_pulse_level(
    p_click: f64,
    n_pulses: u64,
    dead_pulses: u64,
    rng: &mut ChaCha12Rng,
) -> u64 {
    let mut clicks = 0u64;
    let mut blanked = 0u64;
    for _ in 0..n_pulses {
        if blanked > 0 {
            blanked -= 1;
            continue;
        }
        if rng.gen::<f64>() < p_click {
            clicks += 1;
            blanked = dead_pulses;
        }
    }
    clicks
}
