//! Algebra of path-encoded qudits.
//!
//! A state lives in the d-dimensional Hilbert space spanned by a fixed set of
//! fiber cores. Three encoding schemes are supported: two-core superpositions
//! over cores {1,2,5,7} (two mutually unbiased bases of four states each),
//! a three-basis two-core layout, and a four-core layout with amplitude 1/2
//! on every core. Detection models partially coherent interference with a
//! single visibility per interfering pair plus a flat per-outcome background.

use std::fmt;

use num_complex::Complex64;
use thiserror::Error;

/// Normalization tolerance for state construction.
pub const NORM_TOL: f64 = 1e-12;
/// Orthonormality tolerance for basis construction.
pub const ORTHO_TOL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum StateError {
    #[error("state is not normalized: |amplitudes|^2 sums to {0}")]
    NotNormalized(f64),
    #[error("core labels must be distinct and match the amplitude count")]
    MalformedLabels,
    #[error("cores {0} and {1} must differ")]
    IdenticalCores(usize, usize),
    #[error("core {0} is not part of the configured core set")]
    UnknownCore(usize),
    #[error("states are defined over different core sets")]
    CoreSetMismatch,
    #[error("bases have different dimension: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("basis '{0}' is not orthonormal (worst deviation {1:.3e})")]
    NotOrthonormal(String, f64),
    #[error("visibility {0} outside [0, 1]")]
    VisibilityOutOfRange(f64),
    #[error("background probability {0} must be non-negative")]
    NegativeBackground(f64),
}

/// A pure path-encoded qudit: one complex amplitude per fiber core.
#[derive(Debug, Clone, PartialEq)]
pub struct PathState {
    amplitudes: Vec<Complex64>,
    core_labels: Vec<usize>,
}

impl PathState {
    /// Builds a state from explicit amplitudes; enforces normalization and
    /// distinct core labels.
    pub fn new(core_labels: Vec<usize>, amplitudes: Vec<Complex64>) -> Result<Self, StateError> {
        if core_labels.len() != amplitudes.len() || core_labels.is_empty() {
            return Err(StateError::MalformedLabels);
        }
        let mut seen = core_labels.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(StateError::MalformedLabels);
        }
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(StateError::NotNormalized(norm));
        }
        Ok(Self {
            amplitudes,
            core_labels,
        })
    }

    /// Equal superposition of two cores with a relative phase on the second:
    /// (|a> + e^{i theta} |b>) / sqrt(2), expressed over `core_set`.
    pub fn two_core(
        core_set: &[usize],
        core_a: usize,
        core_b: usize,
        relative_phase: f64,
    ) -> Result<Self, StateError> {
        if core_a == core_b {
            return Err(StateError::IdenticalCores(core_a, core_b));
        }
        let idx_a = core_index(core_set, core_a)?;
        let idx_b = core_index(core_set, core_b)?;
        let mut amplitudes = vec![Complex64::ZERO; core_set.len()];
        let w = 1.0 / 2f64.sqrt();
        amplitudes[idx_a] = Complex64::new(w, 0.0);
        amplitudes[idx_b] = Complex64::from_polar(w, relative_phase);
        Self::new(core_set.to_vec(), amplitudes)
    }

    /// State occupying a single core.
    pub fn single_core(core_set: &[usize], core: usize) -> Result<Self, StateError> {
        let idx = core_index(core_set, core)?;
        let mut amplitudes = vec![Complex64::ZERO; core_set.len()];
        amplitudes[idx] = Complex64::ONE;
        Self::new(core_set.to_vec(), amplitudes)
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn core_labels(&self) -> &[usize] {
        &self.core_labels
    }

    pub fn dimension(&self) -> usize {
        self.amplitudes.len()
    }

    /// Cores carrying non-negligible amplitude, in label order.
    pub fn occupied_cores(&self) -> Vec<usize> {
        self.core_labels
            .iter()
            .zip(&self.amplitudes)
            .filter(|(_, a)| a.norm_sqr() > 1e-18)
            .map(|(&c, _)| c)
            .collect()
    }

    /// Multiplies every amplitude by e^{i alpha}. Physically unobservable.
    pub fn with_global_phase(&self, alpha: f64) -> Self {
        let rot = Complex64::from_polar(1.0, alpha);
        Self {
            amplitudes: self.amplitudes.iter().map(|a| a * rot).collect(),
            core_labels: self.core_labels.clone(),
        }
    }
}

fn core_index(core_set: &[usize], core: usize) -> Result<usize, StateError> {
    core_set
        .iter()
        .position(|&c| c == core)
        .ok_or(StateError::UnknownCore(core))
}

/// Hermitian inner product <a|b>. Requires identical core label sets.
pub fn inner_product(a: &PathState, b: &PathState) -> Result<Complex64, StateError> {
    if a.core_labels != b.core_labels {
        return Err(StateError::CoreSetMismatch);
    }
    Ok(a.amplitudes
        .iter()
        .zip(&b.amplitudes)
        .map(|(x, y)| x.conj() * y)
        .sum())
}

/// An ordered orthonormal set of d states used as a projective measurement.
#[derive(Debug, Clone)]
pub struct MeasurementBasis {
    name: String,
    states: Vec<PathState>,
}

impl MeasurementBasis {
    /// Validates pairwise orthonormality before accepting the set.
    pub fn new(name: impl Into<String>, states: Vec<PathState>) -> Result<Self, StateError> {
        let name = name.into();
        let mut worst = 0.0f64;
        for (i, a) in states.iter().enumerate() {
            for (j, b) in states.iter().enumerate() {
                let overlap = inner_product(a, b)?.norm();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((overlap - target).abs());
            }
        }
        if worst > ORTHO_TOL {
            return Err(StateError::NotOrthonormal(name, worst));
        }
        Ok(Self { name, states })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn states(&self) -> &[PathState] {
        &self.states
    }

    pub fn dimension(&self) -> usize {
        self.states.len()
    }
}

/// Which published basis construction to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisScheme {
    /// Two MUBs of two-core superpositions over cores {1,2,5,7}.
    ThisWork,
    /// Three MUBs of two-core superpositions (chip-to-chip layout).
    Ding3Basis,
    /// Two MUBs of four-core superpositions (bulk-optics layout).
    Canas4Core,
}

impl BasisScheme {
    pub const ALL: [BasisScheme; 3] = [
        BasisScheme::ThisWork,
        BasisScheme::Ding3Basis,
        BasisScheme::Canas4Core,
    ];

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "this_work" => Some(Self::ThisWork),
            "ding_3basis" => Some(Self::Ding3Basis),
            "canas_4core" => Some(Self::Canas4Core),
            _ => None,
        }
    }
}

impl fmt::Display for BasisScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::ThisWork => "this_work",
            Self::Ding3Basis => "ding_3basis",
            Self::Canas4Core => "canas_4core",
        };
        f.write_str(s)
    }
}

/// Default physical core labels used by all schemes: the four lowest-loss
/// cores of the seven-core fiber.
pub const DEFAULT_CORE_SET: [usize; 4] = [1, 2, 5, 7];

/// Constructs the measurement bases of the selected scheme over `core_set`
/// (labels in ascending position a, b, c, d).
pub fn standard_bases_over(
    scheme: BasisScheme,
    core_set: &[usize],
) -> Result<Vec<MeasurementBasis>, StateError> {
    assert_eq!(core_set.len(), 4, "schemes are defined for d = 4");
    let [a, b, c, d] = [core_set[0], core_set[1], core_set[2], core_set[3]];
    let pair = |x: usize, y: usize, phase: f64| PathState::two_core(core_set, x, y, phase);
    use std::f64::consts::PI;
    match scheme {
        BasisScheme::ThisWork => {
            // M0 pairs (a,c) and (b,d); M1 pairs (a,d) and (b,c).
            let m0 = MeasurementBasis::new(
                "M0",
                vec![
                    pair(a, c, 0.0)?,
                    pair(a, c, PI)?,
                    pair(b, d, 0.0)?,
                    pair(b, d, PI)?,
                ],
            )?;
            let m1 = MeasurementBasis::new(
                "M1",
                vec![
                    pair(a, d, 0.0)?,
                    pair(a, d, PI)?,
                    pair(b, c, 0.0)?,
                    pair(b, c, PI)?,
                ],
            )?;
            Ok(vec![m0, m1])
        }
        BasisScheme::Ding3Basis => {
            let b0 = MeasurementBasis::new(
                "B0",
                vec![
                    pair(a, b, 0.0)?,
                    pair(a, b, PI)?,
                    pair(c, d, 0.0)?,
                    pair(c, d, PI)?,
                ],
            )?;
            let b1 = MeasurementBasis::new(
                "B1",
                vec![
                    pair(a, c, 0.0)?,
                    pair(a, c, PI)?,
                    pair(b, d, 0.0)?,
                    pair(b, d, PI)?,
                ],
            )?;
            let b2 = MeasurementBasis::new(
                "B2",
                vec![
                    pair(a, d, 0.0)?,
                    pair(a, d, PI)?,
                    pair(b, c, 0.0)?,
                    pair(b, c, PI)?,
                ],
            )?;
            Ok(vec![b0, b1, b2])
        }
        BasisScheme::Canas4Core => {
            let four = |signs: [f64; 4]| {
                let amplitudes = signs
                    .iter()
                    .map(|&s| Complex64::new(0.5 * s, 0.0))
                    .collect();
                PathState::new(core_set.to_vec(), amplitudes)
            };
            let c0 = MeasurementBasis::new(
                "C0",
                vec![
                    four([1.0, 1.0, 1.0, 1.0])?,
                    four([1.0, -1.0, 1.0, -1.0])?,
                    four([1.0, 1.0, -1.0, -1.0])?,
                    four([1.0, -1.0, -1.0, 1.0])?,
                ],
            )?;
            let c1 = MeasurementBasis::new(
                "C1",
                vec![
                    four([1.0, 1.0, 1.0, -1.0])?,
                    four([1.0, 1.0, -1.0, 1.0])?,
                    four([1.0, -1.0, 1.0, 1.0])?,
                    four([-1.0, 1.0, 1.0, 1.0])?,
                ],
            )?;
            Ok(vec![c0, c1])
        }
    }
}

/// Bases over the default core set.
pub fn standard_bases(scheme: BasisScheme) -> Vec<MeasurementBasis> {
    standard_bases_over(scheme, &DEFAULT_CORE_SET).expect("built-in bases are orthonormal")
}

/// Worst-case deviation of |<e_i|f_j>|^2 from the unbiased value 1/d over
/// all state pairs. Zero for a mutually unbiased pair.
pub fn mub_deviation(b1: &MeasurementBasis, b2: &MeasurementBasis) -> Result<f64, StateError> {
    if b1.dimension() != b2.dimension() {
        return Err(StateError::DimensionMismatch(
            b1.dimension(),
            b2.dimension(),
        ));
    }
    let unbiased = 1.0 / b1.dimension() as f64;
    let mut worst = 0.0f64;
    for e in b1.states() {
        for f in b2.states() {
            let overlap = inner_product(e, f)?.norm_sqr();
            worst = worst.max((overlap - unbiased).abs());
        }
    }
    Ok(worst)
}

/// Outcome probabilities for projecting `sent` onto each state of `basis`
/// with fringe visibility `visibility` and a flat `background` probability
/// added to every outcome before renormalization.
///
/// The coherent (interference) part of each Born probability is scaled by
/// the visibility while the incoherent part is kept, so a two-core state
/// measured against its own pair yields (1 +/- V cos dphi) / 2 and a
/// measurement in an unbiased basis stays uniform for any V.
pub fn detection_probabilities(
    sent: &PathState,
    basis: &MeasurementBasis,
    visibility: f64,
    background: f64,
) -> Result<Vec<f64>, StateError> {
    if !(0.0..=1.0).contains(&visibility) {
        return Err(StateError::VisibilityOutOfRange(visibility));
    }
    if background < 0.0 {
        return Err(StateError::NegativeBackground(background));
    }
    let mut probs = Vec::with_capacity(basis.dimension());
    for projector in basis.states() {
        let coherent = inner_product(projector, sent)?.norm_sqr();
        let incoherent: f64 = projector
            .amplitudes()
            .iter()
            .zip(sent.amplitudes())
            .map(|(e, s)| e.norm_sqr() * s.norm_sqr())
            .sum();
        let p = incoherent + visibility * (coherent - incoherent) + background;
        probs.push(p.max(0.0));
    }
    let total: f64 = probs.iter().sum();
    if total > 0.0 {
        for p in &mut probs {
            *p /= total;
        }
    }
    Ok(probs)
}
