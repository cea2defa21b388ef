//! Phase-locked loop holding an interferometer at a target phase using
//! single-photon counts as the reference signal.
//!
//! The controller is a discrete-time state machine with two working parts:
//! a scanning part that ramps the phase actuator through 2 pi to find the
//! fringe extrema M and m, and an active locking part that runs a digital
//! PID on the normalized deviation of the counts from the set point
//!
//! ```text
//! RS(phi) = (M + m)/2 + (M - m)/2 * cos(phi)
//! ```
//!
//! Lock loss is declared after a configurable number of consecutive ticks
//! with the normalized error beyond a threshold, after which the controller
//! rescans and reacquires automatically.
//!
//! Direction resolution: the set-point equation is even in the phase, so the
//! counts alone cannot distinguish the two fringe crossings at +/- phi. The
//! scan data is therefore fitted (first Fourier component over the 2 pi
//! ramp) to locate the fringe origin; the actuator is parked on the
//! +phi crossing and the feedback sign follows from the local slope there.
//! The fit is redone on every reacquisition.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::DriftSampler;
use crate::detection::{apply_dead_time, sample_counts, DetectorSpec};

#[derive(Debug, Error, PartialEq)]
pub enum PllError {
    #[error("fringe maximum {max} is below minimum {min}")]
    ExtremaOrder { max: f64, min: f64 },
    #[error("loop configuration invalid: {0}")]
    BadConfig(&'static str),
}

/// Reference-signal value corresponding to phase `phi_tilde`, from the
/// fringe extrema found during the scan.
pub fn reference_set_point(max: f64, min: f64, phi_tilde: f64) -> Result<f64, PllError> {
    if max < min {
        return Err(PllError::ExtremaOrder { max, min });
    }
    Ok((max + min) / 2.0 + (max - min) / 2.0 * phi_tilde.cos())
}

/// Loop configuration. Gains act on the error normalized by the fringe
/// swing, so they are dimensionless with respect to count rate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct PllConfig {
    pub loop_rate_hz: f64,
    /// Samples per 2 pi scan ramp.
    pub scan_steps: u32,
    pub kp: f64,
    /// 1/s; the integrator accumulates error times seconds.
    pub ki: f64,
    /// s; derivative acts on the per-second error slope.
    pub kd: f64,
    /// Target phase within the fringe, radians.
    pub target_phase: f64,
    /// Normalized error magnitude beyond which a tick counts as bad.
    pub lock_loss_threshold: f64,
    /// Consecutive bad ticks before the lock is declared lost.
    pub lock_loss_patience: u32,
    /// Bound on both the per-tick correction and the absolute actuator
    /// phase (the actuator rewinds by 2 pi, which is optically neutral).
    pub actuator_range: f64,
    /// Scan fringe amplitude must exceed this many shot-noise sigmas,
    /// otherwise the scan is declared degenerate and restarted.
    pub degenerate_snr: f64,
    /// Known dead time of the reference detector; the controller undoes
    /// the non-paralyzable compression of its input counts so that the
    /// fringe it sees is an undistorted cosine. Zero disables.
    pub input_dead_time_us: f64,
    /// EWMA coefficient of the loop filter applied to the normalized
    /// error before the PID and the lock-loss test. 1 disables filtering.
    pub error_filter_alpha: f64,
    /// Calibration offset between the counter-propagating control fringe
    /// and the forward quantum fringe. Not reported for the original
    /// setup; zero by default.
    pub quantum_calibration_offset: f64,
}

impl Default for PllConfig {
    fn default() -> Self {
        Self {
            loop_rate_hz: 3500.0,
            scan_steps: 64,
            // Tuned on the default plant: see the step-response test in
            // this module and the acceptance suite.
            kp: 0.25,
            ki: 8.0,
            kd: 0.0,
            target_phase: std::f64::consts::FRAC_PI_2,
            lock_loss_threshold: 0.25,
            lock_loss_patience: 10,
            actuator_range: std::f64::consts::PI,
            degenerate_snr: 6.0,
            input_dead_time_us: 5.0,
            error_filter_alpha: 0.1,
            quantum_calibration_offset: 0.0,
        }
    }
}

impl PllConfig {
    pub fn tick_seconds(&self) -> f64 {
        1.0 / self.loop_rate_hz
    }

    pub fn validate(&self) -> Result<(), PllError> {
        if self.loop_rate_hz <= 0.0 {
            return Err(PllError::BadConfig("loop_rate_hz must be positive"));
        }
        if self.scan_steps < 8 {
            return Err(PllError::BadConfig("scan_steps must be at least 8"));
        }
        if self.lock_loss_threshold <= 0.0 || self.lock_loss_patience == 0 {
            return Err(PllError::BadConfig("lock-loss threshold and patience must be positive"));
        }
        if self.actuator_range <= 0.0 {
            return Err(PllError::BadConfig("actuator_range must be positive"));
        }
        if !(self.error_filter_alpha > 0.0 && self.error_filter_alpha <= 1.0) {
            return Err(PllError::BadConfig("error_filter_alpha must be in (0, 1]"));
        }
        if self.input_dead_time_us < 0.0 {
            return Err(PllError::BadConfig("input_dead_time_us must be non-negative"));
        }
        Ok(())
    }
}

/// Controller mode, reported per tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LockMode {
    Scanning,
    Locked,
    Lost,
}

#[derive(Debug, Clone)]
struct ScanAccumulator {
    base: f64,
    index: u32,
    max: f64,
    min: f64,
    sum: f64,
    sum_observed: f64,
    fourier_cos: f64,
    fourier_sin: f64,
}

impl ScanAccumulator {
    fn new(base: f64) -> Self {
        Self {
            base,
            index: 0,
            max: f64::NEG_INFINITY,
            min: f64::INFINITY,
            sum: 0.0,
            sum_observed: 0.0,
            fourier_cos: 0.0,
            fourier_sin: 0.0,
        }
    }
}

/// Mutable controller state. `fringe_max`/`fringe_min`/`set_point` are the
/// frozen scan results backing the active lock.
#[derive(Debug, Clone)]
pub struct PllState {
    pub mode: LockMode,
    pub fringe_max: f64,
    pub fringe_min: f64,
    pub set_point: f64,
    pub integrator: f64,
    pub previous_error: f64,
    pub actuator_phase: f64,
    pub scan_index: u32,
    /// Loop-filtered normalized error driving the PID and loss detection.
    pub filtered_error: f64,
    /// Sign of d(error)/d(actuator) at the lock point.
    slope_sign: f64,
    bad_ticks: u32,
    scan: ScanAccumulator,
    /// pi offset toggled by state switching, added to the target phase.
    target_offset: f64,
}

/// Result of one controller tick.
#[derive(Debug, Clone, Copy)]
pub struct TickOutcome {
    /// Mode under which this tick's counts were taken.
    pub mode: LockMode,
    /// Normalized error (locked mode only, zero otherwise).
    pub error: f64,
    /// Actuator phase for the next integration window.
    pub actuator_phase: f64,
    /// Set when a scan just finished with no usable fringe.
    pub degenerate_scan: bool,
}

/// The phase-locked loop controller.
#[derive(Debug, Clone)]
pub struct LockController {
    cfg: PllConfig,
    state: PllState,
    pub lock_loss_events: u64,
    pub degenerate_scans: u64,
}

impl LockController {
    pub fn new(cfg: PllConfig) -> Self {
        cfg.validate().expect("valid PLL configuration");
        Self {
            cfg,
            state: PllState {
                mode: LockMode::Scanning,
                fringe_max: 0.0,
                fringe_min: 0.0,
                set_point: 0.0,
                integrator: 0.0,
                previous_error: 0.0,
                actuator_phase: 0.0,
                scan_index: 0,
                slope_sign: -1.0,
                bad_ticks: 0,
                scan: ScanAccumulator::new(0.0),
                target_offset: 0.0,
            },
            lock_loss_events: 0,
            degenerate_scans: 0,
        }
    }

    pub fn config(&self) -> &PllConfig {
        &self.cfg
    }

    pub fn state(&self) -> &PllState {
        &self.state
    }

    pub fn mode(&self) -> LockMode {
        self.state.mode
    }

    pub fn actuator_phase(&self) -> f64 {
        self.state.actuator_phase
    }

    /// Target phase including any pi switching offset.
    pub fn effective_target(&self) -> f64 {
        self.cfg.target_phase + self.state.target_offset
    }

    /// Toggles the prepared state between the 0 and pi phase: the target
    /// moves by pi, the set point is re-derived from the same extrema and
    /// the actuator is fed forward without rescanning.
    pub fn switch_state_phase(&mut self) {
        self.state.target_offset = if self.state.target_offset == 0.0 {
            std::f64::consts::PI
        } else {
            0.0
        };
        if self.state.mode == LockMode::Locked {
            let target = self.effective_target();
            self.state.set_point =
                reference_set_point(self.state.fringe_max, self.state.fringe_min, target)
                    .expect("extrema stay ordered");
            self.set_actuator(self.state.actuator_phase + std::f64::consts::PI);
            self.state.slope_sign = slope_sign_at(target);
            self.state.integrator = 0.0;
            self.state.previous_error = 0.0;
            self.state.bad_ticks = 0;
        }
    }

    fn set_actuator(&mut self, phase: f64) {
        let wrapped = wrap_angle(phase);
        debug_assert!(wrapped.abs() <= self.cfg.actuator_range + 1e-9);
        self.state.actuator_phase = wrapped;
    }

    /// Feeds the counts integrated over the last window and advances the
    /// state machine. The returned mode classifies that window.
    pub fn tick(&mut self, measured_counts: f64) -> TickOutcome {
        match self.state.mode {
            LockMode::Scanning => self.scan_step(measured_counts),
            LockMode::Locked | LockMode::Lost => {
                self.pid_step(measured_counts, self.cfg.tick_seconds())
            }
        }
    }

    /// One tick of the scanning part: record the sample, advance the ramp,
    /// and on completion freeze the extrema and compute the set point.
    fn scan_step(&mut self, counts: f64) -> TickOutcome {
        let step = self.scan_step_size();
        let scan = &mut self.state.scan;
        let u = wrap_angle(scan.base + scan.index as f64 * step);
        scan.max = scan.max.max(counts);
        scan.min = scan.min.min(counts);
        scan.sum += counts;
        scan.fourier_cos += counts * u.cos();
        scan.fourier_sin += counts * u.sin();
        scan.index += 1;
        self.state.scan_index = scan.index;

        if scan.index < self.cfg.scan_steps {
            let next = wrap_angle(scan.base + scan.index as f64 * step);
            self.set_actuator(next);
            return TickOutcome {
                mode: LockMode::Scanning,
                error: 0.0,
                actuator_phase: self.state.actuator_phase,
                degenerate_scan: false,
            };
        }

        // Ramp complete: fit the fringe.
        let n = self.cfg.scan_steps as f64;
        let mean = self.state.scan.sum / n;
        let amp = 2.0 / n
            * (self.state.scan.fourier_cos.powi(2) + self.state.scan.fourier_sin.powi(2)).sqrt();
        let noise_floor = (2.0 * mean.max(1.0) / n).sqrt();
        if amp < self.cfg.degenerate_snr * noise_floor {
            self.degenerate_scans += 1;
            let base = self.state.actuator_phase;
            self.state.scan = ScanAccumulator::new(base);
            self.state.scan_index = 0;
            return TickOutcome {
                mode: LockMode::Scanning,
                error: 0.0,
                actuator_phase: self.state.actuator_phase,
                degenerate_scan: true,
            };
        }

        let offset = f64::atan2(-self.state.scan.fourier_sin, self.state.scan.fourier_cos);
        let target = self.effective_target();
        self.state.fringe_max = self.state.scan.max;
        self.state.fringe_min = self.state.scan.min;
        self.state.set_point =
            reference_set_point(self.state.fringe_max, self.state.fringe_min, target)
                .expect("running max >= running min");
        self.state.mode = LockMode::Locked;
        self.state.integrator = 0.0;
        self.state.previous_error = 0.0;
        self.state.bad_ticks = 0;
        self.state.slope_sign = slope_sign_at(target);
        // Park the actuator on the +target crossing of the fitted fringe.
        self.set_actuator(target - offset);
        TickOutcome {
            mode: LockMode::Scanning,
            error: 0.0,
            actuator_phase: self.state.actuator_phase,
            degenerate_scan: false,
        }
    }

    fn scan_step_size(&self) -> f64 {
        2.0 * std::f64::consts::PI / self.cfg.scan_steps as f64
    }

    /// One tick of the active locking part: normalized error, PID terms
    /// with clamped output and conditional anti-windup, and lock-loss
    /// bookkeeping.
    fn pid_step(&mut self, counts: f64, dt: f64) -> TickOutcome {
        let swing = (self.state.fringe_max - self.state.fringe_min).max(1.0);
        let error = (counts - self.state.set_point) / swing;

        let tentative_integrator = self.state.integrator + error * dt;
        let derivative = (error - self.state.previous_error) / dt;
        let raw = self.state.slope_sign
            * -(self.cfg.kp * error
                + self.cfg.ki * tentative_integrator
                + self.cfg.kd * derivative);
        let clamp = self.cfg.actuator_range;
        let correction = raw.clamp(-clamp, clamp);
        // Anti-windup: freeze the integrator while the output is clamped
        // and the error keeps pushing into the clamp.
        if (raw - correction).abs() < f64::EPSILON || raw.signum() != error.signum() {
            self.state.integrator = tentative_integrator;
        }
        self.state.previous_error = error;
        self.set_actuator(self.state.actuator_phase + correction);

        if self.detect_lock_loss(error) {
            self.lock_loss_events += 1;
            let base = self.state.actuator_phase;
            self.state.mode = LockMode::Scanning;
            self.state.scan = ScanAccumulator::new(base);
            self.state.scan_index = 0;
            self.state.integrator = 0.0;
            self.state.bad_ticks = 0;
            return TickOutcome {
                mode: LockMode::Lost,
                error,
                actuator_phase: self.state.actuator_phase,
                degenerate_scan: false,
            };
        }

        TickOutcome {
            mode: LockMode::Locked,
            error,
            actuator_phase: self.state.actuator_phase,
            degenerate_scan: false,
        }
    }

    /// True when the error has exceeded the threshold for the configured
    /// number of consecutive ticks.
    fn detect_lock_loss(&mut self, error: f64) -> bool {
        if error.abs() > self.cfg.lock_loss_threshold {
            self.state.bad_ticks += 1;
        } else {
            self.state.bad_ticks = 0;
        }
        self.state.bad_ticks >= self.cfg.lock_loss_patience
    }
}

fn slope_sign_at(target: f64) -> f64 {
    // d(counts)/d(phase) = -(M-m)/2 sin(phase); error shares its sign.
    if target.sin() >= 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Wraps an angle into (-pi, pi].
pub fn wrap_angle(phi: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut x = phi % two_pi;
    if x > std::f64::consts::PI {
        x -= two_pi;
    } else if x <= -std::f64::consts::PI {
        x += two_pi;
    }
    x
}

/// Drifting two-output interferometer watched by the control detector.
/// The reference signal is one output; the detected rate follows
/// background + peak (1 + V cos(phase)) / 2 with the phase being the sum
/// of drift, actuator and any injected disturbance.
#[derive(Debug, Clone)]
pub struct FringePlant {
    pub drift: DriftSampler,
    pub visibility: f64,
    /// True (pre-dead-time) rate swing of the fringe, Hz.
    pub peak_rate_hz: f64,
    pub background_rate_hz: f64,
    pub detector: DetectorSpec,
    injected_shift: f64,
    last_total_phase: f64,
    rng: ChaCha12Rng,
}

impl FringePlant {
    pub fn new(
        drift: DriftSampler,
        visibility: f64,
        peak_rate_hz: f64,
        detector: DetectorSpec,
        noise_seed: u64,
    ) -> Self {
        let initial = drift.phase();
        Self {
            drift,
            visibility,
            peak_rate_hz,
            background_rate_hz: 0.0,
            detector,
            injected_shift: 0.0,
            last_total_phase: initial,
            rng: ChaCha12Rng::seed_from_u64(noise_seed),
        }
    }

    /// Applies a sudden phase disturbance (e.g. a pi step) to the plant.
    pub fn inject_phase_step(&mut self, delta: f64) {
        self.injected_shift += delta;
    }

    /// Interferometer phase of the last measured window.
    pub fn last_total_phase(&self) -> f64 {
        self.last_total_phase
    }

    /// Advances the drift by `dt` and returns the counts seen by the
    /// control detector with the actuator at `actuator_phase`.
    pub fn measure(&mut self, actuator_phase: f64, dt: f64) -> u64 {
        let drift_phase = self.drift.step(dt).expect("positive dt");
        let phase = drift_phase + self.injected_shift + actuator_phase;
        self.last_total_phase = phase;
        let fringe = self.peak_rate_hz * (1.0 + self.visibility * phase.cos()) / 2.0;
        let rate_true = self.background_rate_hz + self.detector.dark_rate_hz + fringe;
        let rate_obs = apply_dead_time(rate_true, self.detector.dead_time_s());
        sample_counts(rate_obs, dt, &mut self.rng)
    }
}

/// Default control-arm plant: shared-fiber drift, healthy fringe rate on
/// the control detector.
pub fn default_control_plant(drift: DriftSampler, noise_seed: u64) -> FringePlant {
    FringePlant::new(
        drift,
        0.95,
        250e3,
        DetectorSpec::control_default(),
        noise_seed,
    )
}

/// Closed-loop trace sampled once per controller tick.
#[derive(Debug, Clone)]
pub struct LockTrace {
    pub dt: f64,
    pub mode: Vec<LockMode>,
    /// Normalized count error seen by the controller.
    pub measured_error: Vec<f64>,
    /// True plant phase minus the effective target, wrapped.
    pub phase_error: Vec<f64>,
    pub counts: Vec<u64>,
    pub actuator: Vec<f64>,
}

impl LockTrace {
    pub fn len(&self) -> usize {
        self.mode.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mode.is_empty()
    }

    pub fn locked_fraction(&self) -> f64 {
        if self.mode.is_empty() {
            return 0.0;
        }
        let locked = self.mode.iter().filter(|&&m| m == LockMode::Locked).count();
        locked as f64 / self.mode.len() as f64
    }

    /// RMS of the true phase error over locked ticks.
    pub fn rms_phase_error(&self) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for (mode, err) in self.mode.iter().zip(&self.phase_error) {
            if *mode == LockMode::Locked {
                sum += err * err;
                n += 1;
            }
        }
        if n == 0 {
            f64::NAN
        } else {
            (sum / n as f64).sqrt()
        }
    }
}

/// Runs the closed loop for `duration_s`, injecting the scheduled phase
/// steps (time, delta) into the plant as they come due.
pub fn run_lock(
    cfg: &PllConfig,
    plant: &mut FringePlant,
    duration_s: f64,
    injections: &[(f64, f64)],
) -> LockTrace {
    let dt = cfg.tick_seconds();
    let ticks = (duration_s * cfg.loop_rate_hz).round() as usize;
    let mut controller = LockController::new(*cfg);
    let mut trace = LockTrace {
        dt,
        mode: Vec::with_capacity(ticks),
        measured_error: Vec::with_capacity(ticks),
        phase_error: Vec::with_capacity(ticks),
        counts: Vec::with_capacity(ticks),
        actuator: Vec::with_capacity(ticks),
    };
    let mut pending = injections.to_vec();
    pending.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut next_injection = 0usize;

    for k in 0..ticks {
        let t = k as f64 * dt;
        while next_injection < pending.len() && pending[next_injection].0 <= t {
            plant.inject_phase_step(pending[next_injection].1);
            next_injection += 1;
        }
        let actuator_now = controller.actuator_phase();
        let counts = plant.measure(actuator_now, dt);
        let outcome = controller.tick(counts as f64);
        trace.mode.push(outcome.mode);
        trace.measured_error.push(outcome.error);
        trace
            .phase_error
            .push(wrap_angle(plant.last_total_phase() - controller.effective_target()));
        trace.counts.push(counts);
        trace.actuator.push(outcome.actuator_phase);
    }
    trace
}
