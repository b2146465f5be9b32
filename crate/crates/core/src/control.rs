//! Joint-space PID and model-based computed-torque control of the muscle,
//! run in a dual-rate loop against the simulated rig.
//!
//! The plant integrates at the clock rate. Every inner tick the encoder is
//! sampled, the velocity estimate and hysteresis observer advance and the
//! controller computes a pressure. That pressure reaches the regulator only
//! on command ticks and is held in between. The regulator adds a first-order
//! lag before the muscle dead zone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{step_rk4, SimClock, TrackingColumns, Trajectory};
use crate::model::{bouc_wen_rate, effective_pressure, quasi_static_z_at, PlantParams, PlantState};
use crate::signals::{RefPoint, ReferenceSignal};

/// Encoder pitch: 2000 quadrature counts per inch.
pub const ENCODER_RESOLUTION: f64 = 0.0254 / 2000.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlMode {
    Pid,
    ComputedTorque,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub mode: ControlMode,
    /// Pa/m for PID, 1/s² for computed torque.
    pub kp: f64,
    /// Pa/(m·s) for PID, 1/s³ for computed torque.
    pub ki: f64,
    /// Pa·s/m for PID, 1/s for computed torque.
    pub kd: f64,
    /// Hz
    pub inner_rate: f64,
    /// Hz
    pub command_rate: f64,
    /// Clamp on the error integral, m·s.
    pub integral_limit: f64,
    /// Cutoff of the velocity filter, Hz. `None` uses the raw difference.
    pub velocity_cutoff: Option<f64>,
}

impl ControllerConfig {
    pub fn pid(kp: f64, ki: f64, kd: f64) -> Self {
        ControllerConfig {
            mode: ControlMode::Pid,
            kp,
            ki,
            kd,
            inner_rate: 100.0,
            command_rate: 20.0,
            integral_limit: 1.0,
            velocity_cutoff: Some(20.0),
        }
    }

    pub fn computed_torque(kp: f64, ki: f64, kd: f64) -> Self {
        ControllerConfig {
            mode: ControlMode::ComputedTorque,
            ..Self::pid(kp, ki, kd)
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("kp", self.kp), ("ki", self.ki), ("kd", self.kd)] {
            if !v.is_finite() {
                return Err(Error::invalid(name, "gain must be finite"));
            }
        }
        if !(self.inner_rate > 0.0 && self.command_rate > 0.0) {
            return Err(Error::invalid("inner_rate", "rates must be > 0"));
        }
        if self.inner_rate < self.command_rate {
            return Err(Error::invalid("command_rate", "must not exceed inner_rate"));
        }
        if !(self.integral_limit >= 0.0) {
            return Err(Error::invalid("integral_limit", "must be >= 0"));
        }
        if let Some(fc) = self.velocity_cutoff {
            if !(fc > 0.0 && fc.is_finite()) {
                return Err(Error::invalid("velocity_cutoff", "must be > 0"));
            }
        }
        Ok(())
    }
}

/// Linear encoder. Readings are relative to `zero_offset` (plant extension at
/// the encoder zero) and delayed by `latency` clock steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    /// m per count; `None` disables quantization.
    pub resolution: Option<f64>,
    pub latency: usize,
    /// m
    pub zero_offset: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        SensorModel {
            resolution: Some(ENCODER_RESOLUTION),
            latency: 0,
            zero_offset: 0.0,
        }
    }
}

impl SensorModel {
    pub fn ideal() -> Self {
        SensorModel {
            resolution: None,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(r) = self.resolution {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::invalid("resolution", "must be > 0"));
            }
        }
        if !self.zero_offset.is_finite() {
            return Err(Error::invalid("zero_offset", "must be finite"));
        }
        Ok(())
    }

    /// Encoder reading for plant extension `x`.
    pub fn measure(&self, x: f64) -> f64 {
        let rel = x - self.zero_offset;
        match self.resolution {
            Some(r) => (rel / r).round() * r,
            None => rel,
        }
    }
}

/// Pressure regulator: saturation plus first-order lag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegulatorModel {
    /// s
    pub tau: f64,
    /// Pa
    pub p_min: f64,
    /// Pa
    pub p_max: f64,
}

impl Default for RegulatorModel {
    fn default() -> Self {
        RegulatorModel {
            tau: 0.05,
            p_min: 0.0,
            p_max: 0.9e6,
        }
    }
}

impl RegulatorModel {
    pub fn instantaneous() -> Self {
        RegulatorModel {
            tau: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid("tau", "must be >= 0"));
        }
        if !(self.p_min < self.p_max) || !self.p_min.is_finite() || !self.p_max.is_finite() {
            return Err(Error::invalid("p_max", "need p_min < p_max"));
        }
        Ok(())
    }

    pub fn clamp(&self, p: f64) -> f64 {
        p.clamp(self.p_min, self.p_max)
    }

    /// Regulator output after `dt` of tracking a held command.
    pub fn advance(&self, output: f64, command: f64, dt: f64) -> f64 {
        if self.tau == 0.0 {
            command
        } else {
            output + (1.0 - (-dt / self.tau).exp()) * (command - output)
        }
    }
}

/// PID on the position error with a clamped, conditionally frozen integrator.
#[derive(Debug, Clone, PartialEq)]
pub struct Pid {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub integral_limit: f64,
    pub out_min: f64,
    pub out_max: f64,
    integral: f64,
}

impl Pid {
    pub fn new(cfg: &ControllerConfig, regulator: &RegulatorModel) -> Self {
        Pid {
            kp: cfg.kp,
            ki: cfg.ki,
            kd: cfg.kd,
            integral_limit: cfg.integral_limit,
            out_min: regulator.p_min,
            out_max: regulator.p_max,
            integral: 0.0,
        }
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }

    /// Presets the integrator so that zero error produces `output`.
    pub fn preload(&mut self, output: f64) {
        if self.ki != 0.0 {
            self.integral = (output / self.ki).clamp(-self.integral_limit, self.integral_limit);
        }
    }

    /// Pressure command for error `e` (m) and error rate `e_dot` (m/s).
    pub fn step(&mut self, e: f64, e_dot: f64, dt: f64) -> f64 {
        let tentative = (self.integral + e * dt).clamp(-self.integral_limit, self.integral_limit);
        let raw = self.kp * e + self.ki * tentative + self.kd * e_dot;
        let out = raw.clamp(self.out_min, self.out_max);
        // integrate only if that does not push further into saturation
        let pushing_high = raw > self.out_max && e * self.ki > 0.0;
        let pushing_low = raw < self.out_min && e * self.ki < 0.0;
        if !(pushing_high || pushing_low) {
            self.integral = tentative;
        }
        let held = self.kp * e + self.ki * self.integral + self.kd * e_dot;
        if pushing_high || pushing_low {
            held.clamp(self.out_min, self.out_max)
        } else {
            out
        }
    }
}

/// Outer-loop gains of the computed-torque controller.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CtGains {
    /// 1/s²
    pub kp: f64,
    /// 1/s³, applied to the error integral
    pub ki: f64,
    /// 1/s
    pub kd: f64,
}

/// Model-inverting pressure command.
///
/// `a_cmd = a_d + kd (v_d - v_hat) + kp (x_d - x_m) + ki integral`, then the
/// equation of motion is solved for pressure at the measured state and the
/// dead zone is added back. The result is clamped to the regulator range.
#[allow(clippy::too_many_arguments)]
pub fn computed_torque_step(
    x_m: f64,
    v_hat: f64,
    reference: &RefPoint,
    z_hat: f64,
    params_hat: &PlantParams,
    gains: &CtGains,
    error_integral: f64,
    regulator: &RegulatorModel,
) -> f64 {
    let a_cmd = reference.a
        + gains.kd * (reference.v - v_hat)
        + gains.kp * (reference.x - x_m)
        + gains.ki * error_integral;
    regulator.clamp(inverse_dynamics(x_m, v_hat, a_cmd, z_hat, params_hat))
}

/// Pressure that produces acceleration `a` at state `(x, v, z)`.
pub fn inverse_dynamics(x: f64, v: f64, a: f64, z: f64, params: &PlantParams) -> f64 {
    let mass = params.moving_mass();
    let force = mass * a + mass * params.gravity + params.stiffness * x + params.damping * v + z;
    force / params.area + params.dead_zone
}

/// One RK4 step of the Bouc-Wen law with the velocity estimate held.
pub fn hysteresis_observer_step(v_hat: f64, z_hat: f64, params_hat: &PlantParams, dt: f64) -> f64 {
    let f = |z: f64| bouc_wen_rate(v_hat, z, params_hat);
    let k1 = f(z_hat);
    let k2 = f(z_hat + 0.5 * dt * k1);
    let k3 = f(z_hat + 0.5 * dt * k2);
    let k4 = f(z_hat + dt * k3);
    z_hat + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Backward difference of the measurement through a first-order low-pass.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityEstimator {
    gain: f64,
    last: f64,
    estimate: f64,
}

impl VelocityEstimator {
    pub fn new(cutoff: Option<f64>, dt: f64, x0: f64, v0: f64) -> Self {
        let gain = cutoff.map_or(1.0, |fc| 1.0 - (-std::f64::consts::TAU * fc * dt).exp());
        VelocityEstimator {
            gain,
            last: x0,
            estimate: v0,
        }
    }

    pub fn update(&mut self, x: f64, dt: f64) -> f64 {
        let raw = (x - self.last) / dt;
        self.last = x;
        self.estimate += self.gain * (raw - self.estimate);
        self.estimate
    }

    pub fn estimate(&self) -> f64 {
        self.estimate
    }
}

/// How the rig is prepared before the first sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialCondition {
    /// Quasi-static equilibrium under gravity at zero pressure.
    Rest,
    /// Quasi-static equilibrium at the reference start, with the regulator
    /// already delivering the holding pressure and the controller preloaded.
    Hold,
    /// Plant position and velocity on the reference; zero hysteresis force.
    OnTrajectory,
}

/// Everything needed for one closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoop {
    pub plant: PlantParams,
    pub model: PlantParams,
    pub controller: ControllerConfig,
    /// In encoder coordinates.
    pub reference: ReferenceSignal,
    pub sensor: SensorModel,
    pub regulator: RegulatorModel,
    pub clock: SimClock,
    pub initial: InitialCondition,
}

fn ticks(clock_rate: f64, rate: f64, name: &str) -> Result<usize> {
    let ratio = clock_rate / rate;
    let n = ratio.round();
    if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio {
        return Err(Error::invalid(
            name,
            format!("{rate} Hz does not divide the {clock_rate} Hz simulation rate"),
        ));
    }
    Ok(n as usize)
}

/// Plant extension where gravity and elasticity balance at zero pressure,
/// reached by loading from the origin.
pub fn rest_position(params: &PlantParams) -> Result<f64> {
    let target = -params.moving_mass() * params.gravity;
    let balance = |x: f64| -> Result<f64> {
        let z = if x >= 0.0 {
            quasi_static_z_at(x, params)?
        } else {
            -quasi_static_z_at(-x, params)?
        };
        Ok(params.stiffness * x + z - target)
    };
    let (mut lo, mut hi) = (-1.0, 1.0);
    if balance(lo)? > 0.0 || balance(hi)? < 0.0 {
        return Err(Error::invalid("plant", "no rest position within 1 m"));
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if balance(mid)? > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Quasi-static hysteresis force at `x`, loading from the origin.
fn loading_z(x: f64, params: &PlantParams) -> Result<f64> {
    if x >= 0.0 {
        quasi_static_z_at(x, params)
    } else {
        Ok(-quasi_static_z_at(-x, params)?)
    }
}

impl ClosedLoop {
    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.model.validate()?;
        self.controller.validate()?;
        self.reference.validate()?;
        self.sensor.validate()?;
        self.regulator.validate()?;
        self.clock.validate()?;
        self.rate_ticks()?;
        Ok(())
    }

    /// Clock steps per inner tick and per command tick.
    pub fn rate_ticks(&self) -> Result<(usize, usize)> {
        let clock_rate = 1.0 / self.clock.dt;
        let inner = ticks(clock_rate, self.controller.inner_rate, "inner_rate")?;
        let command = ticks(clock_rate, self.controller.command_rate, "command_rate")?;
        if command % inner != 0 {
            return Err(Error::invalid("command_rate", "command ticks must land on inner ticks"));
        }
        Ok((inner, command))
    }

    /// The reference expressed in plant extension.
    pub fn plant_reference(&self) -> ReferenceSignal {
        ReferenceSignal {
            bias: self.reference.bias + self.sensor.zero_offset,
            ..self.reference
        }
    }

    pub fn run(&self) -> Result<Trajectory> {
        self.validate()?;
        let (inner_ticks, command_ticks) = self.rate_ticks()?;
        let dt = self.clock.dt;
        let dt_inner = inner_ticks as f64 * dt;
        let n = self.clock.n_steps();
        let offset = self.sensor.zero_offset;
        let r0 = self.reference.at(0.0);

        let (mut state, hold_pressure, z_hat0) = match self.initial {
            InitialCondition::Rest => {
                let x = rest_position(&self.plant)?;
                let z = loading_z(x, &self.plant)?;
                (PlantState::new(x, 0.0, z), 0.0, loading_z(x, &self.model)?)
            }
            InitialCondition::Hold => {
                let x = r0.x + offset;
                let z = loading_z(x, &self.plant)?;
                let p = self.regulator.clamp(inverse_dynamics(x, 0.0, 0.0, z, &self.plant));
                (PlantState::new(x, 0.0, z), p, loading_z(x, &self.model)?)
            }
            InitialCondition::OnTrajectory => (PlantState::new(r0.x + offset, r0.v, 0.0), 0.0, 0.0),
        };

        let mut pid = Pid::new(&self.controller, &self.regulator);
        pid.preload(hold_pressure);
        let mut z_hat = z_hat0;
        let mut ct_integral = 0.0;
        let ct_gains = CtGains {
            kp: self.controller.kp,
            ki: self.controller.ki,
            kd: self.controller.kd,
        };
        let mut held = hold_pressure;
        let mut regulator_out = hold_pressure;
        let mut output = hold_pressure;
        let mut history = std::collections::VecDeque::with_capacity(self.sensor.latency + 1);
        let x_m0 = self.sensor.measure(state.x);
        let mut velocity = VelocityEstimator::new(self.controller.velocity_cutoff, dt_inner, x_m0, state.v);

        let mut traj = Trajectory::with_capacity(n + 1);
        let mut cols = TrackingColumns::default();
        for k in 0..=n {
            let t = self.clock.time(k);
            history.push_back(state.x);
            if history.len() > self.sensor.latency + 1 {
                history.pop_front();
            }
            if k % inner_ticks == 0 {
                let x_m = self.sensor.measure(history[0]);
                let v_hat = if k == 0 {
                    velocity.estimate()
                } else {
                    let v = velocity.update(x_m, dt_inner);
                    z_hat = hysteresis_observer_step(v, z_hat, &self.model, dt_inner);
                    v
                };
                let r = self.reference.at(t);
                output = match self.controller.mode {
                    ControlMode::Pid => pid.step(r.x - x_m, r.v - v_hat, dt_inner),
                    ControlMode::ComputedTorque => {
                        let e = r.x - x_m;
                        let limit = self.controller.integral_limit;
                        let tentative = (ct_integral + e * dt_inner).clamp(-limit, limit);
                        let p = computed_torque_step(
                            x_m + offset,
                            v_hat,
                            &RefPoint { x: r.x + offset, ..r },
                            z_hat,
                            &self.model,
                            &ct_gains,
                            tentative,
                            &self.regulator,
                        );
                        // freeze the integral while saturated in the error's direction
                        let saturated = (p >= self.regulator.p_max && e > 0.0)
                            || (p <= self.regulator.p_min && e < 0.0);
                        if !saturated {
                            ct_integral = tentative;
                        }
                        p
                    }
                };
            }
            if k % command_ticks == 0 {
                held = output;
            }
            regulator_out = self.regulator.advance(regulator_out, held, dt);
            let p_eff = effective_pressure(regulator_out, &self.plant);
            traj.push(t, held, p_eff, &state);
            let r = self.reference.at(t);
            cols.x_d.push(r.x + offset);
            cols.v_d.push(r.v);
            cols.e.push(r.x + offset - state.x);
            if k < n {
                state = step_rk4(&state, p_eff, &self.plant, dt)
                    .map_err(|_| Error::Diverged { t: self.clock.time(k + 1) })?;
            }
        }
        traj.tracking = Some(cols);
        Ok(traj)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pid_zero_error() {
        let cfg = ControllerConfig::pid(1e7, 1e6, 1e5);
        let mut pid = Pid::new(&cfg, &RegulatorModel::default());
        for _ in 0..100 {
            assert_eq!(pid.step(0.0, 0.0, 0.01), 0.0);
        }
    }

    #[test]
    fn pid_pure_proportional() {
        let cfg = ControllerConfig::pid(1e7, 0.0, 0.0);
        let mut pid = Pid::new(&cfg, &RegulatorModel::default());
        assert!((pid.step(1e-3, 0.0, 0.01) - 1e4).abs() < 1e-9);
    }

    #[test]
    fn pid_integral_respects_limit() {
        let mut cfg = ControllerConfig::pid(1e8, 1e7, 0.0);
        cfg.integral_limit = 0.05;
        let mut pid = Pid::new(&cfg, &RegulatorModel::default());
        for _ in 0..10_000 {
            let out = pid.step(0.02, 0.0, 0.01);
            assert!(pid.integral().abs() <= cfg.integral_limit);
            assert!((0.0..=0.9e6).contains(&out));
        }
        // saturated from the first step on: the integrator stays frozen
        assert_eq!(pid.integral(), 0.0);
    }

    #[test]
    fn pid_unwinds_immediately_after_saturation() {
        let mut cfg = ControllerConfig::pid(0.0, 1e6, 0.0);
        cfg.integral_limit = 10.0;
        let mut pid = Pid::new(&cfg, &RegulatorModel::default());
        for _ in 0..1000 {
            pid.step(0.5, 0.0, 0.01);
        }
        // integral stops where the output first saturates
        assert!(pid.integral() <= 0.9 + 0.005 + 1e-12, "{}", pid.integral());
        let out = pid.step(-0.5, 0.0, 0.01);
        assert!(out < 0.9e6);
    }

    #[test]
    fn ct_cancels_dead_zone_at_rest() {
        let mut p = PlantParams::identified();
        p.gravity = 0.0;
        let p_cmd = computed_torque_step(
            0.0,
            0.0,
            &RefPoint::default(),
            0.0,
            &p,
            &CtGains { kp: 100.0, ki: 0.0, kd: 20.0 },
            0.0,
            &RegulatorModel::default(),
        );
        assert!((p_cmd - p.dead_zone).abs() < 1e-9);
    }

    #[test]
    fn observer_holds_without_motion() {
        let p = PlantParams::identified();
        assert_eq!(hysteresis_observer_step(0.0, 3.5, &p, 0.01), 3.5);
    }

    #[test]
    fn sensor_quantizes() {
        let s = SensorModel::default();
        for k in 0..1000 {
            let x = -0.03 + k as f64 * 7.3e-5;
            let m = s.measure(x);
            let counts = m / ENCODER_RESOLUTION;
            assert!((counts - counts.round()).abs() < 1e-6);
            assert!((m - x).abs() <= 0.5 * ENCODER_RESOLUTION + 1e-15);
        }
        assert!((ENCODER_RESOLUTION - 1.27e-5).abs() < 1e-18);
    }

    #[test]
    fn regulator_lag() {
        let r = RegulatorModel::default();
        let mut out = 0.0;
        for _ in 0..50 {
            out = r.advance(out, 1.0, 1e-3);
        }
        assert!((out - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
        assert_eq!(RegulatorModel::instantaneous().advance(0.0, 5.0, 1e-3), 5.0);
    }

    #[test]
    fn rest_position_balances_gravity() {
        let p = PlantParams::identified().with_added_load(0.5);
        let x = rest_position(&p).unwrap();
        let z = quasi_static_z_at(x, &p).unwrap();
        assert!((p.stiffness * x + z + p.moving_mass() * p.gravity).abs() < 1e-9);
        assert!(x > 0.0);
    }

    #[test]
    fn rate_divisibility() {
        let mut cl = ClosedLoop {
            plant: PlantParams::identified(),
            model: PlantParams::identified(),
            controller: ControllerConfig::pid(0.0, 0.0, 0.0),
            reference: ReferenceSignal::tracking(0.5),
            sensor: SensorModel::default(),
            regulator: RegulatorModel::default(),
            clock: SimClock::new(1e-3, 1.0).unwrap(),
            initial: InitialCondition::Rest,
        };
        assert!(cl.validate().is_ok());
        cl.controller.inner_rate = 300.0;
        assert!(cl.run().is_err());
        cl.controller.inner_rate = 100.0;
        cl.controller.command_rate = 40.0;
        assert!(cl.run().is_err());
    }
}

/// Gain grid for [`tune`]: log-spaced candidates for each gain.
#[derive(Debug, Clone, PartialEq)]
pub struct GainGrid {
    pub kp: Vec<f64>,
    pub ki: Vec<f64>,
    pub kd: Vec<f64>,
    /// Ratios of the successive refinement passes around the incumbent.
    pub refine_ratios: Vec<f64>,
}

fn log_span(start: f64, ratio: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| start * ratio.powi(i as i32)).collect()
}

impl GainGrid {
    /// Default search space for a controller mode.
    pub fn for_mode(mode: ControlMode) -> Self {
        let with_zero = |mut v: Vec<f64>| {
            v.insert(0, 0.0);
            v
        };
        match mode {
            ControlMode::Pid => GainGrid {
                kp: log_span(4e6, 1.6, 10),
                ki: with_zero(log_span(2e7, 2.0, 11)),
                kd: log_span(1e5, 2.0, 9),
                refine_ratios: vec![2.0, 1.41, 1.19, 1.09],
            },
            ControlMode::ComputedTorque => GainGrid {
                kp: log_span(1280.0, 2.0, 10),
                ki: with_zero(log_span(4e3, 4.0, 11)),
                kd: log_span(64.0, 2.0, 9),
                refine_ratios: vec![2.0, 1.41, 1.19, 1.09],
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TuneResult {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Post-transient RMS tracking error at the tuned gains, m.
    pub rms_error: f64,
    pub evaluations: usize,
}

/// Grid search for the gains minimizing RMS tracking error of `base`, followed
/// by shrinking local grids around the incumbent. Runs that fail score `+inf`.
pub fn tune(base: &ClosedLoop, grid: &GainGrid) -> Result<TuneResult> {
    use rayon::prelude::*;
    base.validate()?;
    let reference = base.plant_reference();
    let score = |kp: f64, ki: f64, kd: f64| -> f64 {
        let mut cl = base.clone();
        cl.controller.kp = kp;
        cl.controller.ki = ki;
        cl.controller.kd = kd;
        cl.run()
            .and_then(|tr| crate::metrics::compute_metrics(&tr, &reference))
            .map(|m| m.rms_error)
            .unwrap_or(f64::INFINITY)
    };
    let search = |candidates: Vec<(f64, f64, f64)>, incumbent: TuneResult| -> TuneResult {
        let n = candidates.len();
        let scored: Vec<(f64, (f64, f64, f64))> = candidates
            .into_par_iter()
            .map(|(a, b, c)| (score(a, b, c), (a, b, c)))
            .collect();
        let mut best = incumbent;
        for (rms, (kp, ki, kd)) in scored {
            if rms < best.rms_error {
                best = TuneResult { kp, ki, kd, rms_error: rms, evaluations: 0 };
            }
        }
        best.evaluations = incumbent.evaluations + n;
        best
    };

    let mut coarse = Vec::new();
    for &kp in &grid.kp {
        for &ki in &grid.ki {
            for &kd in &grid.kd {
                coarse.push((kp, ki, kd));
            }
        }
    }
    let none = TuneResult { kp: 0.0, ki: 0.0, kd: 0.0, rms_error: f64::INFINITY, evaluations: 0 };
    let mut best = search(coarse, none);
    for &ratio in &grid.refine_ratios {
        let mut local = Vec::new();
        for i in -2..=2 {
            for j in -2..=2 {
                for k in -2..=2 {
                    local.push((
                        best.kp * ratio.powi(i),
                        best.ki * ratio.powi(j),
                        best.kd * ratio.powi(k),
                    ));
                }
            }
        }
        best = search(local, best);
    }
    if best.rms_error.is_finite() {
        Ok(best)
    } else {
        Err(Error::invalid("controller", "no gain combination produced a finite run"))
    }
}
