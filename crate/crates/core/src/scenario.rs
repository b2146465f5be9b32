//! Declarative experiment descriptions.
//!
//! A scenario is a TOML document whose keys carry their units, e.g.
//! `K_e_N_per_m` or `tau_s`. Unknown keys are rejected. Errors point at the
//! offending line when it can be located.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::control::{
    ControlMode, ControllerConfig, InitialCondition, RegulatorModel, SensorModel,
};
use crate::error::{Error, Result};
use crate::identification::{calibrate_area, Bounds, FreeParams};
use crate::integrator::SimClock;
use crate::model::{PlantParams, PlantState};
use crate::optim::SimplexOptions;
use crate::signals::{PressureSignal, ReferenceSignal};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    #[serde(default)]
    rng_seed: u64,
    output_dir: Option<String>,
    initial_condition: Option<InitialCondition>,
    plant: RawPlant,
    model: Option<RawModel>,
    clock: RawClock,
    signal: Option<RawSignal>,
    recording: Option<RawRecording>,
    identification: Option<RawIdentification>,
    reference: Option<RawReference>,
    controller: Option<RawController>,
    sensor: Option<RawSensor>,
    regulator: Option<RawRegulator>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct RawPlant {
    load_mass_kg: f64,
    muscle_mass_kg: f64,
    K_e_N_per_m: f64,
    d_N_s_per_m: f64,
    g_signed_m_per_s2: f64,
    A_m2: Option<f64>,
    p_dz_Pa: f64,
    alpha_N_per_m: f64,
    beta_per_m: f64,
    gamma_per_m: f64,
    p_max_Pa: f64,
    calibration: Option<RawCalibration>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct RawCalibration {
    x_ss_m: f64,
    p_Pa: f64,
}

/// Controller-side model; every key defaults to the plant value.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct RawModel {
    load_mass_kg: Option<f64>,
    muscle_mass_kg: Option<f64>,
    K_e_N_per_m: Option<f64>,
    d_N_s_per_m: Option<f64>,
    g_signed_m_per_s2: Option<f64>,
    A_m2: Option<f64>,
    p_dz_Pa: Option<f64>,
    alpha_N_per_m: Option<f64>,
    beta_per_m: Option<f64>,
    gamma_per_m: Option<f64>,
    p_max_Pa: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClock {
    dt_s: f64,
    t_end_s: f64,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
#[allow(non_snake_case)]
enum RawSignal {
    Constant {
        p_Pa: f64,
    },
    Step {
        before_Pa: f64,
        after_Pa: f64,
        t_step_s: f64,
    },
    Chirp {
        f0_Hz: f64,
        f1_Hz: f64,
        duration_s: f64,
        offset_Pa: f64,
        amplitude_Pa: f64,
    },
    Sine {
        offset_Pa: f64,
        amplitude_Pa: f64,
        f_Hz: f64,
        #[serde(default)]
        phase_rad: f64,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecording {
    runs: usize,
    noise_std_m: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct RawIdentification {
    n_starts: usize,
    sim_dt_s: f64,
    recorded_csv: Option<String>,
    bounds_halfwidth_fraction: Option<f64>,
    max_iterations: Option<usize>,
    cost_spread_tol_m: Option<f64>,
    initial_step: Option<f64>,
    initial_x_m: Option<f64>,
    initial_v_m_per_s: Option<f64>,
    initial_z_N: Option<f64>,
    bounds: Option<RawBounds>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct RawBounds {
    alpha_N_per_m: [f64; 2],
    beta_per_m: [f64; 2],
    gamma_per_m: [f64; 2],
    d_N_s_per_m: [f64; 2],
    K_e_N_per_m: [f64; 2],
    p_dz_Pa: [f64; 2],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct RawReference {
    bias_m: f64,
    amplitude_m: f64,
    f_Hz: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct RawController {
    mode: ControlMode,
    Kp_Pa_per_m: Option<f64>,
    Ki_Pa_per_m_s: Option<f64>,
    Kd_Pa_s_per_m: Option<f64>,
    Kp_per_s2: Option<f64>,
    Ki_per_s3: Option<f64>,
    Kd_per_s: Option<f64>,
    inner_rate_Hz: f64,
    command_rate_Hz: f64,
    integral_limit_m_s: f64,
    velocity_cutoff_Hz: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSensor {
    resolution_m: Option<f64>,
    #[serde(default)]
    latency_steps: usize,
    #[serde(default)]
    zero_offset_m: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
#[allow(non_snake_case)]
struct RawRegulator {
    tau_s: f64,
    p_min_Pa: f64,
    p_max_Pa: f64,
}

/// Repeated noisy measurement of a simulated response.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordingPlan {
    pub runs: usize,
    /// m
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationSettings {
    /// Recorded `t,p_cmd,x` data; synthesized from the plant when absent.
    pub recorded_csv: Option<PathBuf>,
    pub n_starts: usize,
    pub sim_dt: f64,
    pub bounds: Bounds,
    pub simplex: SimplexOptions,
    pub initial_state: PlantState,
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub rng_seed: u64,
    pub output_dir: Option<PathBuf>,
    pub plant: PlantParams,
    /// Parameters assumed by model-based control.
    pub model: PlantParams,
    pub clock: SimClock,
    pub signal: Option<PressureSignal>,
    pub recording: Option<RecordingPlan>,
    pub identification: Option<IdentificationSettings>,
    /// Encoder coordinates.
    pub reference: Option<ReferenceSignal>,
    pub controller: Option<ControllerConfig>,
    pub sensor: SensorModel,
    pub regulator: RegulatorModel,
    pub initial: InitialCondition,
}

/// 1-based line of `key` inside `[table]` (`""` for top level), falling back
/// to the table header.
fn key_line(src: &str, table: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut header = None;
    for (i, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if line.starts_with('[') {
            current = line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if current == table {
                header = Some(i + 1);
            }
            continue;
        }
        if current == table {
            if let Some(rest) = line.strip_prefix(key) {
                if rest.trim_start().starts_with('=') {
                    return Some(i + 1);
                }
            }
        }
    }
    header
}

struct Locator<'a> {
    src: &'a str,
}

impl Locator<'_> {
    fn err(&self, table: &str, key: &str, reason: impl Into<String>) -> Error {
        let field = if table.is_empty() {
            key.to_string()
        } else {
            format!("{table}.{key}")
        };
        let inner = Error::invalid(field, reason);
        match key_line(self.src, table, key) {
            Some(line) => Error::AtLine {
                line,
                error: Box::new(inner),
            },
            None => inner,
        }
    }

    /// Re-labels a core validation error with the scenario key it came from.
    fn relabel(&self, table: &str, e: Error, map: &dyn Fn(&str) -> &'static str) -> Error {
        match e {
            Error::Invalid { field, reason } => self.err(table, map(&field), reason),
            other => other,
        }
    }
}

fn plant_key(field: &str) -> &'static str {
    match field {
        "load_mass" => "load_mass_kg",
        "muscle_mass" => "muscle_mass_kg",
        "stiffness" => "K_e_N_per_m",
        "damping" => "d_N_s_per_m",
        "gravity" => "g_signed_m_per_s2",
        "area" => "A_m2",
        "dead_zone" => "p_dz_Pa",
        "alpha" => "alpha_N_per_m",
        "beta" => "beta_per_m",
        "gamma" => "gamma_per_m",
        "p_max" => "p_max_Pa",
        _ => "plant",
    }
}

fn bounds_key(field: &str) -> &'static str {
    match field {
        "alpha" => "alpha_N_per_m",
        "beta" => "beta_per_m",
        "gamma" => "gamma_per_m",
        "d" => "d_N_s_per_m",
        "K_e" => "K_e_N_per_m",
        "p_dz" => "p_dz_Pa",
        _ => "bounds",
    }
}

fn signal_key(field: &str) -> &'static str {
    match field {
        "value" => "p_Pa",
        "before" => "before_Pa",
        "after" => "after_Pa",
        "t_step" => "t_step_s",
        "f0" => "f0_Hz",
        "f1" => "f1_Hz",
        "duration" => "duration_s",
        "offset" => "offset_Pa",
        "amplitude" => "amplitude_Pa",
        "freq" => "f_Hz",
        "phase" => "phase_rad",
        _ => "kind",
    }
}

fn reference_key(field: &str) -> &'static str {
    match field {
        "bias" => "bias_m",
        "amplitude" => "amplitude_m",
        _ => "f_Hz",
    }
}

fn controller_key(mode: ControlMode) -> impl Fn(&str) -> &'static str {
    move |field| match (field, mode) {
        ("kp", ControlMode::Pid) => "Kp_Pa_per_m",
        ("ki", ControlMode::Pid) => "Ki_Pa_per_m_s",
        ("kd", ControlMode::Pid) => "Kd_Pa_s_per_m",
        ("kp", _) => "Kp_per_s2",
        ("ki", _) => "Ki_per_s3",
        ("kd", _) => "Kd_per_s",
        ("inner_rate", _) => "inner_rate_Hz",
        ("command_rate", _) => "command_rate_Hz",
        ("integral_limit", _) => "integral_limit_m_s",
        ("velocity_cutoff", _) => "velocity_cutoff_Hz",
        _ => "mode",
    }
}

fn sensor_key(field: &str) -> &'static str {
    match field {
        "resolution" => "resolution_m",
        "zero_offset" => "zero_offset_m",
        _ => "latency_steps",
    }
}

fn regulator_key(field: &str) -> &'static str {
    match field {
        "tau" => "tau_s",
        "p_min" => "p_min_Pa",
        _ => "p_max_Pa",
    }
}

fn clock_key(field: &str) -> &'static str {
    match field {
        "dt" => "dt_s",
        _ => "t_end_s",
    }
}

fn valid_stem(name: &str) -> bool {
    !name.is_empty()
        && name != "."
        && name != ".."
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

impl Scenario {
    /// Reads and validates a scenario file. Relative paths inside it resolve
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&src, base)
    }

    pub fn parse(src: &str, base_dir: &Path) -> Result<Self> {
        let raw: RawScenario = toml::from_str(src).map_err(|e| {
            let line = e
                .span()
                .map(|s| src[..s.start.min(src.len())].matches('\n').count() + 1);
            let msg = e.message().to_string();
            match line {
                Some(line) => Error::AtLine {
                    line,
                    error: Box::new(Error::Parse(msg)),
                },
                None => Error::Parse(msg),
            }
        })?;
        let loc = Locator { src };

        if !valid_stem(&raw.name) {
            return Err(loc.err("", "name", "must be a filename stem of [A-Za-z0-9_.-]"));
        }

        let rp = &raw.plant;
        let mut plant = PlantParams {
            load_mass: rp.load_mass_kg,
            muscle_mass: rp.muscle_mass_kg,
            stiffness: rp.K_e_N_per_m,
            damping: rp.d_N_s_per_m,
            gravity: rp.g_signed_m_per_s2,
            area: rp.A_m2.unwrap_or(1.0),
            dead_zone: rp.p_dz_Pa,
            alpha: rp.alpha_N_per_m,
            beta: rp.beta_per_m,
            gamma: rp.gamma_per_m,
            p_max: rp.p_max_Pa,
        };
        plant
            .validate()
            .map_err(|e| loc.relabel("plant", e, &plant_key))?;
        match (rp.A_m2, &rp.calibration) {
            (Some(_), Some(_)) => {
                return Err(loc.err("plant", "A_m2", "give either A_m2 or [plant.calibration], not both"))
            }
            (None, None) => {
                return Err(loc.err("plant", "A_m2", "missing; give A_m2 or [plant.calibration]"))
            }
            (None, Some(c)) => {
                plant.area = calibrate_area(c.x_ss_m, c.p_Pa, &plant)
                    .map_err(|e| loc.err("plant.calibration", "x_ss_m", e.to_string()))?;
            }
            (Some(_), None) => {}
        }

        let m = raw.model.unwrap_or_default();
        let model = PlantParams {
            load_mass: m.load_mass_kg.unwrap_or(plant.load_mass),
            muscle_mass: m.muscle_mass_kg.unwrap_or(plant.muscle_mass),
            stiffness: m.K_e_N_per_m.unwrap_or(plant.stiffness),
            damping: m.d_N_s_per_m.unwrap_or(plant.damping),
            gravity: m.g_signed_m_per_s2.unwrap_or(plant.gravity),
            area: m.A_m2.unwrap_or(plant.area),
            dead_zone: m.p_dz_Pa.unwrap_or(plant.dead_zone),
            alpha: m.alpha_N_per_m.unwrap_or(plant.alpha),
            beta: m.beta_per_m.unwrap_or(plant.beta),
            gamma: m.gamma_per_m.unwrap_or(plant.gamma),
            p_max: m.p_max_Pa.unwrap_or(plant.p_max),
        };
        model
            .validate()
            .map_err(|e| loc.relabel("model", e, &plant_key))?;

        let clock = SimClock {
            dt: raw.clock.dt_s,
            t_end: raw.clock.t_end_s,
        };
        clock
            .validate()
            .map_err(|e| loc.relabel("clock", e, &clock_key))?;

        let signal = raw.signal.map(|s| match s {
            RawSignal::Constant { p_Pa } => PressureSignal::Constant { value: p_Pa },
            RawSignal::Step {
                before_Pa,
                after_Pa,
                t_step_s,
            } => PressureSignal::Step {
                before: before_Pa,
                after: after_Pa,
                t_step: t_step_s,
            },
            RawSignal::Chirp {
                f0_Hz,
                f1_Hz,
                duration_s,
                offset_Pa,
                amplitude_Pa,
            } => PressureSignal::Chirp {
                f0: f0_Hz,
                f1: f1_Hz,
                duration: duration_s,
                offset: offset_Pa,
                amplitude: amplitude_Pa,
            },
            RawSignal::Sine {
                offset_Pa,
                amplitude_Pa,
                f_Hz,
                phase_rad,
            } => PressureSignal::Sine {
                offset: offset_Pa,
                amplitude: amplitude_Pa,
                freq: f_Hz,
                phase: phase_rad,
            },
        });
        if let Some(s) = &signal {
            s.validate()
                .map_err(|e| loc.relabel("signal", e, &signal_key))?;
        }

        let recording = match raw.recording {
            Some(r) => {
                if r.runs == 0 {
                    return Err(loc.err("recording", "runs", "must be >= 1"));
                }
                if !(r.noise_std_m >= 0.0 && r.noise_std_m.is_finite()) {
                    return Err(loc.err("recording", "noise_std_m", "must be >= 0"));
                }
                Some(RecordingPlan {
                    runs: r.runs,
                    noise_std: r.noise_std_m,
                })
            }
            None => None,
        };

        let identification = match raw.identification {
            Some(id) => Some(Self::identification_settings(id, &plant, base_dir, &loc)?),
            None => None,
        };

        let reference = match raw.reference {
            Some(r) => {
                let reference = ReferenceSignal {
                    bias: r.bias_m,
                    amplitude: r.amplitude_m,
                    freq: r.f_Hz,
                };
                reference
                    .validate()
                    .map_err(|e| loc.relabel("reference", e, &reference_key))?;
                Some(reference)
            }
            None => None,
        };

        let controller = match raw.controller {
            Some(c) => Some(Self::controller_config(c, &loc)?),
            None => None,
        };

        let sensor = match raw.sensor {
            Some(s) => SensorModel {
                resolution: s.resolution_m,
                latency: s.latency_steps,
                zero_offset: s.zero_offset_m,
            },
            None => SensorModel::ideal(),
        };
        sensor
            .validate()
            .map_err(|e| loc.relabel("sensor", e, &sensor_key))?;

        let regulator = match raw.regulator {
            Some(r) => RegulatorModel {
                tau: r.tau_s,
                p_min: r.p_min_Pa,
                p_max: r.p_max_Pa,
            },
            None => RegulatorModel {
                p_max: plant.p_max,
                ..RegulatorModel::instantaneous()
            },
        };
        regulator
            .validate()
            .map_err(|e| loc.relabel("regulator", e, &regulator_key))?;

        Ok(Scenario {
            name: raw.name,
            rng_seed: raw.rng_seed,
            output_dir: raw.output_dir.map(|d| base_dir.join(d)),
            plant,
            model,
            clock,
            signal,
            recording,
            identification,
            reference,
            controller,
            sensor,
            regulator,
            initial: raw.initial_condition.unwrap_or(InitialCondition::Rest),
        })
    }

    fn identification_settings(
        id: RawIdentification,
        plant: &PlantParams,
        base_dir: &Path,
        loc: &Locator,
    ) -> Result<IdentificationSettings> {
        const T: &str = "identification";
        if id.n_starts == 0 {
            return Err(loc.err(T, "n_starts", "must be >= 1"));
        }
        if !(id.sim_dt_s > 0.0 && id.sim_dt_s.is_finite()) {
            return Err(loc.err(T, "sim_dt_s", "must be > 0"));
        }
        let bounds = match (id.bounds, id.bounds_halfwidth_fraction) {
            (Some(_), Some(_)) => {
                return Err(loc.err(
                    T,
                    "bounds_halfwidth_fraction",
                    "give either a fraction or [identification.bounds], not both",
                ))
            }
            (Some(b), None) => {
                let pairs = [
                    b.alpha_N_per_m,
                    b.beta_per_m,
                    b.gamma_per_m,
                    b.d_N_s_per_m,
                    b.K_e_N_per_m,
                    b.p_dz_Pa,
                ];
                Bounds {
                    lower: std::array::from_fn(|i| pairs[i][0]),
                    upper: std::array::from_fn(|i| pairs[i][1]),
                }
            }
            (None, Some(frac)) => {
                if !(frac > 0.0 && frac < 1.0) {
                    return Err(loc.err(T, "bounds_halfwidth_fraction", "must be in (0, 1)"));
                }
                Bounds::around(&FreeParams::from_plant(plant), frac)
            }
            (None, None) => Bounds::default(),
        };
        bounds
            .validate()
            .map_err(|e| loc.relabel("identification.bounds", e, &bounds_key))?;

        let defaults = SimplexOptions::default();
        let simplex = SimplexOptions {
            cost_spread_tol: id.cost_spread_tol_m.unwrap_or(defaults.cost_spread_tol),
            max_iterations: id.max_iterations.unwrap_or(defaults.max_iterations),
            initial_step: id.initial_step.unwrap_or(defaults.initial_step),
        };
        if !(simplex.cost_spread_tol >= 0.0) {
            return Err(loc.err(T, "cost_spread_tol_m", "must be >= 0"));
        }
        if simplex.max_iterations == 0 {
            return Err(loc.err(T, "max_iterations", "must be >= 1"));
        }
        if !(simplex.initial_step > 0.0 && simplex.initial_step <= 1.0) {
            return Err(loc.err(T, "initial_step", "must be in (0, 1]"));
        }
        let initial_state = PlantState::new(
            id.initial_x_m.unwrap_or(0.0),
            id.initial_v_m_per_s.unwrap_or(0.0),
            id.initial_z_N.unwrap_or(0.0),
        );
        if !initial_state.is_finite() {
            return Err(loc.err(T, "initial_x_m", "initial state must be finite"));
        }
        Ok(IdentificationSettings {
            recorded_csv: id.recorded_csv.map(|p| base_dir.join(p)),
            n_starts: id.n_starts,
            sim_dt: id.sim_dt_s,
            bounds,
            simplex,
            initial_state,
        })
    }

    fn controller_config(c: RawController, loc: &Locator) -> Result<ControllerConfig> {
        const T: &str = "controller";
        let (gains, foreign) = match c.mode {
            ControlMode::Pid => (
                [
                    (c.Kp_Pa_per_m, "Kp_Pa_per_m"),
                    (c.Ki_Pa_per_m_s, "Ki_Pa_per_m_s"),
                    (c.Kd_Pa_s_per_m, "Kd_Pa_s_per_m"),
                ],
                [
                    (c.Kp_per_s2, "Kp_per_s2"),
                    (c.Ki_per_s3, "Ki_per_s3"),
                    (c.Kd_per_s, "Kd_per_s"),
                ],
            ),
            ControlMode::ComputedTorque => (
                [
                    (c.Kp_per_s2, "Kp_per_s2"),
                    (c.Ki_per_s3, "Ki_per_s3"),
                    (c.Kd_per_s, "Kd_per_s"),
                ],
                [
                    (c.Kp_Pa_per_m, "Kp_Pa_per_m"),
                    (c.Ki_Pa_per_m_s, "Ki_Pa_per_m_s"),
                    (c.Kd_Pa_s_per_m, "Kd_Pa_s_per_m"),
                ],
            ),
        };
        if let Some((_, key)) = foreign.iter().find(|(v, _)| v.is_some()) {
            return Err(loc.err(T, key, "gain unit does not match the controller mode"));
        }
        let mut k = [0.0; 3];
        for (slot, (v, key)) in k.iter_mut().zip(gains) {
            *slot = v.ok_or_else(|| loc.err(T, key, "missing gain"))?;
            if *slot < 0.0 {
                return Err(loc.err(T, key, "gains must be >= 0"));
            }
        }
        let cfg = ControllerConfig {
            mode: c.mode,
            kp: k[0],
            ki: k[1],
            kd: k[2],
            inner_rate: c.inner_rate_Hz,
            command_rate: c.command_rate_Hz,
            integral_limit: c.integral_limit_m_s,
            velocity_cutoff: c.velocity_cutoff_Hz,
        };
        cfg.validate()
            .map_err(|e| loc.relabel(T, e, &controller_key(c.mode)))?;
        Ok(cfg)
    }
}
