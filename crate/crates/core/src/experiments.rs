//! Scenario-driven workflows: characterization, identification, closed-loop
//! tracking, controller comparison and offline metrics.
//!
//! Each workflow returns its artifacts in memory; writing them is left to the
//! caller.

use std::fmt::Write as _;
use std::io::BufReader;

use crate::control::{tune, ClosedLoop, ControlMode, GainGrid};
use crate::error::{Error, Result};
use crate::identification::{
    average_response, characterize, identify, rms, synthesize_runs, IdentificationProblem,
    Recording,
};
use crate::integrator::{fmt_f64, simulate, Trajectory};
use crate::metrics::{compute_metrics, MetricsReport};
use crate::scenario::Scenario;
use crate::signals::{PressureSignal, ReferenceSignal};

/// A named output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

impl Artifact {
    fn new(name: impl Into<String>, contents: String) -> Self {
        Artifact {
            name: name.into(),
            contents,
        }
    }
}

fn require<'a, T>(v: &'a Option<T>, block: &str) -> Result<&'a T> {
    v.as_ref()
        .ok_or_else(|| Error::invalid(block, format!("scenario has no [{block}] block")))
}

fn summary(traj: &Trajectory) -> String {
    let (lo, hi) = traj
        .x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let p_max = traj.p_eff.iter().cloned().fold(0.0, f64::max);
    let mut s = String::new();
    let _ = writeln!(s, "samples = {} # count", traj.len());
    let _ = writeln!(s, "duration = {} # s", fmt_f64(traj.t[traj.len() - 1]));
    let _ = writeln!(s, "x_min = {} # m", fmt_f64(lo));
    let _ = writeln!(s, "x_max = {} # m", fmt_f64(hi));
    let _ = writeln!(s, "x_final = {} # m", fmt_f64(traj.x[traj.len() - 1]));
    let _ = writeln!(s, "p_eff_max = {} # Pa", fmt_f64(p_max));
    s
}

/// The noiseless response and, with a `[recording]` block, the mean of the
/// noisy repeated runs.
fn characterization(s: &Scenario) -> Result<(Trajectory, Option<Trajectory>)> {
    let signal = require(&s.signal, "signal")?;
    let truth = characterize(&s.plant, signal, &s.clock)?;
    let recorded = match s.recording {
        Some(r) => Some(average_response(&synthesize_runs(
            &truth,
            r.runs,
            r.noise_std,
            s.rng_seed,
        )?)?),
        None => None,
    };
    Ok((truth, recorded))
}

/// Open-loop response to the scenario's pressure signal.
///
/// Artifacts: `trajectory.csv`, `summary.txt`, and `recorded.csv` when the
/// scenario asks for noisy repeated runs.
pub fn run_characterize(s: &Scenario) -> Result<Vec<Artifact>> {
    let (truth, recorded) = characterization(s)?;
    let mut out = vec![
        Artifact::new("trajectory.csv", truth.to_csv_string()),
        Artifact::new("summary.txt", summary(&truth)),
    ];
    if let Some(r) = recorded {
        out.push(Artifact::new("recorded.csv", r.to_csv_string()));
    }
    Ok(out)
}

/// Fits the six free parameters to recorded or synthesized data.
///
/// Artifacts: `identification.txt`, `starts.csv`, `fit.csv` (the response of
/// the fitted model) and, for synthesized data, `recorded.csv` and
/// `recovery.txt` comparing the fit to the noiseless truth.
pub fn run_identify(s: &Scenario) -> Result<Vec<Artifact>> {
    let settings = require(&s.identification, "identification")?;
    let mut out = Vec::new();
    let (recorded, truth) = match &settings.recorded_csv {
        Some(path) => {
            let file = std::fs::File::open(path)?;
            (Trajectory::read_csv(BufReader::new(file))?, None)
        }
        None => {
            let (truth, noisy) = characterization(s)?;
            let recorded = noisy.unwrap_or_else(|| truth.clone());
            out.push(Artifact::new("recorded.csv", recorded.to_csv_string()));
            (recorded, Some(truth))
        }
    };
    let recording = Recording::from_trajectory(&recorded)?;
    let mut problem = IdentificationProblem::new(recording.clone(), s.plant, settings.bounds);
    problem.n_starts = settings.n_starts;
    problem.rng_seed = s.rng_seed;
    problem.sim_dt = settings.sim_dt;
    problem.initial_state = settings.initial_state;
    problem.simplex = settings.simplex;
    let result = identify(&problem)?;

    let fitted = result.params_hat.apply(&s.plant);
    let playback = PressureSignal::Samples {
        dt: recording.dt,
        values: recording.p_cmd.clone(),
    };
    let clock = crate::integrator::SimClock::new(
        recording.dt,
        recording.dt * (recording.len() - 1) as f64,
    )?;
    let fit = simulate(settings.initial_state, &playback, &fitted, &clock)?;

    if let Some(truth) = truth {
        let mut r = String::new();
        let vs_truth = rms(fit.x.iter().zip(&truth.x).map(|(a, b)| a - b));
        let vs_recorded = rms(fit.x.iter().zip(&recorded.x).map(|(a, b)| a - b));
        let _ = writeln!(r, "rms_fit_vs_truth = {} # m", fmt_f64(vs_truth));
        let _ = writeln!(r, "rms_fit_vs_recorded = {} # m", fmt_f64(vs_recorded));
        out.push(Artifact::new("recovery.txt", r));
    }
    out.push(Artifact::new("identification.txt", result.to_text()));
    out.push(Artifact::new("starts.csv", result.starts_csv()));
    out.push(Artifact::new("fit.csv", fit.to_csv_string()));
    Ok(out)
}

/// The closed-loop experiment described by a tracking scenario.
pub fn closed_loop(s: &Scenario) -> Result<ClosedLoop> {
    let cl = ClosedLoop {
        plant: s.plant,
        model: s.model,
        controller: *require(&s.controller, "controller")?,
        reference: *require(&s.reference, "reference")?,
        sensor: s.sensor,
        regulator: s.regulator,
        clock: s.clock,
        initial: s.initial,
    };
    cl.validate()?;
    Ok(cl)
}

fn track(s: &Scenario) -> Result<(Trajectory, MetricsReport)> {
    let cl = closed_loop(s)?;
    let traj = cl.run()?;
    let metrics = compute_metrics(&traj, &cl.plant_reference())?;
    Ok((traj, metrics))
}

/// Closed-loop tracking run.
///
/// Artifacts: `trajectory.csv`, `metrics.txt`, `cycles.csv`.
pub fn run_track(s: &Scenario) -> Result<Vec<Artifact>> {
    let (traj, m) = track(s)?;
    Ok(vec![
        Artifact::new("trajectory.csv", traj.to_csv_string()),
        Artifact::new("metrics.txt", m.to_text()),
        Artifact::new("cycles.csv", m.cycles_csv()),
    ])
}

/// Metrics of an existing trajectory CSV against the scenario's reference.
pub fn run_metrics(s: &Scenario, traj: &Trajectory) -> Result<Vec<Artifact>> {
    let reference = require(&s.reference, "reference")?;
    let plant_ref = ReferenceSignal {
        bias: reference.bias + s.sensor.zero_offset,
        ..*reference
    };
    let m = compute_metrics(traj, &plant_ref)?;
    Ok(vec![
        Artifact::new("metrics.txt", m.to_text()),
        Artifact::new("cycles.csv", m.cycles_csv()),
    ])
}

/// Rejects a pair of scenarios that do not describe the same experiment.
pub fn check_shared_blocks(a: &Scenario, b: &Scenario) -> Result<()> {
    let mismatch = |block: &str| Err(Error::invalid(block, "differs between the compared scenarios"));
    if a.plant != b.plant {
        return mismatch("plant");
    }
    if a.reference != b.reference {
        return mismatch("reference");
    }
    if a.sensor != b.sensor {
        return mismatch("sensor");
    }
    if a.regulator != b.regulator {
        return mismatch("regulator");
    }
    if a.clock != b.clock {
        return mismatch("clock");
    }
    if a.initial != b.initial {
        return mismatch("initial_condition");
    }
    Ok(())
}

/// Result of running two controllers on the same experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub fb: (Trajectory, MetricsReport),
    pub ct: (Trajectory, MetricsReport),
}

/// Runs the feedback scenario and the computed-torque scenario side by side.
/// Slots are positional: the first is labelled FB, the second CT.
pub fn compare(fb: &Scenario, ct: &Scenario) -> Result<Comparison> {
    check_shared_blocks(fb, ct)?;
    let (a, b) = rayon::join(|| track(fb), || track(ct));
    Ok(Comparison { fb: a?, ct: b? })
}

impl Comparison {
    /// `t,x_d,x_FB,x_CT,e_FB,e_CT` in plant coordinates.
    pub fn to_csv(&self) -> String {
        let (a, b) = (&self.fb.0, &self.ct.0);
        let (ta, tb) = (a.tracking.as_ref(), b.tracking.as_ref());
        let mut s = String::from("t,x_d,x_FB,x_CT,e_FB,e_CT\n");
        if let (Some(ta), Some(tb)) = (ta, tb) {
            for k in 0..a.len().min(b.len()) {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    fmt_f64(a.t[k]),
                    fmt_f64(ta.x_d[k]),
                    fmt_f64(a.x[k]),
                    fmt_f64(b.x[k]),
                    fmt_f64(ta.e[k]),
                    fmt_f64(tb.e[k])
                );
            }
        }
        s
    }

    /// Side-by-side metrics table.
    pub fn table(&self) -> String {
        let (a, b) = (&self.fb.1, &self.ct.1);
        let rows = [
            ("rms_error", a.rms_error, b.rms_error, "m"),
            ("phase_lag", a.phase_lag, b.phase_lag, "deg"),
            ("overshoot", a.overshoot, b.overshoot, "percent"),
            ("peak_error", a.peak_error, b.peak_error, "m"),
        ];
        let mut s = format!("# frequency = {} Hz\n", a.frequency);
        let _ = writeln!(s, "{:<12} {:>24} {:>24}  unit", "metric", "FB", "CT");
        for (name, x, y, unit) in rows {
            let _ = writeln!(s, "{name:<12} {:>24} {:>24}  {unit}", fmt_f64(x), fmt_f64(y));
        }
        s
    }
}

/// Artifacts: `comparison.csv`, `comparison.txt`, and per-slot
/// `fb_metrics.txt`, `ct_metrics.txt`, `fb_trajectory.csv`, `ct_trajectory.csv`.
pub fn run_compare(fb: &Scenario, ct: &Scenario) -> Result<Vec<Artifact>> {
    let c = compare(fb, ct)?;
    Ok(vec![
        Artifact::new("comparison.csv", c.to_csv()),
        Artifact::new("comparison.txt", c.table()),
        Artifact::new("fb_metrics.txt", c.fb.1.to_text()),
        Artifact::new("ct_metrics.txt", c.ct.1.to_text()),
        Artifact::new("fb_trajectory.csv", c.fb.0.to_csv_string()),
        Artifact::new("ct_trajectory.csv", c.ct.0.to_csv_string()),
    ])
}

/// Grid-searches the controller gains of a tracking scenario.
///
/// Artifact: `tuned.txt` with the gains under their scenario key names.
pub fn run_tune(s: &Scenario) -> Result<Vec<Artifact>> {
    let cl = closed_loop(s)?;
    let mode = cl.controller.mode;
    let best = tune(&cl, &GainGrid::for_mode(mode))?;
    let keys = match mode {
        ControlMode::Pid => ["Kp_Pa_per_m", "Ki_Pa_per_m_s", "Kd_Pa_s_per_m"],
        ControlMode::ComputedTorque => ["Kp_per_s2", "Ki_per_s3", "Kd_per_s"],
    };
    let mut t = String::new();
    for (key, v) in keys.iter().zip([best.kp, best.ki, best.kd]) {
        let _ = writeln!(t, "{key} = {v:?}");
    }
    let _ = writeln!(t, "rms_error = {} # m", fmt_f64(best.rms_error));
    let _ = writeln!(t, "evaluations = {} # count", best.evaluations);
    Ok(vec![Artifact::new("tuned.txt", t)])
}
