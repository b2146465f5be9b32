//! Recovering hysteresis shape, damping, stiffness and dead zone from a
//! recorded pressure/extension pair.
//!
//! The objective is the RMS distance between the simulated and recorded
//! extension; it is minimized with multistart bounded Nelder-Mead.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{fmt_f64, simulate, step_rk4, SimClock, Trajectory};
use crate::model::{effective_pressure, quasi_static_z_at, PlantParams, PlantState};
use crate::optim::{minimize_bounded, SimplexOptions};
use crate::signals::PressureSignal;

/// Cost assigned to candidates whose simulation diverges, m.
pub const DIVERGENCE_PENALTY: f64 = 1e6;

/// Names of the free parameters, in vector order.
pub const FREE_NAMES: [&str; 6] = ["alpha", "beta", "gamma", "d", "K_e", "p_dz"];

/// The six identified quantities: alpha, beta, gamma, damping, stiffness, dead zone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeParams(pub [f64; 6]);

impl FreeParams {
    pub fn from_plant(p: &PlantParams) -> Self {
        FreeParams([p.alpha, p.beta, p.gamma, p.damping, p.stiffness, p.dead_zone])
    }

    /// `base` with the free fields replaced.
    pub fn apply(&self, base: &PlantParams) -> PlantParams {
        let [alpha, beta, gamma, damping, stiffness, dead_zone] = self.0;
        PlantParams {
            alpha,
            beta,
            gamma,
            damping,
            stiffness,
            dead_zone,
            ..*base
        }
    }
}

/// Per-parameter `[lo, hi]` box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: [f64; 6],
    pub upper: [f64; 6],
}

impl Default for Bounds {
    fn default() -> Self {
        Bounds {
            lower: [0.1, 0.01, -500.0, 0.0, 1.0, 0.0],
            upper: [500.0, 100.0, 500.0, 2000.0, 10_000.0, 200_000.0],
        }
    }
}

impl Bounds {
    /// Box of `truth * (1 -/+ frac)` for every parameter (ordered for negative values).
    pub fn around(truth: &FreeParams, frac: f64) -> Self {
        let mut lower = [0.0; 6];
        let mut upper = [0.0; 6];
        for i in 0..6 {
            let a = truth.0[i] * (1.0 - frac);
            let b = truth.0[i] * (1.0 + frac);
            lower[i] = a.min(b);
            upper[i] = a.max(b);
        }
        Bounds { lower, upper }
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..6 {
            let (lo, hi) = (self.lower[i], self.upper[i]);
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(FREE_NAMES[i], "bounds need finite lo < hi"));
            }
        }
        if self.lower[0] <= 0.0 {
            return Err(Error::invalid("alpha", "lower bound must be > 0"));
        }
        if self.lower[1] <= 0.0 {
            return Err(Error::invalid("beta", "lower bound must be > 0"));
        }
        if self.lower[3] < 0.0 {
            return Err(Error::invalid("d", "lower bound must be >= 0"));
        }
        if self.lower[4] <= 0.0 {
            return Err(Error::invalid("K_e", "lower bound must be > 0"));
        }
        if self.lower[5] < 0.0 {
            return Err(Error::invalid("p_dz", "lower bound must be >= 0"));
        }
        Ok(())
    }

    pub fn contains(&self, p: &FreeParams) -> bool {
        (0..6).all(|i| p.0[i] >= self.lower[i] && p.0[i] <= self.upper[i])
    }

    fn to_unit(&self, p: &FreeParams) -> [f64; 6] {
        std::array::from_fn(|i| (p.0[i] - self.lower[i]) / (self.upper[i] - self.lower[i]))
    }

    fn from_unit(&self, u: &[f64]) -> FreeParams {
        FreeParams(std::array::from_fn(|i| {
            (self.lower[i] + u[i] * (self.upper[i] - self.lower[i])).clamp(self.lower[i], self.upper[i])
        }))
    }
}

/// Uniformly sampled commanded pressure and measured extension.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub dt: f64,
    pub p_cmd: Vec<f64>,
    pub x: Vec<f64>,
}

impl Recording {
    pub fn from_trajectory(traj: &Trajectory) -> Result<Self> {
        traj.check_grid()?;
        Ok(Recording {
            dt: traj.dt().expect("checked grid has two samples"),
            p_cmd: traj.p_cmd.clone(),
            x: traj.x.clone(),
        })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationProblem {
    pub recorded: Recording,
    /// Known parameters (masses, area, gravity, p_max); free fields are ignored.
    pub fixed: PlantParams,
    pub bounds: Bounds,
    pub n_starts: usize,
    pub rng_seed: u64,
    pub sim_dt: f64,
    pub initial_state: PlantState,
    /// Explicit start points tried before the random ones.
    pub seeds: Vec<FreeParams>,
    pub simplex: SimplexOptions,
}

impl IdentificationProblem {
    pub fn new(recorded: Recording, fixed: PlantParams, bounds: Bounds) -> Self {
        IdentificationProblem {
            recorded,
            fixed,
            bounds,
            n_starts: 20,
            rng_seed: 0,
            sim_dt: 1e-3,
            initial_state: PlantState::default(),
            seeds: Vec::new(),
            simplex: SimplexOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bounds.validate()?;
        if self.n_starts == 0 {
            return Err(Error::invalid("n_starts", "must be >= 1"));
        }
        if self.recorded.len() < 2 || self.recorded.p_cmd.len() != self.recorded.len() {
            return Err(Error::invalid("recorded", "need >= 2 samples of p_cmd and x"));
        }
        if !(self.recorded.dt > 0.0) {
            return Err(Error::invalid("recorded", "non-uniform or empty grid"));
        }
        self.substeps()?;
        for s in &self.seeds {
            if !self.bounds.contains(s) {
                return Err(Error::invalid("seeds", "start point outside bounds"));
            }
        }
        Ok(())
    }

    /// Integration steps per recorded sample.
    fn substeps(&self) -> Result<usize> {
        if !(self.sim_dt > 0.0) {
            return Err(Error::invalid("sim_dt", "must be > 0"));
        }
        let ratio = self.recorded.dt / self.sim_dt;
        let r = ratio.round();
        if r < 1.0 || (ratio - r).abs() > 1e-6 * ratio {
            return Err(Error::invalid("sim_dt", "must divide the recording interval"));
        }
        Ok(r as usize)
    }
}

/// Pointwise mean of repeated runs on one time grid.
pub fn average_response(runs: &[Trajectory]) -> Result<Trajectory> {
    let first = runs
        .first()
        .ok_or_else(|| Error::invalid("runs", "need at least one run"))?;
    for (i, r) in runs.iter().enumerate().skip(1) {
        let same = r.len() == first.len()
            && r.t.iter().zip(&first.t).all(|(a, b)| (a - b).abs() <= 1e-12 * b.abs().max(1.0));
        if !same {
            return Err(Error::GridMismatch(format!("run {i} differs from run 0")));
        }
    }
    let n = runs.len() as f64;
    let mean = |col: fn(&Trajectory) -> &Vec<f64>| -> Vec<f64> {
        let mut acc = vec![0.0; first.len()];
        for r in runs {
            for (a, v) in acc.iter_mut().zip(col(r)) {
                *a += v;
            }
        }
        acc.iter_mut().for_each(|a| *a /= n);
        acc
    };
    Ok(Trajectory {
        t: first.t.clone(),
        p_cmd: mean(|r| &r.p_cmd),
        p_eff: mean(|r| &r.p_eff),
        x: mean(|r| &r.x),
        v: mean(|r| &r.v),
        z: mean(|r| &r.z),
        tracking: None,
    })
}

/// Repeated noisy measurements of one simulated response. Gaussian noise of
/// standard deviation `noise_std` (m) is added to the extension only.
pub fn synthesize_runs(
    truth: &Trajectory,
    n_runs: usize,
    noise_std: f64,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(Error::invalid("noise_std", "must be >= 0"));
    }
    let noise = Normal::new(0.0, noise_std).map_err(|e| Error::invalid("noise_std", e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n_runs)
        .map(|_| {
            let mut run = truth.clone();
            run.x.iter_mut().for_each(|x| *x += noise.sample(&mut rng));
            run
        })
        .collect())
}

/// Simulates `params` under the recorded pressure and returns the extension on
/// the recorded grid.
pub fn simulate_recording(
    params: &PlantParams,
    recorded: &Recording,
    sim_dt: f64,
    initial: PlantState,
) -> Result<Vec<f64>> {
    let ratio = (recorded.dt / sim_dt).round().max(1.0) as usize;
    let mut out = Vec::with_capacity(recorded.len());
    let mut state = initial;
    for k in 0..recorded.len() {
        out.push(state.x);
        if k + 1 == recorded.len() {
            break;
        }
        let p_eff = effective_pressure(recorded.p_cmd[k], params);
        for j in 0..ratio {
            state = step_rk4(&state, p_eff, params, sim_dt).map_err(|_| Error::Diverged {
                t: k as f64 * recorded.dt + (j + 1) as f64 * sim_dt,
            })?;
        }
    }
    Ok(out)
}

pub fn rms(residual: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = residual.fold((0.0, 0usize), |(s, n), r| (s + r * r, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// RMS extension error of `candidate` against the recording, m.
pub fn evaluate_cost(candidate: &FreeParams, problem: &IdentificationProblem) -> Result<f64> {
    if candidate.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("candidate", "non-finite parameter"));
    }
    if !problem.bounds.contains(candidate) {
        return Err(Error::invalid("candidate", "outside the bound box"));
    }
    problem.substeps()?;
    Ok(cost_unchecked(candidate, problem))
}

fn cost_unchecked(candidate: &FreeParams, problem: &IdentificationProblem) -> f64 {
    let params = candidate.apply(&problem.fixed);
    match simulate_recording(&params, &problem.recorded, problem.sim_dt, problem.initial_state) {
        Ok(sim) => {
            let c = rms(sim.iter().zip(&problem.recorded.x).map(|(a, b)| a - b));
            if c.is_finite() {
                c
            } else {
                DIVERGENCE_PENALTY
            }
        }
        Err(_) => DIVERGENCE_PENALTY,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StartRecord {
    pub index: usize,
    pub start: FreeParams,
    pub converged: FreeParams,
    pub cost: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentificationResult {
    pub params_hat: FreeParams,
    pub cost: f64,
    pub starts: Vec<StartRecord>,
    pub best_start_index: usize,
}

/// Start points: explicit seeds first, then uniform draws in the box.
pub fn start_points(problem: &IdentificationProblem) -> Vec<FreeParams> {
    let mut rng = ChaCha8Rng::seed_from_u64(problem.rng_seed);
    let b = &problem.bounds;
    (0..problem.n_starts)
        .map(|i| {
            problem.seeds.get(i).copied().unwrap_or_else(|| {
                FreeParams(std::array::from_fn(|j| rng.gen_range(b.lower[j]..=b.upper[j])))
            })
        })
        .collect()
}

/// Multistart bounded Nelder-Mead over the six free parameters. Starts run in
/// parallel; the outcome depends only on the problem and its seed.
pub fn identify(problem: &IdentificationProblem) -> Result<IdentificationResult> {
    problem.validate()?;
    let bounds = problem.bounds;
    let unit_lo = [0.0; 6];
    let unit_hi = [1.0; 6];
    let starts: Vec<StartRecord> = start_points(problem)
        .into_par_iter()
        .enumerate()
        .map(|(index, start)| {
            let r = minimize_bounded(
                |u| cost_unchecked(&bounds.from_unit(u), problem),
                &bounds.to_unit(&start),
                &unit_lo,
                &unit_hi,
                &problem.simplex,
            );
            StartRecord {
                index,
                start,
                converged: bounds.from_unit(&r.point),
                cost: r.cost,
                iterations: r.iterations,
            }
        })
        .collect();

    let best = starts
        .iter()
        .filter(|s| s.cost < DIVERGENCE_PENALTY)
        .min_by(|a, b| a.cost.total_cmp(&b.cost).then(a.index.cmp(&b.index)))
        .ok_or(Error::NoStartConverged)?;
    Ok(IdentificationResult {
        params_hat: best.converged,
        cost: best.cost,
        best_start_index: best.index,
        starts: starts.clone(),
    })
}

impl IdentificationResult {
    /// `key = value # unit` lines, full precision.
    pub fn to_text(&self) -> String {
        let units = ["N/m", "1/m", "1/m", "N*s/m", "N/m", "Pa"];
        let mut s = String::new();
        for i in 0..6 {
            let _ = writeln!(s, "{} = {} # {}", FREE_NAMES[i], fmt_f64(self.params_hat.0[i]), units[i]);
        }
        let _ = writeln!(s, "cost = {} # m", fmt_f64(self.cost));
        let _ = writeln!(s, "best_start_index = {}", self.best_start_index);
        let _ = writeln!(s, "n_starts = {}", self.starts.len());
        s
    }

    /// Per-start table `start_index,cost,iterations,alpha,beta,gamma,d,K_e,p_dz`
    /// holding the converged points.
    pub fn starts_csv(&self) -> String {
        let mut s = String::from("start_index,cost,iterations,alpha,beta,gamma,d,K_e,p_dz\n");
        for r in &self.starts {
            let _ = write!(s, "{},{},{}", r.index, fmt_f64(r.cost), r.iterations);
            for v in r.converged.0 {
                let _ = write!(s, ",{}", fmt_f64(v));
            }
            s.push('\n');
        }
        s
    }
}

/// Effective area reproducing a steady extension `x_ss` under pressure `p`
/// when loaded quasi-statically from rest.
pub fn calibrate_area(x_ss: f64, p: f64, params: &PlantParams) -> Result<f64> {
    if !(x_ss > 0.0) {
        return Err(Error::Calibration("steady extension must be > 0".into()));
    }
    if !(p > params.dead_zone) {
        return Err(Error::Calibration("pressure must exceed the dead zone".into()));
    }
    let z = quasi_static_z_at(x_ss, params)?;
    let numerator = params.moving_mass() * params.gravity + params.stiffness * x_ss + z;
    if !(numerator > 0.0) {
        return Err(Error::Calibration(format!("non-positive force balance {numerator}")));
    }
    Ok(numerator / (p - params.dead_zone))
}

/// Noiseless response of `params` to `signal` on `clock`, from rest.
pub fn characterize(params: &PlantParams, signal: &PressureSignal, clock: &SimClock) -> Result<Trajectory> {
    simulate(PlantState::default(), signal, params, clock)
}
