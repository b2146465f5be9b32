//! Fixed-step RK4 integration of the plant and the sampled trajectory type.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{dynamics_rhs, effective_pressure, PlantParams, PlantState};
use crate::signals::PressureSignal;

/// Default integration step: the 1 kHz real-time rate of the rig.
pub const DEFAULT_DT: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimClock {
    /// Step, s.
    pub dt: f64,
    /// Duration, s.
    pub t_end: f64,
}

impl SimClock {
    pub fn new(dt: f64, t_end: f64) -> Result<Self> {
        let clock = SimClock { dt, t_end };
        clock.validate()?;
        Ok(clock)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::invalid("dt", "must be > 0"));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::invalid("t_end", "must be > 0"));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }
}

/// Reference columns carried by closed-loop runs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackingColumns {
    pub x_d: Vec<f64>,
    pub v_d: Vec<f64>,
    /// `x_d - x`
    pub e: Vec<f64>,
}

/// Uniformly sampled simulation record. All columns have equal length.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub p_cmd: Vec<f64>,
    pub p_eff: Vec<f64>,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub z: Vec<f64>,
    pub tracking: Option<TrackingColumns>,
}

const BASE_HEADER: [&str; 6] = ["t", "p_cmd", "p_eff", "x", "v", "z"];
const TRACKING_HEADER: [&str; 3] = ["x_d", "v_d", "e"];

/// Seventeen significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

impl Trajectory {
    pub fn with_capacity(n: usize) -> Self {
        Trajectory {
            t: Vec::with_capacity(n),
            p_cmd: Vec::with_capacity(n),
            p_eff: Vec::with_capacity(n),
            x: Vec::with_capacity(n),
            v: Vec::with_capacity(n),
            z: Vec::with_capacity(n),
            tracking: None,
        }
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub(crate) fn push(&mut self, t: f64, p_cmd: f64, p_eff: f64, s: &PlantState) {
        self.t.push(t);
        self.p_cmd.push(p_cmd);
        self.p_eff.push(p_eff);
        self.x.push(s.x);
        self.v.push(s.v);
        self.z.push(s.z);
    }

    /// Sample spacing, taken from the first interval.
    pub fn dt(&self) -> Option<f64> {
        (self.t.len() >= 2).then(|| self.t[1] - self.t[0])
    }

    pub fn state(&self, k: usize) -> PlantState {
        PlantState::new(self.x[k], self.v[k], self.z[k])
    }

    pub fn header(&self) -> Vec<&'static str> {
        let mut h = BASE_HEADER.to_vec();
        if self.tracking.is_some() {
            h.extend(TRACKING_HEADER);
        }
        h
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{}", self.header().join(","))?;
        let mut line = String::new();
        for k in 0..self.len() {
            line.clear();
            let base = [self.t[k], self.p_cmd[k], self.p_eff[k], self.x[k], self.v[k], self.z[k]];
            for (i, v) in base.iter().enumerate() {
                if i > 0 {
                    line.push(',');
                }
                let _ = write!(line, "{v:.16e}");
            }
            if let Some(tr) = &self.tracking {
                for v in [tr.x_d[k], tr.v_d[k], tr.e[k]] {
                    let _ = write!(line, ",{v:.16e}");
                }
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("csv is ascii")
    }

    /// Reads a trajectory CSV. Columns other than `t`, `p_cmd` and `x` are
    /// optional and default to zero when absent.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Csv("empty file".into()))??;
        let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        let col = |name: &str| names.iter().position(|n| n == name);
        let required = |name: &str| {
            col(name).ok_or_else(|| Error::Csv(format!("missing column `{name}`")))
        };
        let (it, ip, ix) = (required("t")?, required("p_cmd")?, required("x")?);
        let (ipe, iv, iz) = (col("p_eff"), col("v"), col("z"));
        let tracking_idx = match (col("x_d"), col("v_d"), col("e")) {
            (Some(a), Some(b), Some(c)) => Some((a, b, c)),
            _ => None,
        };
        let mut traj = Trajectory::default();
        if tracking_idx.is_some() {
            traj.tracking = Some(TrackingColumns::default());
        }
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Csv(format!("line {}: {e}", lineno + 2)))?;
            if fields.len() != names.len() {
                return Err(Error::Csv(format!(
                    "line {}: expected {} fields, found {}",
                    lineno + 2,
                    names.len(),
                    fields.len()
                )));
            }
            let get = |i: Option<usize>| i.map_or(0.0, |i| fields[i]);
            traj.t.push(fields[it]);
            traj.p_cmd.push(fields[ip]);
            traj.p_eff.push(get(ipe));
            traj.x.push(fields[ix]);
            traj.v.push(get(iv));
            traj.z.push(get(iz));
            if let (Some(tr), Some((a, b, c))) = (traj.tracking.as_mut(), tracking_idx) {
                tr.x_d.push(fields[a]);
                tr.v_d.push(fields[b]);
                tr.e.push(fields[c]);
            }
        }
        traj.check_grid()?;
        Ok(traj)
    }

    /// Uniform grid and finite values.
    pub fn check_grid(&self) -> Result<()> {
        if self.t.len() < 2 {
            return Err(Error::TooShort("need at least two samples".into()));
        }
        let dt = self.t[1] - self.t[0];
        if !(dt > 0.0) {
            return Err(Error::GridMismatch("non-increasing time column".into()));
        }
        for (k, &t) in self.t.iter().enumerate() {
            let expected = self.t[0] + k as f64 * dt;
            if (t - expected).abs() > 1e-6 * dt.max(1.0) {
                return Err(Error::GridMismatch(format!("sample {k} at t = {t} is off-grid")));
            }
        }
        let cols = [&self.p_cmd, &self.p_eff, &self.x, &self.v, &self.z];
        if cols.iter().any(|c| c.len() != self.t.len()) {
            return Err(Error::GridMismatch("column lengths differ".into()));
        }
        if cols.iter().any(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(Error::Csv("non-finite value".into()));
        }
        Ok(())
    }
}

/// One classical RK4 step with the effective pressure held constant.
///
/// A non-finite result is reported as [`Error::Diverged`] at `t = dt`
/// (relative to the start of the step).
pub fn step_rk4(state: &PlantState, p_eff: f64, params: &PlantParams, dt: f64) -> Result<PlantState> {
    let diverged = |_| Error::Diverged { t: dt };
    let at = |s: &PlantState, k: &crate::model::StateRate, h: f64| {
        PlantState::new(s.x + h * k.dx, s.v + h * k.dv, s.z + h * k.dz)
    };
    let k1 = dynamics_rhs(state, p_eff, params).map_err(diverged)?;
    let k2 = dynamics_rhs(&at(state, &k1, 0.5 * dt), p_eff, params).map_err(diverged)?;
    let k3 = dynamics_rhs(&at(state, &k2, 0.5 * dt), p_eff, params).map_err(diverged)?;
    let k4 = dynamics_rhs(&at(state, &k3, dt), p_eff, params).map_err(diverged)?;
    let next = PlantState::new(
        state.x + dt / 6.0 * (k1.dx + 2.0 * k2.dx + 2.0 * k3.dx + k4.dx),
        state.v + dt / 6.0 * (k1.dv + 2.0 * k2.dv + 2.0 * k3.dv + k4.dv),
        state.z + dt / 6.0 * (k1.dz + 2.0 * k2.dz + 2.0 * k3.dz + k4.dz),
    );
    if next.is_finite() {
        Ok(next)
    } else {
        Err(Error::Diverged { t: dt })
    }
}

/// Open-loop simulation. Row `k` holds `t = k dt`, the pressure applied over
/// `[t, t + dt)` and the state at `t`; `n_steps + 1` rows in total.
pub fn simulate(
    initial: PlantState,
    pressure: &PressureSignal,
    params: &PlantParams,
    clock: &SimClock,
) -> Result<Trajectory> {
    clock.validate()?;
    let n = clock.n_steps();
    let mut traj = Trajectory::with_capacity(n + 1);
    let mut state = initial;
    for k in 0..=n {
        let t = clock.time(k);
        let p_cmd = pressure.at(t);
        let p_eff = effective_pressure(p_cmd, params);
        traj.push(t, p_cmd, p_eff, &state);
        if k < n {
            state = step_rk4(&state, p_eff, params, clock.dt).map_err(|_| Error::Diverged {
                t: clock.time(k + 1),
            })?;
        }
    }
    Ok(traj)
}

/// Final state of a simulation, without recording the trajectory.
pub fn simulate_final(
    initial: PlantState,
    pressure: &PressureSignal,
    params: &PlantParams,
    clock: &SimClock,
) -> Result<PlantState> {
    clock.validate()?;
    let mut state = initial;
    for k in 0..clock.n_steps() {
        let p_eff = effective_pressure(pressure.at(clock.time(k)), params);
        state = step_rk4(&state, p_eff, params, clock.dt).map_err(|_| Error::Diverged {
            t: clock.time(k + 1),
        })?;
    }
    Ok(state)
}
