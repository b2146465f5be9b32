//! Tracking metrics for closed-loop runs against a sinusoidal reference.

use std::fmt::Write as _;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::identification::rms;
use crate::integrator::{fmt_f64, Trajectory};
use crate::signals::ReferenceSignal;

#[derive(Debug, Clone, PartialEq)]
pub struct CycleMetrics {
    pub index: usize,
    pub t_start: f64,
    pub rms_error: f64,
    pub peak_error: f64,
    pub overshoot: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    /// m
    pub rms_error: f64,
    /// Degrees in (-180, 180]; positive when the response lags.
    pub phase_lag: f64,
    /// Percent of the reference amplitude.
    pub overshoot: f64,
    /// m
    pub peak_error: f64,
    pub frequency: f64,
    pub cycles: Vec<CycleMetrics>,
}

/// Wraps degrees into (-180, 180].
pub fn wrap_degrees(deg: f64) -> f64 {
    let mut d = deg % 360.0;
    if d <= -180.0 {
        d += 360.0;
    } else if d > 180.0 {
        d -= 360.0;
    }
    d
}

fn overshoot_of(x: &[f64], reference: &ReferenceSignal) -> f64 {
    let amp = reference.amplitude.abs();
    if amp == 0.0 {
        return 0.0;
    }
    let peak = x
        .iter()
        .map(|&v| (v - reference.bias) - amp)
        .fold(0.0, f64::max);
    peak / amp * 100.0
}

/// Lag of `x` behind `x_d` in samples from the peak of their circular
/// cross-correlation, refined by a parabola through the neighbours.
fn correlation_lag(x: &[f64], x_d: &[f64]) -> f64 {
    let n = x.len();
    let centered = |s: &[f64]| {
        let mean = s.iter().sum::<f64>() / n as f64;
        s.iter().map(|v| Complex::new(v - mean, 0.0)).collect::<Vec<_>>()
    };
    let mut a = centered(x);
    let mut b = centered(x_d);
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    fwd.process(&mut a);
    fwd.process(&mut b);
    let mut c: Vec<Complex<f64>> = a.iter().zip(&b).map(|(p, q)| p * q.conj()).collect();
    inv.process(&mut c);
    let corr: Vec<f64> = c.iter().map(|v| if v.re.is_finite() { v.re } else { 0.0 }).collect();
    let k = (0..n)
        .max_by(|&i, &j| corr[i].total_cmp(&corr[j]).then(j.cmp(&i)))
        .unwrap_or(0);
    let (ym, y0, yp) = (corr[(k + n - 1) % n], corr[k], corr[(k + 1) % n]);
    let denom = ym - 2.0 * y0 + yp;
    let shift = if denom < 0.0 { 0.5 * (ym - yp) / denom } else { 0.0 };
    k as f64 + shift.clamp(-0.5, 0.5)
}

/// Metrics over the whole reference periods that follow the first one (the
/// transient). The trajectory must carry tracking columns and `reference`
/// must be expressed in the same coordinates as its `x` column.
pub fn compute_metrics(traj: &Trajectory, reference: &ReferenceSignal) -> Result<MetricsReport> {
    reference.validate()?;
    let tracking = traj
        .tracking
        .as_ref()
        .ok_or_else(|| Error::invalid("trajectory", "no reference columns"))?;
    let dt = traj
        .dt()
        .ok_or_else(|| Error::TooShort("need at least two samples".into()))?;
    let period = reference.period();
    let span = traj.t[traj.len() - 1] - traj.t[0];
    if span + 0.5 * dt < 3.0 * period {
        return Err(Error::TooShort(format!(
            "{span} s covers fewer than three periods of {period} s"
        )));
    }
    let per_cycle = period / dt;
    let skip = per_cycle.round() as usize;
    let x = &traj.x[skip..];
    let x_d = &tracking.x_d[skip..];
    // whole periods only, so the window is the same for any time shift
    let n_cycles = ((x.len() - 1) as f64 / per_cycle).floor() as usize;
    let whole = ((n_cycles as f64 * per_cycle).round() as usize).min(x.len());
    let (xw, x_dw) = (&x[..whole], &x_d[..whole]);
    let err = || xw.iter().zip(x_dw).map(|(a, b)| b - a);

    let rms_error = rms(err());
    let peak_error = err().map(f64::abs).fold(0.0, f64::max);
    let overshoot = overshoot_of(xw, reference);

    let lag_samples = correlation_lag(xw, x_dw);
    let phase_lag = wrap_degrees(lag_samples * dt * reference.freq * 360.0);

    let cycles = (0..n_cycles)
        .map(|i| {
            let lo = (i as f64 * per_cycle).round() as usize;
            let hi = (((i + 1) as f64 * per_cycle).round() as usize).min(x.len());
            let e = x[lo..hi].iter().zip(&x_d[lo..hi]).map(|(a, b)| b - a);
            CycleMetrics {
                index: i,
                t_start: traj.t[skip + lo],
                rms_error: rms(e.clone()),
                peak_error: e.map(f64::abs).fold(0.0, f64::max),
                overshoot: overshoot_of(&x[lo..hi], reference),
            }
        })
        .collect();

    let clean = |v: f64| if v.is_finite() { v } else { 0.0 };
    Ok(MetricsReport {
        rms_error,
        phase_lag: clean(phase_lag),
        overshoot,
        peak_error,
        frequency: reference.freq,
        cycles,
    })
}

impl MetricsReport {
    /// One `key = value # unit` line per metric.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "frequency = {} # Hz", fmt_f64(self.frequency));
        let _ = writeln!(s, "rms_error = {} # m", fmt_f64(self.rms_error));
        let _ = writeln!(s, "phase_lag = {} # deg", fmt_f64(self.phase_lag));
        let _ = writeln!(s, "overshoot = {} # percent", fmt_f64(self.overshoot));
        let _ = writeln!(s, "peak_error = {} # m", fmt_f64(self.peak_error));
        let _ = writeln!(s, "cycles = {} # count", self.cycles.len());
        s
    }

    pub fn cycles_csv(&self) -> String {
        let mut s = String::from("cycle,t_start,rms_error,peak_error,overshoot\n");
        for c in &self.cycles {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                c.index,
                fmt_f64(c.t_start),
                fmt_f64(c.rms_error),
                fmt_f64(c.peak_error),
                fmt_f64(c.overshoot)
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::TAU;

    use super::*;
    use crate::integrator::TrackingColumns;

    fn build(reference: &ReferenceSignal, t_end: f64, dt: f64, x_of: impl Fn(f64) -> f64) -> Trajectory {
        let n = (t_end / dt).round() as usize;
        let mut tr = Trajectory::default();
        let mut cols = TrackingColumns::default();
        for k in 0..=n {
            let t = k as f64 * dt;
            let r = reference.at(t);
            let x = x_of(t);
            tr.t.push(t);
            tr.p_cmd.push(0.0);
            tr.p_eff.push(0.0);
            tr.x.push(x);
            tr.v.push(0.0);
            tr.z.push(0.0);
            cols.x_d.push(r.x);
            cols.v_d.push(r.v);
            cols.e.push(r.x - x);
        }
        tr.tracking = Some(cols);
        tr
    }

    #[test]
    fn perfect_tracking() {
        let r = ReferenceSignal::tracking(0.5);
        let mut tr = build(&r, 10.0, 1e-3, |_| 0.0);
        tr.x = tr.tracking.as_ref().unwrap().x_d.clone();
        let m = compute_metrics(&tr, &r).unwrap();
        assert_eq!(m.rms_error, 0.0);
        assert!(m.phase_lag.abs() < 1e-9);
        assert_eq!(m.overshoot, 0.0);
        assert_eq!(m.cycles.len(), 4);
    }

    #[test]
    fn quarter_period_delay() {
        let r = ReferenceSignal::tracking(1.0);
        let tr = build(&r, 10.0, 1e-3, |t| r.at(t - 0.25).x);
        let m = compute_metrics(&tr, &r).unwrap();
        assert!((m.phase_lag - 90.0).abs() < 0.1, "{}", m.phase_lag);
    }

    #[test]
    fn lead_is_negative() {
        let r = ReferenceSignal::tracking(1.0);
        let tr = build(&r, 10.0, 1e-3, |t| r.at(t + 0.1).x);
        let m = compute_metrics(&tr, &r).unwrap();
        assert!((m.phase_lag + 36.0).abs() < 0.1, "{}", m.phase_lag);
    }

    #[test]
    fn constructed_signal_closed_form() {
        let r = ReferenceSignal::tracking(0.5);
        let (b, a, f) = (r.bias, r.amplitude, r.freq);
        let x = move |t: f64| b + 1.1 * a * (TAU * f * t - std::f64::consts::PI / 6.0).sin();
        let tr = build(&r, 20.0, 1e-3, x);
        let m = compute_metrics(&tr, &r).unwrap();
        assert!((m.overshoot - 10.0).abs() < 1e-3, "{}", m.overshoot);
        assert!((m.phase_lag - 30.0).abs() < 0.05, "{}", m.phase_lag);
        // mean of (x_d - x)^2 over whole periods:
        // |a e^{i0} - 1.1 a e^{-i pi/6}|^2 / 2
        let diff2 = a * a * (1.0 + 1.21 - 2.2 * (std::f64::consts::PI / 6.0).cos());
        let expected = (diff2 / 2.0).sqrt();
        assert!((m.rms_error - expected).abs() < 1e-3 * expected, "{} {}", m.rms_error, expected);
    }

    #[test]
    fn too_short_is_rejected() {
        let r = ReferenceSignal::tracking(0.5);
        let tr = build(&r, 5.0, 1e-3, |t| r.at(t).x);
        assert!(matches!(compute_metrics(&tr, &r), Err(Error::TooShort(_))));
    }

    #[test]
    fn noise_gives_finite_metrics() {
        use rand::{Rng, SeedableRng};
        let r = ReferenceSignal::tracking(2.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let noise: Vec<f64> = (0..=4000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let tr = build(&r, 4.0, 1e-3, |t| noise[(t / 1e-3).round() as usize]);
        let m = compute_metrics(&tr, &r).unwrap();
        assert!(m.rms_error.is_finite() && m.phase_lag.is_finite() && m.overshoot.is_finite());
        assert!(m.phase_lag > -180.0 && m.phase_lag <= 180.0);
        let flat = build(&r, 4.0, 1e-3, |_| 0.0);
        let m = compute_metrics(&flat, &r).unwrap();
        assert!(m.phase_lag.is_finite());
    }

    #[test]
    fn wrapping() {
        assert_eq!(wrap_degrees(180.0), 180.0);
        assert_eq!(wrap_degrees(-180.0), 180.0);
        assert_eq!(wrap_degrees(270.0), -90.0);
        assert_eq!(wrap_degrees(-450.0), -90.0);
    }
}
