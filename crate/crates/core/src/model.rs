//! Single degree-of-freedom muscle model with Bouc-Wen hysteresis.
//!
//! The carriage/load and the muscle move together along the rail:
//!
//! ```text
//! (M + m) x'' + (M + m) g + K_e x + d x' + z = A p_eff
//! z' = x' [alpha - (beta sgn(x' z) + gamma) |z|]
//! ```
//!
//! With `z` carried in newtons, `alpha` has units of N/m and `beta`, `gamma`
//! of 1/m. They are stored as plain scalars.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unactuated muscle length, m.
pub const REST_LENGTH: f64 = 0.170;

/// Effective area obtained from [`crate::identification::calibrate_area`] for
/// [`PlantParams::identified`] against 85 mm of extension at 0.4 MPa.
pub const CALIBRATED_AREA: f64 = 2.118_968_358_500_689_5e-4;

/// Physical and hysteresis parameters of the actuator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantParams {
    /// Load (carriage plus any hanging weight), kg.
    pub load_mass: f64,
    /// Muscle mass, kg.
    pub muscle_mass: f64,
    /// Linear elastic stiffness `K_e`, N/m.
    pub stiffness: f64,
    /// Viscous damping `d`, N·s/m.
    pub damping: f64,
    /// Signed gravity term, m/s². Negative values pull toward extension.
    pub gravity: f64,
    /// Effective cross-section `A`, m².
    pub area: f64,
    /// Pressure dead zone, Pa.
    pub dead_zone: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    /// Regulator saturation ceiling, Pa.
    pub p_max: f64,
}

impl PlantParams {
    /// Identified parameter set on the bare rig (45 g carriage, 22 g muscle,
    /// gravity aiding extension).
    pub fn identified() -> Self {
        PlantParams {
            load_mass: 0.045,
            muscle_mass: 0.022,
            stiffness: 624.78,
            damping: 155.76,
            gravity: -9.81,
            area: CALIBRATED_AREA,
            dead_zone: 66_922.0,
            alpha: 23.705,
            beta: 1.7267,
            gamma: -42.593,
            p_max: 0.9e6,
        }
    }

    /// Same muscle carrying an extra hanging load, kg.
    pub fn with_added_load(mut self, extra: f64) -> Self {
        self.load_mass += extra;
        self
    }

    pub fn moving_mass(&self) -> f64 {
        self.load_mass + self.muscle_mass
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("load_mass", self.load_mass),
            ("muscle_mass", self.muscle_mass),
            ("stiffness", self.stiffness),
            ("damping", self.damping),
            ("gravity", self.gravity),
            ("area", self.area),
            ("dead_zone", self.dead_zone),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("p_max", self.p_max),
        ];
        for (name, value) in all {
            if !value.is_finite() {
                return Err(Error::invalid(name, "must be finite"));
            }
        }
        let check = |ok: bool, name: &str, why: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::invalid(name, why))
            }
        };
        check(self.load_mass >= 0.0, "load_mass", "must be >= 0")?;
        check(self.muscle_mass > 0.0, "muscle_mass", "must be > 0")?;
        check(self.stiffness > 0.0, "stiffness", "must be > 0")?;
        check(self.damping >= 0.0, "damping", "must be >= 0")?;
        check(self.area > 0.0, "area", "must be > 0")?;
        check(self.dead_zone >= 0.0, "dead_zone", "must be >= 0")?;
        check(self.p_max > self.dead_zone, "p_max", "must exceed dead_zone")?;
        check(self.alpha > 0.0, "alpha", "must be > 0")?;
        check(self.beta > 0.0, "beta", "must be > 0")?;
        Ok(())
    }
}

/// Continuous plant state.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlantState {
    /// Extension, m.
    pub x: f64,
    /// Velocity, m/s.
    pub v: f64,
    /// Hysteresis force, N.
    pub z: f64,
}

impl PlantState {
    pub fn new(x: f64, v: f64, z: f64) -> Self {
        PlantState { x, v, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.v.is_finite() && self.z.is_finite()
    }
}

/// Time derivative of [`PlantState`].
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateRate {
    pub dx: f64,
    pub dv: f64,
    pub dz: f64,
}

/// Pressure that actually produces force: saturate to `[0, p_max]`, subtract
/// the dead zone, floor at zero.
pub fn effective_pressure(p_cmd: f64, params: &PlantParams) -> f64 {
    (p_cmd.clamp(0.0, params.p_max) - params.dead_zone).max(0.0)
}

fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Bouc-Wen rate `dz/dt` for velocity `v` and hysteresis force `z`.
pub fn bouc_wen_rate(v: f64, z: f64, params: &PlantParams) -> f64 {
    v * (params.alpha - (params.beta * sgn(v * z) + params.gamma) * z.abs())
}

/// Right-hand side of the equation of motion.
pub fn dynamics_rhs(state: &PlantState, p_eff: f64, params: &PlantParams) -> Result<StateRate> {
    if !state.is_finite() {
        return Err(Error::invalid("state", "non-finite plant state"));
    }
    let mass = params.moving_mass();
    let force = params.area * p_eff
        - mass * params.gravity
        - params.stiffness * state.x
        - params.damping * state.v
        - state.z;
    Ok(StateRate {
        dx: state.v,
        dv: force / mass,
        dz: bouc_wen_rate(state.v, state.z, params),
    })
}

/// Largest displacement increment used when integrating `dz/dx` along a path.
const PATH_STEP: f64 = 1e-5;

/// Hysteresis force at the end of a monotone loading path starting from
/// `x = 0, z = 0`.
///
/// Along a monotone path the Bouc-Wen law is rate independent, so `z` can be
/// integrated directly in `x`:
/// `dz/dx = alpha - (beta sgn(dx z) + gamma) |z|`.
pub fn quasi_static_z(x_path: &[f64], params: &PlantParams) -> Result<f64> {
    let Some(&first) = x_path.first() else {
        return Err(Error::invalid("x_path", "empty path"));
    };
    if first != 0.0 {
        return Err(Error::invalid("x_path", "path must start at 0"));
    }
    if x_path.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("x_path", "path must be strictly increasing"));
    }
    let mut z = 0.0;
    for w in x_path.windows(2) {
        z = integrate_z_along(z, w[0], w[1], params);
    }
    Ok(z)
}

/// `z` at `x_end` along a straight loading path from the origin.
pub fn quasi_static_z_at(x_end: f64, params: &PlantParams) -> Result<f64> {
    if x_end == 0.0 {
        return Ok(0.0);
    }
    if !(x_end > 0.0) {
        return Err(Error::invalid("x_end", "loading path must end at x > 0"));
    }
    quasi_static_z(&[0.0, x_end], params)
}

/// RK4 in displacement from `x0` to `x1` (either direction).
pub(crate) fn integrate_z_along(z0: f64, x0: f64, x1: f64, params: &PlantParams) -> f64 {
    let span = x1 - x0;
    if span == 0.0 {
        return z0;
    }
    let n = (span.abs() / PATH_STEP).ceil().max(1.0) as usize;
    let h = span / n as f64;
    let dir = sgn(span);
    let slope = |z: f64| bouc_wen_rate(dir, z, params) * dir;
    let mut z = z0;
    for _ in 0..n {
        let k1 = slope(z);
        let k2 = slope(z + 0.5 * h * k1);
        let k3 = slope(z + 0.5 * h * k2);
        let k4 = slope(z + h * k3);
        z += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rig() -> PlantParams {
        PlantParams::identified()
    }

    #[test]
    fn dead_zone_boundary_and_floor() {
        let p = rig();
        assert_eq!(effective_pressure(66_922.0, &p), 0.0);
        assert_eq!(effective_pressure(0.0, &p), 0.0);
        assert_eq!(effective_pressure(-5.0e4, &p), 0.0);
        assert!((effective_pressure(100_000.0, &p) - 33_078.0).abs() < 1e-9);
        assert_eq!(effective_pressure(2.0e6, &p), p.p_max - p.dead_zone);
    }

    #[test]
    fn bouc_wen_examples() {
        let p = rig();
        assert_eq!(bouc_wen_rate(0.0, 5.0, &p), 0.0);
        assert!((bouc_wen_rate(1.0, 0.0, &p) - 23.705).abs() < 1e-12);
        let r = bouc_wen_rate(0.01, 1.0, &p);
        // 0.01 * (23.705 - (1.7267 - 42.593) * 1)
        assert!((r - 0.645713).abs() < 1e-12, "{r}");
    }

    #[test]
    fn rhs_at_rest() {
        let mut p = rig();
        p.gravity = 0.0;
        let r = dynamics_rhs(&PlantState::default(), 0.0, &p).unwrap();
        assert_eq!(r, StateRate::default());
        let r = dynamics_rhs(&PlantState::default(), 1.0e5, &p).unwrap();
        assert_eq!(r.dx, 0.0);
        assert_eq!(r.dz, 0.0);
        assert!((r.dv - p.area * 1.0e5 / p.moving_mass()).abs() < 1e-12);
    }

    #[test]
    fn rhs_matches_scalar_evaluation() {
        // Hand evaluation with the identified parameters at (0.01, 0.1, 2), p = 50 kPa.
        let p = rig();
        let s = PlantState::new(0.01, 0.1, 2.0);
        let mass: f64 = 0.045 + 0.022;
        let force = p.area * 50_000.0 - mass * -9.81 - 624.78 * 0.01 - 155.76 * 0.1 - 2.0;
        let expected_dv = force / mass;
        let expected_dz = 0.1 * (23.705 - (1.7267 + -42.593) * 2.0);
        let r = dynamics_rhs(&s, 50_000.0, &p).unwrap();
        assert_eq!(r.dx, 0.1);
        assert!((r.dv - expected_dv).abs() < 1e-9 * expected_dv.abs());
        assert!((r.dz - expected_dz).abs() < 1e-12);
    }

    #[test]
    fn rhs_rejects_non_finite() {
        let s = PlantState::new(f64::NAN, 0.0, 0.0);
        assert!(dynamics_rhs(&s, 0.0, &rig()).is_err());
    }

    #[test]
    fn quasi_static_closed_form() {
        let p = rig();
        let k = -(p.beta + p.gamma);
        let exact = p.alpha / k * ((k * 0.085f64).exp() - 1.0);
        let z = quasi_static_z_at(0.085, &p).unwrap();
        assert!((z - exact).abs() < 1e-9 * exact, "{z} vs {exact}");
        assert_eq!(quasi_static_z(&[0.0], &p).unwrap(), 0.0);
    }

    #[test]
    fn quasi_static_sample_count_converges() {
        let p = rig();
        let path = |n: usize| -> Vec<f64> { (0..=n).map(|i| 0.085 * i as f64 / n as f64).collect() };
        let a = quasi_static_z(&path(100), &p).unwrap();
        let b = quasi_static_z(&path(200), &p).unwrap();
        assert!(((a - b) / b).abs() < 1e-3);
    }

    #[test]
    fn quasi_static_rejects_bad_paths() {
        let p = rig();
        assert!(quasi_static_z(&[0.0, 0.02, 0.01], &p).is_err());
        assert!(quasi_static_z(&[0.01, 0.02], &p).is_err());
        assert!(quasi_static_z(&[], &p).is_err());
    }

    #[test]
    fn validation_names_field() {
        let mut p = rig();
        p.stiffness = -1.0;
        match p.validate() {
            Err(Error::Invalid { field, .. }) => assert_eq!(field, "stiffness"),
            other => panic!("{other:?}"),
        }
        assert!(rig().validate().is_ok());
    }

    proptest! {
        #[test]
        fn bouc_wen_is_odd(v in -1.0f64..1.0, z in -50.0f64..50.0) {
            let p = rig();
            prop_assert_eq!(bouc_wen_rate(-v, -z, &p), -bouc_wen_rate(v, z, &p));
        }

        #[test]
        fn effective_pressure_monotone_and_idempotent(a in -1e5f64..2e6, b in -1e5f64..2e6) {
            let p = rig();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(effective_pressure(lo, &p) <= effective_pressure(hi, &p));
            let once = a.clamp(0.0, p.p_max);
            prop_assert_eq!(effective_pressure(once, &p), effective_pressure(a, &p));
            if (0.0..=p.dead_zone).contains(&a) {
                prop_assert_eq!(effective_pressure(a, &p), 0.0);
            }
        }

        #[test]
        fn rhs_linear_in_pressure(x in -0.05f64..0.1, v in -0.5f64..0.5, z in -20.0f64..20.0,
                                  p1 in 0.0f64..8e5, p2 in 0.0f64..8e5) {
            let p = rig();
            let s = PlantState::new(x, v, z);
            let r0 = dynamics_rhs(&s, 0.0, &p).unwrap().dv;
            let r1 = dynamics_rhs(&s, p1, &p).unwrap().dv;
            let r2 = dynamics_rhs(&s, p2, &p).unwrap().dv;
            let r12 = dynamics_rhs(&s, p1 + p2, &p).unwrap().dv;
            let scale = r0.abs() + r1.abs() + r2.abs() + 1.0;
            prop_assert!(((r12 - r0) - ((r1 - r0) + (r2 - r0))).abs() < 1e-9 * scale);
        }
    }
}
