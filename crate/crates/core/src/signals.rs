//! Excitation pressures and position references.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bias of the sinusoidal tracking reference, m.
pub const TRACKING_BIAS: f64 = 0.005;
/// Amplitude of the sinusoidal tracking reference, m.
pub const TRACKING_AMPLITUDE: f64 = 0.0225;

/// Commanded pressure as a function of time, Pa.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PressureSignal {
    Constant {
        value: f64,
    },
    Step {
        before: f64,
        after: f64,
        t_step: f64,
    },
    /// Linear frequency sweep from `f0` to `f1` over `duration`.
    Chirp {
        f0: f64,
        f1: f64,
        duration: f64,
        offset: f64,
        amplitude: f64,
    },
    Sine {
        offset: f64,
        amplitude: f64,
        freq: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Zero-order-hold playback of uniformly sampled values.
    Samples {
        dt: f64,
        values: Vec<f64>,
    },
}

impl PressureSignal {
    /// Characterization chirp: 0.1 to 3 Hz over 15 s, swinging 0 to 0.5 MPa.
    pub fn characterization_chirp() -> Self {
        PressureSignal::Chirp {
            f0: 0.1,
            f1: 3.0,
            duration: 15.0,
            offset: 0.25e6,
            amplitude: 0.25e6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |name: &str, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(name, "must be finite"))
            }
        };
        match *self {
            PressureSignal::Constant { value } => finite("value", value),
            PressureSignal::Step {
                before,
                after,
                t_step,
            } => {
                finite("before", before)?;
                finite("after", after)?;
                finite("t_step", t_step)
            }
            PressureSignal::Chirp {
                f0,
                f1,
                duration,
                offset,
                amplitude,
            } => {
                finite("offset", offset)?;
                finite("amplitude", amplitude)?;
                if !(f0 > 0.0 && f1 > f0 && f1.is_finite()) {
                    return Err(Error::invalid("f1", "chirp requires f1 > f0 > 0"));
                }
                if !(duration > 0.0 && duration.is_finite()) {
                    return Err(Error::invalid("duration", "must be > 0"));
                }
                Ok(())
            }
            PressureSignal::Sine {
                offset,
                amplitude,
                freq,
                phase,
            } => {
                finite("offset", offset)?;
                finite("amplitude", amplitude)?;
                finite("phase", phase)?;
                if !(freq > 0.0 && freq.is_finite()) {
                    return Err(Error::invalid("freq", "must be > 0"));
                }
                Ok(())
            }
            PressureSignal::Samples { dt, ref values } => {
                if !(dt > 0.0) {
                    return Err(Error::invalid("dt", "must be > 0"));
                }
                if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid("values", "need finite samples"));
                }
                Ok(())
            }
        }
    }

    /// Pressure at time `t`. Chirps are held at their end points outside
    /// `[0, duration]`; sample playback holds the last value.
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            PressureSignal::Constant { value } => value,
            PressureSignal::Step {
                before,
                after,
                t_step,
            } => {
                if t < t_step {
                    before
                } else {
                    after
                }
            }
            PressureSignal::Chirp {
                f0,
                f1,
                duration,
                offset,
                amplitude,
            } => chirp_value(t.clamp(0.0, duration), f0, f1, duration, offset, amplitude),
            PressureSignal::Sine {
                offset,
                amplitude,
                freq,
                phase,
            } => offset + amplitude * (TAU * freq * t + phase).sin(),
            PressureSignal::Samples { dt, ref values } => {
                let k = ((t / dt) + 1e-9).floor().max(0.0) as usize;
                values[k.min(values.len() - 1)]
            }
        }
    }
}

fn chirp_value(t: f64, f0: f64, f1: f64, duration: f64, offset: f64, amplitude: f64) -> f64 {
    offset + amplitude * (TAU * chirp_phase_cycles(t, f0, f1, duration)).sin()
}

/// Accumulated chirp phase in cycles: `f0 t + (f1 - f0) t^2 / (2T)`.
pub fn chirp_phase_cycles(t: f64, f0: f64, f1: f64, duration: f64) -> f64 {
    f0 * t + (f1 - f0) * t * t / (2.0 * duration)
}

/// Instantaneous frequency of a linear chirp, Hz.
pub fn chirp_frequency(t: f64, f0: f64, f1: f64, duration: f64) -> f64 {
    f0 + (f1 - f0) * t / duration
}

/// Linear chirp `offset + amplitude sin(2 pi (f0 t + (f1 - f0) t^2 / 2T))`.
pub fn chirp_pressure(
    t: f64,
    f0: f64,
    f1: f64,
    duration: f64,
    offset: f64,
    amplitude: f64,
) -> Result<f64> {
    if !(0.0..=duration).contains(&t) {
        return Err(Error::invalid("t", format!("{t} outside [0, {duration}]")));
    }
    if !(f0 > 0.0 && f1 > f0) {
        return Err(Error::invalid("f1", "chirp requires f1 > f0 > 0"));
    }
    Ok(chirp_value(t, f0, f1, duration, offset, amplitude))
}

/// Desired position, velocity and acceleration at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RefPoint {
    pub x: f64,
    pub v: f64,
    pub a: f64,
}

/// Sinusoidal position reference `bias + amplitude sin(2 pi f t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSignal {
    /// m
    pub bias: f64,
    /// m
    pub amplitude: f64,
    /// Hz
    pub freq: f64,
}

impl ReferenceSignal {
    pub fn tracking(freq: f64) -> Self {
        ReferenceSignal {
            bias: TRACKING_BIAS,
            amplitude: TRACKING_AMPLITUDE,
            freq,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.bias.is_finite() {
            return Err(Error::invalid("bias", "must be finite"));
        }
        if !self.amplitude.is_finite() {
            return Err(Error::invalid("amplitude", "must be finite"));
        }
        if !(self.freq > 0.0 && self.freq.is_finite()) {
            return Err(Error::invalid("freq", "must be > 0"));
        }
        Ok(())
    }

    pub fn period(&self) -> f64 {
        1.0 / self.freq
    }

    pub fn at(&self, t: f64) -> RefPoint {
        let w = TAU * self.freq;
        let (s, c) = (w * t).sin_cos();
        RefPoint {
            x: self.bias + self.amplitude * s,
            v: self.amplitude * w * c,
            a: -self.amplitude * w * w * s,
        }
    }
}

/// Tracking reference with the standard 5 mm bias and 22.5 mm amplitude.
pub fn tracking_reference(t: f64, f: f64) -> RefPoint {
    ReferenceSignal::tracking(f).at(t)
}
