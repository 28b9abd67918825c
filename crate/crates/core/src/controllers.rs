//! Collocated (B*-type) boundary and voltage feedback.
//!
//! Signs are chosen so that every channel removes energy with nonnegative
//! gains under the boundary conventions of [`crate::models`]:
//!
//! | model | V | m | g |
//! |-------|---|---|---|
//! | E-B   | c1 (v'_N + I) | c2 d/dt(w_x backward at N) | -c3 w'_N |
//! | M-T   | c4 (v'_N + I) | -c5 psi'_N | -c6 w'_N |
//! | fully dynamic | c1 p'_N | as E-B | as E-B |
//!
//! `I` is the Simpson slope-rate term of the nonlinear models; the
//! linearized models feed back the tip velocity alone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::{BeamState, Field, OFFSET};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlMode {
    /// Voltage, moment and shear force all active.
    Full,
    /// Voltage channel forced to zero.
    Partial,
    /// No control.
    Uncontrolled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerGains {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
    /// Axial traction gain of the fully dynamic model (g1 = -c_axial v'_N).
    pub c_axial: f64,
    pub mode: ControlMode,
    /// Halve the Simpson term so the voltage law feeds back
    /// v'_N + int w_x w'_x dx rather than v'_N + d/dt int w_x^2 dx.
    pub continuous_law: bool,
}

impl Default for ControllerGains {
    fn default() -> Self {
        // Best total-energy decay of a {0.1, 1, 10}^3 grid search on the
        // reference scenario, for both families.
        Self {
            c1: 10.0,
            c2: 0.1,
            c3: 0.1,
            c4: 10.0,
            c5: 0.1,
            c6: 0.1,
            c_axial: 0.0,
            mode: ControlMode::Full,
            continuous_law: false,
        }
    }
}

impl ControllerGains {
    pub fn uncontrolled() -> Self {
        Self { mode: ControlMode::Uncontrolled, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, c) in [
            ("c1", self.c1),
            ("c2", self.c2),
            ("c3", self.c3),
            ("c4", self.c4),
            ("c5", self.c5),
            ("c6", self.c6),
            ("c_axial", self.c_axial),
        ] {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(Error::InvalidParameter(format!("gain {name} must be nonnegative, got {c}")));
            }
        }
        Ok(())
    }
}

/// Boundary inputs in nondimensional units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    /// Voltage.
    pub v: f64,
    /// Boundary moment.
    pub m: f64,
    /// Boundary shear force.
    pub g: f64,
    /// Boundary axial traction (fully dynamic model).
    pub g1: f64,
}

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput { v: 0.0, m: 0.0, g: 0.0, g1: 0.0 };
}

/// Anything that produces boundary inputs for the current state.
pub trait ControlLaw: Sync {
    /// With `linear_only`, return only the part of the law that is linear in
    /// the state; affine and nonlinear contributions are dropped. The
    /// integrator uses this to assemble its Jacobian.
    fn controls(&self, state: &BeamState, linear_only: bool) -> ControlInput;
}

impl ControlLaw for ControllerGains {
    fn controls(&self, state: &BeamState, linear_only: bool) -> ControlInput {
        let mut u = compute_controls(state, self).unwrap_or(ControlInput::ZERO);
        if linear_only && state.model.is_nonlinear() && self.mode == ControlMode::Full {
            let obs = observe(state, self);
            u.v -= self.voltage_gain(state) * obs.integral;
        }
        u
    }
}

/// Prescribed, state-independent inputs.
pub struct OpenLoop<F>(pub F);

impl<F: Fn(f64) -> ControlInput + Sync> ControlLaw for OpenLoop<F> {
    fn controls(&self, state: &BeamState, linear_only: bool) -> ControlInput {
        if linear_only {
            ControlInput::ZERO
        } else {
            (self.0)(state.t)
        }
    }
}

/// Quantities measured at the free end that the feedback acts on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundaryObservation {
    pub vdot_tip: f64,
    pub wdot_tip: f64,
    pub psidot_tip: f64,
    pub pdot_tip: f64,
    /// d/dt of the backward slope of w at the tip.
    pub slope_rate_tip: f64,
    /// Integral term as fed back (already halved under `continuous_law`);
    /// zero for the linear models.
    pub integral: f64,
}

/// (dx/3) d/dt S where S is the composite-Simpson sum of squared slopes of w
/// over [0, L]: centered slopes at interior nodes, the backward slope at the
/// tip and zero slope at the clamp. Approximates 2 int w_x w'_x dx.
pub fn simpson_slope_rate(w: &[f64], wdot: &[f64], n: usize, dx: f64) -> Result<f64> {
    if n % 2 != 0 {
        return Err(Error::InvalidGrid(format!("Simpson quadrature needs even N, got {n}")));
    }
    if w.len() < n + OFFSET + 1 || wdot.len() < n + OFFSET + 1 {
        return Err(Error::StateMismatch("field shorter than grid".into()));
    }
    let node = |z: &[f64], i: usize| z[i + OFFSET];
    let centered = |z: &[f64], i: usize| (node(z, i + 1) - node(z, i - 1)) / (2.0 * dx);
    let backward = |z: &[f64]| (3.0 * node(z, n) - 4.0 * node(z, n - 1) + node(z, n - 2)) / (2.0 * dx);
    let mut acc = backward(w) * backward(wdot);
    for i in 1..n {
        let weight = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += weight * centered(w, i) * centered(wdot, i);
    }
    Ok(2.0 * acc * dx / 3.0)
}

pub fn observe(state: &BeamState, gains: &ControllerGains) -> BoundaryObservation {
    let n = state.grid.n as isize;
    let dx = state.grid.dx();
    let has_w = state.has(Field::W);
    let slope_rate_tip = if has_w {
        (3.0 * state.rate_at(Field::W, n) - 4.0 * state.rate_at(Field::W, n - 1)
            + state.rate_at(Field::W, n - 2))
            / (2.0 * dx)
    } else {
        0.0
    };
    let integral = if state.model.is_nonlinear() {
        let q = simpson_slope_rate(
            state.value(Field::W).unwrap(),
            state.rate(Field::W).unwrap(),
            state.grid.n,
            dx,
        )
        .unwrap_or(0.0);
        if gains.continuous_law {
            0.5 * q
        } else {
            q
        }
    } else {
        0.0
    };
    BoundaryObservation {
        vdot_tip: state.rate_at(Field::V, n),
        wdot_tip: state.rate_at(Field::W, n),
        psidot_tip: state.rate_at(Field::Psi, n),
        pdot_tip: state.rate_at(Field::P, n),
        slope_rate_tip,
        integral,
    }
}

impl ControllerGains {
    fn voltage_gain(&self, state: &BeamState) -> f64 {
        if state.model.is_timoshenko() {
            self.c4
        } else {
            self.c1
        }
    }
}

/// Evaluates the feedback law for `state`.
pub fn compute_controls(state: &BeamState, gains: &ControllerGains) -> Result<ControlInput> {
    if gains.mode == ControlMode::Uncontrolled {
        return Ok(ControlInput::ZERO);
    }
    let obs = observe(state, gains);
    let voltage_on = gains.mode == ControlMode::Full;
    let mut u = ControlInput::ZERO;
    if state.model.is_timoshenko() {
        if voltage_on {
            u.v = gains.c4 * (obs.vdot_tip + obs.integral);
        }
        u.m = -gains.c5 * obs.psidot_tip;
        u.g = -gains.c6 * obs.wdot_tip;
    } else {
        if voltage_on {
            u.v = if state.model.is_fully_dynamic() {
                gains.c1 * obs.pdot_tip
            } else {
                gains.c1 * (obs.vdot_tip + obs.integral)
            };
        }
        u.m = gains.c2 * obs.slope_rate_tip;
        u.g = -gains.c3 * obs.wdot_tip;
        if state.model.is_fully_dynamic() {
            u.g1 = -gains.c_axial * obs.vdot_tip;
        }
    }
    Ok(u)
}
