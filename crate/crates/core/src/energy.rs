//! Discrete energies and the predicted boundary dissipation.
//!
//! Two quadratures are offered. [`Quadrature::Scheme`] is the quadratic form
//! the semi-discrete schemes actually conserve (edge differences, trapezoid
//! node weights, the tridiagonal rotary-inertia form for E-B). It is the one
//! to use for conservation and dissipation checks. [`Quadrature::Simpson`]
//! applies composite Simpson to the continuous energy density, with
//! centered slopes and ghost values; the state must be ghost-consistent.
//!
//! FD cross term: alpha1 v_x^2 - 2 gamma beta v_x p_x + beta p_x^2 is
//! split as alpha11 v_x^2 (stretching) + beta (gamma v_x - p_x)^2 (electric).

use serde::{Deserialize, Serialize};

use crate::controllers::{BoundaryObservation, ControlMode, ControllerGains};
use crate::error::{Error, Result};
use crate::params::Coefficients;
use crate::state::{BeamState, Field, ModelKind, OFFSET};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Quadrature {
    #[default]
    Scheme,
    Simpson,
}

/// Energy components in units of alpha11 h L.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub kinetic: f64,
    /// The v' share of `kinetic`.
    pub axial_kinetic: f64,
    /// (v_x + w_x^2/2)^2 part; alpha11 v_x^2 for the fully dynamic model.
    pub stretching: f64,
    /// w_xx (E-B) or psi_x (M-T) part.
    pub bending: f64,
    /// (w_x + psi)^2, M-T only.
    pub shear: f64,
    /// mu p'^2, fully dynamic only.
    pub magnetic: f64,
    /// beta (gamma v_x - p_x)^2, fully dynamic only.
    pub electric: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    fn with_total(mut self) -> Self {
        self.total = self.kinetic + self.stretching + self.bending + self.shear + self.magnetic + self.electric;
        self
    }

    /// Energy of the axial (stretching) motion: its kinetic part plus
    /// stretching, and the electric/magnetic parts in the fully dynamic model.
    pub fn axial(&self) -> f64 {
        self.axial_kinetic + self.stretching + self.magnetic + self.electric
    }

    /// Fraction of the total held in stretching.
    pub fn stretching_fraction(&self) -> f64 {
        if self.total > 0.0 {
            self.stretching / self.total
        } else {
            0.0
        }
    }
}

/// Composite Simpson over nodes 0..=N.
pub fn simpson(values: &[f64], dx: f64) -> Result<f64> {
    let n = values.len().saturating_sub(1);
    if n == 0 || n % 2 != 0 {
        return Err(Error::InvalidGrid(format!("Simpson quadrature needs an even number of intervals, got {n}")));
    }
    let mut acc = values[0] + values[n];
    for (i, v) in values.iter().enumerate().take(n).skip(1) {
        acc += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    Ok(acc * dx / 3.0)
}

pub fn compute_energy(state: &BeamState, coef: &Coefficients, quadrature: Quadrature) -> Result<EnergyBreakdown> {
    if state.grid.n % 2 != 0 {
        return Err(Error::InvalidGrid(format!("energy needs even N, got {}", state.grid.n)));
    }
    Ok(match quadrature {
        Quadrature::Scheme => scheme_energy(state, coef),
        Quadrature::Simpson => simpson_energy(state, coef)?,
    }
    .with_total())
}

fn scheme_energy(state: &BeamState, c: &Coefficients) -> EnergyBreakdown {
    let model = state.model;
    let n = state.grid.n;
    let dx = state.grid.dx();
    let get = |f: Field| state.value(f).unwrap();
    let rate = |f: Field| state.rate(f).unwrap();
    let at = |z: &[f64], i: usize| z[i + OFFSET];
    let dplus = |z: &[f64], e: usize| (at(z, e + 1) - at(z, e)) / dx;
    let node_sum = |g: &dyn Fn(usize) -> f64| (1..=n).map(|i| if i == n { 0.5 } else { 1.0 } * g(i)).sum::<f64>() * dx;
    let edge_sum = |g: &dyn Fn(usize) -> f64| (0..n).map(g).sum::<f64>() * dx;

    let (v, vd, w, wd) = (get(Field::V), rate(Field::V), get(Field::W), rate(Field::W));
    let mut e = EnergyBreakdown::default();
    e.axial_kinetic = 0.5 * node_sum(&|i| at(vd, i).powi(2));
    e.kinetic = e.axial_kinetic + 0.5 * node_sum(&|i| at(wd, i).powi(2));

    if model.is_fully_dynamic() {
        let (p, pd) = (get(Field::P), rate(Field::P));
        e.magnetic = 0.5 * c.mu_hat * node_sum(&|i| at(pd, i).powi(2));
        e.stretching = 0.5 * (c.kappa - c.theta * c.theta) * edge_sum(&|k| dplus(v, k).powi(2));
        e.electric = 0.5 * edge_sum(&|k| (c.theta * dplus(v, k) - dplus(p, k)).powi(2));
    } else {
        let nl = if model.is_nonlinear() { 0.5 } else { 0.0 };
        e.stretching = 0.5 * edge_sum(&|k| (dplus(v, k) + nl * dplus(w, k).powi(2)).powi(2));
    }

    if model.is_timoshenko() {
        let (psi, psid) = (get(Field::Psi), rate(Field::Psi));
        e.kinetic += 0.5 * c.eps2_12 * node_sum(&|i| at(psid, i).powi(2));
        e.bending = 0.5 * c.kappa * c.eps2_12 * edge_sum(&|k| dplus(psi, k).powi(2));
        e.shear = 0.5 * c.shear * edge_sum(&|k| (dplus(w, k) + 0.5 * (at(psi, k) + at(psi, k + 1))).powi(2));
    } else {
        e.kinetic += 0.5 * c.eps2_12 * edge_sum(&|k| dplus(wd, k).powi(2));
        let d2 = |i: usize| {
            let left = if i == 0 { at(w, 1) } else { at(w, i - 1) };
            (at(w, i + 1) - 2.0 * at(w, i) + left) / (dx * dx)
        };
        let curv: f64 = (0..n).map(|i| if i == 0 { 0.5 } else { 1.0 } * d2(i).powi(2)).sum::<f64>() * dx;
        e.bending = 0.5 * c.kappa * c.eps2_12 * curv;
    }
    e
}

fn simpson_energy(state: &BeamState, c: &Coefficients) -> Result<EnergyBreakdown> {
    let model = state.model;
    let n = state.grid.n;
    let dx = state.grid.dx();
    let nodes = || 0..=n as isize;
    let val = |f: Field, i: isize| state.at(f, i);
    let rate = |f: Field, i: isize| state.rate_at(f, i);
    let d0 = |f: Field, i: isize| (val(f, i + 1) - val(f, i - 1)) / (2.0 * dx);
    let d0_rate = |f: Field, i: isize| (rate(f, i + 1) - rate(f, i - 1)) / (2.0 * dx);
    let d2 = |f: Field, i: isize| (val(f, i + 1) - 2.0 * val(f, i) + val(f, i - 1)) / (dx * dx);
    let integrate = |g: &dyn Fn(isize) -> f64| simpson(&nodes().map(g).collect::<Vec<_>>(), dx);

    let mut e = EnergyBreakdown::default();
    e.axial_kinetic = 0.5 * integrate(&|i| rate(Field::V, i).powi(2))?;
    e.kinetic = e.axial_kinetic + 0.5 * integrate(&|i| rate(Field::W, i).powi(2))?;
    if model.is_fully_dynamic() {
        e.magnetic = 0.5 * c.mu_hat * integrate(&|i| rate(Field::P, i).powi(2))?;
        e.stretching = 0.5 * (c.kappa - c.theta * c.theta) * integrate(&|i| d0(Field::V, i).powi(2))?;
        e.electric = 0.5 * integrate(&|i| (c.theta * d0(Field::V, i) - d0(Field::P, i)).powi(2))?;
    } else {
        let nl = if model.is_nonlinear() { 0.5 } else { 0.0 };
        e.stretching = 0.5 * integrate(&|i| (d0(Field::V, i) + nl * d0(Field::W, i).powi(2)).powi(2))?;
    }
    if model.is_timoshenko() {
        e.kinetic += 0.5 * c.eps2_12 * integrate(&|i| rate(Field::Psi, i).powi(2))?;
        e.bending = 0.5 * c.kappa * c.eps2_12 * integrate(&|i| d0(Field::Psi, i).powi(2))?;
        e.shear = 0.5 * c.shear * integrate(&|i| (d0(Field::W, i) + val(Field::Psi, i)).powi(2))?;
    } else {
        e.kinetic += 0.5 * c.eps2_12 * integrate(&|i| d0_rate(Field::W, i).powi(2))?;
        e.bending = 0.5 * c.kappa * c.eps2_12 * integrate(&|i| d2(Field::W, i).powi(2))?;
    }
    Ok(e)
}

/// Predicted dE/dt from the feedback alone: minus the sum of gain times
/// squared observation over the active channels. Never positive for
/// nonnegative gains.
pub fn dissipation_rate(model: ModelKind, gains: &ControllerGains, obs: &BoundaryObservation) -> f64 {
    if gains.mode == ControlMode::Uncontrolled {
        return 0.0;
    }
    let voltage = gains.mode == ControlMode::Full;
    let mut rate = 0.0;
    if model.is_timoshenko() {
        if voltage {
            rate -= gains.c4 * (obs.vdot_tip + obs.integral).powi(2);
        }
        rate -= gains.c5 * obs.psidot_tip.powi(2) + gains.c6 * obs.wdot_tip.powi(2);
    } else {
        if voltage {
            rate -= if model.is_fully_dynamic() {
                gains.c1 * obs.pdot_tip.powi(2)
            } else {
                gains.c1 * (obs.vdot_tip + obs.integral).powi(2)
            };
        }
        rate -= gains.c2 * obs.slope_rate_tip.powi(2) + gains.c3 * obs.wdot_tip.powi(2);
        if model.is_fully_dynamic() {
            rate -= gains.c_axial * obs.vdot_tip.powi(2);
        }
    }
    rate
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{GridSpec, MaterialParams};
    use crate::state::{make_initial_state, InitialCondition};

    fn fill(state: &mut BeamState, field: Field, f: impl Fn(f64) -> f64, g: impl Fn(f64) -> f64) {
        let xs = state.grid.coordinates();
        for (z, &x) in state.value_mut(field).unwrap().iter_mut().zip(&xs) {
            *z = f(x);
        }
        for (z, &x) in state.rate_mut(field).unwrap().iter_mut().zip(&xs) {
            *z = g(x);
        }
    }

    #[test]
    fn zero_state_has_zero_energy() {
        for model in ModelKind::ALL {
            let s = BeamState::zeros(model, GridSpec::new(20).unwrap());
            for q in [Quadrature::Scheme, Quadrature::Simpson] {
                let e = compute_energy(&s, &MaterialParams::default().coefficients(), q).unwrap();
                assert_eq!(e, EnergyBreakdown::default());
            }
        }
    }

    #[test]
    fn uniform_stretch() {
        let mut s = BeamState::zeros(ModelKind::EbLinear, GridSpec::new(20).unwrap());
        fill(&mut s, Field::V, |x| x, |_| 0.0);
        for q in [Quadrature::Scheme, Quadrature::Simpson] {
            let e = compute_energy(&s, &Coefficients::unit(), q).unwrap();
            assert!((e.stretching - 0.5).abs() < 1e-14, "{q:?}: {e:?}");
            assert!((e.total - 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn completed_square_removes_electric_part() {
        let c = Coefficients { theta: 0.4, kappa: 1.16, ..Coefficients::unit() };
        let mut s = BeamState::zeros(ModelKind::EbFullyDynamicLinear, GridSpec::new(16).unwrap());
        fill(&mut s, Field::V, |x| x, |_| 0.0);
        fill(&mut s, Field::P, |x| c.theta * x, |_| 0.0);
        for q in [Quadrature::Scheme, Quadrature::Simpson] {
            let e = compute_energy(&s, &c, q).unwrap();
            assert!(e.electric.abs() < 1e-15);
            assert!((e.stretching - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn total_is_sum_and_nonnegative() {
        let p = MaterialParams::default();
        for model in ModelKind::ALL {
            let grid = GridSpec::new(24).unwrap();
            let mut s = make_initial_state(grid, &InitialCondition::default(), model).unwrap();
            for &f in model.fields() {
                fill(&mut s, f, |x| 1e-3 * (3.0 * x).sin(), |x| 1e-2 * x.cos());
            }
            crate::state::reflect_clamped_end(&mut s);
            for q in [Quadrature::Scheme, Quadrature::Simpson] {
                let e = compute_energy(&s, &p.coefficients(), q).unwrap();
                let sum = e.kinetic + e.stretching + e.bending + e.shear + e.magnetic + e.electric;
                assert!((e.total - sum).abs() <= 1e-13 * e.total);
                assert!(e.total > 0.0);
                for part in [e.kinetic, e.stretching, e.bending, e.shear, e.magnetic, e.electric] {
                    assert!(part >= 0.0);
                }
            }
        }
    }

    #[test]
    fn quadratures_agree_on_smooth_fields() {
        let p = MaterialParams::default();
        let energy = |n: usize, q: Quadrature| {
            let mut s = BeamState::zeros(ModelKind::EbNonlinear, GridSpec::new(n).unwrap());
            fill(&mut s, Field::V, |x| 1e-3 * x * x, |x| x.sin());
            fill(&mut s, Field::W, |x| 1e-2 * x * x, |x| x * x);
            compute_energy(&s, &p.coefficients(), q).unwrap().total
        };
        let gap = |n| (energy(n, Quadrature::Scheme) - energy(n, Quadrature::Simpson)).abs();
        assert!(gap(64) < gap(32));
        assert!(gap(64) / energy(64, Quadrature::Simpson) < 1e-2);
    }

    #[test]
    fn simpson_rejects_odd_intervals() {
        assert!(simpson(&[1.0, 2.0], 0.1).is_err());
        assert!((simpson(&[0.0, 0.25, 1.0], 0.5).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn dissipation_rate_examples() {
        let obs = BoundaryObservation { vdot_tip: 1.0, ..Default::default() };
        let gains = ControllerGains { c1: 1.0, c2: 0.0, c3: 0.0, ..Default::default() };
        assert_eq!(dissipation_rate(ModelKind::EbLinear, &gains, &obs), -1.0);
        assert_eq!(dissipation_rate(ModelKind::EbLinear, &ControllerGains::uncontrolled(), &obs), 0.0);
        let partial = ControllerGains { mode: ControlMode::Partial, ..gains };
        assert_eq!(dissipation_rate(ModelKind::EbLinear, &partial, &obs), 0.0);
        let obs = BoundaryObservation {
            vdot_tip: 0.3,
            wdot_tip: -0.2,
            psidot_tip: 0.7,
            pdot_tip: 0.1,
            slope_rate_tip: -1.1,
            integral: 0.05,
        };
        for model in ModelKind::ALL {
            assert!(dissipation_rate(model, &ControllerGains::default(), &obs) < 0.0);
        }
    }
}
