//! Field storage shared by every model.
//!
//! Each field is one flat array over nodes -1..=N+1, so storage index
//! `k` holds node `k - 1`. Node 0 is the clamped end, node N the free end.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{GridSpec, NondimScales};

/// Storage offset of node 0.
pub const OFFSET: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    /// Nonlinear electrostatic Euler-Bernoulli.
    #[serde(rename = "eb-nl")]
    EbNonlinear,
    /// Nonlinear electrostatic Mindlin-Timoshenko.
    #[serde(rename = "mt-nl")]
    MtNonlinear,
    /// Linearized electrostatic Euler-Bernoulli.
    #[serde(rename = "eb-lin")]
    EbLinear,
    /// Linearized electrostatic Mindlin-Timoshenko.
    #[serde(rename = "mt-lin")]
    MtLinear,
    /// Linear fully dynamic Euler-Bernoulli with charge field p.
    #[serde(rename = "eb-fd-lin")]
    EbFullyDynamicLinear,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::EbNonlinear,
        ModelKind::MtNonlinear,
        ModelKind::EbLinear,
        ModelKind::MtLinear,
        ModelKind::EbFullyDynamicLinear,
    ];

    /// Fields carried by the model, in storage order.
    pub fn fields(self) -> &'static [Field] {
        match self {
            ModelKind::EbNonlinear | ModelKind::EbLinear => &[Field::V, Field::W],
            ModelKind::MtNonlinear | ModelKind::MtLinear => &[Field::V, Field::W, Field::Psi],
            ModelKind::EbFullyDynamicLinear => &[Field::V, Field::W, Field::P],
        }
    }

    pub fn is_timoshenko(self) -> bool {
        matches!(self, ModelKind::MtNonlinear | ModelKind::MtLinear)
    }

    pub fn is_nonlinear(self) -> bool {
        matches!(self, ModelKind::EbNonlinear | ModelKind::MtNonlinear)
    }

    pub fn is_fully_dynamic(self) -> bool {
        matches!(self, ModelKind::EbFullyDynamicLinear)
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::EbNonlinear => "eb-nl",
            ModelKind::MtNonlinear => "mt-nl",
            ModelKind::EbLinear => "eb-lin",
            ModelKind::MtLinear => "mt-lin",
            ModelKind::EbFullyDynamicLinear => "eb-fd-lin",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    /// Longitudinal displacement.
    V,
    /// Transverse displacement.
    W,
    /// Shear rotation (Mindlin-Timoshenko).
    Psi,
    /// Charge per unit length (fully dynamic).
    P,
}

impl Field {
    pub fn name(self) -> &'static str {
        match self {
            Field::V => "v",
            Field::W => "w",
            Field::Psi => "psi",
            Field::P => "p",
        }
    }
}

/// Snapshot of one model's fields and their time derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamState {
    pub model: ModelKind,
    pub grid: GridSpec,
    /// Nondimensional time.
    pub t: f64,
    values: Vec<Vec<f64>>,
    rates: Vec<Vec<f64>>,
}

impl BeamState {
    pub fn zeros(model: ModelKind, grid: GridSpec) -> Self {
        let nf = model.fields().len();
        let len = grid.stored_len();
        Self {
            model,
            grid,
            t: 0.0,
            values: vec![vec![0.0; len]; nf],
            rates: vec![vec![0.0; len]; nf],
        }
    }

    fn slot(&self, field: Field) -> Option<usize> {
        self.model.fields().iter().position(|&f| f == field)
    }

    pub fn has(&self, field: Field) -> bool {
        self.slot(field).is_some()
    }

    /// Stored values of `field` (index = node + 1).
    pub fn value(&self, field: Field) -> Option<&[f64]> {
        self.slot(field).map(|k| self.values[k].as_slice())
    }

    pub fn rate(&self, field: Field) -> Option<&[f64]> {
        self.slot(field).map(|k| self.rates[k].as_slice())
    }

    pub fn value_mut(&mut self, field: Field) -> Option<&mut [f64]> {
        self.slot(field).map(move |k| self.values[k].as_mut_slice())
    }

    pub fn rate_mut(&mut self, field: Field) -> Option<&mut [f64]> {
        self.slot(field).map(move |k| self.rates[k].as_mut_slice())
    }

    /// Value of `field` at node `i`, or 0 when the model lacks the field.
    pub fn at(&self, field: Field, i: isize) -> f64 {
        self.value(field).map_or(0.0, |z| z[(i + OFFSET as isize) as usize])
    }

    pub fn rate_at(&self, field: Field, i: isize) -> f64 {
        self.rate(field).map_or(0.0, |z| z[(i + OFFSET as isize) as usize])
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().chain(&self.rates).flatten().all(|x| x.is_finite())
    }

    /// Checks the clamped-end relations: every field and rate vanishes at
    /// node 0, and for Euler-Bernoulli kinematics w_{-1} = w_1.
    pub fn check_invariants(&self, tol: f64) -> Result<()> {
        for &field in self.model.fields() {
            let z = self.value(field).unwrap();
            let zd = self.rate(field).unwrap();
            if z.len() != self.grid.stored_len() || zd.len() != self.grid.stored_len() {
                return Err(Error::StateMismatch(format!("{} has wrong length", field.name())));
            }
            if z[OFFSET].abs() > tol || zd[OFFSET].abs() > tol {
                return Err(Error::StateMismatch(format!("{} is not clamped at x = 0", field.name())));
            }
        }
        if !self.model.is_timoshenko() {
            let w = self.value(Field::W).unwrap();
            let wd = self.rate(Field::W).unwrap();
            if (w[0] - w[2]).abs() > tol || (wd[0] - wd[2]).abs() > tol {
                return Err(Error::StateMismatch("ghost relation w_-1 = w_1 violated".into()));
            }
        }
        Ok(())
    }
}

/// Quantity receiving the initial profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileTarget {
    V,
    Vdot,
    W,
    Wdot,
    Psi,
    Psidot,
    P,
    Pdot,
}

impl ProfileTarget {
    fn split(self) -> (Field, bool) {
        match self {
            ProfileTarget::V => (Field::V, false),
            ProfileTarget::Vdot => (Field::V, true),
            ProfileTarget::W => (Field::W, false),
            ProfileTarget::Wdot => (Field::W, true),
            ProfileTarget::Psi => (Field::Psi, false),
            ProfileTarget::Psidot => (Field::Psi, true),
            ProfileTarget::P => (Field::P, false),
            ProfileTarget::Pdot => (Field::P, true),
        }
    }
}

/// Bump profile amplitude * exp(sign * ((x - center)/width)^2), in units of L.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialCondition {
    pub amplitude: f64,
    pub center: f64,
    pub width: f64,
    /// Exponent sign, +1 or -1.
    pub sign: f64,
    pub fields: Vec<ProfileTarget>,
    /// Largest profile value tolerated at the clamped end before it is zeroed.
    pub clamp_tol: f64,
}

impl Default for InitialCondition {
    fn default() -> Self {
        Self {
            amplitude: 1e-3,
            center: 0.5,
            width: 0.1,
            sign: -1.0,
            fields: vec![ProfileTarget::W, ProfileTarget::V, ProfileTarget::Vdot],
            clamp_tol: 1e-10,
        }
    }
}

impl InitialCondition {
    pub fn profile(&self, x: f64) -> f64 {
        let u = (x - self.center) / self.width;
        self.amplitude * (self.sign * u * u).exp()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0) {
            return Err(Error::InvalidParameter("initial width must be positive".into()));
        }
        if self.sign != 1.0 && self.sign != -1.0 {
            return Err(Error::InvalidParameter("initial exponent sign must be +1 or -1".into()));
        }
        Ok(())
    }
}

/// Samples `ic` on the grid for `model`.
///
/// Node 0 is zeroed explicitly after checking that the profile there is
/// within `ic.clamp_tol`; the left ghost holds the reflection encoding the
/// clamped condition. Right ghosts are left at zero for the model's
/// boundary closure to fill.
pub fn make_initial_state(grid: GridSpec, ic: &InitialCondition, model: ModelKind) -> Result<BeamState> {
    ic.validate()?;
    let mut state = BeamState::zeros(model, grid);
    let at_clamp = ic.profile(0.0);
    if !ic.fields.is_empty() && at_clamp.abs() > ic.clamp_tol {
        return Err(Error::ClampViolation { value: at_clamp, tolerance: ic.clamp_tol });
    }
    let n = grid.n as isize;
    for &target in &ic.fields {
        let (field, is_rate) = target.split();
        let slot = if is_rate { state.rate_mut(field) } else { state.value_mut(field) };
        let Some(z) = slot else { continue };
        for i in 1..=n {
            z[(i + 1) as usize] = ic.profile(grid.x(i));
        }
    }
    reflect_clamped_end(&mut state);
    Ok(state)
}

/// Zeroes node 0 and sets the left ghost: even reflection for the
/// Euler-Bernoulli w (zero slope), odd reflection for everything else.
pub fn reflect_clamped_end(state: &mut BeamState) {
    let even_w = !state.model.is_timoshenko();
    let fields: Vec<Field> = state.model.fields().to_vec();
    for field in fields {
        let even = even_w && field == Field::W;
        let z = state.value_mut(field).unwrap();
        z[OFFSET] = 0.0;
        z[0] = if even { z[2] } else { -z[2] };
        let zd = state.rate_mut(field).unwrap();
        zd[OFFSET] = 0.0;
        zd[0] = if even { zd[2] } else { -zd[2] };
    }
}

impl NondimScales {
    fn field_scale(&self, field: Field) -> f64 {
        match field {
            Field::V | Field::W => self.length,
            Field::Psi => 1.0,
            Field::P => self.charge,
        }
    }

    /// Converts a nondimensional state to SI units.
    pub fn dimensionalize(&self, state: &BeamState) -> BeamState {
        self.rescale(state, false)
    }

    /// Converts an SI state to nondimensional units.
    pub fn nondimensionalize(&self, state: &BeamState) -> BeamState {
        self.rescale(state, true)
    }

    fn rescale(&self, state: &BeamState, inverse: bool) -> BeamState {
        let mut out = state.clone();
        let apply = |x: f64, s: f64| if inverse { x / s } else { x * s };
        out.t = apply(state.t, self.time);
        for &field in state.model.fields() {
            let s = self.field_scale(field);
            for z in out.value_mut(field).unwrap() {
                *z = apply(*z, s);
            }
            let sr = s / self.time;
            for z in out.rate_mut(field).unwrap() {
                *z = apply(*z, sr);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::MaterialParams;

    fn grid() -> GridSpec {
        GridSpec::new(60).unwrap()
    }

    #[test]
    fn zero_amplitude_gives_zero_state() {
        let ic = InitialCondition { amplitude: 0.0, ..Default::default() };
        let s = make_initial_state(grid(), &ic, ModelKind::EbNonlinear).unwrap();
        assert_eq!(s, BeamState::zeros(ModelKind::EbNonlinear, grid()));
    }

    #[test]
    fn default_profile_values() {
        let ic = InitialCondition::default();
        let s = make_initial_state(grid(), &ic, ModelKind::EbNonlinear).unwrap();
        assert_eq!(s.at(Field::W, 30), 1e-3);
        assert_eq!(s.at(Field::V, 30), 1e-3);
        assert_eq!(s.rate_at(Field::V, 30), 1e-3);
        assert_eq!(s.rate_at(Field::W, 30), 0.0);
        let at_zero = ic.profile(0.0);
        assert!((at_zero - 1e-3 * (-25.0f64).exp()).abs() < 1e-25);
        assert!((at_zero - 1.39e-14).abs() < 0.01e-14);
        assert_eq!(s.at(Field::W, 0), 0.0);
    }

    #[test]
    fn literal_positive_exponent_is_rejected() {
        let ic = InitialCondition { sign: 1.0, ..Default::default() };
        assert!(matches!(
            make_initial_state(grid(), &ic, ModelKind::EbNonlinear),
            Err(Error::ClampViolation { .. })
        ));
        let loose = InitialCondition { sign: 1.0, clamp_tol: f64::INFINITY, ..Default::default() };
        assert!(make_initial_state(grid(), &loose, ModelKind::EbNonlinear).is_ok());
    }

    #[test]
    fn initial_states_pass_invariants_for_all_models() {
        let ic = InitialCondition {
            fields: vec![
                ProfileTarget::V,
                ProfileTarget::Vdot,
                ProfileTarget::W,
                ProfileTarget::Wdot,
                ProfileTarget::Psi,
                ProfileTarget::P,
            ],
            ..Default::default()
        };
        for model in ModelKind::ALL {
            let s = make_initial_state(grid(), &ic, model).unwrap();
            s.check_invariants(0.0).unwrap();
        }
    }

    #[test]
    fn dimensional_round_trip() {
        let ic = InitialCondition {
            fields: vec![ProfileTarget::V, ProfileTarget::Wdot, ProfileTarget::P, ProfileTarget::Pdot],
            ..Default::default()
        };
        let scales = MaterialParams::default().scales();
        for model in ModelKind::ALL {
            let mut s = make_initial_state(grid(), &ic, model).unwrap();
            s.t = 12.5;
            let back = scales.nondimensionalize(&scales.dimensionalize(&s));
            for &f in model.fields() {
                for (a, b) in s.value(f).unwrap().iter().zip(back.value(f).unwrap()) {
                    assert!((a - b).abs() <= 1e-14 * a.abs());
                }
                for (a, b) in s.rate(f).unwrap().iter().zip(back.rate(f).unwrap()) {
                    assert!((a - b).abs() <= 1e-14 * a.abs());
                }
            }
            assert!((back.t - s.t).abs() <= 1e-14 * s.t);
        }
    }
}
