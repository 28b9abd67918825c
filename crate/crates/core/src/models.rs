//! Semi-discrete systems `M q'' = F(q, q', u, t)` for every model family.
//!
//! Unknowns are the nodal values at nodes 1..=N of each field, interleaved
//! node by node. Node 0 is clamped; ghost values are never unknowns.
//!
//! Rows are written in weighted (integrated) form so that the mass matrix
//! is symmetric and the linear part of `F` derives from a discrete energy:
//! every node carries the trapezoid weight `w_i dx` (half at the free end).
//! Interior rows reduce, after division by `dx`, to the centered stencils
//!
//! ```text
//! v'' = D+D- v + D0 w D+D- w                                 (+ filter)
//! w'' - e D+D- w'' + k e D4 w
//!     = D0 v D+D- w + D+D- v D0 w + 3/2 (D0 w)^2 D+D- w + V D+D- w
//! psi'' = k D+D- psi - (a3/e)(D0 w + psi)
//! w''   = a3 (D+D- w + D0 psi) + (nonlinear terms as above)
//! ```
//!
//! with `e = h^2/12L^2`, `k = alpha1/alpha11`, `a3 = alpha3/alpha11`.
//! Free-end conditions enter through boundary fluxes (traction, moment,
//! shear) so no algebraic constraint is left for the integrator.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::banded::{BandedLu, BandedMatrix};
use crate::controllers::ControlInput;
use crate::error::{Error, Result};
use crate::params::{Coefficients, GridSpec, MaterialParams};
use crate::state::{reflect_clamped_end, BeamState, Field, ModelKind, OFFSET};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViscosityScaling {
    /// Filter coefficients exactly as in the printed schemes (dx independent).
    AsPrinted,
    /// Second-order fields filtered by (dx)^2 u_xxt, vanishing under refinement.
    DxSquared,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NonlinearForm {
    /// Expanded centered products D0 v D+D- w + D+D- v D0 w + 3/2 (D0 w)^2 D+D- w.
    Printed,
    /// Flux difference D-[(S + V) D+ w]; conserves the discrete energy exactly.
    Conservative,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelOptions {
    /// Add the numerical-viscosity filter.
    pub viscosity: bool,
    pub viscosity_scaling: ViscosityScaling,
    /// Add Kelvin-Voigt damping (needs a nonzero `kv_alpha_tilde`).
    pub kelvin_voigt: bool,
    pub nonlinear_form: NonlinearForm,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            viscosity: true,
            viscosity_scaling: ViscosityScaling::DxSquared,
            kelvin_voigt: false,
            nonlinear_form: NonlinearForm::Printed,
        }
    }
}

impl ModelOptions {
    pub fn conservative() -> Self {
        Self { viscosity: false, kelvin_voigt: false, ..Self::default() }
    }
}

/// Selects which contributions [`SemiDiscreteSystem::assemble`] includes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Terms {
    pub elastic: bool,
    pub viscous: bool,
    pub control: bool,
    pub nonlinear: bool,
    pub forcing: bool,
}

impl Terms {
    pub const ALL: Terms = Terms { elastic: true, viscous: true, control: true, nonlinear: true, forcing: true };
    /// Everything linear in the state (forcing excluded).
    pub const LINEAR: Terms = Terms { elastic: true, viscous: true, control: true, nonlinear: false, forcing: false };
    pub const VISCOUS: Terms = Terms { elastic: false, viscous: true, control: false, nonlinear: false, forcing: false };
    /// Every term carrying a control input, including the bilinear voltage term.
    pub const CONTROL: Terms = Terms { elastic: false, viscous: false, control: true, nonlinear: true, forcing: false };
}

/// Per-node source densities added to the right-hand sides.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ForcingFields {
    /// (field, values at nodes 1..=N).
    pub sources: Vec<(Field, Vec<f64>)>,
}

impl ForcingFields {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn get(&self, field: Field) -> Option<&[f64]> {
        self.sources.iter().find(|(f, _)| *f == field).map(|(_, v)| v.as_slice())
    }

    pub fn is_zero(&self) -> bool {
        self.sources.iter().all(|(_, v)| v.iter().all(|&x| x == 0.0))
    }
}

/// Assembled semi-discrete model.
#[derive(Debug, Clone)]
pub struct SemiDiscreteSystem {
    model: ModelKind,
    grid: GridSpec,
    coef: Coefficients,
    options: ModelOptions,
    nf: usize,
    bandwidth: usize,
    mass: BandedMatrix,
    mass_lu: BandedLu,
}

/// Nonlinear electrostatic Euler-Bernoulli system.
pub fn assemble_eb_electrostatic(params: &MaterialParams, grid: GridSpec, options: ModelOptions) -> Result<SemiDiscreteSystem> {
    SemiDiscreteSystem::new(ModelKind::EbNonlinear, params, grid, options)
}

/// Nonlinear electrostatic Mindlin-Timoshenko system.
pub fn assemble_mt_electrostatic(params: &MaterialParams, grid: GridSpec, options: ModelOptions) -> Result<SemiDiscreteSystem> {
    SemiDiscreteSystem::new(ModelKind::MtNonlinear, params, grid, options)
}

/// Linearized electrostatic system of the given family.
pub fn assemble_linearized(
    params: &MaterialParams,
    grid: GridSpec,
    timoshenko: bool,
    options: ModelOptions,
) -> Result<SemiDiscreteSystem> {
    let model = if timoshenko { ModelKind::MtLinear } else { ModelKind::EbLinear };
    SemiDiscreteSystem::new(model, params, grid, options)
}

/// Linear fully dynamic Euler-Bernoulli system with the charge field.
pub fn assemble_eb_fully_dynamic_linear(
    params: &MaterialParams,
    grid: GridSpec,
    options: ModelOptions,
) -> Result<SemiDiscreteSystem> {
    SemiDiscreteSystem::new(ModelKind::EbFullyDynamicLinear, params, grid, options)
}

impl SemiDiscreteSystem {
    pub fn new(model: ModelKind, params: &MaterialParams, grid: GridSpec, options: ModelOptions) -> Result<Self> {
        params.validate(model)?;
        if options.kelvin_voigt && params.kv_alpha_tilde == 0.0 {
            return Err(Error::InvalidParameter("kelvin_voigt enabled but kv_alpha_tilde is zero".into()));
        }
        Self::with_coefficients(model, params.coefficients(), grid, options)
    }

    pub fn with_coefficients(
        model: ModelKind,
        coef: Coefficients,
        grid: GridSpec,
        options: ModelOptions,
    ) -> Result<Self> {
        let grid = GridSpec::with_length(grid.n, grid.length)?;
        let nf = model.fields().len();
        let reach = if model.is_timoshenko() { 1 } else { 2 };
        let bandwidth = reach * nf + nf - 1;
        let n = grid.n;
        let dx = grid.dx();
        let ndof = n * nf;
        let mut mass = BandedMatrix::zeros(ndof, nf, nf);
        for (f, &field) in model.fields().iter().enumerate() {
            let inertia = if field == Field::P { coef.mu_hat } else { 1.0 };
            for i in 1..=n {
                mass.add(dof(i, f, nf), dof(i, f, nf), inertia * weight(i, n) * dx);
            }
            if field == Field::W && !model.is_timoshenko() {
                let r = coef.eps2_12 / dx;
                for e in 0..n {
                    let (a, b) = (e, e + 1);
                    mass.add(dof(b, f, nf), dof(b, f, nf), r);
                    if a >= 1 {
                        mass.add(dof(a, f, nf), dof(a, f, nf), r);
                        mass.add(dof(a, f, nf), dof(b, f, nf), -r);
                        mass.add(dof(b, f, nf), dof(a, f, nf), -r);
                    }
                }
            }
        }
        let mass_lu = mass.factor()?;
        Ok(Self { model, grid, coef, options, nf, bandwidth, mass, mass_lu })
    }

    pub fn model(&self) -> ModelKind {
        self.model
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    pub fn coefficients(&self) -> &Coefficients {
        &self.coef
    }

    pub fn options(&self) -> &ModelOptions {
        &self.options
    }

    pub fn dof_count(&self) -> usize {
        self.grid.n * self.nf
    }

    /// Half-bandwidth of the mass matrix and of the linearized force Jacobian.
    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn mass(&self) -> &BandedMatrix {
        &self.mass
    }

    pub fn mass_lu(&self) -> &BandedLu {
        &self.mass_lu
    }

    /// Index of `field` at node `i` (1..=N) in the unknown vector.
    pub fn dof_index(&self, field: Field, i: usize) -> Option<usize> {
        let f = self.model.fields().iter().position(|&g| g == field)?;
        (1..=self.grid.n).contains(&i).then(|| dof(i, f, self.nf))
    }

    /// Filter coefficient on u_xxt for `field`.
    pub fn viscosity_coefficient(&self, field: Field) -> f64 {
        if !self.options.viscosity {
            return 0.0;
        }
        let dx = self.grid.dx();
        let scale = match self.options.viscosity_scaling {
            ViscosityScaling::AsPrinted => 1.0,
            ViscosityScaling::DxSquared => dx * dx,
        };
        let c = &self.coef;
        match (field, self.model.is_timoshenko()) {
            (Field::V, _) => scale,
            (Field::W, false) => 0.5 * c.eps2_12,
            (Field::W, true) => c.shear * scale,
            (Field::Psi, _) => c.kappa * scale,
            (Field::P, _) => 0.0,
        }
    }

    /// Kelvin-Voigt coefficient in effect (zero when disabled).
    pub fn kv(&self) -> f64 {
        if self.options.kelvin_voigt {
            self.coef.kv
        } else {
            0.0
        }
    }

    pub fn pack(&self, state: &BeamState) -> Result<(Vec<f64>, Vec<f64>)> {
        if state.model != self.model || state.grid != self.grid {
            return Err(Error::StateMismatch(format!(
                "state is {} on N={}, system is {} on N={}",
                state.model, state.grid.n, self.model, self.grid.n
            )));
        }
        let ndof = self.dof_count();
        let mut q = vec![0.0; ndof];
        let mut qd = vec![0.0; ndof];
        for (f, &field) in self.model.fields().iter().enumerate() {
            let z = state.value(field).unwrap();
            let zd = state.rate(field).unwrap();
            for i in 1..=self.grid.n {
                q[dof(i, f, self.nf)] = z[i + OFFSET];
                qd[dof(i, f, self.nf)] = zd[i + OFFSET];
            }
        }
        Ok((q, qd))
    }

    /// Builds a state from unknowns; clamped end and left ghosts are set,
    /// right ghosts are left at zero.
    pub fn unpack(&self, q: &[f64], qd: &[f64], t: f64) -> BeamState {
        let mut state = BeamState::zeros(self.model, self.grid);
        state.t = t;
        for (f, &field) in self.model.fields().iter().enumerate() {
            let z = state.value_mut(field).unwrap();
            for i in 1..=self.grid.n {
                z[i + OFFSET] = q[dof(i, f, self.nf)];
            }
            let zd = state.rate_mut(field).unwrap();
            for i in 1..=self.grid.n {
                zd[i + OFFSET] = qd[dof(i, f, self.nf)];
            }
        }
        reflect_clamped_end(&mut state);
        state
    }

    /// Fills every ghost value from the discrete boundary conditions for the
    /// given inputs. Applying it twice gives the same result.
    pub fn ghost_closure(&self, state: &mut BeamState, u: &ControlInput) {
        reflect_clamped_end(state);
        let n = self.grid.n;
        let dx = self.grid.dx();
        let c = self.coef;
        let at = |z: &[f64], i: usize| z[i + OFFSET];
        let tip = n + OFFSET;
        let w = state.value(Field::W).unwrap().to_vec();
        let slope_tip = (3.0 * at(&w, n) - 4.0 * at(&w, n - 1) + at(&w, n - 2)) / (2.0 * dx);
        let mirror_rate = |state: &mut BeamState, field: Field| {
            let zd = state.rate_mut(field).unwrap();
            zd[tip + 1] = zd[tip - 1];
        };
        match self.model {
            ModelKind::EbNonlinear | ModelKind::EbLinear => {
                let wz = state.value_mut(Field::W).unwrap();
                wz[tip + 1] = 2.0 * wz[tip] - wz[tip - 1] - dx * dx * u.m / (c.kappa * c.eps2_12);
                let wd = state.rate_mut(Field::W).unwrap();
                wd[tip + 1] = 2.0 * wd[tip] - wd[tip - 1];
                let stretch = if self.model.is_nonlinear() { 0.5 * slope_tip * slope_tip } else { 0.0 };
                let vz = state.value_mut(Field::V).unwrap();
                vz[tip + 1] = vz[tip - 1] - 2.0 * dx * (u.v + stretch);
                mirror_rate(state, Field::V);
            }
            ModelKind::MtNonlinear | ModelKind::MtLinear => {
                let psi_tip = state.at(Field::Psi, n as isize);
                let pz = state.value_mut(Field::Psi).unwrap();
                pz[tip + 1] = pz[tip - 1] + 2.0 * dx * u.m / (c.kappa * c.eps2_12);
                mirror_rate(state, Field::Psi);
                let wz = state.value_mut(Field::W).unwrap();
                wz[tip + 1] = wz[tip - 1] + 2.0 * dx * (u.g / c.shear - psi_tip);
                mirror_rate(state, Field::W);
                let w_slope = (state.at(Field::W, n as isize + 1) - state.at(Field::W, n as isize - 1)) / (2.0 * dx);
                let stretch = if self.model.is_nonlinear() { 0.5 * w_slope * w_slope } else { 0.0 };
                let vz = state.value_mut(Field::V).unwrap();
                vz[tip + 1] = vz[tip - 1] - 2.0 * dx * (u.v + stretch);
                mirror_rate(state, Field::V);
            }
            ModelKind::EbFullyDynamicLinear => {
                let wz = state.value_mut(Field::W).unwrap();
                wz[tip + 1] = 2.0 * wz[tip] - wz[tip - 1] - dx * dx * u.m / (c.kappa * c.eps2_12);
                let wd = state.rate_mut(Field::W).unwrap();
                wd[tip + 1] = 2.0 * wd[tip] - wd[tip - 1];
                // kappa v_x - theta p_x = g1, p_x - theta v_x = -V
                let det = c.kappa - c.theta * c.theta;
                let vx = (u.g1 - c.theta * u.v) / det;
                let px = -u.v + c.theta * vx;
                let vz = state.value_mut(Field::V).unwrap();
                vz[tip + 1] = vz[tip - 1] + 2.0 * dx * vx;
                mirror_rate(state, Field::V);
                let pz = state.value_mut(Field::P).unwrap();
                pz[tip + 1] = pz[tip - 1] + 2.0 * dx * px;
                mirror_rate(state, Field::P);
            }
        }
    }

    /// Weighted generalized forces for the selected `terms`.
    pub fn assemble(&self, state: &BeamState, u: &ControlInput, forcing: Option<&ForcingFields>, terms: Terms) -> Vec<f64> {
        let n = self.grid.n;
        let dx = self.grid.dx();
        let nf = self.nf;
        let c = self.coef;
        let kv = self.kv();
        let nonlinear_model = self.model.is_nonlinear();
        let mut out = vec![0.0; self.dof_count()];
        let slot = |field: Field| self.model.fields().iter().position(|&g| g == field);

        let v = state.value(Field::V).unwrap();
        let vd = state.rate(Field::V).unwrap();
        let w = state.value(Field::W).unwrap();
        let wd = state.rate(Field::W).unwrap();
        let at = |z: &[f64], i: usize| z[i + OFFSET];
        let dplus = |z: &[f64], e: usize| (z[e + 1 + OFFSET] - z[e + OFFSET]) / dx;

        // Longitudinal field: edge fluxes and the traction at the tip.
        {
            let fv = slot(Field::V).unwrap();
            let nu = self.viscosity_coefficient(Field::V);
            let p = state.value(Field::P);
            let mut flux = vec![0.0; n];
            for (e, phi) in flux.iter_mut().enumerate() {
                let mut s = 0.0;
                if terms.elastic {
                    s += match p {
                        Some(p) => c.kappa * dplus(v, e) - c.theta * dplus(p, e),
                        None => dplus(v, e),
                    };
                }
                if terms.elastic && terms.nonlinear && nonlinear_model {
                    let sw = dplus(w, e);
                    s += 0.5 * sw * sw;
                }
                if terms.viscous {
                    s += (nu + kv) * dplus(vd, e);
                }
                *phi = s;
            }
            let traction = if terms.control {
                if self.model.is_fully_dynamic() {
                    u.g1
                } else {
                    -u.v
                }
            } else {
                0.0
            };
            scatter_flux(&mut out, &flux, traction, fv, nf);
        }

        // Charge field of the fully dynamic model.
        if let Some(fp) = slot(Field::P) {
            let p = state.value(Field::P).unwrap();
            let mut flux = vec![0.0; n];
            if terms.elastic {
                for (e, phi) in flux.iter_mut().enumerate() {
                    *phi = dplus(p, e) - c.theta * dplus(v, e);
                }
            }
            let bnd = if terms.control { -u.v } else { 0.0 };
            scatter_flux(&mut out, &flux, bnd, fp, nf);
        }

        let fw = slot(Field::W).unwrap();
        if self.model.is_timoshenko() {
            let fpsi = slot(Field::Psi).unwrap();
            let psi = state.value(Field::Psi).unwrap();
            let psid = state.rate(Field::Psi).unwrap();
            let rot = c.rotation_stiffness();

            // Rotation: kappa psi_x fluxes, moment at the tip, shear coupling.
            let nu_psi = self.viscosity_coefficient(Field::Psi);
            let mut flux = vec![0.0; n];
            for (e, phi) in flux.iter_mut().enumerate() {
                let mut s = 0.0;
                if terms.elastic {
                    s += c.kappa * dplus(psi, e);
                }
                if terms.viscous {
                    s += (nu_psi + kv) * dplus(psid, e);
                }
                *phi = s;
            }
            let moment = if terms.control { u.m / c.eps2_12 } else { 0.0 };
            scatter_flux(&mut out, &flux, moment, fpsi, nf);
            for i in 1..=n {
                let wt = weight(i, n) * dx;
                let coupling = if i < n {
                    if terms.elastic {
                        rot * ((at(w, i + 1) - at(w, i - 1)) / (2.0 * dx) + at(psi, i))
                    } else {
                        0.0
                    }
                } else if terms.control {
                    // Ghost from the shear condition: D0 w_N + psi_N = g / a3.
                    u.g / c.eps2_12
                } else {
                    0.0
                };
                out[dof(i, fpsi, nf)] -= wt * coupling;
            }

            // Transverse: shear fluxes a3 (D+ w + mean psi), shear force at the tip.
            let nu_w = self.viscosity_coefficient(Field::W);
            let mut flux = vec![0.0; n];
            for (e, phi) in flux.iter_mut().enumerate() {
                let mut s = 0.0;
                if terms.elastic {
                    s += c.shear * (dplus(w, e) + 0.5 * (at(psi, e) + at(psi, e + 1)));
                }
                if terms.viscous {
                    s += nu_w * dplus(wd, e);
                }
                *phi = s;
            }
            let shear = if terms.control { u.g } else { 0.0 };
            scatter_flux(&mut out, &flux, shear, fw, nf);
        } else {
            self.eb_bending(&mut out, state, u, terms, fw);
        }

        if nonlinear_model && terms.nonlinear && (terms.elastic || terms.control) {
            self.nonlinear_w(&mut out, state, u, terms, fw);
        }

        if terms.forcing {
            if let Some(forcing) = forcing {
                for (f, &field) in self.model.fields().iter().enumerate() {
                    if let Some(src) = forcing.get(field) {
                        let inertia = if field == Field::P { c.mu_hat } else { 1.0 };
                        for i in 1..=n {
                            out[dof(i, f, nf)] += inertia * weight(i, n) * dx * src[i - 1];
                        }
                    }
                }
            }
        }
        out
    }

    /// Bending, rotary-inertia filter and tip inputs of the Euler-Bernoulli w.
    fn eb_bending(&self, out: &mut [f64], state: &BeamState, u: &ControlInput, terms: Terms, fw: usize) {
        let n = self.grid.n;
        let dx = self.grid.dx();
        let nf = self.nf;
        let c = self.coef;
        let w = state.value(Field::W).unwrap();
        let wd = state.rate(Field::W).unwrap();
        let at = |z: &[f64], i: usize| z[i + OFFSET];

        // Curvature energy sum_{i<N} omega_i b (D2 w_i)^2 dx / 2, omega_0 = 1/2,
        // with w_{-1} = w_1; its gradient gives the D4 rows.
        let mut curvature_terms: Vec<(f64, &[f64])> = Vec::new();
        if terms.elastic {
            curvature_terms.push((c.kappa * c.eps2_12, w));
        }
        if terms.viscous && self.kv() > 0.0 {
            curvature_terms.push((self.kv() * c.eps2_12, wd));
        }
        let inv_dx2 = 1.0 / (dx * dx);
        for (b, z) in curvature_terms {
            let c0 = 0.5 * b * (2.0 * at(z, 1) * inv_dx2) * dx;
            out[dof(1, fw, nf)] -= c0 * 2.0 * inv_dx2;
            for i in 1..n {
                let d2 = (at(z, i + 1) - 2.0 * at(z, i) + at(z, i - 1)) * inv_dx2;
                let ci = b * d2 * dx;
                if i > 1 {
                    out[dof(i - 1, fw, nf)] -= ci * inv_dx2;
                }
                out[dof(i, fw, nf)] += 2.0 * ci * inv_dx2;
                out[dof(i + 1, fw, nf)] -= ci * inv_dx2;
            }
        }

        if terms.viscous {
            let nu = self.viscosity_coefficient(Field::W);
            if nu > 0.0 {
                for e in 0..n {
                    let s = nu * (at(wd, e + 1) - at(wd, e)) / dx;
                    out[dof(e + 1, fw, nf)] -= s;
                    if e >= 1 {
                        out[dof(e, fw, nf)] += s;
                    }
                }
            }
        }

        if terms.control {
            out[dof(n, fw, nf)] += u.g;
            let r = u.m / (2.0 * dx);
            out[dof(n, fw, nf)] -= 3.0 * r;
            out[dof(n - 1, fw, nf)] += 4.0 * r;
            out[dof(n - 2, fw, nf)] -= r;
        }
    }

    /// Stretching-bending coupling and the distributed voltage term.
    fn nonlinear_w(&self, out: &mut [f64], state: &BeamState, u: &ControlInput, terms: Terms, fw: usize) {
        let n = self.grid.n;
        let dx = self.grid.dx();
        let nf = self.nf;
        let v = state.value(Field::V).unwrap();
        let w = state.value(Field::W).unwrap();
        let at = |z: &[f64], i: usize| z[i + OFFSET];
        let dplus = |z: &[f64], e: usize| (at(z, e + 1) - at(z, e)) / dx;
        let voltage = if terms.control { u.v } else { 0.0 };
        let elastic = if terms.elastic { 1.0 } else { 0.0 };

        match self.options.nonlinear_form {
            NonlinearForm::Conservative => {
                for e in 0..n {
                    let sw = dplus(w, e);
                    let s = elastic * (dplus(v, e) + 0.5 * sw * sw) + voltage;
                    let t = s * sw;
                    out[dof(e + 1, fw, nf)] -= t;
                    if e >= 1 {
                        out[dof(e, fw, nf)] += t;
                    }
                }
            }
            NonlinearForm::Printed => {
                for i in 1..n {
                    let d0v = (at(v, i + 1) - at(v, i - 1)) / (2.0 * dx);
                    let d0w = (at(w, i + 1) - at(w, i - 1)) / (2.0 * dx);
                    let d2v = (at(v, i + 1) - 2.0 * at(v, i) + at(v, i - 1)) / (dx * dx);
                    let d2w = (at(w, i + 1) - 2.0 * at(w, i) + at(w, i - 1)) / (dx * dx);
                    let stretch = d0v * d2w + d2v * d0w + 1.5 * d0w * d0w * d2w;
                    out[dof(i, fw, nf)] += dx * (elastic * stretch + voltage * d2w);
                }
                let sw = dplus(w, n - 1);
                let s = elastic * (dplus(v, n - 1) + 0.5 * sw * sw) + voltage;
                out[dof(n, fw, nf)] -= s * sw;
            }
        }
    }

    /// Full right-hand side `F`.
    pub fn forces(&self, state: &BeamState, u: &ControlInput, forcing: Option<&ForcingFields>) -> Vec<f64> {
        self.assemble(state, u, forcing, Terms::ALL)
    }

    /// Solves `M a = F` for the accelerations.
    pub fn accelerations(&self, state: &BeamState, u: &ControlInput, forcing: Option<&ForcingFields>) -> Vec<f64> {
        self.mass_lu.solve(&self.forces(state, u, forcing))
    }

    /// Power of the filter and Kelvin-Voigt terms (nonpositive).
    pub fn viscous_power(&self, state: &BeamState) -> f64 {
        let f = self.assemble(state, &ControlInput::ZERO, None, Terms::VISCOUS);
        self.power(state, &f)
    }

    /// Power delivered by the boundary and voltage inputs.
    pub fn control_power(&self, state: &BeamState, u: &ControlInput) -> f64 {
        let f = self.assemble(state, u, None, Terms::CONTROL);
        self.power(state, &f)
    }

    /// Pairs generalized forces with velocities in energy units; rotation
    /// rows of the M-T system are written per unit rotary inertia.
    fn power(&self, state: &BeamState, f: &[f64]) -> f64 {
        let (_, mut qd) = self.pack(state).expect("state matches system");
        if let Some(k) = self.model.fields().iter().position(|&g| g == Field::Psi) {
            for i in 1..=self.grid.n {
                qd[dof(i, k, self.nf)] *= self.coef.eps2_12;
            }
        }
        dot(f, &qd)
    }

    /// Dense matrix of the elastic linear forces: F = -K q.
    pub fn stiffness_dense(&self) -> DMatrix<f64> {
        let ndof = self.dof_count();
        let zeros = vec![0.0; ndof];
        let terms = Terms { elastic: true, viscous: false, control: false, nonlinear: false, forcing: false };
        let mut k = DMatrix::zeros(ndof, ndof);
        let mut e = vec![0.0; ndof];
        for j in 0..ndof {
            e[j] = 1.0;
            let s = self.unpack(&e, &zeros, 0.0);
            let f = self.assemble(&s, &ControlInput::ZERO, None, terms);
            for i in 0..ndof {
                k[(i, j)] = -f[i];
            }
            e[j] = 0.0;
        }
        k
    }
}

#[inline]
fn dof(i: usize, f: usize, nf: usize) -> usize {
    (i - 1) * nf + f
}

/// Trapezoid weight of node i (half at the free end).
#[inline]
pub(crate) fn weight(i: usize, n: usize) -> f64 {
    if i == n {
        0.5
    } else {
        1.0
    }
}

/// Adds the divergence of edge fluxes, closing the last node with `boundary`.
fn scatter_flux(out: &mut [f64], flux: &[f64], boundary: f64, f: usize, nf: usize) {
    let n = flux.len();
    for i in 1..n {
        out[dof(i, f, nf)] += flux[i] - flux[i - 1];
    }
    out[dof(n, f, nf)] += boundary - flux[n - 1];
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
