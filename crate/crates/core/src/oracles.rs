//! Independent reference values: clamped-free wave frequencies, Richardson
//! order estimates, manufactured solutions and modal extraction.

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::OnceLock;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::controllers::{ControlInput, OpenLoop};
use crate::error::{Error, Result};
use crate::integrator::{BeamDynamics, IntegratorConfig, Stepper};
use crate::models::{ForcingFields, ModelOptions, SemiDiscreteSystem};
use crate::params::{GridSpec, MaterialParams};
use crate::state::{reflect_clamped_end, BeamState, Field, ModelKind, OFFSET};
use crate::stencils::{fit_stencil, StencilApplication};

/// Nondimensional angular frequency (2k - 1) pi / 2 of the k-th
/// clamped-free mode of v_tt = v_xx on [0, 1].
pub fn wave_mode_frequency(k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidParameter("mode index starts at 1".into()));
    }
    Ok((2 * k - 1) as f64 * FRAC_PI_2)
}

/// The same frequency in rad/s: (2k - 1) (pi / 2L) sqrt(alpha11 / rho).
pub fn wave_mode_frequency_dimensional(k: usize, params: &MaterialParams) -> Result<f64> {
    Ok(wave_mode_frequency(k)? / params.scales().time)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrderEstimate {
    /// log2 of successive error ratios.
    pub orders: Vec<f64>,
    /// Mean of `orders`.
    pub order: f64,
    /// max - min of `orders`.
    pub spread: f64,
}

/// Observed orders from errors on a sequence of halved steps.
/// Non-positive or non-decreasing errors are reported as inconclusive.
pub fn richardson_order(errors: &[f64]) -> Result<OrderEstimate> {
    if errors.len() < 3 {
        return Err(Error::Inconclusive(format!("need at least three levels, got {}", errors.len())));
    }
    if errors.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(Error::Inconclusive(format!("errors must be positive: {errors:?}")));
    }
    if errors.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Inconclusive(format!("errors do not decrease: {errors:?}")));
    }
    let orders: Vec<f64> = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    let order = orders.iter().sum::<f64>() / orders.len() as f64;
    let spread = orders.iter().cloned().fold(f64::MIN, f64::max) - orders.iter().cloned().fold(f64::MAX, f64::min);
    Ok(OrderEstimate { orders, order, spread })
}

/// Spatial factor of a separable manufactured field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SpaceProfile {
    Zero,
    /// sin(k x): odd about the clamp.
    Sine(f64),
    /// 1 - cos(k x): even about the clamp, zero slope there.
    OneMinusCos(f64),
    /// Ascending coefficients.
    Polynomial(Vec<f64>),
}

impl SpaceProfile {
    pub fn derivative(&self, n: usize, x: f64) -> f64 {
        match self {
            SpaceProfile::Zero => 0.0,
            SpaceProfile::Sine(k) => k.powi(n as i32) * (k * x + n as f64 * FRAC_PI_2).sin(),
            SpaceProfile::OneMinusCos(k) => {
                let c = k.powi(n as i32) * (k * x + n as f64 * FRAC_PI_2).cos();
                if n == 0 {
                    1.0 - c
                } else {
                    -c
                }
            }
            SpaceProfile::Polynomial(c) => {
                let mut acc = 0.0;
                for (p, &a) in c.iter().enumerate().skip(n).rev() {
                    let falling: f64 = (p - n + 1..=p).map(|j| j as f64).product();
                    acc = acc * x + a * falling;
                }
                acc
            }
        }
    }
}

/// amplitude * X(x) * cos(omega t + phase).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Separable {
    pub amplitude: f64,
    pub space: SpaceProfile,
    pub omega: f64,
    pub phase: f64,
}

impl Separable {
    pub fn zero() -> Self {
        Self { amplitude: 0.0, space: SpaceProfile::Zero, omega: 0.0, phase: 0.0 }
    }

    pub fn new(amplitude: f64, space: SpaceProfile, omega: f64, phase: f64) -> Self {
        Self { amplitude, space, omega, phase }
    }

    /// d^nt/dt^nt d^nx/dx^nx of the field.
    pub fn derivative(&self, nt: usize, nx: usize, x: f64, t: f64) -> f64 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        let time = self.omega.powi(nt as i32) * (self.omega * t + self.phase + nt as f64 * FRAC_PI_2).cos();
        self.amplitude * self.space.derivative(nx, x) * time
    }

    pub fn value(&self, x: f64, t: f64) -> f64 {
        self.derivative(0, 0, x, t)
    }
}

/// Closed-form fields whose residual in the continuous equations is fed
/// back as a source, so the scheme should reproduce them up to its
/// truncation error. Boundary inputs are taken from the exact solution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManufacturedCase {
    pub v: Separable,
    pub w: Separable,
    pub psi: Separable,
    pub p: Separable,
}

/// Per-field source densities at one point.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Residual {
    pub v: f64,
    pub w: f64,
    pub psi: f64,
    pub p: f64,
}

impl ManufacturedCase {
    pub fn zero() -> Self {
        Self { v: Separable::zero(), w: Separable::zero(), psi: Separable::zero(), p: Separable::zero() }
    }

    /// v = sin(pi x / 2) cos t, all else zero.
    pub fn quarter_wave() -> Self {
        Self { v: Separable::new(1.0, SpaceProfile::Sine(FRAC_PI_2), 1.0, 0.0), ..Self::zero() }
    }

    /// w = x^2 (x - 1)^2 cos t plus a small axial field.
    pub fn quartic_bending() -> Self {
        Self {
            v: Separable::new(0.01, SpaceProfile::Sine(FRAC_PI_2), 1.0, 0.0),
            w: Separable::new(1.0, SpaceProfile::Polynomial(vec![0.0, 0.0, 1.0, -2.0, 1.0]), 1.0, 0.0),
            ..Self::zero()
        }
    }

    /// Fields compatible with the clamp reflection of `model`, with
    /// nonlinear terms of the same order as the linear ones.
    pub fn smooth(model: ModelKind) -> Self {
        let transverse = if model.is_timoshenko() {
            SpaceProfile::Sine(0.75 * PI)
        } else {
            SpaceProfile::OneMinusCos(0.75 * PI)
        };
        Self {
            v: Separable::new(0.02, SpaceProfile::Sine(FRAC_PI_2), 1.0, 0.2),
            w: Separable::new(0.1, transverse, 1.3, 0.0),
            psi: if model.is_timoshenko() {
                Separable::new(-0.1, SpaceProfile::Sine(0.6 * PI), 1.3, 0.1)
            } else {
                Separable::zero()
            },
            p: if model.is_fully_dynamic() {
                Separable::new(0.05, SpaceProfile::Sine(FRAC_PI_2), 0.9, 0.0)
            } else {
                Separable::zero()
            },
        }
    }

    pub fn field(&self, field: Field) -> &Separable {
        match field {
            Field::V => &self.v,
            Field::W => &self.w,
            Field::Psi => &self.psi,
            Field::P => &self.p,
        }
    }

    /// Exact state on the grid; the clamp reflection defines the left ghosts.
    pub fn exact_state(&self, model: ModelKind, grid: GridSpec, t: f64) -> BeamState {
        let mut s = BeamState::zeros(model, grid);
        s.t = t;
        for &f in model.fields() {
            let sep = self.field(f).clone();
            let z = s.value_mut(f).unwrap();
            for i in 1..=grid.n {
                z[i + OFFSET] = sep.value(grid.x(i as isize), t);
            }
            let zd = s.rate_mut(f).unwrap();
            for i in 1..=grid.n {
                zd[i + OFFSET] = sep.derivative(1, 0, grid.x(i as isize), t);
            }
        }
        reflect_clamped_end(&mut s);
        s
    }

    /// Open-loop boundary inputs that the exact fields satisfy.
    pub fn boundary_inputs(&self, sys: &SemiDiscreteSystem, t: f64) -> ControlInput {
        let d = |f: Field, nt: usize, nx: usize, x: f64| self.field(f).derivative(nt, nx, x, t);
        boundary_inputs_with(sys, sys.grid().length, &d)
    }

    /// Continuous residual at (x, t) from analytic derivatives.
    pub fn residual(&self, sys: &SemiDiscreteSystem, x: f64, t: f64) -> Residual {
        let d = |f: Field, nt: usize, nx: usize, x: f64| self.field(f).derivative(nt, nx, x, t);
        residual_with(sys, x, &d)
    }

    /// Continuous residual from sixth-order finite differences with step `h`
    /// in both x and t; an independent check on [`Self::residual`].
    pub fn residual_fd(&self, sys: &SemiDiscreteSystem, x: f64, t: f64, h: f64) -> Residual {
        let d = |f: Field, nt: usize, nx: usize, x: f64| {
            let sep = self.field(f);
            fd_mixed(&|xx, tt| sep.value(xx, tt), nt, nx, x, t, h)
        };
        residual_with(sys, x, &d)
    }

    /// Largest relative gap between analytic and finite-difference residuals
    /// over the grid nodes.
    pub fn verify_derivatives(&self, sys: &SemiDiscreteSystem, t: f64, h: f64) -> f64 {
        let grid = sys.grid();
        let mut worst = 0.0f64;
        for i in 1..=grid.n {
            let x = grid.x(i as isize);
            let a = self.residual(sys, x, t);
            let b = self.residual_fd(sys, x, t, h);
            for (p, q) in [(a.v, b.v), (a.w, b.w), (a.psi, b.psi), (a.p, b.p)] {
                worst = worst.max((p - q).abs() / p.abs().max(1.0));
            }
        }
        worst
    }
}

type Deriv<'a> = dyn Fn(Field, usize, usize, f64) -> f64 + 'a;

fn residual_with(sys: &SemiDiscreteSystem, x: f64, d: &Deriv) -> Residual {
    let model = sys.model();
    let c = *sys.coefficients();
    let kv = sys.kv();
    let nl = if model.is_nonlinear() { 1.0 } else { 0.0 };
    let nu_v = sys.viscosity_coefficient(Field::V);
    let nu_w = sys.viscosity_coefficient(Field::W);
    let u = boundary_inputs_with(sys, sys.grid().length, d);

    let mut r = Residual::default();
    let (vx, vxx) = (d(Field::V, 0, 1, x), d(Field::V, 0, 2, x));
    let (wx, wxx) = (d(Field::W, 0, 1, x), d(Field::W, 0, 2, x));
    let s = vx + 0.5 * nl * wx * wx;
    let sx = vxx + nl * wx * wxx;
    let damp_vx = (nu_v + kv) * d(Field::V, 1, 2, x);
    let flux_vx = if model.is_fully_dynamic() { c.kappa * vxx - c.theta * d(Field::P, 0, 2, x) } else { sx };
    r.v = d(Field::V, 2, 0, x) - flux_vx - damp_vx;
    let stretch = nl * (sx * wx + (s + u.v) * wxx);
    if model.is_timoshenko() {
        let (psi, psix) = (d(Field::Psi, 0, 0, x), d(Field::Psi, 0, 1, x));
        let nu_psi = sys.viscosity_coefficient(Field::Psi);
        r.psi = d(Field::Psi, 2, 0, x) - c.kappa * d(Field::Psi, 0, 2, x) - (kv + nu_psi) * d(Field::Psi, 1, 2, x)
            + c.rotation_stiffness() * (wx + psi);
        r.w = d(Field::W, 2, 0, x) - c.shear * (wxx + psix) - nu_w * d(Field::W, 1, 2, x) - stretch;
    } else {
        r.w = d(Field::W, 2, 0, x) - c.eps2_12 * d(Field::W, 2, 2, x)
            + c.eps2_12 * (c.kappa * d(Field::W, 0, 4, x) + kv * d(Field::W, 1, 4, x))
            - nu_w * d(Field::W, 1, 2, x)
            - stretch;
    }
    if model.is_fully_dynamic() {
        r.p = d(Field::P, 2, 0, x) - (d(Field::P, 0, 2, x) - c.theta * vxx) / c.mu_hat;
    }
    r
}

fn boundary_inputs_with(sys: &SemiDiscreteSystem, l: f64, d: &Deriv) -> ControlInput {
    let model = sys.model();
    let c = *sys.coefficients();
    let kv = sys.kv();
    let nl = if model.is_nonlinear() { 1.0 } else { 0.0 };
    let nu_v = sys.viscosity_coefficient(Field::V);
    let nu_w = sys.viscosity_coefficient(Field::W);
    let vx = d(Field::V, 0, 1, l);
    let wx = d(Field::W, 0, 1, l);
    let damp_v = (nu_v + kv) * d(Field::V, 1, 1, l);
    let mut u = ControlInput::ZERO;
    if model.is_fully_dynamic() {
        let px = d(Field::P, 0, 1, l);
        u.g1 = c.kappa * vx - c.theta * px + damp_v;
        u.v = -(px - c.theta * vx);
    } else {
        u.v = -(vx + 0.5 * nl * wx * wx + damp_v);
    }
    let s = vx + 0.5 * nl * wx * wx;
    let axial = nl * (s + u.v) * wx;
    if model.is_timoshenko() {
        let nu_psi = sys.viscosity_coefficient(Field::Psi);
        u.m = c.eps2_12 * (c.kappa * d(Field::Psi, 0, 1, l) + (kv + nu_psi) * d(Field::Psi, 1, 1, l));
        u.g = c.shear * (wx + d(Field::Psi, 0, 0, l)) + nu_w * d(Field::W, 1, 1, l) + axial;
    } else {
        u.m = -c.eps2_12 * (c.kappa * d(Field::W, 0, 2, l) + kv * d(Field::W, 1, 2, l));
        u.g = c.eps2_12 * d(Field::W, 2, 1, l) - c.eps2_12 * (c.kappa * d(Field::W, 0, 3, l) + kv * d(Field::W, 1, 3, l))
            + nu_w * d(Field::W, 1, 1, l)
            + axial;
    }
    u
}

/// Sixth-order central stencil for the n-th derivative (1 <= n <= 4).
fn sixth_order(n: usize) -> &'static StencilApplication {
    static CELL: OnceLock<Vec<StencilApplication>> = OnceLock::new();
    &CELL.get_or_init(|| {
        (1..=4)
            .map(|d| {
                let half: isize = if d <= 2 { 3 } else { 4 };
                fit_stencil(&(-half..=half).collect::<Vec<_>>(), d as u32)
            })
            .collect()
    })[n - 1]
}

/// Mixed derivative by nested sixth-order differences. Derivatives of total
/// order above two use a step of 5h: at h = 1e-3 rounding (~ eps / h^4)
/// would otherwise swamp the fourth-order terms.
fn fd_mixed(f: &dyn Fn(f64, f64) -> f64, nt: usize, nx: usize, x: f64, t: f64, h: f64) -> f64 {
    let h = if nt + nx > 2 { 5.0 * h } else { h };
    let in_x = |tt: f64| if nx == 0 { f(x, tt) } else { sixth_order(nx).apply_fn(|xx| f(xx, tt), x, h) };
    if nt == 0 {
        in_x(t)
    } else {
        sixth_order(nt).apply_fn(in_x, t, h)
    }
}

/// Source arrays at time `t` for injection into the scheme.
pub fn mms_forcing(case: &ManufacturedCase, sys: &SemiDiscreteSystem, t: f64) -> ForcingFields {
    let grid = sys.grid();
    let res: Vec<Residual> = (1..=grid.n).map(|i| case.residual(sys, grid.x(i as isize), t)).collect();
    let sources = sys
        .model()
        .fields()
        .iter()
        .map(|&f| {
            let vals = res
                .iter()
                .map(|r| match f {
                    Field::V => r.v,
                    Field::W => r.w,
                    Field::Psi => r.psi,
                    Field::P => r.p,
                })
                .collect();
            (f, vals)
        })
        .collect();
    ForcingFields { sources }
}

/// Max nodal error per field after integrating a manufactured case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmsErrors {
    pub fields: Vec<(Field, f64)>,
    /// Largest of the per-field errors.
    pub max: f64,
}

/// Integrates the forced system from the exact initial state to `t_end`
/// and returns the final unknowns.
pub fn mms_final_state(
    case: &ManufacturedCase,
    sys: &SemiDiscreteSystem,
    config: IntegratorConfig,
    t_end: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let law = OpenLoop(|t: f64| case.boundary_inputs(sys, t));
    let forcing = |t: f64| mms_forcing(case, sys, t);
    let dynamics = BeamDynamics::new(sys, &law).with_forcing(&forcing);
    let mut stepper = Stepper::new(&dynamics, config)?;
    let s0 = case.exact_state(sys.model(), sys.grid(), 0.0);
    let (mut q, mut qd) = sys.pack(&s0)?;
    let steps = (t_end / config.dt).round() as usize;
    for k in 0..steps {
        stepper.advance(&mut q, &mut qd, k as f64 * config.dt)?;
    }
    Ok((q, qd))
}

pub fn mms_errors(
    case: &ManufacturedCase,
    sys: &SemiDiscreteSystem,
    config: IntegratorConfig,
    t_end: f64,
) -> Result<MmsErrors> {
    let (q, qd) = mms_final_state(case, sys, config, t_end)?;
    let t = (t_end / config.dt).round() * config.dt;
    let got = sys.unpack(&q, &qd, t);
    let exact = case.exact_state(sys.model(), sys.grid(), t);
    let n = sys.grid().n;
    let fields: Vec<(Field, f64)> = sys
        .model()
        .fields()
        .iter()
        .map(|&f| {
            let e = (1..=n as isize).map(|i| (got.at(f, i) - exact.at(f, i)).abs()).fold(0.0, f64::max);
            (f, e)
        })
        .collect();
    let max = fields.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(MmsErrors { fields, max })
}

/// Lowest `count` angular frequencies of the linear axial subsystem,
/// from the generalized eigenproblem K x = omega^2 M x.
pub fn axial_mode_frequencies(params: &MaterialParams, grid: GridSpec, count: usize) -> Result<Vec<f64>> {
    let sys = SemiDiscreteSystem::new(ModelKind::EbLinear, params, grid, ModelOptions::conservative())?;
    let k = sys.stiffness_dense();
    let idx: Vec<usize> = (1..=grid.n).map(|i| sys.dof_index(Field::V, i).unwrap()).collect();
    let m: Vec<f64> = idx.iter().map(|&i| sys.mass().get(i, i)).collect();
    let a = DMatrix::from_fn(idx.len(), idx.len(), |r, c| k[(idx[r], idx[c])] / (m[r] * m[c]).sqrt());
    let mut eig: Vec<f64> = a.symmetric_eigenvalues().iter().map(|l| l.max(0.0).sqrt()).collect();
    eig.sort_by(|x, y| x.total_cmp(y));
    eig.truncate(count);
    Ok(eig)
}

/// Frequencies of the `count` strongest spectral peaks of a uniformly
/// sampled signal below `max_omega`, from a Hann-windowed DFT scanned on a
/// fine grid and refined by golden-section search.
pub fn spectral_peaks(signal: &[f64], dt: f64, max_omega: f64, count: usize) -> Vec<f64> {
    let n = signal.len();
    let mean = signal.iter().sum::<f64>() / n as f64;
    let windowed: Vec<f64> = signal
        .iter()
        .enumerate()
        .map(|(k, s)| (s - mean) * (0.5 - 0.5 * (2.0 * PI * k as f64 / (n - 1) as f64).cos()))
        .collect();
    let power = |omega: f64| {
        // Rotate a unit phasor instead of calling sin/cos per sample.
        let (c, sn) = ((omega * dt).cos(), (omega * dt).sin());
        let (mut pr, mut pi) = (1.0, 0.0);
        let (mut re, mut im) = (0.0, 0.0);
        for s in &windowed {
            re += s * pr;
            im -= s * pi;
            (pr, pi) = (pr * c - pi * sn, pi * c + pr * sn);
        }
        re * re + im * im
    };
    let span = n as f64 * dt;
    let step = PI / span / 4.0;
    let grid: Vec<f64> = (1..).map(|k| k as f64 * step).take_while(|&w| w < max_omega).collect();
    let vals: Vec<f64> = grid.iter().map(|&w| power(w)).collect();
    let mut coarse: Vec<usize> = (1..vals.len().saturating_sub(1))
        .filter(|&k| vals[k] > vals[k - 1] && vals[k] >= vals[k + 1])
        .collect();
    coarse.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    coarse.truncate(count);
    let golden = 0.5 * (5f64.sqrt() - 1.0);
    let peaks: Vec<f64> = coarse
        .into_iter()
        .map(|k| {
            let (mut a, mut b) = (grid[k - 1], grid[k + 1]);
            for _ in 0..40 {
                let c = b - golden * (b - a);
                let d = a + golden * (b - a);
                if power(c) > power(d) {
                    b = d;
                } else {
                    a = c;
                }
            }
            0.5 * (a + b)
        })
        .collect();
    let mut out = peaks;
    out.sort_by(|x, y| x.total_cmp(y));
    out
}
