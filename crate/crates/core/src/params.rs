//! Material constants, nondimensional groups and the spatial grid.
//!
//! All models are integrated in nondimensional form: x* = x/L, t* = t/A1
//! with A1 = L·sqrt(rho/alpha11), and displacements scaled by L. See
//! `docs/nondimensionalization.md` for the derivation of every group below.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::state::ModelKind;

/// Vacuum permeability, used when no permeability is configured.
pub const VACUUM_PERMEABILITY: f64 = 1.256_637_062_12e-6;

/// Physical constants of a single piezoelectric beam (SI units).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MaterialParams {
    /// Volume density (kg/m^3).
    pub rho: f64,
    /// Thickness (m).
    pub h: f64,
    /// Length (m).
    pub length: f64,
    /// Elastic modulus alpha11 (N/m^2).
    pub alpha11: f64,
    /// Electromechanical coupling gamma3 (C/m^2).
    pub gamma3: f64,
    /// Inverse permittivity beta3 (m/F).
    pub beta3: f64,
    /// Shear modulus alpha3 (N/m^2), Mindlin-Timoshenko only.
    pub alpha3: f64,
    /// Magnetic permeability (H/m), fully dynamic model only.
    pub mu: f64,
    /// Kelvin-Voigt damping coefficient (N s/m^2); zero disables it.
    pub kv_alpha_tilde: f64,
}

impl Default for MaterialParams {
    fn default() -> Self {
        Self {
            rho: 7600.0,
            h: 0.01,
            length: 1.0,
            alpha11: 1.4e7,
            gamma3: 1.0e-3,
            beta3: 1.0e6,
            alpha3: 4.5e5,
            mu: VACUUM_PERMEABILITY,
            kv_alpha_tilde: 0.0,
        }
    }
}

impl MaterialParams {
    /// alpha1 = alpha11 + gamma3^2 beta3.
    pub fn alpha1(&self) -> f64 {
        self.alpha11 + self.gamma3 * self.gamma3 * self.beta3
    }

    pub fn validate(&self, model: ModelKind) -> Result<()> {
        let positive = [
            ("rho", self.rho),
            ("h", self.h),
            ("length", self.length),
            ("alpha11", self.alpha11),
            ("beta3", self.beta3),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {value}")));
            }
        }
        if !(self.gamma3 >= 0.0 && self.gamma3.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma3 must be nonnegative, got {}", self.gamma3)));
        }
        if !(self.kv_alpha_tilde >= 0.0 && self.kv_alpha_tilde.is_finite()) {
            return Err(Error::InvalidParameter("kv_alpha_tilde must be nonnegative".into()));
        }
        if model.is_timoshenko() && !(self.alpha3 > 0.0 && self.alpha3.is_finite()) {
            return Err(Error::InvalidParameter("alpha3 must be positive for Mindlin-Timoshenko".into()));
        }
        if model.is_fully_dynamic() && !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidParameter("mu must be positive for the fully dynamic model".into()));
        }
        if self.h >= self.length {
            return Err(Error::InvalidParameter(format!(
                "thin-beam regime requires h/L < 1, got {}",
                self.h / self.length
            )));
        }
        Ok(())
    }

    pub fn scales(&self) -> NondimScales {
        derive_nondim(self)
    }

    pub fn coefficients(&self) -> Coefficients {
        let scales = self.scales();
        let eps = self.h / self.length;
        Coefficients {
            eps2_12: eps * eps / 12.0,
            kappa: self.alpha1() / self.alpha11,
            shear: self.alpha3 / self.alpha11,
            theta: self.gamma3 * (self.beta3 / self.alpha11).sqrt(),
            mu_hat: self.mu * self.alpha11 / (self.rho * self.beta3),
            kv: self.kv_alpha_tilde / (self.alpha11 * scales.time),
        }
    }
}

/// Scale factors mapping nondimensional quantities back to SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NondimScales {
    /// A1 = L sqrt(rho/alpha11) (s).
    pub time: f64,
    /// L (m); also the displacement scale.
    pub length: f64,
    /// Charge-per-length scale L sqrt(alpha11/beta3) (C/m).
    pub charge: f64,
    /// Voltage scale of the electrostatic models, alpha11 h / gamma3 (V).
    pub voltage_electrostatic: f64,
    /// Voltage scale of the fully dynamic model, h sqrt(alpha11 beta3) (V).
    pub voltage_fully_dynamic: f64,
    /// Force resultant scale alpha11 h (N/m).
    pub force: f64,
    /// Moment scale alpha11 h L (N).
    pub moment: f64,
    /// Energy scale alpha11 h L (J/m).
    pub energy: f64,
}

/// Computes the nondimensionalization constants for `params`.
pub fn derive_nondim(params: &MaterialParams) -> NondimScales {
    let time = params.length * (params.rho / params.alpha11).sqrt();
    let voltage_electrostatic = if params.gamma3 > 0.0 {
        params.alpha11 * params.h / params.gamma3
    } else {
        f64::INFINITY
    };
    NondimScales {
        time,
        length: params.length,
        charge: params.length * (params.alpha11 / params.beta3).sqrt(),
        voltage_electrostatic,
        voltage_fully_dynamic: params.h * (params.alpha11 * params.beta3).sqrt(),
        force: params.alpha11 * params.h,
        moment: params.alpha11 * params.h * params.length,
        energy: params.alpha11 * params.h * params.length,
    }
}

/// Dimensionless groups that appear in the nondimensional equations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficients {
    /// (h/L)^2 / 12: rotary inertia and bending prefactor.
    pub eps2_12: f64,
    /// alpha1 / alpha11.
    pub kappa: f64,
    /// alpha3 / alpha11.
    pub shear: f64,
    /// gamma3 sqrt(beta3/alpha11): electro-elastic cross coupling.
    pub theta: f64,
    /// mu alpha11 / (rho beta3): charge inertia.
    pub mu_hat: f64,
    /// Kelvin-Voigt coefficient alpha1~ / (alpha11 A1).
    pub kv: f64,
}

impl Coefficients {
    /// Unit coefficients; handy for tests and manufactured solutions.
    pub fn unit() -> Self {
        Self {
            eps2_12: 1.0 / 12.0,
            kappa: 1.0,
            shear: 1.0,
            theta: 0.0,
            mu_hat: 1.0,
            kv: 0.0,
        }
    }

    /// Rotation stiffness 12 alpha3 L^2 / (alpha11 h^2) of the psi equation.
    pub fn rotation_stiffness(&self) -> f64 {
        self.shear / self.eps2_12
    }
}

/// Uniform grid on the nondimensional interval [0, length] with one ghost
/// node beyond each end. Node i sits at x_i = i dx for i = -1..=N+1, so
/// x_N = length is the free end.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    pub length: f64,
}

impl GridSpec {
    pub fn new(n: usize) -> Result<Self> {
        Self::with_length(n, 1.0)
    }

    pub fn with_length(n: usize, length: f64) -> Result<Self> {
        if n < 8 {
            return Err(Error::InvalidGrid(format!("N must be at least 8, got {n}")));
        }
        if n % 2 != 0 {
            return Err(Error::InvalidGrid(format!("N must be even for Simpson quadrature, got {n}")));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::InvalidGrid(format!("length must be positive, got {length}")));
        }
        Ok(Self { n, length })
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n as f64
    }

    /// Coordinate of node `i` (ghosts at -1 and N+1).
    pub fn x(&self, i: isize) -> f64 {
        i as f64 * self.dx()
    }

    /// Number of stored nodes including both ghosts.
    pub fn stored_len(&self) -> usize {
        self.n + 3
    }

    /// Coordinates of every stored node, ghosts included.
    pub fn coordinates(&self) -> Vec<f64> {
        (-1..=self.n as isize + 1).map(|i| self.x(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn reference_time_scale() {
        let s = derive_nondim(&MaterialParams::default());
        assert!((0.0228..=0.0238).contains(&s.time), "A1 = {}", s.time);
        assert_relative_eq!(s.time, 0.023_299_3, max_relative = 1e-5);
    }

    #[test]
    fn unit_ratio_time_scale() {
        let p = MaterialParams { rho: 3.0, alpha11: 3.0, gamma3: 0.0, ..Default::default() };
        assert_eq!(derive_nondim(&p).time, 1.0);
        let p = MaterialParams { rho: 8.0, alpha11: 2.0, length: 2.0, h: 0.1, ..Default::default() };
        assert_relative_eq!(derive_nondim(&p).time, 4.0, max_relative = 1e-15);
    }

    #[test]
    fn alpha1_exceeds_alpha11_by_coupling() {
        let p = MaterialParams { gamma3: 0.5, beta3: 4.0, alpha11: 11.0, ..Default::default() };
        assert_eq!(p.alpha1() - p.alpha11, 0.5 * 0.5 * 4.0);
        assert!(p.alpha1() >= p.alpha11);
    }

    #[test]
    fn validation_rejects_bad_values() {
        let ok = MaterialParams::default();
        assert!(ok.validate(ModelKind::EbNonlinear).is_ok());
        let thick = MaterialParams { h: 2.0, ..ok };
        assert!(thick.validate(ModelKind::EbNonlinear).is_err());
        let no_shear = MaterialParams { alpha3: 0.0, ..ok };
        assert!(no_shear.validate(ModelKind::EbNonlinear).is_ok());
        assert!(no_shear.validate(ModelKind::MtNonlinear).is_err());
        let no_mu = MaterialParams { mu: 0.0, ..ok };
        assert!(no_mu.validate(ModelKind::EbFullyDynamicLinear).is_err());
        let neg = MaterialParams { rho: -1.0, ..ok };
        assert!(neg.validate(ModelKind::EbLinear).is_err());
    }

    #[test]
    fn grid_layout() {
        assert!(GridSpec::new(7).is_err());
        assert!(GridSpec::new(9).is_err());
        let g = GridSpec::new(60).unwrap();
        assert_eq!(g.dx() * 60.0, 1.0);
        assert_eq!(g.x(60), 1.0);
        assert_eq!(g.coordinates().len(), 63);
        assert!(g.x(-1) < 0.0 && g.x(61) > 1.0);
    }
}
