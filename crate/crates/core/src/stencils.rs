//! Finite-difference kernels.
//!
//! Each kernel indexes directly into a field slice. Offsets are in units of
//! dx; a stencil approximating the d-th derivative divides by dx^d.

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Coefficients of one stencil over integer node offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct StencilApplication {
    pub offsets: Vec<isize>,
    pub coefficients: Vec<f64>,
    /// Derivative order, also the power of dx in the divisor.
    pub derivative: u32,
    /// Formal order of accuracy.
    pub order: u32,
}

impl StencilApplication {
    /// sum_j c_j o_j^k: the k-th moment of the stencil.
    pub fn moment(&self, k: u32) -> f64 {
        self.offsets
            .iter()
            .zip(&self.coefficients)
            .map(|(&o, &c)| c * (o as f64).powi(k as i32))
            .sum()
    }

    /// Checks annihilation of monomials below the derivative order, exactness
    /// on x^d, and vanishing moments up to the formal order.
    pub fn is_consistent(&self, tol: f64) -> bool {
        let d = self.derivative;
        let factorial: f64 = (1..=d).map(f64::from).product();
        (0..d).all(|k| self.moment(k).abs() <= tol)
            && (self.moment(d) - factorial).abs() <= tol * factorial
            && (d + 1..d + self.order).all(|k| self.moment(k).abs() <= tol * factorial)
    }

    pub fn apply(&self, z: &[f64], i: isize, dx: f64) -> Result<f64> {
        let mut acc = 0.0;
        for (&o, &c) in self.offsets.iter().zip(&self.coefficients) {
            acc += c * fetch(z, i + o)?;
        }
        Ok(acc / dx.powi(self.derivative as i32))
    }

    /// Applies the stencil to a function sampled at x + o dx.
    pub fn apply_fn(&self, f: impl Fn(f64) -> f64, x: f64, dx: f64) -> f64 {
        let acc: f64 = self
            .offsets
            .iter()
            .zip(&self.coefficients)
            .map(|(&o, &c)| c * f(x + o as f64 * dx))
            .sum();
        acc / dx.powi(self.derivative as i32)
    }
}

fn fetch(z: &[f64], k: isize) -> Result<f64> {
    if k < 0 || k as usize >= z.len() {
        return Err(Error::IndexOutOfRange { index: k, len: z.len() });
    }
    Ok(z[k as usize])
}

pub fn first_central() -> StencilApplication {
    StencilApplication { offsets: vec![-1, 1], coefficients: vec![-0.5, 0.5], derivative: 1, order: 2 }
}

pub fn first_backward() -> StencilApplication {
    StencilApplication { offsets: vec![-2, -1, 0], coefficients: vec![0.5, -2.0, 1.5], derivative: 1, order: 2 }
}

pub fn second_central() -> StencilApplication {
    StencilApplication { offsets: vec![-1, 0, 1], coefficients: vec![1.0, -2.0, 1.0], derivative: 2, order: 2 }
}

pub fn fourth_central() -> StencilApplication {
    StencilApplication {
        offsets: vec![-2, -1, 0, 1, 2],
        coefficients: vec![1.0, -4.0, 6.0, -4.0, 1.0],
        derivative: 4,
        order: 2,
    }
}

/// Five-point one-sided third derivative ending at the evaluation node,
/// fitted by solving the Vandermonde moment system.
pub fn third_backward() -> StencilApplication {
    static CELL: OnceLock<StencilApplication> = OnceLock::new();
    CELL.get_or_init(|| fit_stencil(&[-4, -3, -2, -1, 0], 3)).clone()
}

/// Fits the unique stencil on `offsets` approximating the `derivative`-th
/// derivative; its order is `offsets.len() - derivative`.
pub fn fit_stencil(offsets: &[isize], derivative: u32) -> StencilApplication {
    let m = offsets.len();
    assert!(m > derivative as usize, "need more points than the derivative order");
    let vander = DMatrix::from_fn(m, m, |k, j| (offsets[j] as f64).powi(k as i32));
    let factorial: f64 = (1..=derivative).map(f64::from).product();
    let mut rhs = DVector::zeros(m);
    rhs[derivative as usize] = factorial;
    let c = vander.lu().solve(&rhs).expect("distinct offsets give a nonsingular Vandermonde system");
    StencilApplication {
        offsets: offsets.to_vec(),
        coefficients: c.iter().copied().collect(),
        derivative,
        order: (m - derivative as usize) as u32,
    }
}

/// (z_{i+1} - z_{i-1}) / (2 dx).
pub fn d1_central(z: &[f64], i: isize, dx: f64) -> Result<f64> {
    Ok((fetch(z, i + 1)? - fetch(z, i - 1)?) / (2.0 * dx))
}

/// (3 z_i - 4 z_{i-1} + z_{i-2}) / (2 dx).
pub fn d1_backward(z: &[f64], i: isize, dx: f64) -> Result<f64> {
    Ok((3.0 * fetch(z, i)? - 4.0 * fetch(z, i - 1)? + fetch(z, i - 2)?) / (2.0 * dx))
}

/// (z_{i+1} - 2 z_i + z_{i-1}) / dx^2.
pub fn d2_central(z: &[f64], i: isize, dx: f64) -> Result<f64> {
    Ok((fetch(z, i + 1)? - 2.0 * fetch(z, i)? + fetch(z, i - 1)?) / (dx * dx))
}

/// (z_{i+2} - 4 z_{i+1} + 6 z_i - 4 z_{i-1} + z_{i-2}) / dx^4.
pub fn d4_central(z: &[f64], i: isize, dx: f64) -> Result<f64> {
    let s = fetch(z, i + 2)? - 4.0 * fetch(z, i + 1)? + 6.0 * fetch(z, i)? - 4.0 * fetch(z, i - 1)?
        + fetch(z, i - 2)?;
    Ok(s / (dx * dx * dx * dx))
}

/// Fitted one-sided third derivative over nodes i-4..=i.
pub fn d3_backward(z: &[f64], i: isize, dx: f64) -> Result<f64> {
    third_backward().apply(z, i, dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(f: impl Fn(f64) -> f64, x0: f64, dx: f64, len: usize) -> Vec<f64> {
        (0..len).map(|k| f(x0 + k as f64 * dx)).collect()
    }

    #[test]
    fn all_stencils_consistent() {
        for s in [first_central(), first_backward(), second_central(), fourth_central(), third_backward()] {
            assert!(s.is_consistent(1e-10), "{s:?}");
            assert_eq!(s.order, 2);
        }
    }

    #[test]
    fn printed_fourth_derivative_row_is_inconsistent() {
        let printed = StencilApplication {
            offsets: vec![-2, -1, 0, 1, 2],
            coefficients: vec![1.0, -4.0, 6.0, -2.0, 1.0],
            derivative: 4,
            order: 2,
        };
        assert!(!printed.is_consistent(1e-10));
    }

    #[test]
    fn printed_third_derivative_row_cannot_approximate_a_derivative() {
        // 2 w_{N+1} - 5 w_N + 2 w_{N-1} + 4 w_{N-2} - 4 w_{N-3}
        let printed = StencilApplication {
            offsets: vec![-3, -2, -1, 0, 1],
            coefficients: vec![-2.0, 2.0, 1.0, -2.5, 1.0],
            derivative: 3,
            order: 2,
        };
        assert_eq!(printed.moment(0), -0.5);
        assert!(!printed.is_consistent(1e-10));
    }

    #[test]
    fn fitted_third_backward_coefficients() {
        let s = third_backward();
        let expected = [1.5, -7.0, 12.0, -9.0, 2.5];
        for (c, e) in s.coefficients.iter().zip(expected) {
            assert!((c - e).abs() < 1e-12, "{c} vs {e}");
        }
        assert!(s.coefficients.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn d1_central_examples() {
        let dx = 0.1;
        let z = sample(|x| x * x, 1.0 - dx, dx, 3);
        assert!((d1_central(&z, 1, dx).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(d1_central(&[3.0, 3.0, 3.0], 1, dx).unwrap(), 0.0);
        let z = sample(|x| x.powi(4), 1.0 - dx, dx, 3);
        assert!((d1_central(&z, 1, dx).unwrap() - 4.04).abs() < 1e-12);
        assert!(d1_central(&z, 0, dx).is_err());
        assert!(d1_central(&z, 2, dx).is_err());
    }

    #[test]
    fn d1_backward_examples() {
        let dx = 0.1;
        let z = sample(|x| x * x, 1.0 - 2.0 * dx, dx, 3);
        assert!((d1_backward(&z, 2, dx).unwrap() - 2.0).abs() < 1e-12);
        assert_eq!(d1_backward(&[1.0, 1.0, 1.0], 2, dx).unwrap(), 0.0);
        // x^3: 3 - dx^2 f'''/3 = 3 - 0.01 * 6 / 3
        let z = sample(|x| x.powi(3), 1.0 - 2.0 * dx, dx, 3);
        assert!((d1_backward(&z, 2, dx).unwrap() - 2.98).abs() < 1e-12);
        assert!(d1_backward(&z, 1, dx).is_err());
    }

    #[test]
    fn d2_central_examples() {
        let dx = 0.1;
        let z = sample(|x| x * x, 1.0 - dx, dx, 3);
        assert!((d2_central(&z, 1, dx).unwrap() - 2.0).abs() < 1e-12);
        let z = sample(|x| x.powi(4), 1.0 - dx, dx, 3);
        assert!((d2_central(&z, 1, dx).unwrap() - 12.02).abs() < 1e-10);
        let z = sample(|x| 3.0 * x - 1.0, 1.0 - dx, dx, 3);
        assert!(d2_central(&z, 1, dx).unwrap().abs() < 1e-12);
    }

    #[test]
    fn d4_central_examples() {
        let dx = 0.1;
        let z = sample(|x| x.powi(4), 1.0 - 2.0 * dx, dx, 5);
        assert!((d4_central(&z, 2, dx).unwrap() - 24.0).abs() < 1e-8);
        let z = sample(|x| x.powi(3), 1.0 - 2.0 * dx, dx, 5);
        assert!(d4_central(&z, 2, dx).unwrap().abs() < 1e-8);
        // x^6 at 1: brute stencil sum vs symbolic 360 x^2 + dx^2 * 720 / 6 * ... .
        let z = sample(|x| x.powi(6), 1.0 - 2.0 * dx, dx, 5);
        let brute: f64 = [-2.0f64, -1.0, 0.0, 1.0, 2.0]
            .iter()
            .zip([1.0, -4.0, 6.0, -4.0, 1.0])
            .map(|(o, c)| c * (1.0 + o * dx).powi(6))
            .sum::<f64>()
            / dx.powi(4);
        let got = d4_central(&z, 2, dx).unwrap();
        assert!((got - brute).abs() < 1e-9);
        // Taylor: 360 + dx^2/6 * 720 (sixth derivative) exactly for degree 6.
        assert!((got - (360.0 + dx * dx / 6.0 * 720.0)).abs() < 1e-8);
    }

    #[test]
    fn d3_backward_examples() {
        let dx = 0.05;
        let z = sample(|x| x.powi(3), 1.0 - 4.0 * dx, dx, 5);
        assert!((d3_backward(&z, 4, dx).unwrap() - 6.0).abs() < 1e-8);
        let z = sample(|x| x * x, 1.0 - 4.0 * dx, dx, 5);
        assert!(d3_backward(&z, 4, dx).unwrap().abs() < 1e-8);
        assert!(d3_backward(&z, 3, dx).is_err());
        // x^5 at the end node: error ratio close to 4 under halving.
        let err = |dx: f64| {
            let z = sample(|x| x.powi(5), 1.0 - 4.0 * dx, dx, 5);
            (d3_backward(&z, 4, dx).unwrap() - 60.0).abs()
        };
        let ratio = err(0.05) / err(0.025);
        assert!((ratio - 4.0).abs() < 0.3, "ratio {ratio}");
    }
}
