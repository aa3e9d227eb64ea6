//! Shifted orthonormal Legendre polynomials on `[0,1]` and their
//! coordinatewise tensor extension to `[0,1]^N`.
//!
//! `eta_n(x) = sqrt(2n+1) * P_n(2x-1)`, so `eta_0 = 1` and the family is
//! orthonormal under Lebesgue measure on the unit interval. The integer
//! coefficients of `P_n(2x-1)` are kept exactly, which lets the Gram matrix be
//! checked with rational arithmetic instead of quadrature.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{Error, Result};

/// Largest supported polynomial degree.
pub const MAX_DEGREE: usize = 30;

/// `eta_0..=eta_m` on `[0,1]`.
#[derive(Debug, Clone)]
pub struct PolyBasis1D {
    m: usize,
    int_coeffs: Vec<Vec<i128>>,
    coeffs: Vec<Vec<f64>>,
}

fn binomial_i128(n: usize, k: usize) -> i128 {
    let k = k.min(n - k);
    let mut c: i128 = 1;
    for i in 0..k {
        c = c * (n - i) as i128 / (i + 1) as i128;
    }
    c
}

fn scale(n: usize) -> f64 {
    ((2 * n + 1) as f64).sqrt()
}

impl PolyBasis1D {
    pub fn new(m: usize) -> Result<Self> {
        if m == 0 || m > MAX_DEGREE {
            return Err(Error::DegreeOutOfRange { m, max: MAX_DEGREE });
        }
        // P_n(2x-1) = sum_k (-1)^(n+k) C(n,k) C(n+k,k) x^k
        let int_coeffs: Vec<Vec<i128>> = (0..=m)
            .map(|n| {
                (0..=n)
                    .map(|k| {
                        let sign = if (n + k) % 2 == 0 { 1 } else { -1 };
                        sign * binomial_i128(n, k) * binomial_i128(n + k, k)
                    })
                    .collect()
            })
            .collect();
        let coeffs = int_coeffs
            .iter()
            .enumerate()
            .map(|(n, row)| row.iter().map(|&c| scale(n) * c as f64).collect())
            .collect();
        Ok(Self {
            m,
            int_coeffs,
            coeffs,
        })
    }

    pub fn degree(&self) -> usize {
        self.m
    }

    /// Monomial coefficients of `eta_n`, lowest power first.
    pub fn coefficients(&self, n: usize) -> &[f64] {
        &self.coeffs[n]
    }

    /// Integer coefficients of `P_n(2x-1)`; `eta_n` is this times `sqrt(2n+1)`.
    pub fn integer_coefficients(&self, n: usize) -> &[i128] {
        &self.int_coeffs[n]
    }

    /// All coefficient rows `eta_0..=eta_m`.
    pub fn coefficient_rows(&self) -> &[Vec<f64>] {
        &self.coeffs
    }

    /// Values `eta_0(x)..=eta_m(x)`.
    pub fn eval(&self, x: f64) -> Result<Vec<f64>> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::OutsideUnitInterval { x });
        }
        let mut out = vec![0.0; self.m + 1];
        self.eval_into(x, &mut out);
        Ok(out)
    }

    /// Unchecked evaluation by the three-term recurrence; `out` must hold `m+1` values.
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        let t = 2.0 * x - 1.0;
        let mut p_prev = 1.0;
        let mut p = t;
        out[0] = 1.0;
        if self.m >= 1 {
            out[1] = scale(1) * t;
        }
        for k in 1..self.m {
            let kf = k as f64;
            let next = ((2.0 * kf + 1.0) * t * p - kf * p_prev) / (kf + 1.0);
            p_prev = p;
            p = next;
            out[k + 1] = scale(k + 1) * p;
        }
    }

    /// Horner evaluation of `eta_n` from its monomial coefficients.
    pub fn eval_monomial(&self, n: usize, x: f64) -> f64 {
        self.coeffs[n].iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    /// Gram matrix of `eta_0..=eta_m` with each entry integrated exactly over
    /// monomial products before the final square-root scaling.
    pub fn gram_exact(&self) -> Vec<Vec<f64>> {
        let size = self.m + 1;
        let mut g = vec![vec![0.0; size]; size];
        for i in 0..size {
            for j in i..size {
                let mut acc = BigRational::zero();
                for (a, &ca) in self.int_coeffs[i].iter().enumerate() {
                    for (b, &cb) in self.int_coeffs[j].iter().enumerate() {
                        let num = BigInt::from(ca) * BigInt::from(cb);
                        acc += BigRational::new(num, BigInt::from(a + b + 1));
                    }
                }
                let v = acc.to_f64().unwrap_or(f64::NAN) * scale(i) * scale(j);
                g[i][j] = v;
                g[j][i] = v;
            }
        }
        g
    }

    /// Largest `|eta_n(x)|` on `[0,1]`, attained at the endpoints.
    pub fn sup_norm(&self, n: usize) -> f64 {
        scale(n)
    }
}

/// Per-power sums of absolute monomial coefficients over `eta_1..=eta_m`.
#[derive(Debug, Clone, Serialize)]
pub struct CoefficientSums {
    /// `r[i-1] = sum_n |coefficient of x^i in eta_n|` for `i = 1..=m`.
    pub r: Vec<f64>,
    /// `max_i r_i`.
    pub c_m: f64,
}

pub fn coefficient_abs_sums(m: usize) -> Result<CoefficientSums> {
    let basis = PolyBasis1D::new(m)?;
    let r: Vec<f64> = (1..=m)
        .map(|i| {
            (1..=m)
                .filter(|&n| i <= n)
                .map(|n| basis.coefficients(n)[i].abs())
                .sum()
        })
        .collect();
    let c_m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(CoefficientSums { r, c_m })
}

/// Number of non-constant monomials of total degree at most `m` in `n_dims`
/// variables, `C(N+m, m) - 1`.
pub fn count_monomials(m: usize, n_dims: usize) -> Result<u128> {
    let mut c: u128 = 1;
    for i in 1..=m as u128 {
        c = c
            .checked_mul(n_dims as u128 + i)
            .ok_or(Error::CountOverflow { m, n: n_dims })?
            / i;
    }
    Ok(c - 1)
}

/// Coordinatewise features `eta_i(x_j)`, `i = 1..=m`, `j = 0..N`, laid out
/// dimension-major: index `j*m + (i-1)`.
#[derive(Debug, Clone)]
pub struct TensorBasis {
    basis: PolyBasis1D,
    n_dims: usize,
}

impl TensorBasis {
    pub fn new(m: usize, n_dims: usize) -> Result<Self> {
        if n_dims == 0 {
            return Err(crate::error::invalid("dimension must be at least 1"));
        }
        Ok(Self {
            basis: PolyBasis1D::new(m)?,
            n_dims,
        })
    }

    pub fn degree(&self) -> usize {
        self.basis.m
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    pub fn len(&self) -> usize {
        self.basis.m * self.n_dims
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn univariate(&self) -> &PolyBasis1D {
        &self.basis
    }

    pub fn index(&self, dim: usize, order: usize) -> usize {
        dim * self.basis.m + (order - 1)
    }

    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_dims {
            return Err(Error::DimensionMismatch {
                expected: self.n_dims,
                got: x.len(),
            });
        }
        if let Some(&bad) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::OutsideUnitInterval { x: bad });
        }
        let mut out = vec![0.0; self.len()];
        self.features_into(x, &mut out);
        Ok(out)
    }

    /// Unchecked feature evaluation into `out` of length `m*N`.
    pub fn features_into(&self, x: &[f64], out: &mut [f64]) {
        let m = self.basis.m;
        let mut buf = vec![0.0; m + 1];
        for (j, &xj) in x.iter().enumerate() {
            self.basis.eval_into(xj, &mut buf);
            out[j * m..(j + 1) * m].copy_from_slice(&buf[1..]);
        }
    }
}
