//! Maximum-entropy densities matching prescribed moments.
//!
//! The fit minimises the convex dual
//! `Gamma(lambda) = <lambda, mu> + ln int exp(-<lambda, phi>)`
//! by damped Newton steps from `lambda = 0`. Its gradient is
//! `mu - E_q[phi]` and its Hessian is `Cov_q[phi]` under the current iterate
//! `q`, all computed on a fixed Gauss grid with log-sum-exp weights.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::density::{self, dot, log_sum_exp, Density, ExpFamilyDensity};
use crate::error::{invalid, Error, Result};
use crate::polybasis::TensorBasis;
use crate::quadrature::{default_order, gauss_legendre, QuadGridND};

/// Moments `E[eta_i(x_j)]`, dimension-major (`j*m + i-1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentVector {
    pub m: usize,
    #[serde(rename = "N")]
    pub n_dims: usize,
    pub values: Vec<f64>,
}

impl MomentVector {
    /// Checks length, finiteness and that each entry lies within the range
    /// `[-sqrt(2i+1), sqrt(2i+1)]` of its feature.
    pub fn new(m: usize, n_dims: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != m * n_dims {
            return Err(Error::DimensionMismatch {
                expected: m * n_dims,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("moments must be finite"));
        }
        for (idx, v) in values.iter().enumerate() {
            let i = idx % m + 1;
            let bound = ((2 * i + 1) as f64).sqrt();
            if v.abs() > bound * (1.0 + 1e-12) {
                return Err(Error::Infeasible {
                    dim: idx / m,
                    residual: v.abs() - bound,
                    condition: f64::INFINITY,
                });
            }
        }
        Ok(Self { m, n_dims, values })
    }

    pub fn get(&self, dim: usize, order: usize) -> f64 {
        self.values[dim * self.m + order - 1]
    }

    pub fn dim_slice(&self, dim: usize) -> &[f64] {
        &self.values[dim * self.m..(dim + 1) * self.m]
    }

    /// `sum |mu_p - mu_q|` over all features.
    pub fn l1_distance(&self, other: &MomentVector) -> Result<f64> {
        if self.values.len() != other.values.len() {
            return Err(Error::DimensionMismatch {
                expected: self.values.len(),
                got: other.values.len(),
            });
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum())
    }
}

/// Reads `m * n_dims` comma-separated moments, dimension-major, from any
/// number of lines. Blank lines and lines starting with `#` are skipped.
pub fn read_moments_csv<R: std::io::Read>(
    reader: R,
    m: usize,
    n_dims: usize,
) -> Result<MomentVector> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut values = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        for (col, field) in record.iter().enumerate() {
            if field.is_empty() && record.len() == 1 {
                continue;
            }
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                column: col + 1,
                message: format!("expected a number, found {field:?}"),
            })?;
            values.push(v);
        }
    }
    MomentVector::new(m, n_dims, values)
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    /// Stop once `max |mu - E_q[phi]|` is at most this.
    pub tol: f64,
    pub max_iter: usize,
    /// Per-dimension Gauss order; defaults by dimension when `None`.
    pub quad_order: Option<usize>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-9,
            max_iter: 200,
            quad_order: None,
        }
    }
}

/// Minimiser of the dual on an arbitrary weighted node set.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub lambda: Vec<f64>,
    /// `ln int exp(-<lambda, phi>)`, i.e. `-ln c(lambda)`.
    pub ln_partition: f64,
    pub dual_value: f64,
    pub residual: f64,
    pub iterations: usize,
    /// Dual value after each accepted step, starting at `lambda = 0`.
    pub trace: Vec<f64>,
}

struct DualState {
    value: f64,
    ln_partition: f64,
    grad: Vec<f64>,
    mean: Vec<f64>,
    probs: Vec<f64>,
}

fn dual_state(features: &[f64], ln_w: &[f64], mu: &[f64], lambda: &[f64]) -> DualState {
    let k = mu.len();
    let scores: Vec<f64> = features
        .chunks_exact(k)
        .zip(ln_w)
        .map(|(phi, lw)| lw - dot(lambda, phi))
        .collect();
    let ln_partition = log_sum_exp(scores.iter().copied());
    let probs: Vec<f64> = scores.iter().map(|s| (s - ln_partition).exp()).collect();
    let mut mean = vec![0.0; k];
    for (phi, q) in features.chunks_exact(k).zip(&probs) {
        for (m, f) in mean.iter_mut().zip(phi) {
            *m += q * f;
        }
    }
    let grad = mu.iter().zip(&mean).map(|(a, b)| a - b).collect();
    DualState {
        value: dot(lambda, mu) + ln_partition,
        ln_partition,
        grad,
        mean,
        probs,
    }
}

fn covariance(features: &[f64], state: &DualState, k: usize) -> DMatrix<f64> {
    let mut h = DMatrix::<f64>::zeros(k, k);
    let mut d = vec![0.0; k];
    for (phi, q) in features.chunks_exact(k).zip(&state.probs) {
        for (di, (f, m)) in d.iter_mut().zip(phi.iter().zip(&state.mean)) {
            *di = f - m;
        }
        for a in 0..k {
            let qa = q * d[a];
            for b in a..k {
                h[(a, b)] += qa * d[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            h[(a, b)] = h[(b, a)];
        }
    }
    h
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |a, b| a.max(b.abs()))
}

/// Condition number above which a stalled iteration is reported infeasible.
const CONDITION_LIMIT: f64 = 1e12;

/// Damped Newton on the dual. `features` is node-major with `mu.len()`
/// values per node and `ln_w` holds the log quadrature weights.
pub fn solve_dual(
    features: &[f64],
    ln_w: &[f64],
    mu: &[f64],
    opts: &FitOptions,
    dim_label: usize,
) -> Result<DualSolution> {
    let k = mu.len();
    if features.len() != k * ln_w.len() {
        return Err(Error::DimensionMismatch {
            expected: k * ln_w.len(),
            got: features.len(),
        });
    }
    let mut lambda = vec![0.0; k];
    let mut state = dual_state(features, ln_w, mu, &lambda);
    let mut trace = vec![state.value];
    let mut iterations = 0;
    loop {
        let residual = max_abs(&state.grad);
        if residual <= opts.tol {
            return Ok(DualSolution {
                lambda,
                ln_partition: state.ln_partition,
                dual_value: state.value,
                residual,
                iterations,
                trace,
            });
        }
        if iterations >= opts.max_iter {
            return Err(Error::MaxIterations {
                iterations,
                residual,
            });
        }
        let h = covariance(features, &state, k);
        let eig = h.clone().symmetric_eigen();
        let (emin, emax) = eig
            .eigenvalues
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| {
                (lo.min(e), hi.max(e))
            });
        let condition = if emin > 0.0 {
            emax / emin
        } else {
            f64::INFINITY
        };
        let infeasible = || Error::Infeasible {
            dim: dim_label,
            residual,
            condition,
        };
        let chol = match h.cholesky() {
            Some(c) => c,
            None => return Err(infeasible()),
        };
        let g = DVector::from_column_slice(&state.grad);
        let step = -chol.solve(&g);
        let slope = g.dot(&step);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = lambda
                .iter()
                .zip(step.iter())
                .map(|(l, s)| l + t * s)
                .collect();
            let next = dual_state(features, ln_w, mu, &trial);
            let armijo = next.value <= state.value + 1e-4 * t * slope;
            // Near the optimum the dual changes below rounding; accept steps
            // that shrink the gradient without a visible increase.
            let flat = next.value - state.value <= 1e-13 * state.value.abs().max(1.0)
                && max_abs(&next.grad) < residual;
            if next.value.is_finite() && (armijo || flat) {
                accepted = Some((trial, next));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((l, s)) => {
                lambda = l;
                state = s;
                trace.push(state.value);
                iterations += 1;
            }
            None if condition > CONDITION_LIMIT => return Err(infeasible()),
            None => {
                return Err(Error::MaxIterations {
                    iterations,
                    residual,
                })
            }
        }
        if condition > CONDITION_LIMIT && max_abs(&lambda) > 1e8 {
            return Err(infeasible());
        }
    }
}

/// Result of a maximum-entropy fit.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub density: ExpFamilyDensity,
    /// Newton steps summed over the per-dimension problems.
    pub iterations: usize,
    /// Largest final moment residual.
    pub residual: f64,
    /// `sum_j Gamma_j(lambda_j)`, which equals the entropy of the fit.
    pub dual_value: f64,
}

/// Serializable view of a fit.
#[derive(Debug, Clone, Serialize)]
pub struct FitSummary {
    pub m: usize,
    #[serde(rename = "N")]
    pub n_dims: usize,
    pub lambda: Vec<f64>,
    pub log_normalizer: f64,
    pub residual: f64,
    pub iterations: usize,
    pub dual_value: f64,
}

impl FitResult {
    pub fn summary(&self) -> FitSummary {
        FitSummary {
            m: self.density.basis().degree(),
            n_dims: self.density.dim(),
            lambda: self.density.lambda().to_vec(),
            log_normalizer: self.density.ln_normalizer(),
            residual: self.residual,
            iterations: self.iterations,
            dual_value: self.dual_value,
        }
    }
}

/// Feature matrix and log weights of `eta_1..=eta_m` on a 1-D Gauss rule.
fn univariate_design(basis: &TensorBasis, order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let rule = gauss_legendre(order)?;
    let m = basis.degree();
    let mut buf = vec![0.0; m + 1];
    let mut feats = Vec::with_capacity(order * m);
    for &x in &rule.nodes {
        basis.univariate().eval_into(x, &mut buf);
        feats.extend_from_slice(&buf[1..]);
    }
    Ok((feats, rule.weights.iter().map(|w| w.ln()).collect()))
}

/// Fits each coordinate independently; the product of the univariate fits is
/// the maximum-entropy density for coordinatewise moments.
pub fn fit_maxent(mu: &MomentVector, opts: &FitOptions) -> Result<FitResult> {
    let basis = TensorBasis::new(mu.m, mu.n_dims)?;
    let order = opts.quad_order.unwrap_or(default_order(1));
    let (feats, ln_w) = univariate_design(&basis, order)?;
    let mut lambda = Vec::with_capacity(basis.len());
    let (mut iterations, mut residual, mut dual_value) = (0, 0.0f64, 0.0);
    for j in 0..mu.n_dims {
        let sol = solve_dual(&feats, &ln_w, mu.dim_slice(j), opts, j)?;
        iterations += sol.iterations;
        residual = residual.max(sol.residual);
        dual_value += sol.dual_value;
        lambda.extend(sol.lambda);
    }
    let density = ExpFamilyDensity::new(basis, lambda, order)?;
    Ok(FitResult {
        density,
        iterations,
        residual,
        dual_value,
    })
}

/// Fits all coordinates at once on the full tensor grid.
pub fn fit_maxent_joint(mu: &MomentVector, opts: &FitOptions) -> Result<FitResult> {
    let basis = TensorBasis::new(mu.m, mu.n_dims)?;
    let order = opts.quad_order.unwrap_or(default_order(mu.n_dims));
    let grid = QuadGridND::new(mu.n_dims, order)?;
    let k = basis.len();
    let mut feats = Vec::with_capacity(grid.len() * k);
    let mut ln_w = Vec::with_capacity(grid.len());
    let mut buf = vec![0.0; k];
    grid.for_each(|x, w| {
        basis.features_into(x, &mut buf);
        feats.extend_from_slice(&buf);
        ln_w.push(w.ln());
    });
    let sol = solve_dual(&feats, &ln_w, &mu.values, opts, 0)?;
    let density = ExpFamilyDensity::new(basis, sol.lambda, order)?;
    Ok(FitResult {
        density,
        iterations: sol.iterations,
        residual: sol.residual,
        dual_value: sol.dual_value,
    })
}

/// Maximum-entropy counterpart of `p`, fitted on `p`'s own grid order.
pub fn maxent_counterpart(p: &dyn Density, basis: &TensorBasis) -> Result<FitResult> {
    let mu = density::moments(p, basis)?;
    let opts = FitOptions {
        quad_order: Some(p.quad_order()),
        ..FitOptions::default()
    };
    fit_maxent(&mu, &opts)
}

/// `h_phi(p)`: entropy of the maximum-entropy density with `p`'s moments.
pub fn maxent_entropy(p: &dyn Density, basis: &TensorBasis) -> Result<f64> {
    density::entropy(&maxent_counterpart(p, basis)?.density)
}

/// Entropy gap `h_phi(p) - h(p)`, non-negative up to quadrature error.
pub fn epsilon_gap(p: &dyn Density, basis: &TensorBasis) -> Result<f64> {
    let gap = maxent_entropy(p, basis)? - density::entropy(p)?;
    Ok(if (-1e-8..0.0).contains(&gap) {
        0.0
    } else {
        gap
    })
}
