//! Densities on `[0,1]^N` evaluated in log space, together with their
//! moments, entropy, smoothness statistics and inverse-CDF sampling.
//!
//! Every density is normalised on the Gauss grid of its own order, so
//! quadrature functionals computed on that grid see a total mass of one.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::maxent::{self, MomentVector};
use crate::polybasis::TensorBasis;
use crate::quadrature::{default_order, gauss_legendre, QuadGridND, MAX_ORDER};

/// A probability density on the unit cube.
pub trait Density: Send + Sync {
    fn dim(&self) -> usize;

    /// Log density; `-inf` outside the cube.
    fn ln_pdf(&self, x: &[f64]) -> f64;

    fn pdf(&self, x: &[f64]) -> f64 {
        self.ln_pdf(x).exp()
    }

    /// Per-dimension Gauss order of the grid the density is normalised on.
    fn quad_order(&self) -> usize;

    /// Univariate factors if the density is a product over coordinates.
    fn factors(&self) -> Option<Vec<Arc<dyn Density>>> {
        None
    }

    /// Mixture weights and components if the density is a finite mixture.
    fn mixture_parts(&self) -> Option<(Vec<f64>, Vec<Arc<dyn Density>>)> {
        None
    }

    fn to_arc(&self) -> Arc<dyn Density>;

    /// JSON description, when the density has one.
    fn spec(&self) -> Option<DensitySpec> {
        None
    }
}

/// Univariate factors of `p`; a one-dimensional density is its own factor.
pub fn factors_of(p: &dyn Density) -> Option<Vec<Arc<dyn Density>>> {
    if p.dim() == 1 {
        Some(vec![p.to_arc()])
    } else {
        p.factors()
    }
}

fn in_cube(x: &[f64]) -> bool {
    x.iter().all(|v| (0.0..=1.0).contains(v))
}

pub(crate) fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `ln integral exp(ln_f)` over the grid of the given order.
fn grid_log_mass<F>(n_dims: usize, order: usize, ln_f: F) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let grid = QuadGridND::new(n_dims, order)?;
    // Two-pass log-sum-exp keeps tiny-variance densities from underflowing.
    let max = grid.fold(
        || f64::NEG_INFINITY,
        |acc, x, w| *acc = acc.max(ln_f(x) + w.ln()),
        f64::max,
    );
    if !max.is_finite() {
        return Err(Error::GridUnresolved { order });
    }
    let sum = grid.fold(
        || 0.0,
        |acc, x, w| *acc += (ln_f(x) + w.ln() - max).exp(),
        |a, b| a + b,
    );
    Ok(max + sum.ln())
}

#[derive(Clone)]
enum Kind {
    Uniform,
    TruncatedNormal {
        mean: f64,
        sigma: f64,
    },
    Mixture {
        weights: Vec<f64>,
        components: Vec<Arc<dyn Density>>,
    },
    Product(Vec<Arc<dyn Density>>),
    Custom(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

/// A density given by a formula and normalised on a tensor Gauss grid.
#[derive(Clone)]
pub struct GridDensity {
    n_dims: usize,
    order: usize,
    kind: Kind,
    ln_norm: f64,
}

impl std::fmt::Debug for GridDensity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match &self.kind {
            Kind::Uniform => "uniform".to_string(),
            Kind::TruncatedNormal { mean, sigma } => format!("truncnorm({mean}, {sigma})"),
            Kind::Mixture { weights, .. } => format!("mixture({} components)", weights.len()),
            Kind::Product(fs) => format!("product({} factors)", fs.len()),
            Kind::Custom(_) => "custom".to_string(),
        };
        f.debug_struct("GridDensity")
            .field("dim", &self.n_dims)
            .field("order", &self.order)
            .field("kind", &kind)
            .finish()
    }
}

/// Relative tolerance on the grid normalisation when checking resolution.
const NORMALIZATION_TOL: f64 = 1e-10;

fn truncnorm_ln_kernel(mean: f64, sigma: f64) -> impl Fn(&[f64]) -> f64 + Sync {
    move |x: &[f64]| {
        let z = (x[0] - mean) / sigma;
        -0.5 * z * z
    }
}

impl GridDensity {
    pub fn uniform(n_dims: usize) -> Result<Self> {
        if n_dims == 0 {
            return Err(invalid("dimension must be at least 1"));
        }
        Ok(Self {
            n_dims,
            order: default_order(n_dims),
            kind: Kind::Uniform,
            ln_norm: 0.0,
        })
    }

    /// Normal density restricted to `[0,1]`, normalised on the smallest grid
    /// among 128, 256 and 512 points that resolves it.
    pub fn truncated_normal(mean: f64, sigma: f64) -> Result<Self> {
        let mut order = default_order(1);
        loop {
            match Self::truncated_normal_with_order(mean, sigma, order) {
                Err(Error::GridUnresolved { .. }) if order < MAX_ORDER => order *= 2,
                other => return other,
            }
        }
    }

    /// Truncated normal on a grid of fixed order; fails if doubling the order
    /// changes the normalising constant.
    pub fn truncated_normal_with_order(mean: f64, sigma: f64, order: usize) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() || !mean.is_finite() {
            return Err(invalid(format!(
                "truncated normal needs finite mean and positive sigma, got ({mean}, {sigma})"
            )));
        }
        let kernel = truncnorm_ln_kernel(mean, sigma);
        let ln_norm = grid_log_mass(1, order, &kernel)?;
        let check_order = if 2 * order <= MAX_ORDER {
            2 * order
        } else {
            order / 2
        };
        let ln_check =
            grid_log_mass(1, check_order, &kernel).map_err(|_| Error::GridUnresolved { order })?;
        if (ln_norm - ln_check).abs() > NORMALIZATION_TOL {
            return Err(Error::GridUnresolved { order });
        }
        Ok(Self {
            n_dims: 1,
            order,
            kind: Kind::TruncatedNormal { mean, sigma },
            ln_norm,
        })
    }

    /// Finite mixture of densities with a common dimension.
    pub fn mixture(weights: &[f64], components: Vec<Arc<dyn Density>>) -> Result<Self> {
        if weights.len() != components.len() || components.is_empty() {
            return Err(invalid("mixture needs one weight per component"));
        }
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(invalid("mixture weights must be positive"));
        }
        let n_dims = components[0].dim();
        if let Some(c) = components.iter().find(|c| c.dim() != n_dims) {
            return Err(Error::DimensionMismatch {
                expected: n_dims,
                got: c.dim(),
            });
        }
        let total: f64 = weights.iter().sum();
        let weights: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let order = components.iter().map(|c| c.quad_order()).max().unwrap();
        let mut d = Self {
            n_dims,
            order,
            kind: Kind::Mixture {
                weights,
                components,
            },
            ln_norm: 0.0,
        };
        d.ln_norm = grid_log_mass(n_dims, order, |x| d.ln_kernel(x))?;
        Ok(d)
    }

    /// Product of univariate densities.
    pub fn product(factors: Vec<Arc<dyn Density>>) -> Result<Self> {
        if factors.is_empty() {
            return Err(invalid("product needs at least one factor"));
        }
        if let Some(f) = factors.iter().find(|f| f.dim() != 1) {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: f.dim(),
            });
        }
        let order = factors.iter().map(|f| f.quad_order()).max().unwrap();
        Ok(Self {
            n_dims: factors.len(),
            order,
            kind: Kind::Product(factors),
            ln_norm: 0.0,
        })
    }

    /// Density proportional to `exp(ln_f(x))`, normalised on a grid of `order`.
    pub fn from_log_fn<F>(n_dims: usize, order: usize, ln_f: F) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        let ln_norm = grid_log_mass(n_dims, order, &ln_f)?;
        Ok(Self {
            n_dims,
            order,
            kind: Kind::Custom(Arc::new(ln_f)),
            ln_norm,
        })
    }

    fn ln_kernel(&self, x: &[f64]) -> f64 {
        match &self.kind {
            Kind::Uniform => 0.0,
            Kind::TruncatedNormal { mean, sigma } => {
                let z = (x[0] - mean) / sigma;
                -0.5 * z * z
            }
            Kind::Mixture {
                weights,
                components,
            } => log_sum_exp(
                weights
                    .iter()
                    .zip(components)
                    .map(|(w, c)| w.ln() + c.ln_pdf(x)),
            ),
            Kind::Product(fs) => fs.iter().zip(x).map(|(f, &xi)| f.ln_pdf(&[xi])).sum(),
            Kind::Custom(f) => f(x),
        }
    }
}

impl Density for GridDensity {
    fn dim(&self) -> usize {
        self.n_dims
    }

    fn ln_pdf(&self, x: &[f64]) -> f64 {
        if !in_cube(x) {
            return f64::NEG_INFINITY;
        }
        self.ln_kernel(x) - self.ln_norm
    }

    fn quad_order(&self) -> usize {
        self.order
    }

    fn factors(&self) -> Option<Vec<Arc<dyn Density>>> {
        match &self.kind {
            Kind::Product(fs) => Some(fs.clone()),
            Kind::Uniform => {
                let u: Arc<dyn Density> = Arc::new(GridDensity {
                    n_dims: 1,
                    order: self.order,
                    kind: Kind::Uniform,
                    ln_norm: 0.0,
                });
                Some(vec![u; self.n_dims])
            }
            _ => None,
        }
    }

    fn mixture_parts(&self) -> Option<(Vec<f64>, Vec<Arc<dyn Density>>)> {
        match &self.kind {
            Kind::Mixture {
                weights,
                components,
            } => Some((weights.clone(), components.clone())),
            _ => None,
        }
    }

    fn to_arc(&self) -> Arc<dyn Density> {
        Arc::new(self.clone())
    }

    fn spec(&self) -> Option<DensitySpec> {
        match &self.kind {
            Kind::Uniform => Some(DensitySpec::Uniform { n: self.n_dims }),
            Kind::TruncatedNormal { mean, sigma } => Some(DensitySpec::Truncnorm {
                mean: *mean,
                sigma: *sigma,
            }),
            Kind::Mixture {
                weights,
                components,
            } => Some(DensitySpec::Mixture {
                weights: weights.clone(),
                components: components.iter().map(|c| c.spec()).collect::<Option<_>>()?,
            }),
            Kind::Product(fs) => Some(DensitySpec::Product {
                factors: fs.iter().map(|f| f.spec()).collect::<Option<_>>()?,
            }),
            Kind::Custom(_) => None,
        }
    }
}

/// `p(x) = prod_j c_j exp(-sum_i lambda_{j,i} eta_i(x_j))`.
#[derive(Debug, Clone)]
pub struct ExpFamilyDensity {
    basis: TensorBasis,
    lambda: Vec<f64>,
    ln_norms: Vec<f64>,
    order: usize,
}

impl ExpFamilyDensity {
    /// Builds the density and its per-dimension log-normalisers `ln c_j` on a
    /// Gauss rule of `order` points.
    pub fn new(basis: TensorBasis, lambda: Vec<f64>, order: usize) -> Result<Self> {
        if lambda.len() != basis.len() {
            return Err(Error::DimensionMismatch {
                expected: basis.len(),
                got: lambda.len(),
            });
        }
        if lambda.iter().any(|v| !v.is_finite()) {
            return Err(invalid("natural parameters must be finite"));
        }
        let m = basis.degree();
        let rule = gauss_legendre(order)?;
        let mut buf = vec![0.0; m + 1];
        let ln_norms = (0..basis.n_dims())
            .map(|j| {
                let lam = &lambda[j * m..(j + 1) * m];
                let terms: Vec<f64> = rule
                    .nodes
                    .iter()
                    .zip(&rule.weights)
                    .map(|(&x, &w)| {
                        basis.univariate().eval_into(x, &mut buf);
                        w.ln() - dot(lam, &buf[1..])
                    })
                    .collect();
                -log_sum_exp(terms.iter().copied())
            })
            .collect();
        Ok(Self {
            basis,
            lambda,
            ln_norms,
            order,
        })
    }

    pub fn with_default_order(basis: TensorBasis, lambda: Vec<f64>) -> Result<Self> {
        let order = default_order(basis.n_dims());
        Self::new(basis, lambda, order)
    }

    pub fn basis(&self) -> &TensorBasis {
        &self.basis
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn lambda_dim(&self, j: usize) -> &[f64] {
        let m = self.basis.degree();
        &self.lambda[j * m..(j + 1) * m]
    }

    /// Per-dimension `ln c_j`.
    pub fn ln_normalizers(&self) -> &[f64] {
        &self.ln_norms
    }

    /// `ln c = sum_j ln c_j`.
    pub fn ln_normalizer(&self) -> f64 {
        self.ln_norms.iter().sum()
    }

    fn factor(&self, j: usize) -> ExpFamilyDensity {
        ExpFamilyDensity {
            basis: TensorBasis::new(self.basis.degree(), 1).expect("valid degree"),
            lambda: self.lambda_dim(j).to_vec(),
            ln_norms: vec![self.ln_norms[j]],
            order: self.order,
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Density for ExpFamilyDensity {
    fn dim(&self) -> usize {
        self.basis.n_dims()
    }

    fn ln_pdf(&self, x: &[f64]) -> f64 {
        if !in_cube(x) {
            return f64::NEG_INFINITY;
        }
        let m = self.basis.degree();
        let mut buf = vec![0.0; m + 1];
        let mut acc = 0.0;
        for (j, &xj) in x.iter().enumerate() {
            self.basis.univariate().eval_into(xj, &mut buf);
            acc += self.ln_norms[j] - dot(self.lambda_dim(j), &buf[1..]);
        }
        acc
    }

    fn quad_order(&self) -> usize {
        self.order
    }

    fn factors(&self) -> Option<Vec<Arc<dyn Density>>> {
        Some(
            (0..self.dim())
                .map(|j| Arc::new(self.factor(j)) as Arc<dyn Density>)
                .collect(),
        )
    }

    fn to_arc(&self) -> Arc<dyn Density> {
        Arc::new(self.clone())
    }

    fn spec(&self) -> Option<DensitySpec> {
        Some(DensitySpec::Expfam {
            m: self.basis.degree(),
            n: self.dim(),
            lambda: self.lambda.clone(),
        })
    }
}

/// JSON description of a density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum DensitySpec {
    Truncnorm {
        mean: f64,
        sigma: f64,
    },
    Expfam {
        m: usize,
        #[serde(rename = "N", default = "one")]
        n: usize,
        lambda: Vec<f64>,
    },
    Uniform {
        #[serde(rename = "N", default = "one")]
        n: usize,
    },
    Product {
        factors: Vec<DensitySpec>,
    },
    Mixture {
        weights: Vec<f64>,
        components: Vec<DensitySpec>,
    },
}

fn one() -> usize {
    1
}

impl DensitySpec {
    pub fn build(&self) -> Result<Arc<dyn Density>> {
        Ok(match self {
            DensitySpec::Truncnorm { mean, sigma } => {
                Arc::new(GridDensity::truncated_normal(*mean, *sigma)?)
            }
            DensitySpec::Expfam { m, n, lambda } => Arc::new(ExpFamilyDensity::with_default_order(
                TensorBasis::new(*m, *n)?,
                lambda.clone(),
            )?),
            DensitySpec::Uniform { n } => Arc::new(GridDensity::uniform(*n)?),
            DensitySpec::Product { factors } => Arc::new(GridDensity::product(
                factors.iter().map(|f| f.build()).collect::<Result<_>>()?,
            )?),
            DensitySpec::Mixture {
                weights,
                components,
            } => Arc::new(GridDensity::mixture(
                weights,
                components
                    .iter()
                    .map(|c| c.build())
                    .collect::<Result<_>>()?,
            )?),
        })
    }
}

/// `E_p[eta_i(x_j)]` for every feature of `basis`.
pub fn moments(p: &dyn Density, basis: &TensorBasis) -> Result<MomentVector> {
    if basis.n_dims() != p.dim() {
        return Err(Error::DimensionMismatch {
            expected: basis.n_dims(),
            got: p.dim(),
        });
    }
    let m = basis.degree();
    let values = if let Some(fs) = factors_of(p) {
        let mut values = Vec::with_capacity(basis.len());
        let mut buf = vec![0.0; m + 1];
        for f in fs {
            let rule = gauss_legendre(f.quad_order())?;
            let mut acc = vec![0.0; m];
            for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
                let px = f.pdf(&[x]);
                if !px.is_finite() {
                    return Err(Error::NonFiniteIntegrand { node: vec![x] });
                }
                basis.univariate().eval_into(x, &mut buf);
                for (a, e) in acc.iter_mut().zip(&buf[1..]) {
                    *a += w * px * e;
                }
            }
            values.extend(acc);
        }
        values
    } else {
        let grid = QuadGridND::new(p.dim(), p.quad_order())?;
        grid.integrate_vec(basis.len(), |x, out| {
            basis.features_into(x, out);
            let px = p.pdf(x);
            out.iter_mut().for_each(|v| *v *= px);
        })?
    };
    MomentVector::new(m, p.dim(), values)
}

/// Differential entropy `-int p ln p` on the density's own grid.
pub fn entropy(p: &dyn Density) -> Result<f64> {
    let grid = QuadGridND::new(p.dim(), p.quad_order())?;
    grid.integrate(|x| {
        let lp = p.ln_pdf(x);
        if lp == f64::NEG_INFINITY {
            0.0
        } else {
            -lp.exp() * lp
        }
    })
}

/// Smoothness statistics of a density against the class thresholds at degree `m`.
#[derive(Debug, Clone, Serialize)]
pub struct SmoothnessReport {
    pub m: usize,
    /// Entropy gap to the maximum-entropy density with the same moments.
    pub epsilon: f64,
    /// `sup |ln p|` over a refined evaluation grid.
    pub c_inf: f64,
    /// `||d^m/dx^m ln p_j||_2` for each marginal.
    pub c_r: Vec<f64>,
    /// Whether the derivative estimates agreed under step halving.
    pub derivative_resolved: bool,
}

impl SmoothnessReport {
    pub fn c_r_max(&self) -> f64 {
        self.c_r.iter().cloned().fold(0.0, f64::max)
    }
}

/// Points at which `sup |ln p|` is searched in one coordinate: a uniform grid
/// ten times finer than the quadrature plus the quadrature nodes.
fn dense_points(order: usize) -> Result<Vec<f64>> {
    let count = 10 * order;
    let mut pts: Vec<f64> = (0..=count).map(|i| i as f64 / count as f64).collect();
    pts.extend(gauss_legendre(order)?.nodes.iter());
    Ok(pts)
}

fn sup_abs_ln(p: &dyn Density) -> Result<f64> {
    if let Some(fs) = factors_of(p) {
        let (mut hi, mut lo) = (0.0, 0.0);
        for f in fs {
            let (mut fmax, mut fmin) = (f64::NEG_INFINITY, f64::INFINITY);
            for x in dense_points(f.quad_order())? {
                let v = f.ln_pdf(&[x]);
                fmax = fmax.max(v);
                fmin = fmin.min(v);
            }
            hi += fmax;
            lo += fmin;
        }
        return Ok(f64::max(hi.abs(), lo.abs()));
    }
    let order = if p.dim() <= 2 {
        p.quad_order()
    } else {
        p.quad_order().min(32)
    };
    let pts = if p.dim() <= 2 {
        dense_points(order)?
    } else {
        gauss_legendre(order)?.nodes.clone()
    };
    let mut sup: f64 = 0.0;
    let mut idx = vec![0usize; p.dim()];
    let mut x = vec![pts[0]; p.dim()];
    loop {
        sup = sup.max(p.ln_pdf(&x).abs());
        let mut d = p.dim();
        loop {
            if d == 0 {
                return Ok(sup);
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < pts.len() {
                x[d] = pts[idx[d]];
                break;
            }
            idx[d] = 0;
            x[d] = pts[0];
        }
    }
}

/// Log density of the `j`-th marginal, integrating the other coordinates
/// out on the density's grid when it is not a product.
fn marginal_ln_pdf(p: &dyn Density, j: usize) -> Result<Box<dyn Fn(f64) -> f64 + Send + Sync>> {
    if let Some(fs) = factors_of(p) {
        let f = fs[j].clone();
        return Ok(Box::new(move |x| f.ln_pdf(&[x])));
    }
    let rest = QuadGridND::new(p.dim() - 1, p.quad_order())?;
    let p = p.to_arc();
    Ok(Box::new(move |t| {
        let mut terms = Vec::with_capacity(rest.len());
        let mut x = vec![0.0; p.dim()];
        rest.for_each(|y, w| {
            x[..j].copy_from_slice(&y[..j]);
            x[j] = t;
            x[j + 1..].copy_from_slice(&y[j..]);
            terms.push(w.ln() + p.ln_pdf(&x));
        });
        log_sum_exp(terms.iter().copied())
    }))
}

fn derivative_l2(f: &(dyn Fn(f64) -> f64 + Send + Sync), d: usize, h: f64) -> Result<f64> {
    let rule = gauss_legendre(64)?;
    let mut acc = 0.0;
    for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
        let v = crate::fd::derivative(&|t| f(t), x, d, h);
        if !v.is_finite() {
            return Err(Error::NonFiniteIntegrand { node: vec![x] });
        }
        acc += w * v * v;
    }
    Ok(acc.sqrt())
}

/// Step-halving estimate of `||f^(d)||_2`; the flag reports agreement.
fn converged_derivative_l2(f: &(dyn Fn(f64) -> f64 + Send + Sync), d: usize) -> (f64, bool) {
    let width = crate::fd::stencil_len(d).next_power_of_two();
    let mut h = 1.0 / width as f64;
    let mut prev = match derivative_l2(f, d, h) {
        Ok(v) => v,
        Err(_) => return (f64::NAN, false),
    };
    for _ in 0..4 {
        h /= 2.0;
        let next = match derivative_l2(f, d, h) {
            Ok(v) => v,
            Err(_) => return (prev, false),
        };
        if (next - prev).abs() <= 1e-3 * next.abs() + 1e-6 {
            return (next, true);
        }
        prev = next;
    }
    (prev, false)
}

/// Measures the entropy gap, `sup |ln p|` and the `m`-th log-derivative norms.
pub fn smoothness_report(p: &dyn Density, m: usize) -> Result<SmoothnessReport> {
    let basis = TensorBasis::new(m, p.dim())?;
    let epsilon = maxent::epsilon_gap(p, &basis)?;
    let c_inf = sup_abs_ln(p)?;
    let mut c_r = Vec::with_capacity(p.dim());
    let mut resolved = true;
    for j in 0..p.dim() {
        let f = marginal_ln_pdf(p, j)?;
        let (v, ok) = converged_derivative_l2(f.as_ref(), m);
        c_r.push(v);
        resolved &= ok;
    }
    Ok(SmoothnessReport {
        m,
        epsilon,
        c_inf,
        c_r,
        derivative_resolved: resolved,
    })
}

/// `k` points in `[0,1]^N`, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub n_dims: usize,
    pub data: Vec<f64>,
    pub seed: Option<u64>,
}

impl Sample {
    pub fn new(n_dims: usize, data: Vec<f64>) -> Result<Self> {
        if n_dims == 0 || data.len() % n_dims != 0 {
            return Err(invalid(
                "sample data length is not a multiple of the dimension",
            ));
        }
        Ok(Self {
            n_dims,
            data,
            seed: None,
        })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.n_dims
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_dims..(i + 1) * self.n_dims]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_dims)
    }

    /// Applies `g` to every row.
    pub fn map(&self, g: impl Fn(&[f64], &mut [f64])) -> Sample {
        let mut data = vec![0.0; self.data.len()];
        for (src, dst) in self.rows().zip(data.chunks_exact_mut(self.n_dims)) {
            g(src, dst);
        }
        Sample {
            n_dims: self.n_dims,
            data,
            seed: self.seed,
        }
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record((0..self.n_dims).map(|j| format!("x{j}")))?;
        for row in self.rows() {
            out.write_record(row.iter().map(|v| v.to_string()))?;
        }
        out.flush().map_err(|e| Error::Io {
            path: "<sample>".into(),
            source: e,
        })
    }
}

/// Sample mean of every feature.
pub fn empirical_moments(sample: &Sample, basis: &TensorBasis) -> Result<MomentVector> {
    if sample.is_empty() {
        return Err(Error::EmptySample);
    }
    if sample.n_dims != basis.n_dims() {
        return Err(Error::DimensionMismatch {
            expected: basis.n_dims(),
            got: sample.n_dims,
        });
    }
    let mut acc = vec![0.0; basis.len()];
    let mut buf = vec![0.0; basis.len()];
    for row in sample.rows() {
        if let Some(&bad) = row.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::OutsideUnitInterval { x: bad });
        }
        basis.features_into(row, &mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b;
        }
    }
    let k = sample.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    MomentVector::new(basis.degree(), basis.n_dims(), acc)
}

const CDF_CELLS: usize = 4096;

/// Tabulated CDF of a univariate density on equal cells.
#[derive(Debug, Clone)]
struct CdfTable {
    cdf: Vec<f64>,
}

impl CdfTable {
    fn new(f: &dyn Density) -> Result<Self> {
        let rule = gauss_legendre(8)?;
        let h = 1.0 / CDF_CELLS as f64;
        let mut cdf = Vec::with_capacity(CDF_CELLS + 1);
        cdf.push(0.0);
        let mut acc = 0.0;
        for c in 0..CDF_CELLS {
            let a = c as f64 * h;
            acc += h * rule.integrate(|t| f.pdf(&[a + h * t]));
            cdf.push(acc);
        }
        if !(acc > 0.0) || !acc.is_finite() {
            return Err(Error::GridUnresolved {
                order: f.quad_order(),
            });
        }
        cdf.iter_mut().for_each(|v| *v /= acc);
        Ok(Self { cdf })
    }

    fn invert(&self, u: f64) -> f64 {
        let i = self.cdf.partition_point(|&c| c <= u).clamp(1, CDF_CELLS) - 1;
        let (lo, hi) = (self.cdf[i], self.cdf[i + 1]);
        let frac = if hi > lo { (u - lo) / (hi - lo) } else { 0.5 };
        ((i as f64 + frac.clamp(0.0, 1.0)) / CDF_CELLS as f64).clamp(0.0, 1.0)
    }
}

/// Inverse-CDF sampler for product densities and mixtures of them.
#[derive(Debug, Clone)]
pub struct Sampler(SamplerKind);

#[derive(Debug, Clone)]
enum SamplerKind {
    Product(Vec<CdfTable>),
    Mixture {
        cumulative: Vec<f64>,
        parts: Vec<Sampler>,
    },
}

impl Sampler {
    pub fn new(p: &dyn Density) -> Result<Self> {
        if let Some(fs) = factors_of(p) {
            return Ok(Sampler(SamplerKind::Product(
                fs.iter()
                    .map(|f| CdfTable::new(f.as_ref()))
                    .collect::<Result<_>>()?,
            )));
        }
        if let Some((weights, comps)) = p.mixture_parts() {
            let mut cumulative = Vec::with_capacity(weights.len());
            let mut acc = 0.0;
            for w in &weights {
                acc += w;
                cumulative.push(acc);
            }
            return Ok(Sampler(SamplerKind::Mixture {
                cumulative,
                parts: comps
                    .iter()
                    .map(|c| Sampler::new(c.as_ref()))
                    .collect::<Result<_>>()?,
            }));
        }
        Err(Error::NotProductForm)
    }

    fn draw_point<R: Rng>(&self, rng: &mut R, out: &mut [f64]) {
        match &self.0 {
            SamplerKind::Product(tables) => {
                for (o, t) in out.iter_mut().zip(tables) {
                    *o = t.invert(rng.gen::<f64>());
                }
            }
            SamplerKind::Mixture { cumulative, parts } => {
                let u = rng.gen::<f64>() * cumulative.last().copied().unwrap_or(1.0);
                let i = cumulative.partition_point(|&c| c <= u).min(parts.len() - 1);
                parts[i].draw_point(rng, out);
            }
        }
    }

    fn n_dims(&self) -> usize {
        match &self.0 {
            SamplerKind::Product(t) => t.len(),
            SamplerKind::Mixture { parts, .. } => parts[0].n_dims(),
        }
    }

    pub fn draw<R: Rng>(&self, k: usize, rng: &mut R) -> Sample {
        let n = self.n_dims();
        let mut data = vec![0.0; k * n];
        for row in data.chunks_exact_mut(n) {
            self.draw_point(rng, row);
        }
        Sample {
            n_dims: n,
            data,
            seed: None,
        }
    }

    pub fn draw_seeded(&self, k: usize, seed: u64) -> Sample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = self.draw(k, &mut rng);
        s.seed = Some(seed);
        s
    }
}

/// `k` independent draws from `p` using a seeded ChaCha stream.
pub fn draw_sample(p: &dyn Density, k: usize, seed: u64) -> Result<Sample> {
    Ok(Sampler::new(p)?.draw_seeded(k, seed))
}
