//! Distances between densities, moment vectors and samples, plus risks of
//! classifiers against labelings.
//!
//! Integrands with kinks or jumps (`|p-q|`, `|f-l| p`) are integrated on the
//! doubled grid order, shared by both densities so that identities between
//! risks and distances hold exactly on the grid.

use std::sync::Arc;

use crate::density::{self, dot, Density, ExpFamilyDensity, Sample};
use crate::error::{invalid, Error, Result};
use crate::maxent::MomentVector;
use crate::quadrature::{gauss_legendre, nonsmooth_order, QuadGridND};

fn check_dims(p: &dyn Density, q: &dyn Density) -> Result<()> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: p.dim(),
            got: q.dim(),
        });
    }
    Ok(())
}

/// Grid order shared by two densities for non-smooth integrands.
pub fn common_nonsmooth_order(p: &dyn Density, q: &dyn Density) -> usize {
    nonsmooth_order(p.quad_order().max(q.quad_order()))
}

/// `int |p - q|`.
pub fn l1_distance(p: &dyn Density, q: &dyn Density) -> Result<f64> {
    check_dims(p, q)?;
    l1_distance_with_order(p, q, common_nonsmooth_order(p, q))
}

pub fn l1_distance_with_order(p: &dyn Density, q: &dyn Density, order: usize) -> Result<f64> {
    check_dims(p, q)?;
    QuadGridND::new(p.dim(), order)?.integrate(|x| (p.pdf(x) - q.pdf(x)).abs())
}

/// `int p ln(p/q)` on the finer of the two grids.
pub fn kl_divergence(p: &dyn Density, q: &dyn Density) -> Result<f64> {
    check_dims(p, q)?;
    let grid = QuadGridND::new(p.dim(), p.quad_order().max(q.quad_order()))?;
    let mut violated = false;
    let value = grid.fold(
        || (0.0, false),
        |acc, x, w| {
            let lp = p.ln_pdf(x);
            if lp == f64::NEG_INFINITY {
                return;
            }
            let lq = q.ln_pdf(x);
            if lq == f64::NEG_INFINITY {
                acc.1 = true;
                return;
            }
            acc.0 += w * lp.exp() * (lp - lq);
        },
        |a, b| (a.0 + b.0, a.1 || b.1),
    );
    violated |= value.1;
    if violated {
        return Err(Error::SupportViolation);
    }
    if !value.0.is_finite() {
        return Err(Error::NonFiniteIntegrand { node: vec![] });
    }
    Ok(value.0)
}

/// `D(p||q) = (ln c_p - ln c_q) + <mu_p, lambda_q - lambda_p>` for two members
/// of the same exponential family.
pub fn kl_expfam_closed_form(p: &ExpFamilyDensity, q: &ExpFamilyDensity) -> Result<f64> {
    let (bp, bq) = (p.basis(), q.basis());
    if bp.degree() != bq.degree() || bp.n_dims() != bq.n_dims() {
        return Err(Error::DimensionMismatch {
            expected: bp.len(),
            got: bq.len(),
        });
    }
    let mu_p = density::moments(p, bp)?;
    let diff: Vec<f64> = q
        .lambda()
        .iter()
        .zip(p.lambda())
        .map(|(a, b)| a - b)
        .collect();
    Ok(p.ln_normalizer() - q.ln_normalizer() + dot(&mu_p.values, &diff))
}

/// `sum |mu_p - mu_q|`.
pub fn moment_l1(a: &MomentVector, b: &MomentVector) -> Result<f64> {
    if a.m != b.m || a.n_dims != b.n_dims {
        return Err(Error::DimensionMismatch {
            expected: a.values.len(),
            got: b.values.len(),
        });
    }
    a.l1_distance(b)
}

/// Sample mean followed by central moments of orders `2..=m`, coordinatewise,
/// all with the `1/k` normalisation.
pub fn central_moments(x: &Sample, m: usize) -> Result<Vec<Vec<f64>>> {
    if x.is_empty() {
        return Err(Error::EmptySample);
    }
    let n = x.n_dims;
    let k = x.len() as f64;
    let mut mean = vec![0.0; n];
    for row in x.rows() {
        for (a, v) in mean.iter_mut().zip(row) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|a| *a /= k);
    let mut out = vec![mean.clone()];
    for j in 2..=m {
        let mut c = vec![0.0; n];
        for row in x.rows() {
            for ((a, v), mu) in c.iter_mut().zip(row).zip(&mean) {
                *a += (v - mu).powi(j as i32);
            }
        }
        c.iter_mut().for_each(|a| *a /= k);
        out.push(c);
    }
    Ok(out)
}

/// Central moment discrepancy `sum_j ||c_j(X) - c_j(Y)||_2` for `j = 1..=m`.
pub fn cmd(x: &Sample, y: &Sample, m: usize) -> Result<f64> {
    if x.n_dims != y.n_dims {
        return Err(Error::DimensionMismatch {
            expected: x.n_dims,
            got: y.n_dims,
        });
    }
    if m == 0 {
        return Err(invalid("moment order must be at least 1"));
    }
    let cx = central_moments(x, m)?;
    let cy = central_moments(y, m)?;
    Ok(cx
        .iter()
        .zip(&cy)
        .map(|(a, b)| {
            a.iter()
                .zip(b)
                .map(|(u, v)| (u - v) * (u - v))
                .sum::<f64>()
                .sqrt()
        })
        .sum())
}

/// A univariate distribution function given at increasing abscissae and
/// linearly interpolated between them; `0` below the first and `1` above the
/// last abscissa.
#[derive(Debug, Clone)]
pub struct TabulatedCdf {
    xs: Vec<f64>,
    fs: Vec<f64>,
}

impl TabulatedCdf {
    pub fn new(xs: Vec<f64>, fs: Vec<f64>) -> Result<Self> {
        if xs.len() != fs.len() || xs.len() < 2 {
            return Err(invalid("tabulated CDF needs matching abscissae and values"));
        }
        if let Some(i) = xs.windows(2).position(|w| !(w[0] < w[1])) {
            return Err(invalid(format!(
                "abscissae not increasing at index {}",
                i + 1
            )));
        }
        if let Some(i) = fs.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::NonMonotoneCdf { index: i + 1 });
        }
        if let Some(i) = fs.iter().position(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::NonMonotoneCdf { index: i });
        }
        Ok(Self { xs, fs })
    }

    /// CDF of a univariate density on `points` equally spaced abscissae.
    pub fn from_density(p: &dyn Density, points: usize) -> Result<Self> {
        if p.dim() != 1 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: p.dim(),
            });
        }
        if points < 2 {
            return Err(invalid("need at least two abscissae"));
        }
        let rule = gauss_legendre(8)?;
        let h = 1.0 / (points - 1) as f64;
        let xs: Vec<f64> = (0..points).map(|i| i as f64 * h).collect();
        let mut fs = Vec::with_capacity(points);
        fs.push(0.0);
        let mut acc = 0.0;
        for &a in &xs[..points - 1] {
            acc += h * rule.integrate(|t| p.pdf(&[a + h * t]));
            fs.push(acc);
        }
        fs.iter_mut().for_each(|f| *f = (*f / acc).min(1.0));
        Self::new(xs, fs)
    }

    pub fn abscissae(&self) -> &[f64] {
        &self.xs
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return if x < self.xs[0] { 0.0 } else { self.fs[0] };
        }
        if x >= self.xs[n - 1] {
            return 1.0;
        }
        let i = self.xs.partition_point(|&v| v <= x) - 1;
        let t = (x - self.xs[i]) / (self.xs[i + 1] - self.xs[i]);
        self.fs[i] + t * (self.fs[i + 1] - self.fs[i])
    }
}

fn levy_holds(p: &TabulatedCdf, q: &TabulatedCdf, xs: &[f64], eps: f64) -> bool {
    const SLACK: f64 = 1e-12;
    xs.iter().all(|&x| {
        let qx = q.eval(x);
        p.eval(x - eps) - eps <= qx + SLACK && qx <= p.eval(x + eps) + eps + SLACK
    })
}

/// Levy distance: the least `eps` with
/// `P(x-eps) - eps <= Q(x) <= P(x+eps) + eps` at every tabulated `x`,
/// located by bisection to within `1e-7`.
pub fn levy_metric(p: &TabulatedCdf, q: &TabulatedCdf) -> Result<f64> {
    let mut xs: Vec<f64> = p.xs.iter().chain(&q.xs).copied().collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if levy_holds(p, q, &xs, 0.0) {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > 1e-7 {
        let mid = 0.5 * (lo + hi);
        if levy_holds(p, q, &xs, mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// A hard classifier `f: [0,1]^N -> {0,1}`.
#[derive(Clone)]
pub struct Classifier {
    name: String,
    f: Arc<dyn Fn(&[f64]) -> bool + Send + Sync>,
}

impl std::fmt::Debug for Classifier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Classifier({})", self.name)
    }
}

impl Classifier {
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(&[f64]) -> bool + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    /// `1[x_axis > t]`.
    pub fn threshold(axis: usize, t: f64) -> Self {
        Self::new(format!("x{axis} > {t}"), move |x| x[axis] > t)
    }

    pub fn constant(value: bool) -> Self {
        Self::new(format!("constant {}", value as u8), move |_| value)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        if (self.f)(x) {
            1.0
        } else {
            0.0
        }
    }
}

/// A soft labeling `l: [0,1]^N -> [0,1]`.
#[derive(Clone)]
pub struct Labeling {
    name: String,
    f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl std::fmt::Debug for Labeling {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Labeling({})", self.name)
    }
}

impl Labeling {
    pub fn new(name: impl Into<String>, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    pub fn constant(value: f64) -> Self {
        Self::new(format!("constant {value}"), move |_| value)
    }

    /// `1[<w, x> > b]`.
    pub fn half_space(w: Vec<f64>, b: f64) -> Self {
        Self::new(format!("<{w:?}, x> > {b}"), move |x| {
            if dot(&w, x) > b {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn from_classifier(f: &Classifier) -> Self {
        let g = f.clone();
        Self::new(g.name.clone(), move |x| g.predict(x))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}

/// `int |f - l| p` on the doubled grid order of `p`.
pub fn risk(f: &Classifier, l: &Labeling, p: &dyn Density) -> Result<f64> {
    risk_with_order(f, l, p, nonsmooth_order(p.quad_order()))
}

pub fn risk_with_order(f: &Classifier, l: &Labeling, p: &dyn Density, order: usize) -> Result<f64> {
    QuadGridND::new(p.dim(), order)?.integrate(|x| (f.predict(x) - l.eval(x)).abs() * p.pdf(x))
}

/// Mean of `|f - l|` over the sample points.
pub fn empirical_risk(f: &Classifier, l: &Labeling, x: &Sample) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(x.rows()
        .map(|r| (f.predict(r) - l.eval(r)).abs())
        .sum::<f64>()
        / x.len() as f64)
}

/// The labeling with `|f - l*| = 1[p >= q]`, which makes the risk gap between
/// `p` and `q` as large as possible, together with that gap.
pub fn worst_case_labeling(
    f: &Classifier,
    p: Arc<dyn Density>,
    q: Arc<dyn Density>,
) -> Result<(Labeling, f64)> {
    check_dims(p.as_ref(), q.as_ref())?;
    let order = common_nonsmooth_order(p.as_ref(), q.as_ref());
    let (pp, qq, ff) = (p.clone(), q.clone(), f.clone());
    let l = Labeling::new(format!("worst case for {}", f.name()), move |x| {
        let fx = ff.predict(x);
        if pp.ln_pdf(x) >= qq.ln_pdf(x) {
            1.0 - fx
        } else {
            fx
        }
    });
    let rp = risk_with_order(f, &l, p.as_ref(), order)?;
    let rq = risk_with_order(f, &l, q.as_ref(), order)?;
    Ok((l, (rp - rq).abs()))
}
