//! Gauss–Legendre quadrature on `[0,1]` and tensor grids on `[0,1]^N`.
//!
//! Grids are never materialised: nodes are enumerated with an odometer, and
//! sums over the first coordinate are split across threads and recombined in
//! index order so results do not depend on the thread count.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;

use crate::error::{Error, Result};

pub const MIN_ORDER: usize = 2;
pub const MAX_ORDER: usize = 512;

/// Nodes in increasing order with their weights; the weights sum to one.
#[derive(Debug, Clone)]
pub struct QuadRule1D {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadRule1D {
    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

fn compute_rule(n: usize) -> QuadRule1D {
    let half = n.div_ceil(2);
    let mut lo = Vec::with_capacity(half);
    for i in 0..half {
        let mut t = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, t);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * t * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (t * p1 - p0) / (t * t - 1.0);
            let dt = p1 / dp;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        let w = 1.0 / ((1.0 - t * t) * dp * dp);
        lo.push(((1.0 - t) / 2.0, w));
    }
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for &(x, w) in &lo {
        nodes.push(x);
        weights.push(w);
    }
    let mirrored = if n % 2 == 1 { half - 1 } else { half };
    for &(x, w) in lo[..mirrored].iter().rev() {
        nodes.push(1.0 - x);
        weights.push(w);
    }
    if n % 2 == 1 {
        nodes[half - 1] = 0.5;
    }
    QuadRule1D { nodes, weights }
}

/// The `n`-point Gauss–Legendre rule on `[0,1]`, exact for polynomials of
/// degree below `2n`. Rules are cached.
pub fn gauss_legendre(n: usize) -> Result<Arc<QuadRule1D>> {
    if !(MIN_ORDER..=MAX_ORDER).contains(&n) {
        return Err(Error::QuadOrderOutOfRange { n });
    }
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<QuadRule1D>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(rule) = cache.lock().unwrap().get(&n) {
        return Ok(rule.clone());
    }
    let rule = Arc::new(compute_rule(n));
    cache.lock().unwrap().insert(n, rule.clone());
    Ok(rule)
}

/// Default per-dimension order: 128 up to three dimensions, 32 above.
pub fn default_order(n_dims: usize) -> usize {
    if n_dims <= 3 {
        128
    } else {
        32
    }
}

/// Order used for integrands with kinks or jumps (absolute values, indicators).
pub fn nonsmooth_order(order: usize) -> usize {
    (2 * order).min(MAX_ORDER)
}

/// Tensor product of one rule across `n_dims` coordinates.
#[derive(Debug, Clone)]
pub struct QuadGridND {
    rule: Arc<QuadRule1D>,
    n_dims: usize,
}

impl QuadGridND {
    pub fn new(n_dims: usize, order: usize) -> Result<Self> {
        if n_dims == 0 {
            return Err(crate::error::invalid("dimension must be at least 1"));
        }
        Ok(Self {
            rule: gauss_legendre(order)?,
            n_dims,
        })
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    pub fn order(&self) -> usize {
        self.rule.order()
    }

    pub fn rule(&self) -> &QuadRule1D {
        &self.rule
    }

    /// Total number of nodes, `order^N`.
    pub fn len(&self) -> usize {
        self.order().pow(self.n_dims as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Visits every node with its product weight, last coordinate fastest.
    pub fn for_each(&self, mut f: impl FnMut(&[f64], f64)) {
        let n = self.order();
        let mut idx = vec![0usize; self.n_dims];
        let mut x: Vec<f64> = vec![self.rule.nodes[0]; self.n_dims];
        loop {
            let w: f64 = idx.iter().map(|&i| self.rule.weights[i]).product();
            f(&x, w);
            let mut d = self.n_dims;
            loop {
                if d == 0 {
                    return;
                }
                d -= 1;
                idx[d] += 1;
                if idx[d] < n {
                    x[d] = self.rule.nodes[idx[d]];
                    break;
                }
                idx[d] = 0;
                x[d] = self.rule.nodes[0];
            }
        }
    }

    /// Visits the nodes whose first coordinate has index `first`.
    fn for_each_slice(&self, first: usize, mut f: impl FnMut(&[f64], f64)) {
        let x0 = self.rule.nodes[first];
        let w0 = self.rule.weights[first];
        if self.n_dims == 1 {
            f(&[x0], w0);
            return;
        }
        let rest = QuadGridND {
            rule: self.rule.clone(),
            n_dims: self.n_dims - 1,
        };
        let mut x = vec![x0; self.n_dims];
        rest.for_each(|y, w| {
            x[1..].copy_from_slice(y);
            f(&x, w0 * w);
        });
    }

    /// Deterministic parallel fold: `acc` is built per first-coordinate slice
    /// and the slices are merged in index order.
    pub fn fold<A, I, F, M>(&self, init: I, visit: F, merge: M) -> A
    where
        A: Send,
        I: Fn() -> A + Sync,
        F: Fn(&mut A, &[f64], f64) + Sync,
        M: Fn(A, A) -> A,
    {
        if self.n_dims == 1 {
            let mut acc = init();
            for (&x, &w) in self.rule.nodes.iter().zip(&self.rule.weights) {
                visit(&mut acc, &[x], w);
            }
            return acc;
        }
        let parts: Vec<A> = (0..self.order())
            .into_par_iter()
            .map(|i| {
                let mut acc = init();
                self.for_each_slice(i, |x, w| visit(&mut acc, x, w));
                acc
            })
            .collect();
        let mut it = parts.into_iter();
        let first = it.next().unwrap_or_else(&init);
        it.fold(first, merge)
    }

    /// `sum_nodes w * f(x)`, failing on the first non-finite value.
    pub fn integrate<F>(&self, f: F) -> Result<f64>
    where
        F: Fn(&[f64]) -> f64 + Sync,
    {
        let (sum, bad) = self.fold(
            || (0.0, None::<Vec<f64>>),
            |acc, x, w| {
                if acc.1.is_some() {
                    return;
                }
                let v = f(x);
                if v.is_finite() {
                    acc.0 += w * v;
                } else {
                    acc.1 = Some(x.to_vec());
                }
            },
            |a, b| (a.0 + b.0, a.1.or(b.1)),
        );
        match bad {
            Some(node) => Err(Error::NonFiniteIntegrand { node }),
            None => Ok(sum),
        }
    }

    /// Integrates several functions at once; `f` writes `k` values per node.
    pub fn integrate_vec<F>(&self, k: usize, f: F) -> Result<Vec<f64>>
    where
        F: Fn(&[f64], &mut [f64]) + Sync,
    {
        let (sum, bad, _) = self.fold(
            || (vec![0.0; k], None::<Vec<f64>>, vec![0.0; k]),
            |acc, x, w| {
                if acc.1.is_some() {
                    return;
                }
                f(x, &mut acc.2);
                if acc.2.iter().all(|v| v.is_finite()) {
                    for (s, v) in acc.0.iter_mut().zip(&acc.2) {
                        *s += w * v;
                    }
                } else {
                    acc.1 = Some(x.to_vec());
                }
            },
            |mut a, b| {
                for (s, v) in a.0.iter_mut().zip(&b.0) {
                    *s += v;
                }
                (a.0, a.1.or(b.1), a.2)
            },
        );
        match bad {
            Some(node) => Err(Error::NonFiniteIntegrand { node }),
            None => Ok(sum),
        }
    }
}

/// Integrates at `order` and `2*order` and fails if the two differ by more
/// than `tol` (absolute, scaled by `max(1, |fine|)`).
pub fn integrate_converged<F>(n_dims: usize, order: usize, tol: f64, f: F) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let coarse = QuadGridND::new(n_dims, order)?.integrate(&f)?;
    let fine = QuadGridND::new(n_dims, 2 * order)?.integrate(&f)?;
    if (coarse - fine).abs() > tol * fine.abs().max(1.0) {
        return Err(Error::QuadratureNotConverged {
            n: order,
            coarse,
            fine,
        });
    }
    Ok(fine)
}
