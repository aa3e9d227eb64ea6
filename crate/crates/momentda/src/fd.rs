//! Finite-difference derivatives on `[0,1]` with stencils that shift inward
//! near the boundary.

/// Weights `c` with `sum_j c[j] f(xs[j]) ~ f^(d)(x0)` (Fornberg's recursion).
pub(crate) fn fornberg_weights(x0: f64, xs: &[f64], d: usize) -> Vec<f64> {
    let n = xs.len();
    let mut c = vec![vec![0.0; d + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(d);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[d]).collect()
}

/// Number of stencil points used for a derivative of order `d`.
pub(crate) fn stencil_len(d: usize) -> usize {
    let n = d + 8;
    n | 1
}

/// Equispaced stencil of spacing `h` around `x0`, kept inside `[0,1]`.
pub(crate) fn stencil(x0: f64, d: usize, h: f64) -> Vec<f64> {
    let n = stencil_len(d);
    let mut s = (n - 1) / 2;
    let below = (x0 / h).floor() as usize;
    let above = ((1.0 - x0) / h).floor() as usize;
    if s > below {
        s = below;
    }
    if n - 1 - s > above {
        s = n - 1 - above.min(n - 1);
    }
    (0..n)
        .map(|j| (x0 + (j as f64 - s as f64) * h).clamp(0.0, 1.0))
        .collect()
}

/// `d`-th derivative of `f` at `x0` using spacing `h`.
pub(crate) fn derivative(f: &dyn Fn(f64) -> f64, x0: f64, d: usize, h: f64) -> f64 {
    let xs = stencil(x0, d, h);
    let w = fornberg_weights(x0, &xs, d);
    xs.iter().zip(&w).map(|(&x, &c)| c * f(x)).sum()
}
