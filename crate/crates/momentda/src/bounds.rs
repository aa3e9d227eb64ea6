//! Error-bound calculators: constants, the population `L1` bound from
//! moment differences, the sample-based target-risk certificate, and the
//! worked example at `m = 5`, `N = 5`.
//!
//! All quantities are closed-form; nothing here integrates.

use std::f64::consts::E;

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::maxent::MomentVector;
use crate::polybasis::coefficient_abs_sums;

/// `C = 2 exp((3m-1)/2)`.
pub fn constant_c_simple(m: usize) -> Result<f64> {
    if m == 0 {
        return Err(invalid("m must be at least 1"));
    }
    Ok(2.0 * ((3.0 * m as f64 - 1.0) / 2.0).exp())
}

/// Largest `sup |ln p|` admitted by the smoothness class at degree `m`.
pub fn class_log_bound(m: usize) -> f64 {
    (3.0 * m as f64 - 6.0) / 2.0
}

/// Largest `||d^m ln p_j||_2` admitted by the smoothness class at degree `m`.
pub fn class_derivative_bound(m: usize) -> f64 {
    5f64.powi(m as i32 - 4)
}

/// Constants obtained from explicit smoothness parameters.
#[derive(Debug, Clone, Serialize)]
pub struct ImprovedConstants {
    pub m: usize,
    pub r: usize,
    pub c_inf: f64,
    pub c_r: f64,
    pub gamma: f64,
    pub xi: f64,
    #[serde(rename = "C")]
    pub c: f64,
    /// `4 e^(4 gamma + 1) e^(c_inf/2) (m+1) xi`; the constants apply when at most one.
    pub applicability: f64,
    pub applicable: bool,
}

/// `gamma = e^r c_r / (2^r sqrt(r-1) (m+r)^(r-1))`,
/// `xi^2 = e^c_inf c_r^2 / (4^r prod_{j=m-r+2}^{m+r+1} j)` and
/// `C = 2 exp(1 + c_inf + 2 gamma + 4 e^(4 gamma + 1) xi e^(c_inf/2) (m+1))`.
pub fn improved_constants(m: usize, r: usize, c_inf: f64, c_r: f64) -> Result<ImprovedConstants> {
    if r < 2 {
        return Err(invalid("derivative order r must be at least 2"));
    }
    if m < r {
        return Err(invalid(format!("degree m={m} must be at least r={r}")));
    }
    if !(c_inf >= 0.0) || !(c_r >= 0.0) || !c_inf.is_finite() || !c_r.is_finite() {
        return Err(invalid(
            "smoothness parameters must be finite and non-negative",
        ));
    }
    let (mf, rf) = (m as f64, r as f64);
    let gamma =
        rf.exp() * c_r / (2f64.powi(r as i32) * (rf - 1.0).sqrt() * (mf + rf).powf(rf - 1.0));
    let ln_prod: f64 = ((m - r + 2)..=(m + r + 1)).map(|j| (j as f64).ln()).sum();
    let ln_xi2 = c_inf + 2.0 * c_r.ln() - rf * 4f64.ln() - ln_prod;
    let xi = if c_r == 0.0 {
        0.0
    } else {
        (0.5 * ln_xi2).exp()
    };
    let coupling = 4.0 * (4.0 * gamma + 1.0).exp() * (c_inf / 2.0).exp() * (mf + 1.0);
    let applicability = coupling * xi;
    let c = 2.0 * (1.0 + c_inf + 2.0 * gamma + applicability).exp();
    Ok(ImprovedConstants {
        m,
        r,
        c_inf,
        c_r,
        gamma,
        xi,
        c,
        applicability,
        applicable: applicability <= 1.0,
    })
}

/// Which constant `C` a bound uses.
#[derive(Debug, Clone)]
pub enum ConstantChoice {
    /// `2 exp((3m-1)/2)`, valid for every member of the smoothness class.
    Simple,
    Improved(ImprovedConstants),
}

impl ConstantChoice {
    pub fn value(&self, m: usize) -> Result<f64> {
        match self {
            ConstantChoice::Simple => constant_c_simple(m),
            ConstantChoice::Improved(c) => Ok(c.c),
        }
    }

    pub fn source(&self) -> &'static str {
        match self {
            ConstantChoice::Simple => "simple",
            ConstantChoice::Improved(_) => "improved",
        }
    }
}

/// `L1` bound from moment differences, when the moment gate admits it.
#[derive(Debug, Clone, Serialize)]
pub struct L1Bound {
    #[serde(rename = "C")]
    pub c: f64,
    /// Largest admissible `||mu_p - mu_q||_1`, `1/(2C(m+1))`.
    pub threshold: f64,
    pub moment_distance: f64,
    /// `sqrt(2C) ||mu_p - mu_q||_1 + sqrt(8 eps)`; `None` above the threshold.
    pub bound: Option<f64>,
}

/// Population moment threshold `1/(2C(m+1))`.
pub fn population_threshold(c: f64, m: usize) -> f64 {
    1.0 / (2.0 * c * (m as f64 + 1.0))
}

/// Bounds `||p - q||_1` for two densities of the smoothness class whose
/// entropy gaps are at most `epsilon`.
pub fn l1_bound_from_moments(
    mu_p: &MomentVector,
    mu_q: &MomentVector,
    epsilon: f64,
    constants: &ConstantChoice,
) -> Result<L1Bound> {
    if !(epsilon >= 0.0) {
        return Err(invalid("epsilon must be non-negative"));
    }
    let m = mu_p.m;
    let c = constants.value(m)?;
    let distance = crate::metrics::moment_l1(mu_p, mu_q)?;
    let threshold = population_threshold(c, m);
    let bound =
        (distance <= threshold).then(|| (2.0 * c).sqrt() * distance + (8.0 * epsilon).sqrt());
    Ok(L1Bound {
        c,
        threshold,
        moment_distance: distance,
        bound,
    })
}

/// Target-risk bound from the source risk, the optimal joint risk and an
/// `L1` bound: `R_q <= R_p + L1 + lambda*`.
pub fn population_risk_bound(source_risk: f64, lambda_star: f64, l1: &L1Bound) -> Option<f64> {
    l1.bound.map(|b| source_risk + b + lambda_star)
}

/// `sqrt((4/k)(d ln(2ek/d) + ln(4/delta)))`.
pub fn vc_term(k: f64, d: f64, delta: f64) -> Result<f64> {
    if !(k >= 1.0) || !(d >= 1.0) {
        return Err(invalid("sample size and VC dimension must be at least 1"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("delta must lie in (0,1)"));
    }
    Ok((4.0 / k * (d * (2.0 * E * k / d).ln() + (4.0 / delta).ln())).sqrt())
}

/// Sample-moment threshold `(2(m+1) e C)^(-1)`.
pub fn sample_threshold(c: f64, m: usize) -> f64 {
    1.0 / (2.0 * (m as f64 + 1.0) * E * c)
}

/// Smallest admissible sample size `4 C^2 (m+1)^2 m / delta`, optionally
/// multiplied by `e^(-c_inf)`.
pub fn min_sample_size(c: f64, m: usize, delta: f64, c_inf: Option<f64>) -> f64 {
    let mf = m as f64;
    let base = 4.0 * c * c * (mf + 1.0).powi(2) * mf / delta;
    match c_inf {
        Some(ci) => base * (-ci).exp(),
        None => base,
    }
}

/// `C e^(-c_inf) m / (k delta)`: high-probability bound on
/// `D(p* || p_hat)` for a maximum-entropy fit to `k` sample moments.
pub fn sample_kl_bound(constants: &ImprovedConstants, k: f64, delta: f64) -> f64 {
    constants.c * (-constants.c_inf).exp() * constants.m as f64 / (k * delta)
}

/// Whether `4 C^2 (m+1)^2 m e^(-c_inf) <= delta k`.
pub fn sample_kl_condition(constants: &ImprovedConstants, k: f64, delta: f64) -> bool {
    min_sample_size(constants.c, constants.m, delta, Some(constants.c_inf)) <= k
}

/// Inputs of the sample-based target-risk certificate.
#[derive(Debug, Clone, Serialize)]
pub struct CertificateInputs {
    pub k: f64,
    pub d: f64,
    pub delta: f64,
    pub m: usize,
    #[serde(rename = "N")]
    pub n_dims: usize,
    /// `||mu_hat_p - mu_hat_q||_1`.
    pub moment_distance: f64,
    pub empirical_risk: f64,
    pub lambda_star: f64,
    pub epsilon: f64,
    /// Use `e^(-c_inf)` in the sample-size condition (needs improved constants).
    pub sharper_sample_condition: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateConstants {
    #[serde(rename = "C")]
    pub c: f64,
    pub gamma: Option<f64>,
    pub xi: Option<f64>,
    pub source: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Condition {
    pub name: String,
    pub required: f64,
    pub actual: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CertificateTerms {
    pub empirical_risk: f64,
    pub vc: f64,
    pub lambda_star: f64,
    /// `sqrt(2eC) ||mu_hat_p - mu_hat_q||_1`.
    pub moment: f64,
    /// `sqrt(8C) sqrt(N m / (k delta))`.
    pub sampling: f64,
    /// `sqrt(8 eps)`.
    pub epsilon: f64,
}

impl CertificateTerms {
    pub fn sum(&self) -> f64 {
        self.empirical_risk
            + self.vc
            + self.lambda_star
            + self.moment
            + self.sampling
            + self.epsilon
    }
}

/// Every term and condition of the target-risk bound; `total` is `None`
/// unless all conditions hold.
#[derive(Debug, Clone, Serialize)]
pub struct BoundCertificate {
    pub inputs: CertificateInputs,
    pub constants: CertificateConstants,
    pub conditions: Vec<Condition>,
    pub terms: CertificateTerms,
    pub total: Option<f64>,
}

impl BoundCertificate {
    pub fn all_conditions_hold(&self) -> bool {
        self.conditions.iter().all(|c| c.ok)
    }
}

/// Builds the certificate bounding the target risk by the empirical source
/// risk, the VC term, `lambda*`, the sample-moment distance, the sampling
/// error and the entropy gap.
pub fn sample_risk_certificate(
    inputs: CertificateInputs,
    constants: &ConstantChoice,
) -> Result<BoundCertificate> {
    let CertificateInputs {
        k,
        d,
        delta,
        m,
        n_dims,
        moment_distance,
        empirical_risk,
        lambda_star,
        epsilon,
        sharper_sample_condition,
    } = inputs;
    if n_dims == 0 {
        return Err(invalid("dimension must be at least 1"));
    }
    if !(moment_distance >= 0.0) || !(epsilon >= 0.0) {
        return Err(invalid("moment distance and epsilon must be non-negative"));
    }
    if !(0.0..=1.0).contains(&empirical_risk) || !(lambda_star >= 0.0) {
        return Err(invalid(
            "risks must be non-negative, empirical risk at most 1",
        ));
    }
    let vc = vc_term(k, d, delta)?;
    let c = constants.value(m)?;
    let sharper_c_inf = match (sharper_sample_condition, constants) {
        (false, _) => None,
        (true, ConstantChoice::Improved(ic)) => Some(ic.c_inf),
        (true, ConstantChoice::Simple) => {
            return Err(invalid(
                "the sharper sample condition needs improved constants",
            ))
        }
    };
    let mut conditions = vec![
        Condition {
            name: "sample_size".into(),
            required: min_sample_size(c, m, delta, sharper_c_inf),
            actual: k,
            ok: k >= min_sample_size(c, m, delta, sharper_c_inf),
        },
        Condition {
            name: "moment_distance".into(),
            required: sample_threshold(c, m),
            actual: moment_distance,
            ok: moment_distance <= sample_threshold(c, m),
        },
    ];
    let (gamma, xi) = match constants {
        ConstantChoice::Simple => (None, None),
        ConstantChoice::Improved(ic) => {
            conditions.push(Condition {
                name: "constants_applicable".into(),
                required: 1.0,
                actual: ic.applicability,
                ok: ic.applicable,
            });
            (Some(ic.gamma), Some(ic.xi))
        }
    };
    let terms = CertificateTerms {
        empirical_risk,
        vc,
        lambda_star,
        moment: (2.0 * E * c).sqrt() * moment_distance,
        sampling: (8.0 * c).sqrt() * (n_dims as f64 * m as f64 / (k * delta)).sqrt(),
        epsilon: (8.0 * epsilon).sqrt(),
    };
    let total = conditions.iter().all(|c| c.ok).then(|| terms.sum());
    Ok(BoundCertificate {
        inputs,
        constants: CertificateConstants {
            c,
            gamma,
            xi,
            source: constants.source().into(),
        },
        conditions,
        terms,
        total,
    })
}

/// Factor turning a central-moment discrepancy of order `m` into a bound on
/// the Legendre moment distance: `C_m m^2 (m+1) max_t binom(m,t) sqrt(N)`.
pub fn cmd_to_moment_factor(m: usize, n_dims: usize, c_m: f64) -> f64 {
    let mf = m as f64;
    let max_binom = (0..=m).map(|t| binomial(m, t)).fold(0.0, f64::max);
    c_m * mf * mf * (mf + 1.0) * max_binom * (n_dims as f64).sqrt()
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// CSV export of a batch of certificates, one row per certificate.
pub fn certificates_to_csv<W: std::io::Write>(certs: &[BoundCertificate], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "k",
        "d",
        "delta",
        "m",
        "N",
        "moment_distance",
        "C",
        "empirical_risk",
        "vc",
        "lambda_star",
        "moment",
        "sampling",
        "epsilon",
        "conditions_ok",
        "total",
    ])?;
    for c in certs {
        let i = &c.inputs;
        let t = &c.terms;
        out.write_record([
            i.k.to_string(),
            i.d.to_string(),
            i.delta.to_string(),
            i.m.to_string(),
            i.n_dims.to_string(),
            i.moment_distance.to_string(),
            c.constants.c.to_string(),
            t.empirical_risk.to_string(),
            t.vc.to_string(),
            t.lambda_star.to_string(),
            t.moment.to_string(),
            t.sampling.to_string(),
            t.epsilon.to_string(),
            c.all_conditions_hold().to_string(),
            c.total.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    out.flush().map_err(|e| crate::Error::Io {
        path: "<certificates>".into(),
        source: e,
    })
}

/// Outcome of checking a smoothness report against the class thresholds.
#[derive(Debug, Clone, Serialize)]
pub struct ClassCheck {
    pub name: String,
    pub required: f64,
    pub actual: f64,
    /// `None` when the measurement did not converge.
    pub ok: Option<bool>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MembershipVerdict {
    pub checks: Vec<ClassCheck>,
    /// `Some(false)` if any check fails, `None` if none fails but one is
    /// undetermined.
    pub member: Option<bool>,
}

/// Tolerance on the entropy-gap comparison, matching quadrature accuracy.
const ENTROPY_GAP_TOL: f64 = 1e-8;

/// Compares a report with the class thresholds at its degree: entropy gap at
/// most `epsilon`, `sup |ln p| <= (3m-6)/2` and every `m`-th log-derivative
/// norm at most `5^(m-4)`.
pub fn smoothness_membership(
    report: &crate::density::SmoothnessReport,
    epsilon: f64,
) -> MembershipVerdict {
    let m = report.m;
    let checks = vec![
        ClassCheck {
            name: "entropy_gap".into(),
            required: epsilon,
            actual: report.epsilon,
            ok: Some(report.epsilon <= epsilon + ENTROPY_GAP_TOL),
        },
        ClassCheck {
            name: "log_density_bound".into(),
            required: class_log_bound(m),
            actual: report.c_inf,
            ok: Some(report.c_inf <= class_log_bound(m)),
        },
        ClassCheck {
            name: "derivative_bound".into(),
            required: class_derivative_bound(m),
            actual: report.c_r_max(),
            ok: report
                .derivative_resolved
                .then(|| report.c_r_max() <= class_derivative_bound(m)),
        },
    ];
    let member = if checks.iter().any(|c| c.ok == Some(false)) {
        Some(false)
    } else if checks.iter().any(|c| c.ok.is_none()) {
        None
    } else {
        Some(true)
    };
    MembershipVerdict { checks, member }
}

/// One line of the worked-example comparison.
#[derive(Debug, Clone, Serialize)]
pub struct ExampleRow {
    pub quantity: String,
    pub computed: f64,
    pub reference: f64,
    pub relative_error: f64,
    /// Whether the value is within the tolerance; `None` for rows that are
    /// reported without a tolerance.
    pub ok: Option<bool>,
}

/// Worked example at `m = r = 5`, `c_inf = 5`, `c_r = 10`, `delta = 0.2`,
/// `N = 5`, `d = 6`, `k = 6.3e9`.
#[derive(Debug, Clone, Serialize)]
pub struct WorkedExample {
    pub constants: ImprovedConstants,
    pub certificate: BoundCertificate,
    pub rows: Vec<ExampleRow>,
    /// `C_5`, the largest per-power coefficient sum of `eta_1..=eta_5`.
    pub c5: f64,
    /// `C_5` that the reference end-to-end coefficient `2.96e8` corresponds to.
    pub c5_implied_by_reference: f64,
}

pub const EXAMPLE_M: usize = 5;
pub const EXAMPLE_C_INF: f64 = 5.0;
pub const EXAMPLE_C_R: f64 = 10.0;
pub const EXAMPLE_DELTA: f64 = 0.2;
pub const EXAMPLE_N: usize = 5;
pub const EXAMPLE_D: f64 = 6.0;
pub const EXAMPLE_K: f64 = 6.3e9;

fn row(quantity: &str, computed: f64, reference: f64, tolerance: Option<Tolerance>) -> ExampleRow {
    let relative_error = (computed - reference).abs() / reference.abs();
    let ok = tolerance.map(|t| match t {
        Tolerance::Abs(a) => (computed - reference).abs() <= a,
        Tolerance::Rel(r) => relative_error <= r,
        Tolerance::Range(lo, hi) => (lo..=hi).contains(&computed),
    });
    ExampleRow {
        quantity: quantity.into(),
        computed,
        reference,
        relative_error,
        ok,
    }
}

#[derive(Debug, Clone, Copy)]
enum Tolerance {
    Abs(f64),
    Rel(f64),
    Range(f64, f64),
}

pub fn worked_example() -> Result<WorkedExample> {
    let ic = improved_constants(EXAMPLE_M, EXAMPLE_M, EXAMPLE_C_INF, EXAMPLE_C_R)?;
    let c = ic.c;
    let m = EXAMPLE_M;
    let choice = ConstantChoice::Improved(ic.clone());
    let certificate = sample_risk_certificate(
        CertificateInputs {
            k: EXAMPLE_K,
            d: EXAMPLE_D,
            delta: EXAMPLE_DELTA,
            m,
            n_dims: EXAMPLE_N,
            moment_distance: 0.0,
            empirical_risk: 0.0,
            lambda_star: 0.0,
            epsilon: 0.0,
            sharper_sample_condition: false,
        },
        &choice,
    )?;
    let sqrt_2ec = (2.0 * E * c).sqrt();
    let sampling_coef = (8.0 * c * m as f64 / EXAMPLE_DELTA).sqrt();
    let threshold = sample_threshold(c, m);
    let min_k = min_sample_size(c, m, EXAMPLE_DELTA, None);
    let vc = vc_term(EXAMPLE_K, EXAMPLE_D, EXAMPLE_DELTA)?;
    let sampling = certificate.terms.sampling;
    let c5 = coefficient_abs_sums(m)?.c_m;
    let factor = cmd_to_moment_factor(m, EXAMPLE_N, c5);
    let end_to_end = sqrt_2ec * factor;
    let c5_implied = 2.96e8 / (sqrt_2ec * factor / c5);
    let rows = vec![
        row("sqrt(2eC)", sqrt_2ec, 84.6, Some(Tolerance::Abs(0.5))),
        row(
            "sqrt(8Cm/delta)",
            sampling_coef,
            513.0,
            Some(Tolerance::Abs(2.0)),
        ),
        row(
            "moment_threshold",
            threshold,
            2.3e-5,
            Some(Tolerance::Rel(0.05)),
        ),
        row("min_sample_size", min_k, 6.3e9, Some(Tolerance::Rel(0.02))),
        row("vc_term", vc, 2.95e-4, Some(Tolerance::Rel(0.02))),
        row(
            "sampling_term",
            sampling,
            1.44e-2,
            Some(Tolerance::Range(0.0140, 0.0150)),
        ),
        row("vc_plus_sampling", vc + sampling, 0.0148, None),
        row("cmd_coefficient", end_to_end, 2.96e8, None),
        row("cmd_threshold", threshold / factor, 6.7e-12, None),
        row("C", c, c, None),
    ];
    Ok(WorkedExample {
        constants: ic,
        certificate,
        rows,
        c5,
        c5_implied_by_reference: c5_implied,
    })
}
