//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::sync::Arc;
use std::time::{Duration, Instant};

use momentda::bounds::worked_example;
use momentda::density::{entropy, moments, Density, ExpFamilyDensity, GridDensity};
use momentda::experiments::{
    adaptation_demo, l1_bound_check, levy_relation_probe, sample_concentration,
    truncated_normal_counterexample, worked_example_repro, AdaptationParams, AdaptationScenario,
    ConcentrationParams, ExperimentRecord, L1BoundCheckParams, LevyProbeParams,
    TruncatedNormalParams,
};
use momentda::maxent::{
    epsilon_gap, fit_maxent, fit_maxent_joint, maxent_counterpart, maxent_entropy, FitOptions,
};
use momentda::metrics::{
    common_nonsmooth_order, kl_divergence, kl_expfam_closed_form, l1_distance, risk_with_order,
    worst_case_labeling, Classifier, Labeling,
};
use momentda::polybasis::{PolyBasis1D, TensorBasis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: String) -> Check {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn within(elapsed: Duration, limit: Duration) -> Check {
    ensure(
        elapsed <= limit,
        format!("{:.2?} (limit {:?})", elapsed, limit),
    )
}

fn worked_example_constants() -> Check {
    let t = Instant::now();
    let ex = worked_example().map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let get = |q: &str| ex.rows.iter().find(|r| r.quantity == q).unwrap().computed;
    let checks = [
        ("sqrt(2eC)", (get("sqrt(2eC)") - 84.6).abs() <= 0.5),
        (
            "sqrt(8Cm/delta)",
            (get("sqrt(8Cm/delta)") - 513.0).abs() <= 2.0,
        ),
        (
            "threshold",
            (get("moment_threshold") / 2.3e-5 - 1.0).abs() <= 0.05,
        ),
        (
            "min k",
            (get("min_sample_size") / 6.3e9 - 1.0).abs() <= 0.02,
        ),
        ("vc term", (get("vc_term") / 2.95e-4 - 1.0).abs() <= 0.02),
        (
            "sampling term",
            (0.0140..=0.0150).contains(&get("sampling_term")),
        ),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    let timing = within(elapsed, Duration::from_secs(1))?;
    ensure(
        failed.is_empty(),
        format!(
            "sqrt(2eC)={:.3} sqrt(8Cm/delta)={:.3} threshold={:.4e} min_k={:.4e} vc={:.4e} sampling={:.5} {timing} failed={failed:?}",
            get("sqrt(2eC)"),
            get("sqrt(8Cm/delta)"),
            get("moment_threshold"),
            get("min_sample_size"),
            get("vc_term"),
            get("sampling_term"),
        ),
    )
}

fn basis_exactness() -> Check {
    let b = PolyBasis1D::new(5).map_err(|e| e.to_string())?;
    let g = b.gram_exact();
    let mut worst: f64 = 0.0;
    for (i, row) in g.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            worst = worst.max((v - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    let printed: [&[i128]; 5] = [
        &[-1, 2],
        &[1, -6, 6],
        &[-1, 12, -30, 20],
        &[1, -20, 90, -140, 70],
        &[-1, 30, -210, 560, -630, 252],
    ];
    let scales = [3.0f64, 5.0, 7.0, 9.0, 11.0];
    let coeffs_ok = printed.iter().enumerate().all(|(i, p)| {
        b.integer_coefficients(i + 1) == *p
            && b.coefficients(i + 1)
                .iter()
                .zip(p.iter())
                .all(|(c, k)| *c == scales[i].sqrt() * *k as f64)
    });
    ensure(
        worst < 1e-10 && coeffs_ok,
        format!("max |G - I| = {worst:.2e}, coefficients exact: {coeffs_ok}"),
    )
}

fn maxent_correctness() -> Check {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let e = |e: momentda::Error| e.to_string();
    let mut worst_lambda: f64 = 0.0;
    for trial in 0..50 {
        let m = 1 + trial % 5;
        let basis = TensorBasis::new(m, 1).map_err(e)?;
        let lam: Vec<f64> = (1..=m)
            .map(|i| rng.gen_range(-1.0..1.0) / i as f64)
            .collect();
        let p = ExpFamilyDensity::with_default_order(basis.clone(), lam.clone()).map_err(e)?;
        let fit =
            fit_maxent(&moments(&p, &basis).map_err(e)?, &FitOptions::default()).map_err(e)?;
        for (a, b) in fit.density.lambda().iter().zip(&lam) {
            worst_lambda = worst_lambda.max((a - b).abs());
        }
    }
    let tn = GridDensity::truncated_normal(0.45, 0.15).map_err(e)?;
    let b2 = TensorBasis::new(2, 1).map_err(e)?;
    let tn_l1 = l1_distance(&tn, &maxent_counterpart(&tn, &b2).map_err(e)?.density).map_err(e)?;

    let tests: Vec<Arc<dyn Density>> = vec![
        Arc::new(tn.clone()),
        Arc::new(GridDensity::truncated_normal(0.2, 0.05).map_err(e)?),
        Arc::new(GridDensity::uniform(1).map_err(e)?),
        Arc::new(
            GridDensity::mixture(
                &[0.4, 0.6],
                vec![
                    Arc::new(GridDensity::truncated_normal(0.25, 0.07).map_err(e)?),
                    Arc::new(GridDensity::truncated_normal(0.7, 0.1).map_err(e)?),
                ],
            )
            .map_err(e)?,
        ),
        Arc::new(GridDensity::from_log_fn(1, 128, |x| (7.0 * x[0]).cos()).map_err(e)?),
        Arc::new(
            GridDensity::product(vec![
                Arc::new(GridDensity::truncated_normal(0.6, 0.2).map_err(e)?),
                Arc::new(GridDensity::uniform(1).map_err(e)?),
            ])
            .map_err(e)?,
        ),
    ];
    let mut worst_dominance = f64::INFINITY;
    for p in &tests {
        for m in 1..=5 {
            let basis = TensorBasis::new(m, p.dim()).map_err(e)?;
            let gap =
                maxent_entropy(p.as_ref(), &basis).map_err(e)? - entropy(p.as_ref()).map_err(e)?;
            worst_dominance = worst_dominance.min(gap);
        }
    }
    let mut worst_kl: f64 = 0.0;
    for i in 0..50 {
        let (m, n) = (1 + i % 5, 1 + i % 2);
        let basis = TensorBasis::new(m, n).map_err(e)?;
        let mut draw = || -> Result<ExpFamilyDensity, String> {
            let lam = (0..m * n).map(|_| rng.gen_range(-0.8..0.8)).collect();
            ExpFamilyDensity::with_default_order(basis.clone(), lam).map_err(e)
        };
        let (p, q) = (draw()?, draw()?);
        let a = kl_expfam_closed_form(&p, &q).map_err(e)?;
        let b = kl_divergence(&p, &q).map_err(e)?;
        worst_kl = worst_kl.max((a - b).abs());
    }
    let timing = within(t.elapsed(), Duration::from_secs(30))?;
    ensure(
        worst_lambda <= 1e-7 && tn_l1 <= 1e-6 && worst_dominance >= -1e-8 && worst_kl <= 1e-7,
        format!(
            "lambda err {worst_lambda:.2e}, normal L1 {tn_l1:.2e}, min h_phi - h {worst_dominance:.2e}, KL gap {worst_kl:.2e}, {timing}"
        ),
    )
}

fn worst_case_labeling_equality() -> Check {
    let e = |e: momentda::Error| e.to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut worst_eq, mut worst_excess) = (0.0f64, f64::NEG_INFINITY);
    let mut labelings = 0;
    for t in 0..20 {
        let n = 1 + t % 2;
        let basis = TensorBasis::new(3, n).map_err(e)?;
        let mut draw = || -> Result<Arc<dyn Density>, String> {
            let lam = (0..3 * n).map(|_| rng.gen_range(-1.5..1.5)).collect();
            Ok(Arc::new(
                ExpFamilyDensity::with_default_order(basis.clone(), lam).map_err(e)?,
            ))
        };
        let (p, q) = (draw()?, draw()?);
        let f = Classifier::threshold(rng.gen_range(0..n), rng.gen_range(0.1..0.9));
        let (_, gap) = worst_case_labeling(&f, p.clone(), q.clone()).map_err(e)?;
        let half = 0.5 * l1_distance(p.as_ref(), q.as_ref()).map_err(e)?;
        worst_eq = worst_eq.max((gap - half).abs());
        let order = common_nonsmooth_order(p.as_ref(), q.as_ref());
        for _ in 0..10 {
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let l = Labeling::half_space(w, rng.gen_range(-0.5..0.5));
            let g = (risk_with_order(&f, &l, p.as_ref(), order).map_err(e)?
                - risk_with_order(&f, &l, q.as_ref(), order).map_err(e)?)
            .abs();
            worst_excess = worst_excess.max(g - half);
            labelings += 1;
        }
    }
    ensure(
        worst_eq <= 1e-8 && worst_excess <= 1e-8,
        format!("max |gap - L1/2| = {worst_eq:.2e}, max excess over {labelings} labelings = {worst_excess:.2e}"),
    )
}

fn l1_bound_property() -> Check {
    let t = Instant::now();
    let rec = l1_bound_check(
        &L1BoundCheckParams::for_degree(3, 1, 100).map_err(|e| e.to_string())?,
        1,
    )
    .map_err(|e| e.to_string())?;
    let timing = within(t.elapsed(), Duration::from_secs(120))?;
    let pairs = rec.summary["pairs"].as_u64().unwrap_or(0);
    let violations = rec.summary["violations"].as_u64().unwrap_or(u64::MAX);
    ensure(
        pairs >= 100 && violations == 0,
        format!(
            "{pairs} admissible pairs, {violations} violations, max L1/bound {}, {timing}",
            rec.summary["max_l1_to_bound"]
        ),
    )
}

fn narrow_normals() -> Check {
    let params = TruncatedNormalParams {
        sigmas: vec![0.3, 0.01],
        mean_gap: 0.2,
        center: 0.5,
        m: 2,
    };
    let rec = truncated_normal_counterexample(&params, 0).map_err(|e| e.to_string())?;
    let l1 = |i: usize| rec.rows[i][2].as_f64().unwrap();
    let eps = |i: usize| {
        rec.rows[i][4]
            .as_f64()
            .unwrap()
            .max(rec.rows[i][5].as_f64().unwrap())
    };
    let basis = TensorBasis::new(2, 1).map_err(|e| e.to_string())?;
    let check_eps = epsilon_gap(
        &GridDensity::truncated_normal(0.4, 0.01).map_err(|e| e.to_string())?,
        &basis,
    )
    .map_err(|e| e.to_string())?;
    ensure(
        l1(1) >= 1.99 && eps(1) <= 1e-7 && check_eps <= 1e-7 && l1(0) < 0.6,
        format!(
            "sigma 0.01: L1 {:.6} eps {:.2e}; sigma 0.3: L1 {:.4}",
            l1(1),
            eps(1),
            l1(0)
        ),
    )
}

fn concentration() -> Check {
    let t = Instant::now();
    let rec =
        sample_concentration(&ConcentrationParams::default(), 2024).map_err(|e| e.to_string())?;
    let timing = within(t.elapsed(), Duration::from_secs(300))?;
    let s = &rec.summary;
    let fractions: Vec<String> = ConcentrationParams::default()
        .k_grid
        .iter()
        .map(|k| format!("{}", s[&format!("exceed_fraction_k{k}")]))
        .collect();
    ensure(
        rec.passed(),
        format!(
            "exceedance fractions {:?} (limit {:.4}), slope {}, {timing}",
            fractions,
            0.2 + 3.0 * (0.2f64 * 0.8 / 200.0).sqrt(),
            s["median_slope"]
        ),
    )
}

fn independence() -> Check {
    let e = |e: momentda::Error| e.to_string();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let basis2 = TensorBasis::new(3, 2).map_err(e)?;
    let basis1 = TensorBasis::new(3, 1).map_err(e)?;
    let factor = |rng: &mut ChaCha8Rng| -> Result<Arc<dyn Density>, String> {
        let a = Arc::new(
            GridDensity::truncated_normal(rng.gen_range(0.2..0.8), rng.gen_range(0.1..0.4))
                .map_err(e)?,
        );
        let b = Arc::new(
            GridDensity::truncated_normal(rng.gen_range(0.2..0.8), rng.gen_range(0.1..0.4))
                .map_err(e)?,
        );
        let w = rng.gen_range(0.2..0.8);
        Ok(Arc::new(
            GridDensity::mixture(&[w, 1.0 - w], vec![a, b]).map_err(e)?,
        ))
    };
    let mut worst: f64 = 0.0;
    for _ in 0..10 {
        let pf = [factor(&mut rng)?, factor(&mut rng)?];
        let qf = [factor(&mut rng)?, factor(&mut rng)?];
        let p = GridDensity::product(pf.to_vec()).map_err(e)?;
        let q = GridDensity::product(qf.to_vec()).map_err(e)?;
        let joint_p = fit_maxent_joint(&moments(&p, &basis2).map_err(e)?, &FitOptions::default())
            .map_err(e)?;
        let joint_q = fit_maxent_joint(&moments(&q, &basis2).map_err(e)?, &FitOptions::default())
            .map_err(e)?;
        let joint = kl_divergence(&joint_p.density, &joint_q.density).map_err(e)?;
        let mut sum = 0.0;
        for j in 0..2 {
            let a = maxent_counterpart(pf[j].as_ref(), &basis1)
                .map_err(e)?
                .density;
            let b = maxent_counterpart(qf[j].as_ref(), &basis1)
                .map_err(e)?
                .density;
            sum += kl_expfam_closed_form(&a, &b).map_err(e)?;
        }
        worst = worst.max((joint - sum).abs());
    }
    ensure(
        worst <= 1e-6,
        format!("max |D_joint - sum D_i| = {worst:.2e} over 10 pairs"),
    )
}

fn determinism() -> Check {
    let e = |e: momentda::Error| e.to_string();
    let small_conc = ConcentrationParams {
        k_grid: vec![100, 1000],
        trials: 20,
        ..Default::default()
    };
    let runs: Vec<(
        &str,
        Box<dyn Fn() -> momentda::Result<ExperimentRecord> + Send + Sync>,
    )> = vec![
        (
            "truncated-normal",
            Box::new(|| truncated_normal_counterexample(&TruncatedNormalParams::default(), 7)),
        ),
        (
            "l1-bound-check",
            Box::new(|| l1_bound_check(&L1BoundCheckParams::for_degree(3, 1, 30)?, 11)),
        ),
        (
            "sample-concentration",
            Box::new(move || sample_concentration(&small_conc, 5)),
        ),
        ("worked-example", Box::new(|| worked_example_repro(0))),
        (
            "adaptation-demo",
            Box::new(|| adaptation_demo(&AdaptationParams::default(), 3)),
        ),
        (
            "adaptation-demo-identical",
            Box::new(|| {
                adaptation_demo(
                    &AdaptationParams {
                        scenario: AdaptationScenario::Identical,
                        ..Default::default()
                    },
                    3,
                )
            }),
        ),
        (
            "levy-probe",
            Box::new(|| levy_relation_probe(&LevyProbeParams::default(), 0)),
        ),
    ];
    let dir_a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir_b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| e.to_string())?;
    let mut differing = Vec::new();
    for (name, run) in &runs {
        let (ca, ja) = run().map_err(e)?.write(dir_a.path()).map_err(e)?;
        let (cb, jb) = single
            .install(|| run())
            .map_err(e)?
            .write(dir_b.path())
            .map_err(e)?;
        let read = |p: &std::path::Path| std::fs::read(p).unwrap_or_default();
        if read(&ca) != read(&cb) || read(&ja) != read(&jb) {
            differing.push(*name);
        }
    }
    ensure(
        differing.is_empty(),
        format!(
            "{} experiments rerun (default pool vs one thread), differing: {differing:?}",
            runs.len()
        ),
    )
}

fn main() {
    let criteria: Vec<(&str, fn() -> Check)> = vec![
        ("worked-example constants", worked_example_constants),
        ("basis exactness", basis_exactness),
        ("maximum-entropy correctness", maxent_correctness),
        ("worst-case labeling equality", worst_case_labeling_equality),
        (
            "moment-based L1 bound on random class pairs",
            l1_bound_property,
        ),
        ("narrow truncated normals", narrow_normals),
        ("sample-moment concentration", concentration),
        ("independence of product fits", independence),
        ("byte-identical reruns", determinism),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = check();
        let status = if outcome.is_ok() { "PASS" } else { "FAIL" };
        failures += usize::from(outcome.is_err());
        let detail = outcome.unwrap_or_else(|e| e);
        println!(
            "criterion {} [{status}] {name} ({:.2?}): {detail}",
            i + 1,
            t.elapsed()
        );
    }
    println!(
        "acceptance: {} of {} criteria passed",
        criteria.len() - failures,
        criteria.len()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
