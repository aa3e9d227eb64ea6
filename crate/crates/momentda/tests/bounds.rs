use momentda::bounds::{
    self, certificates_to_csv, class_derivative_bound, class_log_bound, cmd_to_moment_factor,
    constant_c_simple, improved_constants, l1_bound_from_moments, min_sample_size,
    population_risk_bound, sample_risk_certificate, sample_threshold, smoothness_membership,
    vc_term, worked_example, CertificateInputs, ConstantChoice,
};
use momentda::density::{empirical_moments, smoothness_report, GridDensity, Sample};
use momentda::maxent::MomentVector;
use momentda::metrics::cmd;
use momentda::polybasis::{coefficient_abs_sums, TensorBasis};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn inputs(k: f64) -> CertificateInputs {
    CertificateInputs {
        k,
        d: 6.0,
        delta: 0.2,
        m: 5,
        n_dims: 5,
        moment_distance: 1e-5,
        empirical_risk: 0.1,
        lambda_star: 0.05,
        epsilon: 1e-4,
        sharper_sample_condition: false,
    }
}

#[test]
fn improved_constants_at_worked_example() {
    let ic = improved_constants(5, 5, 5.0, 10.0).unwrap();
    // gamma = e^5 * 10 / (2^5 * 2 * 10^4), xi^2 = e^5 * 100 / (4^5 * 11!).
    let gamma = 5f64.exp() * 10.0 / 640_000.0;
    let xi = (5f64.exp() * 100.0 / (1024.0 * 39_916_800.0)).sqrt();
    assert!((ic.gamma - gamma).abs() < 1e-15);
    assert!((ic.xi - xi).abs() < 1e-15);
    assert!((ic.gamma - 0.0023190).abs() < 1e-7);
    assert!((ic.xi - 6.0257e-4).abs() < 1e-8);
    assert!((ic.applicability - 0.48337).abs() < 1e-5);
    assert!(ic.applicable);
    assert!((ic.c - 1314.424).abs() < 1e-3);
}

#[test]
fn improved_constants_beat_simple_inside_the_class() {
    for m in 2..=12 {
        let ic = improved_constants(m, m, class_log_bound(m), class_derivative_bound(m)).unwrap();
        let simple = constant_c_simple(m).unwrap();
        assert!(ic.c <= simple, "m={m}: {} > {simple}", ic.c);
    }
}

#[test]
fn simple_constant_and_thresholds() {
    let c = constant_c_simple(3).unwrap();
    assert!((c - 2.0 * 4f64.exp()).abs() < 1e-12);
    assert!((bounds::population_threshold(c, 3) - 1.0 / (8.0 * c)).abs() < 1e-18);
    assert!((sample_threshold(c, 3) - 1.0 / (8.0 * std::f64::consts::E * c)).abs() < 1e-18);
    assert!(constant_c_simple(0).is_err());
    assert_eq!(class_log_bound(2), 0.0);
    assert_eq!(class_derivative_bound(4), 1.0);
}

#[test]
fn vc_term_formula() {
    let v = vc_term(6.3e9, 6.0, 0.2).unwrap();
    let want =
        (4.0 / 6.3e9 * (6.0 * (2.0 * std::f64::consts::E * 6.3e9 / 6.0).ln() + 20f64.ln())).sqrt();
    assert!((v - want).abs() < 1e-18);
    assert!(vc_term(10.0, 3.0, 1.5).is_err());
    assert!(vc_term(0.5, 3.0, 0.1).is_err());
}

#[test]
fn l1_bound_gate() {
    let c = constant_c_simple(2).unwrap();
    let thr = bounds::population_threshold(c, 2);
    let a = MomentVector::new(2, 1, vec![0.0, 0.0]).unwrap();
    let near = MomentVector::new(2, 1, vec![thr / 2.0, 0.0]).unwrap();
    let far = MomentVector::new(2, 1, vec![2.0 * thr, 0.0]).unwrap();
    let b = l1_bound_from_moments(&a, &near, 0.0, &ConstantChoice::Simple).unwrap();
    assert!((b.bound.unwrap() - (2.0 * c).sqrt() * thr / 2.0).abs() < 1e-15);
    let r = population_risk_bound(0.1, 0.2, &b).unwrap();
    assert!((r - 0.3 - b.bound.unwrap()).abs() < 1e-15);
    let b = l1_bound_from_moments(&a, &far, 0.0, &ConstantChoice::Simple).unwrap();
    assert!(b.bound.is_none());
    assert!(population_risk_bound(0.1, 0.2, &b).is_none());
    assert!(l1_bound_from_moments(&a, &a, -1.0, &ConstantChoice::Simple).is_err());
    let same = l1_bound_from_moments(&a, &a, 0.0, &ConstantChoice::Simple).unwrap();
    assert_eq!(same.bound, Some(0.0));
}

#[test]
fn certificate_terms_and_conditions() {
    let ic = improved_constants(5, 5, 5.0, 10.0).unwrap();
    let choice = ConstantChoice::Improved(ic.clone());
    let cert = sample_risk_certificate(inputs(6.3e9), &choice).unwrap();
    assert!(cert.all_conditions_hold());
    let t = &cert.terms;
    assert!((t.moment - (2.0 * std::f64::consts::E * ic.c).sqrt() * 1e-5).abs() < 1e-15);
    assert!((t.sampling - (8.0 * ic.c * 5.0 / 0.2).sqrt() * (5.0 / 6.3e9f64).sqrt()).abs() < 1e-12);
    assert!((t.epsilon - (8e-4f64).sqrt()).abs() < 1e-15);
    assert_eq!(cert.total, Some(t.sum()));
    assert_eq!(cert.constants.source, "improved");

    let small = sample_risk_certificate(inputs(1e6), &choice).unwrap();
    assert!(small.total.is_none());
    let row = small
        .conditions
        .iter()
        .find(|c| c.name == "sample_size")
        .unwrap();
    assert!(!row.ok);
    assert!((row.required - min_sample_size(ic.c, 5, 0.2, None)).abs() < 1.0);

    let mut sharper = inputs(1e9);
    sharper.sharper_sample_condition = true;
    let cert = sample_risk_certificate(sharper.clone(), &choice).unwrap();
    assert!(cert.conditions[0].ok);
    assert!(sample_risk_certificate(sharper, &ConstantChoice::Simple).is_err());

    let mut bad = inputs(6.3e9);
    bad.epsilon = -0.1;
    assert!(sample_risk_certificate(bad, &choice).is_err());
}

#[test]
fn certificate_json_and_csv_shape() {
    let cert = sample_risk_certificate(inputs(6.3e9), &ConstantChoice::Simple).unwrap();
    let v = serde_json::to_value(&cert).unwrap();
    for key in ["inputs", "constants", "conditions", "terms", "total"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
    for key in ["C", "gamma", "xi", "source"] {
        assert!(v["constants"].get(key).is_some(), "missing constants.{key}");
    }
    assert!(v["total"].is_null());
    let mut buf = Vec::new();
    certificates_to_csv(&[cert.clone(), cert], &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 3);
}

#[test]
fn worked_example_rows() {
    let ex = worked_example().unwrap();
    let get = |q: &str| ex.rows.iter().find(|r| r.quantity == q).unwrap();
    assert!((get("sqrt(2eC)").computed - 84.6).abs() <= 0.5);
    assert!((get("sqrt(8Cm/delta)").computed - 513.0).abs() <= 2.0);
    assert!((get("min_sample_size").computed / 6.3e9 - 1.0).abs() <= 0.02);
    assert!(ex.rows.iter().all(|r| r.ok != Some(false)));
    assert!((ex.c5 - coefficient_abs_sums(5).unwrap().c_m).abs() < 1e-12);
    assert!((ex.c5_implied_by_reference - 1044.0).abs() < 1.0);
    assert!(ex.certificate.total.is_some());
}

#[test]
fn uniform_density_is_in_every_class() {
    let u = GridDensity::uniform(1).unwrap();
    for m in 2..=6 {
        let v = smoothness_membership(&smoothness_report(&u, m).unwrap(), 0.0);
        assert_eq!(v.member, Some(true), "m={m}");
    }
    let narrow = GridDensity::truncated_normal(0.5, 0.05).unwrap();
    let v = smoothness_membership(&smoothness_report(&narrow, 3).unwrap(), 0.0);
    assert_eq!(v.member, Some(false));
    assert_eq!(
        v.checks
            .iter()
            .find(|c| c.name == "log_density_bound")
            .unwrap()
            .ok,
        Some(false)
    );
}

proptest! {
    #[test]
    fn power_difference_is_lipschitz(k in 2u32..=20, x in -1.0f64..=1.0, y in -1.0f64..=1.0) {
        prop_assert!((x.powi(k as i32) - y.powi(k as i32)).abs() <= k as f64 * (x - y).abs() + 1e-15);
    }

    #[test]
    fn product_difference_splits(a in -1.0f64..=1.0, b in -1.0f64..=1.0, c in -1.0f64..=1.0, d in -1.0f64..=1.0) {
        prop_assert!((a * b - c * d).abs() <= (a - c).abs() + (b - d).abs() + 1e-15);
    }

    #[test]
    fn moment_distance_bounded_by_scaled_cmd(seed in 0u64..5000, m in 2usize..=5, n in 1usize..=3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = 40;
        let draw = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| {
            Sample::new(n, (0..k * n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
        };
        let x = draw(&mut rng, 0.0, 1.0);
        let lo = rng.gen_range(0.0..0.5);
        let y = draw(&mut rng, lo, lo + 0.5);
        let basis = TensorBasis::new(m, n).unwrap();
        let dmu = empirical_moments(&x, &basis).unwrap().l1_distance(&empirical_moments(&y, &basis).unwrap()).unwrap();
        let factor = cmd_to_moment_factor(m, n, coefficient_abs_sums(m).unwrap().c_m);
        prop_assert!(dmu <= factor * cmd(&x, &y, m).unwrap());
    }
}
