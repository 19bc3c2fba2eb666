use std::f64::consts::PI;
use std::path::PathBuf;

use approx::assert_abs_diff_eq;
use ghzsim::fits::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let (u, v): (f64, f64) = (rng.gen::<f64>().max(1e-300), rng.gen());
    (-2.0 * u.ln()).sqrt() * (2.0 * PI * v).cos()
}

fn ramsey_model(t: f64) -> f64 {
    0.5 + 0.4 * (2.0 * PI * 0.12 * t + 0.3).cos() * (-(t / 33.0).powi(2)).exp()
}

fn rabi_model(t: f64, w: f64, q: f64) -> f64 {
    0.5 - 0.45 * (w * t).cos() * (-t / (q * PI / w)).exp()
}

#[test]
fn ramsey_noiseless_round_trip() {
    let data: Vec<(f64, f64)> = (0..160).map(|i| i as f64 * 0.5).map(|t| (t, ramsey_model(t))).collect();
    let f = fit_ramsey(&data).unwrap();
    assert!((f.t2_star / 33.0 - 1.0).abs() < 1e-6, "{}", f.t2_star);
    assert!((f.detuning_mhz.abs() / 120.0 - 1.0).abs() < 1e-6, "{}", f.detuning_mhz);
}

#[test]
fn ramsey_with_noise() {
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<(f64, f64)> = (0..160).map(|i| i as f64 * 0.5).map(|t| (t, ramsey_model(t) + 0.01 * gauss(&mut rng))).collect();
        let f = fit_ramsey(&data).unwrap();
        worst = worst.max((f.t2_star / 33.0 - 1.0).abs());
    }
    assert!(worst < 0.05, "worst relative T2* error {worst}");
}

#[test]
fn rabi_noiseless_round_trip() {
    let w = 2.0 * PI * 0.1236;
    let data: Vec<(f64, f64)> = (0..200).map(|i| i as f64 * 0.5).map(|t| (t, rabi_model(t, w, 34.0))).collect();
    let f = fit_rabi(&data).unwrap();
    assert!((f.omega_r / w - 1.0).abs() < 1e-6);
    assert!((f.q / 34.0 - 1.0).abs() < 1e-6, "{}", f.q);
    assert!(!f.undamped);
}

#[test]
fn rabi_with_noise() {
    let w = 2.0 * PI * 0.1236;
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<(f64, f64)> = (0..200).map(|i| i as f64 * 0.5).map(|t| (t, rabi_model(t, w, 34.0) + 0.01 * gauss(&mut rng))).collect();
        let f = fit_rabi(&data).unwrap();
        assert!((f.omega_r / w - 1.0).abs() < 1e-3);
        worst = worst.max((f.q / 34.0 - 1.0).abs());
    }
    assert!(worst < 0.1, "worst relative Q error {worst}");
}

#[test]
fn rabi_without_damping_is_flagged() {
    let w = 2.0 * PI * 0.1;
    let data: Vec<(f64, f64)> = (0..120).map(|i| i as f64 * 0.5).map(|t| (t, 0.5 - 0.45 * (w * t).cos())).collect();
    let f = fit_rabi(&data).unwrap();
    assert!(f.undamped);
}

#[test]
fn hom_round_trip() {
    let pts: Vec<(f64, f64)> = [0.01, 0.02, 0.03, 0.05].iter().map(|g| (*g, 0.97 - 2.0 * g)).collect();
    let f = hom_regression(&pts).unwrap();
    assert_abs_diff_eq!(f.v_s, 0.97, epsilon = 1e-12);
    assert_abs_diff_eq!(f.f_slope, 2.0, epsilon = 1e-10);
    assert!(f.v_s_err < 1e-10);
}

#[test]
fn cyclicity_round_trip() {
    let (gamma, sigma_e, gamma_y) = (4.255, 3.34, 0.114);
    let powers = [0.05, 0.1, 0.3, 1.0, 3.0, 10.0];
    let data: Vec<(f64, f64)> = powers.iter().map(|s| (*s, optical_pumping_rate(*s, gamma_y, sigma_e, gamma).unwrap())).collect();
    let f = fit_cyclicity(&data, gamma, sigma_e).unwrap();
    assert_abs_diff_eq!(f.gamma_y, gamma_y, epsilon = 1e-8 * gamma_y);
    assert_abs_diff_eq!(f.cyclicity, (gamma - gamma_y) / gamma_y, epsilon = 1e-5);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let noisy: Vec<(f64, f64)> = data.iter().map(|(s, r)| (*s, r * (1.0 + 0.01 * gauss(&mut rng)))).collect();
        let f = fit_cyclicity(&noisy, gamma, sigma_e).unwrap();
        assert!((f.gamma_y / gamma_y - 1.0).abs() < 0.03);
    }
}

#[test]
fn lm_recovers_exponential() {
    let xs: Vec<f64> = (0..30).map(|i| i as f64 * 0.2).collect();
    let ys: Vec<f64> = xs.iter().map(|x| 2.5 * (-0.7 * x).exp() + 0.1).collect();
    let model = |p: &[f64], x: f64| {
        let e = (-p[1] * x).exp();
        (p[0] * e + p[2], vec![e, -p[0] * x * e, 1.0])
    };
    let f = levenberg_marquardt(model, &xs, &ys, &[1.0, 0.3, 0.0], &["a", "k", "c"], LmOptions::default()).unwrap();
    assert!(f.converged);
    assert_abs_diff_eq!(f.get("a").unwrap(), 2.5, epsilon = 1e-7);
    assert_abs_diff_eq!(f.get("k").unwrap(), 0.7, epsilon = 1e-7);
    assert!(f.get("missing").is_none());
}

#[test]
fn formula_values() {
    assert_abs_diff_eq!(pi_fidelity(34.0).unwrap(), 0.986, epsilon = 1e-3);
    assert_abs_diff_eq!(pi_fidelity(1e12).unwrap(), 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(t2_rotation_infidelity(2.0 * PI * 0.1236, 33.0).unwrap(), 0.003, epsilon = 5e-4);
    let eta = 0.8 * 0.95 * 0.5 * 0.9;
    let r = ghz_rate(eta, 560e3, 2).unwrap();
    assert!((65e3..=70e3).contains(&r), "{r}");
    assert!(ghz_rate(1.5, 1.0, 2).is_err());
}

fn shipped_budget() -> LossBudget {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/loss_budget.csv");
    LossBudget::from_csv(std::fs::File::open(path).unwrap()).unwrap()
}

#[test]
fn loss_budget_totals() {
    let b = shipped_budget();
    let group = |g: &str| b.groups.iter().find(|x| x.group == g).unwrap().clone();
    let (src, det) = (group("source"), group("detection"));
    assert_abs_diff_eq!(src.efficiency, 0.115, epsilon = 5e-4);
    assert_abs_diff_eq!(src.db, -9.4, epsilon = 0.1);
    assert_abs_diff_eq!(det.efficiency, 0.112, epsilon = 5e-4);
    assert_abs_diff_eq!(b.overall, 0.013, epsilon = 5e-4);
    assert_abs_diff_eq!(b.overall_db, -18.9, epsilon = 0.1);
    let sum_db: f64 = b.stages.iter().map(|s| to_db(s.efficiency)).sum();
    assert!((sum_db - b.overall_db).abs() < 0.01);
    let csv = b.to_csv();
    let last = csv.lines().last().unwrap();
    let total: f64 = last.split(',').nth(2).unwrap().parse().unwrap();
    assert!((total - b.overall).abs() <= 1e-15 * b.overall);
}

#[test]
fn loss_budget_rejects_bad_efficiency() {
    assert!(LossBudget::from_csv("stage,efficiency\nx,1.5\n".as_bytes()).is_err());
    assert!(efficiency_budget(vec![]).is_err());
}

proptest! {
    #[test]
    fn pumping_rate_monotone_and_bounded(s in 0.01f64..100.0, k in 1.01f64..5.0, gy in 0.01f64..1.0, sigma in 0.1f64..10.0) {
        let g = 4.255;
        let lo = optical_pumping_rate(s, gy, sigma, g).unwrap();
        let hi = optical_pumping_rate(s * k, gy, sigma, g).unwrap();
        prop_assert!(hi > lo);
        prop_assert!(hi < gy / 2.0);
    }

    #[test]
    fn db_is_additive(e in proptest::collection::vec(0.01f64..1.0, 1..10)) {
        let stages: Vec<LossStage> = e.iter().enumerate().map(|(i, x)| LossStage { name: format!("s{i}"), efficiency: *x, group: String::new() }).collect();
        let b = efficiency_budget(stages).unwrap();
        let sum: f64 = e.iter().map(|x| to_db(*x)).sum();
        prop_assert!((sum - b.overall_db).abs() < 0.01);
    }
}

#[test]
fn flat_traces_are_fit_errors() {
    let flat: Vec<(f64, f64)> = (0..20).map(|i| (i as f64, 0.5)).collect();
    assert!(matches!(fit_rabi(&flat), Err(ghzsim::Error::Fit(_))));
    assert!(matches!(fit_ramsey(&flat), Err(ghzsim::Error::Fit(_))));
}
