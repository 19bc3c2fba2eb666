use approx::assert_abs_diff_eq;
use ghzsim::quantum::*;
use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_density(dim: usize, rng: &mut ChaCha8Rng) -> DensityMatrix {
    // Ginibre ensemble: A·A† / Tr.
    let a = DMatrix::from_fn(dim, dim, |_, _| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5));
    let mut m = &a * a.adjoint();
    let tr = m.trace();
    m /= tr;
    let m = (&m + m.adjoint()) * Complex64::from(0.5);
    DensityMatrix::new(m).unwrap()
}

#[test]
fn decomposition_equals_projector_overlap() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let n = 2 + i % 3;
        let rho = random_density(1 << n, &mut rng);
        let target = ghz_target(n).unwrap().amplitudes;
        let direct = (target.adjoint() * &rho.entries * &target)[(0, 0)].re;
        let d = fidelity_decomposition(&rho, n).unwrap();
        worst = worst.max((d.fidelity - direct).abs());
    }
    assert!(worst < 1e-10, "worst deviation {worst:e}");
}

#[test]
fn chi_matches_coherence_flip() {
    for n in 2..=5 {
        let chi = chi_operator(n).unwrap().matrix;
        let flip = coherence_flip(n, -1.0);
        let err = (chi - flip).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(err < 1e-10);
    }
}

#[test]
fn operators_hermitian_and_involutive() {
    for n in 1..=4 {
        for k in 1..=n {
            let m = mk_operator(k, n).unwrap().matrix;
            assert!((&m - m.adjoint()).norm() < 1e-12);
            assert!((&m * &m - DMatrix::identity(1 << n, 1 << n)).norm() < 1e-12);
        }
        let c = chi_operator(n).unwrap().matrix;
        assert!((&c - c.adjoint()).norm() < 1e-12);
        let p = pz_operator(n).unwrap().matrix;
        assert!((&p * &p - &p).norm() < 1e-12);
    }
}

#[test]
fn ideal_and_dephased_targets() {
    for n in 2..=5 {
        let d = fidelity_decomposition(&ghz_target(n).unwrap().to_density(), n).unwrap();
        assert_abs_diff_eq!(d.pz, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.chi, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.fidelity, 1.0, epsilon = 1e-12);
    }
    let mut m = DMatrix::zeros(8, 8);
    m[(0, 0)] = Complex64::from(0.5);
    m[(7, 7)] = Complex64::from(0.5);
    let d = fidelity_decomposition(&DensityMatrix::new(m).unwrap(), 3).unwrap();
    assert_eq!((d.pz, d.chi, d.fidelity), (1.0, 0.0, 0.5));
}

#[test]
fn measured_three_qubit_values() {
    let chi = chi_from_mk(&[-0.40, 0.35, -0.33]);
    assert_abs_diff_eq!(chi, 0.36, epsilon = 1e-12);
    assert_abs_diff_eq!(Decomposition::from_parts(0.76, chi).fidelity, 0.56, epsilon = 1e-12);
    // Reported witness sides, coherence 35.8% vs populations 9.6%.
    let third = 0.096 / 3.0;
    let pops = CrossPopulations { p001: third, p010: third, p100: third, p011: third, p101: third, p110: third };
    let w = biseparability_witness(&pops, 0.358).unwrap();
    assert_abs_diff_eq!(w.rhs, 0.096, epsilon = 1e-12);
    assert_abs_diff_eq!(w.lhs, 0.179, epsilon = 1e-12);
    assert!(w.violated);
}

#[test]
fn bell_table_value() {
    let b = BellDecomposition::from_values(0.917, 0.62, -0.60);
    assert_abs_diff_eq!(b.fidelity, 0.763, epsilon = 1e-3);
    assert_abs_diff_eq!(BellDecomposition::from_values(1.0, 0.0, 0.0).fidelity, 0.5);
}

#[test]
fn rejects_bad_inputs() {
    assert!(fidelity_decomposition(&DensityMatrix::maximally_mixed(4), 3).is_err());
    assert!(ghz_target(9).is_err());
    assert!(bell_fidelity_decomposition(&DensityMatrix::maximally_mixed(8)).is_err());
    assert!(CrossPopulations::from_density(&DensityMatrix::maximally_mixed(4)).is_err());
}

proptest! {
    #[test]
    fn witness_rhs_is_homogeneous(p in proptest::array::uniform6(0.0f64..0.2), lambda in 1.0f64..50.0, chi in -1.0f64..1.0) {
        let pops = CrossPopulations { p001: p[0], p010: p[1], p100: p[2], p011: p[3], p101: p[4], p110: p[5] };
        let a = biseparability_witness(&pops, chi).unwrap();
        let b = biseparability_witness(&pops.scaled(lambda), chi).unwrap();
        prop_assert!((b.rhs - lambda * a.rhs).abs() <= 1e-12 * (1.0 + b.rhs));
        prop_assert!(b.rhs >= a.rhs);
        prop_assert_eq!(a.lhs, b.lhs);
    }

    #[test]
    fn chi_from_mk_is_linear(m in proptest::collection::vec(-1.0f64..1.0, 2..8), s in -2.0f64..2.0) {
        let scaled: Vec<f64> = m.iter().map(|x| s * x).collect();
        prop_assert!((chi_from_mk(&scaled) - s * chi_from_mk(&m)).abs() < 1e-12);
        prop_assert!(chi_from_mk(&m).abs() <= 1.0 + 1e-12);
    }
}
