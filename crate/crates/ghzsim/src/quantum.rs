//! States, measurement operators and the GHZ fidelity decomposition.
//!
//! Qubit 0 is the spin, qubits 1..n are photons in emission order. Basis
//! index bit `n-1-q` holds qubit `q`, so |q0 q1 ... q(n-1)⟩ reads left to right.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{invalid, Result};

pub type CMatrix = DMatrix<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    pub amplitudes: DVector<Complex64>,
}

impl PureState {
    pub fn new(amplitudes: DVector<Complex64>) -> Result<Self> {
        let norm = amplitudes.norm();
        if amplitudes.is_empty() || norm == 0.0 || !norm.is_finite() {
            return invalid("state must have nonzero finite norm");
        }
        Ok(Self { amplitudes: amplitudes / Complex64::from(norm) })
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn to_density(&self) -> DensityMatrix {
        DensityMatrix { entries: &self.amplitudes * self.amplitudes.adjoint() }
    }

    pub fn overlap(&self, other: &PureState) -> Complex64 {
        self.amplitudes.dotc(&other.amplitudes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    pub entries: CMatrix,
}

impl DensityMatrix {
    /// Checks hermiticity, unit trace and positivity before wrapping.
    pub fn new(entries: CMatrix) -> Result<Self> {
        if !entries.is_square() || entries.nrows() == 0 {
            return invalid("density matrix must be square and non-empty");
        }
        let herm_err = (&entries - entries.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if herm_err > 1e-12 {
            return invalid(format!("density matrix not Hermitian (error {herm_err:e})"));
        }
        let tr = entries.trace();
        if (tr.re - 1.0).abs() > 1e-10 || tr.im.abs() > 1e-10 {
            return invalid(format!("density matrix trace {tr} != 1"));
        }
        let rho = Self { entries };
        let min_eig = rho.eigenvalues().into_iter().fold(f64::INFINITY, f64::min);
        if min_eig < -1e-10 {
            return invalid(format!("density matrix has negative eigenvalue {min_eig:e}"));
        }
        Ok(rho)
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        Self { entries: CMatrix::identity(dim, dim) / Complex64::from(dim as f64) }
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let h = (&self.entries + self.entries.adjoint()) * Complex64::from(0.5);
        h.symmetric_eigenvalues().iter().copied().collect()
    }

    pub fn expectation(&self, op: &MeasurementOperator) -> f64 {
        (&self.entries * &op.matrix).trace().re
    }

    pub fn population(&self, index: usize) -> f64 {
        self.entries[(index, index)].re
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorLabel {
    Pz,
    Mk(usize),
    Chi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementOperator {
    pub label: OperatorLabel,
    pub matrix: CMatrix,
}

fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

fn check_qubits(n: usize, min: usize) -> Result<()> {
    if n < min || n > 8 {
        return invalid(format!("qubit count {n} outside {min}..=8"));
    }
    Ok(())
}

pub fn ghz_target(n: usize) -> Result<PureState> {
    check_qubits(n, 2)?;
    let dim = 1usize << n;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut amps = DVector::from_element(dim, ZERO);
    amps[0] = Complex64::new(s, 0.0);
    amps[dim - 1] = Complex64::new(-s, 0.0);
    Ok(PureState { amplitudes: amps })
}

/// Single-qubit |+_k⟩⟨+_k| − |−_k⟩⟨−_k| with |±_k⟩ = (|0⟩ ± e^{ikπ/n}|1⟩)/√2.
pub fn equatorial_pauli(theta: f64) -> CMatrix {
    let e = Complex64::from_polar(1.0, theta);
    CMatrix::from_row_slice(2, 2, &[ZERO, e.conj(), e, ZERO])
}

/// Eigenphase of the "+" outcome on each qubit for M̂k.
///
/// The spin qubit carries an extra π so that the minus-sign GHZ target has
/// ⟨χ̂⟩ = +1 while χ̂ keeps the form (1/n)Σ(−1)^k M̂k.
pub fn mk_phase(k: usize, n: usize, qubit: usize) -> f64 {
    let base = k as f64 * std::f64::consts::PI / n as f64;
    if qubit == 0 {
        base + std::f64::consts::PI
    } else {
        base
    }
}

pub fn mk_operator(k: usize, n: usize) -> Result<MeasurementOperator> {
    check_qubits(n, 1)?;
    if k == 0 || k > n {
        return invalid(format!("k={k} outside 1..={n}"));
    }
    let mut m = equatorial_pauli(mk_phase(k, n, 0));
    for q in 1..n {
        m = kron(&m, &equatorial_pauli(mk_phase(k, n, q)));
    }
    Ok(MeasurementOperator { label: OperatorLabel::Mk(k), matrix: m })
}

pub fn chi_operator(n: usize) -> Result<MeasurementOperator> {
    check_qubits(n, 1)?;
    let dim = 1usize << n;
    let mut acc = CMatrix::zeros(dim, dim);
    for k in 1..=n {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        acc += mk_operator(k, n)?.matrix * Complex64::from(sign / n as f64);
    }
    Ok(MeasurementOperator { label: OperatorLabel::Chi, matrix: acc })
}

/// The coherence flip |0…0⟩⟨1…1| + |1…1⟩⟨0…0| scaled by `sign`.
pub fn coherence_flip(n: usize, sign: f64) -> CMatrix {
    let dim = 1usize << n;
    let mut m = CMatrix::zeros(dim, dim);
    m[(0, dim - 1)] = Complex64::from(sign);
    m[(dim - 1, 0)] = Complex64::from(sign);
    m
}

pub fn pz_operator(n: usize) -> Result<MeasurementOperator> {
    check_qubits(n, 1)?;
    let dim = 1usize << n;
    let mut m = CMatrix::zeros(dim, dim);
    m[(0, 0)] = ONE;
    m[(dim - 1, dim - 1)] = ONE;
    Ok(MeasurementOperator { label: OperatorLabel::Pz, matrix: m })
}

/// ⟨χ̂⟩ from measured ⟨M̂k⟩ values, k = 1..n in order.
pub fn chi_from_mk(mk: &[f64]) -> f64 {
    let n = mk.len() as f64;
    mk.iter()
        .enumerate()
        .map(|(i, m)| if (i + 1) % 2 == 0 { *m } else { -*m })
        .sum::<f64>()
        / n
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Decomposition {
    pub pz: f64,
    pub chi: f64,
    pub fidelity: f64,
}

impl Decomposition {
    pub fn from_parts(pz: f64, chi: f64) -> Self {
        Self { pz, chi, fidelity: 0.5 * (pz + chi) }
    }
}

pub fn fidelity_decomposition(rho: &DensityMatrix, n: usize) -> Result<Decomposition> {
    check_qubits(n, 2)?;
    if rho.dim() != 1 << n {
        return invalid(format!("density matrix dim {} does not match n={n}", rho.dim()));
    }
    let pz = rho.expectation(&pz_operator(n)?);
    let chi = rho.expectation(&chi_operator(n)?);
    Ok(Decomposition::from_parts(pz, chi))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossPopulations {
    pub p001: f64,
    pub p010: f64,
    pub p100: f64,
    pub p011: f64,
    pub p101: f64,
    pub p110: f64,
}

impl CrossPopulations {
    pub fn from_density(rho: &DensityMatrix) -> Result<Self> {
        if rho.dim() != 8 {
            return invalid("witness needs a three-qubit density matrix");
        }
        Ok(Self {
            p001: rho.population(0b001),
            p010: rho.population(0b010),
            p100: rho.population(0b100),
            p011: rho.population(0b011),
            p101: rho.population(0b101),
            p110: rho.population(0b110),
        })
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            p001: self.p001 * s,
            p010: self.p010 * s,
            p100: self.p100 * s,
            p011: self.p011 * s,
            p101: self.p101 * s,
            p110: self.p110 * s,
        }
    }

    fn all(&self) -> [f64; 6] {
        [self.p001, self.p010, self.p100, self.p011, self.p101, self.p110]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Witness {
    pub lhs: f64,
    pub rhs: f64,
    pub violated: bool,
}

pub fn biseparability_witness(pops: &CrossPopulations, chi: f64) -> Result<Witness> {
    if pops.all().iter().any(|p| *p < 0.0 || !p.is_finite()) {
        return invalid("populations must be non-negative");
    }
    let lhs = chi.abs() / 2.0;
    let rhs = (pops.p001 * pops.p110).sqrt() + (pops.p010 * pops.p101).sqrt() + (pops.p100 * pops.p011).sqrt();
    Ok(Witness { lhs, rhs, violated: lhs > rhs })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BellDecomposition {
    pub pz: f64,
    pub mx: f64,
    pub my: f64,
    pub chi: f64,
    pub fidelity: f64,
}

impl BellDecomposition {
    pub fn from_values(pz: f64, mx: f64, my: f64) -> Self {
        let chi = 0.5 * (mx - my);
        Self { pz, mx, my, chi, fidelity: 0.5 * (pz + chi) }
    }
}

/// Two-qubit form: M_x is M̂2 and M_y is M̂1 of the n = 2 operator family.
pub fn bell_fidelity_decomposition(rho: &DensityMatrix) -> Result<BellDecomposition> {
    if rho.dim() != 4 {
        return invalid("Bell decomposition needs a 4x4 density matrix");
    }
    let pz = rho.expectation(&pz_operator(2)?);
    let mx = rho.expectation(&mk_operator(2, 2)?);
    let my = rho.expectation(&mk_operator(1, 2)?);
    Ok(BellDecomposition::from_values(pz, mx, my))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ghz_amplitudes() {
        let g = ghz_target(3).unwrap();
        assert_abs_diff_eq!(g.amplitudes[0].re, 0.70710678, epsilon = 1e-8);
        assert_abs_diff_eq!(g.amplitudes[7].re, -0.70710678, epsilon = 1e-8);
        assert_abs_diff_eq!(g.overlap(&g).re, 1.0, epsilon = 1e-12);
        assert!(ghz_target(1).is_err());
    }

    #[test]
    fn mk_squares_to_identity() {
        for n in 1..=4 {
            for k in 1..=n {
                let m = mk_operator(k, n).unwrap().matrix;
                let id = CMatrix::identity(1 << n, 1 << n);
                assert!((&m * &m - id).norm() < 1e-12);
            }
        }
        assert!(mk_operator(0, 2).is_err());
        assert!(mk_operator(3, 2).is_err());
    }

    #[test]
    fn two_qubit_k2_is_xx_up_to_sign() {
        let m = mk_operator(2, 2).unwrap().matrix;
        let x = CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]);
        let xx = x.kronecker(&x);
        assert!((&m + &xx).norm() < 1e-12);
    }

    #[test]
    fn chi_sign_convention_frozen() {
        for n in 2..=5 {
            let chi = chi_operator(n).unwrap().matrix;
            assert!((chi - coherence_flip(n, -1.0)).norm() < 1e-10);
        }
        let rho = ghz_target(3).unwrap().to_density();
        let d = fidelity_decomposition(&rho, 3).unwrap();
        assert_abs_diff_eq!(d.chi, 1.0, epsilon = 1e-12);
        let mk: Vec<f64> = (1..=3).map(|k| rho.expectation(&mk_operator(k, 3).unwrap())).collect();
        assert_abs_diff_eq!(mk[0], -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mk[1], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mk[2], -1.0, epsilon = 1e-12);
    }

    #[test]
    fn measured_mk_values() {
        let chi = chi_from_mk(&[-0.40, 0.35, -0.33]);
        assert_abs_diff_eq!(chi, 0.36, epsilon = 1e-12);
        assert_abs_diff_eq!(Decomposition::from_parts(0.76, chi).fidelity, 0.56, epsilon = 1e-12);
    }

    #[test]
    fn dephased_ghz() {
        let mut m = CMatrix::zeros(8, 8);
        m[(0, 0)] = Complex64::from(0.5);
        m[(7, 7)] = Complex64::from(0.5);
        let d = fidelity_decomposition(&DensityMatrix::new(m).unwrap(), 3).unwrap();
        assert_eq!((d.pz, d.chi, d.fidelity), (1.0, 0.0, 0.5));
        let mixed = fidelity_decomposition(&DensityMatrix::maximally_mixed(8), 3).unwrap();
        assert_abs_diff_eq!(mixed.chi, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn witness_cases() {
        let zero = CrossPopulations { p001: 0.0, p010: 0.0, p100: 0.0, p011: 0.0, p101: 0.0, p110: 0.0 };
        assert!(biseparability_witness(&zero, 1.0).unwrap().violated);
        let mixed = CrossPopulations::from_density(&DensityMatrix::maximally_mixed(8)).unwrap();
        let w = biseparability_witness(&mixed, 0.0).unwrap();
        assert_abs_diff_eq!(w.rhs, 3.0 / 8.0, epsilon = 1e-15);
        assert!(!w.violated);
        let bad = CrossPopulations { p001: -0.1, ..zero };
        assert!(biseparability_witness(&bad, 0.0).is_err());
    }

    #[test]
    fn bell_values() {
        let b = BellDecomposition::from_values(0.917, 0.62, -0.60);
        assert_abs_diff_eq!(b.fidelity, 0.7635, epsilon = 1e-12);
        let ideal = ghz_target(2).unwrap().to_density();
        let d = bell_fidelity_decomposition(&ideal).unwrap();
        assert_abs_diff_eq!(d.fidelity, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.mx, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.my, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(BellDecomposition::from_values(1.0, 0.0, 0.0).fidelity, 0.5);
    }

    #[test]
    fn rejects_invalid_density() {
        let m = CMatrix::from_row_slice(2, 2, &[ONE, ONE, ZERO, ZERO]);
        assert!(DensityMatrix::new(m).is_err());
        let neg = CMatrix::from_row_slice(2, 2, &[Complex64::from(1.5), ZERO, ZERO, Complex64::from(-0.5)]);
        assert!(DensityMatrix::new(neg).is_err());
    }
}
