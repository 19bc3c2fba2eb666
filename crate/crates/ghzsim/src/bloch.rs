//! Photon-number-resolved optical Bloch equations for a driven two-level
//! transition, and the square-pulse closed form for off-resonant errors.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Radiative rate for a 235 ps lifetime, in ns⁻¹.
pub const GAMMA_DEFAULT: f64 = 1.0 / 0.235;

/// Converts an ordinary frequency in GHz to rad/ns.
pub fn ghz_to_angular(ghz: f64) -> f64 {
    2.0 * PI * ghz
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PulseShape {
    Square,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoLevelParams {
    pub gamma: f64,
    /// rad/ns
    pub delta_l: f64,
    pub pulse_shape: PulseShape,
    pub pulse_area: f64,
    /// Intensity FWHM for Gaussian, full width for Square, ns.
    pub duration: f64,
}

impl TwoLevelParams {
    fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !(self.duration > 0.0) || !(self.pulse_area >= 0.0) || !self.delta_l.is_finite() {
            return invalid("two-level parameters out of range");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcitationOutcome {
    pub p_zero: f64,
    pub p_one: f64,
    pub p_two: f64,
    pub residual_excited: f64,
}

impl ExcitationOutcome {
    pub fn emission(&self) -> f64 {
        self.p_one + self.p_two
    }

    fn is_finite(&self) -> bool {
        [self.p_zero, self.p_one, self.p_two, self.residual_excited].iter().all(|x| x.is_finite())
    }

    fn max_diff(&self, o: &Self) -> f64 {
        [
            self.p_zero - o.p_zero,
            self.p_one - o.p_one,
            self.p_two - o.p_two,
            self.residual_excited - o.residual_excited,
        ]
        .iter()
        .fold(0.0f64, |m, d| m.max(d.abs()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub tolerance: f64,
    pub initial_steps: usize,
    pub max_halvings: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        Self { tolerance: 1e-7, initial_steps: 64, max_halvings: 14 }
    }
}

/// Diagnostics from the last solve, useful for the conservation check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveReport {
    pub outcome: ExcitationOutcome,
    pub steps: usize,
    pub max_conservation_error: f64,
    pub halving_change: f64,
}

// State layout: gg0, ee0, re eg0, im eg0, gg1, ee1, re eg1, im eg1, gg2.
type State = [f64; 9];

struct Envelope {
    shape: PulseShape,
    peak: f64,
    sigma: f64,
    center: f64,
    width: f64,
}

impl Envelope {
    fn new(p: &TwoLevelParams) -> Self {
        match p.pulse_shape {
            PulseShape::Square => Self { shape: p.pulse_shape, peak: p.pulse_area / p.duration, sigma: 0.0, center: 0.0, width: p.duration },
            PulseShape::Gaussian => {
                // Field envelope is √2 wider than the intensity.
                let sigma = p.duration / (2.0 * (2.0 * 2f64.ln()).sqrt()) * 2f64.sqrt();
                let width = 8.0 * sigma;
                let norm = truncated_gauss_integral(sigma, 4.0 * sigma);
                Self { shape: p.pulse_shape, peak: p.pulse_area / norm, sigma, center: 4.0 * sigma, width }
            }
        }
    }

    fn omega(&self, t: f64) -> f64 {
        if t < 0.0 || t > self.width {
            return 0.0;
        }
        match self.shape {
            PulseShape::Square => self.peak,
            PulseShape::Gaussian => {
                let x = (t - self.center) / self.sigma;
                self.peak * (-0.5 * x * x).exp()
            }
        }
    }
}

/// ∫_{−h}^{h} exp(−t²/2σ²) dt by composite Simpson on a fine grid.
fn truncated_gauss_integral(sigma: f64, h: f64) -> f64 {
    let n = 4000;
    let dx = 2.0 * h / n as f64;
    let f = |t: f64| (-0.5 * (t / sigma).powi(2)).exp();
    let mut s = f(-h) + f(h);
    for i in 1..n {
        let t = -h + i as f64 * dx;
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(t);
    }
    s * dx / 3.0
}

fn rhs(y: &State, omega: f64, delta: f64, gamma: f64) -> State {
    let (gg0, ee0, r0, i0, gg1, ee1, r1, i1) = (y[0], y[1], y[2], y[3], y[4], y[5], y[6], y[7]);
    // d eg/dt = iΔ eg + iΩ/2 (ee − gg) − Γ/2 eg
    let dr = |r: f64, i: f64| -delta * i - 0.5 * gamma * r;
    let di = |r: f64, i: f64, ee: f64, gg: f64| delta * r + 0.5 * omega * (ee - gg) - 0.5 * gamma * i;
    [
        omega * i0,
        -omega * i0 - gamma * ee0,
        dr(r0, i0),
        di(r0, i0, ee0, gg0),
        omega * i1 + gamma * ee0,
        -omega * i1 - gamma * ee1,
        dr(r1, i1),
        di(r1, i1, ee1, gg1),
        gamma * ee1,
    ]
}

fn rk4_step(y: &State, t: f64, h: f64, env: Option<&Envelope>, delta: f64, gamma: f64) -> State {
    let omega = |t: f64| env.map_or(0.0, |e| e.omega(t));
    let add = |a: &State, b: &State, s: f64| -> State {
        let mut o = *a;
        for k in 0..9 {
            o[k] += s * b[k];
        }
        o
    };
    let k1 = rhs(y, omega(t), delta, gamma);
    let k2 = rhs(&add(y, &k1, 0.5 * h), omega(t + 0.5 * h), delta, gamma);
    let k3 = rhs(&add(y, &k2, 0.5 * h), omega(t + 0.5 * h), delta, gamma);
    let k4 = rhs(&add(y, &k3, h), omega(t + h), delta, gamma);
    let mut o = *y;
    for k in 0..9 {
        o[k] += h / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
    }
    o
}

fn population(y: &State) -> f64 {
    y[0] + y[1] + y[4] + y[5] + y[8]
}

fn integrate(p: &TwoLevelParams, env: &Envelope, steps: usize) -> (ExcitationOutcome, f64) {
    let mut y: State = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let mut cons = 0.0f64;
    let h = env.width / steps as f64;
    for s in 0..steps {
        y = rk4_step(&y, s as f64 * h, h, Some(env), p.delta_l, p.gamma);
        cons = cons.max((population(&y) - 1.0).abs());
    }
    if p.gamma > 0.0 {
        // Free decay window of 10/Γ, steps no coarser than 0.05/Γ or 0.5/|Δ|.
        let tail = 10.0 / p.gamma;
        let nt = steps.max(200).max((20.0 * p.delta_l.abs() / p.gamma).ceil() as usize);
        let ht = tail / nt as f64;
        for s in 0..nt {
            y = rk4_step(&y, env.width + s as f64 * ht, ht, None, p.delta_l, p.gamma);
            cons = cons.max((population(&y) - 1.0).abs());
        }
    }
    let residual = y[1] + y[5];
    let out = ExcitationOutcome { p_zero: y[0], p_one: y[4] + y[1], p_two: y[8] + y[5], residual_excited: residual };
    (out, cons)
}

pub fn solve_bloch_report(p: &TwoLevelParams, ctl: StepControl) -> Result<SolveReport> {
    p.validate()?;
    let env = Envelope::new(p);
    let mut steps = ctl.initial_steps.max(8);
    let (mut prev, mut cons) = integrate(p, &env, steps);
    for _ in 0..ctl.max_halvings {
        steps *= 2;
        let (next, c) = integrate(p, &env, steps);
        let change = next.max_diff(&prev);
        cons = cons.max(c);
        if change < ctl.tolerance && next.is_finite() {
            return Ok(SolveReport { outcome: next, steps, max_conservation_error: cons, halving_change: change });
        }
        prev = next;
    }
    Err(Error::Numeric(format!("Bloch integration did not converge after {steps} steps")))
}

pub fn solve_bloch(p: &TwoLevelParams, ctl: StepControl) -> Result<ExcitationOutcome> {
    solve_bloch_report(p, ctl).map(|r| r.outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OffResonant {
    pub p_wrong: f64,
    pub p_reexcite: f64,
    pub target: ExcitationOutcome,
}

/// Drives the target transition at `laser_ghz` and the unwanted one, which
/// sits `splitting_ghz` further away on the other side of the laser.
pub fn offres_excitation(
    gamma: f64,
    laser_ghz: f64,
    splitting_ghz: f64,
    shape: PulseShape,
    area: f64,
    duration: f64,
) -> Result<OffResonant> {
    let base = TwoLevelParams { gamma, delta_l: ghz_to_angular(laser_ghz), pulse_shape: shape, pulse_area: area, duration };
    let target = solve_bloch(&base, StepControl::default())?;
    let wrong_detuning = splitting_ghz.abs() + laser_ghz.abs();
    let wrong = solve_bloch(&TwoLevelParams { delta_l: ghz_to_angular(wrong_detuning), ..base }, StepControl::default())?;
    Ok(OffResonant { p_wrong: 1.0 - wrong.p_zero, p_reexcite: target.p_two, target })
}

pub fn optimal_square_duration(delta_l: f64) -> Result<f64> {
    if !(delta_l > 0.0) {
        return invalid("detuning must be positive");
    }
    Ok(3f64.sqrt() * PI / delta_l)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffresTerms {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

/// D₁, D₂, D₃ of the square-pulse closed form. The printed coefficient list
/// gives no |c₃|²; it is taken as zero.
pub fn offres_terms(delta_tilde: f64) -> Result<OffresTerms> {
    let s3p = 3f64.sqrt() * PI;
    if !(delta_tilde > s3p / 2.0) {
        return Err(Error::Domain(format!("delta_tilde {delta_tilde} must exceed √3π/2")));
    }
    let dt = delta_tilde;
    let c0 = 1.0;
    let c1 = s3p / (2.0 * dt);
    let c2 = 1.0 - c1;
    let c3 = 0.0;
    let phi1 = 3.0 * s3p / (8.0 * dt) - 3.0 * PI * PI / (2.0 * dt * dt) * (3.0 / 8.0 - 1.0 / (PI * PI));
    let phi2 = PI * 3f64.sqrt() / (8.0 * dt) * c2;
    let phi3 = 3.0 / 16.0 * (s3p / (8.0 * dt) - 3.0 * PI * PI / (16.0 * dt * dt));
    let phi0 = 13.0 * s3p / (128.0 * dt) * c2;
    let d1 = c0 * c2;
    let d2 = c0 * c2 + c0 * phi2 + phi0 * c2 + phi0 * phi2;
    let d3 = c1 * c3 + c3 * phi1 + c1 * phi3 + phi3 * phi1 + c3 * c2 + c3 * phi2 + phi3 * c2 + phi3 * phi2;
    Ok(OffresTerms { d1, d2, d3 })
}

pub fn closed_form_offres_fidelity(n_photons: u32, delta_tilde: f64) -> Result<f64> {
    let OffresTerms { d1, d2, d3 } = offres_terms(delta_tilde)?;
    let n = n_photons as i32;
    Ok(0.5 * (d1.powi(n) + d2.powi(n)) / (d2 + d3).powi(n))
}
