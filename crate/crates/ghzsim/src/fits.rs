//! Spectroscopy fits, cyclicity and HOM estimators, photon loss budget.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::io::Read;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub names: Vec<String>,
    pub params: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub residual_norm: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.params[i])
    }

    pub fn std_err(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.covariance[i][i].max(0.0).sqrt())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmOptions {
    pub max_iter: usize,
    pub gradient_tol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self { max_iter: 500, gradient_tol: 1e-8 }
    }
}

/// Levenberg-Marquardt on y ≈ f(p, x) with an analytic Jacobian row.
pub fn levenberg_marquardt<F>(model: F, xs: &[f64], ys: &[f64], p0: &[f64], names: &[&str], opts: LmOptions) -> Result<FitResult>
where
    F: Fn(&[f64], f64) -> (f64, Vec<f64>),
{
    let m = xs.len();
    let np = p0.len();
    if m != ys.len() || m < np {
        return invalid("fewer data points than parameters");
    }
    let eval = |p: &[f64]| -> (DVector<f64>, DMatrix<f64>) {
        let mut r = DVector::zeros(m);
        let mut j = DMatrix::zeros(m, np);
        for i in 0..m {
            let (v, g) = model(p, xs[i]);
            r[i] = ys[i] - v;
            for k in 0..np {
                j[(i, k)] = g[k];
            }
        }
        (r, j)
    };
    let mut p = p0.to_vec();
    let (mut r, mut j) = eval(&p);
    let mut cost = r.norm_squared();
    let floor = (1e-13 * ys.iter().map(|y| y * y).sum::<f64>().sqrt()).powi(2);
    let mut lambda = 1e-3;
    let mut iterations = 0;
    let scaled_gradient = |r: &DVector<f64>, j: &DMatrix<f64>| -> f64 {
        let g = j.transpose() * r;
        let scale = j.norm() * r.norm();
        if scale == 0.0 {
            0.0
        } else {
            g.amax() / scale
        }
    };
    while iterations < opts.max_iter {
        iterations += 1;
        if scaled_gradient(&r, &j) < opts.gradient_tol || cost <= floor {
            break;
        }
        let jtj = j.transpose() * &j;
        let jtr = j.transpose() * &r;
        let mut improved = false;
        while lambda < 1e16 {
            let mut a = jtj.clone();
            for k in 0..np {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let Some(step) = a.lu().solve(&jtr) else {
                lambda *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let (rt, jt) = eval(&trial);
            let ct = rt.norm_squared();
            if ct.is_finite() && ct <= cost {
                let rel = (cost - ct) / cost.max(1e-300);
                let small_step = step.norm() <= 1e-15 * (1.0 + p.iter().map(|v| v * v).sum::<f64>().sqrt());
                p = trial;
                r = rt;
                j = jt;
                cost = ct;
                lambda = (lambda / 3.0).max(1e-15);
                improved = !(small_step || rel < 1e-30);
                break;
            }
            lambda *= 4.0;
        }
        if !improved {
            break;
        }
    }
    let converged = scaled_gradient(&r, &j) < opts.gradient_tol.max(1e-6) || cost <= floor;
    let dof = (m - np).max(1) as f64;
    let jtj = j.transpose() * &j;
    let cov = jtj.clone().try_inverse().map(|c| c * (cost / dof)).unwrap_or_else(|| DMatrix::from_element(np, np, f64::NAN));
    let covariance = (0..np).map(|a| (0..np).map(|b| 0.5 * (cov[(a, b)] + cov[(b, a)])).collect()).collect();
    Ok(FitResult {
        names: names.iter().map(|s| s.to_string()).collect(),
        params: p,
        covariance,
        residual_norm: cost.sqrt(),
        converged,
        iterations,
    })
}

/// Least-squares solution of `a·c ≈ y`, with the residual sum of squares.
fn linear_lsq(a: &DMatrix<f64>, y: &DVector<f64>) -> Option<(DVector<f64>, f64)> {
    let svd = a.clone().svd(true, true);
    let c = svd.solve(y, 1e-12).ok()?;
    let rss = (y - a * &c).norm_squared();
    Some((c, rss))
}

fn check_points(data: &[(f64, f64)], min: usize) -> Result<()> {
    if data.len() < min {
        return invalid(format!("need at least {min} points, got {}", data.len()));
    }
    if data.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return invalid("non-finite data");
    }
    Ok(())
}

fn require_signal(ys: &[f64], what: &str) -> Result<()> {
    let (lo, hi) = ys.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(*y), b.max(*y)));
    if hi - lo <= 1e-12 * (1.0 + hi.abs().max(lo.abs())) {
        return Err(Error::Fit(format!("{what} trace has no oscillation")));
    }
    Ok(())
}

fn not_converged(what: &str, fit: &FitResult) -> Error {
    Error::Fit(format!("{what} fit did not converge (residual norm {:.3e})", fit.residual_norm))
}

fn log_grid(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    (0..n).map(move |i| lo * (hi / lo).powf(i as f64 / (n - 1) as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RamseyFit {
    pub t2_star: f64,
    pub detuning_mhz: f64,
    pub amplitude: f64,
    pub offset: f64,
    pub phase: f64,
    pub fit: FitResult,
}

/// offset + amplitude·cos(2π·detuning·t + φ)·exp(−(t/T₂*)²), t in ns.
pub fn fit_ramsey(data: &[(f64, f64)]) -> Result<RamseyFit> {
    check_points(data, 8)?;
    let xs: Vec<f64> = data.iter().map(|d| d.0).collect();
    let ys: Vec<f64> = data.iter().map(|d| d.1).collect();
    require_signal(&ys, "Ramsey")?;
    let y = DVector::from_column_slice(&ys);
    let t_max = xs.iter().cloned().fold(0.0, f64::max);
    let t_min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
    let span = t_max - t_min;
    if span <= 0.0 {
        return invalid("delays must span a finite range");
    }
    let dt = {
        let mut s = xs.clone();
        s.sort_by(f64::total_cmp);
        s.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).fold(f64::INFINITY, f64::min)
    };
    let f_nyq = 0.5 / dt;
    // Variable projection over (detuning, T₂*); the rest is linear.
    let mut best: Option<(f64, f64, f64, DVector<f64>)> = None;
    let n_f = 400;
    for i in 0..=n_f {
        let f = f_nyq * i as f64 / n_f as f64;
        for t2 in log_grid(span / 50.0, span * 20.0, 60) {
            let cols = if f == 0.0 { 2 } else { 3 };
            let mut a = DMatrix::zeros(xs.len(), cols);
            for (r, &t) in xs.iter().enumerate() {
                let env = (-(t / t2).powi(2)).exp();
                a[(r, 0)] = 1.0;
                a[(r, 1)] = env * (2.0 * PI * f * t).cos();
                if cols == 3 {
                    a[(r, 2)] = -env * (2.0 * PI * f * t).sin();
                }
            }
            if let Some((c, rss)) = linear_lsq(&a, &y) {
                if best.as_ref().map_or(true, |b| rss < b.2 - 1e-15 * b.2.abs()) {
                    best = Some((f, t2, rss, c));
                }
            }
        }
    }
    let (f0, t20, _, c) = best.ok_or_else(|| Error::Fit("Ramsey grid search failed".into()))?;
    let opts = LmOptions::default();
    if f0 == 0.0 {
        let model = |p: &[f64], t: f64| {
            let e = (-(t / p[2]).powi(2)).exp();
            (p[0] + p[1] * e, vec![1.0, e, p[1] * e * 2.0 * t * t / p[2].powi(3)])
        };
        let fit = levenberg_marquardt(model, &xs, &ys, &[c[0], c[1], t20], &["offset", "amplitude", "t2_star"], opts)?;
        if !fit.converged {
            return Err(not_converged("Ramsey", &fit));
        }
        let (offset, amplitude, t2) = (fit.params[0], fit.params[1], fit.params[2].abs());
        return Ok(RamseyFit { t2_star: t2, detuning_mhz: 0.0, amplitude, offset, phase: 0.0, fit });
    }
    let amp0 = (c[1] * c[1] + c[2] * c[2]).sqrt();
    let phi0 = c[2].atan2(c[1]);
    let model = |p: &[f64], t: f64| {
        let (off, a, f, phi, t2) = (p[0], p[1], p[2], p[3], p[4]);
        let e = (-(t / t2).powi(2)).exp();
        let arg = 2.0 * PI * f * t + phi;
        let (s, co) = arg.sin_cos();
        let v = off + a * co * e;
        (v, vec![1.0, co * e, -a * s * e * 2.0 * PI * t, -a * s * e, a * co * e * 2.0 * t * t / t2.powi(3)])
    };
    let fit = levenberg_marquardt(model, &xs, &ys, &[c[0], amp0, f0, phi0, t20], &["offset", "amplitude", "detuning", "phase", "t2_star"], opts)?;
    if !fit.converged {
        return Err(not_converged("Ramsey", &fit));
    }
    let p = &fit.params;
    let (mut amp, mut f, mut phi) = (p[1], p[2], p[3]);
    if amp < 0.0 {
        amp = -amp;
        phi += PI;
    }
    if f < 0.0 {
        f = -f;
        phi = -phi;
    }
    Ok(RamseyFit {
        t2_star: p[4].abs(),
        detuning_mhz: f * 1e3,
        amplitude: amp,
        offset: p[0],
        phase: phi.rem_euclid(2.0 * PI),
        fit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RabiFit {
    /// rad/ns
    pub omega_r: f64,
    pub q: f64,
    /// true when the fitted damping is indistinguishable from zero.
    pub undamped: bool,
    pub amplitude: f64,
    pub offset: f64,
    pub fit: FitResult,
}

pub const UNDAMPED_Q: f64 = 1e4;

/// offset + amplitude·cos(Ω_r t)·exp(−t/(Q·T_π)), T_π = π/Ω_r.
/// Fitted with g = 1/Q so an undamped trace stays regular.
pub fn fit_rabi(data: &[(f64, f64)]) -> Result<RabiFit> {
    check_points(data, 10)?;
    let xs: Vec<f64> = data.iter().map(|d| d.0).collect();
    let ys: Vec<f64> = data.iter().map(|d| d.1).collect();
    require_signal(&ys, "Rabi")?;
    let y = DVector::from_column_slice(&ys);
    let t_max = xs.iter().cloned().fold(0.0, f64::max);
    let dt = {
        let mut s = xs.clone();
        s.sort_by(f64::total_cmp);
        s.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).fold(f64::INFINITY, f64::min)
    };
    if t_max <= 0.0 || !dt.is_finite() {
        return invalid("durations must span a finite range");
    }
    let w_lo = 2.0 * PI / t_max;
    let w_hi = PI / dt;
    let mut best: Option<(f64, f64, f64, DVector<f64>)> = None;
    for w in log_grid(w_lo, w_hi, 800) {
        for g in std::iter::once(0.0).chain(log_grid(1e-3, 1.0, 40)) {
            let mut a = DMatrix::zeros(xs.len(), 2);
            for (r, &t) in xs.iter().enumerate() {
                a[(r, 0)] = 1.0;
                a[(r, 1)] = (w * t).cos() * (-t * w * g / PI).exp();
            }
            if let Some((c, rss)) = linear_lsq(&a, &y) {
                if best.as_ref().map_or(true, |b| rss < b.2) {
                    best = Some((w, g, rss, c));
                }
            }
        }
    }
    let (w0, g0, _, c) = best.ok_or_else(|| Error::Fit("Rabi grid search failed".into()))?;
    let model = |p: &[f64], t: f64| {
        let (off, a, w, g) = (p[0], p[1], p[2], p[3]);
        let e = (-t * w * g / PI).exp();
        let (s, co) = (w * t).sin_cos();
        let v = off + a * co * e;
        let dw = a * e * (-s * t - co * t * g / PI);
        let dg = -a * co * e * t * w / PI;
        (v, vec![1.0, co * e, dw, dg])
    };
    let fit = levenberg_marquardt(model, &xs, &ys, &[c[0], c[1], w0, g0], &["offset", "amplitude", "omega_r", "inv_q"], LmOptions::default())?;
    if !fit.converged {
        return Err(not_converged("Rabi", &fit));
    }
    let g = fit.params[3];
    let undamped = g <= 1.0 / UNDAMPED_Q;
    Ok(RabiFit {
        omega_r: fit.params[2].abs(),
        q: if g > 0.0 { 1.0 / g } else { f64::INFINITY },
        undamped,
        amplitude: fit.params[1],
        offset: fit.params[0],
        fit,
    })
}

pub fn pi_fidelity(q: f64) -> Result<f64> {
    if !(q > 0.0) {
        return invalid("Q must be positive");
    }
    Ok(0.5 * (1.0 + (-1.0 / q).exp()))
}

pub fn t2_rotation_infidelity(omega_r: f64, t2_star: f64) -> Result<f64> {
    let x = omega_r * t2_star;
    if !(x > 0.0) {
        return invalid("Ω_r·T₂* must be positive");
    }
    Ok(2.0 / (x * x))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HomFit {
    pub v_s: f64,
    pub v_s_err: f64,
    pub f_slope: f64,
    pub f_slope_err: f64,
}

/// OLS of V_HOM = V_s − F·g²(0).
pub fn hom_regression(points: &[(f64, f64)]) -> Result<HomFit> {
    if points.len() < 2 {
        return invalid("need at least 2 points");
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 1e-20 * points.iter().map(|p| p.0 * p.0).sum::<f64>().max(1e-300) {
        return Err(Error::Fit("all g2 values equal".into()));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let s2 = if points.len() > 2 { rss / (n - 2.0) } else { 0.0 };
    Ok(HomFit {
        v_s: intercept,
        v_s_err: (s2 * (1.0 / n + mx * mx / sxx)).sqrt(),
        f_slope: -slope,
        f_slope_err: (s2 / sxx).sqrt(),
    })
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> Result<f64> {
    fn rec<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> Option<f64> {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if delta.abs() <= 15.0 * tol {
            return Some(left + right + delta / 15.0);
        }
        if depth == 0 {
            return None;
        }
        Some(rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)? + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 48).ok_or_else(|| Error::Numeric("adaptive quadrature did not converge".into()))
}

/// Saturation factor averaged over Gaussian spectral diffusion, without γ_Y.
pub fn pumping_factor(s: f64, sigma_e: f64, gamma: f64) -> Result<f64> {
    if !(s > 0.0 && sigma_e > 0.0 && gamma > 0.0) {
        return invalid("power, σe and Γ must be positive");
    }
    let norm = 1.0 / (sigma_e * (2.0 * PI).sqrt());
    let f = |d: f64| norm * (-0.5 * (d / sigma_e).powi(2)).exp() * s / (2.0 * s + 1.0 + 4.0 * d * d / (gamma * gamma));
    // Peak scale for the absolute tolerance gives < 1e-8 relative error.
    let scale = s / (2.0 * s + 1.0);
    adaptive_simpson(&f, -6.0 * sigma_e, 6.0 * sigma_e, 1e-11 * scale)
}

pub fn optical_pumping_rate(s: f64, gamma_y: f64, sigma_e: f64, gamma: f64) -> Result<f64> {
    if !(gamma_y > 0.0) {
        return invalid("γ_Y must be positive");
    }
    Ok(gamma_y * pumping_factor(s, sigma_e, gamma)?)
}

pub fn cyclicity_from_rates(gamma: f64, gamma_y: f64) -> Result<f64> {
    if !(gamma_y > 0.0) {
        return invalid("γ_Y must be positive");
    }
    Ok((gamma - gamma_y) / gamma_y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CyclicityFit {
    pub gamma_y: f64,
    pub gamma_y_err: f64,
    pub cyclicity: f64,
    pub cyclicity_err: f64,
}

/// The model is linear in γ_Y, so the least-squares optimum is closed form.
pub fn fit_cyclicity(data: &[(f64, f64)], gamma: f64, sigma_e: f64) -> Result<CyclicityFit> {
    check_points(data, 4)?;
    let basis: Vec<f64> = data.iter().map(|d| pumping_factor(d.0, sigma_e, gamma)).collect::<Result<_>>()?;
    let sii: f64 = basis.iter().map(|b| b * b).sum();
    let siy: f64 = basis.iter().zip(data).map(|(b, d)| b * d.1).sum();
    let gamma_y = siy / sii;
    if !(gamma_y > 0.0) {
        return Err(Error::Fit("fitted γ_Y is not positive".into()));
    }
    let rss: f64 = basis.iter().zip(data).map(|(b, d)| (d.1 - gamma_y * b).powi(2)).sum();
    let err = (rss / (data.len() as f64 - 1.0) / sii).sqrt();
    Ok(CyclicityFit {
        gamma_y,
        gamma_y_err: err,
        cyclicity: cyclicity_from_rates(gamma, gamma_y)?,
        cyclicity_err: gamma / (gamma_y * gamma_y) * err,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossStage {
    pub name: String,
    pub efficiency: f64,
    #[serde(default)]
    pub group: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupTotal {
    pub group: String,
    pub efficiency: f64,
    pub db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossBudget {
    pub stages: Vec<LossStage>,
    pub groups: Vec<GroupTotal>,
    pub overall: f64,
    pub overall_db: f64,
}

pub fn to_db(efficiency: f64) -> f64 {
    10.0 * efficiency.log10()
}

pub fn efficiency_budget(stages: Vec<LossStage>) -> Result<LossBudget> {
    if stages.is_empty() {
        return invalid("empty loss budget");
    }
    let mut groups: Vec<GroupTotal> = Vec::new();
    for s in &stages {
        if !(s.efficiency > 0.0 && s.efficiency <= 1.0) {
            return invalid(format!("efficiency of '{}' outside (0, 1]: {}", s.name, s.efficiency));
        }
        match groups.iter_mut().find(|g| g.group == s.group) {
            Some(g) => g.efficiency *= s.efficiency,
            None => groups.push(GroupTotal { group: s.group.clone(), efficiency: s.efficiency, db: 0.0 }),
        }
    }
    for g in &mut groups {
        g.db = to_db(g.efficiency);
    }
    let overall: f64 = stages.iter().map(|s| s.efficiency).product();
    Ok(LossBudget { stages, groups, overall, overall_db: to_db(overall) })
}

impl LossBudget {
    /// CSV columns `stage,efficiency[,group]`; header row required.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
        let mut stages = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| Error::Parse { line: i + 2, msg: e.to_string() })?;
            let name = rec.get(0).unwrap_or("").to_string();
            let eff: f64 = rec
                .get(1)
                .ok_or_else(|| Error::Parse { line: i + 2, msg: "missing efficiency".into() })?
                .parse()
                .map_err(|e| Error::Parse { line: i + 2, msg: format!("bad efficiency: {e}") })?;
            let group = rec.get(2).unwrap_or("").to_string();
            stages.push(LossStage { name, efficiency: eff, group });
        }
        efficiency_budget(stages)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("stage,group,efficiency,db\n");
        for st in &self.stages {
            let _ = writeln!(s, "{},{},{:.15e},{:.15e}", st.name, st.group, st.efficiency, to_db(st.efficiency));
        }
        for g in &self.groups {
            let _ = writeln!(s, "total:{},{},{:.15e},{:.15e}", g.group, g.group, g.efficiency, g.db);
        }
        let _ = writeln!(s, "total,,{:.15e},{:.15e}", self.overall, self.overall_db);
        s
    }

    pub fn to_table(&self) -> String {
        let width = self.stages.iter().map(|s| s.name.len()).chain(self.groups.iter().map(|g| g.group.len() + 7)).max().unwrap_or(5).max(5);
        let mut s = String::new();
        let _ = writeln!(s, "{:<width$}  {:>8}  {:>8}", "stage", "eff %", "dB");
        for g in &self.groups {
            for st in self.stages.iter().filter(|st| st.group == g.group) {
                let _ = writeln!(s, "{:<width$}  {:>8.1}  {:>8.2}", st.name, 100.0 * st.efficiency, to_db(st.efficiency));
            }
            let label = if g.group.is_empty() { "total".to_string() } else { format!("total {}", g.group) };
            let _ = writeln!(s, "{:<width$}  {:>8.1}  {:>8.1}", label, 100.0 * g.efficiency, g.db);
        }
        if self.groups.len() > 1 {
            let _ = writeln!(s, "{:<width$}  {:>8.1}  {:>8.1}", "overall", 100.0 * self.overall, self.overall_db);
        }
        s
    }
}

pub fn ghz_rate(eta_p: f64, r_exp: f64, n_photons: u32) -> Result<f64> {
    if !(eta_p > 0.0 && eta_p <= 1.0) {
        return invalid("η_p outside (0, 1]");
    }
    if !(r_exp > 0.0) {
        return invalid("repetition rate must be positive");
    }
    Ok(eta_p.powi(n_photons as i32) * r_exp)
}
