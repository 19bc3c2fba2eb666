//! Trajectory Monte Carlo over spin ⊗ time-bin records, post-selected
//! fidelity estimators, analytic oracles and fidelity-vs-N extrapolation.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::{Mutex, OnceLock};

use nalgebra::{Matrix2, Vector2};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bloch;
use crate::channels::{self, EmissionProbs, ErrorKind, ScenarioConfig};
use crate::error::{invalid, Error, Result};
use crate::noise::{self, NoiseRealization, NoiseSpectrum};
use crate::protocol::{self, MeasurementSetting, PhotonBasis, PulseEvent, PulseKind, RotationRole, SpinBasis, TimingConfig};
use crate::quantum;

const C0: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Bin {
    Early,
    Late,
}

impl Bin {
    fn bit(self) -> u32 {
        match self {
            Bin::Early => 1,
            Bin::Late => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SlotOccupancy {
    None,
    Early,
    Late,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    /// Two bits per slot: early present, late present.
    pub record: u32,
    /// Amplitudes of |↑⟩ and |↓⟩.
    pub amp: [Complex64; 2],
}

/// Pure joint state of the spin and the emitted time-bin photons.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub n_slots: usize,
    pub branches: Vec<Branch>,
    /// Photon number per (slot, bin) when a surplus photon was emitted.
    pub multiplicity: Vec<[u8; 2]>,
    pub coherence_alive: bool,
    pub branch_weight: f64,
}

impl JointState {
    pub fn new(n_slots: usize, spin_up: bool) -> Self {
        let amp = if spin_up { [Complex64::from(1.0), C0] } else { [C0, Complex64::from(1.0)] };
        Self {
            n_slots,
            branches: vec![Branch { record: 0, amp }],
            multiplicity: vec![[1, 1]; n_slots],
            coherence_alive: true,
            branch_weight: 1.0,
        }
    }

    pub fn occupancy(&self, record: u32, slot: usize) -> SlotOccupancy {
        match (record >> (2 * slot)) & 3 {
            0 => SlotOccupancy::None,
            1 => SlotOccupancy::Early,
            2 => SlotOccupancy::Late,
            _ => SlotOccupancy::Both,
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.branches.iter().map(|b| b.amp[0].norm_sqr() + b.amp[1].norm_sqr()).sum()
    }

    pub fn normalize(&mut self) {
        let n = self.norm_sqr();
        if n > 0.0 {
            let s = 1.0 / n.sqrt();
            for b in &mut self.branches {
                b.amp[0] *= s;
                b.amp[1] *= s;
            }
        }
        self.branches.retain(|b| b.amp[0].norm_sqr() + b.amp[1].norm_sqr() > 1e-300);
    }

    pub fn spin_population(&self, s: usize) -> f64 {
        self.branches.iter().map(|b| b.amp[s].norm_sqr()).sum()
    }

    pub fn rotate(&mut self, angle: f64, phase: f64) {
        let u = rotation_matrix(angle, phase);
        for b in &mut self.branches {
            let v = u * Vector2::new(b.amp[0], b.amp[1]);
            b.amp = [v[0], v[1]];
        }
    }

    /// Relative phase Φ between |↓⟩ and |↑⟩.
    pub fn add_phase(&mut self, phi: f64) {
        let up = Complex64::from_polar(1.0, -0.5 * phi);
        let down = Complex64::from_polar(1.0, 0.5 * phi);
        for b in &mut self.branches {
            b.amp[0] *= up;
            b.amp[1] *= down;
        }
    }

    pub fn scale_spin(&mut self, s: usize, f: f64) {
        for b in &mut self.branches {
            b.amp[s] *= f;
        }
    }

    pub fn collapse_to_spin(&mut self, s: usize) {
        for b in &mut self.branches {
            b.amp[1 - s] = C0;
        }
        self.branch_weight *= self.spin_population(s) / self.norm_sqr().max(1e-300);
        self.normalize();
    }

    /// Moves the population of spin `from` into spin `to` (a jump |to⟩⟨from|).
    pub fn move_spin(&mut self, from: usize, to: usize) {
        for b in &mut self.branches {
            b.amp[to] = b.amp[from];
            b.amp[from] = C0;
        }
    }

    /// Picks one branch and spin component with Born probability.
    pub fn collapse_random<R: Rng>(&mut self, rng: &mut R) {
        let total = self.norm_sqr();
        let mut u = rng.gen::<f64>() * total;
        let mut pick = (0, 0);
        'outer: for (i, b) in self.branches.iter().enumerate() {
            for s in 0..2 {
                let p = b.amp[s].norm_sqr();
                if u < p {
                    pick = (i, s);
                    break 'outer;
                }
                u -= p;
                pick = (i, s);
            }
        }
        let rec = self.branches[pick.0].record;
        let mut amp = [C0, C0];
        amp[pick.1] = Complex64::from(1.0);
        self.branches = vec![Branch { record: rec, amp }];
        self.coherence_alive = false;
    }

    pub fn set_spin(&mut self, up: bool) {
        for b in &mut self.branches {
            let a = (b.amp[0].norm_sqr() + b.amp[1].norm_sqr()).sqrt();
            b.amp = if up { [Complex64::from(a), C0] } else { [C0, Complex64::from(a)] };
        }
    }

    /// Splits every |↓⟩ amplitude into an emitted part (photon added to
    /// `slot`/`bin`) and a part left unchanged.
    pub fn emit(&mut self, slot: usize, bin: Bin, a_emit: Complex64, a_stay: Complex64) {
        let bit = bin.bit() << (2 * slot);
        let mut map: HashMap<u32, [Complex64; 2]> = HashMap::with_capacity(self.branches.len() * 2);
        let mut order = Vec::new();
        let mut add = |rec: u32, up: Complex64, down: Complex64, map: &mut HashMap<u32, [Complex64; 2]>| {
            let e = map.entry(rec).or_insert_with(|| {
                order.push(rec);
                [C0, C0]
            });
            e[0] += up;
            e[1] += down;
        };
        for b in &self.branches {
            add(b.record, b.amp[0], b.amp[1] * a_stay, &mut map);
            if b.amp[1] != C0 && a_emit != C0 {
                add(b.record | bit, C0, b.amp[1] * a_emit, &mut map);
            }
        }
        self.branches = order.into_iter().map(|r| Branch { record: r, amp: map[&r] }).collect();
    }

    pub fn bump_multiplicity(&mut self, slot: usize, bin: Bin) {
        let i = if bin == Bin::Early { 0 } else { 1 };
        self.multiplicity[slot][i] = self.multiplicity[slot][i].saturating_add(1);
    }
}

pub fn rotation_matrix(angle: f64, phase: f64) -> Matrix2<Complex64> {
    let c = Complex64::from((0.5 * angle).cos());
    let s = (0.5 * angle).sin();
    let mi = Complex64::new(0.0, -1.0);
    Matrix2::new(c, mi * s * Complex64::from_polar(1.0, -phase), mi * s * Complex64::from_polar(1.0, phase), c)
}

/// Phase of the readout π/2 that sends the spin "+" eigenstate of M̂k to
/// |↓⟩; adding π sends it to |↑⟩.
pub fn spin_readout_phase(k: usize, n: usize) -> f64 {
    protocol::wrap_angle(quantum::mk_phase(k, n, 0) + FRAC_PI_2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShotRecord {
    /// Bit j set: photon j detected late (Z) or in the "−" port.
    pub photons: u32,
    /// true: spin read as |↓⟩ (bright).
    pub spin_bright: bool,
    /// Post-selection weight; 0 means rejected.
    pub weight: f64,
}

impl ShotRecord {
    pub fn accepted(&self) -> bool {
        self.weight > 0.0
    }
}

/// Everything a trajectory needs that does not change from shot to shot.
#[derive(Debug, Clone)]
pub struct TrajectoryContext {
    pub probs: EmissionProbs,
    pub p_flip: f64,
    pub p_dephase: f64,
    pub f_r: f64,
    pub f_int: f64,
    pub noise: Option<(NoiseSpectrum, f64)>,
}

impl TrajectoryContext {
    pub fn new(scenario: &ScenarioConfig) -> Result<Self> {
        scenario.validate()?;
        let noise = if scenario.nuclear_active() {
            let spec = noise::default_spectrum(scenario.b_field)?;
            let a = cached_amplitude(scenario.b_field, &spec)?;
            Some((spec, a))
        } else {
            None
        };
        Ok(Self {
            probs: scenario.emission()?,
            p_flip: scenario.p_flip(),
            p_dephase: scenario.p_dephase(),
            f_r: scenario.readout(),
            f_int: scenario.init(),
            noise,
        })
    }
}

fn cached_amplitude(b_field: f64, spec: &NoiseSpectrum) -> Result<f64> {
    static CACHE: OnceLock<Mutex<HashMap<u64, f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(a) = cache.lock().map_err(|_| Error::Numeric("amplitude cache poisoned".into()))?.get(&b_field.to_bits()) {
        return Ok(*a);
    }
    let a = noise::calibrated_amplitude(spec)?;
    cache.lock().map_err(|_| Error::Numeric("amplitude cache poisoned".into()))?.insert(b_field.to_bits(), a);
    Ok(a)
}

pub fn run_trajectory<R: Rng>(
    sequence: &[PulseEvent],
    ctx: &TrajectoryContext,
    setting: &MeasurementSetting,
    rng: &mut R,
) -> ShotRecord {
    run_trajectory_logged(sequence, ctx, setting, rng).0
}

pub fn run_trajectory_logged<R: Rng>(
    sequence: &[PulseEvent],
    ctx: &TrajectoryContext,
    setting: &MeasurementSetting,
    rng: &mut R,
) -> (ShotRecord, Vec<channels::ErrorEvent>) {
    let n_slots = sequence.iter().filter(|e| matches!(e.kind, PulseKind::Excitation { .. })).count().div_ceil(2);
    let up = channels::apply_init_error(ctx.f_int, rng);
    let mut log = Vec::new();
    if !up {
        log.push(channels::ErrorEvent { kind: ErrorKind::InitFlip, location: 0 });
    }
    let mut state = JointState::new(n_slots, up);
    let realization = ctx.noise.as_ref().map(|(spec, a)| NoiseRealization::sample(spec, *a, rng));
    let mut last_rotation: Option<f64> = None;
    for (i, ev) in sequence.iter().enumerate() {
        match ev.kind {
            PulseKind::Rotation { angle, phase, role, .. } => {
                if let (Some((spec, _)), Some(r), Some(t0)) = (&ctx.noise, &realization, last_rotation) {
                    state.add_phase(noise::phase_unchecked(r, spec, t0, ev.start_time));
                }
                last_rotation = Some(ev.start_time);
                state.rotate(angle, phase);
                if role == RotationRole::Protocol && (angle - PI).abs() < 1e-9 {
                    if let Some(k) = channels::apply_laser_spin_flip(&mut state, ctx.p_flip, rng) {
                        log.push(channels::ErrorEvent { kind: k, location: i });
                    }
                }
            }
            PulseKind::Excitation { pulse_id } => {
                let slot = pulse_id / 2;
                let bin = if pulse_id % 2 == 0 { Bin::Early } else { Bin::Late };
                for k in channels::apply_excitation(&mut state, slot, bin, &ctx.probs, rng) {
                    log.push(channels::ErrorEvent { kind: k, location: i });
                }
                if bin == Bin::Late {
                    if let Some(k) = channels::apply_pure_dephasing(&mut state, ctx.p_dephase, rng) {
                        log.push(channels::ErrorEvent { kind: k, location: i });
                    }
                }
            }
            PulseKind::ReadoutPump { .. } => break,
            _ => {}
        }
    }
    let (rec, flipped) = measure(&state, setting, ctx.f_r, rng);
    if flipped {
        log.push(channels::ErrorEvent { kind: ErrorKind::ReadoutFlip, location: sequence.len() });
    }
    (rec, log)
}

/// Detection amplitude for a photon in `bin` giving outcome bit `o`.
fn detection_amplitude(basis: PhotonBasis, bin: usize, o: u32) -> Complex64 {
    match basis {
        PhotonBasis::Z => {
            if o as usize == bin {
                Complex64::from(1.0)
            } else {
                C0
            }
        }
        PhotonBasis::Equatorial(theta) => {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            if bin == 0 {
                Complex64::from(s)
            } else {
                let sign = if o == 0 { 1.0 } else { -1.0 };
                Complex64::from_polar(sign * s, -theta)
            }
        }
    }
}

/// Outcome distribution P(photons, spin) under single-photon detection per
/// slot, then samples one outcome. Orthogonal leftover photons (the second
/// photon of a doubly occupied slot) make variants add incoherently.
fn measure<R: Rng>(state: &JointState, setting: &MeasurementSetting, f_r: f64, rng: &mut R) -> (ShotRecord, bool) {
    let n = state.n_slots;
    let n_out = 1u32 << n;
    // key: (remainder, outcome) -> spin amplitudes
    let mut acc: BTreeMap<(u32, u32), [Complex64; 2]> = BTreeMap::new();
    for b in &state.branches {
        let mut options: Vec<Vec<(usize, u32)>> = Vec::with_capacity(n);
        let mut dead = false;
        for j in 0..n {
            match state.occupancy(b.record, j) {
                SlotOccupancy::None => {
                    dead = true;
                    break;
                }
                SlotOccupancy::Early => options.push(vec![(0, 0)]),
                SlotOccupancy::Late => options.push(vec![(1, 0)]),
                // detect early, late remains (tag 2); detect late, early remains (tag 1)
                SlotOccupancy::Both => options.push(vec![(0, 2), (1, 1)]),
            }
        }
        if dead {
            continue;
        }
        let n_var: usize = options.iter().map(Vec::len).product();
        for v in 0..n_var {
            let mut idx = v;
            let mut bins = Vec::with_capacity(n);
            let mut rem = 0u32;
            let mut mult = 1.0;
            for (j, opt) in options.iter().enumerate() {
                let (bin, tag) = opt[idx % opt.len()];
                idx /= opt.len();
                bins.push(bin);
                rem |= tag << (2 * j);
                mult *= state.multiplicity[j][bin] as f64;
            }
            let m = Complex64::from(mult.sqrt());
            for o in 0..n_out {
                let mut a = m;
                for (j, bin) in bins.iter().enumerate() {
                    a *= detection_amplitude(setting.photon, *bin, (o >> j) & 1);
                    if a == C0 {
                        break;
                    }
                }
                if a == C0 {
                    continue;
                }
                let e = acc.entry((rem, o)).or_insert([C0, C0]);
                e[0] += a * b.amp[0];
                e[1] += a * b.amp[1];
            }
        }
    }
    let mut probs = vec![[0.0f64; 2]; n_out as usize];
    for ((_, o), amp) in &acc {
        probs[*o as usize][0] += amp[0].norm_sqr();
        probs[*o as usize][1] += amp[1].norm_sqr();
    }
    let total: f64 = probs.iter().map(|p| p[0] + p[1]).sum();
    if total <= 1e-15 {
        return (ShotRecord { photons: 0, spin_bright: false, weight: 0.0 }, false);
    }
    let mut u = rng.gen::<f64>() * total;
    let mut pick = (0u32, 0usize);
    'outer: for (o, p) in probs.iter().enumerate() {
        for s in 0..2 {
            if p[s] > 0.0 {
                pick = (o as u32, s);
                if u < p[s] {
                    break 'outer;
                }
                u -= p[s];
            }
        }
    }
    let bright = pick.1 == 1;
    let read = channels::apply_readout_error(bright, f_r, rng);
    (ShotRecord { photons: pick.0, spin_bright: read, weight: total }, read != bright)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SettingSummary {
    pub label: String,
    pub shots: usize,
    pub accepted: usize,
    pub accepted_weight: f64,
    pub estimate: Estimate,
    /// outcome string (photons then spin) -> summed weight
    pub outcomes: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub n: usize,
    pub pz: Estimate,
    pub mk: Vec<Estimate>,
    pub chi: Estimate,
    pub fidelity: Estimate,
    pub shots_total: usize,
    pub shots_accepted: usize,
    pub settings: Vec<SettingSummary>,
}

fn weighted_mean(samples: &[(f64, f64)]) -> Result<Estimate> {
    let w: f64 = samples.iter().map(|s| s.0).sum();
    if w <= 0.0 {
        return Err(Error::Estimation("no accepted shots".into()));
    }
    let mean = samples.iter().map(|s| s.0 * s.1).sum::<f64>() / w;
    let var = samples.iter().map(|s| (s.0 * (s.1 - mean)).powi(2)).sum::<f64>();
    Ok(Estimate { value: mean, std_err: var.sqrt() / w })
}

#[derive(Debug, Clone, Copy)]
enum Role {
    Z,
    Mk { bright_is_plus: bool },
}

fn shot_value(role: Role, rec: &ShotRecord, n: usize) -> f64 {
    let n_ph = n - 1;
    match role {
        Role::Z => {
            // The final π maps logical 0 (|↑⟩) to bright.
            let spin = if rec.spin_bright { 0 } else { 1 };
            let all = if spin == 1 { (1u32 << n_ph) - 1 } else { 0 };
            if rec.photons == all {
                1.0
            } else {
                0.0
            }
        }
        Role::Mk { bright_is_plus, .. } => {
            let minus_photons = rec.photons.count_ones();
            let spin_plus = rec.spin_bright == bright_is_plus;
            let mut v = if minus_photons % 2 == 0 { 1.0 } else { -1.0 };
            if !spin_plus {
                v = -v;
            }
            v
        }
    }
}

fn outcome_label(rec: &ShotRecord, n_ph: usize) -> String {
    let mut s: String = (0..n_ph).map(|j| if (rec.photons >> j) & 1 == 1 { '1' } else { '0' }).collect();
    s.push(if rec.spin_bright { 'b' } else { 'd' });
    s
}

fn shot_rng(seed: u64, setting: u64, shot: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ setting.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(shot);
    rng
}

fn run_setting(
    label: String,
    seq: &[PulseEvent],
    ctx: &TrajectoryContext,
    setting: MeasurementSetting,
    role: Role,
    n: usize,
    shots: usize,
    seed: u64,
    index: u64,
) -> Result<(SettingSummary, Vec<(f64, f64)>)> {
    let records: Vec<ShotRecord> = (0..shots)
        .into_par_iter()
        .map(|i| {
            let mut rng = shot_rng(seed, index, i as u64);
            run_trajectory(seq, ctx, &setting, &mut rng)
        })
        .collect();
    let samples: Vec<(f64, f64)> = records.iter().filter(|r| r.accepted()).map(|r| (r.weight, shot_value(role, r, n))).collect();
    let mut outcomes = BTreeMap::new();
    for r in records.iter().filter(|r| r.accepted()) {
        *outcomes.entry(outcome_label(r, n - 1)).or_insert(0.0) += r.weight;
    }
    let estimate = weighted_mean(&samples).map_err(|_| Error::Estimation(format!("no accepted shots in setting {label}")))?;
    let summary = SettingSummary {
        label,
        shots,
        accepted: samples.len(),
        accepted_weight: samples.iter().map(|s| s.0).sum(),
        estimate,
        outcomes,
    };
    Ok((summary, samples))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub shots: usize,
    pub seed: u64,
    pub timing: TimingConfig,
}

impl RunOptions {
    pub fn new(shots: usize, seed: u64) -> Self {
        Self { shots, seed, timing: TimingConfig::default() }
    }
}

pub fn estimate_fidelity(scenario: &ScenarioConfig, n: usize, shots: usize, rng_seed: u64) -> Result<RunResult> {
    estimate_fidelity_with(scenario, n, RunOptions::new(shots, rng_seed))
}

pub fn estimate_fidelity_with(scenario: &ScenarioConfig, n: usize, opts: RunOptions) -> Result<RunResult> {
    if opts.shots < 1000 {
        return invalid("need at least 1000 shots per setting");
    }
    if !(2..=8).contains(&n) {
        return invalid(format!("qubit count {n} outside 2..=8"));
    }
    let ctx = TrajectoryContext::new(scenario)?;
    let base = protocol::build_ghz_sequence(n, &opts.timing)?;
    let mut settings = Vec::new();
    let (z, _) = run_setting("Z".into(), &base, &ctx, MeasurementSetting::z(), Role::Z, n, opts.shots, opts.seed, 0)?;
    let pz = z.estimate;
    settings.push(z);
    let mut mk = Vec::with_capacity(n);
    for k in 1..=n {
        let theta = protocol::wrap_angle(k as f64 * PI / n as f64);
        let mut pooled = Vec::new();
        for (c, bright_is_plus) in [(0u64, true), (1, false)] {
            let phase = spin_readout_phase(k, n) + if bright_is_plus { 0.0 } else { PI };
            let spin = SpinBasis::Equatorial(protocol::wrap_angle(phase));
            let seq = protocol::apply_setting(&base, spin, &opts.timing)?;
            let setting = MeasurementSetting { photon: PhotonBasis::Equatorial(theta), spin };
            let label = format!("M{k}{}", if bright_is_plus { "a" } else { "b" });
            let (s, samples) = run_setting(label, &seq, &ctx, setting, Role::Mk { bright_is_plus }, n, opts.shots, opts.seed, 1 + 2 * (k as u64 - 1) + c)?;
            pooled.extend(samples);
            settings.push(s);
        }
        mk.push(weighted_mean(&pooled)?);
    }
    let values: Vec<f64> = mk.iter().map(|e| e.value).collect();
    let chi = Estimate {
        value: quantum::chi_from_mk(&values),
        std_err: mk.iter().map(|e| e.std_err * e.std_err).sum::<f64>().sqrt() / n as f64,
    };
    let fidelity = Estimate { value: 0.5 * (pz.value + chi.value), std_err: 0.5 * (pz.std_err.powi(2) + chi.std_err.powi(2)).sqrt() };
    let shots_total = settings.iter().map(|s| s.shots).sum();
    let shots_accepted = settings.iter().map(|s| s.accepted).sum();
    Ok(RunResult { n, pz, mk, chi, fidelity, shots_total, shots_accepted, settings })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum OracleChannel {
    Cyclicity { c: f64 },
    SpinFlip { q: f64 },
    Init { f_int: f64 },
    Readout { f_r: f64 },
    Dephasing { gamma_d: f64, gamma: f64 },
    Offres { delta_tilde: f64 },
}

/// Closed-form single-channel fidelity for N photons (n = N + 1 qubits).
pub fn analytic_oracle(channel: OracleChannel, n_photons: u32) -> Result<f64> {
    let nf = n_photons as f64;
    match channel {
        OracleChannel::Cyclicity { c } => {
            if !(c > 0.0) {
                return invalid("cyclicity must be positive");
            }
            Ok(1.0 - (nf - 0.5) / (2.0 * (c + 1.0)))
        }
        OracleChannel::SpinFlip { q } => {
            let p_f = channels::spin_flip_probability(q)?;
            let m = 2.0 * (nf + 1.0) - 3.0;
            Ok(0.5 * (1.0 - m * p_f + (-m / q).exp()))
        }
        OracleChannel::Init { f_int } => Ok(f_int),
        OracleChannel::Readout { f_r } => Ok((3.0 * f_r - 1.0) / 2.0),
        OracleChannel::Dephasing { gamma_d, gamma } => Ok(0.5 + 0.5 * (gamma / (gamma + 2.0 * gamma_d)).powf(nf)),
        OracleChannel::Offres { delta_tilde } => bloch::closed_form_offres_fidelity(n_photons, delta_tilde),
    }
}

/// Square-pulse scenario at the optimal duration for an off-resonant
/// detuning of `delta_ghz`, with every other channel off.
pub fn offres_oracle_scenario(delta_ghz: f64) -> Result<ScenarioConfig> {
    let mut s = ScenarioConfig::single_channel("offres")?;
    let t = bloch::optimal_square_duration(bloch::ghz_to_angular(delta_ghz))?;
    s.pulse = channels::PulseConfig { shape: bloch::PulseShape::Square, area: PI, fwhm_ps: t * 1e3, width_of: channels::PulseWidth::Intensity };
    s.laser_detuning_ghz = 0.0;
    s.cycling_splitting_ghz = delta_ghz;
    s.channels.reexcitation = false;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetRow {
    pub source: String,
    pub infidelity: f64,
    pub std_err: f64,
}

pub const BUDGET_SOURCES: [&str; 6] = ["off-resonant", "nuclear", "spin-flip", "readout", "dephasing", "cyclicity"];

pub fn without_source(scenario: &ScenarioConfig, source: &str) -> Result<ScenarioConfig> {
    let mut s = scenario.clone();
    match source {
        "off-resonant" => s.channels.offres = false,
        "nuclear" => s.channels.nuclear = false,
        "spin-flip" => s.channels.spin_flip = false,
        "readout" => s.channels.readout = false,
        "dephasing" => s.channels.dephasing = false,
        "cyclicity" => s.channels.cyclicity = false,
        "init" => s.channels.init = false,
        other => return Err(Error::Config(format!("unknown error source {other}"))),
    }
    Ok(s)
}

/// Leave-one-out infidelities: F(all but p) − F(all).
pub fn error_budget(scenario: &ScenarioConfig, n: usize, shots: usize, seed: u64) -> Result<(RunResult, Vec<BudgetRow>)> {
    let all = estimate_fidelity(scenario, n, shots, seed)?;
    let mut rows = Vec::new();
    for src in BUDGET_SOURCES {
        let r = estimate_fidelity(&without_source(scenario, src)?, n, shots, seed)?;
        rows.push(BudgetRow {
            source: src.to_string(),
            infidelity: r.fidelity.value - all.fidelity.value,
            std_err: (r.fidelity.std_err.powi(2) + all.fidelity.std_err.powi(2)).sqrt(),
        });
    }
    Ok((all, rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ExtrapolationModel {
    /// F(N) = ½ + a·b^N
    Offset,
    /// F(N) = a·b^N
    Pure,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtrapolationFit {
    pub model: ExtrapolationModel,
    pub a: f64,
    pub b: f64,
    pub covariance: [[f64; 2]; 2],
    /// Largest photon number with F − σ > ½, None if unbounded.
    pub n_max: Option<u32>,
    pub decaying: bool,
}

impl ExtrapolationFit {
    fn offset(&self) -> f64 {
        match self.model {
            ExtrapolationModel::Offset => 0.5,
            ExtrapolationModel::Pure => 0.0,
        }
    }

    pub fn predict(&self, n: f64) -> f64 {
        self.offset() + self.a * self.b.powf(n)
    }

    pub fn sigma(&self, n: f64) -> f64 {
        let g = [self.b.powf(n), self.a * n * self.b.powf(n - 1.0)];
        let c = &self.covariance;
        (g[0] * g[0] * c[0][0] + 2.0 * g[0] * g[1] * c[0][1] + g[1] * g[1] * c[1][1]).max(0.0).sqrt()
    }

    pub fn per_photon_infidelity(&self) -> f64 {
        1.0 - self.b
    }

    pub fn n_max_qubits(&self) -> Option<u32> {
        self.n_max.map(|n| n + 1)
    }
}

/// Weighted Gauss-Newton fit of the exponential model to (N, F, σ).
pub fn extrapolate(points: &[(f64, f64, f64)], model: ExtrapolationModel) -> Result<ExtrapolationFit> {
    if points.len() < 3 {
        return invalid("need at least 3 points");
    }
    if points.iter().any(|p| !(p.2 >= 0.0)) {
        return invalid("standard errors must be non-negative");
    }
    let off = if model == ExtrapolationModel::Offset { 0.5 } else { 0.0 };
    let w: Vec<f64> = points.iter().map(|p| if p.2 > 0.0 { 1.0 / (p.2 * p.2) } else { 1.0 }).collect();
    // Log-linear start from the points above the offset.
    let logs: Vec<(f64, f64, f64)> = points.iter().zip(&w).filter(|(p, _)| p.1 - off > 1e-9).map(|(p, w)| (p.0, (p.1 - off).ln(), *w)).collect();
    let (mut a, mut b) = if logs.len() >= 2 {
        let sw: f64 = logs.iter().map(|l| l.2).sum();
        let mx = logs.iter().map(|l| l.2 * l.0).sum::<f64>() / sw;
        let my = logs.iter().map(|l| l.2 * l.1).sum::<f64>() / sw;
        let sxx: f64 = logs.iter().map(|l| l.2 * (l.0 - mx).powi(2)).sum();
        let sxy: f64 = logs.iter().map(|l| l.2 * (l.0 - mx) * (l.1 - my)).sum();
        let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
        ((my - slope * mx).exp(), slope.exp())
    } else {
        (0.5, 0.9)
    };
    let cost = |a: f64, b: f64| -> f64 { points.iter().zip(&w).map(|(p, w)| w * (p.1 - off - a * b.powf(p.0)).powi(2)).sum() };
    let mut lambda = 1e-3;
    let mut jtj = Matrix2::<f64>::zeros();
    for _ in 0..500 {
        jtj = Matrix2::zeros();
        let mut jtr = Vector2::<f64>::zeros();
        for (p, wi) in points.iter().zip(&w) {
            let bn = b.powf(p.0);
            let j = Vector2::new(bn, if p.0 == 0.0 { 0.0 } else { a * p.0 * b.powf(p.0 - 1.0) });
            let r = p.1 - off - a * bn;
            jtj += j * j.transpose() * *wi;
            jtr += j * (r * wi);
        }
        let c0 = cost(a, b);
        let mut damped = jtj;
        damped[(0, 0)] *= 1.0 + lambda;
        damped[(1, 1)] *= 1.0 + lambda;
        let Some(step) = damped.lu().solve(&jtr) else { break };
        let (na, nb) = (a + step[0], b + step[1]);
        if nb > 0.0 && cost(na, nb) <= c0 {
            a = na;
            b = nb;
            lambda = (lambda * 0.3).max(1e-12);
            if step.norm() < 1e-14 * (1.0 + a.abs() + b.abs()) {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    let cov = jtj.try_inverse().ok_or_else(|| Error::Fit("singular extrapolation normal matrix".into()))?;
    let mut fit = ExtrapolationFit {
        model,
        a,
        b,
        covariance: [[cov[(0, 0)], cov[(0, 1)]], [cov[(1, 0)], cov[(1, 1)]]],
        n_max: None,
        decaying: b < 1.0,
    };
    if fit.decaying {
        let mut best = None;
        for n in 0..=1000u32 {
            let nf = n as f64;
            if fit.predict(nf) - fit.sigma(nf) > 0.5 {
                best = Some(n);
            } else if n > 0 && best.is_some() {
                break;
            }
        }
        fit.n_max = best;
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn readout_phase_maps_plus_to_bright() {
        for n in 2..=4 {
            for k in 1..=n {
                let alpha = quantum::mk_phase(k, n, 0);
                let plus = Vector2::new(Complex64::from(1.0), Complex64::from_polar(1.0, alpha)) / Complex64::from(2f64.sqrt());
                let out = rotation_matrix(FRAC_PI_2, spin_readout_phase(k, n)) * plus;
                assert!(out[0].norm() < 1e-12);
                let out = rotation_matrix(FRAC_PI_2, spin_readout_phase(k, n) + PI) * plus;
                assert!(out[1].norm() < 1e-12);
            }
        }
    }

    #[test]
    fn prepare_pulse_gives_minus_superposition() {
        let v = rotation_matrix(FRAC_PI_2, protocol::PREPARE_PHASE) * Vector2::new(Complex64::from(1.0), C0);
        assert_abs_diff_eq!(v[0].re, 2f64.sqrt() / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v[1].re, -(2f64.sqrt()) / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn ideal_shots_always_accepted_and_correlated() {
        let ctx = TrajectoryContext::new(&ScenarioConfig::ideal()).unwrap();
        let seq = protocol::build_ghz_sequence(2, &TimingConfig::default()).unwrap();
        let mut counts = [0usize; 2];
        for i in 0..400 {
            let mut rng = shot_rng(1, 0, i);
            let r = run_trajectory(&seq, &ctx, &MeasurementSetting::z(), &mut rng);
            assert_abs_diff_eq!(r.weight, 1.0, epsilon = 1e-12);
            assert_eq!(shot_value(Role::Z, &r, 2), 1.0);
            counts[r.photons as usize] += 1;
        }
        assert!(counts[0] > 150 && counts[1] > 150);
    }

    #[test]
    fn flip_in_first_pi_rejects_or_doubles() {
        let ctx = TrajectoryContext::new(&ScenarioConfig::ideal()).unwrap();
        let mut s = JointState::new(1, true);
        s.rotate(FRAC_PI_2, protocol::PREPARE_PHASE);
        channels::apply_excitation(&mut s, 0, Bin::Early, &ctx.probs, &mut shot_rng(0, 0, 0));
        // Replace the π by a forced spin flip back to the emitting state.
        let mut rng = shot_rng(2, 0, 0);
        s.collapse_random(&mut rng);
        let was_emitting = s.branches[0].record != 0;
        s.set_spin(false);
        channels::apply_excitation(&mut s, 0, Bin::Late, &ctx.probs, &mut rng);
        let (rec, _) = measure(&s, &MeasurementSetting::z(), 1.0, &mut rng);
        if was_emitting {
            assert_abs_diff_eq!(rec.weight, 2.0, epsilon = 1e-12);
        } else {
            assert_abs_diff_eq!(rec.weight, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn extrapolation_round_trip() {
        let pts: Vec<(f64, f64, f64)> = (1..=4).map(|n| (n as f64, 0.5 + 0.5 * 0.9f64.powi(n), 0.01)).collect();
        let f = extrapolate(&pts, ExtrapolationModel::Offset).unwrap();
        assert_abs_diff_eq!(f.a, 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(f.b, 0.9, epsilon = 1e-9);
        assert!(extrapolate(&pts[..2], ExtrapolationModel::Offset).is_err());
    }

    #[test]
    fn oracle_values() {
        assert_abs_diff_eq!(analytic_oracle(OracleChannel::Cyclicity { c: 36.0 }, 2).unwrap(), 1.0 - 1.5 / 74.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            analytic_oracle(OracleChannel::Dephasing { gamma_d: 0.069, gamma: 4.255 }, 2).unwrap(),
            0.9691,
            epsilon = 1e-4
        );
        assert_abs_diff_eq!(analytic_oracle(OracleChannel::SpinFlip { q: 34.0 }, 2).unwrap(), 0.936, epsilon = 1e-3);
        assert_abs_diff_eq!(analytic_oracle(OracleChannel::Readout { f_r: 0.98 }, 5).unwrap(), 0.97, epsilon = 1e-12);
    }
}
