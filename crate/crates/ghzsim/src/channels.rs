//! Stochastic error channels acting on a trajectory, plus scenario presets.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bloch::{self, ExcitationOutcome, PulseShape, GAMMA_DEFAULT};
use crate::error::{invalid, Error, Result};
use crate::mc::{Bin, JointState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseConfig {
    pub shape: PulseShape,
    /// radians
    pub area: f64,
    /// FWHM (Gaussian) or full width (Square), ps.
    pub fwhm_ps: f64,
    /// Whether a Gaussian FWHM refers to the intensity or the field envelope.
    #[serde(default)]
    pub width_of: PulseWidth,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PulseWidth {
    #[default]
    Intensity,
    Field,
}

impl PulseConfig {
    /// Intensity FWHM (or full square width) in ns.
    pub fn intensity_duration_ns(&self) -> f64 {
        match (self.shape, self.width_of) {
            (PulseShape::Gaussian, PulseWidth::Field) => self.fwhm_ps * 1e-3 / 2f64.sqrt(),
            _ => self.fwhm_ps * 1e-3,
        }
    }
}

/// Which error sources are active. A disabled channel is an exact identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channels {
    pub offres: bool,
    pub nuclear: bool,
    pub spin_flip: bool,
    pub readout: bool,
    pub dephasing: bool,
    pub cyclicity: bool,
    pub init: bool,
    /// Surplus photons from a second excitation within the pulse. Only
    /// effective together with `offres`.
    #[serde(default = "on")]
    pub reexcitation: bool,
}

fn on() -> bool {
    true
}

impl Channels {
    pub const ALL: Channels =
        Channels { offres: true, nuclear: true, spin_flip: true, readout: true, dephasing: true, cyclicity: true, init: true, reexcitation: true };
    pub const NONE: Channels =
        Channels { offres: false, nuclear: false, spin_flip: false, readout: false, dephasing: false, cyclicity: false, init: false, reexcitation: false };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub gamma: f64,
    pub cyclicity: f64,
    pub q_factor: f64,
    pub readout_fidelity: f64,
    pub init_fidelity: f64,
    pub dephasing_rate: f64,
    pub laser_detuning_ghz: f64,
    pub cycling_splitting_ghz: f64,
    pub pulse: PulseConfig,
    pub nuclear_noise_enabled: bool,
    /// Deterministic single-photon emission, bypassing the Bloch solver.
    pub ideal_excitation: bool,
    pub channels: Channels,
    pub b_field: f64,
}

impl ScenarioConfig {
    fn base(name: &str) -> Self {
        Self {
            name: name.to_string(),
            gamma: GAMMA_DEFAULT,
            cyclicity: 36.0,
            q_factor: 34.0,
            readout_fidelity: 0.98,
            init_fidelity: 0.99,
            dephasing_rate: 0.069,
            laser_detuning_ghz: -2.0,
            cycling_splitting_ghz: 10.0,
            pulse: PulseConfig { shape: PulseShape::Gaussian, area: 0.7 * PI, fwhm_ps: 30.0, width_of: PulseWidth::Intensity },
            nuclear_noise_enabled: true,
            ideal_excitation: false,
            channels: Channels::ALL,
            b_field: 4.0,
        }
    }

    pub fn inas_current() -> Self {
        Self::base("inas-current")
    }

    pub fn inas_optimized() -> Self {
        Self {
            q_factor: 36.0,
            readout_fidelity: 0.99,
            laser_detuning_ghz: 0.0,
            cycling_splitting_ghz: 30.0,
            pulse: PulseConfig { shape: PulseShape::Gaussian, area: PI, fwhm_ps: 30.0, width_of: PulseWidth::Intensity },
            ..Self::base("inas-optimized")
        }
    }

    pub fn gaas() -> Self {
        Self { q_factor: 68.0, nuclear_noise_enabled: false, ..Self { name: "gaas".into(), ..Self::inas_optimized() } }
    }

    pub fn ideal() -> Self {
        Self {
            pulse: PulseConfig { shape: PulseShape::Gaussian, area: PI, fwhm_ps: 30.0, width_of: PulseWidth::Intensity },
            laser_detuning_ghz: 0.0,
            nuclear_noise_enabled: false,
            ideal_excitation: true,
            channels: Channels::NONE,
            ..Self::base("ideal")
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "inas-current" => Ok(Self::inas_current()),
            "inas-optimized" => Ok(Self::inas_optimized()),
            "gaas" => Ok(Self::gaas()),
            "ideal" => Ok(Self::ideal()),
            other => Err(Error::Config(format!("unknown preset {other}"))),
        }
    }

    pub const PRESETS: [&'static str; 4] = ["inas-current", "inas-optimized", "gaas", "ideal"];

    /// Ideal excitation with a single error channel switched on.
    pub fn single_channel(channel: &str) -> Result<Self> {
        let mut s = Self::ideal();
        s.name = format!("only-{channel}");
        match channel {
            "offres" | "off-resonant" => s.channels.offres = true,
            "nuclear" => {
                s.channels.nuclear = true;
                s.nuclear_noise_enabled = true;
            }
            "spin-flip" => s.channels.spin_flip = true,
            "readout" => s.channels.readout = true,
            "dephasing" => s.channels.dephasing = true,
            "cyclicity" => s.channels.cyclicity = true,
            "init" => s.channels.init = true,
            other => return Err(Error::Config(format!("unknown channel {other}"))),
        }
        if s.channels.offres {
            s.ideal_excitation = false;
        }
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [self.gamma, self.dephasing_rate, self.b_field, self.pulse.fwhm_ps];
        if rates.iter().any(|r| !(*r >= 0.0) || !r.is_finite()) {
            return Err(Error::Config("rates must be finite and non-negative".into()));
        }
        // C = Q = ∞ are the error-free limits.
        if !(self.cyclicity >= 0.0) || !(self.q_factor > 0.0) {
            return Err(Error::Config("cyclicity and Q must be positive".into()));
        }
        for f in [self.readout_fidelity, self.init_fidelity] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config("fidelities must lie in [0, 1]".into()));
            }
        }
        if !(self.pulse.area >= 0.0) || !(self.pulse.fwhm_ps > 0.0) {
            return Err(Error::Config("pulse area and width must be positive".into()));
        }
        Ok(())
    }

    pub fn nuclear_active(&self) -> bool {
        self.channels.nuclear && self.nuclear_noise_enabled
    }

    pub fn p_flip(&self) -> f64 {
        if self.channels.spin_flip {
            spin_flip_probability(self.q_factor).unwrap_or(0.0)
        } else {
            0.0
        }
    }

    pub fn p_raman(&self) -> f64 {
        if self.channels.cyclicity {
            1.0 / (1.0 + self.cyclicity)
        } else {
            0.0
        }
    }

    pub fn p_dephase(&self) -> f64 {
        if self.channels.dephasing {
            dephasing_probability(self.gamma, self.dephasing_rate)
        } else {
            0.0
        }
    }

    pub fn readout(&self) -> f64 {
        if self.channels.readout {
            self.readout_fidelity
        } else {
            1.0
        }
    }

    pub fn init(&self) -> f64 {
        if self.channels.init {
            self.init_fidelity
        } else {
            1.0
        }
    }

    /// Per-excitation emission probabilities seen by the trajectories.
    pub fn emission(&self) -> Result<EmissionProbs> {
        let raman = self.p_raman();
        if self.ideal_excitation {
            return Ok(EmissionProbs { p_zero: 0.0, p_one: 1.0, p_two: 0.0, p_wrong: 0.0, p_raman: raman });
        }
        let o = bloch::offres_excitation(
            self.gamma,
            self.laser_detuning_ghz,
            self.cycling_splitting_ghz,
            self.pulse.shape,
            self.pulse.area,
            self.pulse.intensity_duration_ns(),
        )?;
        Ok(EmissionProbs::from_bloch(&o.target, o.p_wrong, raman, self.channels.offres, self.channels.reexcitation))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionProbs {
    pub p_zero: f64,
    pub p_one: f64,
    pub p_two: f64,
    pub p_wrong: f64,
    pub p_raman: f64,
}

impl EmissionProbs {
    /// With `offres` off the unwanted transition is dark. A second photon is
    /// folded into the first unless re-excitation is on.
    pub fn from_bloch(target: &ExcitationOutcome, p_wrong: f64, p_raman: f64, offres: bool, reexcitation: bool) -> Self {
        let p_zero = target.p_zero.max(0.0);
        let (p_one, p_two) =
            if offres && reexcitation { (target.p_one, target.p_two) } else { (target.p_one + target.p_two, 0.0) };
        Self { p_zero, p_one, p_two, p_wrong: if offres { p_wrong.clamp(0.0, 1.0) } else { 0.0 }, p_raman }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ErrorKind {
    InitFlip,
    ReadoutFlip,
    RamanFlip,
    LaserSpinFlip { repopulated_up: bool },
    PureDephase { phase: f64 },
    WrongPhoton { phase: f64 },
    TwoPhoton,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorEvent {
    pub kind: ErrorKind,
    pub location: usize,
}

pub fn spin_flip_probability(q_factor: f64) -> Result<f64> {
    if !(q_factor > 0.0) {
        return invalid("Q must be positive");
    }
    Ok(0.5 * (1.0 - (-1.0 / q_factor).exp()))
}

pub fn dephasing_probability(gamma: f64, gamma_d: f64) -> f64 {
    if gamma_d == 0.0 {
        0.0
    } else {
        2.0 * gamma_d / (gamma + 2.0 * gamma_d)
    }
}

pub fn derive_dephasing_rate(v_s: f64, gamma: f64) -> Result<f64> {
    if !(v_s > 0.0 && v_s <= 1.0) {
        return invalid("indistinguishability must lie in (0, 1]");
    }
    Ok(gamma * (1.0 / v_s - 1.0) / 2.0)
}

/// Laser-induced spin removal during a π rotation. The electron is lost with
/// probability 2p_f and replaced by a random spin, so it ends up flipped
/// with probability p_f.
pub fn apply_laser_spin_flip<R: Rng>(state: &mut JointState, p_f: f64, rng: &mut R) -> Option<ErrorKind> {
    if p_f <= 0.0 || rng.gen::<f64>() >= 2.0 * p_f {
        return None;
    }
    state.collapse_random(rng);
    let up = rng.gen::<bool>();
    state.set_spin(up);
    Some(ErrorKind::LaserSpinFlip { repopulated_up: up })
}

pub fn apply_pure_dephasing<R: Rng>(state: &mut JointState, p_deph: f64, rng: &mut R) -> Option<ErrorKind> {
    if p_deph <= 0.0 || rng.gen::<f64>() >= p_deph {
        return None;
    }
    let phase = rng.gen::<f64>() * 2.0 * PI;
    state.add_phase(phase);
    Some(ErrorKind::PureDephase { phase })
}

pub fn apply_init_error<R: Rng>(f_int: f64, rng: &mut R) -> bool {
    rng.gen::<f64>() <= f_int
}

pub fn apply_readout_error<R: Rng>(bit: bool, f_r: f64, rng: &mut R) -> bool {
    if rng.gen::<f64>() < 1.0 - f_r {
        !bit
    } else {
        bit
    }
}

/// One optical excitation. |↓⟩ drives the cycling transition and may emit
/// into `bin` of `slot`. With probability `p_wrong` the pulse also excites
/// the unwanted transition; the filtered photon leaves a random phase on
/// the spin. Surplus photons are sampled as jumps; the rest stays coherent.
pub fn apply_excitation<R: Rng>(
    state: &mut JointState,
    slot: usize,
    bin: Bin,
    probs: &EmissionProbs,
    rng: &mut R,
) -> Vec<ErrorKind> {
    let mut events = Vec::new();
    if let Some(k) = apply_offres_dephasing(state, probs.p_wrong, rng) {
        events.push(k);
    }
    events.extend(emit_target(state, slot, bin, probs, rng));
    events
}

pub fn apply_offres_dephasing<R: Rng>(state: &mut JointState, p_wrong: f64, rng: &mut R) -> Option<ErrorKind> {
    if p_wrong <= 0.0 || rng.gen::<f64>() >= p_wrong {
        return None;
    }
    let phase = rng.gen::<f64>() * 2.0 * PI;
    state.add_phase(phase);
    Some(ErrorKind::WrongPhoton { phase })
}

fn emit_target<R: Rng>(state: &mut JointState, slot: usize, bin: Bin, probs: &EmissionProbs, rng: &mut R) -> Option<ErrorKind> {
    let r = probs.p_raman;
    let pop_down = state.spin_population(1);
    let emitted = probs.p_one + probs.p_two;
    let u: f64 = rng.gen();
    let p_raman = r * emitted * pop_down;
    let p_double = probs.p_two * (1.0 - r) * pop_down;
    if u < p_raman {
        state.collapse_to_spin(1);
        state.move_spin(1, 0);
        return Some(ErrorKind::RamanFlip);
    }
    if u < p_raman + p_double {
        state.collapse_to_spin(1);
        state.emit(slot, bin, Complex64::from(1.0), Complex64::from(0.0));
        state.bump_multiplicity(slot, bin);
        return Some(ErrorKind::TwoPhoton);
    }
    state.emit(slot, bin, Complex64::from((probs.p_one * (1.0 - r)).sqrt()), Complex64::from(probs.p_zero.sqrt()));
    state.normalize();
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn flip_probabilities() {
        assert_abs_diff_eq!(spin_flip_probability(34.0).unwrap(), 0.01449, epsilon = 5e-5);
        assert_abs_diff_eq!(spin_flip_probability(68.0).unwrap(), 0.0073, epsilon = 5e-5);
        assert!(spin_flip_probability(1e300).unwrap() < 1e-299);
        assert_abs_diff_eq!(dephasing_probability(4.255, 0.069), 0.0314, epsilon = 1e-4);
        assert_eq!(dephasing_probability(4.255, 0.0), 0.0);
    }

    #[test]
    fn dephasing_rate_round_trip() {
        let g = GAMMA_DEFAULT;
        assert_eq!(derive_dephasing_rate(1.0, g).unwrap(), 0.0);
        let gd = derive_dephasing_rate(0.968, g).unwrap();
        assert_abs_diff_eq!(gd, 0.069, epsilon = 0.002);
        assert_abs_diff_eq!(g / (g + 2.0 * gd), 0.968, epsilon = 1e-12);
        assert!(derive_dephasing_rate(0.0, g).is_err());
        assert!(derive_dephasing_rate(1.1, g).is_err());
    }

    #[test]
    fn presets_match_parameter_table() {
        let c = ScenarioConfig::inas_current();
        assert_eq!((c.cyclicity, c.q_factor, c.readout_fidelity, c.init_fidelity), (36.0, 34.0, 0.98, 0.99));
        assert_eq!((c.laser_detuning_ghz, c.cycling_splitting_ghz, c.pulse.fwhm_ps), (-2.0, 10.0, 30.0));
        assert_abs_diff_eq!(c.pulse.area, 0.7 * PI);
        assert!(c.nuclear_noise_enabled);
        let o = ScenarioConfig::inas_optimized();
        assert_eq!((o.q_factor, o.readout_fidelity, o.laser_detuning_ghz, o.cycling_splitting_ghz), (36.0, 0.99, 0.0, 30.0));
        assert_eq!(o.pulse.area, PI);
        let g = ScenarioConfig::gaas();
        assert_eq!((g.q_factor, g.nuclear_noise_enabled, g.cycling_splitting_ghz), (68.0, false, 30.0));
        for p in ScenarioConfig::PRESETS {
            let s = ScenarioConfig::preset(p).unwrap();
            s.validate().unwrap();
            assert_eq!(s.dephasing_rate, 0.069);
            assert_abs_diff_eq!(1.0 / s.gamma, 0.235, epsilon = 1e-12);
        }
        assert!(ScenarioConfig::preset("nope").is_err());
    }
}
