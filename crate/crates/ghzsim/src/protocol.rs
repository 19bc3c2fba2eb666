//! Timed pulse sequences for GHZ generation, spin echo and readout bases.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// What a rotation is for. Only protocol π pulses take part in the
/// laser-induced spin-flip channel in the Monte Carlo engine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RotationRole {
    Prepare,
    Protocol,
    Readout,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PulseKind {
    Rotation { angle: f64, phase: f64, duration: f64, role: RotationRole },
    Excitation { pulse_id: usize },
    ReadoutPump { duration: f64 },
    InitPump { duration: f64 },
    NarrowingBlock { raman_duration: f64, pump_duration: f64 },
}

impl PulseKind {
    pub fn duration(&self) -> f64 {
        match *self {
            PulseKind::Rotation { duration, .. } => duration,
            PulseKind::Excitation { .. } => 0.0,
            PulseKind::ReadoutPump { duration } | PulseKind::InitPump { duration } => duration,
            PulseKind::NarrowingBlock { raman_duration, pump_duration } => raman_duration.max(pump_duration),
        }
    }

    pub fn is_rotation(&self) -> bool {
        matches!(self, PulseKind::Rotation { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseEvent {
    pub kind: PulseKind,
    pub start_time: f64,
}

impl PulseEvent {
    pub fn end_time(&self) -> f64 {
        self.start_time + self.kind.duration()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NarrowingTiming {
    pub raman: f64,
    pub pump: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimingConfig {
    pub t_pi: f64,
    pub echo_spacing: f64,
    pub readout_duration: f64,
    pub sequence_period: f64,
    pub repetition_rate: f64,
    pub narrowing: NarrowingTiming,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            t_pi: 4.0,
            echo_spacing: 29.0,
            readout_duration: 200.0,
            sequence_period: 1800.0,
            repetition_rate: 5.6e5,
            narrowing: NarrowingTiming { raman: 1100.0, pump: 1200.0 },
        }
    }
}

impl TimingConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.t_pi,
            self.echo_spacing,
            self.readout_duration,
            self.sequence_period,
            self.repetition_rate,
            self.narrowing.raman,
            self.narrowing.pump,
        ];
        if all.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Config("all timing values must be positive".into()));
        }
        if self.t_pi >= self.echo_spacing {
            return Err(Error::Config("π pulse longer than the echo spacing".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PhotonBasis {
    Z,
    Equatorial(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SpinBasis {
    ZPlus,
    ZMinus,
    /// Readout π/2 with this phase replaces the final π.
    Equatorial(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSetting {
    pub photon: PhotonBasis,
    pub spin: SpinBasis,
}

impl MeasurementSetting {
    pub fn z() -> Self {
        Self { photon: PhotonBasis::Z, spin: SpinBasis::ZPlus }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |t: f64| (0.0..2.0 * PI).contains(&t);
        let photon_ok = match self.photon {
            PhotonBasis::Z => true,
            PhotonBasis::Equatorial(t) => ok(t),
        };
        let spin_ok = match self.spin {
            SpinBasis::Equatorial(t) => ok(t),
            _ => true,
        };
        if photon_ok && spin_ok {
            Ok(())
        } else {
            invalid("basis angles must lie in [0, 2π)")
        }
    }
}

pub fn wrap_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(2.0 * PI);
    if t >= 2.0 * PI {
        0.0
    } else {
        t
    }
}

fn rotation(angle: f64, phase: f64, t_pi: f64, role: RotationRole, start: f64) -> PulseEvent {
    PulseEvent {
        kind: PulseKind::Rotation { angle, phase, duration: t_pi * angle / PI, role },
        start_time: start,
    }
}

/// Phase of the preparation π/2 that takes |↑⟩ to (|↑⟩ − |↓⟩)/√2.
pub const PREPARE_PHASE: f64 = 3.0 * FRAC_PI_2;

/// π/2, then n−1 blocks of [excite, π, excite, π], framed by the narrowing
/// block and the readout pump. Rotations sit on a grid of `echo_spacing`,
/// excitations midway between them. The final π only maps the spin for
/// readout.
pub fn build_ghz_sequence(n: usize, timing: &TimingConfig) -> Result<Vec<PulseEvent>> {
    if n < 2 {
        return invalid("GHZ sequence needs n >= 2");
    }
    timing.validate()?;
    let t0 = timing.narrowing.raman.max(timing.narrowing.pump);
    let ts = timing.echo_spacing;
    let mut seq = vec![
        PulseEvent {
            kind: PulseKind::NarrowingBlock { raman_duration: timing.narrowing.raman, pump_duration: timing.narrowing.pump },
            start_time: 0.0,
        },
        rotation(FRAC_PI_2, PREPARE_PHASE, timing.t_pi, RotationRole::Prepare, t0),
    ];
    let n_pi = 2 * (n - 1);
    for j in 0..n_pi {
        let base = t0 + j as f64 * ts;
        seq.push(PulseEvent { kind: PulseKind::Excitation { pulse_id: j }, start_time: base + 0.5 * ts });
        let role = if j + 1 == n_pi { RotationRole::Readout } else { RotationRole::Protocol };
        seq.push(rotation(PI, 0.0, timing.t_pi, role, base + ts));
    }
    let last_end = seq.last().map(PulseEvent::end_time).unwrap_or(0.0);
    seq.push(PulseEvent { kind: PulseKind::ReadoutPump { duration: timing.readout_duration }, start_time: last_end });
    check_period(&seq, timing)?;
    Ok(seq)
}

fn check_period(seq: &[PulseEvent], timing: &TimingConfig) -> Result<()> {
    let total = sequence_duration(seq);
    if total > timing.sequence_period {
        return Err(Error::Config(format!(
            "sequence length {total:.1} ns exceeds period {:.1} ns",
            timing.sequence_period
        )));
    }
    Ok(())
}

pub fn sequence_duration(seq: &[PulseEvent]) -> f64 {
    seq.iter().map(PulseEvent::end_time).fold(0.0, f64::max)
}

/// Rewrites the trailing readout rotation for a spin basis.
pub fn apply_setting(seq: &[PulseEvent], spin: SpinBasis, timing: &TimingConfig) -> Result<Vec<PulseEvent>> {
    let mut out = seq.to_vec();
    let last_rot = out
        .iter()
        .rposition(|e| e.kind.is_rotation())
        .ok_or_else(|| Error::InvalidArgument("sequence has no rotation".into()))?;
    let start = out[last_rot].start_time;
    match spin {
        SpinBasis::ZPlus => {}
        SpinBasis::ZMinus => {
            out.insert(last_rot + 1, rotation(PI, 0.0, timing.t_pi, RotationRole::Readout, start + timing.echo_spacing));
        }
        SpinBasis::Equatorial(phase) => {
            out[last_rot] = rotation(FRAC_PI_2, phase, timing.t_pi, RotationRole::Readout, start);
        }
    }
    let mut t = 0.0f64;
    for e in out.iter_mut() {
        if let PulseKind::ReadoutPump { .. } = e.kind {
            e.start_time = t;
        }
        t = t.max(e.end_time());
    }
    check_period(&out, timing)?;
    Ok(out)
}

/// π/2 at 0, `n_pi` π pulses at spacing, 3·spacing, ..., final π/2 at
/// 2·n_pi·spacing carrying `phase_last`.
pub fn build_echo_sequence(spacing: f64, n_pi: usize, phase_last: f64, t_pi: f64) -> Result<Vec<PulseEvent>> {
    if !(spacing > 0.0) {
        return invalid("echo spacing must be positive");
    }
    if n_pi != 1 && n_pi != 3 {
        return invalid(format!("unsupported π-pulse count {n_pi}"));
    }
    let mut seq = vec![rotation(FRAC_PI_2, 0.0, t_pi, RotationRole::Prepare, 0.0)];
    for j in 0..n_pi {
        seq.push(rotation(PI, 0.0, t_pi, RotationRole::Protocol, spacing * (1 + 2 * j) as f64));
    }
    seq.push(rotation(FRAC_PI_2, phase_last, t_pi, RotationRole::Readout, 2.0 * n_pi as f64 * spacing));
    Ok(seq)
}

/// Rotation time entering the spin-flip coherence factor: protocol
/// rotations only.
pub fn total_rotation_time(seq: &[PulseEvent]) -> f64 {
    seq.iter()
        .filter_map(|e| match e.kind {
            PulseKind::Rotation { duration, role: RotationRole::Protocol, .. } => Some(duration),
            _ => None,
        })
        .sum()
}

pub fn validate_sequence(seq: &[PulseEvent]) -> Result<()> {
    for w in seq.windows(2) {
        if w[1].start_time < w[0].start_time {
            return invalid("events not sorted by start time");
        }
    }
    let optical: Vec<&PulseEvent> = seq.iter().filter(|e| !matches!(e.kind, PulseKind::NarrowingBlock { .. })).collect();
    for w in optical.windows(2) {
        if w[1].start_time < w[0].end_time() - 1e-9 {
            return invalid(format!("overlapping drive events at {} ns", w[1].start_time));
        }
    }
    if seq.iter().any(|e| e.start_time < 0.0) {
        return invalid("negative start time");
    }
    Ok(())
}

fn role_name(r: RotationRole) -> &'static str {
    match r {
        RotationRole::Prepare => "prepare",
        RotationRole::Protocol => "protocol",
        RotationRole::Readout => "readout",
    }
}

/// One event per line: `kind start_ns key=value ...`.
pub fn to_text(seq: &[PulseEvent]) -> String {
    let mut s = String::new();
    for e in seq {
        let t = e.start_time;
        let _ = match e.kind {
            PulseKind::Rotation { angle, phase, duration, role } => writeln!(
                s,
                "rotation {t:?} angle={angle:?} phase={phase:?} duration={duration:?} role={}",
                role_name(role)
            ),
            PulseKind::Excitation { pulse_id } => writeln!(s, "excitation {t:?} id={pulse_id}"),
            PulseKind::ReadoutPump { duration } => writeln!(s, "readout {t:?} duration={duration:?}"),
            PulseKind::InitPump { duration } => writeln!(s, "init {t:?} duration={duration:?}"),
            PulseKind::NarrowingBlock { raman_duration, pump_duration } => {
                writeln!(s, "narrowing {t:?} raman={raman_duration:?} pump={pump_duration:?}")
            }
        };
    }
    s
}

pub fn from_text(text: &str) -> Result<Vec<PulseEvent>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let perr = |msg: String| Error::Parse { line: i + 1, msg };
        let mut parts = line.split_whitespace();
        let kind = parts.next().unwrap_or_default();
        let start: f64 = parts
            .next()
            .ok_or_else(|| perr("missing start time".into()))?
            .parse()
            .map_err(|_| perr("bad start time".into()))?;
        let mut kv = std::collections::HashMap::new();
        for p in parts {
            let (k, v) = p.split_once('=').ok_or_else(|| perr(format!("expected key=value, got {p}")))?;
            kv.insert(k, v);
        }
        let num = |k: &str| -> Result<f64> {
            kv.get(k)
                .ok_or_else(|| perr(format!("missing {k}")))?
                .parse()
                .map_err(|_| perr(format!("bad number for {k}")))
        };
        let kind = match kind {
            "rotation" => {
                let role = match kv.get("role").copied().unwrap_or("protocol") {
                    "prepare" => RotationRole::Prepare,
                    "protocol" => RotationRole::Protocol,
                    "readout" => RotationRole::Readout,
                    other => return Err(perr(format!("unknown role {other}"))),
                };
                PulseKind::Rotation { angle: num("angle")?, phase: num("phase")?, duration: num("duration")?, role }
            }
            "excitation" => PulseKind::Excitation { pulse_id: num("id")? as usize },
            "readout" => PulseKind::ReadoutPump { duration: num("duration")? },
            "init" => PulseKind::InitPump { duration: num("duration")? },
            "narrowing" => PulseKind::NarrowingBlock { raman_duration: num("raman")?, pump_duration: num("pump")? },
            other => return Err(perr(format!("unknown event kind {other}"))),
        };
        out.push(PulseEvent { kind, start_time: start });
    }
    Ok(out)
}
