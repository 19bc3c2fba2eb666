use std::f64::consts::{FRAC_PI_2, PI};

use ghzsim::protocol::*;
use proptest::prelude::*;

fn rotations(seq: &[PulseEvent]) -> Vec<(f64, f64, RotationRole)> {
    seq.iter()
        .filter_map(|e| match e.kind {
            PulseKind::Rotation { angle, role, .. } => Some((e.start_time, angle, role)),
            _ => None,
        })
        .collect()
}

#[test]
fn three_qubit_sequence_fits_period() {
    let t = TimingConfig::default();
    let seq = build_ghz_sequence(3, &t).unwrap();
    let d = sequence_duration(&seq);
    assert!(d <= 1800.0, "{d}");
    assert!(build_ghz_sequence(8, &t).is_err());
    assert!(build_ghz_sequence(1, &t).is_err());
}

#[test]
fn bad_timing_is_config_error() {
    let t = TimingConfig { t_pi: 40.0, ..Default::default() };
    assert!(matches!(build_ghz_sequence(3, &t), Err(ghzsim::Error::Config(_))));
    let t = TimingConfig { readout_duration: -1.0, ..Default::default() };
    assert!(build_ghz_sequence(3, &t).is_err());
}

#[test]
fn spin_flip_exposure_counts_protocol_pi_only() {
    let t = TimingConfig::default();
    for n in 2..=6 {
        let seq = build_ghz_sequence(n, &t).unwrap();
        let protocol = rotations(&seq).iter().filter(|r| r.2 == RotationRole::Protocol).count();
        assert_eq!(protocol, 2 * n - 3);
        assert!((total_rotation_time(&seq) - (2 * n - 3) as f64 * t.t_pi).abs() < 1e-12);
    }
}

#[test]
fn settings_rewrite_final_rotation() {
    let t = TimingConfig::default();
    let seq = build_ghz_sequence(3, &t).unwrap();
    let eq = apply_setting(&seq, SpinBasis::Equatorial(1.0), &t).unwrap();
    let last = rotations(&eq).last().copied().unwrap();
    assert_eq!(last.1, FRAC_PI_2);
    assert_eq!(rotations(&eq).len(), rotations(&seq).len());
    let minus = apply_setting(&seq, SpinBasis::ZMinus, &t).unwrap();
    assert_eq!(rotations(&minus).len(), rotations(&seq).len() + 1);
    validate_sequence(&minus).unwrap();
    assert_eq!(apply_setting(&seq, SpinBasis::ZPlus, &t).unwrap(), seq);
}

#[test]
fn echo_sequences() {
    let s = build_echo_sequence(10.0, 1, 0.5, 4.0).unwrap();
    let r = rotations(&s);
    assert_eq!(r.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0.0, 10.0, 20.0]);
    let s = build_echo_sequence(10.0, 3, 0.0, 4.0).unwrap();
    assert_eq!(rotations(&s).iter().map(|x| x.0).collect::<Vec<_>>(), vec![0.0, 10.0, 30.0, 50.0, 60.0]);
    assert!(build_echo_sequence(10.0, 2, 0.0, 4.0).is_err());
    assert!(build_echo_sequence(0.0, 1, 0.0, 4.0).is_err());
}

#[test]
fn measurement_setting_range() {
    assert!(MeasurementSetting { photon: PhotonBasis::Equatorial(2.0 * PI), spin: SpinBasis::ZPlus }.validate().is_err());
    assert!(MeasurementSetting { photon: PhotonBasis::Equatorial(0.0), spin: SpinBasis::Equatorial(6.0) }.validate().is_ok());
}

#[test]
fn text_parse_errors_carry_line() {
    let err = from_text("rotation 0.0 angle=1 phase=0 duration=2 role=prepare\nbogus 1.0\n").unwrap_err();
    assert!(matches!(err, ghzsim::Error::Parse { line: 2, .. }), "{err:?}");
}

proptest! {
    #[test]
    fn ghz_structure(n in 2usize..=7) {
        let t = TimingConfig::default();
        let seq = build_ghz_sequence(n, &t).unwrap();
        validate_sequence(&seq).unwrap();
        let r = rotations(&seq);
        let pis = r.iter().filter(|x| (x.1 - PI).abs() < 1e-12).count();
        let halves = r.iter().filter(|x| (x.1 - FRAC_PI_2).abs() < 1e-12).count();
        let exc = seq.iter().filter(|e| matches!(e.kind, PulseKind::Excitation { .. })).count();
        prop_assert_eq!(pis, 2 * (n - 1));
        prop_assert_eq!(halves, 1);
        prop_assert_eq!(exc, 2 * (n - 1));
        let gaps: Vec<f64> = r.windows(2).map(|w| w[1].0 - w[0].0).collect();
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        let var = gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / gaps.len() as f64;
        prop_assert!(var < 1e-18);
    }

    #[test]
    fn text_round_trip(n in 2usize..=7, spacing in 10.0f64..40.0) {
        let t = TimingConfig { echo_spacing: spacing, ..Default::default() };
        let seq = build_ghz_sequence(n, &t);
        prop_assume!(seq.is_ok());
        let seq = seq.unwrap();
        prop_assert_eq!(from_text(&to_text(&seq)).unwrap(), seq);
    }

    #[test]
    fn wrap_angle_range(x in -1e4f64..1e4) {
        let w = wrap_angle(x);
        prop_assert!((0.0..2.0 * PI).contains(&w));
        prop_assert!(((x - w) / (2.0 * PI) - ((x - w) / (2.0 * PI)).round()).abs() < 1e-9);
    }
}
