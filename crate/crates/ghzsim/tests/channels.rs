use std::f64::consts::PI;

use approx::assert_abs_diff_eq;
use ghzsim::bloch::PulseShape;
use ghzsim::channels::*;
use ghzsim::mc::{run_trajectory, TrajectoryContext};
use ghzsim::protocol::{self, MeasurementSetting, PhotonBasis, SpinBasis, TimingConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn presets_golden() {
    let rows = [
        ("inas-current", 34.0, 0.98, -2.0, 10.0, 0.7 * PI, true),
        ("inas-optimized", 36.0, 0.99, 0.0, 30.0, PI, true),
        ("gaas", 68.0, 0.99, 0.0, 30.0, PI, false),
    ];
    for (name, q, fr, det, split, area, nuc) in rows {
        let s = ScenarioConfig::preset(name).unwrap();
        assert_eq!(s.name, name);
        assert_abs_diff_eq!(1.0 / s.gamma, 0.235, epsilon = 1e-12);
        assert_eq!(s.cyclicity, 36.0);
        assert_eq!(s.q_factor, q);
        assert_eq!(s.readout_fidelity, fr);
        assert_eq!(s.init_fidelity, 0.99);
        assert_eq!(s.dephasing_rate, 0.069);
        assert_eq!(s.laser_detuning_ghz, det);
        assert_eq!(s.cycling_splitting_ghz, split);
        assert_eq!(s.pulse.shape, PulseShape::Gaussian);
        assert_abs_diff_eq!(s.pulse.area, area, epsilon = 1e-15);
        assert_eq!(s.pulse.fwhm_ps, 30.0);
        assert_eq!(s.pulse.width_of, PulseWidth::Intensity);
        assert_eq!(s.nuclear_noise_enabled, nuc);
        assert_eq!(s.channels, Channels::ALL);
        s.validate().unwrap();
    }
    assert!(ScenarioConfig::preset("nope").is_err());
}

#[test]
fn derived_probabilities() {
    assert_abs_diff_eq!(spin_flip_probability(34.0).unwrap(), 0.5 * (1.0 - (-1.0f64 / 34.0).exp()), epsilon = 1e-15);
    assert_abs_diff_eq!(spin_flip_probability(68.0).unwrap(), 0.0073, epsilon = 5e-5);
    assert!(spin_flip_probability(0.0).is_err());
    let g = 1.0 / 0.235;
    assert_abs_diff_eq!(derive_dephasing_rate(0.968, g).unwrap(), 0.069, epsilon = 0.002);
    assert_abs_diff_eq!(ScenarioConfig::inas_current().p_raman(), 1.0 / 37.0, epsilon = 1e-15);
}

#[test]
fn validation_rejects_out_of_range() {
    let mut s = ScenarioConfig::inas_current();
    s.readout_fidelity = 1.2;
    assert!(s.validate().is_err());
    let mut s = ScenarioConfig::inas_current();
    s.dephasing_rate = -0.1;
    assert!(s.validate().is_err());
    let mut s = ScenarioConfig::inas_current();
    s.pulse.fwhm_ps = 0.0;
    assert!(s.validate().is_err());
}

#[test]
fn field_width_shortens_intensity_duration() {
    let mut p = ScenarioConfig::inas_current().pulse;
    assert_abs_diff_eq!(p.intensity_duration_ns(), 0.030, epsilon = 1e-15);
    p.width_of = PulseWidth::Field;
    assert_abs_diff_eq!(p.intensity_duration_ns(), 0.030 / 2f64.sqrt(), epsilon = 1e-15);
}

fn settings(n: usize) -> Vec<MeasurementSetting> {
    let mut v = vec![MeasurementSetting::z()];
    for k in 1..=n {
        v.push(MeasurementSetting {
            photon: PhotonBasis::Equatorial(protocol::wrap_angle(k as f64 * PI / n as f64)),
            spin: SpinBasis::Equatorial(protocol::wrap_angle(ghzsim::mc::spin_readout_phase(k, n))),
        });
    }
    v
}

/// Every channel switched on but at its no-error parameter value.
fn limit_scenario() -> ScenarioConfig {
    let mut s = ScenarioConfig::ideal();
    s.channels = Channels { offres: false, nuclear: false, reexcitation: false, ..Channels::ALL };
    s.cyclicity = f64::INFINITY;
    s.q_factor = f64::INFINITY;
    s.readout_fidelity = 1.0;
    s.init_fidelity = 1.0;
    s.dephasing_rate = 0.0;
    s
}

#[test]
fn no_error_limit_is_identity_per_trajectory() {
    let timing = TimingConfig::default();
    let ideal = TrajectoryContext::new(&ScenarioConfig::ideal()).unwrap();
    let limit = TrajectoryContext::new(&limit_scenario()).unwrap();
    for n in 2..=4 {
        let base = protocol::build_ghz_sequence(n, &timing).unwrap();
        for setting in settings(n) {
            let seq = protocol::apply_setting(&base, setting.spin, &timing).unwrap();
            for shot in 0..300u64 {
                let a = run_trajectory(&seq, &ideal, &setting, &mut ChaCha8Rng::seed_from_u64(shot));
                let b = run_trajectory(&seq, &limit, &setting, &mut ChaCha8Rng::seed_from_u64(shot));
                assert_eq!(a, b);
            }
        }
    }
}

#[test]
fn single_channel_names() {
    for c in ["offres", "off-resonant", "nuclear", "spin-flip", "readout", "dephasing", "cyclicity", "init"] {
        let s = ScenarioConfig::single_channel(c).unwrap();
        let on = [s.channels.offres, s.channels.nuclear, s.channels.spin_flip, s.channels.readout, s.channels.dephasing, s.channels.cyclicity, s.channels.init];
        assert_eq!(on.iter().filter(|x| **x).count(), 1, "{c}");
    }
    assert!(ScenarioConfig::single_channel("gremlins").is_err());
}

#[test]
fn disabled_offres_folds_photons() {
    let o = ghzsim::bloch::ExcitationOutcome { p_zero: 0.1, p_one: 0.8, p_two: 0.1, residual_excited: 0.0 };
    let on = EmissionProbs::from_bloch(&o, 0.05, 0.0, true, true);
    assert_eq!((on.p_one, on.p_two, on.p_wrong), (0.8, 0.1, 0.05));
    let no_re = EmissionProbs::from_bloch(&o, 0.05, 0.0, true, false);
    assert_abs_diff_eq!(no_re.p_one, 0.9, epsilon = 1e-15);
    assert_eq!((no_re.p_two, no_re.p_wrong), (0.0, 0.05));
    let off = EmissionProbs::from_bloch(&o, 0.05, 0.0, false, true);
    assert_eq!((off.p_two, off.p_wrong), (0.0, 0.0));
}
