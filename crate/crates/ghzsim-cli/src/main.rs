mod config;
mod output;

macro_rules! out {
    ($($t:tt)*) => { output::write_stdout(&format!($($t)*)) };
}

macro_rules! outln {
    ($($t:tt)*) => { output::write_stdout(&format!("{}\n", format_args!($($t)*))) };
}

use std::f64::consts::PI;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use ghzsim::channels::ScenarioConfig;
use ghzsim::mc::{self, ExtrapolationModel, OracleChannel};
use ghzsim::{bloch, fits, noise};
use serde_json::json;

use output::{csv_row, Manifest, Sink};

#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "ghzsim", version, about = "Time-bin GHZ state simulator and analysis toolkit")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory; results go to stdout only when omitted.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    /// Built-in preset, or scenario name inside --config.
    #[arg(long)]
    preset: Option<String>,
    /// TOML scenario file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Field override, e.g. `--set q_factor=40 --set pulse.area=2.2`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ScenarioArgs {
    fn load(&self) -> anyhow::Result<ScenarioConfig> {
        config::load_scenario(self.preset.as_deref(), self.config.as_deref(), &self.overrides)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the GHZ fidelity of a scenario.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 10_000)]
        shots: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Leave-one-out infidelity of each error source.
    ErrorBudget {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 10_000)]
        shots: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Photon loss budget from a `stage,efficiency[,group]` CSV.
    Budget {
        #[arg(long)]
        file: PathBuf,
    },
    /// Spin-echo visibility curve under nuclear noise.
    Echo {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// start:stop:count in ns
        #[arg(long, default_value = "1:60:60")]
        spacings: String,
        /// Refocusing π pulses: 1 (Hahn) or 3 (five-pulse).
        #[arg(long, default_value_t = 1)]
        n_pi: usize,
        #[arg(long, default_value_t = 2000)]
        realizations: usize,
        /// Noise amplitude; calibrated to the 76 % revival when omitted.
        #[arg(long)]
        amplitude: Option<f64>,
        /// Two-column PSD file (`# omega_MHz psd_rel`).
        #[arg(long)]
        psd: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Fit spectroscopy or calibration data from a two-column CSV.
    Fit {
        #[arg(value_enum)]
        kind: FitKind,
        #[arg(long)]
        data: PathBuf,
        /// Decay rate Γ in ns⁻¹ (cyclicity fit).
        #[arg(long, default_value_t = bloch::GAMMA_DEFAULT)]
        gamma: f64,
        /// Spectral-diffusion width σe in GHz, converted to angular units (cyclicity fit).
        #[arg(long, default_value_t = 0.532)]
        sigma_e_ghz: f64,
        /// Minimum spacing used by the echo-amplitude fit, ns.
        #[arg(long, default_value_t = 3.0)]
        fit_range_min: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Vary one scenario parameter and record the fidelity.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long)]
        param: String,
        #[arg(long)]
        from: f64,
        #[arg(long)]
        to: f64,
        #[arg(long, default_value_t = 10)]
        points: usize,
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long, default_value_t = 10_000)]
        shots: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Simulate several qubit numbers and fit the fidelity decay.
    Extrapolate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Qubit numbers to simulate.
        #[arg(long, value_delimiter = ',', default_value = "2,3,4")]
        qubits: Vec<usize>,
        #[arg(long, value_enum, default_value_t = ModelArg::Offset)]
        model: ModelArg,
        #[arg(long, default_value_t = 10_000)]
        shots: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Fit (N, F, σ) rows from a CSV instead of simulating.
        #[arg(long)]
        points: Option<PathBuf>,
    },
    /// Excitation probabilities from the optical Bloch equations.
    Excite {
        /// Pulse area in units of π.
        #[arg(long, default_value_t = 1.0)]
        area: f64,
        #[arg(long, default_value_t = 30.0)]
        fwhm_ps: f64,
        #[arg(long, default_value_t = 0.0)]
        detuning_ghz: f64,
        #[arg(long, value_enum, default_value_t = ShapeArg::Gaussian)]
        shape: ShapeArg,
    },
    /// Print a scenario as TOML (a starting point for --config files).
    Show {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FitKind {
    Ramsey,
    Rabi,
    Hom,
    Cyclicity,
    EchoAmplitude,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Offset,
    Pure,
}

#[derive(Clone, Copy, ValueEnum)]
enum ShapeArg {
    Gaussian,
    Square,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(t) = cli.threads {
        if t == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match e.downcast_ref::<ghzsim::Error>() {
        Some(ghzsim::Error::InvalidArgument(_) | ghzsim::Error::Config(_) | ghzsim::Error::Parse { .. }) => 2,
        _ => 3,
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let sink = Sink::new(cli.out.clone())?;
    match cli.command {
        Command::Simulate { scenario, n, shots, seed } => {
            let sc = scenario.load()?;
            let r = mc::estimate_fidelity(&sc, n, shots, seed)?;
            let mut csv = String::from("setting,outcome,weight\n");
            for s in &r.settings {
                for (o, w) in &s.outcomes {
                    csv.push_str(&csv_row(&[s.label.clone(), o.clone(), w.to_string()]));
                }
            }
            let summary = json!({ "scenario": sc, "seed": seed, "shots": shots, "n": n, "result": r });
            sink.json("summary.json", &summary)?;
            sink.file("outcomes.csv", &csv)?;
            outln!(
                "F = {} ± {}  (Pz = {} ± {}, chi = {} ± {}, accepted {}/{})",
                r.fidelity.value, r.fidelity.std_err, r.pz.value, r.pz.std_err, r.chi.value, r.chi.std_err, r.shots_accepted, r.shots_total
            );
            sink.manifest(Manifest::new("simulate", &sc.name, &scenario.overrides, Some(seed), Some(shots)))?;
        }
        Command::ErrorBudget { scenario, n, shots, seed } => {
            let sc = scenario.load()?;
            let (all, rows) = mc::error_budget(&sc, n, shots, seed)?;
            let mut csv = String::from("source,infidelity,std_err\n");
            for r in &rows {
                csv.push_str(&csv_row(&[r.source.clone(), r.infidelity.to_string(), r.std_err.to_string()]));
            }
            sink.stdout_file("error_budget.csv", &csv)?;
            sink.json("error_budget.json", &json!({ "scenario": sc, "seed": seed, "shots": shots, "n": n, "all": all.fidelity, "rows": rows }))?;
            sink.manifest(Manifest::new("error-budget", &sc.name, &scenario.overrides, Some(seed), Some(shots)))?;
        }
        Command::Budget { file } => {
            let f = std::fs::File::open(&file).with_context(|| format!("opening {}", file.display())).map_err(|e| usage(format!("{e:#}")))?;
            let b = fits::LossBudget::from_csv(f)?;
            out!("{}", b.to_table());
            sink.file("budget.csv", &b.to_csv())?;
            sink.manifest(Manifest::new("budget", "", &[], None, None))?;
        }
        Command::Echo { scenario, spacings, n_pi, realizations, amplitude, psd, seed } => {
            let sc = scenario.load()?;
            let spectrum = match psd {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display())).map_err(|e| usage(format!("{e:#}")))?;
                    noise::NoiseSpectrum::from_text(&text)?
                }
                None => noise::default_spectrum(sc.b_field)?,
            };
            let a = match amplitude {
                Some(a) => a,
                None => noise::calibrated_amplitude(&spectrum)?,
            };
            let grid = parse_range(&spacings)?;
            let curve = noise::echo_curve(&spectrum, a, &grid, n_pi, realizations, seed)?;
            let mut csv = String::from("spacing_ns,visibility,std_err\n");
            for (s, v) in &curve {
                csv.push_str(&csv_row(&[s.to_string(), v.visibility.to_string(), v.std_err.to_string()]));
            }
            sink.stdout_file("echo.csv", &csv)?;
            sink.json("echo.json", &json!({ "amplitude": a, "n_pi": n_pi, "realizations": realizations, "seed": seed }))?;
            sink.manifest(Manifest::new("echo", &sc.name, &scenario.overrides, Some(seed), None))?;
        }
        Command::Fit { kind, data, gamma, sigma_e_ghz, fit_range_min, seed } => {
            let pts = output::read_pairs(&data).map_err(|e| usage(format!("{e:#}")))?;
            let v = match kind {
                FitKind::Ramsey => serde_json::to_value(fits::fit_ramsey(&pts)?)?,
                FitKind::Rabi => serde_json::to_value(fits::fit_rabi(&pts)?)?,
                FitKind::Hom => serde_json::to_value(fits::hom_regression(&pts)?)?,
                FitKind::Cyclicity => serde_json::to_value(fits::fit_cyclicity(&pts, gamma, bloch::ghz_to_angular(sigma_e_ghz))?)?,
                FitKind::EchoAmplitude => {
                    let spectrum = noise::default_spectrum(4.0)?;
                    let opts = noise::FitOptions { fit_range_min, seed, ..Default::default() };
                    json!({ "amplitude": noise::fit_amplitude(&spectrum, &pts, opts)? })
                }
            };
            outln!("{}", serde_json::to_string_pretty(&v)?);
            sink.json("fit.json", &v)?;
            sink.manifest(Manifest::new("fit", "", &[], Some(seed), None))?;
        }
        Command::Sweep { scenario, param, from, to, points, n, shots, seed } => {
            let spec = sweep_param(&param)?;
            let default_base = scenario.preset.is_none() && scenario.config.is_none();
            let base = if default_base {
                config::apply_overrides(ScenarioConfig::single_channel(spec.channel)?, &scenario.overrides)?
            } else {
                scenario.load()?
            };
            if points < 2 {
                return Err(usage("--points must be at least 2"));
            }
            let mut csv = String::from(if default_base { "param,fidelity,std_err,oracle\n" } else { "param,fidelity,std_err\n" });
            for i in 0..points {
                let x = from + (to - from) * i as f64 / (points - 1) as f64;
                let mut s = base.clone();
                (spec.set)(&mut s, x);
                let r = mc::estimate_fidelity(&s, n, shots, seed)?;
                let mut row = vec![x.to_string(), r.fidelity.value.to_string(), r.fidelity.std_err.to_string()];
                if default_base {
                    let o = match (spec.oracle)(&s, x) {
                        Some(ch) => mc::analytic_oracle(ch, (n - 1) as u32)?.to_string(),
                        None => String::new(),
                    };
                    row.push(o);
                }
                csv.push_str(&csv_row(&row));
            }
            sink.stdout_file("sweep.csv", &csv)?;
            sink.manifest(Manifest::new("sweep", &base.name, &scenario.overrides, Some(seed), Some(shots)))?;
        }
        Command::Extrapolate { scenario, qubits, model, shots, seed, points } => {
            let model = match model {
                ModelArg::Offset => ExtrapolationModel::Offset,
                ModelArg::Pure => ExtrapolationModel::Pure,
            };
            let (name, data) = match points {
                Some(p) => ("points".to_string(), output::read_triples(&p).map_err(|e| usage(format!("{e:#}")))?),
                None => {
                    let sc = scenario.load()?;
                    let mut data = Vec::new();
                    for &n in &qubits {
                        let r = mc::estimate_fidelity(&sc, n, shots, seed)?;
                        data.push(((n - 1) as f64, r.fidelity.value, r.fidelity.std_err));
                    }
                    (sc.name, data)
                }
            };
            let fit = mc::extrapolate(&data, model)?;
            let mut csv = String::from("photons,fidelity,std_err,model,model_std_err\n");
            for (nn, f, s) in &data {
                csv.push_str(&csv_row(&[nn.to_string(), f.to_string(), s.to_string(), fit.predict(*nn).to_string(), fit.sigma(*nn).to_string()]));
            }
            let last = fit.n_max.unwrap_or(12).max(12);
            for nn in 0..=last {
                let x = nn as f64;
                if data.iter().any(|d| d.0 == x) {
                    continue;
                }
                csv.push_str(&csv_row(&[x.to_string(), String::new(), String::new(), fit.predict(x).to_string(), fit.sigma(x).to_string()]));
            }
            sink.file("extrapolation.csv", &csv)?;
            let summary = json!({
                "points": data,
                "fit": fit,
                "per_photon_infidelity": fit.per_photon_infidelity(),
                "n_max_photons": fit.n_max,
                "n_max_qubits": fit.n_max_qubits(),
            });
            outln!("{}", serde_json::to_string_pretty(&summary)?);
            sink.json("extrapolation.json", &summary)?;
            sink.manifest(Manifest::new("extrapolate", &name, &scenario.overrides, Some(seed), Some(shots)))?;
        }
        Command::Excite { area, fwhm_ps, detuning_ghz, shape } => {
            let p = bloch::TwoLevelParams {
                gamma: bloch::GAMMA_DEFAULT,
                delta_l: bloch::ghz_to_angular(detuning_ghz),
                pulse_shape: match shape {
                    ShapeArg::Gaussian => bloch::PulseShape::Gaussian,
                    ShapeArg::Square => bloch::PulseShape::Square,
                },
                pulse_area: area * PI,
                duration: fwhm_ps * 1e-3,
            };
            let o = bloch::solve_bloch(&p, bloch::StepControl::default())?;
            let v = json!({ "p_zero": o.p_zero, "p_one": o.p_one, "p_two": o.p_two, "emission": o.emission() });
            outln!("{}", serde_json::to_string_pretty(&v)?);
            sink.json("excite.json", &v)?;
        }
        Command::Show { scenario } => {
            out!("{}", config::scenario_toml(&scenario.load()?)?);
        }
    }
    Ok(())
}

struct SweepParam {
    channel: &'static str,
    set: fn(&mut ScenarioConfig, f64),
    oracle: fn(&ScenarioConfig, f64) -> Option<OracleChannel>,
}

fn sweep_param(name: &str) -> anyhow::Result<SweepParam> {
    let p = match name {
        "cyclicity" => SweepParam {
            channel: "cyclicity",
            set: |s, x| s.cyclicity = x,
            oracle: |_, x| Some(OracleChannel::Cyclicity { c: x }),
        },
        "q-factor" => SweepParam { channel: "spin-flip", set: |s, x| s.q_factor = x, oracle: |_, x| Some(OracleChannel::SpinFlip { q: x }) },
        "readout-fidelity" => SweepParam {
            channel: "readout",
            set: |s, x| s.readout_fidelity = x,
            oracle: |_, x| Some(OracleChannel::Readout { f_r: x }),
        },
        "init-fidelity" => {
            SweepParam { channel: "init", set: |s, x| s.init_fidelity = x, oracle: |_, x| Some(OracleChannel::Init { f_int: x }) }
        }
        "dephasing-rate" => SweepParam {
            channel: "dephasing",
            set: |s, x| s.dephasing_rate = x,
            oracle: |s, x| Some(OracleChannel::Dephasing { gamma_d: x, gamma: s.gamma }),
        },
        "cycling-splitting" => SweepParam { channel: "offres", set: |s, x| s.cycling_splitting_ghz = x, oracle: |_, _| None },
        "laser-detuning" => SweepParam { channel: "offres", set: |s, x| s.laser_detuning_ghz = x, oracle: |_, _| None },
        "pulse-area" => SweepParam { channel: "offres", set: |s, x| s.pulse.area = x * PI, oracle: |_, _| None },
        "pulse-fwhm" => SweepParam { channel: "offres", set: |s, x| s.pulse.fwhm_ps = x, oracle: |_, _| None },
        "b-field" => SweepParam { channel: "nuclear", set: |s, x| s.b_field = x, oracle: |_, _| None },
        other => return Err(usage(format!("unknown sweep parameter '{other}'"))),
    };
    Ok(p)
}

fn parse_range(s: &str) -> anyhow::Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || usage(format!("range '{s}' is not start:stop:count"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].parse().map_err(|_| bad())?;
    let b: f64 = parts[1].parse().map_err(|_| bad())?;
    let n: usize = parts[2].parse().map_err(|_| bad())?;
    if n < 2 || !(b > a) {
        return Err(bad());
    }
    Ok((0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect())
}
