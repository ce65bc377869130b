use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use lumpsim::engine::{compile_engine, BaselineMode, EngineConfig};
use lumpsim::equivalence::equivalize;
use lumpsim::harness::{self, EquivalenceReport, SuiteConfig};
use lumpsim::ident::{self, IdentConfig, StaticSample};
use lumpsim::leg::{LEG2D_TOML, TRIANGLE_SCHEDULE_JSON};
use lumpsim::mjcf::emit_mjcf;
use lumpsim::model::{parse_description, JointState, RobotDescription};
use lumpsim::ode::IntegratorConfig;
use lumpsim::oracle::{build_oracle, DEFAULT_DT_OUT};
use lumpsim::schedule::PressureSchedule;
use lumpsim::trajectory::Trajectory;
use lumpsim::{Error, Result};

const SCHEMA_HELP: &str = "\
Model files are TOML (or JSON when the text starts with '{'):
  gravity, phase = \"swing\" | \"stance\", nominal_pose = [rad, ...]
  [[links]]      id, mass, com = [x, y], rod_length, inertia_zz
  [[joints]]     id, parent, child, parent_anchor, child_anchor,
                 limits = [lo, hi], offset, damping
  [[actuators]]  id, mass_kg, stiffness_n_per_m, damping_ns_per_m,
                 rest_length_m, area_m2, attach_a/attach_b = { link, point }
  [stance_foot]  link, point
Schedules are JSON lists of { \"t_s\": s, \"P_pa\": [Pa or \"6.15 kPa\", ...] }.
Without --model the bundled two-joint leg is used.";

#[derive(Parser)]
#[command(name = "lumpsim", version, about = "Planar elastic-actuator robot simulation and verification")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Oracle,
    Engine,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    ThreeTwoOne,
    Naive,
}

impl From<Mode> for BaselineMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::ThreeTwoOne => BaselineMode::ThreeTwoOne,
            Mode::Naive => BaselineMode::NaiveLumped,
        }
    }
}

#[derive(clap::Args, Clone)]
struct Common {
    /// Robot description (TOML or JSON).
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, value_enum, default_value = "engine")]
    backend: Backend,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one trajectory under a pressure schedule.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Pressure schedule JSON; defaults to the bundled triangle schedule.
        #[arg(long)]
        schedule: Option<PathBuf>,
        #[arg(long, default_value_t = 8.0)]
        t_end: f64,
        /// Initial joint angles, comma separated; defaults to the nominal pose.
        #[arg(long, value_delimiter = ',')]
        q0: Option<Vec<f64>>,
        #[arg(long, value_enum, default_value = "three-two-one")]
        mode: Mode,
    },
    /// Print the 3-2-1 assembly of every actuator.
    Equivalize {
        #[command(flatten)]
        common: Common,
    },
    VerifyStatic {
        #[command(flatten)]
        common: Common,
    },
    VerifyDynamic {
        #[command(flatten)]
        common: Common,
    },
    VerifyStance {
        #[command(flatten)]
        common: Common,
        /// Actuator forces after the step, N.
        #[arg(long, value_delimiter = ',', default_value = "10,10")]
        force: Vec<f64>,
    },
    /// Random three-joint chains, one report per seed starting at --seed.
    Verify3dof {
        #[command(flatten)]
        common: Common,
    },
    Sensitivity {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
        levels: Vec<f64>,
    },
    Baseline {
        #[command(flatten)]
        common: Common,
    },
    /// Fit stiffness and area (optionally rest lengths) to equilibria.
    IdentifyStatic {
        #[command(flatten)]
        common: Common,
        /// JSON list of {q, pressures}; synthesized from the model if absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        fit_rest_lengths: bool,
        /// Pressure noise for synthesized samples, Pa.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
    },
    /// Calibrate the full parameter vector against trajectories.
    IdentifyDynamic {
        #[command(flatten)]
        common: Common,
        /// Dataset directory with manifest.json; synthesized if absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 500)]
        generations: usize,
        #[arg(long, default_value_t = 2.0)]
        duration: f64,
    },
    ExportMjcf {
        #[arg(long)]
        model: Option<PathBuf>,
        /// Output XML file.
        #[arg(long, default_value = "model.xml")]
        out: PathBuf,
    },
}

fn load_model(path: &Option<PathBuf>) -> Result<RobotDescription> {
    match path {
        Some(p) => parse_description(&std::fs::read_to_string(p).map_err(|e| {
            Error::Validation(format!("cannot read model '{}': {e}", p.display()))
        })?),
        None => parse_description(LEG2D_TOML),
    }
}

fn write(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let p = dir.join(name);
    std::fs::write(&p, text)?;
    println!("wrote {}", p.display());
    Ok(p)
}

fn suite(c: &Common) -> SuiteConfig {
    SuiteConfig {
        trials: c.trials,
        seed: c.seed,
        ..Default::default()
    }
}

fn report_csv(r: &EquivalenceReport) -> String {
    let mut s = String::from("joint,rmse_rad,max_ae_rad\n");
    for (j, (a, b)) in r.rmse.iter().zip(&r.max_ae).enumerate() {
        s.push_str(&format!("{j},{a:.16e},{b:.16e}\n"));
    }
    s
}

fn emit_report(c: &Common, r: &EquivalenceReport) -> Result<()> {
    match c.format {
        Format::Json => write(&c.out, "report.json", &r.to_json())?,
        Format::Csv => write(&c.out, "report.csv", &report_csv(r))?,
    };
    println!(
        "{}: rmse {:?} max_ae {:?} valid {}/{}",
        r.suite, r.rmse, r.max_ae, r.valid, r.trials
    );
    Ok(())
}

fn emit_trajectory(c: &Common, tr: &Trajectory) -> Result<()> {
    match c.format {
        Format::Csv => write(&c.out, "trajectory.csv", &tr.to_csv())?,
        Format::Json => write(
            &c.out,
            "trajectory.json",
            &serde_json::to_string_pretty(tr).map_err(|e| Error::Schema(e.to_string()))?,
        )?,
    };
    Ok(())
}

fn json<T: serde::Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| Error::Schema(e.to_string()))
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Simulate {
            common,
            schedule,
            t_end,
            q0,
            mode,
        } => {
            let desc = load_model(&common.model)?;
            let text = match &schedule {
                Some(p) => std::fs::read_to_string(p)?,
                None => TRIANGLE_SCHEDULE_JSON.to_string(),
            };
            let forces = PressureSchedule::from_json(&text)?.to_forces(&desc.areas())?;
            let s0 = JointState::at_rest(q0.unwrap_or_else(|| desc.nominal_pose()));
            match common.backend {
                Backend::Oracle => {
                    let o = build_oracle(&desc)?;
                    let tr = o.integrate(&s0, &forces, t_end, &IntegratorConfig::default(), DEFAULT_DT_OUT)?;
                    emit_trajectory(&common, &tr)?;
                }
                Backend::Engine => {
                    let e = compile_engine(&desc, mode.into(), EngineConfig::default())?;
                    let sim = e.simulate(&s0, &forces, t_end)?;
                    emit_trajectory(&common, &sim.trajectory)?;
                    write(&common.out, "engine.json", &e.sidecar_json(&sim.stats))?;
                }
            }
        }
        Cmd::Equivalize { common } => {
            let desc = load_model(&common.model)?;
            let out: Vec<_> = desc
                .actuators
                .iter()
                .map(|a| {
                    let asm = equivalize(a);
                    serde_json::json!({
                        "id": a.id,
                        "masses_kg": asm.masses,
                        "segment_stiffness_n_per_m": asm.segment_stiffness,
                        "segment_damping_ns_per_m": asm.segment_damping,
                        "segment_rest_length_m": asm.segment_rest_length,
                        "shared_force": asm.shared_force,
                        "equal_segments": asm.equal_segments,
                    })
                })
                .collect();
            let text = json(&out)?;
            println!("{text}");
            write(&common.out, "assemblies.json", &text)?;
        }
        Cmd::VerifyStatic { common } => {
            let r = harness::run_static_sweep(&load_model(&common.model)?, &suite(&common))?;
            emit_report(&common, &r)?;
        }
        Cmd::VerifyDynamic { common } => {
            let r = harness::run_dynamic_swing(&load_model(&common.model)?, &suite(&common))?;
            emit_report(&common, &r)?;
        }
        Cmd::VerifyStance { common, force } => {
            let r = harness::run_stance_impulse(&load_model(&common.model)?, &force, &suite(&common))?;
            emit_report(&common, &r)?;
        }
        Cmd::Verify3dof { common } => {
            let cfg = suite(&common);
            let mut reports = Vec::new();
            for k in 0..common.trials as u64 {
                let r = harness::run_morphology_3dof(common.seed + k, &cfg)?;
                println!("seed {}: rmse {:?}", common.seed + k, r.rmse);
                reports.push(r);
            }
            write(&common.out, "report.json", &json(&reports)?)?;
        }
        Cmd::Sensitivity { common, levels } => {
            let r = harness::run_sensitivity(&load_model(&common.model)?, &levels, &suite(&common))?;
            println!("most sensitive: {:?}", r.most_sensitive);
            write(&common.out, "report.json", &r.to_json())?;
        }
        Cmd::Baseline { common } => {
            let r = harness::run_baseline_compare(&load_model(&common.model)?, &suite(&common))?;
            println!(
                "3-2-1 rmse {:.3e}, naive rmse {:.3e}, ratio {:.2}",
                r.three_two_one.overall_rmse, r.naive.overall_rmse, r.ratio
            );
            write(&common.out, "report.json", &r.to_json())?;
        }
        Cmd::IdentifyStatic {
            common,
            data,
            fit_rest_lengths,
            noise,
        } => {
            let desc = load_model(&common.model)?;
            let samples: Vec<StaticSample> = match &data {
                Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)
                    .map_err(|e| Error::Schema(e.to_string()))?,
                None => ident::synthetic_static_samples(&desc, common.trials, noise, common.seed)?,
            };
            let fit = ident::static_regress(&samples, &desc, fit_rest_lengths)?;
            let text = json(&fit)?;
            println!("{text}");
            write(&common.out, "static_fit.json", &text)?;
        }
        Cmd::IdentifyDynamic {
            common,
            data,
            generations,
            duration,
        } => {
            let desc = load_model(&common.model)?;
            let (dataset, mut cfg) = match &data {
                Some(dir) => ident::load_dataset(dir)?,
                None => {
                    let d = ident::synthetic_dataset(&desc, 13, duration, common.seed)?;
                    let cfg = IdentConfig {
                        seed: common.seed,
                        ..Default::default()
                    };
                    ident::save_dataset(&common.out.join("dataset"), &d, &cfg)?;
                    (d, cfg)
                }
            };
            cfg.max_generations = generations;
            let r = ident::identify_dynamic(&dataset, &desc, &cfg)?;
            println!(
                "objective {:.6e} after {} generations; per-trajectory rmse {:?}",
                r.objective, r.generations, r.per_trajectory_rmse
            );
            write(&common.out, "identification.json", &json(&r)?)?;
        }
        Cmd::ExportMjcf { model, out } => {
            let xml = emit_mjcf(&load_model(&model)?)?;
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(&out, xml)?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            if !usage {
                return ExitCode::SUCCESS;
            }
            eprintln!("\n{SCHEMA_HELP}");
            return ExitCode::from(1);
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
