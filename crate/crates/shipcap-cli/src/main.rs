//! Command-line driver: data generation, training, closed-loop
//! simulation, benchmark evaluation, comparison tables, and plots.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use shipcap::baselines::{tune_pi, PiConfig};
use shipcap::dataset::{collect, CollectConfig, Dataset};
use shipcap::dnko::{train, DnkoModel, DnkoSpec, TrainConfig};
use shipcap::empc::EmpcConfig;
use shipcap::error::Result;
use shipcap::harness::{
    compare, condition_by_index, emit_plots, plot_training_curves, run_matrix, ControllerKind,
    OperationalCondition, PlotBounds, RunSpec, ScenarioRun,
};
use shipcap::plant::{solve_steady_state, ControlInput, Disturbance, PlantConfig};

#[derive(Parser)]
#[command(name = "shipcap", about = "Shipboard carbon-capture control benchmark", version)]
struct Cli {
    /// TOML file with [plant] and [empc] key overrides.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the excitation dataset from the plant simulator.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20_000)]
        samples: usize,
        /// Optional CSV export of the raw rollouts.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train the Koopman surrogate on a generated dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 60)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Per-epoch loss curve CSV.
        #[arg(long)]
        loss_csv: Option<PathBuf>,
        /// Loss curve SVG.
        #[arg(long)]
        loss_plot: Option<PathBuf>,
    },
    /// Closed-loop simulation of one controller under one condition.
    Simulate {
        #[arg(long, value_parser = parse_controller)]
        controller: ControllerKind,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Condition index 1..=4.
        #[arg(long, default_value_t = 1)]
        condition: usize,
        #[arg(long, default_value_t = 720)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Full benchmark matrix: conditions x controllers.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        /// Comma-separated controller list.
        #[arg(long, default_value = "dnko,pi")]
        controllers: String,
        /// Comma-separated condition indices.
        #[arg(long, default_value = "1,2,3,4")]
        conditions: String,
        #[arg(long, default_value_t = 720)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate saved runs into the comparison table.
    Compare {
        #[arg(long, name = "in")]
        in_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render plots from saved runs.
    Plot {
        #[arg(long, name = "in")]
        in_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scripted PI gain search at a fixed load.
    TunePi {
        /// Engine load, percent.
        #[arg(long, default_value_t = 60.0)]
        load: f64,
        #[arg(long, default_value_t = 180)]
        steps: usize,
        /// Write the tuned configuration as TOML.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve and print the plant steady state.
    Steady {
        #[arg(long, default_value_t = 60.0)]
        load: f64,
        /// Solvent flow m3/h (default: mid-box).
        #[arg(long)]
        f_l: Option<f64>,
        /// Fuel flow kg/h (default: mid-box).
        #[arg(long)]
        f_fuel: Option<f64>,
        /// Seawater flow m3/h (default: mid-box).
        #[arg(long)]
        f_sw: Option<f64>,
    },
}

fn parse_controller(s: &str) -> std::result::Result<ControllerKind, String> {
    match s {
        "dnko" => Ok(ControllerKind::Dnko),
        "pi" => Ok(ControllerKind::Pi),
        other => Err(format!("unknown controller `{other}` (expected dnko or pi)")),
    }
}

/// Load [plant] / [empc] override sections from the optional config file.
fn load_configs(path: Option<&Path>) -> Result<(PlantConfig, EmpcConfig)> {
    let mut plant = PlantConfig::default();
    let mut empc = EmpcConfig::default();
    if let Some(path) = path {
        let text = std::fs::read_to_string(path)?;
        let table: toml::Table = toml::from_str(&text)?;
        if let Some(section) = table.get("plant") {
            plant = plant.with_overrides(&toml::to_string(section).unwrap_or_default())?;
        }
        if let Some(section) = table.get("empc") {
            empc = empc.with_overrides(&toml::to_string(section).unwrap_or_default())?;
        }
    }
    Ok((plant, empc))
}

fn threads_from_env() -> Option<usize> {
    std::env::var("SHIPCAP_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
}

fn save_runs(runs: &[ScenarioRun], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for r in runs {
        let stem = format!("run_{}_{}", r.condition.name, r.controller);
        r.save(&dir.join(format!("{stem}.json")))?;
        r.export_csv(&dir.join(format!("{stem}.csv")))?;
    }
    Ok(())
}

fn load_runs(dir: &Path) -> Result<Vec<ScenarioRun>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension().is_some_and(|e| e == "json")
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("run_"))
        })
        .collect();
    paths.sort();
    paths.iter().map(|p| ScenarioRun::load(p)).collect()
}

fn run(cli: Cli) -> Result<()> {
    let (plant, empc_cfg) = load_configs(cli.config.as_deref())?;
    match cli.cmd {
        Cmd::GenData {
            out,
            seed,
            samples,
            csv,
        } => {
            let cc = CollectConfig {
                n_samples: samples,
                ..CollectConfig::default()
            };
            let ds = collect(&plant, &cc, seed)?;
            ds.save(&out)?;
            println!(
                "dataset: {} rollouts, {} train / {} val / {} test windows -> {}",
                ds.rollouts.len(),
                ds.train.len(),
                ds.val.len(),
                ds.test.len(),
                out.display()
            );
            if let Some(csv) = csv {
                ds.export_csv(&csv)?;
                println!("rollout CSV -> {}", csv.display());
            }
            Ok(())
        }
        Cmd::Train {
            data,
            out,
            epochs,
            seed,
            loss_csv,
            loss_plot,
        } => {
            let ds = Dataset::load(&data)?;
            let mut model = DnkoModel::init(DnkoSpec::default(), ds.norm.clone(), seed);
            let tc = TrainConfig {
                epochs,
                seed,
                ..TrainConfig::default()
            };
            let report = train(&mut model, &ds, &tc)?;
            model.save(&out)?;
            let test_mse = shipcap::dnko::horizon_mse(&model, &ds, &ds.test);
            println!(
                "trained {} epochs: final val loss {:.4e}, test horizon MSE {:.4e} -> {}",
                epochs,
                report.final_val(),
                test_mse,
                out.display()
            );
            if let Some(p) = loss_csv {
                report.export_csv(&p)?;
            }
            if let Some(p) = loss_plot {
                plot_training_curves(&report, &p)?;
            }
            Ok(())
        }
        Cmd::Simulate {
            controller,
            model,
            condition,
            steps,
            seed,
            out,
        } => {
            let cond = condition_by_index(condition)?;
            let model = model.as_deref().map(DnkoModel::load).transpose()?;
            let spec = RunSpec {
                steps,
                seed,
                ..RunSpec::default()
            };
            let runs = run_matrix(
                &plant,
                std::slice::from_ref(&cond),
                &[controller],
                model.as_ref(),
                &empc_cfg,
                &PiConfig::default(),
                &spec,
                threads_from_env(),
            )?;
            save_runs(&runs, &out)?;
            print_summary(&runs, &empc_cfg);
            Ok(())
        }
        Cmd::Evaluate {
            model,
            controllers,
            conditions,
            steps,
            seed,
            out,
        } => {
            let kinds: Vec<ControllerKind> = controllers
                .split(',')
                .map(|s| parse_controller(s.trim()).map_err(shipcap::error::Error::Config))
                .collect::<Result<_>>()?;
            let conds: Vec<OperationalCondition> = conditions
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|e| shipcap::error::Error::Config(e.to_string()))
                        .and_then(condition_by_index)
                })
                .collect::<Result<_>>()?;
            let model = DnkoModel::load(&model)?;
            let spec = RunSpec {
                steps,
                seed,
                ..RunSpec::default()
            };
            let runs = run_matrix(
                &plant,
                &conds,
                &kinds,
                Some(&model),
                &empc_cfg,
                &PiConfig::default(),
                &spec,
                threads_from_env(),
            )?;
            save_runs(&runs, &out)?;
            print_summary(&runs, &empc_cfg);
            Ok(())
        }
        Cmd::Compare { in_dir, out } => {
            let runs = load_runs(&in_dir)?;
            let table = compare(&runs, empc_cfg.t_reb_min, empc_cfg.t_reb_max);
            std::fs::write(&out, &table)?;
            print!("{table}");
            Ok(())
        }
        Cmd::Plot { in_dir, out } => {
            let runs = load_runs(&in_dir)?;
            let bounds = PlotBounds {
                t_reb_min: empc_cfg.t_reb_min,
                t_reb_max: empc_cfg.t_reb_max,
                t1_la_max: empc_cfg.t1_la_max,
                t1_ld_min: empc_cfg.t1_ld_min,
                capture_floor_pct: empc_cfg.capture_floor_pct,
            };
            let files = emit_plots(&runs, &bounds, &out)?;
            for f in &files {
                println!("{}", f.display());
            }
            Ok(())
        }
        Cmd::TunePi { load, steps, out } => {
            let start = PiConfig::default();
            let (tuned, iae) = tune_pi(&plant, &start, load / 100.0, steps)?;
            let text = toml::to_string_pretty(&tuned)
                .map_err(|e| shipcap::error::Error::Config(e.to_string()))?;
            println!("# IAE {iae:.3} at {load}% load over {steps} steps\n{text}");
            if let Some(p) = out {
                std::fs::write(&p, &text)?;
            }
            Ok(())
        }
        Cmd::Steady {
            load,
            f_l,
            f_fuel,
            f_sw,
        } => {
            let mid = ControlInput::mid_box(&plant);
            let u = ControlInput::new(
                f_l.unwrap_or(mid.f_l_m3ph),
                f_fuel.unwrap_or(mid.f_fuel_kgph),
                f_sw.unwrap_or(mid.f_sw_m3ph),
            );
            let d = Disturbance::new(load / 100.0);
            let (x, z) = solve_steady_state(&plant, &u, &d)?;
            let sim = shipcap::plant::Simulator::new(plant.clone(), x, z);
            let out = sim.output(&u, &d)?;
            println!(
                "load {load}% u = ({:.1} m3/h, {:.0} kg/h, {:.1} m3/h)",
                u.f_l_m3ph, u.f_fuel_kgph, u.f_sw_m3ph
            );
            println!(
                "T_reb {:.2} K  capture {:.2} %  T1_LA {:.2} K  T1_LD {:.2} K",
                out.t_reb, out.p_co2, out.t1_la, out.t1_ld
            );
            println!(
                "flue CO2 {:.4} kg/s  released {:.4} kg/s  stage cost {:.5} $/s",
                out.flue_co2, out.treated_co2, out.stage_cost
            );
            Ok(())
        }
    }
}

fn print_summary(runs: &[ScenarioRun], empc_cfg: &EmpcConfig) {
    print!("{}", compare(runs, empc_cfg.t_reb_min, empc_cfg.t_reb_max));
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
