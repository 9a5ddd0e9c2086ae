//! Four-condition closed-loop benchmark: run a controller against the
//! plant under a condition-specific engine-load trajectory, aggregate
//! economics / capture / constraint / timing metrics, emit a comparison
//! table and static SVG plots.
//!
//! The per-step log is the single source of truth: every summary metric
//! is recomputed from the rows, never accumulated separately.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::PiController;
use crate::dataset::gen_engine_load;
use crate::dnko::TrainReport;
use crate::empc::EmpcController;
use crate::error::{Error, Result};
use crate::plant::{
    measure_partial, solve_steady_state, ControlInput, Disturbance, PlantConfig, Simulator,
};

/// Ship operational condition: an engine-load band in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperationalCondition {
    pub name: String,
    pub load_lo_pct: f64,
    pub load_hi_pct: f64,
}

impl OperationalCondition {
    pub fn new(name: &str, lo: f64, hi: f64) -> Self {
        Self {
            name: name.to_string(),
            load_lo_pct: lo,
            load_hi_pct: hi,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.load_lo_pct < 20.0 || self.load_hi_pct > 100.0 || self.load_lo_pct > self.load_hi_pct
        {
            return Err(Error::Config(format!(
                "condition {} load range [{}, {}] outside [20, 100]",
                self.name, self.load_lo_pct, self.load_hi_pct
            )));
        }
        Ok(())
    }
}

/// The benchmark matrix: maneuvering, slow steaming, low load, full range.
pub fn standard_conditions() -> Vec<OperationalCondition> {
    vec![
        OperationalCondition::new("maneuvering", 70.0, 100.0),
        OperationalCondition::new("slow-steaming", 40.0, 70.0),
        OperationalCondition::new("low-load", 20.0, 40.0),
        OperationalCondition::new("full-range", 20.0, 100.0),
    ]
}

pub fn condition_by_index(idx: usize) -> Result<OperationalCondition> {
    standard_conditions()
        .into_iter()
        .nth(idx.wrapping_sub(1))
        .ok_or_else(|| Error::Config(format!("condition index {idx} not in 1..=4")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    Dnko,
    Pi,
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ControllerKind::Dnko => write!(f, "dnko"),
            ControllerKind::Pi => write!(f, "pi"),
        }
    }
}

/// One closed-loop step of the benchmark log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLogRow {
    pub step: usize,
    pub time_s: f64,
    pub phi_e: f64,
    /// Applied input (F_L m3/h, F_fuel kg/h, F_sw m3/h).
    pub u: [f64; 3],
    /// Outputs (T_reb K, capture %, T1_LA K, T1_LD K).
    pub y: [f64; 4],
    /// Released CO2, kg/s.
    pub treated_co2: f64,
    /// Carbon-tax stage cost, $/s.
    pub stage_cost: f64,
    /// Step economics: dt * (stage cost + fuel cost), $.
    pub step_cost_usd: f64,
    /// Solver diagnostics; zero/false for PI.
    pub objective: f64,
    pub slack: f64,
    pub kkt_residual: f64,
    pub solve_ms: f64,
    pub fallback_used: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRun {
    pub condition: OperationalCondition,
    pub controller: ControllerKind,
    pub seed: u64,
    pub rows: Vec<StepLogRow>,
}

/// Summary metrics recomputed from the raw rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub cumulative_cost_usd: f64,
    pub avg_capture_pct: f64,
    pub t_reb_violations: usize,
    pub t_reb_violation_pct: f64,
    pub max_t_reb_violation_k: f64,
    pub mean_solve_ms: f64,
    pub max_solve_ms: f64,
    pub fallback_steps: usize,
}

impl ScenarioRun {
    pub fn metrics(&self, t_reb_min: f64, t_reb_max: f64) -> RunMetrics {
        let n = self.rows.len().max(1) as f64;
        let cumulative_cost_usd = self.rows.iter().map(|r| r.step_cost_usd).sum();
        let avg_capture_pct = self.rows.iter().map(|r| r.y[1]).sum::<f64>() / n;
        let mut violations = 0;
        let mut max_violation: f64 = 0.0;
        for r in &self.rows {
            let v = (t_reb_min - r.y[0]).max(r.y[0] - t_reb_max);
            if v > 0.0 {
                violations += 1;
                max_violation = max_violation.max(v);
            }
        }
        RunMetrics {
            cumulative_cost_usd,
            avg_capture_pct,
            t_reb_violations: violations,
            t_reb_violation_pct: 100.0 * violations as f64 / n,
            max_t_reb_violation_k: max_violation,
            mean_solve_ms: self.rows.iter().map(|r| r.solve_ms).sum::<f64>() / n,
            max_solve_ms: self.rows.iter().map(|r| r.solve_ms).fold(0.0, f64::max),
            fallback_steps: self.rows.iter().filter(|r| r.fallback_used).count(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }

    pub fn export_csv(&self, path: &Path) -> Result<()> {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(
            w,
            "step,time_s,phi_e,f_l_m3ph,f_fuel_kgph,f_sw_m3ph,t_reb_k,capture_pct,\
             t1_la_k,t1_ld_k,treated_co2_kgps,stage_cost_usd_ps,step_cost_usd,\
             objective,slack,kkt_residual,solve_ms,fallback_used"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.step,
                r.time_s,
                r.phi_e,
                r.u[0],
                r.u[1],
                r.u[2],
                r.y[0],
                r.y[1],
                r.y[2],
                r.y[3],
                r.treated_co2,
                r.stage_cost,
                r.step_cost_usd,
                r.objective,
                r.slack,
                r.kkt_residual,
                r.solve_ms,
                r.fallback_used
            )?;
        }
        Ok(())
    }
}

/// Controller instance consumed by one closed-loop run.
pub enum Controller {
    Dnko(Box<EmpcController>),
    Pi(Box<PiController>),
}

impl Controller {
    pub fn kind(&self) -> ControllerKind {
        match self {
            Controller::Dnko(_) => ControllerKind::Dnko,
            Controller::Pi(_) => ControllerKind::Pi,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub steps: usize,
    pub seed: u64,
    /// Per-step load noise, percent of full load.
    pub load_noise_pct: f64,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            steps: 720,
            seed: 0,
            load_noise_pct: 0.5,
        }
    }
}

/// Run one controller under one condition from the documented
/// steady-state initial point (mid-range load, mid-box input).
pub fn run_condition(
    plant: &PlantConfig,
    cond: &OperationalCondition,
    mut ctrl: Controller,
    spec: &RunSpec,
) -> Result<ScenarioRun> {
    cond.validate()?;
    let kind = ctrl.kind();
    let phi0 = 0.5 * (cond.load_lo_pct + cond.load_hi_pct) / 100.0;
    let u0 = ControlInput::mid_box(plant);
    let d0 = Disturbance::new(phi0);
    let (x0, z0) = solve_steady_state(plant, &u0, &d0)?;
    let mut sim = Simulator::new(plant.clone(), x0, z0);

    let mut loads = gen_engine_load(
        spec.steps,
        cond.load_lo_pct,
        cond.load_hi_pct,
        spec.load_noise_pct,
        &mut rand_chacha::ChaCha8Rng::seed_from_u64(spec.seed),
    );
    // Start on the steady-state load and ramp from there.
    if !loads.is_empty() {
        loads[0] = Disturbance::new(phi0);
    }

    let beta_ps = plant.fuel_price_per_kg / 3600.0;
    let mut rows = Vec::with_capacity(spec.steps);
    let mut out = sim.output(&u0, &d0)?;
    for (k, &d) in loads.iter().enumerate() {
        let phi = d.phi_e;
        let (u, obj, slack, kkt, solve_ms, fallback) = match &mut ctrl {
            Controller::Dnko(c) => {
                let x_k = measure_partial(sim.state());
                let (u, log) = c.control_step(&x_k, phi)?;
                (
                    u,
                    log.objective,
                    log.slack,
                    log.kkt_residual,
                    log.solve_ms,
                    log.fallback_used,
                )
            }
            Controller::Pi(c) => {
                let u = c.step(&out, plant.dt_s);
                (u, 0.0, 0.0, 0.0, 0.0, false)
            }
        };
        out = sim.step(&u, &d).map_err(|e| {
            log::error!("closed-loop step {k} failed under {}: {e}", cond.name);
            e
        })?;
        let step_cost_usd = plant.dt_s * (out.stage_cost + beta_ps * u.f_fuel_kgph);
        rows.push(StepLogRow {
            step: k,
            time_s: sim.time_s(),
            phi_e: phi,
            u: u.as_array(),
            y: out.y(),
            treated_co2: out.treated_co2,
            stage_cost: out.stage_cost,
            step_cost_usd,
            objective: obj,
            slack,
            kkt_residual: kkt,
            solve_ms,
            fallback_used: fallback,
        });
    }
    Ok(ScenarioRun {
        condition: cond.clone(),
        controller: kind,
        seed: spec.seed,
        rows,
    })
}

use rand::SeedableRng;

/// Run the conditions x controllers job matrix. Jobs are independent
/// and run in parallel (`threads` bounds the pool; `None` uses the
/// rayon default); results come back in deterministic job order.
#[allow(clippy::too_many_arguments)]
pub fn run_matrix(
    plant: &PlantConfig,
    conditions: &[OperationalCondition],
    kinds: &[ControllerKind],
    model: Option<&crate::dnko::DnkoModel>,
    empc_cfg: &crate::empc::EmpcConfig,
    pi_cfg: &crate::baselines::PiConfig,
    spec: &RunSpec,
    threads: Option<usize>,
) -> Result<Vec<ScenarioRun>> {
    use rayon::prelude::*;
    let jobs: Vec<(OperationalCondition, ControllerKind)> = conditions
        .iter()
        .flat_map(|c| kinds.iter().map(move |k| (c.clone(), *k)))
        .collect();
    let run_job = |(cond, kind): &(OperationalCondition, ControllerKind)| -> Result<ScenarioRun> {
        let ctrl = match kind {
            ControllerKind::Dnko => {
                let model = model.ok_or_else(|| {
                    Error::Config("dnko controller requested without a model".into())
                })?;
                Controller::Dnko(Box::new(EmpcController::new(
                    model.clone(),
                    empc_cfg.clone(),
                )?))
            }
            ControllerKind::Pi => Controller::Pi(Box::new(PiController::new(*pi_cfg))),
        };
        log::info!("running {} / {}", cond.name, kind);
        run_condition(plant, cond, ctrl, spec)
    };
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| jobs.par_iter().map(run_job).collect()),
        None => jobs.par_iter().map(run_job).collect(),
    }
}

/// Emit the Table-style comparison CSV: condition x controller with
/// economics, capture, violations, timing, and best-per-condition flags.
/// Deterministic and byte-stable for identical inputs.
pub fn compare(runs: &[ScenarioRun], t_reb_min: f64, t_reb_max: f64) -> String {
    let mut table = String::from(
        "condition,controller,cost_usd,avg_capture_pct,t_reb_violations,\
         t_reb_violation_pct,max_t_reb_violation_k,mean_solve_ms,max_solve_ms,\
         fallback_steps,best_cost,best_capture\n",
    );
    let mut conditions: Vec<String> = runs.iter().map(|r| r.condition.name.clone()).collect();
    conditions.sort();
    conditions.dedup();
    for cond in &conditions {
        let group: Vec<(&ScenarioRun, RunMetrics)> = runs
            .iter()
            .filter(|r| &r.condition.name == cond)
            .map(|r| (r, r.metrics(t_reb_min, t_reb_max)))
            .collect();
        let lens: Vec<usize> = group.iter().map(|(r, _)| r.rows.len()).collect();
        if lens.windows(2).any(|w| w[0] != w[1]) {
            log::warn!("condition {cond}: mismatched run lengths {lens:?}");
        }
        let best_cost = group
            .iter()
            .map(|(_, m)| m.cumulative_cost_usd)
            .fold(f64::INFINITY, f64::min);
        let best_cap = group
            .iter()
            .map(|(_, m)| m.avg_capture_pct)
            .fold(f64::NEG_INFINITY, f64::max);
        for (r, m) in &group {
            let _ = writeln!(
                table,
                "{},{},{:.4},{:.4},{},{:.4},{:.4},{:.4},{:.4},{},{},{}",
                cond,
                r.controller,
                m.cumulative_cost_usd,
                m.avg_capture_pct,
                m.t_reb_violations,
                m.t_reb_violation_pct,
                m.max_t_reb_violation_k,
                m.mean_solve_ms,
                m.max_solve_ms,
                m.fallback_steps,
                (m.cumulative_cost_usd == best_cost) as u8,
                (m.avg_capture_pct == best_cap) as u8,
            );
        }
    }
    table
}

// ---------------------------------------------------------------------
// SVG plotting (self-contained static vector graphics)
// ---------------------------------------------------------------------

const PLOT_W: f64 = 720.0;
const PLOT_H: f64 = 360.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 46.0;

struct Series<'a> {
    name: &'a str,
    color: &'a str,
    points: Vec<(f64, f64)>,
}

/// Horizontal shaded band marking a feasible region in y.
struct Band {
    y_lo: f64,
    y_hi: f64,
    color: &'static str,
}

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if (hi - lo).abs() < 1e-12 {
        return (lo - 1.0, hi + 1.0);
    }
    let pad = 0.06 * (hi - lo);
    (lo - pad, hi + pad)
}

fn svg_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series<'_>],
    bands: &[Band],
    log_y: bool,
) -> String {
    let tx = |v: f64| -> f64 { if log_y { v.max(1e-300).log10() } else { v } };
    let mut x_lo = f64::INFINITY;
    let mut x_hi = f64::NEG_INFINITY;
    let mut y_lo = f64::INFINITY;
    let mut y_hi = f64::NEG_INFINITY;
    for s in series {
        for &(x, y) in &s.points {
            x_lo = x_lo.min(x);
            x_hi = x_hi.max(x);
            y_lo = y_lo.min(tx(y));
            y_hi = y_hi.max(tx(y));
        }
    }
    for b in bands {
        if b.y_lo.is_finite() {
            y_lo = y_lo.min(tx(b.y_lo));
        }
        if b.y_hi.is_finite() {
            y_hi = y_hi.max(tx(b.y_hi));
        }
    }
    let (x_lo, x_hi) = nice_range(x_lo, x_hi);
    let (y_lo, y_hi) = nice_range(y_lo, y_hi);
    let iw = PLOT_W - MARGIN_L - MARGIN_R;
    let ih = PLOT_H - MARGIN_T - MARGIN_B;
    let px = |x: f64| MARGIN_L + (x - x_lo) / (x_hi - x_lo) * iw;
    let py = |y: f64| MARGIN_T + (y_hi - tx(y)) / (y_hi - y_lo) * ih;
    let py_raw = |yt: f64| MARGIN_T + (y_hi - yt) / (y_hi - y_lo) * ih;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{PLOT_W}" height="{PLOT_H}" viewBox="0 0 {PLOT_W} {PLOT_H}">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{PLOT_W}" height="{PLOT_H}" fill="white"/>"#
    );
    for b in bands {
        let top = if b.y_hi.is_finite() { py(b.y_hi) } else { MARGIN_T };
        let bot = if b.y_lo.is_finite() {
            py(b.y_lo)
        } else {
            MARGIN_T + ih
        };
        let (top, bot) = (top.clamp(MARGIN_T, MARGIN_T + ih), bot.clamp(MARGIN_T, MARGIN_T + ih));
        if bot > top {
            let _ = writeln!(
                s,
                r#"<rect x="{MARGIN_L}" y="{top:.2}" width="{iw:.2}" height="{h:.2}" fill="{c}" fill-opacity="0.15"/>"#,
                h = bot - top,
                c = b.color
            );
        }
    }
    // Axes and ticks.
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{iw:.2}" height="{ih:.2}" fill="none" stroke="black" stroke-width="1"/>"#
    );
    for t in 0..=4 {
        let fx = x_lo + (x_hi - x_lo) * t as f64 / 4.0;
        let fyt = y_lo + (y_hi - y_lo) * t as f64 / 4.0;
        let xx = px(fx);
        let yy = py_raw(fyt);
        let ylab = if log_y {
            format!("1e{fyt:.1}")
        } else {
            format!("{fyt:.3}")
        };
        let _ = writeln!(
            s,
            r#"<line x1="{xx:.2}" y1="{b0:.2}" x2="{xx:.2}" y2="{b1:.2}" stroke="gray" stroke-width="0.5"/>"#,
            b0 = MARGIN_T + ih,
            b1 = MARGIN_T + ih + 4.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{xx:.2}" y="{ty:.2}" font-size="11" text-anchor="middle">{fx:.1}</text>"#,
            ty = MARGIN_T + ih + 18.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{tx2:.2}" y="{yv:.2}" font-size="11" text-anchor="end">{ylab}</text>"#,
            tx2 = MARGIN_L - 6.0,
            yv = yy + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{cx:.2}" y="{PLOT_H}" font-size="12" text-anchor="middle" dy="-6">{x_label}</text>"#,
        cx = MARGIN_L + iw / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{cy:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {cy:.2})">{y_label}</text>"#,
        cy = MARGIN_T + ih / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{cx:.2}" y="22" font-size="14" text-anchor="middle" font-weight="bold">{title}</text>"#,
        cx = PLOT_W / 2.0
    );
    // Series polylines and legend.
    for (si, sr) in series.iter().enumerate() {
        let pts: Vec<String> = sr
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.4"/>"#,
            pts.join(" "),
            sr.color
        );
        let ly = MARGIN_T + 14.0 + 16.0 * si as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{x0:.2}" y1="{ly:.2}" x2="{x1:.2}" y2="{ly:.2}" stroke="{c}" stroke-width="2"/>"#,
            x0 = MARGIN_L + iw - 130.0,
            x1 = MARGIN_L + iw - 110.0,
            c = sr.color
        );
        let _ = writeln!(
            s,
            r#"<text x="{tx3:.2}" y="{ty:.2}" font-size="11">{n}</text>"#,
            tx3 = MARGIN_L + iw - 104.0,
            ty = ly + 4.0,
            n = sr.name
        );
    }
    s.push_str("</svg>\n");
    s
}

fn color_for(kind: ControllerKind) -> &'static str {
    match kind {
        ControllerKind::Dnko => "#1f77b4",
        ControllerKind::Pi => "#d62728",
    }
}

/// Plot bounds used for feasible-region shading.
#[derive(Debug, Clone, Copy)]
pub struct PlotBounds {
    pub t_reb_min: f64,
    pub t_reb_max: f64,
    pub t1_la_max: f64,
    pub t1_ld_min: f64,
    pub capture_floor_pct: f64,
}

impl Default for PlotBounds {
    fn default() -> Self {
        let cfg = crate::empc::EmpcConfig::default();
        Self {
            t_reb_min: cfg.t_reb_min,
            t_reb_max: cfg.t_reb_max,
            t1_la_max: cfg.t1_la_max,
            t1_ld_min: cfg.t1_ld_min,
            capture_floor_pct: cfg.capture_floor_pct,
        }
    }
}

/// Write the benchmark plot set. Returns the created files; an empty run
/// list produces no files and succeeds.
pub fn emit_plots(
    runs: &[ScenarioRun],
    bounds: &PlotBounds,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    if runs.is_empty() {
        return Ok(files);
    }
    std::fs::create_dir_all(out_dir)?;
    let mut conditions: Vec<String> = runs.iter().map(|r| r.condition.name.clone()).collect();
    conditions.sort();
    conditions.dedup();

    let hours = |r: &StepLogRow| r.time_s / 3600.0;
    for cond in &conditions {
        let group: Vec<&ScenarioRun> = runs
            .iter()
            .filter(|r| &r.condition.name == cond)
            .collect();

        // Cumulative economic cost.
        let series: Vec<Series<'_>> = group
            .iter()
            .map(|r| {
                let mut acc = 0.0;
                Series {
                    name: match r.controller {
                        ControllerKind::Dnko => "DNKO-EMPC",
                        ControllerKind::Pi => "PI",
                    },
                    color: color_for(r.controller),
                    points: r
                        .rows
                        .iter()
                        .map(|row| {
                            acc += row.step_cost_usd;
                            (hours(row), acc)
                        })
                        .collect(),
                }
            })
            .collect();
        let path = out_dir.join(format!("cost_{cond}.svg"));
        std::fs::write(
            &path,
            svg_chart(
                &format!("Cumulative economic cost, {cond}"),
                "time, h",
                "cost, $",
                &series,
                &[],
                false,
            ),
        )?;
        files.push(path);

        // Capture-rate traces with the floor shaded as infeasible below.
        let series: Vec<Series<'_>> = group
            .iter()
            .map(|r| Series {
                name: match r.controller {
                    ControllerKind::Dnko => "DNKO-EMPC",
                    ControllerKind::Pi => "PI",
                },
                color: color_for(r.controller),
                points: r.rows.iter().map(|row| (hours(row), row.y[1])).collect(),
            })
            .collect();
        let path = out_dir.join(format!("capture_{cond}.svg"));
        std::fs::write(
            &path,
            svg_chart(
                &format!("Carbon capture rate, {cond}"),
                "time, h",
                "capture, %",
                &series,
                &[Band {
                    y_lo: bounds.capture_floor_pct,
                    y_hi: f64::INFINITY,
                    color: "#2ca02c",
                }],
                false,
            ),
        )?;
        files.push(path);

        // Output trajectories with feasible-region shading.
        for r in &group {
            let mk = |ch: usize| -> Vec<(f64, f64)> {
                r.rows.iter().map(|row| (hours(row), row.y[ch])).collect()
            };
            let path = out_dir.join(format!("outputs_{cond}_{}.svg", r.controller));
            let mut svg = svg_chart(
                &format!("Reboiler temperature, {cond}, {}", r.controller),
                "time, h",
                "T_reb, K",
                &[Series {
                    name: "T_reb",
                    color: color_for(r.controller),
                    points: mk(0),
                }],
                &[Band {
                    y_lo: bounds.t_reb_min,
                    y_hi: bounds.t_reb_max,
                    color: "#2ca02c",
                }],
                false,
            );
            svg.push_str(&svg_chart(
                &format!("Column bottom temperatures, {cond}, {}", r.controller),
                "time, h",
                "T, K",
                &[
                    Series {
                        name: "T1_LA",
                        color: "#9467bd",
                        points: mk(2),
                    },
                    Series {
                        name: "T1_LD",
                        color: "#8c564b",
                        points: mk(3),
                    },
                ],
                &[Band {
                    y_lo: bounds.t1_ld_min,
                    y_hi: bounds.t1_la_max,
                    color: "#2ca02c",
                }],
                false,
            ));
            // Stack the two charts into one file.
            let stacked = svg
                .replacen(
                    &format!(r#"height="{PLOT_H}" viewBox="0 0 {PLOT_W} {PLOT_H}""#),
                    &format!(
                        r#"height="{h}" viewBox="0 0 {PLOT_W} {h}""#,
                        h = 2.0 * PLOT_H
                    ),
                    1,
                )
                .replacen(
                    &format!("</svg>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PLOT_W}\" height=\"{PLOT_H}\" viewBox=\"0 0 {PLOT_W} {PLOT_H}\">"),
                    &format!(r#"<g transform="translate(0 {PLOT_H})">"#),
                    1,
                )
                .replacen("</svg>\n", "</g></svg>\n", 1);
            std::fs::write(&path, stacked)?;
            files.push(path);
        }
    }
    Ok(files)
}

/// Training-loss curves (train + validation, log scale).
pub fn plot_training_curves(report: &TrainReport, path: &Path) -> Result<()> {
    let train: Vec<(f64, f64)> = report
        .curve
        .iter()
        .map(|e| (e.epoch as f64, e.train_loss))
        .collect();
    let val: Vec<(f64, f64)> = report
        .curve
        .iter()
        .filter(|e| e.val_loss.is_finite())
        .map(|e| (e.epoch as f64, e.val_loss))
        .collect();
    let svg = svg_chart(
        "Training and validation loss",
        "epoch",
        "loss (log10)",
        &[
            Series {
                name: "train",
                color: "#1f77b4",
                points: train,
            },
            Series {
                name: "validation",
                color: "#ff7f0e",
                points: val,
            },
        ],
        &[],
        true,
    );
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, svg)?;
    Ok(())
}
