//! Convex economic MPC on top of a frozen per-step surrogate context.
//!
//! The lifted trajectory is affine in the stacked input sequence, so the
//! receding-horizon problem condenses into a dense QP over the T_f
//! normalized inputs: economic stage cost (convex quadratic through the
//! nonnegative diagonal Q_k) plus fuel cost plus an input-rate penalty,
//! subject to the input box, the output set, and an average-capture
//! floor. If the hard problem is infeasible, the capture floor alone is
//! relaxed with a heavily penalized slack variable.
//!
//! Costs are accounted in $/s: the surrogate's normalized stage cost is
//! de-normalized analytically and the fuel price converts kg/h to $/s,
//! so both objective terms share units.

use std::collections::VecDeque;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::dataset::Normalizer;
use crate::dnko::{DnkoModel, EncodedContext};
use crate::error::{Error, Result};
use crate::plant::{ControlInput, PlantConfig};
use crate::qp::{self, QpProblem, QpSettings, QpStatus};

pub const N_U: usize = 3;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct EmpcConfig {
    pub t_f: usize,
    /// Physical input box (F_L m3/h, F_fuel kg/h, F_sw m3/h).
    pub u_min: [f64; N_U],
    pub u_max: [f64; N_U],
    /// Reboiler temperature band, K.
    pub t_reb_min: f64,
    pub t_reb_max: f64,
    /// Absorber bottom liquid temperature cap, K.
    pub t1_la_max: f64,
    /// Desorber bottom liquid temperature floor, K.
    pub t1_ld_min: f64,
    /// Average-capture floor over the horizon, percent.
    pub capture_floor_pct: f64,
    /// Diagonal input-rate penalty in normalized input units.
    pub r_weight: f64,
    /// Slack penalty weight.
    pub w_s: f64,
    /// Fuel price, $/kg.
    pub fuel_price_per_kg: f64,
}

impl Default for EmpcConfig {
    fn default() -> Self {
        let cfg = PlantConfig::default();
        let (u_min, u_max) = cfg.input_box();
        Self {
            t_f: 16,
            u_min,
            u_max,
            t_reb_min: 385.15,
            t_reb_max: 398.1,
            t1_la_max: 353.15,
            t1_ld_min: 353.15,
            capture_floor_pct: 70.0,
            r_weight: 0.1,
            w_s: 1e6,
            fuel_price_per_kg: cfg.fuel_price_per_kg,
        }
    }
}

impl EmpcConfig {
    /// Apply TOML key overrides onto this configuration; unknown keys
    /// are rejected.
    pub fn with_overrides(&self, toml_text: &str) -> Result<Self> {
        let mut value = toml::Value::try_from(self)
            .map_err(|e| Error::Config(format!("serialize config: {e}")))?;
        let overrides: toml::Table = toml::from_str(toml_text)?;
        if let Some(base) = value.as_table_mut() {
            for (k, v) in &overrides {
                if !base.contains_key(k) {
                    return Err(Error::Config(format!("unknown config key `{k}`")));
                }
                base.insert(k.clone(), v.clone());
            }
        }
        let cfg: Self = value
            .try_into()
            .map_err(|e| Error::Config(format!("apply overrides: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.t_f == 0 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        if self.r_weight < 0.0 || self.w_s <= 0.0 {
            return Err(Error::Config(format!(
                "penalties must satisfy r_weight >= 0 (got {}) and w_s > 0 (got {})",
                self.r_weight, self.w_s
            )));
        }
        for i in 0..N_U {
            if self.u_min[i] >= self.u_max[i] {
                return Err(Error::Config(format!(
                    "empty input box on coordinate {i}: [{}, {}]",
                    self.u_min[i], self.u_max[i]
                )));
            }
        }
        Ok(())
    }
}

/// The condensed QP plus the affine maps needed to reconstruct
/// predictions from a solution.
pub struct CondensedQp {
    pub prob: QpProblem,
    pub has_slack: bool,
    /// Objective constant dropped from the QP ($/s over the horizon).
    pub obj_const: f64,
    t_f: usize,
    /// S_j: d g_j / d uhat for j = 1..=T_f, each n_obs x (N_U T_f).
    s: Vec<DMatrix<f64>>,
    /// Input-independent part of g_j.
    w: Vec<DVector<f64>>,
    ctx: EncodedContext,
    norm: Normalizer,
    /// Normalized disturbance forecast.
    d_hat: Vec<f64>,
}

impl CondensedQp {
    pub fn n_inputs(&self) -> usize {
        N_U * self.t_f
    }

    /// Physical output trajectory [T_reb, capture %, T1_LA, T1_LD]
    /// implied by a stacked normalized input vector.
    pub fn predicted_y(&self, uhat: &DVector<f64>) -> Vec<[f64; 4]> {
        let u = uhat.rows(0, self.n_inputs()).into_owned();
        (0..self.t_f)
            .map(|j| {
                let g = &self.w[j] + &self.s[j] * &u;
                let yn = &self.ctx.c * &g + &self.ctx.f * self.d_hat[j];
                self.norm.denorm_y(&[yn[0], yn[1], yn[2], yn[3]])
            })
            .collect()
    }

    /// Horizon-average predicted capture rate, percent.
    pub fn predicted_capture(&self, uhat: &DVector<f64>) -> f64 {
        self.predicted_y(uhat).iter().map(|y| y[1]).sum::<f64>() / self.t_f as f64
    }

    /// Full objective value including the dropped constant.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        self.prob.objective(x) + self.obj_const
    }
}

/// Condense the horizon problem over the stacked normalized inputs.
/// `d_forecast` holds physical engine loads for j = 0..T_f-1 and
/// `prev_u` the previously applied physical input (rate-penalty anchor).
pub fn build_qp(
    ctx: &EncodedContext,
    a: &DMatrix<f64>,
    norm: &Normalizer,
    d_forecast: &[f64],
    prev_u: &[f64; N_U],
    cfg: &EmpcConfig,
    with_slack: bool,
) -> Result<CondensedQp> {
    cfg.validate()?;
    let t_f = cfg.t_f;
    if d_forecast.len() != t_f {
        return Err(Error::Shape(format!(
            "disturbance forecast has {} entries, horizon needs {t_f}",
            d_forecast.len()
        )));
    }
    let h = ctx.g0.len();
    let nu = N_U * t_f;
    let nvar = nu + usize::from(with_slack);
    let d_hat: Vec<f64> = d_forecast.iter().map(|&d| norm.norm_d(d)).collect();
    let prev_u_hat = norm.norm_u(prev_u);

    // Powers of A and the affine rollout maps
    //   g_j = A^j g0 + sum_{i<j} A^{j-1-i} (B uhat_i + D dhat_i).
    let mut apow = Vec::with_capacity(t_f + 1);
    apow.push(DMatrix::identity(h, h));
    for j in 1..=t_f {
        apow.push(&apow[j - 1] * a);
    }
    let mut s = Vec::with_capacity(t_f);
    let mut w = Vec::with_capacity(t_f);
    for j in 1..=t_f {
        let mut sj = DMatrix::zeros(h, nu);
        let mut wj = &apow[j] * &ctx.g0;
        for i in 0..j {
            let blk = &apow[j - 1 - i] * &ctx.b;
            sj.view_mut((0, N_U * i), (h, N_U)).copy_from(&blk);
            wj += &apow[j - 1 - i] * &ctx.d * d_hat[i];
        }
        s.push(sj);
        w.push(wj);
    }

    // Objective m(x) = x' M x + f' x + const; the solver uses P = 2M.
    let mut m = DMatrix::zeros(nvar, nvar);
    let mut f = DVector::zeros(nvar);
    let mut obj_const = 0.0;

    // Economic stage cost, de-normalized: c_std (g'Qg + P'g + b) + c_mean.
    let c_std = norm.c_std;
    let q_diag = &ctx.q;
    for j in 0..t_f {
        let sj = &s[j];
        let wj = &w[j];
        // S' diag(q) S and the matching linear/constant pieces.
        let qs = DMatrix::from_fn(h, nu, |r, c| q_diag[r] * sj[(r, c)]);
        let quad = sj.transpose() * qs * c_std;
        for rr in 0..nu {
            for cc in 0..nu {
                m[(rr, cc)] += quad[(rr, cc)];
            }
        }
        let lin = sj.transpose()
            * (DVector::from_fn(h, |r, _| 2.0 * q_diag[r] * wj[r]) + &ctx.p)
            * c_std;
        for i in 0..nu {
            f[i] += lin[i];
        }
        obj_const += c_std
            * (wj.iter().enumerate().map(|(r, v)| q_diag[r] * v * v).sum::<f64>()
                + ctx.p.dot(wj)
                + ctx.bias)
            + norm.c_mean;
    }

    // Fuel cost: (beta / 3600) * F_fuel, with F_fuel in kg/h.
    let beta_ps = cfg.fuel_price_per_kg / 3600.0;
    for j in 0..t_f {
        f[N_U * j + 1] += beta_ps * norm.u_std[1];
        obj_const += beta_ps * norm.u_mean[1];
    }

    // Input-rate penalty sum_j ||u_j - u_{j-1}||^2_R in normalized units.
    let r = cfg.r_weight;
    for j in 0..t_f {
        for c in 0..N_U {
            let i = N_U * j + c;
            m[(i, i)] += r;
            if j + 1 < t_f {
                m[(i, i)] += r;
                let k = N_U * (j + 1) + c;
                m[(i, k)] -= r;
                m[(k, i)] -= r;
            }
        }
        if j == 0 {
            for c in 0..N_U {
                f[c] -= 2.0 * r * prev_u_hat[c];
                obj_const += r * prev_u_hat[c] * prev_u_hat[c];
            }
        }
    }

    if with_slack {
        m[(nu, nu)] += cfg.w_s;
    }

    // Constraints: input box, per-step output set, average-capture floor,
    // and slack nonnegativity.
    let n_rows = nu + 3 * t_f + 1 + usize::from(with_slack);
    let mut amat = DMatrix::zeros(n_rows, nvar);
    let mut l = DVector::from_element(n_rows, f64::NEG_INFINITY);
    let mut u_b = DVector::from_element(n_rows, f64::INFINITY);
    let mut row = 0;

    for j in 0..t_f {
        for c in 0..N_U {
            amat[(row, N_U * j + c)] = 1.0;
            l[row] = (cfg.u_min[c] - norm.u_mean[c]) / norm.u_std[c];
            u_b[row] = (cfg.u_max[c] - norm.u_mean[c]) / norm.u_std[c];
            row += 1;
        }
    }

    // De-normalized output row for channel `ch` at step j:
    // y_std[ch] (C_ch (w_j + S_j u) + F_ch dhat_j) + y_mean[ch].
    let out_row = |j: usize, ch: usize| -> (DVector<f64>, f64) {
        let c_ch = ctx.c.row(ch);
        let coeffs = (c_ch * &s[j]).transpose() * norm.y_std[ch];
        let offset = norm.y_std[ch] * (ctx.c.row(ch).transpose().dot(&w[j]) + ctx.f[ch] * d_hat[j])
            + norm.y_mean[ch];
        (coeffs, offset)
    };

    for j in 0..t_f {
        let (c0, k0) = out_row(j, 0);
        for i in 0..nu {
            amat[(row, i)] = c0[i];
        }
        l[row] = cfg.t_reb_min - k0;
        u_b[row] = cfg.t_reb_max - k0;
        row += 1;

        let (c2, k2) = out_row(j, 2);
        for i in 0..nu {
            amat[(row, i)] = c2[i];
        }
        u_b[row] = cfg.t1_la_max - k2;
        row += 1;

        let (c3, k3) = out_row(j, 3);
        for i in 0..nu {
            amat[(row, i)] = c3[i];
        }
        l[row] = cfg.t1_ld_min - k3;
        row += 1;
    }

    // Average-capture floor (relaxed by the slack when present).
    let mut cap_offset = 0.0;
    for j in 0..t_f {
        let (c1, k1) = out_row(j, 1);
        for i in 0..nu {
            amat[(row, i)] += c1[i] / t_f as f64;
        }
        cap_offset += k1 / t_f as f64;
    }
    if with_slack {
        amat[(row, nu)] = 1.0;
    }
    l[row] = cfg.capture_floor_pct - cap_offset;
    row += 1;

    if with_slack {
        amat[(row, nu)] = 1.0;
        l[row] = 0.0;
        row += 1;
    }
    debug_assert_eq!(row, n_rows);

    let prob = QpProblem {
        p: &m + m.transpose(),
        q: f,
        a: amat,
        l,
        u: u_b,
    };
    Ok(CondensedQp {
        prob,
        has_slack: with_slack,
        obj_const,
        t_f,
        s,
        w,
        ctx: ctx.clone(),
        norm: norm.clone(),
        d_hat,
    })
}

/// Per-step controller log record.
#[derive(Debug, Clone)]
pub struct StepLog {
    /// Objective value at the optimum, $/s summed over the horizon.
    pub objective: f64,
    /// Capture-floor slack (0 on the hard path).
    pub slack: f64,
    pub kkt_residual: f64,
    pub solve_ms: f64,
    pub iterations: usize,
    /// True when the hard problem was infeasible and the relaxed
    /// problem produced the applied input.
    pub fallback_used: bool,
    /// Horizon-average predicted capture, percent.
    pub predicted_capture: f64,
}

struct HistEntry {
    x: DVector<f64>,
    u: [f64; N_U],
    d: f64,
}

/// Receding-horizon controller: keeps the measurement history the
/// encoder needs and the previously applied input.
pub struct EmpcController {
    pub model: DnkoModel,
    pub cfg: EmpcConfig,
    pub qp_settings: QpSettings,
    hist: VecDeque<HistEntry>,
    prev_u: Option<[f64; N_U]>,
}

impl EmpcController {
    pub fn new(model: DnkoModel, cfg: EmpcConfig) -> Result<Self> {
        cfg.validate()?;
        if model.spec.t_f != cfg.t_f {
            return Err(Error::Config(format!(
                "model horizon {} differs from controller horizon {}",
                model.spec.t_f, cfg.t_f
            )));
        }
        Ok(Self {
            model,
            cfg,
            qp_settings: QpSettings::default(),
            hist: VecDeque::new(),
            prev_u: None,
        })
    }

    fn mid_box(&self) -> [f64; N_U] {
        std::array::from_fn(|i| 0.5 * (self.cfg.u_min[i] + self.cfg.u_max[i]))
    }

    /// Compute and apply one control action from the current partial
    /// measurement and engine load. Cold start pads the history with the
    /// current measurement.
    pub fn control_step(
        &mut self,
        x_k: &DVector<f64>,
        d_k: f64,
    ) -> Result<(ControlInput, StepLog)> {
        let tau = self.model.spec.tau;
        let anchor = self.prev_u.unwrap_or_else(|| self.mid_box());
        while self.hist.len() < tau {
            self.hist.push_front(HistEntry {
                x: x_k.clone(),
                u: anchor,
                d: d_k,
            });
        }
        let xs: Vec<DVector<f64>> = self.hist.iter().map(|e| e.x.clone()).collect();
        let us: Vec<[f64; N_U]> = self.hist.iter().map(|e| e.u).collect();
        let ds: Vec<f64> = self.hist.iter().map(|e| e.d).collect();
        let ctx = self.model.encode(&xs, &us, &ds, x_k)?;

        // Constant-hold disturbance forecast.
        let d_forecast = vec![d_k; self.cfg.t_f];
        let start = Instant::now();
        let hard = build_qp(
            &ctx,
            &self.model.params.a,
            &self.model.norm,
            &d_forecast,
            &anchor,
            &self.cfg,
            false,
        )?;
        let hard_sol = qp::solve(&hard.prob, &self.qp_settings)?;
        let (qp_used, sol, fallback) = if hard_sol.status == QpStatus::Solved {
            (hard, hard_sol, false)
        } else {
            let soft = build_qp(
                &ctx,
                &self.model.params.a,
                &self.model.norm,
                &d_forecast,
                &anchor,
                &self.cfg,
                true,
            )?;
            let soft_sol = qp::solve(&soft.prob, &self.qp_settings)?;
            if soft_sol.status != QpStatus::Solved {
                // The box and output constraints alone admit no input
                // sequence; the relaxation cannot help.
                return Err(Error::ControlInfeasible(
                    "input box and output constraints admit no input sequence".into(),
                ));
            }
            (soft, soft_sol, true)
        };
        let solve_ms = start.elapsed().as_secs_f64() * 1e3;

        let slack = if qp_used.has_slack {
            sol.x[qp_used.n_inputs()].max(0.0)
        } else {
            0.0
        };
        let u0_hat = [sol.x[0], sol.x[1], sol.x[2]];
        let u0 = self.model.norm.denorm_u(&u0_hat);
        let clipped: [f64; N_U] =
            std::array::from_fn(|i| u0[i].clamp(self.cfg.u_min[i], self.cfg.u_max[i]));
        let applied = ControlInput::from_array(clipped);

        let log = StepLog {
            objective: qp_used.objective(&sol.x),
            slack,
            kkt_residual: sol.kkt_residual,
            solve_ms,
            iterations: sol.iterations,
            fallback_used: fallback,
            predicted_capture: qp_used.predicted_capture(&sol.x),
        };
        log::debug!(
            "empc step: obj {:.4} slack {:.3} kkt {:.2e} {:.1} ms fallback {}",
            log.objective,
            log.slack,
            log.kkt_residual,
            log.solve_ms,
            log.fallback_used
        );

        self.hist.push_back(HistEntry {
            x: x_k.clone(),
            u: clipped,
            d: d_k,
        });
        while self.hist.len() > tau {
            self.hist.pop_front();
        }
        self.prev_u = Some(clipped);
        Ok((applied, log))
    }
}
