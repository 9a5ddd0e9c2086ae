//! Implicit-Euler time stepping of the plant DAE.
//!
//! Each step solves the 110-dimensional nonlinear system
//!   x' - x - dt f(x', z', u, d) = 0
//!   p(x', z', u, d) = 0
//! with a damped Newton iteration on a finite-difference Jacobian.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::plant::physics::{capture_rate, co2_flue_rate, flue_volumetric_rate, stage_cost};
use crate::plant::rhs::{algebraic_residual, plant_rhs};
use crate::plant::state::{
    AlgebraicState, Column, ControlInput, Disturbance, PlantOutput, PlantState, Species, N_ALG,
    N_STATE,
};
use crate::plant::PlantConfig;

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    /// Scaled residual infinity-norm tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Relative step for finite-difference Jacobian columns.
    pub fd_eps: f64,
    /// Smallest line-search damping factor before giving up on descent.
    pub min_damping: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 50,
            fd_eps: 1e-6,
            min_damping: 1.0 / 64.0,
        }
    }
}

fn scaled_inf_norm(r: &DVector<f64>, w: &DVector<f64>) -> f64 {
    r.iter()
        .zip(w.iter())
        .map(|(ri, wi)| (ri / (1.0 + wi.abs())).abs())
        .fold(0.0, f64::max)
}

/// Solve F(w) = 0 by damped Newton with a forward-difference Jacobian.
/// `w` is the initial guess; returns the solution and iteration count.
pub(crate) fn damped_newton<F>(
    mut w: DVector<f64>,
    mut f: F,
    opts: &NewtonOptions,
) -> Result<(DVector<f64>, usize)>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = w.len();
    let mut r = f(&w)?;
    let mut norm = scaled_inf_norm(&r, &w);
    for iter in 0..opts.max_iter {
        if log::log_enabled!(log::Level::Trace) {
            let worst = (0..n)
                .max_by(|a, b| {
                    let sa = (r[*a] / (1.0 + w[*a].abs())).abs();
                    let sb = (r[*b] / (1.0 + w[*b].abs())).abs();
                    sa.partial_cmp(&sb).unwrap()
                })
                .unwrap_or(0);
            log::trace!("newton iter {iter}: norm={norm:.3e} worst component {worst} (r={:.3e}, w={:.3e})", r[worst], w[worst]);
        }
        if norm <= opts.tol {
            return Ok((w, iter));
        }
        // Central-difference Jacobian, column by column.
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let h = opts.fd_eps * (1.0 + w[j].abs());
            let mut wp = w.clone();
            wp[j] += h;
            let rp = f(&wp)?;
            wp[j] = w[j] - h;
            let rm = f(&wp)?;
            for i in 0..n {
                jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let lu = jac.lu();
        let delta = lu.solve(&(-&r)).ok_or_else(|| Error::Integration {
            step: iter,
            residual: norm,
            iterations: iter,
        })?;

        // Backtracking on the scaled residual norm.
        let mut alpha = 1.0;
        loop {
            let w_try = &w + alpha * &delta;
            match f(&w_try) {
                Ok(r_try) => {
                    let n_try = scaled_inf_norm(&r_try, &w_try);
                    if n_try < norm || n_try <= opts.tol {
                        w = w_try;
                        r = r_try;
                        norm = n_try;
                        break;
                    }
                }
                Err(_) => {}
            }
            alpha *= 0.5;
            if alpha < opts.min_damping {
                // No descent direction even heavily damped: report the
                // current residual so the caller can shrink its step.
                return Err(Error::Integration {
                    step: 0,
                    residual: norm,
                    iterations: iter,
                });
            }
        }
    }
    if norm <= opts.tol {
        Ok((w, opts.max_iter))
    } else {
        Err(Error::Integration {
            step: 0,
            residual: norm,
            iterations: opts.max_iter,
        })
    }
}

/// Solve the 7 algebraic equations for z at fixed x.
pub(crate) fn solve_algebraic(
    x: &PlantState,
    z_guess: &AlgebraicState,
    u_si: (f64, f64, f64),
    d: &Disturbance,
    cfg: &PlantConfig,
    opts: &NewtonOptions,
) -> Result<AlgebraicState> {
    let (z, _) = damped_newton(z_guess.0.clone(), |zv| {
        let z = AlgebraicState(zv.clone());
        algebraic_residual(x, &z, u_si, d, cfg)
    }, opts)?;
    Ok(AlgebraicState(z))
}

/// Plant simulator holding the current differential and algebraic state.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub cfg: PlantConfig,
    pub opts: NewtonOptions,
    x: PlantState,
    z: AlgebraicState,
    time_s: f64,
    steps: usize,
}

impl Simulator {
    pub fn new(cfg: PlantConfig, x: PlantState, z: AlgebraicState) -> Self {
        Self {
            cfg,
            opts: NewtonOptions::default(),
            x,
            z,
            time_s: 0.0,
            steps: 0,
        }
    }

    pub fn state(&self) -> &PlantState {
        &self.x
    }

    pub fn algebraic(&self) -> &AlgebraicState {
        &self.z
    }

    pub fn time_s(&self) -> f64 {
        self.time_s
    }

    /// Advance one sampling interval under the given input and load.
    pub fn step(&mut self, u: &ControlInput, d: &Disturbance) -> Result<PlantOutput> {
        let dt = self.cfg.dt_s;
        self.step_dt(u, d, dt)
    }

    /// Advance by an arbitrary interval (used by the steady-state solver).
    pub(crate) fn step_dt(
        &mut self,
        u: &ControlInput,
        d: &Disturbance,
        dt: f64,
    ) -> Result<PlantOutput> {
        u.check_in_box(&self.cfg)?;
        d.check_in_range(&self.cfg)?;
        let u_si = u.to_si();
        let x0 = self.x.0.clone();
        let cfg = self.cfg.clone();

        let mut w0 = DVector::zeros(N_STATE + N_ALG);
        w0.rows_mut(0, N_STATE).copy_from(&self.x.0);
        w0.rows_mut(N_STATE, N_ALG).copy_from(&self.z.0);

        let residual = |w: &DVector<f64>| -> Result<DVector<f64>> {
            let x = PlantState(w.rows(0, N_STATE).into_owned());
            let z = AlgebraicState(w.rows(N_STATE, N_ALG).into_owned());
            let fx = plant_rhs(&x, &z, u_si, d, &cfg)?;
            let pz = algebraic_residual(&x, &z, u_si, d, &cfg)?;
            let mut r = DVector::zeros(N_STATE + N_ALG);
            for i in 0..N_STATE {
                r[i] = w[i] - x0[i] - dt * fx[i];
            }
            for i in 0..N_ALG {
                r[N_STATE + i] = pz[i];
            }
            Ok(r)
        };

        let (w, _) = damped_newton(w0, residual, &self.opts).map_err(|e| match e {
            Error::Integration {
                residual,
                iterations,
                ..
            } => Error::Integration {
                step: self.steps,
                residual,
                iterations,
            },
            other => other,
        })?;

        let mut x_new = PlantState(w.rows(0, N_STATE).into_owned());
        // Clamp tiny negative concentrations introduced by the linear solve.
        for col in [Column::Absorber, Column::Desorber] {
            for s in crate::plant::state::SPECIES {
                for n in 0..5 {
                    for idx in [
                        PlantState::idx_liq_conc(col, s, n),
                        PlantState::idx_gas_conc(col, s, n),
                    ] {
                        if x_new.0[idx] < 0.0 && x_new.0[idx] > -1e-6 {
                            x_new.0[idx] = 0.0;
                        }
                    }
                }
            }
        }
        x_new.check_guard()?;

        self.x = x_new;
        self.z = AlgebraicState(w.rows(N_STATE, N_ALG).into_owned());
        self.time_s += dt;
        self.steps += 1;
        self.output(u, d)
    }

    /// Controlled outputs and logging quantities at the current state.
    pub fn output(&self, u: &ControlInput, d: &Disturbance) -> Result<PlantOutput> {
        let (_, f_fuel, _) = u.to_si();
        let flue_co2 = co2_flue_rate(d.phi_e, f_fuel, &self.cfg)?;
        let f_g = flue_volumetric_rate(flue_co2, &self.cfg)?;
        let c_top = self
            .x
            .gas_conc(Column::Absorber, Species::Co2, 4)
            .max(0.0);
        let treated_co2 = f_g * c_top * self.cfg.r_co2;
        let p_co2 = capture_rate(flue_co2.max(1e-12), treated_co2)?;
        Ok(PlantOutput {
            t_reb: self.x.t_reb(),
            p_co2,
            t1_la: self.x.liq_temp(Column::Absorber, 0),
            t1_ld: self.x.liq_temp(Column::Desorber, 0),
            flue_co2,
            treated_co2,
            stage_cost: stage_cost(treated_co2, &self.cfg),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn newton_solves_quadratic_system() {
        // x^2 = 4, y^2 = 9 from a poor start.
        let opts = NewtonOptions::default();
        let (w, _) = damped_newton(
            DVector::from_vec(vec![0.7, 10.0]),
            |w| Ok(DVector::from_vec(vec![w[0] * w[0] - 4.0, w[1] * w[1] - 9.0])),
            &opts,
        )
        .unwrap();
        assert_relative_eq!(w[0], 2.0, max_relative = 1e-7);
        assert_relative_eq!(w[1], 3.0, max_relative = 1e-7);
    }

    #[test]
    fn newton_linear_system_one_iteration_region() {
        let opts = NewtonOptions::default();
        let (w, _) = damped_newton(
            DVector::from_vec(vec![0.0, 0.0]),
            |w| {
                Ok(DVector::from_vec(vec![
                    2.0 * w[0] + w[1] - 5.0,
                    w[0] - w[1] + 2.0,
                ]))
            },
            &opts,
        )
        .unwrap();
        assert_relative_eq!(w[0], 1.0, max_relative = 1e-6);
        assert_relative_eq!(w[1], 3.0, max_relative = 1e-6);
    }

    #[test]
    fn newton_reports_failure_on_unsolvable() {
        let opts = NewtonOptions {
            max_iter: 8,
            ..NewtonOptions::default()
        };
        let r = damped_newton(
            DVector::from_vec(vec![0.0]),
            |w| Ok(DVector::from_vec(vec![w[0] * w[0] + 1.0])),
            &opts,
        );
        assert!(matches!(r, Err(Error::Integration { .. })));
    }
}
