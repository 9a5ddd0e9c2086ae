//! Steady-state operating points via pseudo-transient continuation.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::plant::integrator::{damped_newton, solve_algebraic, NewtonOptions, Simulator};
use crate::plant::rhs::{algebraic_residual, plant_rhs};
use crate::plant::state::{
    AlgebraicState, Column, ControlInput, Disturbance, PlantState, Species,
};
use crate::plant::PlantConfig;

/// A physically plausible cold start used to seed steady-state solves.
pub(crate) fn initial_guess(cfg: &PlantConfig) -> (PlantState, AlgebraicState) {
    let mut x = PlantState::zeros();
    let c_mea = cfg.init_c_mea_kmol_per_m3;
    let c_co2 = cfg.init_c_co2_kmol_per_m3;
    let c_h2o = (cfg.rho_mol_liq_kmol_per_m3 - c_mea - c_co2).max(1.0);

    let c_co2_flue = cfg.q_flue_co2 * cfg.rho_flue_kg_per_m3 / cfg.r_co2;
    let c_n2_flue = (cfg.rho_flue_kg_per_m3 - c_co2_flue * cfg.r_co2) / 28.0;

    for n in 0..5 {
        // Absorber near the cooled lean feed temperature.
        x.0[PlantState::idx_liq_temp(Column::Absorber, n)] = 320.0;
        x.0[PlantState::idx_gas_temp(Column::Absorber, n)] = 318.0;
        // Desorber hot.
        x.0[PlantState::idx_liq_temp(Column::Desorber, n)] = 370.0;
        x.0[PlantState::idx_gas_temp(Column::Desorber, n)] = 375.0;

        for col in [Column::Absorber, Column::Desorber] {
            x.0[PlantState::idx_liq_conc(col, Species::N2, n)] = 1e-4;
            x.0[PlantState::idx_liq_conc(col, Species::Co2, n)] = c_co2;
            x.0[PlantState::idx_liq_conc(col, Species::Mea, n)] = c_mea;
            x.0[PlantState::idx_liq_conc(col, Species::H2o, n)] = c_h2o;
        }
        x.0[PlantState::idx_gas_conc(Column::Absorber, Species::N2, n)] = c_n2_flue;
        x.0[PlantState::idx_gas_conc(Column::Absorber, Species::Co2, n)] = 0.6 * c_co2_flue;
        x.0[PlantState::idx_gas_conc(Column::Desorber, Species::Co2, n)] = 0.005;
        x.0[PlantState::idx_gas_conc(Column::Desorber, Species::H2o, n)] = 0.025;
    }
    x.0[PlantState::IDX_T_TUBE] = 355.0;
    x.0[PlantState::IDX_T_SHELL] = 350.0;
    x.0[PlantState::IDX_T_REB] = 390.0;

    let mut z = AlgebraicState::zeros();
    z.0[0] = 1e-4;
    z.0[1] = 0.8 * c_co2;
    z.0[2] = c_mea;
    z.0[3] = cfg.rho_mol_liq_kmol_per_m3 - z.0[0] - z.0[1] - z.0[2];
    z.0[4] = 0.05;
    z.0[5] = z.0[1] / cfg.rho_mol_liq_kmol_per_m3;
    z.0[6] = 0.4;
    (x, z)
}

fn stationarity(
    x: &PlantState,
    z: &AlgebraicState,
    u: &ControlInput,
    d: &Disturbance,
    cfg: &PlantConfig,
) -> Result<f64> {
    let u_si = u.to_si();
    let fx = plant_rhs(x, z, u_si, d, cfg)?;
    let pz = algebraic_residual(x, z, u_si, d, cfg)?;
    let nx = fx
        .iter()
        .zip(x.0.iter())
        .map(|(f, xi)| (f / (1.0 + xi.abs())).abs())
        .fold(0.0, f64::max);
    let nz = pz.iter().map(|r| r.abs()).fold(0.0, f64::max);
    Ok(nx.max(nz))
}

/// Solve for the steady state at constant input and load by integrating
/// with geometrically growing step sizes until the right-hand side is
/// stationary.
pub fn solve_steady_state(
    cfg: &PlantConfig,
    u: &ControlInput,
    d: &Disturbance,
) -> Result<(PlantState, AlgebraicState)> {
    let (x0, z_guess) = initial_guess(cfg);
    let opts = NewtonOptions::default();
    let z0 = solve_algebraic(&x0, &z_guess, u.to_si(), d, cfg, &opts)?;
    let mut sim = Simulator::new(cfg.clone(), x0, z0);

    // Phase 1: pseudo-transient continuation to get near the attractor.
    // Grow the step while Newton keeps converging, shrink it on failure.
    let mut dt = 0.25;
    let dt_max = 200_000.0;
    let mut last_err = None;
    for round in 0..3 {
        for _ in 0..120 {
            let mut trial = sim.clone();
            let ok = (0..4).try_for_each(|_| trial.step_dt(u, d, dt).map(|_| ()));
            match ok {
                Ok(()) => {
                    sim = trial;
                    let s = stationarity(sim.state(), sim.algebraic(), u, d, cfg)?;
                    log::trace!("steady sweep: dt={dt:.3e} stationarity={s:.3e}");
                    if s < 1e-4 {
                        break;
                    }
                    dt = (dt * 1.8).min(dt_max);
                }
                Err(e) => {
                    log::trace!("steady sweep failed at dt={dt:.3e}: {e}");
                    dt *= 0.25;
                    if dt < 1e-4 {
                        dt = 0.25;
                        break;
                    }
                }
            }
        }

        // Phase 2: direct Newton on the stationary system.
        let u_si = u.to_si();
        let mut w0 = DVector::zeros(crate::plant::state::N_STATE + crate::plant::state::N_ALG);
        w0.rows_mut(0, crate::plant::state::N_STATE)
            .copy_from(&sim.state().0);
        w0.rows_mut(crate::plant::state::N_STATE, crate::plant::state::N_ALG)
            .copy_from(&sim.algebraic().0);
        let steady_opts = NewtonOptions {
            tol: 1e-10,
            max_iter: 100,
            ..NewtonOptions::default()
        };
        let cfg2 = cfg.clone();
        let d2 = *d;
        let result = damped_newton(
            w0,
            move |w| {
                let x = PlantState(w.rows(0, crate::plant::state::N_STATE).into_owned());
                let z = AlgebraicState(
                    w.rows(crate::plant::state::N_STATE, crate::plant::state::N_ALG)
                        .into_owned(),
                );
                let fx = plant_rhs(&x, &z, u_si, &d2, &cfg2)?;
                let pz = algebraic_residual(&x, &z, u_si, &d2, &cfg2)?;
                let mut r = DVector::zeros(w.len());
                r.rows_mut(0, crate::plant::state::N_STATE).copy_from(&fx);
                r.rows_mut(crate::plant::state::N_STATE, crate::plant::state::N_ALG)
                    .copy_from(&pz);
                Ok(r)
            },
            &steady_opts,
        );
        match result {
            Ok((w, _)) => {
                let mut x = PlantState(w.rows(0, crate::plant::state::N_STATE).into_owned());
                for v in x.0.iter_mut() {
                    if *v < 0.0 && *v > -1e-6 {
                        *v = 0.0;
                    }
                }
                let z = AlgebraicState(
                    w.rows(crate::plant::state::N_STATE, crate::plant::state::N_ALG)
                        .into_owned(),
                );
                x.check_guard()?;
                return Ok((x, z));
            }
            Err(e) => {
                log::trace!("steady direct Newton failed (round {round}): {e}");
                last_err = Some(e);
            }
        }
    }
    Err(last_err.unwrap_or(Error::Integration {
        step: 0,
        residual: f64::NAN,
        iterations: 0,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::Simulator;

    #[test]
    fn steady_state_is_stationary_and_physical() {
        let cfg = PlantConfig::default();
        let u = ControlInput::mid_box(&cfg);
        let d = Disturbance::new(0.6);
        let (x, z) = solve_steady_state(&cfg, &u, &d).unwrap();
        x.check_guard().unwrap();
        let s = stationarity(&x, &z, &u, &d, &cfg).unwrap();
        assert!(s < 1e-8, "stationarity {s}");

        // Holding the input, one sampling step barely moves the state.
        let mut sim = Simulator::new(cfg.clone(), x.clone(), z.clone());
        sim.step(&u, &d).unwrap();
        let drift = (&sim.state().0 - &x.0).amax();
        assert!(drift < 1e-6, "drift {drift}");

        let out = sim.output(&u, &d).unwrap();
        assert!(out.p_co2 > 0.0 && out.p_co2 < 100.0, "capture {}", out.p_co2);
        assert!(out.t_reb > 330.0 && out.t_reb < 450.0, "t_reb {}", out.t_reb);
    }
}
