//! PI set-point-tracking baseline: three SISO loops with clamping
//! anti-windup.
//!
//! Pairing (chosen by dominant steady-state gain):
//! fuel flow regulates the reboiler temperature, solvent flow regulates
//! the released (treated) CO2 mass flow, and seawater flow regulates the
//! absorber-bottom solvent temperature. Loops acting through cooling or
//! capture have negative gains.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::plant::{
    solve_steady_state, ControlInput, Disturbance, PlantConfig, PlantOutput, Simulator,
};

/// One SISO PI loop: u = bias + Kp e + Ki ∫e dt, clamped to [out_min,
/// out_max], with the integral frozen while the output is saturated in
/// the direction the error keeps pushing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoopCfg {
    pub kp: f64,
    pub ki: f64,
    pub setpoint: f64,
    pub bias: f64,
    pub out_min: f64,
    pub out_max: f64,
}

impl LoopCfg {
    fn validate(&self) -> bool {
        self.kp.is_finite() && self.ki.is_finite() && self.out_min < self.out_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiConfig {
    /// F_L <- released-CO2 mass flow (kg/h).
    pub solvent: LoopCfg,
    /// F_fuel <- reboiler temperature (K).
    pub fuel: LoopCfg,
    /// F_sw <- absorber-bottom solvent temperature (K).
    pub seawater: LoopCfg,
}

impl Default for PiConfig {
    fn default() -> Self {
        let cfg = PlantConfig::default();
        let (lo, hi) = cfg.input_box();
        Self {
            solvent: LoopCfg {
                kp: -0.02,
                ki: -2e-4,
                setpoint: 1797.94,
                bias: 0.5 * (lo[0] + hi[0]),
                out_min: lo[0],
                out_max: hi[0],
            },
            fuel: LoopCfg {
                kp: 100.0,
                ki: 1.0,
                setpoint: 398.14,
                bias: 0.5 * (lo[1] + hi[1]),
                out_min: lo[1],
                out_max: hi[1],
            },
            seawater: LoopCfg {
                kp: -4.0,
                ki: -0.02,
                setpoint: 325.0,
                bias: 0.5 * (lo[2] + hi[2]),
                out_min: lo[2],
                out_max: hi[2],
            },
        }
    }
}

/// Integral accumulators, in output units.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PiState {
    pub i_solvent: f64,
    pub i_fuel: f64,
    pub i_seawater: f64,
}

fn loop_step(cfg: &LoopCfg, meas: f64, integ: &mut f64, dt_s: f64) -> f64 {
    let e = cfg.setpoint - meas;
    let cand = *integ + cfg.ki * e * dt_s;
    let raw = cfg.bias + cfg.kp * e + cand;
    // Clamping anti-windup: accept the integral update only if the
    // output is unsaturated or the update backs away from the limit.
    if (raw > cfg.out_max && cand > *integ) || (raw < cfg.out_min && cand < *integ) {
        // keep previous integral
    } else {
        *integ = cand;
    }
    (cfg.bias + cfg.kp * e + *integ).clamp(cfg.out_min, cfg.out_max)
}

#[derive(Debug, Clone)]
pub struct PiController {
    pub cfg: PiConfig,
    pub state: PiState,
}

impl PiController {
    pub fn new(cfg: PiConfig) -> Self {
        assert!(
            cfg.solvent.validate() && cfg.fuel.validate() && cfg.seawater.validate(),
            "PI loop configuration invalid"
        );
        Self {
            cfg,
            state: PiState::default(),
        }
    }

    /// One control update from the current plant output.
    /// `treated_co2` enters in kg/s (simulator units) and is converted
    /// to kg/h to match the set-point units.
    pub fn step(&mut self, out: &PlantOutput, dt_s: f64) -> ControlInput {
        let treated_kgph = out.treated_co2 * 3600.0;
        let f_l = loop_step(
            &self.cfg.solvent,
            treated_kgph,
            &mut self.state.i_solvent,
            dt_s,
        );
        let f_fuel = loop_step(&self.cfg.fuel, out.t_reb, &mut self.state.i_fuel, dt_s);
        let f_sw = loop_step(
            &self.cfg.seawater,
            out.t1_la,
            &mut self.state.i_seawater,
            dt_s,
        );
        ControlInput::new(f_l, f_fuel, f_sw)
    }
}

/// Integrated absolute tracking error of a candidate configuration over
/// a constant-load closed loop, errors normalized by set-point scale.
pub fn closed_loop_iae(
    plant: &PlantConfig,
    pi: &PiConfig,
    phi_e: f64,
    steps: usize,
) -> Result<f64> {
    let u0 = ControlInput::mid_box(plant);
    let d = Disturbance::new(phi_e);
    let (x0, z0) = solve_steady_state(plant, &u0, &d)?;
    let mut sim = Simulator::new(plant.clone(), x0, z0);
    let mut ctrl = PiController::new(*pi);
    let mut out = sim.output(&u0, &d)?;
    let mut iae = 0.0;
    for _ in 0..steps {
        let u = ctrl.step(&out, plant.dt_s);
        out = sim.step(&u, &d)?;
        iae += (pi.fuel.setpoint - out.t_reb).abs() / 10.0
            + (pi.solvent.setpoint - out.treated_co2 * 3600.0).abs() / 500.0
            + (pi.seawater.setpoint - out.t1_la).abs() / 10.0;
    }
    Ok(iae)
}

/// Scripted gain search: per-loop grid over (Kp, Ki) scale factors,
/// loops tuned in sequence against the closed-loop IAE at the given
/// load. Deterministic; intended for the tune-pi command.
pub fn tune_pi(
    plant: &PlantConfig,
    start: &PiConfig,
    phi_e: f64,
    steps: usize,
) -> Result<(PiConfig, f64)> {
    let scales = [0.25, 0.5, 1.0, 2.0, 4.0];
    let mut best = *start;
    let mut best_iae = closed_loop_iae(plant, &best, phi_e, steps)?;
    for loop_idx in 0..3 {
        let base = best;
        for &sp in &scales {
            for &si in &scales {
                let mut cand = base;
                {
                    let lc = match loop_idx {
                        0 => &mut cand.solvent,
                        1 => &mut cand.fuel,
                        _ => &mut cand.seawater,
                    };
                    let bc = match loop_idx {
                        0 => &base.solvent,
                        1 => &base.fuel,
                        _ => &base.seawater,
                    };
                    lc.kp = bc.kp * sp;
                    lc.ki = bc.ki * si;
                }
                match closed_loop_iae(plant, &cand, phi_e, steps) {
                    Ok(iae) if iae < best_iae => {
                        best_iae = iae;
                        best = cand;
                    }
                    _ => {}
                }
            }
        }
        log::info!("tuned loop {loop_idx}: IAE {best_iae:.2}");
    }
    Ok((best, best_iae))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn flat_output(t_reb: f64, treated_kgps: f64, t1_la: f64) -> PlantOutput {
        PlantOutput {
            t_reb,
            p_co2: 0.0,
            t1_la,
            t1_ld: 0.0,
            flue_co2: 0.0,
            treated_co2: treated_kgps,
            stage_cost: 0.0,
        }
    }

    #[test]
    fn zero_error_returns_bias_point() {
        let cfg = PiConfig::default();
        let mut pi = PiController::new(cfg);
        let out = flat_output(
            cfg.fuel.setpoint,
            cfg.solvent.setpoint / 3600.0,
            cfg.seawater.setpoint,
        );
        let u = pi.step(&out, 40.0);
        assert_relative_eq!(u.f_l_m3ph, cfg.solvent.bias, epsilon = 1e-12);
        assert_relative_eq!(u.f_fuel_kgph, cfg.fuel.bias, epsilon = 1e-12);
        assert_relative_eq!(u.f_sw_m3ph, cfg.seawater.bias, epsilon = 1e-12);
    }

    #[test]
    fn pure_proportional_deviation_is_exact() {
        let mut cfg = PiConfig::default();
        cfg.fuel.ki = 0.0;
        cfg.fuel.kp = 10.0;
        let mut pi = PiController::new(cfg);
        // 2 K below set-point: deviation = Kp * 2 above bias.
        let out = flat_output(
            cfg.fuel.setpoint - 2.0,
            cfg.solvent.setpoint / 3600.0,
            cfg.seawater.setpoint,
        );
        let u = pi.step(&out, 40.0);
        assert_relative_eq!(u.f_fuel_kgph, cfg.fuel.bias + 20.0, epsilon = 1e-12);
    }

    #[test]
    fn outputs_always_inside_box() {
        let cfg = PiConfig::default();
        let plant = PlantConfig::default();
        let mut pi = PiController::new(cfg);
        for (t, f, ta) in [
            (300.0, 0.0, 250.0),
            (500.0, 10.0, 450.0),
            (398.0, 0.5, 330.0),
        ] {
            let u = pi.step(&flat_output(t, f, ta), 40.0);
            assert!(u.check_in_box(&plant).is_ok());
        }
    }

    #[test]
    fn integral_freezes_while_saturated() {
        let mut cfg = PiConfig::default();
        cfg.fuel.kp = 1e4;
        cfg.fuel.ki = 100.0;
        let mut pi = PiController::new(cfg);
        // Huge persistent error saturates the fuel output high.
        let out = flat_output(
            cfg.fuel.setpoint - 50.0,
            cfg.solvent.setpoint / 3600.0,
            cfg.seawater.setpoint,
        );
        pi.step(&out, 40.0);
        let i_after_first = pi.state.i_fuel;
        for _ in 0..10 {
            pi.step(&out, 40.0);
        }
        assert_eq!(pi.state.i_fuel, i_after_first);
        // A small reversed error leaves saturation and integrates again.
        let out2 = flat_output(
            cfg.fuel.setpoint + 0.001,
            cfg.solvent.setpoint / 3600.0,
            cfg.seawater.setpoint,
        );
        pi.step(&out2, 40.0);
        assert!(pi.state.i_fuel < i_after_first);
    }
}
