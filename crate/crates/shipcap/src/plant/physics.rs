//! Engine, flue-gas, heat-supply, and economic relations.
//!
//! These are the closed-form plant relations: flue CO2 generation,
//! volumetric flue flow, waste-heat recovery, turbine heat, the
//! seawater heat exchanger energy balance, the capture-rate definition,
//! and the carbon-tax stage cost. All flows here are SI per-second.

use crate::error::{Error, Result};
use crate::plant::PlantConfig;

/// CO2 mass flow rate in the flue gas, kg/s, from the engine load
/// (fraction of maximum output of the two engines) and the turbine fuel
/// flow in kg/s.
pub fn co2_flue_rate(phi_e: f64, f_fuel_kgps: f64, cfg: &PlantConfig) -> Result<f64> {
    if phi_e < 0.0 {
        return Err(Error::Domain(format!("engine load {phi_e} < 0")));
    }
    if f_fuel_kgps < 0.0 {
        return Err(Error::Domain(format!("fuel flow {f_fuel_kgps} < 0")));
    }
    let ratio = cfg.r_co2 / cfg.r_c;
    let engines =
        ratio / 3600.0 * cfg.q_fuel_c * phi_e * 2.0 * cfg.q_e_kw * cfg.w_sfoc_kg_per_kwh;
    let turbine = ratio * cfg.q_fuel_c * f_fuel_kgps;
    Ok(engines + turbine)
}

/// Volumetric flue gas flow rate, m3/s.
pub fn flue_volumetric_rate(flue_co2_kgps: f64, cfg: &PlantConfig) -> Result<f64> {
    let denom = cfg.q_flue_co2 * cfg.rho_flue_kg_per_m3;
    if denom <= 0.0 {
        return Err(Error::Config(format!(
            "q_flue_co2 * rho_flue must be > 0, got {denom}"
        )));
    }
    Ok(flue_co2_kgps / denom)
}

/// Heat recovered from the flue gas, kW.
pub fn waste_heat(f_g_m3ps: f64, cfg: &PlantConfig) -> Result<f64> {
    if f_g_m3ps < 0.0 {
        return Err(Error::Domain(format!("flue flow {f_g_m3ps} < 0")));
    }
    Ok(cfg.rho_flue_kg_per_m3
        * cfg.cp_flue_kj_per_kg_k
        * f_g_m3ps
        * (cfg.t_rec_in_k - cfg.t_rec_out_k))
}

/// Heat generated by the diesel gas turbine, kW.
pub fn turbine_heat(f_fuel_kgps: f64, cfg: &PlantConfig) -> Result<f64> {
    if f_fuel_kgps < 0.0 {
        return Err(Error::Domain(format!("fuel flow {f_fuel_kgps} < 0")));
    }
    if cfg.h_steam_kj_per_kg <= 0.0 {
        return Err(Error::Config("h_steam must be > 0".to_string()));
    }
    Ok(cfg.eta_fuel_kj_per_kg * f_fuel_kgps * (cfg.h_steam_kj_per_kg - cfg.h_water_kj_per_kg)
        / cfg.h_steam_kj_per_kg)
}

/// Solvent outlet temperature of the seawater heat exchanger, K.
/// Flows are volumetric, m3/s. With the nominal seawater temperatures
/// (308 K inlet, 323 K outlet) the correction term cools the solvent.
pub fn seawater_hx_outlet(t_sol_in_k: f64, f_l_m3ps: f64, f_sw_m3ps: f64, cfg: &PlantConfig) -> Result<f64> {
    if f_l_m3ps <= 0.0 {
        return Err(Error::Domain(format!("solvent flow {f_l_m3ps} must be > 0")));
    }
    let ratio = (cfg.rho_sw_kg_per_m3 * f_sw_m3ps * cfg.cp_sw_kj_per_kg_k)
        / (cfg.rho_sol_kg_per_m3 * f_l_m3ps * cfg.cp_sol_kj_per_kg_k);
    Ok(t_sol_in_k + ratio * (cfg.t_sw_in_k - cfg.t_sw_out_k))
}

/// Carbon capture rate in percent.
pub fn capture_rate(flue_co2_kgps: f64, treated_co2_kgps: f64) -> Result<f64> {
    if flue_co2_kgps <= 0.0 {
        return Err(Error::Domain(format!(
            "flue CO2 flow must be > 0, got {flue_co2_kgps}"
        )));
    }
    if treated_co2_kgps < 0.0 {
        return Err(Error::Domain(format!(
            "treated CO2 flow {treated_co2_kgps} < 0"
        )));
    }
    Ok(100.0 * (flue_co2_kgps - treated_co2_kgps) / flue_co2_kgps)
}

/// Carbon-tax stage cost, $/s: tax on CO2 released beyond the threshold.
/// The fuel-price term is accounted separately in the controller objective.
pub fn stage_cost(treated_co2_kgps: f64, cfg: &PlantConfig) -> f64 {
    cfg.carbon_tax_per_kg * (treated_co2_kgps - cfg.f_limit_co2_kg_per_s).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cfg() -> PlantConfig {
        PlantConfig::default()
    }

    #[test]
    fn co2_flue_rate_zero_inputs() {
        assert_eq!(co2_flue_rate(0.0, 0.0, &cfg()).unwrap(), 0.0);
    }

    #[test]
    fn co2_flue_rate_full_load() {
        // Hand evaluation: (44.01/(3600*12.011))*0.8486*1*2*10800*0.177.
        let v = co2_flue_rate(1.0, 0.0, &cfg()).unwrap();
        assert_relative_eq!(v, 3.3022, max_relative = 1e-3);
    }

    #[test]
    fn co2_flue_rate_turbine_only() {
        // (44.01/12.011)*0.8486*1.
        let v = co2_flue_rate(0.0, 1.0, &cfg()).unwrap();
        assert_relative_eq!(v, 3.1095, max_relative = 1e-3);
    }

    #[test]
    fn co2_flue_rate_rejects_negative() {
        assert!(co2_flue_rate(-0.1, 0.0, &cfg()).is_err());
        assert!(co2_flue_rate(0.5, -1.0, &cfg()).is_err());
    }

    #[test]
    fn flue_volumetric_rate_values() {
        assert_eq!(flue_volumetric_rate(0.0, &cfg()).unwrap(), 0.0);
        let v = flue_volumetric_rate(3.302, &cfg()).unwrap();
        assert_relative_eq!(v, 54.958, max_relative = 1e-3);
        // Linearity.
        let v2 = flue_volumetric_rate(2.0 * 3.302, &cfg()).unwrap();
        assert_relative_eq!(v2, 2.0 * v, max_relative = 1e-12);
    }

    #[test]
    fn flue_volumetric_rate_zero_denominator() {
        let mut c = cfg();
        c.q_flue_co2 = 0.0;
        assert!(flue_volumetric_rate(1.0, &c).is_err());
    }

    #[test]
    fn waste_heat_values() {
        let c = cfg();
        assert_eq!(waste_heat(0.0, &c).unwrap(), 0.0);
        // 1.10 * 1.08 * 54.96 * 210.
        let v = waste_heat(54.96, &c).unwrap();
        assert_relative_eq!(v, 13711.2, max_relative = 1e-3);

        let mut flat = c.clone();
        flat.t_rec_out_k = flat.t_rec_in_k - 1e-12;
        assert_relative_eq!(waste_heat(54.96, &flat).unwrap(), 0.0, epsilon = 1e-6);
    }

    #[test]
    fn turbine_heat_values() {
        let c = cfg();
        assert_eq!(turbine_heat(0.0, &c).unwrap(), 0.0);
        // 43000 * (2762 - 697.1) / 2762.
        let v = turbine_heat(1.0, &c).unwrap();
        assert_relative_eq!(v, 32147.3, max_relative = 1e-3);
        // Linear in fuel flow.
        assert_relative_eq!(turbine_heat(2.0, &c).unwrap(), 2.0 * v, max_relative = 1e-12);
    }

    #[test]
    fn seawater_hx_cases() {
        let c = cfg();
        // No coolant: outlet equals inlet.
        assert_eq!(seawater_hx_outlet(330.0, 0.02, 0.0, &c).unwrap(), 330.0);

        // Equal properties and flows: direct substitution 330 + (308-323).
        let mut eq = c.clone();
        eq.cp_sw_kj_per_kg_k = 3.7;
        eq.rho_sw_kg_per_m3 = eq.rho_sol_kg_per_m3;
        let v = seawater_hx_outlet(330.0, 0.02, 0.02, &eq).unwrap();
        assert_relative_eq!(v, 315.0, max_relative = 1e-12);

        // Doubling seawater flow doubles the drop.
        let d1 = 330.0 - seawater_hx_outlet(330.0, 0.02, 0.01, &c).unwrap();
        let d2 = 330.0 - seawater_hx_outlet(330.0, 0.02, 0.02, &c).unwrap();
        assert_relative_eq!(d2, 2.0 * d1, max_relative = 1e-12);

        assert!(seawater_hx_outlet(330.0, 0.0, 0.01, &c).is_err());
    }

    #[test]
    fn capture_rate_cases() {
        assert_eq!(capture_rate(2.0, 0.0).unwrap(), 100.0);
        assert_eq!(capture_rate(2.0, 2.0).unwrap(), 0.0);
        assert_relative_eq!(capture_rate(2.0, 0.5).unwrap(), 75.0, max_relative = 1e-12);
        assert!(capture_rate(0.0, 0.0).is_err());
    }

    #[test]
    fn capture_rate_within_bounds() {
        // Whenever treated <= flue the rate is in [0, 100].
        for i in 0..100 {
            let flue = 0.1 + i as f64 * 0.07;
            let treated = flue * (i as f64 / 99.0);
            let r = capture_rate(flue, treated).unwrap();
            assert!((0.0..=100.0).contains(&r));
        }
    }

    #[test]
    fn stage_cost_cases() {
        let c = cfg();
        assert_eq!(stage_cost(0.3, &c), 0.0);
        assert_eq!(stage_cost(0.5, &c), 0.0);
        // alpha = 0.05, excess 2 kg/s.
        assert_relative_eq!(stage_cost(2.5, &c), 0.1, max_relative = 1e-12);
        // Nondecreasing in treated flow.
        let mut prev = 0.0;
        for i in 0..50 {
            let v = stage_cost(i as f64 * 0.1, &c);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn flow_relations_are_linear() {
        // Superposition across eqs (1)-(4) to machine precision.
        let c = cfg();
        let a = co2_flue_rate(0.3, 0.4, &c).unwrap();
        let b = co2_flue_rate(0.2, 0.6, &c).unwrap();
        let s = co2_flue_rate(0.5, 1.0, &c).unwrap();
        assert_relative_eq!(a + b, s, max_relative = 1e-14);

        let wa = waste_heat(10.0, &c).unwrap();
        let wb = waste_heat(23.0, &c).unwrap();
        let ws = waste_heat(33.0, &c).unwrap();
        assert_relative_eq!(wa + wb, ws, max_relative = 1e-14);
    }
}
