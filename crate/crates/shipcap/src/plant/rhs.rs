//! Right-hand side of the plant DAE.
//!
//! The columns are modeled as five stirred stages each with
//! linear-driving-force interphase CO2 transfer, stage-to-stage
//! convection, and per-stage energy balances. The desorber additionally
//! condenses reboiler steam onto subcooled liquid, which is the path by
//! which reboiler duty reaches the regeneration reaction. The reboiler
//! holds quasi-steady mass balances (the algebraic states) and a
//! dynamic energy balance.

use nalgebra::DVector;

use crate::plant::config::R_GAS;
use crate::plant::physics::{
    co2_flue_rate, flue_volumetric_rate, seawater_hx_outlet, turbine_heat, waste_heat,
};
use crate::plant::state::{
    AlgebraicState, Column, Disturbance, PlantState, Species, N_STATE, SPECIES,
};
use crate::plant::PlantConfig;
use crate::Result;

/// Smooth approximation of max(x, 0) with softness scale `s`, used to
/// keep the Newton iteration away from hard derivative kinks.
fn softplus(x: f64, s: f64) -> f64 {
    let t = x / s;
    if t > 30.0 {
        x
    } else if t < -30.0 {
        0.0
    } else {
        s * t.exp().ln_1p()
    }
}

/// Per-column stage volumes.
#[derive(Debug, Clone, Copy)]
pub struct ColumnGeometry {
    pub v_stage: f64,
    pub v_liq: f64,
    pub v_gas: f64,
}

impl ColumnGeometry {
    pub fn of(col: Column, cfg: &PlantConfig) -> Self {
        let area = match col {
            Column::Absorber => cfg.abs_area_m2(),
            Column::Desorber => cfg.des_area_m2(),
        };
        let v_stage = area * cfg.column_height_m / cfg.stages as f64;
        Self {
            v_stage,
            v_liq: cfg.liquid_holdup_frac * v_stage,
            v_gas: (1.0 - cfg.liquid_holdup_frac) * v_stage,
        }
    }
}

/// Boundary streams of one column.
#[derive(Debug, Clone, Copy)]
pub struct ColumnFeed {
    /// Liquid feed concentrations entering the top stage, kmol/m3.
    pub liq_conc: [f64; 4],
    pub liq_temp: f64,
    /// Gas feed concentrations entering the bottom stage, kmol/m3.
    pub gas_conc: [f64; 4],
    pub gas_temp: f64,
    /// Liquid volumetric flow, m3/s.
    pub f_l: f64,
    /// Gas volumetric flow, m3/s.
    pub f_g: f64,
    /// Steam condensation heating enabled (desorber).
    pub condensing: bool,
}

/// Stage derivatives of one column, written into `out` using the
/// in-column block layout (liquid conc 4x5, T_L, gas conc 4x5, T_G).
pub fn column_rhs(
    x: &PlantState,
    col: Column,
    feed: &ColumnFeed,
    cfg: &PlantConfig,
    out: &mut [f64],
) {
    debug_assert_eq!(out.len(), 50);
    let geo = ColumnGeometry::of(col, cfg);
    let a_l = feed.f_l / geo.v_liq;
    let a_g = feed.f_g / geo.v_gas;
    let liq_heat_cap = cfg.rho_sol_kg_per_m3 * cfg.cp_sol_kj_per_kg_k * geo.v_liq;
    let gas_heat_cap = cfg.rho_flue_kg_per_m3 * cfg.cp_flue_kj_per_kg_k * geo.v_gas;

    for n in 0..5 {
        let t_l = x.liq_temp(col, n);
        let t_g = x.gas_temp(col, n);
        let (liq_in, t_l_in): ([f64; 4], f64) = if n == 4 {
            (feed.liq_conc, feed.liq_temp)
        } else {
            (
                [
                    x.liq_conc(col, Species::N2, n + 1),
                    x.liq_conc(col, Species::Co2, n + 1),
                    x.liq_conc(col, Species::Mea, n + 1),
                    x.liq_conc(col, Species::H2o, n + 1),
                ],
                x.liq_temp(col, n + 1),
            )
        };
        let (gas_in, t_g_in): ([f64; 4], f64) = if n == 0 {
            (feed.gas_conc, feed.gas_temp)
        } else {
            (
                [
                    x.gas_conc(col, Species::N2, n - 1),
                    x.gas_conc(col, Species::Co2, n - 1),
                    x.gas_conc(col, Species::Mea, n - 1),
                    x.gas_conc(col, Species::H2o, n - 1),
                ],
                x.gas_temp(col, n - 1),
            )
        };

        // Interphase CO2 transfer (positive = gas to liquid), kmol/(m3 packing·s).
        let c_l_co2 = x.liq_conc(col, Species::Co2, n);
        let c_g_co2 = x.gas_conc(col, Species::Co2, n);
        let k_eq = match col {
            Column::Absorber => cfg.k_eq(t_l),
            Column::Desorber => cfg.k_eq_strip_factor * cfg.k_eq(t_l),
        };
        let n_co2 =
            cfg.k_mt_m_per_s * cfg.interfacial_area_m2_per_m3 * (c_g_co2 - k_eq * c_l_co2);
        let transfer = n_co2 * geo.v_stage; // kmol/s per stage

        for s in SPECIES {
            let i = s as usize;
            let mut d_cl = a_l * (liq_in[i] - x.liq_conc(col, s, n));
            let mut d_cg = a_g * (gas_in[i] - x.gas_conc(col, s, n));
            if s == Species::Co2 {
                d_cl += transfer / geo.v_liq;
                d_cg -= transfer / geo.v_gas;
            }
            out[i * 5 + n] = d_cl;
            out[25 + i * 5 + n] = d_cg;
        }

        // Gas-liquid sensible heat transfer, kW per stage.
        let q_gl = cfg.h_gl_kw_per_m3_k * geo.v_stage * (t_g - t_l);

        // Steam condensation onto subcooled liquid, limited by the vapor
        // supply rate; smooth harmonic blend of the two limits.
        let mut q_cond = 0.0;
        if feed.condensing {
            let c_g_h2o = x.gas_conc(col, Species::H2o, n);
            let want = cfg.h_cond_kw_per_m3_k * geo.v_stage * softplus(cfg.t_sat_k - t_l, 0.5);
            let avail = 0.9 * feed.f_g * c_g_h2o * cfg.dh_vap_kj_per_kmol;
            q_cond = want * avail / (want + avail + 1e-9);
            let cond_rate = q_cond / cfg.dh_vap_kj_per_kmol; // kmol/s
            out[(Species::H2o as usize) * 5 + n] += cond_rate / geo.v_liq;
            out[25 + (Species::H2o as usize) * 5 + n] -= cond_rate / geo.v_gas;
        }

        let d_tl = a_l * (t_l_in - t_l)
            + (cfg.dh_abs_kj_per_kmol * transfer + q_gl + q_cond) / liq_heat_cap;
        let d_tg = a_g * (t_g_in - t_g) - q_gl / gas_heat_cap;
        out[20 + n] = d_tl;
        out[45 + n] = d_tg;
    }
}

/// Lumped two-node energy balance of the lean-rich solvent heat exchanger.
/// Tube carries rich solvent toward the desorber, shell carries hot lean
/// solvent from the reboiler. Returns (dT_tube/dt, dT_shell/dt).
pub fn leanrich_hx_rhs(
    t_tube: f64,
    t_shell: f64,
    t_rich_in: f64,
    t_lean_in: f64,
    f_l_m3ps: f64,
    cfg: &PlantConfig,
) -> (f64, f64) {
    let cap = cfg.rho_sol_kg_per_m3 * cfg.cp_sol_kj_per_kg_k;
    let q = cfg.u_hx_kw_per_k * (t_shell - t_tube);
    let d_tube = f_l_m3ps / cfg.v_tube_m3 * (t_rich_in - t_tube) + q / (cap * cfg.v_tube_m3);
    let d_shell = f_l_m3ps / cfg.v_shell_m3 * (t_lean_in - t_shell) - q / (cap * cfg.v_shell_m3);
    (d_tube, d_shell)
}

/// Molar streams around the reboiler. Compositions are mole fractions
/// ordered (N2, CO2, MEA, H2O); enthalpies are molar, kJ/kmol.
#[derive(Debug, Clone, Copy)]
pub struct ReboilerFlows {
    pub f_in_kmolps: f64,
    pub m_in: [f64; 4],
    pub h_l_in: f64,
    pub f_v_kmolps: f64,
    pub q_out: [f64; 4],
    pub h_v_out: f64,
    pub f_l_kmolps: f64,
    pub m_out: [f64; 4],
    pub h_l_out: f64,
    pub q_reb_kw: f64,
}

/// Reboiler balances: holdup derivatives for (CO2, MEA, H2O) in kmol/s
/// and the temperature derivative in K/s.
pub fn reboiler_rhs(flows: &ReboilerFlows, cfg: &PlantConfig) -> ([f64; 3], f64) {
    let mut dm = [0.0; 3];
    for (k, s) in [Species::Co2, Species::Mea, Species::H2o].iter().enumerate() {
        let i = *s as usize;
        dm[k] = flows.f_in_kmolps * flows.m_in[i]
            - flows.f_v_kmolps * flows.q_out[i]
            - flows.f_l_kmolps * flows.m_out[i];
    }
    let thermal_mass =
        cfg.rho_mol_liq_kmol_per_m3 * cfg.cp_mol_liq_kj_per_kmol_k * cfg.v_reb_m3;
    let d_t = (flows.f_in_kmolps * flows.h_l_in - flows.f_v_kmolps * flows.h_v_out
        - flows.f_l_kmolps * flows.h_l_out
        + flows.q_reb_kw)
        / thermal_mass;
    (dm, d_t)
}

/// Everything derived from (x, z, u, d) that both the differential RHS
/// and the algebraic residual need.
struct FlowContext {
    f_g_abs: f64,
    q_reb_eff: f64,
    /// Molar liquid feed into the reboiler, kmol/s.
    f_in_reb: f64,
    /// Its composition (mole fractions).
    m_in_reb: [f64; 4],
    t_in_reb: f64,
    /// Vaporization rate, kmol/s.
    f_v: f64,
    /// Vapor composition.
    q_vap: [f64; 4],
    /// Lean liquid leaving the reboiler, kmol/s.
    f_l_reb: f64,
}

fn vapor_co2_fraction(m_co2: f64, cfg: &PlantConfig) -> f64 {
    let m = m_co2.clamp(0.0, 1.0);
    cfg.alpha_vol * m / (1.0 + (cfg.alpha_vol - 1.0) * m)
}

fn flow_context(
    x: &PlantState,
    z: &AlgebraicState,
    u_si: (f64, f64, f64),
    d: &Disturbance,
    cfg: &PlantConfig,
) -> Result<FlowContext> {
    let (f_l, f_fuel, _f_sw) = u_si;
    let flue_co2 = co2_flue_rate(d.phi_e, f_fuel, cfg)?;
    let f_g_abs = flue_volumetric_rate(flue_co2, cfg)?;
    let q_rec = waste_heat(f_g_abs, cfg)?;
    let q_turb = turbine_heat(f_fuel, cfg)?;
    let q_reb_eff = cfg.eta_reb_rec * q_rec + cfg.eta_reb_turb * q_turb;

    // Desorber bottom liquid feeds the reboiler.
    let c_in: [f64; 4] = [
        x.liq_conc(Column::Desorber, Species::N2, 0),
        x.liq_conc(Column::Desorber, Species::Co2, 0),
        x.liq_conc(Column::Desorber, Species::Mea, 0),
        x.liq_conc(Column::Desorber, Species::H2o, 0),
    ];
    let c_tot: f64 = c_in.iter().sum::<f64>().max(1e-9);
    let f_in_reb = f_l * c_tot;
    let m_in_reb = [
        c_in[0] / c_tot,
        c_in[1] / c_tot,
        c_in[2] / c_tot,
        c_in[3] / c_tot,
    ];

    let t_boil = cfg.t_boil(z.m_co2_out());
    let f_v = cfg.k_vap_kmol_per_s_k * softplus(x.t_reb() - t_boil, 0.1);
    let q_co2 = vapor_co2_fraction(z.m_co2_out(), cfg);
    let q_vap = [0.0, q_co2, 0.0, 1.0 - q_co2];
    let f_l_reb = f_in_reb - f_v;

    Ok(FlowContext {
        f_g_abs,
        q_reb_eff,
        f_in_reb,
        m_in_reb,
        t_in_reb: x.liq_temp(Column::Desorber, 0),
        f_v,
        q_vap,
        f_l_reb,
    })
}

fn molar_liquid_enthalpy(t_k: f64, cfg: &PlantConfig) -> f64 {
    cfg.cp_mol_liq_kj_per_kmol_k * (t_k - 273.15)
}

fn reboiler_flows(ctx: &FlowContext, x: &PlantState, z: &AlgebraicState, cfg: &PlantConfig) -> ReboilerFlows {
    let ct: f64 = (0..4).map(|i| z.0[i]).sum::<f64>().max(1e-9);
    let m_out = [z.0[0] / ct, z.0[1] / ct, z.0[2] / ct, z.0[3] / ct];
    ReboilerFlows {
        f_in_kmolps: ctx.f_in_reb,
        m_in: ctx.m_in_reb,
        h_l_in: molar_liquid_enthalpy(ctx.t_in_reb, cfg),
        f_v_kmolps: ctx.f_v,
        q_out: ctx.q_vap,
        h_v_out: molar_liquid_enthalpy(x.t_reb(), cfg) + cfg.dh_vap_kj_per_kmol,
        f_l_kmolps: ctx.f_l_reb,
        m_out,
        h_l_out: molar_liquid_enthalpy(x.t_reb(), cfg),
        q_reb_kw: ctx.q_reb_eff,
    }
}

/// Full differential right-hand side f(x, z, u, d), 103 components.
/// `u_si` is (F_L m3/s, F_fuel kg/s, F_sw m3/s).
pub fn plant_rhs(
    x: &PlantState,
    z: &AlgebraicState,
    u_si: (f64, f64, f64),
    d: &Disturbance,
    cfg: &PlantConfig,
) -> Result<DVector<f64>> {
    let ctx = flow_context(x, z, u_si, d, cfg)?;
    let (f_l, _f_fuel, f_sw) = u_si;
    let mut dx = DVector::zeros(N_STATE);

    // Lean solvent path: reboiler -> shell -> seawater HX -> absorber top.
    let t_lean_feed = seawater_hx_outlet(x.t_shell(), f_l.max(1e-9), f_sw, cfg)?;
    let lean_conc = [
        z.c_lean(Species::N2),
        z.c_lean(Species::Co2),
        z.c_lean(Species::Mea),
        z.c_lean(Species::H2o),
    ];

    // Absorber gas feed from the flue line (dry basis).
    let c_co2_flue = cfg.q_flue_co2 * cfg.rho_flue_kg_per_m3 / cfg.r_co2;
    let c_n2_flue = (cfg.rho_flue_kg_per_m3 - c_co2_flue * cfg.r_co2) / 28.0;
    let abs_feed = ColumnFeed {
        liq_conc: lean_conc,
        liq_temp: t_lean_feed,
        gas_conc: [c_n2_flue, c_co2_flue, 0.0, 0.0],
        gas_temp: cfg.t_flue_abs_in_k,
        f_l,
        f_g: ctx.f_g_abs,
        condensing: false,
    };
    let mut abs_block = [0.0; 50];
    column_rhs(x, Column::Absorber, &abs_feed, cfg, &mut abs_block);
    for (i, v) in abs_block.iter().enumerate() {
        dx[i] = *v;
    }

    // Rich solvent path: absorber bottom -> tube side -> desorber top.
    let rich_conc = [
        x.liq_conc(Column::Absorber, Species::N2, 0),
        x.liq_conc(Column::Absorber, Species::Co2, 0),
        x.liq_conc(Column::Absorber, Species::Mea, 0),
        x.liq_conc(Column::Absorber, Species::H2o, 0),
    ];

    // Desorber gas feed: reboiler vapor.
    let c_tot_vap = cfg.gas_molar_density(x.t_reb());
    let q_co2 = ctx.q_vap[Species::Co2 as usize];
    let des_feed = ColumnFeed {
        liq_conc: rich_conc,
        liq_temp: x.t_tube(),
        gas_conc: [0.0, q_co2 * c_tot_vap, 0.0, (1.0 - q_co2) * c_tot_vap],
        gas_temp: x.t_reb(),
        f_l,
        f_g: z.f_g_reb(),
        condensing: true,
    };
    let mut des_block = [0.0; 50];
    column_rhs(x, Column::Desorber, &des_feed, cfg, &mut des_block);
    for (i, v) in des_block.iter().enumerate() {
        dx[50 + i] = *v;
    }

    // Lean-rich heat exchanger.
    let (d_tube, d_shell) = leanrich_hx_rhs(
        x.t_tube(),
        x.t_shell(),
        x.liq_temp(Column::Absorber, 0),
        x.t_reb(),
        f_l,
        cfg,
    );
    dx[PlantState::IDX_T_TUBE] = d_tube;
    dx[PlantState::IDX_T_SHELL] = d_shell;

    // Reboiler energy balance.
    let flows = reboiler_flows(&ctx, x, z, cfg);
    let (_dm, d_t_reb) = reboiler_rhs(&flows, cfg);
    dx[PlantState::IDX_T_REB] = d_t_reb;

    Ok(dx)
}

/// Algebraic residual p(x, z, u, d) = 0, 7 components: the quasi-steady
/// reboiler mass balances, composition normalization, and the derived
/// vapor quantities.
pub fn algebraic_residual(
    x: &PlantState,
    z: &AlgebraicState,
    u_si: (f64, f64, f64),
    d: &Disturbance,
    cfg: &PlantConfig,
) -> Result<DVector<f64>> {
    let ctx = flow_context(x, z, u_si, d, cfg)?;
    let flows = reboiler_flows(&ctx, x, z, cfg);
    let (dm, _) = reboiler_rhs(&flows, cfg);

    let ct: f64 = (0..4).map(|i| z.0[i]).sum();
    let mut r = DVector::zeros(7);
    // N2 passes through at its feed fraction.
    r[0] = z.0[0] - ctx.m_in_reb[Species::N2 as usize] * cfg.rho_mol_liq_kmol_per_m3;
    // Quasi-steady CO2 and MEA holdup balances.
    r[1] = dm[0];
    r[2] = dm[1];
    // Constant molar density closes the H2O balance.
    r[3] = ct - cfg.rho_mol_liq_kmol_per_m3;
    // Vapor fraction of the feed.
    r[4] = z.q_reb() - ctx.f_v / ctx.f_in_reb.max(1e-9);
    // Lean CO2 mole fraction.
    r[5] = z.m_co2_out() - z.0[1] / ct.max(1e-9);
    // Volumetric vapor flow at stripper pressure.
    r[6] = z.f_g_reb() - ctx.f_v * R_GAS * x.t_reb() / cfg.p_atm_kpa;
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn cfg() -> PlantConfig {
        PlantConfig::default()
    }

    fn uniform_state(t: f64) -> PlantState {
        let mut x = PlantState::zeros();
        for col in [Column::Absorber, Column::Desorber] {
            for n in 0..5 {
                x.0[PlantState::idx_liq_temp(col, n)] = t;
                x.0[PlantState::idx_gas_temp(col, n)] = t;
                x.0[PlantState::idx_liq_conc(col, Species::Mea, n)] = 5.0;
                x.0[PlantState::idx_liq_conc(col, Species::H2o, n)] = 34.0;
                x.0[PlantState::idx_liq_conc(col, Species::Co2, n)] = 1.0;
                x.0[PlantState::idx_liq_conc(col, Species::N2, n)] = 1e-4;
            }
        }
        x.0[PlantState::IDX_T_TUBE] = t;
        x.0[PlantState::IDX_T_SHELL] = t;
        x.0[PlantState::IDX_T_REB] = t;
        x
    }

    #[test]
    fn reboiler_rhs_all_zero_is_equilibrium() {
        let flows = ReboilerFlows {
            f_in_kmolps: 0.0,
            m_in: [0.0; 4],
            h_l_in: 0.0,
            f_v_kmolps: 0.0,
            q_out: [0.0; 4],
            h_v_out: 0.0,
            f_l_kmolps: 0.0,
            m_out: [0.0; 4],
            h_l_out: 0.0,
            q_reb_kw: 0.0,
        };
        let (dm, dt) = reboiler_rhs(&flows, &cfg());
        assert_eq!(dm, [0.0; 3]);
        assert_eq!(dt, 0.0);
    }

    #[test]
    fn reboiler_rhs_balanced_throughflow() {
        let m = [0.0, 0.1, 0.2, 0.7];
        let h = 5000.0;
        let flows = ReboilerFlows {
            f_in_kmolps: 1.0,
            m_in: m,
            h_l_in: h,
            f_v_kmolps: 0.4,
            q_out: m,
            h_v_out: h,
            f_l_kmolps: 0.6,
            m_out: m,
            h_l_out: h,
            q_reb_kw: 0.0,
        };
        let (dm, dt) = reboiler_rhs(&flows, &cfg());
        for v in dm {
            assert_relative_eq!(v, 0.0, epsilon = 1e-14);
        }
        assert_relative_eq!(dt, 0.0, epsilon = 1e-14);
    }

    #[test]
    fn reboiler_rhs_pure_heating() {
        // rho*cp*V = 500 kJ/K and 1000 kW with zero flows gives 2 K/s.
        let mut c = cfg();
        c.rho_mol_liq_kmol_per_m3 = 10.0;
        c.cp_mol_liq_kj_per_kmol_k = 500.0;
        c.v_reb_m3 = 0.1;
        let flows = ReboilerFlows {
            f_in_kmolps: 0.0,
            m_in: [0.0; 4],
            h_l_in: 0.0,
            f_v_kmolps: 0.0,
            q_out: [0.0; 4],
            h_v_out: 0.0,
            f_l_kmolps: 0.0,
            m_out: [0.0; 4],
            h_l_out: 0.0,
            q_reb_kw: 1000.0,
        };
        let (_, dt) = reboiler_rhs(&flows, &c);
        assert_relative_eq!(dt, 2.0, max_relative = 1e-12);
    }

    #[test]
    fn leanrich_hx_equal_temps_no_exchange() {
        let c = cfg();
        let (d_tube, d_shell) = leanrich_hx_rhs(350.0, 350.0, 350.0, 350.0, 0.0, &c);
        assert_eq!(d_tube, 0.0);
        assert_eq!(d_shell, 0.0);
    }

    #[test]
    fn leanrich_hx_antisymmetric_exchange() {
        let c = cfg();
        let cap = c.rho_sol_kg_per_m3 * c.cp_sol_kj_per_kg_k;
        // Isolated pair: energy gained by tube equals energy lost by shell.
        let (d_tube, d_shell) = leanrich_hx_rhs(340.0, 360.0, 340.0, 360.0, 0.0, &c);
        let gain = d_tube * cap * c.v_tube_m3;
        let loss = -d_shell * cap * c.v_shell_m3;
        assert_relative_eq!(gain, loss, max_relative = 1e-12);

        // Swapping sides negates the exchange term.
        let (d_tube2, _) = leanrich_hx_rhs(360.0, 340.0, 360.0, 340.0, 0.0, &c);
        assert_relative_eq!(
            d_tube2 * c.v_tube_m3,
            -d_tube * c.v_tube_m3,
            max_relative = 1e-12
        );
    }

    #[test]
    fn leanrich_hx_relaxes_at_analytic_rate() {
        // Isolated pair: dT/dt = M (T) with eigenvalues 0 and
        // -(U/cap)(1/V_tube + 1/V_shell). Compare a short Euler
        // integration of the difference against the analytic decay.
        let c = cfg();
        let cap = c.rho_sol_kg_per_m3 * c.cp_sol_kj_per_kg_k;
        let lambda = c.u_hx_kw_per_k / cap * (1.0 / c.v_tube_m3 + 1.0 / c.v_shell_m3);
        let dt = 1e-6 / lambda;
        let mut t_tube = 300.0;
        let mut t_shell = 400.0;
        let steps = 1000;
        for _ in 0..steps {
            let (a, b) = leanrich_hx_rhs(t_tube, t_shell, t_tube, t_shell, 0.0, &c);
            t_tube += dt * a;
            t_shell += dt * b;
        }
        let expected = 100.0 * (-lambda * dt * steps as f64).exp();
        assert_relative_eq!(t_shell - t_tube, expected, max_relative = 1e-2);
    }

    #[test]
    fn column_zero_driving_force_no_transfer() {
        // Pick liquid CO2 so that K_eq(T) * C_L equals C_G exactly.
        let c = cfg();
        let t = 330.0;
        let mut x = uniform_state(t);
        let c_g = 1.0e-3;
        let c_l = c_g / c.k_eq(t);
        for n in 0..5 {
            x.0[PlantState::idx_liq_conc(Column::Absorber, Species::Co2, n)] = c_l;
            x.0[PlantState::idx_gas_conc(Column::Absorber, Species::Co2, n)] = c_g;
        }
        let feed = ColumnFeed {
            liq_conc: [1e-4, c_l, 5.0, 34.0],
            liq_temp: t,
            gas_conc: [0.037, c_g, 0.0, 0.0],
            gas_temp: t,
            f_l: 0.0,
            f_g: 0.0,
            condensing: false,
        };
        let mut out = [0.0; 50];
        column_rhs(&x, Column::Absorber, &feed, &c, &mut out);
        for v in out {
            assert_relative_eq!(v, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn column_closed_stage_conserves_co2() {
        // No in/out flows: total transferred moles are conserved.
        let c = cfg();
        let x = uniform_state(330.0);
        let mut x = x;
        for n in 0..5 {
            x.0[PlantState::idx_gas_conc(Column::Absorber, Species::Co2, n)] = 2.0e-3;
        }
        let geo = ColumnGeometry::of(Column::Absorber, &c);
        let feed = ColumnFeed {
            liq_conc: [0.0; 4],
            liq_temp: 330.0,
            gas_conc: [0.0; 4],
            gas_temp: 330.0,
            f_l: 0.0,
            f_g: 0.0,
            condensing: false,
        };
        let mut out = [0.0; 50];
        column_rhs(&x, Column::Absorber, &feed, &c, &mut out);
        for n in 0..5 {
            let d_cl = out[(Species::Co2 as usize) * 5 + n];
            let d_cg = out[25 + (Species::Co2 as usize) * 5 + n];
            assert_relative_eq!(d_cl * geo.v_liq + d_cg * geo.v_gas, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn column_single_stage_matches_linear_ode() {
        // One stage, transfer frozen by zero CO2, pure convection:
        // dC/dt = a (C_in - C) has solution C_in + (C0 - C_in) e^{-a t}.
        let c = cfg();
        let mut x = uniform_state(330.0);
        for n in 0..5 {
            x.0[PlantState::idx_liq_conc(Column::Absorber, Species::Co2, n)] = 0.0;
            x.0[PlantState::idx_gas_conc(Column::Absorber, Species::Co2, n)] = 0.0;
        }
        let geo = ColumnGeometry::of(Column::Absorber, &c);
        let f_l = 0.02;
        let a = f_l / geo.v_liq;
        let feed = ColumnFeed {
            liq_conc: [0.0, 0.0, 8.0, 32.0],
            liq_temp: 330.0,
            gas_conc: [0.0; 4],
            gas_temp: 330.0,
            f_l,
            f_g: 0.0,
            condensing: false,
        };
        // Forward-Euler integrate the top stage MEA concentration with a
        // small step; it only sees the feed.
        let mut conc = 5.0;
        let dt = 0.01 / a;
        for _ in 0..1000 {
            let mut out = [0.0; 50];
            let mut xs = x.clone();
            xs.0[PlantState::idx_liq_conc(Column::Absorber, Species::Mea, 4)] = conc;
            column_rhs(&xs, Column::Absorber, &feed, &c, &mut out);
            conc += dt * out[(Species::Mea as usize) * 5 + 4];
        }
        let t_end = 1000.0 * dt;
        let expected = 8.0 + (5.0 - 8.0) * (-a * t_end).exp();
        assert_relative_eq!(conc, expected, max_relative = 1e-2);
    }
}
