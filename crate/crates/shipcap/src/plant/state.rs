//! State-vector layout and the domain types crossing the simulator API.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::PlantConfig;

/// Differential state dimension.
pub const N_STATE: usize = 103;
/// Algebraic state dimension.
pub const N_ALG: usize = 7;
/// Measured partial-state dimension (all temperatures).
pub const N_MEAS: usize = 23;

/// Species tracked in both phases of both columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Species {
    N2 = 0,
    Co2 = 1,
    Mea = 2,
    H2o = 3,
}

pub const SPECIES: [Species; 4] = [Species::N2, Species::Co2, Species::Mea, Species::H2o];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    Absorber,
    Desorber,
}

impl Column {
    fn base(self) -> usize {
        match self {
            Column::Absorber => 0,
            Column::Desorber => 50,
        }
    }
}

/// The 103-component differential state with named index views.
/// Stage `n` is 0-based with stage 0 at the column bottom.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantState(pub DVector<f64>);

impl PlantState {
    pub fn zeros() -> Self {
        Self(DVector::zeros(N_STATE))
    }

    pub fn from_vec(v: Vec<f64>) -> Result<Self> {
        if v.len() != N_STATE {
            return Err(Error::Shape(format!(
                "plant state needs {N_STATE} components, got {}",
                v.len()
            )));
        }
        Ok(Self(DVector::from_vec(v)))
    }

    #[inline]
    pub fn idx_liq_conc(col: Column, species: Species, stage: usize) -> usize {
        col.base() + (species as usize) * 5 + stage
    }

    #[inline]
    pub fn idx_liq_temp(col: Column, stage: usize) -> usize {
        col.base() + 20 + stage
    }

    #[inline]
    pub fn idx_gas_conc(col: Column, species: Species, stage: usize) -> usize {
        col.base() + 25 + (species as usize) * 5 + stage
    }

    #[inline]
    pub fn idx_gas_temp(col: Column, stage: usize) -> usize {
        col.base() + 45 + stage
    }

    pub const IDX_T_TUBE: usize = 100;
    pub const IDX_T_SHELL: usize = 101;
    pub const IDX_T_REB: usize = 102;

    #[inline]
    pub fn liq_conc(&self, col: Column, species: Species, stage: usize) -> f64 {
        self.0[Self::idx_liq_conc(col, species, stage)]
    }

    #[inline]
    pub fn liq_temp(&self, col: Column, stage: usize) -> f64 {
        self.0[Self::idx_liq_temp(col, stage)]
    }

    #[inline]
    pub fn gas_conc(&self, col: Column, species: Species, stage: usize) -> f64 {
        self.0[Self::idx_gas_conc(col, species, stage)]
    }

    #[inline]
    pub fn gas_temp(&self, col: Column, stage: usize) -> f64 {
        self.0[Self::idx_gas_temp(col, stage)]
    }

    pub fn t_tube(&self) -> f64 {
        self.0[Self::IDX_T_TUBE]
    }

    pub fn t_shell(&self) -> f64 {
        self.0[Self::IDX_T_SHELL]
    }

    pub fn t_reb(&self) -> f64 {
        self.0[Self::IDX_T_REB]
    }

    /// Simulation guard: temperatures within [273, 500] K and
    /// concentrations non-negative (to a small tolerance).
    pub fn check_guard(&self) -> Result<()> {
        for col in [Column::Absorber, Column::Desorber] {
            for n in 0..5 {
                for t in [self.liq_temp(col, n), self.gas_temp(col, n)] {
                    if !(273.0..=500.0).contains(&t) || !t.is_finite() {
                        return Err(Error::DivergedState(format!(
                            "temperature {t:.2} K outside [273, 500]"
                        )));
                    }
                }
                for s in SPECIES {
                    for c in [self.liq_conc(col, s, n), self.gas_conc(col, s, n)] {
                        if c < -1e-9 || !c.is_finite() {
                            return Err(Error::DivergedState(format!(
                                "negative concentration {c:.3e}"
                            )));
                        }
                    }
                }
            }
        }
        for t in [self.t_tube(), self.t_shell(), self.t_reb()] {
            if !(273.0..=500.0).contains(&t) || !t.is_finite() {
                return Err(Error::DivergedState(format!(
                    "exchanger/reboiler temperature {t:.2} K outside [273, 500]"
                )));
            }
        }
        Ok(())
    }
}

/// The 7 reboiler algebraic states: lean liquid concentrations
/// (N2, CO2, MEA, H2O), vapor fraction, outlet CO2 mole fraction,
/// and volumetric vapor flow to the desorber.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraicState(pub DVector<f64>);

impl AlgebraicState {
    pub fn zeros() -> Self {
        Self(DVector::zeros(N_ALG))
    }

    pub fn c_lean(&self, species: Species) -> f64 {
        self.0[species as usize]
    }

    pub fn q_reb(&self) -> f64 {
        self.0[4]
    }

    pub fn m_co2_out(&self) -> f64 {
        self.0[5]
    }

    pub fn f_g_reb(&self) -> f64 {
        self.0[6]
    }
}

/// Control inputs in Table-IV units: solvent flow m3/h, turbine fuel
/// flow kg/h, seawater flow m3/h.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub f_l_m3ph: f64,
    pub f_fuel_kgph: f64,
    pub f_sw_m3ph: f64,
}

impl ControlInput {
    pub fn new(f_l_m3ph: f64, f_fuel_kgph: f64, f_sw_m3ph: f64) -> Self {
        Self {
            f_l_m3ph,
            f_fuel_kgph,
            f_sw_m3ph,
        }
    }

    /// Mid-box operating point.
    pub fn mid_box(cfg: &PlantConfig) -> Self {
        let (lo, hi) = cfg.input_box();
        Self::new(
            0.5 * (lo[0] + hi[0]),
            0.5 * (lo[1] + hi[1]),
            0.5 * (lo[2] + hi[2]),
        )
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.f_l_m3ph, self.f_fuel_kgph, self.f_sw_m3ph]
    }

    pub fn from_array(u: [f64; 3]) -> Self {
        Self::new(u[0], u[1], u[2])
    }

    /// Convert to SI per-second units: (m3/s, kg/s, m3/s).
    pub fn to_si(&self) -> (f64, f64, f64) {
        (
            self.f_l_m3ph / 3600.0,
            self.f_fuel_kgph / 3600.0,
            self.f_sw_m3ph / 3600.0,
        )
    }

    pub fn clamp_to_box(&self, cfg: &PlantConfig) -> Self {
        let (lo, hi) = cfg.input_box();
        let u = self.as_array();
        Self::from_array([
            u[0].clamp(lo[0], hi[0]),
            u[1].clamp(lo[1], hi[1]),
            u[2].clamp(lo[2], hi[2]),
        ])
    }

    pub fn check_in_box(&self, cfg: &PlantConfig) -> Result<()> {
        let (lo, hi) = cfg.input_box();
        let u = self.as_array();
        for i in 0..3 {
            if u[i] < lo[i] - 1e-9 || u[i] > hi[i] + 1e-9 {
                return Err(Error::Domain(format!(
                    "input {i} = {} outside box [{}, {}]",
                    u[i], lo[i], hi[i]
                )));
            }
        }
        Ok(())
    }
}

/// Known disturbance: engine load as a fraction of maximum output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub phi_e: f64,
}

impl Disturbance {
    pub fn new(phi_e: f64) -> Self {
        Self { phi_e }
    }

    pub fn check_in_range(&self, cfg: &PlantConfig) -> Result<()> {
        if self.phi_e < cfg.load_min - 1e-9 || self.phi_e > cfg.load_max + 1e-9 {
            return Err(Error::Domain(format!(
                "engine load {} outside [{}, {}]",
                self.phi_e, cfg.load_min, cfg.load_max
            )));
        }
        Ok(())
    }
}

/// Controlled outputs plus the auxiliary quantities logged each step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantOutput {
    /// Reboiler temperature, K.
    pub t_reb: f64,
    /// Carbon capture rate, percent.
    pub p_co2: f64,
    /// Absorber bottom-stage liquid temperature, K.
    pub t1_la: f64,
    /// Desorber bottom-stage liquid temperature, K.
    pub t1_ld: f64,
    /// CO2 mass flow in the flue gas, kg/s.
    pub flue_co2: f64,
    /// CO2 mass flow released to atmosphere, kg/s.
    pub treated_co2: f64,
    /// Carbon-tax stage cost, $/s.
    pub stage_cost: f64,
}

impl PlantOutput {
    pub fn y(&self) -> [f64; 4] {
        [self.t_reb, self.p_co2, self.t1_la, self.t1_ld]
    }
}

/// Extract the measured partial state: liquid/gas temperatures of the
/// absorber, desorber liquid temperatures, and the desorber gas +
/// exchanger + reboiler temperature block, 23 components total.
pub fn measure_partial(x: &PlantState) -> DVector<f64> {
    let mut out = DVector::zeros(N_MEAS);
    let mut k = 0;
    // x(21-25): absorber liquid temperatures.
    for n in 0..5 {
        out[k] = x.liq_temp(Column::Absorber, n);
        k += 1;
    }
    // x(46-50): absorber gas temperatures.
    for n in 0..5 {
        out[k] = x.gas_temp(Column::Absorber, n);
        k += 1;
    }
    // x(71-75): desorber liquid temperatures.
    for n in 0..5 {
        out[k] = x.liq_temp(Column::Desorber, n);
        k += 1;
    }
    // x(96-103): desorber gas temperatures, T_tube, T_shell, T_reb.
    for n in 0..5 {
        out[k] = x.gas_temp(Column::Desorber, n);
        k += 1;
    }
    out[k] = x.t_tube();
    out[k + 1] = x.t_shell();
    out[k + 2] = x.t_reb();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_matches_table() {
        // 1-based table indices: x(6) is absorber liquid CO2 stage 1,
        // x(35) is absorber gas CO2 stage 5, x(103) is T_reb.
        assert_eq!(PlantState::idx_liq_conc(Column::Absorber, Species::Co2, 0), 5);
        assert_eq!(PlantState::idx_gas_conc(Column::Absorber, Species::Co2, 4), 34);
        assert_eq!(PlantState::idx_liq_temp(Column::Absorber, 0), 20);
        assert_eq!(PlantState::idx_liq_temp(Column::Desorber, 0), 70);
        assert_eq!(PlantState::idx_gas_temp(Column::Desorber, 4), 99);
        assert_eq!(PlantState::IDX_T_REB, 102);
    }

    #[test]
    fn measure_partial_selects_and_ignores_unmeasured() {
        let mut x = PlantState::zeros();
        for i in 0..N_STATE {
            x.0[i] = i as f64;
        }
        let m = measure_partial(&x);
        assert_eq!(m.len(), N_MEAS);
        assert_eq!(m[0], 20.0);
        assert_eq!(m[22], 102.0);

        // Perturbing an unmeasured entry (a concentration) changes nothing.
        let mut x2 = x.clone();
        x2.0[PlantState::idx_liq_conc(Column::Absorber, Species::Co2, 2)] += 99.0;
        assert_eq!(measure_partial(&x2), m);
    }

    #[test]
    fn measure_partial_maps_t_reb_last() {
        let mut x = PlantState::zeros();
        // Guard-valid values elsewhere are irrelevant for the mapping itself.
        x.0[PlantState::IDX_T_REB] = 393.15;
        let m = measure_partial(&x);
        assert_eq!(m[22], 393.15);
    }

    #[test]
    fn input_conversion_and_box() {
        let cfg = PlantConfig::default();
        let u = ControlInput::new(72.0, 3600.0, 36.0);
        let (fl, ff, fsw) = u.to_si();
        assert!((fl - 0.02).abs() < 1e-12);
        assert!((ff - 1.0).abs() < 1e-12);
        assert!((fsw - 0.01).abs() < 1e-12);
        u.check_in_box(&cfg).unwrap();

        let too_low = ControlInput::new(10.0, 3600.0, 36.0);
        assert!(too_low.check_in_box(&cfg).is_err());
        let clamped = too_low.clamp_to_box(&cfg);
        assert_eq!(clamped.f_l_m3ph, 30.0);
    }
}
