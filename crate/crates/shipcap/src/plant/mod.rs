//! Reduced-order dynamic simulator of the integrated ship-engine +
//! post-combustion carbon capture plant.
//!
//! The differential state is the 103-component vector laid out as:
//! absorber liquid concentrations (N2, CO2, MEA, H2O; 5 stages each),
//! absorber liquid temperatures, absorber gas concentrations and
//! temperatures, the desorber counterparts, the lean-rich heat
//! exchanger tube/shell temperatures, and the reboiler temperature.
//! Seven reboiler algebraic states close the solvent recycle loop.
//!
//! Stage index 1 is the column bottom: gas enters at stage 1 and leaves
//! at stage 5, liquid enters at stage 5 and leaves at stage 1.

mod config;
mod integrator;
mod physics;
mod rhs;
mod state;
mod steady;

pub use config::PlantConfig;
pub use integrator::{NewtonOptions, Simulator};
pub use physics::{
    capture_rate, co2_flue_rate, flue_volumetric_rate, seawater_hx_outlet, stage_cost,
    turbine_heat, waste_heat,
};
pub use rhs::{
    algebraic_residual, column_rhs, leanrich_hx_rhs, plant_rhs, reboiler_rhs, ColumnFeed,
    ColumnGeometry, ReboilerFlows,
};
pub use state::{
    measure_partial, AlgebraicState, Column, ControlInput, Disturbance, PlantOutput, PlantState,
    Species, N_ALG, N_MEAS, N_STATE,
};
pub use steady::solve_steady_state;
