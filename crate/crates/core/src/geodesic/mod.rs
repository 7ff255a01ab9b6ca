//! Geodesics as Hamiltonian flow: the exponential map by explicit symplectic
//! integration and the logarithmic map by Newton shooting.

mod bvp;
mod ivp;

pub use bvp::{
    log_map, log_map_multi, shoot_residual, shooting_seeds, ShootingConfig, ShootingResult,
};
pub use ivp::{
    composed_step, exp_map, hamilton_rhs, hamiltonian, integrate_extended, tao_step_order2,
    triple_jump_weight, yoshida_compose, ExtendedPhasePoint, GeodesicPath, IntegratorConfig,
    PhasePoint, StepFn,
};
