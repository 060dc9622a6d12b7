//! Car-following laws.
//!
//! Four human-driver models (IDM, FVDM, GFM, OVM), the two automated
//! baselines (higher-order linear feedback and IDM tracked by a PID
//! actuator loop), equilibrium solvers, and the stochastic hybrid sampler
//! that draws a human law per vehicle.
//!
//! Every law consumes the bumper-to-bumper `gap`, own speed `v`, and
//! `dv = v_lead - v`, and its output is clamped to
//! [`ACCEL_MIN`, `ACCEL_MAX`].

mod controllers;
mod equilibrium;
mod laws;
mod posterior;
mod spec;

pub use controllers::{hl_accel, idm_pid_accel, CfController, PidState};
pub use equilibrium::{equilibrium_gap, GAP_BRACKET};
pub use laws::{cf_accel, cf_accel_raw, OvFunction};
pub use posterior::{sample_hybrid, AvPosterior, HdvPosterior, HDV_KINDS};
pub use spec::{
    CfKind, CfSpec, FvdmParams, GfmParams, HlParams, IdmParams, IdmPidParams, OvmParams, PidGains,
};

pub const ACCEL_MIN: f64 = -8.0;
pub const ACCEL_MAX: f64 = 4.0;

#[inline]
pub fn clamp_accel(a: f64) -> f64 {
    a.clamp(ACCEL_MIN, ACCEL_MAX)
}
