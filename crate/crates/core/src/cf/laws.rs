use serde::{Deserialize, Serialize};

use super::spec::{CfSpec, IdmParams};
use super::clamp_accel;
use crate::error::{Error, Result};

/// Hyperbolic-tangent optimal-velocity curve
/// `V(s) = (v_max/2)·[tanh((s - s_c)/w) + tanh(s_c/w)]`, with `V(0) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OvFunction {
    pub v_max: f64,
    /// Inflection gap (m).
    pub s_c: f64,
    /// Transition width (m).
    pub width: f64,
}

impl Default for OvFunction {
    fn default() -> Self {
        Self {
            v_max: 33.0,
            s_c: 25.0,
            width: 12.0,
        }
    }
}

impl OvFunction {
    pub fn speed(&self, gap: f64) -> f64 {
        0.5 * self.v_max * (((gap - self.s_c) / self.width).tanh() + (self.s_c / self.width).tanh())
    }

    /// dV/ds.
    pub fn slope(&self, gap: f64) -> f64 {
        let t = ((gap - self.s_c) / self.width).tanh();
        0.5 * self.v_max * (1.0 - t * t) / self.width
    }

    /// `V(∞)`.
    pub fn v_inf(&self) -> f64 {
        0.5 * self.v_max * (1.0 + (self.s_c / self.width).tanh())
    }
}

pub(crate) fn idm_raw(p: &IdmParams, gap: f64, v: f64, dv: f64) -> f64 {
    let s_star = p.s0 + (v * p.t_headway - v * dv / (2.0 * (p.a * p.b).sqrt())).max(0.0);
    p.a * (1.0 - (v / p.v0).powf(p.delta) - (s_star / gap).powi(2))
}

/// Unclamped acceleration of the memoryless part of each law. HL is
/// evaluated with an all-zero acceleration history and IDM-PID returns the
/// IDM command the PID loop tracks.
pub fn cf_accel_raw(spec: &CfSpec, gap: f64, v: f64, dv: f64, _v_lead: f64) -> f64 {
    match spec {
        CfSpec::Idm(p) => idm_raw(p, gap, v, dv),
        CfSpec::IdmPid(p) => idm_raw(&p.idm, gap, v, dv),
        CfSpec::Ovm(p) => p.kappa * (p.ov.speed(gap) - v),
        CfSpec::Fvdm(p) => p.kappa * (p.ov.speed(gap) - v) + p.lambda * dv,
        CfSpec::Gfm(p) => {
            let relax = (p.ov.speed(gap) - v) / p.tau;
            let closing = (-dv).max(0.0);
            let braking = if closing > 0.0 {
                closing / p.tau_int * (-(gap - p.d_safe - p.t_safe * v) / p.r_int).exp()
            } else {
                0.0
            };
            relax - braking
        }
        CfSpec::Hl(p) => p.k_s * (gap - p.s0 - p.h * v) + p.k_v * dv,
    }
}

/// Commanded acceleration, clamped to the actuator range.
///
/// A non-positive gap is a collision state and is reported as an error;
/// simulations record a safety violation instead of calling this.
pub fn cf_accel(spec: &CfSpec, gap: f64, v: f64, dv: f64, v_lead: f64) -> Result<f64> {
    if !(gap > 0.0) {
        return Err(Error::Collision { gap });
    }
    if v < 0.0 || v_lead < 0.0 {
        return Err(Error::InvalidInput(format!("speeds must be non-negative (v={v}, v_lead={v_lead})")));
    }
    let a = cf_accel_raw(spec, gap, v, dv, v_lead);
    if !a.is_finite() {
        return Err(Error::NonFinite(format!("{} acceleration at gap={gap}, v={v}, dv={dv}", spec.kind())));
    }
    Ok(clamp_accel(a))
}
