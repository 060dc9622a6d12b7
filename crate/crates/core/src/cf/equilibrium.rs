use super::laws::cf_accel_raw;
use super::spec::CfSpec;
use crate::error::{Error, Result};

/// Search interval for equilibrium gaps (m).
pub const GAP_BRACKET: (f64, f64) = (0.1, 1000.0);

/// Bumper-to-bumper gap at which `spec` holds speed `v_e` behind a leader
/// moving at the same speed. Every law is non-decreasing in gap, so the root
/// is found by bisection.
pub fn equilibrium_gap(spec: &CfSpec, v_e: f64) -> Result<f64> {
    let (mut lo, mut hi) = GAP_BRACKET;
    let no_root = || Error::NoEquilibrium {
        what: format!("{spec} at v_E={v_e}"),
        lo: GAP_BRACKET.0,
        hi: GAP_BRACKET.1,
    };
    if !(v_e >= 0.0) || v_e >= spec.free_flow_speed() {
        return Err(no_root());
    }
    let f = |g: f64| cf_accel_raw(spec, g, v_e, 0.0, v_e);
    let (f_lo, f_hi) = (f(lo), f(hi));
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if !(f_lo < 0.0 && f_hi > 0.0) {
        return Err(no_root());
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(if f(lo).abs() <= f(hi).abs() { lo } else { hi })
}
