use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::laws::{cf_accel, idm_raw};
use super::spec::{CfSpec, HlParams, IdmPidParams};
use super::clamp_accel;
use crate::error::{Error, Result};
use crate::kinematics::DT;

/// Higher-order linear law. `history[j]` is the realized acceleration
/// `(j + 1)` steps ago; missing entries count as zero.
pub fn hl_accel(p: &HlParams, gap: f64, v: f64, dv: f64, history: &[f64]) -> f64 {
    let filtered: f64 = p
        .c
        .iter()
        .enumerate()
        .map(|(j, c)| c * history.get(j).copied().unwrap_or(0.0))
        .sum();
    clamp_accel(p.k_s * (gap - p.s0 - p.h * v) + p.k_v * dv + filtered)
}

/// Actuator state of the IDM-PID loop.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PidState {
    /// Realized actuator acceleration.
    pub a: f64,
    pub integral: f64,
    pub prev_error: f64,
}

/// One tick of the IDM-PID loop. The IDM command is the reference and a
/// feed-forward term; the PID corrects the tracking error and the actuator
/// follows with first-order lag, `a' = a + (dt/τ_a)(u - a)`.
pub fn idm_pid_accel(
    p: &IdmPidParams,
    gap: f64,
    v: f64,
    dv: f64,
    state: &PidState,
) -> Result<(f64, PidState)> {
    if !(gap > 0.0) {
        return Err(Error::Collision { gap });
    }
    let command = clamp_accel(idm_raw(&p.idm, gap, v, dv));
    let error = command - state.a;
    let integral = (state.integral + error * DT).clamp(-p.pid.i_max, p.pid.i_max);
    let derivative = (error - state.prev_error) / DT;
    let u = command + p.pid.kp * error + p.pid.ki * integral + p.pid.kd * derivative;
    let a = clamp_accel(state.a + DT / p.pid.tau_a * (u - state.a));
    if !a.is_finite() {
        return Err(Error::NonFinite(format!("IDM-PID output at gap={gap}, v={v}")));
    }
    Ok((
        a,
        PidState {
            a,
            integral,
            prev_error: error,
        },
    ))
}

/// A car-following law together with whatever memory it needs across ticks.
#[derive(Debug, Clone)]
pub struct CfController {
    spec: CfSpec,
    history: VecDeque<f64>,
    pid: PidState,
}

impl CfController {
    pub fn new(spec: CfSpec) -> Self {
        let capacity = match &spec {
            CfSpec::Hl(p) => p.order(),
            _ => 0,
        };
        Self {
            spec,
            history: VecDeque::with_capacity(capacity),
            pid: PidState::default(),
        }
    }

    pub fn spec(&self) -> &CfSpec {
        &self.spec
    }

    /// Commanded acceleration for this tick.
    pub fn accel(&mut self, gap: f64, v: f64, dv: f64, v_lead: f64) -> Result<f64> {
        match &self.spec {
            CfSpec::Hl(p) => {
                if !(gap > 0.0) {
                    return Err(Error::Collision { gap });
                }
                let history: Vec<f64> = self.history.iter().copied().collect();
                Ok(hl_accel(p, gap, v, dv, &history))
            }
            CfSpec::IdmPid(p) => {
                let (a, next) = idm_pid_accel(p, gap, v, dv, &self.pid)?;
                self.pid = next;
                Ok(a)
            }
            spec => cf_accel(spec, gap, v, dv, v_lead),
        }
    }

    /// Feed back the acceleration the vehicle actually realized.
    pub fn record(&mut self, realized: f64) {
        match &self.spec {
            CfSpec::Hl(p) => {
                if p.order() > 0 {
                    if self.history.len() == p.order() {
                        self.history.pop_back();
                    }
                    self.history.push_front(realized);
                }
            }
            CfSpec::IdmPid(_) => self.pid.a = realized,
            _ => {}
        }
    }

    pub fn pid_state(&self) -> PidState {
        self.pid
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cf::PidGains;

    #[test]
    fn hl_equilibrium_is_zero() {
        let p = HlParams::default();
        let v = 26.2;
        assert!(hl_accel(&p, p.s0 + p.h * v, v, 0.0, &[]).abs() < 1e-12);
    }

    #[test]
    fn hl_without_filter_is_first_order() {
        let mut p = HlParams::default();
        p.c.clear();
        let a = hl_accel(&p, 50.0, 20.0, 1.0, &[3.0, 3.0]);
        let expected = p.k_s * (50.0 - p.s0 - p.h * 20.0) + p.k_v;
        assert!((a - expected).abs() < 1e-12);
    }

    #[test]
    fn hl_filter_uses_history() {
        let p = HlParams {
            c: vec![0.5, 0.25],
            ..HlParams::default()
        };
        let v = 20.0;
        let a = hl_accel(&p, p.s0 + p.h * v, v, 0.0, &[1.0, 2.0]);
        assert!((a - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pid_unit_gain_zero_error_passes_command_through() {
        let p = IdmPidParams {
            pid: PidGains {
                kp: 1.0,
                ki: 0.0,
                kd: 0.0,
                i_max: 1.0,
                tau_a: 0.5,
            },
            ..IdmPidParams::conservative()
        };
        let (gap, v, dv) = (40.0, 20.0, -1.0);
        let command = clamp_accel(idm_raw(&p.idm, gap, v, dv));
        let state = PidState {
            a: command,
            integral: 0.0,
            prev_error: 0.0,
        };
        let (a, _) = idm_pid_accel(&p, gap, v, dv, &state).unwrap();
        assert!((a - command).abs() < 1e-12);
    }

    #[test]
    fn pid_settles_within_two_seconds() {
        // Closed loop on the actuator with the IDM command held fixed.
        let p = IdmPidParams::conservative();
        let (gap, v, dv) = (60.0, 20.0, 0.0);
        let command = clamp_accel(idm_raw(&p.idm, gap, v, dv));
        assert!(command.abs() > 0.3);
        let mut state = PidState::default();
        let mut settled_at = None;
        for k in 1..=100 {
            let (a, next) = idm_pid_accel(&p, gap, v, dv, &state).unwrap();
            state = next;
            let within = (a - command).abs() <= 0.05 * command.abs();
            match (within, settled_at) {
                (true, None) => settled_at = Some(k),
                (false, Some(_)) => settled_at = None,
                _ => {}
            }
        }
        let t = settled_at.expect("never settled") as f64 * DT;
        assert!(t <= 2.0 + 1e-9, "settled at {t} s");
    }

    #[test]
    fn integral_respects_anti_windup() {
        let p = IdmPidParams::conservative();
        let mut state = PidState::default();
        for k in 0..500 {
            // Alternate between hard braking and free-road commands.
            let gap = if (k / 20) % 2 == 0 { 5.0 } else { 500.0 };
            let (_, next) = idm_pid_accel(&p, gap, 20.0, 0.0, &state).unwrap();
            // Keep the actuator pinned so the error persists.
            state = PidState { a: 0.0, ..next };
            assert!(state.integral.abs() <= p.pid.i_max + 1e-12);
        }
    }

    #[test]
    fn controller_history_is_bounded() {
        let mut c = CfController::new(CfSpec::Hl(HlParams::default()));
        for k in 0..10 {
            c.record(k as f64);
        }
        assert_eq!(c.history.len(), 2);
        assert_eq!(c.history[0], 9.0);
    }
}
