//! Longitudinal kinematics shared by every vehicle in the simulation.
//!
//! All quantities are SI. Integration is explicit forward Euler at a fixed
//! step: position advances with the pre-step speed, then speed advances with
//! the commanded acceleration and is clamped at zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Model step in seconds.
pub const DT: f64 = 0.1;

/// 60 mph in m/s.
pub const SPEED_LIMIT: f64 = 26.8224;

/// Default bumper-to-bumper offset between consecutive vehicle fronts.
pub const VEHICLE_LENGTH: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Leader,
    Av,
    HdvFollower,
    Shadow,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::Leader => "leader",
            Role::Av => "av",
            Role::HdvFollower => "hdv_follower",
            Role::Shadow => "shadow",
        }
    }
}

impl std::str::FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "leader" => Ok(Role::Leader),
            "av" => Ok(Role::Av),
            "hdv_follower" => Ok(Role::HdvFollower),
            "shadow" => Ok(Role::Shadow),
            other => Err(Error::InvalidInput(format!("unknown role `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: u32,
    pub role: Role,
    /// Position along the lane (m).
    pub y: f64,
    /// Speed (m/s), never negative.
    pub v: f64,
    /// Acceleration realized over the last step (m/s²).
    pub a: f64,
}

impl VehicleState {
    pub fn new(id: u32, role: Role, y: f64, v: f64) -> Self {
        Self {
            id,
            role,
            y,
            v,
            a: 0.0,
        }
    }
}

/// Advance one vehicle by one forward-Euler step.
///
/// `y' = y + v·dt`, `v' = max(0, v + a_cmd·dt)`. When the zero-speed clamp
/// engages the recorded acceleration is the one actually realized, `-v/dt`.
pub fn euler_step(state: &VehicleState, a_cmd: f64, dt: f64) -> Result<VehicleState> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
    }
    if !a_cmd.is_finite() || !state.y.is_finite() || !state.v.is_finite() {
        return Err(Error::NonFinite(format!(
            "euler_step(vehicle {}, y={}, v={}, a_cmd={a_cmd})",
            state.id, state.y, state.v
        )));
    }
    let y = state.y + state.v * dt;
    let v_raw = state.v + a_cmd * dt;
    let (v, a) = if v_raw < 0.0 {
        (0.0, -state.v / dt)
    } else {
        (v_raw, a_cmd)
    };
    Ok(VehicleState { y, v, a, ..*state })
}

/// Uniformly sampled history of one vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub dt: f64,
    pub samples: Vec<VehicleState>,
}

impl Trajectory {
    pub fn new(dt: f64, samples: Vec<VehicleState>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("trajectory"));
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidInput(format!("trajectory dt must be positive, got {dt}")));
        }
        Ok(Self { dt, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Time span covered, `(len - 1)·dt`.
    pub fn duration(&self) -> f64 {
        (self.samples.len().saturating_sub(1)) as f64 * self.dt
    }

    pub fn speeds(&self) -> impl Iterator<Item = f64> + '_ {
        self.samples.iter().map(|s| s.v)
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }
}
