use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::laws::OvFunction;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CfKind {
    Idm,
    Fvdm,
    Gfm,
    Ovm,
    Hl,
    IdmPid,
}

impl CfKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CfKind::Idm => "IDM",
            CfKind::Fvdm => "FVDM",
            CfKind::Gfm => "GFM",
            CfKind::Ovm => "OVM",
            CfKind::Hl => "HL",
            CfKind::IdmPid => "IDM_PID",
        }
    }

    pub fn is_human(self) -> bool {
        matches!(self, CfKind::Idm | CfKind::Fvdm | CfKind::Gfm | CfKind::Ovm)
    }
}

impl fmt::Display for CfKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CfKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().replace('-', "_").as_str() {
            "IDM" => Ok(CfKind::Idm),
            "FVDM" => Ok(CfKind::Fvdm),
            "GFM" => Ok(CfKind::Gfm),
            "OVM" => Ok(CfKind::Ovm),
            "HL" => Ok(CfKind::Hl),
            "IDM_PID" | "IDMPID" => Ok(CfKind::IdmPid),
            other => Err(Error::InvalidInput(format!("unknown car-following model `{other}`"))),
        }
    }
}

/// Intelligent driver model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    /// Desired speed (m/s).
    pub v0: f64,
    /// Safe time headway (s).
    pub t_headway: f64,
    /// Standstill distance (m).
    pub s0: f64,
    /// Maximum acceleration (m/s²).
    pub a: f64,
    /// Comfortable deceleration (m/s²).
    pub b: f64,
    pub delta: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self {
            v0: 33.3,
            t_headway: 1.6,
            s0: 2.0,
            a: 1.5,
            b: 2.0,
            delta: 4.0,
        }
    }
}

/// Full velocity difference model: `κ[V(s) - v] + λ·dv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FvdmParams {
    pub ov: OvFunction,
    pub kappa: f64,
    pub lambda: f64,
}

/// Generalized force model: relaxation toward `V(s)` plus a braking
/// interaction that only acts while closing in on the leader.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GfmParams {
    pub ov: OvFunction,
    /// Relaxation time (s).
    pub tau: f64,
    /// Braking time scale of the interaction term (s).
    pub tau_int: f64,
    /// Interaction range (m).
    pub r_int: f64,
    /// Safe distance at standstill (m).
    pub d_safe: f64,
    /// Safe time headway (s).
    pub t_safe: f64,
}

/// Optimal velocity model: `κ[V(s) - v]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OvmParams {
    pub ov: OvFunction,
    pub kappa: f64,
}

/// Constant-time-headway linear feedback with output filtering on past
/// accelerations: `k_s(gap - s0 - h·v) + k_v·dv + Σ c_j a(t - j·dt)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HlParams {
    pub s0: f64,
    pub h: f64,
    pub k_s: f64,
    pub k_v: f64,
    pub c: Vec<f64>,
}

impl Default for HlParams {
    fn default() -> Self {
        Self {
            s0: 2.0,
            h: 1.4,
            k_s: 0.1,
            k_v: 0.8,
            c: vec![0.2, -0.1],
        }
    }
}

impl HlParams {
    pub fn order(&self) -> usize {
        self.c.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    /// Anti-windup bound on the integral state.
    pub i_max: f64,
    /// Actuator time constant (s).
    pub tau_a: f64,
}

impl Default for PidGains {
    fn default() -> Self {
        Self {
            kp: 2.0,
            ki: 0.5,
            kd: 0.1,
            i_max: 2.0,
            tau_a: 0.5,
        }
    }
}

/// IDM command tracked by a PID actuator loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmPidParams {
    pub idm: IdmParams,
    pub pid: PidGains,
}

impl IdmPidParams {
    /// Long headway, gentle acceleration.
    pub fn conservative() -> Self {
        Self {
            idm: IdmParams {
                v0: 30.0,
                t_headway: 1.8,
                s0: 3.0,
                a: 1.0,
                b: 1.5,
                delta: 4.0,
            },
            pid: PidGains::default(),
        }
    }

    /// Short headway, brisk acceleration and braking.
    pub fn aggressive() -> Self {
        Self {
            idm: IdmParams {
                v0: 33.3,
                t_headway: 1.0,
                s0: 2.0,
                a: 2.0,
                b: 3.0,
                delta: 4.0,
            },
            pid: PidGains::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CfSpec {
    Idm(IdmParams),
    Fvdm(FvdmParams),
    Gfm(GfmParams),
    Ovm(OvmParams),
    Hl(HlParams),
    IdmPid(IdmPidParams),
}

const IDM_NAMES: [&str; 6] = ["v0", "T", "s0", "a", "b", "delta"];
const OV_NAMES: [&str; 3] = ["v_max", "s_c", "w"];

impl CfSpec {
    pub fn kind(&self) -> CfKind {
        match self {
            CfSpec::Idm(_) => CfKind::Idm,
            CfSpec::Fvdm(_) => CfKind::Fvdm,
            CfSpec::Gfm(_) => CfKind::Gfm,
            CfSpec::Ovm(_) => CfKind::Ovm,
            CfSpec::Hl(_) => CfKind::Hl,
            CfSpec::IdmPid(_) => CfKind::IdmPid,
        }
    }

    /// Parameter names for `kind`; HL lists `c1..cm` for its declared order.
    pub fn param_names(kind: CfKind, hl_order: usize) -> Vec<String> {
        let names: Vec<&str> = match kind {
            CfKind::Idm => IDM_NAMES.to_vec(),
            CfKind::Fvdm => [&OV_NAMES[..], &["kappa", "lambda"]].concat(),
            CfKind::Gfm => [&OV_NAMES[..], &["tau", "tau_int", "r_int", "d_safe", "t_safe"]].concat(),
            CfKind::Ovm => [&OV_NAMES[..], &["kappa"]].concat(),
            CfKind::Hl => vec!["s0", "h", "k_s", "k_v"],
            CfKind::IdmPid => [&IDM_NAMES[..], &["kp", "ki", "kd", "i_max", "tau_a"]].concat(),
        };
        let mut out: Vec<String> = names.into_iter().map(String::from).collect();
        if kind == CfKind::Hl {
            out.extend((1..=hl_order).map(|j| format!("c{j}")));
        }
        out
    }

    pub fn to_named(&self) -> Vec<(String, f64)> {
        let values: Vec<f64> = match self {
            CfSpec::Idm(p) => idm_values(p).to_vec(),
            CfSpec::Fvdm(p) => vec![p.ov.v_max, p.ov.s_c, p.ov.width, p.kappa, p.lambda],
            CfSpec::Gfm(p) => vec![
                p.ov.v_max, p.ov.s_c, p.ov.width, p.tau, p.tau_int, p.r_int, p.d_safe, p.t_safe,
            ],
            CfSpec::Ovm(p) => vec![p.ov.v_max, p.ov.s_c, p.ov.width, p.kappa],
            CfSpec::Hl(p) => {
                let mut v = vec![p.s0, p.h, p.k_s, p.k_v];
                v.extend(&p.c);
                v
            }
            CfSpec::IdmPid(p) => {
                let mut v = idm_values(&p.idm).to_vec();
                v.extend([p.pid.kp, p.pid.ki, p.pid.kd, p.pid.i_max, p.pid.tau_a]);
                v
            }
        };
        let hl_order = match self {
            CfSpec::Hl(p) => p.order(),
            _ => 0,
        };
        Self::param_names(self.kind(), hl_order).into_iter().zip(values).collect()
    }

    /// Build a spec from named values. Unknown names are ignored; missing
    /// ones are errors. HL order is the number of consecutive `c1, c2, ...`
    /// present.
    pub fn from_named(kind: CfKind, values: &BTreeMap<String, f64>) -> Result<Self> {
        let get = |name: &str| -> Result<f64> {
            values.get(name).copied().ok_or_else(|| {
                Error::InvalidInput(format!("{kind} parameter `{name}` missing"))
            })
        };
        let idm = || -> Result<IdmParams> {
            Ok(IdmParams {
                v0: get("v0")?,
                t_headway: get("T")?,
                s0: get("s0")?,
                a: get("a")?,
                b: get("b")?,
                delta: get("delta")?,
            })
        };
        let ov = || -> Result<OvFunction> {
            Ok(OvFunction {
                v_max: get("v_max")?,
                s_c: get("s_c")?,
                width: get("w")?,
            })
        };
        let spec = match kind {
            CfKind::Idm => CfSpec::Idm(idm()?),
            CfKind::Fvdm => CfSpec::Fvdm(FvdmParams {
                ov: ov()?,
                kappa: get("kappa")?,
                lambda: get("lambda")?,
            }),
            CfKind::Gfm => CfSpec::Gfm(GfmParams {
                ov: ov()?,
                tau: get("tau")?,
                tau_int: get("tau_int")?,
                r_int: get("r_int")?,
                d_safe: get("d_safe")?,
                t_safe: get("t_safe")?,
            }),
            CfKind::Ovm => CfSpec::Ovm(OvmParams {
                ov: ov()?,
                kappa: get("kappa")?,
            }),
            CfKind::Hl => {
                let c = (1..)
                    .map_while(|j| values.get(&format!("c{j}")).copied())
                    .collect();
                CfSpec::Hl(HlParams {
                    s0: get("s0")?,
                    h: get("h")?,
                    k_s: get("k_s")?,
                    k_v: get("k_v")?,
                    c,
                })
            }
            CfKind::IdmPid => CfSpec::IdmPid(IdmPidParams {
                idm: idm()?,
                pid: PidGains {
                    kp: get("kp")?,
                    ki: get("ki")?,
                    kd: get("kd")?,
                    i_max: get("i_max")?,
                    tau_a: get("tau_a")?,
                },
            }),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Check the per-kind parameter invariants.
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, x: f64| -> Result<()> {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!(
                    "{} parameter `{name}` must be positive and finite, got {x}",
                    self.kind()
                )))
            }
        };
        let non_negative = |name: &str, x: f64| -> Result<()> {
            if x >= 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!(
                    "{} parameter `{name}` must be non-negative and finite, got {x}",
                    self.kind()
                )))
            }
        };
        let check_idm = |p: &IdmParams| -> Result<()> {
            positive("v0", p.v0)?;
            positive("T", p.t_headway)?;
            positive("s0", p.s0)?;
            positive("a", p.a)?;
            positive("b", p.b)?;
            positive("delta", p.delta)
        };
        let check_ov = |ov: &OvFunction| -> Result<()> {
            positive("v_max", ov.v_max)?;
            positive("s_c", ov.s_c)?;
            positive("w", ov.width)
        };
        match self {
            CfSpec::Idm(p) => check_idm(p),
            CfSpec::Fvdm(p) => {
                check_ov(&p.ov)?;
                positive("kappa", p.kappa)?;
                non_negative("lambda", p.lambda)
            }
            CfSpec::Gfm(p) => {
                check_ov(&p.ov)?;
                positive("tau", p.tau)?;
                positive("tau_int", p.tau_int)?;
                positive("r_int", p.r_int)?;
                positive("d_safe", p.d_safe)?;
                positive("t_safe", p.t_safe)
            }
            CfSpec::Ovm(p) => {
                check_ov(&p.ov)?;
                positive("kappa", p.kappa)
            }
            CfSpec::Hl(p) => {
                positive("s0", p.s0)?;
                positive("h", p.h)?;
                positive("k_s", p.k_s)?;
                non_negative("k_v", p.k_v)?;
                if p.c.iter().any(|c| !c.is_finite()) {
                    return Err(Error::InvalidInput("HL filter coefficients must be finite".into()));
                }
                if p.c.iter().map(|c| c.abs()).sum::<f64>() >= 1.0 {
                    return Err(Error::InvalidInput(
                        "HL filter coefficients must satisfy Σ|c_j| < 1".into(),
                    ));
                }
                Ok(())
            }
            CfSpec::IdmPid(p) => {
                check_idm(&p.idm)?;
                non_negative("kp", p.pid.kp)?;
                non_negative("ki", p.pid.ki)?;
                non_negative("kd", p.pid.kd)?;
                positive("i_max", p.pid.i_max)?;
                positive("tau_a", p.pid.tau_a)
            }
        }
    }

    /// Speed the law approaches on an empty road.
    pub fn free_flow_speed(&self) -> f64 {
        match self {
            CfSpec::Idm(p) => p.v0,
            CfSpec::IdmPid(p) => p.idm.v0,
            CfSpec::Fvdm(p) => p.ov.v_inf(),
            CfSpec::Gfm(p) => p.ov.v_inf(),
            CfSpec::Ovm(p) => p.ov.v_inf(),
            CfSpec::Hl(_) => f64::INFINITY,
        }
    }
}

fn idm_values(p: &IdmParams) -> [f64; 6] {
    [p.v0, p.t_headway, p.s0, p.a, p.b, p.delta]
}

impl fmt::Display for CfSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(", self.kind())?;
        for (i, (name, value)) in self.to_named().iter().enumerate() {
            if i > 0 {
                f.write_str(";")?;
            }
            write!(f, "{name}={value}")?;
        }
        f.write_str(")")
    }
}

impl FromStr for CfSpec {
    type Err = Error;

    /// Parses the `KIND(name=value;...)` form produced by `Display`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let open = s
            .find('(')
            .ok_or_else(|| Error::InvalidInput(format!("expected KIND(name=value;...), got `{s}`")))?;
        if !s.ends_with(')') {
            return Err(Error::InvalidInput(format!("unterminated parameter list in `{s}`")));
        }
        let kind: CfKind = s[..open].parse()?;
        let mut values = BTreeMap::new();
        for pair in s[open + 1..s.len() - 1].split(';').filter(|p| !p.trim().is_empty()) {
            let (name, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::InvalidInput(format!("expected name=value, got `{pair}`")))?;
            let value: f64 = value.trim().parse().map_err(|_| {
                Error::InvalidInput(format!("parameter `{}` is not a number", name.trim()))
            })?;
            values.insert(name.trim().to_string(), value);
        }
        CfSpec::from_named(kind, &values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples() -> Vec<CfSpec> {
        let ov = OvFunction::default();
        vec![
            CfSpec::Idm(IdmParams::default()),
            CfSpec::Fvdm(FvdmParams {
                ov,
                kappa: 0.6,
                lambda: 0.5,
            }),
            CfSpec::Gfm(GfmParams {
                ov,
                tau: 0.8,
                tau_int: 0.75,
                r_int: 10.0,
                d_safe: 2.0,
                t_safe: 1.0,
            }),
            CfSpec::Ovm(OvmParams { ov, kappa: 0.8 }),
            CfSpec::Hl(HlParams::default()),
            CfSpec::IdmPid(IdmPidParams::conservative()),
        ]
    }

    #[test]
    fn display_parse_round_trip() {
        for spec in samples() {
            let text = spec.to_string();
            let back: CfSpec = text.parse().unwrap();
            assert_eq!(back, spec, "{text}");
        }
    }

    #[test]
    fn arity_matches_schema() {
        for spec in samples() {
            let order = if let CfSpec::Hl(p) = &spec { p.order() } else { 0 };
            assert_eq!(spec.to_named().len(), CfSpec::param_names(spec.kind(), order).len());
        }
    }

    #[test]
    fn rejects_non_positive_scales() {
        let mut p = IdmParams::default();
        p.t_headway = 0.0;
        assert!(CfSpec::Idm(p).validate().is_err());
        let mut hl = HlParams::default();
        hl.h = -1.0;
        assert!(CfSpec::Hl(hl).validate().is_err());
    }

    #[test]
    fn missing_parameter_names_the_key() {
        let values = BTreeMap::from([("v0".to_string(), 30.0)]);
        let err = CfSpec::from_named(CfKind::Idm, &values).unwrap_err().to_string();
        assert!(err.contains("`T`"), "{err}");
    }
}
