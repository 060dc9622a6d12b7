//! Flat `section.key` settings merged from defaults, a TOML file and
//! `--set` overrides.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::{json, Value as Json};
use toml::Value;

use crate::CliError;

/// Every key the tool understands, with its default (`None`: no default).
pub const KEYS: &[(&str, Option<&str>)] = &[
    ("seed", None),
    ("threads", Some("0")),
    ("paths.leader", None),
    ("paths.hdv_posterior", None),
    ("paths.ea_posterior", None),
    ("paths.hl_posterior", None),
    ("paths.bundle", None),
    ("paths.policy", None),
    ("paths.input", None),
    ("platoon.v_e", Some("26.2")),
    ("platoon.followers", Some("5")),
    ("platoon.horizon", Some("60.0")),
    ("platoon.takeover", Some("\"model\"")),
    ("platoon.forced_time", Some("30.0")),
    ("platoon.controller", Some("\"idm-pid\"")),
    ("hdv.shares", Some("[0.1, 0.1, 0.7, 0.1]")),
    ("ea.sigma", Some("1.0")),
    ("ea.alpha", Some("0.1")),
    ("ea.d_total", Some("1350.0")),
    ("ea.ttt_a", Some("68.0")),
    ("simulate.runs", Some("100")),
    ("simulate.write_rollouts", Some("true")),
    ("calibrate.particles", Some("1000")),
    ("calibrate.generations", Some("8")),
    ("calibrate.replicates", Some("5")),
    ("calibrate.quantile", Some("0.5")),
    ("calibrate.min_acceptance", Some("0.01")),
    ("synth.instances", Some("10")),
    ("synth.e0", Some("1.0")),
    ("synth.d", Some("0.3")),
    ("synth.e_t", Some("30.0")),
    ("synth.weights", Some("[0.5, 0.3, 0.2]")),
    ("train.episodes", Some("300")),
    ("train.checkpoint_every", Some("50")),
    ("train.smoke", Some("false")),
    ("train.train_frac", Some("0.8")),
    ("train.split_seed", Some("2024")),
    ("train.followers", Some("1")),
    ("train.absorbing_terminal", Some("true")),
    ("sac.actor_lr", None),
    ("sac.critic_lr", None),
    ("sac.temperature_lr", None),
    ("sac.discount", None),
    ("sac.hidden", None),
    ("sac.hidden_layers", None),
    ("sac.reward_scale", None),
    ("sac.updated_cycles", None),
    ("sac.update_interval", None),
    ("sac.batch_size", None),
    ("sac.log_std_min", None),
    ("sac.log_std_max", None),
    ("sac.replay_capacity", None),
    ("sac.tau", None),
    ("sac.entropy_target", None),
    ("sac.init_temperature", None),
    ("sac.random_steps", None),
    ("sac.preset", Some("\"desk\"")),
    ("reward.w_r1", Some("1.0")),
    ("reward.w_r2", Some("0.5")),
    ("reward.w_r3", Some("0.5")),
    ("reward.rho1", Some("1.5")),
    ("reward.rho2", Some("1.0")),
    ("reward.rho3", Some("5.0")),
    ("reward.rho4", Some("5.0")),
    ("reward.window", Some("50")),
    ("reward.eps_n", Some("0.001")),
    ("reward.ratio_cap", Some("100.0")),
    ("evaluate.runs", Some("200")),
    ("evaluate.controllers", Some("[\"policy\", \"idm-pid\", \"hl\"]")),
    ("evaluate.followers", Some("1")),
    ("evaluate.horizon", None),
    ("evaluate.bootstrap", Some("2000")),
];

#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, Value>,
    /// Where each explicitly set key came from.
    origin: BTreeMap<String, String>,
}

fn parse_scalar(raw: &str) -> Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => Value::String(raw.to_string()),
    }
}

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, Value)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            v => out.push((key, v.clone())),
        }
    }
}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

impl Settings {
    /// Defaults, then `file`, then each `key=value` in `sets`.
    pub fn load(file: Option<&Path>, sets: &[String]) -> Result<Self, CliError> {
        let mut s = Settings::default();
        for (k, d) in KEYS {
            if let Some(d) = d {
                s.values.insert(k.to_string(), parse_scalar(d));
            }
        }
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
            let table: toml::Table = text
                .parse()
                .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
            let mut flat = Vec::new();
            flatten("", &table, &mut flat);
            for (k, v) in flat {
                if !known(&k) {
                    return Err(CliError::input(format!("{}: unknown key `{k}`", path.display())));
                }
                s.origin.insert(k.clone(), path.display().to_string());
                s.values.insert(k, v);
            }
        }
        for set in sets {
            let (k, v) = set
                .split_once('=')
                .ok_or_else(|| CliError::input(format!("--set `{set}`: expected key=value")))?;
            let k = k.trim();
            if !known(k) {
                return Err(CliError::input(format!("--set: unknown key `{k}`")));
            }
            s.origin.insert(k.to_string(), "--set".into());
            s.values.insert(k.to_string(), parse_scalar(v.trim()));
        }
        Ok(s)
    }

    /// Command-line flags win over everything else.
    pub fn flag<T: Into<Value>>(&mut self, key: &str, v: Option<T>) {
        debug_assert!(known(key), "{key}");
        if let Some(v) = v {
            self.origin.insert(key.to_string(), "flag".into());
            self.values.insert(key.to_string(), v.into());
        }
    }

    fn source(&self, key: &str) -> String {
        self.origin.get(key).cloned().unwrap_or_else(|| "default".into())
    }

    fn wrong(&self, key: &str, want: &str) -> CliError {
        CliError::input(format!("`{key}` (from {}): expected {want}, got {}", self.source(key), self.values[key]))
    }

    pub fn has(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn f64(&self, key: &str) -> Result<f64, CliError> {
        match self.values.get(key) {
            Some(Value::Float(x)) => Ok(*x),
            Some(Value::Integer(i)) => Ok(*i as f64),
            Some(_) => Err(self.wrong(key, "a number")),
            None => Err(CliError::input(format!("`{key}` is required"))),
        }
    }

    pub fn opt_f64(&self, key: &str) -> Result<Option<f64>, CliError> {
        if self.has(key) {
            self.f64(key).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn u64(&self, key: &str) -> Result<u64, CliError> {
        match self.values.get(key) {
            Some(Value::Integer(i)) if *i >= 0 => Ok(*i as u64),
            Some(_) => Err(self.wrong(key, "a non-negative integer")),
            None => Err(CliError::input(format!("`{key}` is required"))),
        }
    }

    pub fn usize(&self, key: &str) -> Result<usize, CliError> {
        self.u64(key).map(|v| v as usize)
    }

    pub fn opt_usize(&self, key: &str) -> Result<Option<usize>, CliError> {
        if self.has(key) {
            self.usize(key).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn bool(&self, key: &str) -> Result<bool, CliError> {
        match self.values.get(key) {
            Some(Value::Boolean(b)) => Ok(*b),
            Some(_) => Err(self.wrong(key, "true or false")),
            None => Err(CliError::input(format!("`{key}` is required"))),
        }
    }

    pub fn str(&self, key: &str) -> Result<String, CliError> {
        match self.values.get(key) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(self.wrong(key, "a string")),
            None => Err(CliError::input(format!("`{key}` is required"))),
        }
    }

    pub fn path(&self, key: &str) -> Result<Option<PathBuf>, CliError> {
        if self.has(key) {
            self.str(key).map(|s| Some(PathBuf::from(s)))
        } else {
            Ok(None)
        }
    }

    pub fn f64_list(&self, key: &str) -> Result<Vec<f64>, CliError> {
        match self.values.get(key) {
            Some(Value::Array(a)) => a
                .iter()
                .map(|v| match v {
                    Value::Float(x) => Ok(*x),
                    Value::Integer(i) => Ok(*i as f64),
                    _ => Err(self.wrong(key, "an array of numbers")),
                })
                .collect(),
            Some(_) => Err(self.wrong(key, "an array of numbers")),
            None => Err(CliError::input(format!("`{key}` is required"))),
        }
    }

    pub fn str_list(&self, key: &str) -> Result<Vec<String>, CliError> {
        match self.values.get(key) {
            Some(Value::Array(a)) => a
                .iter()
                .map(|v| match v {
                    Value::String(s) => Ok(s.clone()),
                    _ => Err(self.wrong(key, "an array of strings")),
                })
                .collect(),
            Some(_) => Err(self.wrong(key, "an array of strings")),
            None => Err(CliError::input(format!("`{key}` is required"))),
        }
    }

    /// Resolved settings as JSON, sorted by key.
    pub fn snapshot(&self, skip: &[&str]) -> Json {
        let mut m = serde_json::Map::new();
        for (k, v) in &self.values {
            if skip.contains(&k.as_str()) {
                continue;
            }
            m.insert(k.clone(), toml_to_json(v));
        }
        Json::Object(m)
    }
}

fn toml_to_json(v: &Value) -> Json {
    match v {
        Value::String(s) => json!(s),
        Value::Integer(i) => json!(i),
        Value::Float(f) => json!(f),
        Value::Boolean(b) => json!(b),
        Value::Array(a) => Json::Array(a.iter().map(toml_to_json).collect()),
        Value::Table(t) => Json::Object(t.iter().map(|(k, v)| (k.clone(), toml_to_json(v))).collect()),
        Value::Datetime(d) => json!(d.to_string()),
    }
}
