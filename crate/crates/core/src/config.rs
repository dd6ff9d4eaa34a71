//! Named parameter presets and the flat `key = value` run manifest.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::admm::SolverConfig;
use crate::error::{Error, Result};
use crate::patch::PipelineConfig;

pub const PRESET_NAMES: [&str; 4] = ["table5a", "table5b", "table5c", "table5d"];

/// Parameter sets for the four experiment families: two spatially invariant
/// noise levels, spatially variant noise and real noise. Fields the table does
/// not list keep the [`PipelineConfig`] defaults.
pub fn preset(name: &str) -> Result<PipelineConfig> {
    let base = PipelineConfig::default();
    let with = |theta, patch, stride, t, alpha, lambda, rho0| PipelineConfig {
        theta,
        group_size: 60,
        patch,
        stride,
        solver: SolverConfig { lambda, t, alpha, rho0, mu: 1.002, max_iters: 10, ..base.solver.clone() },
        ..base.clone()
    };
    match name {
        "table5a" => Ok(with(3, 6, 5, 2, 1.80, 0.80, 0.30)),
        "table5b" => Ok(with(2, 6, 5, 2, 1.80, 1.00, 0.50)),
        "table5c" => Ok(with(1, 4, 3, 2, 1.50, 0.80, 0.45)),
        "table5d" => Ok(with(1, 6, 5, 0, 2.00, 2.30, 0.90)),
        other => Err(Error::InvalidConfig(format!(
            "unknown preset '{other}' (expected one of {})",
            PRESET_NAMES.join(", ")
        ))),
    }
}

/// Ordered `key = value` pairs, one per line. Lines starting with `#` are
/// comments.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunManifest {
    entries: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets `key`, replacing an earlier value in place.
    pub fn set(&mut self, key: impl Into<String>, value: impl Display) {
        let key = key.into();
        let value = value.to_string().replace('\n', " ");
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        self.get(key)
            .map(|v| v.parse::<T>().map_err(|e| Error::InvalidConfig(format!("{key} = {v}: {e}"))))
            .transpose()
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut m = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected 'key = value'", i + 1)))?;
            m.set(k.trim(), v.trim());
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.render())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Records every pipeline and solver field.
    pub fn record_pipeline(&mut self, cfg: &PipelineConfig) {
        let s = &cfg.solver;
        self.set("theta", cfg.theta);
        self.set("group_size", cfg.group_size);
        self.set("patch", cfg.patch);
        self.set("stride", cfg.stride);
        self.set("window", cfg.window);
        self.set("delta", cfg.delta);
        self.set("ablation", cfg.ablation.name());
        self.set("eps_p", cfg.eps_p);
        self.set("stats_source", cfg.stats_source.name());
        self.set("value_scale", cfg.value_scale);
        self.set("weight_ref", cfg.weight_ref);
        self.set("lambda", s.lambda);
        self.set("t", s.t);
        self.set("alpha", s.alpha);
        self.set("rho0", s.rho0);
        self.set("mu", s.mu);
        self.set("max_iters", s.max_iters);
        self.set("eps", s.eps.map_or_else(|| "auto".to_string(), |e| e.to_string()));
        self.set("shrink_rule", s.rule.name());
    }

    /// Overwrites the fields of `cfg` that this manifest mentions.
    pub fn apply_to(&self, cfg: &mut PipelineConfig) -> Result<()> {
        if let Some(name) = self.get("preset") {
            *cfg = preset(name)?;
        }
        macro_rules! take {
            ($key:literal, $slot:expr) => {
                if let Some(v) = self.parse($key)? {
                    $slot = v;
                }
            };
        }
        take!("theta", cfg.theta);
        take!("group_size", cfg.group_size);
        take!("patch", cfg.patch);
        take!("stride", cfg.stride);
        take!("window", cfg.window);
        take!("delta", cfg.delta);
        take!("ablation", cfg.ablation);
        take!("eps_p", cfg.eps_p);
        take!("stats_source", cfg.stats_source);
        take!("value_scale", cfg.value_scale);
        take!("weight_ref", cfg.weight_ref);
        take!("lambda", cfg.solver.lambda);
        take!("t", cfg.solver.t);
        take!("alpha", cfg.solver.alpha);
        take!("rho0", cfg.solver.rho0);
        take!("mu", cfg.solver.mu);
        take!("max_iters", cfg.solver.max_iters);
        take!("shrink_rule", cfg.solver.rule);
        match self.get("eps") {
            None => {}
            Some("auto") => cfg.solver.eps = None,
            Some(_) => cfg.solver.eps = self.parse("eps")?,
        }
        Ok(())
    }
}
