//! Plain-text `key = value` experiment configuration.

use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::StageSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub num_classes: usize,
    pub dim: usize,
    pub num_tokens: usize,
    pub noise_std: f64,
    pub samples_per_type: usize,
    pub num_experts: usize,
    pub init_std: f64,
    /// Heads of the multi-head baseline; `None` means `num_experts`.
    pub num_heads: Option<usize>,
    pub schedule: StageSchedule,
    pub seeds: Vec<u64>,
    /// Held-out probe corpus size, per mixture type.
    pub probe_samples_per_type: usize,
    /// Noisy re-routings per sample for routing histograms.
    pub histogram_trials: usize,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            dim: 64,
            num_tokens: 10,
            noise_std: 0.05,
            samples_per_type: 4,
            num_experts: 12,
            init_std: 0.1,
            num_heads: None,
            schedule: StageSchedule::default(),
            seeds: vec![0],
            probe_samples_per_type: 4,
            histogram_trials: 20,
            out_dir: PathBuf::from("out"),
        }
    }
}

pub const KEYS: &[&str] = &[
    "num_classes",
    "dim",
    "num_tokens",
    "noise_std",
    "samples_per_type",
    "num_experts",
    "init_std",
    "num_heads",
    "t1",
    "t2",
    "t_total",
    "eta",
    "eta_a",
    "eta_r",
    "noise_scale_stage1",
    "noise_scale_stage2",
    "noise_scale_stage3",
    "seeds",
    "probe_samples_per_type",
    "histogram_trials",
    "out_dir",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| Error::config(key, format!("cannot parse `{value}`: {e}")))
}

impl ExperimentConfig {
    pub fn num_heads(&self) -> usize {
        self.num_heads.unwrap_or(self.num_experts)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let s = &mut self.schedule;
        match key {
            "num_classes" => self.num_classes = parse_value(key, value)?,
            "dim" => self.dim = parse_value(key, value)?,
            "num_tokens" => self.num_tokens = parse_value(key, value)?,
            "noise_std" => self.noise_std = parse_value(key, value)?,
            "samples_per_type" => self.samples_per_type = parse_value(key, value)?,
            "num_experts" => self.num_experts = parse_value(key, value)?,
            "init_std" => self.init_std = parse_value(key, value)?,
            "num_heads" => self.num_heads = Some(parse_value(key, value)?),
            "t1" => s.t1 = parse_value(key, value)?,
            "t2" => s.t2 = parse_value(key, value)?,
            "t_total" => s.t_total = parse_value(key, value)?,
            "eta" => s.eta = parse_value(key, value)?,
            "eta_a" => s.eta_a = parse_value(key, value)?,
            "eta_r" => s.eta_r = parse_value(key, value)?,
            "noise_scale_stage1" => s.noise_scale_by_stage[0] = parse_value(key, value)?,
            "noise_scale_stage2" => s.noise_scale_by_stage[1] = parse_value(key, value)?,
            "noise_scale_stage3" => s.noise_scale_by_stage[2] = parse_value(key, value)?,
            "seeds" => {
                self.seeds = value
                    .split(',')
                    .map(|t| parse_value(key, t.trim()))
                    .collect::<Result<_>>()?
            }
            "probe_samples_per_type" => self.probe_samples_per_type = parse_value(key, value)?,
            "histogram_trials" => self.histogram_trials = parse_value(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(line, format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if seen.contains(&key) {
                return Err(Error::config(key, "duplicate key"));
            }
            seen.push(key);
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("num_classes", self.num_classes),
            ("samples_per_type", self.samples_per_type),
            ("num_experts", self.num_experts),
            ("num_heads", self.num_heads()),
            ("probe_samples_per_type", self.probe_samples_per_type),
            ("histogram_trials", self.histogram_trials),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes", "need at least 2 classes"));
        }
        if self.dim < 2 * self.num_classes {
            return Err(Error::config(
                "dim",
                format!("must be at least 2 * num_classes = {}", 2 * self.num_classes),
            ));
        }
        if self.num_tokens < 3 {
            return Err(Error::config("num_tokens", "need at least 3 tokens"));
        }
        for (key, v) in [("noise_std", self.noise_std), ("init_std", self.init_std)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be a nonnegative number"));
            }
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "seed list is empty"));
        }
        let sch = &self.schedule;
        if sch.t1 == 0 {
            return Err(Error::config("t1", "must be positive"));
        }
        if sch.t2 <= sch.t1 {
            return Err(Error::config("t2", format!("must exceed t1 = {}", sch.t1)));
        }
        if sch.t_total <= sch.t2 {
            return Err(Error::config("t_total", format!("must exceed t2 = {}", sch.t2)));
        }
        for (key, v) in [("eta", sch.eta), ("eta_a", sch.eta_a), ("eta_r", sch.eta_r)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be a positive number"));
            }
        }
        for (i, v) in sch.noise_scale_by_stage.iter().enumerate() {
            if !(*v >= 0.0 && v.is_finite()) {
                return Err(Error::config(
                    format!("noise_scale_stage{}", i + 1),
                    "must be a nonnegative number",
                ));
            }
        }
        Ok(())
    }

    /// Serializes back to the key-value grammar; floats round-trip exactly.
    pub fn to_text(&self) -> String {
        let s = &self.schedule;
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        line("num_classes", self.num_classes.to_string());
        line("dim", self.dim.to_string());
        line("num_tokens", self.num_tokens.to_string());
        line("noise_std", format!("{:?}", self.noise_std));
        line("samples_per_type", self.samples_per_type.to_string());
        line("num_experts", self.num_experts.to_string());
        line("init_std", format!("{:?}", self.init_std));
        line("num_heads", self.num_heads().to_string());
        line("t1", s.t1.to_string());
        line("t2", s.t2.to_string());
        line("t_total", s.t_total.to_string());
        line("eta", format!("{:?}", s.eta));
        line("eta_a", format!("{:?}", s.eta_a));
        line("eta_r", format!("{:?}", s.eta_r));
        for (i, x) in s.noise_scale_by_stage.iter().enumerate() {
            line(&format!("noise_scale_stage{}", i + 1), format!("{x:?}"));
        }
        line(
            "seeds",
            self.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(","),
        );
        line("probe_samples_per_type", self.probe_samples_per_type.to_string());
        line("histogram_trials", self.histogram_trials.to_string());
        line("out_dir", self.out_dir.display().to_string());
        out
    }
}
