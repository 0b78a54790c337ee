//! `key = value` run configuration.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Modality;
use crate::ontology::MetricMode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Encoder {
    Gcn,
}

impl FromStr for Encoder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gcn" => Ok(Encoder::Gcn),
            "gat" | "gatv2" | "gin" | "graphsage" => Err(Error::EncoderNotImplemented(s.to_string())),
            other => Err(Error::Config {
                key: "encoder".into(),
                message: format!("unknown encoder `{other}`"),
            }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub seeds: usize,
    pub bins: usize,
    pub diag_percent: f64,
    pub meas_percent: f64,
    pub metric_mode: MetricMode,
    pub min_pair_count: u64,
    pub encoder: Encoder,
    pub hidden_dim: usize,
    pub time_dim: usize,
    pub gcn_layers: usize,
    pub cooccurrence: bool,
    pub time_aware: bool,
    pub random_edges: bool,
    pub cross_modality: bool,
    pub lab_filter: bool,
    pub lab_min_prevalence: f64,
    pub modalities: Vec<Modality>,
    pub pair_cap: usize,
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            weight_decay: 1e-6,
            batch: 128,
            dropout: 0.5,
            epochs: 30,
            seeds: 5,
            bins: 10,
            diag_percent: 3.0,
            meas_percent: 5.0,
            metric_mode: MetricMode::default(),
            min_pair_count: 5,
            encoder: Encoder::Gcn,
            hidden_dim: 128,
            time_dim: 64,
            gcn_layers: 2,
            cooccurrence: true,
            time_aware: true,
            random_edges: false,
            cross_modality: false,
            lab_filter: true,
            lab_min_prevalence: 0.2,
            modalities: vec![Modality::Diagnosis, Modality::Measurement],
            pair_cap: 2_000_000,
            threads: 1,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse::<T>().map_err(|e| Error::Config {
        key: key.to_string(),
        message: format!("cannot parse `{value}`: {e}"),
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config {
            key: key.to_string(),
            message: format!("expected a boolean, got `{value}`"),
        }),
    }
}

fn parse_modalities(value: &str) -> Result<Vec<Modality>> {
    let mut out = Vec::new();
    for part in value.split([',', '+']).map(str::trim).filter(|s| !s.is_empty()) {
        let m = match part {
            "diagnosis" | "diag" => Modality::Diagnosis,
            "measurement" | "meas" => Modality::Measurement,
            other => {
                return Err(Error::Config {
                    key: "modalities".into(),
                    message: format!("unknown modality `{other}`"),
                })
            }
        };
        if !out.contains(&m) {
            out.push(m);
        }
    }
    out.sort();
    Ok(out)
}

impl RunConfig {
    /// Sets one key from its textual value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "lr" => self.lr = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seeds" => self.seeds = parse(key, value)?,
            "bins" => self.bins = parse(key, value)?,
            "diag_percent" => self.diag_percent = parse(key, value)?,
            "meas_percent" => self.meas_percent = parse(key, value)?,
            "metric_mode" => self.metric_mode = parse(key, value)?,
            "min_pair_count" => self.min_pair_count = parse(key, value)?,
            "encoder" => self.encoder = value.parse()?,
            "hidden_dim" => self.hidden_dim = parse(key, value)?,
            "time_dim" => self.time_dim = parse(key, value)?,
            "gcn_layers" => self.gcn_layers = parse(key, value)?,
            "cooccurrence" => self.cooccurrence = parse_bool(key, value)?,
            "time_aware" => self.time_aware = parse_bool(key, value)?,
            "random_edges" => self.random_edges = parse_bool(key, value)?,
            "cross_modality" => self.cross_modality = parse_bool(key, value)?,
            "lab_filter" => self.lab_filter = parse_bool(key, value)?,
            "lab_min_prevalence" => self.lab_min_prevalence = parse(key, value)?,
            "modalities" => self.modalities = parse_modalities(value)?,
            "pair_cap" => self.pair_cap = parse(key, value)?,
            "threads" => self.threads = parse(key, value)?,
            _ => {
                return Err(Error::Config {
                    key: key.to_string(),
                    message: "unknown key".into(),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, message: String| {
            Err(Error::Config {
                key: key.to_string(),
                message,
            })
        };
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr", format!("must be positive, got {}", self.lr));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay", format!("must be >= 0, got {}", self.weight_decay));
        }
        if self.batch == 0 {
            return bad("batch", "must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout", format!("must be in [0, 1), got {}", self.dropout));
        }
        if self.seeds == 0 {
            return bad("seeds", "must be at least 1".into());
        }
        if self.bins == 0 {
            return bad("bins", "must be at least 1".into());
        }
        for (key, p) in [("diag_percent", self.diag_percent), ("meas_percent", self.meas_percent)] {
            if !(0.0..=100.0).contains(&p) {
                return bad(key, format!("must be in [0, 100], got {p}"));
            }
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim", "must be at least 1".into());
        }
        if self.time_dim == 0 {
            return bad("time_dim", "must be at least 1".into());
        }
        if self.gcn_layers == 0 {
            return bad("gcn_layers", "must be at least 1".into());
        }
        if self.cross_modality {
            return bad("cross_modality", "cross-modality edges are not supported".into());
        }
        if !(0.0..=1.0).contains(&self.lab_min_prevalence) {
            return bad("lab_min_prevalence", format!("must be in [0, 1], got {}", self.lab_min_prevalence));
        }
        if self.modalities.is_empty() {
            return bad("modalities", "at least one modality is required".into());
        }
        if self.threads == 0 {
            return bad("threads", "must be at least 1".into());
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. Keys not present keep
    /// their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config {
                    key: line.to_string(),
                    message: format!("line {}: expected `key = value`", n + 1),
                });
            };
            cfg.set(key.trim(), value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Renders the configuration in the same format `parse` reads.
    pub fn render(&self) -> String {
        let modalities: Vec<&str> = self.modalities.iter().map(|m| m.name()).collect();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("lr", self.lr.to_string());
        kv("weight_decay", self.weight_decay.to_string());
        kv("batch", self.batch.to_string());
        kv("dropout", self.dropout.to_string());
        kv("epochs", self.epochs.to_string());
        kv("seeds", self.seeds.to_string());
        kv("bins", self.bins.to_string());
        kv("diag_percent", self.diag_percent.to_string());
        kv("meas_percent", self.meas_percent.to_string());
        kv("metric_mode", self.metric_mode.name().to_string());
        kv("min_pair_count", self.min_pair_count.to_string());
        kv("encoder", "gcn".to_string());
        kv("hidden_dim", self.hidden_dim.to_string());
        kv("time_dim", self.time_dim.to_string());
        kv("gcn_layers", self.gcn_layers.to_string());
        kv("cooccurrence", self.cooccurrence.to_string());
        kv("time_aware", self.time_aware.to_string());
        kv("random_edges", self.random_edges.to_string());
        kv("cross_modality", self.cross_modality.to_string());
        kv("lab_filter", self.lab_filter.to_string());
        kv("lab_min_prevalence", self.lab_min_prevalence.to_string());
        kv("modalities", modalities.join(","));
        kv("pair_cap", self.pair_cap.to_string());
        kv("threads", self.threads.to_string());
        s
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Data {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    RunConfig::parse(&text)
}
