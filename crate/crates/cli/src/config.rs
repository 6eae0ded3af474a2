//! Experiment config: one JSON file per run.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use serde::Deserialize;
use serde_json::Value;

use neckspec::glued_model::{Boundary, BuildingBlock};
use neckspec::spectral_density::DEFAULT_S;
use neckspec::spectral_model::{circle_spectrum, default_cutoff, load_spectrum, torus2_spectrum, CrossSectionSpectrum};

/// Problems with the config itself; these map to exit code 2.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config is not valid: {0}")]
    Syntax(#[from] serde_json::Error),
    #[error("spectrum file {path} not found")]
    MissingSpectrum { path: PathBuf },
    #[error("field `{field}`: {message}")]
    Field { field: String, message: String },
}

fn field_err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field { field: field.into(), message: message.into() }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Raw {
    spectrum: Value,
    blocks: Option<[Value; 2]>,
    q: Option<Vec<i64>>,
    #[serde(rename = "T")]
    ts: Option<Vec<f64>>,
    s: Option<Vec<f64>>,
    h: Option<f64>,
    cutoff: Option<f64>,
    #[serde(default)]
    seed: u64,
    cases: Option<usize>,
    out: Option<PathBuf>,
}

/// How to build one block once T and h are known.
#[derive(Debug, Clone)]
pub enum BlockSpec {
    Plain(BuildingBlock),
    /// Exact-kernel profile block; its potential is sampled on the run's grid.
    Profile { spectrum: Arc<CrossSectionSpectrum>, l: f64, mu: f64, c: f64, mode: usize },
}

impl BlockSpec {
    pub fn build(&self, t: f64, h: f64) -> neckspec::Result<BuildingBlock> {
        match self {
            BlockSpec::Plain(b) => Ok(b.clone()),
            BlockSpec::Profile { spectrum, l, mu, c, mode } => {
                BuildingBlock::from_profile(spectrum.clone(), *l, *mu, *c, *mode, h, 2.0 * t + 10.0)
            }
        }
    }

    pub fn has_potential(&self) -> bool {
        match self {
            BlockSpec::Plain(b) => b.potential_indices().next().is_some(),
            BlockSpec::Profile { .. } => true,
        }
    }

    pub fn mu(&self) -> f64 {
        match self {
            BlockSpec::Plain(b) => b.mu,
            BlockSpec::Profile { mu, .. } => *mu,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Config {
    pub spectrum: Arc<CrossSectionSpectrum>,
    pub blocks: [BlockSpec; 2],
    pub q: Vec<i64>,
    pub ts: Vec<f64>,
    pub ss: Vec<f64>,
    /// None: each command picks its own default step.
    pub h: Option<f64>,
    pub cutoff: f64,
    pub seed: u64,
    pub cases: Option<usize>,
    pub out: PathBuf,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parses config text; relative paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let raw: Raw = serde_json::from_str(text).map_err(ConfigError::from)?;
        let spectrum = Arc::new(spectrum_from(&raw.spectrum, base, "spectrum")?);
        let blocks = match &raw.blocks {
            Some([a, b]) => [block_from(a, &spectrum, base, "blocks[0]")?, block_from(b, &spectrum, base, "blocks[1]")?],
            None => {
                let free = BlockSpec::Plain(BuildingBlock::free(spectrum.clone(), 2.0, Boundary::Neumann, 1.0)?);
                [free.clone(), free]
            }
        };
        let ts = raw.ts.unwrap_or_else(|| vec![20.0, 40.0, 80.0]);
        let ss = raw.s.unwrap_or_else(|| DEFAULT_S.to_vec());
        if ts.is_empty() || ts.iter().any(|t| !(*t > 0.0)) {
            return Err(field_err("T", "needs at least one positive value").into());
        }
        if ss.is_empty() || ss.iter().any(|s| !(*s > 0.0)) {
            return Err(field_err("s", "needs at least one positive value").into());
        }
        if let Some(h) = raw.h {
            if !(h > 0.0) {
                return Err(field_err("h", "must be positive").into());
            }
        }
        let cutoff = match raw.cutoff {
            Some(c) if !(c > 0.0) => return Err(field_err("cutoff", "must be positive").into()),
            Some(c) => c,
            None => {
                let t_min = ts.iter().cloned().fold(f64::INFINITY, f64::min);
                let s_max = ss.iter().cloned().fold(0.0, f64::max);
                default_cutoff(t_min, s_max)
            }
        };
        let q = raw.q.unwrap_or_else(|| vec![0]);
        if q.is_empty() || q.iter().any(|&d| d < 0 || d as usize > spectrum.dimension) {
            return Err(field_err("q", format!("degrees must lie in 0..={}", spectrum.dimension)).into());
        }
        Ok(Config {
            spectrum,
            blocks,
            q,
            ts,
            ss,
            h: raw.h,
            cutoff,
            seed: raw.seed,
            cases: raw.cases,
            out: raw.out.map(|o| base.join(o)).unwrap_or_else(|| PathBuf::from("neckspec-out")),
        })
    }

    pub fn h_or(&self, default: f64) -> f64 {
        self.h.unwrap_or(default)
    }
}

/// A file path, a generator `{"generator": "circle" | "torus2", ...}`, or an
/// inline spectrum object.
fn spectrum_from(v: &Value, base: &Path, field: &str) -> Result<CrossSectionSpectrum> {
    match v {
        Value::String(p) => {
            let path = base.join(p);
            if !path.is_file() {
                return Err(ConfigError::MissingSpectrum { path }.into());
            }
            Ok(load_spectrum(&path).with_context(|| format!("loading {}", path.display()))?)
        }
        Value::Object(obj) if obj.contains_key("generator") => {
            let num = |k: &str, d: f64| obj.get(k).and_then(Value::as_f64).unwrap_or(d);
            match obj["generator"].as_str() {
                Some("circle") => Ok(circle_spectrum(num("length", 2.0 * PI), num("levels", 2.0) as usize)?),
                Some("torus2") => Ok(torus2_spectrum(num("max_lattice", 1.0) as usize)?),
                _ => Err(field_err(&format!("{field}.generator"), "expected \"circle\" or \"torus2\"").into()),
            }
        }
        Value::Object(_) => Ok(CrossSectionSpectrum::from_json_value(v)?),
        _ => Err(field_err(field, "expected a file path or an object").into()),
    }
}

/// Block keys as in the block schema, plus an optional own `spectrum` and
/// `profile: {L, mu, c, mode}` for the exact-kernel profile block.
fn block_from(v: &Value, global: &Arc<CrossSectionSpectrum>, base: &Path, field: &str) -> Result<BlockSpec> {
    let mut obj = v.as_object().cloned().ok_or_else(|| field_err(field, "expected an object"))?;
    let spectrum = match obj.remove("spectrum") {
        Some(s) => Arc::new(spectrum_from(&s, base, &format!("{field}.spectrum"))?),
        None => global.clone(),
    };
    if let Some(p) = obj.remove("profile") {
        let pf = format!("{field}.profile");
        let get = |k: &str, d: Option<f64>| -> Result<f64> {
            match p.get(k) {
                Some(x) => x.as_f64().ok_or_else(|| field_err(&format!("{pf}.{k}"), "expected a number").into()),
                None => d.ok_or_else(|| field_err(&format!("{pf}.{k}"), "missing").into()),
            }
        };
        return Ok(BlockSpec::Profile {
            spectrum,
            l: get("L", Some(6.0))?,
            mu: get("mu", None)?,
            c: get("c", Some(0.5))?,
            mode: get("mode", Some(0.0))? as usize,
        });
    }
    let b = BuildingBlock::from_json_value(&Value::Object(obj), spectrum).with_context(|| field.to_string())?;
    Ok(BlockSpec::Plain(b))
}
