//! Run configuration shared by the `rabictl` subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::calibrate::{FitConfig, IncidenceSeries};
use crate::control::StrategyMask;
use crate::error::{Error, Result};
use crate::integrate::{TimeGrid, DEFAULT_STEP};
use crate::model::{ControlConst, ParamSet, Preset, StateVec};
use crate::optctl::{SweepConfig, Weights};
use crate::repro::{dfe, seeded_infection, GridAxis, NgmMode};
use crate::sensitivity::{normal_ranges, uniform_ranges, ParamRange};

/// Bundled illustrative case series, used when `fit.data` is not set.
pub const BUNDLED_SERIES: &str = include_str!("../data/human_cases_illustrative.csv");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    /// Overrides applied on top of `preset`.
    pub parameters: BTreeMap<String, f64>,
    pub initial_state: InitialState,
    pub grid: GridSpec,
    pub controls: ControlsSpec,
    pub weights: Weights,
    pub sweep: SweepConfig,
    pub reff: ReffSpec,
    pub sensitivity: SensitivitySpec,
    pub fit: FitSpec,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InitialBase {
    /// Susceptibles at demographic equilibrium plus seeded dog infections.
    #[default]
    Seeded,
    /// Disease-free equilibrium.
    Dfe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct InitialState {
    pub base: InitialBase,
    /// Per-compartment overrides, keyed by state name (`S_H`, `E_F`, ...).
    pub values: BTreeMap<String, f64>,
}

impl InitialState {
    pub fn resolve(&self, p: &ParamSet) -> Result<StateVec> {
        let mut y = match self.base {
            InitialBase::Seeded => seeded_infection(p),
            InitialBase::Dfe => dfe(p),
        };
        for (name, v) in &self.values {
            let k = StateVec::index_of(name)
                .ok_or_else(|| Error::Config(format!("unknown state '{name}'")))?;
            y[k] = *v;
        }
        y.validate()?;
        Ok(y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub t0: f64,
    pub tf: f64,
    /// Number of steps; derived from `h` when absent.
    pub n_steps: Option<usize>,
    pub h: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            t0: 0.0,
            tf: 20.0,
            n_steps: None,
            h: DEFAULT_STEP,
        }
    }
}

impl GridSpec {
    pub fn resolve(&self) -> Result<TimeGrid> {
        match self.n_steps {
            Some(n) => TimeGrid::new(self.t0, self.tf, n),
            None => TimeGrid::with_step(self.t0, self.tf, self.h),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlsSpec {
    /// Constant controls for `simulate` and point `reff`.
    pub constant: ControlConst,
    /// Controls freed by `optimize`.
    pub strategy: StrategyMask,
}

impl Default for ControlsSpec {
    fn default() -> Self {
        ControlsSpec {
            constant: ControlConst::zero(),
            strategy: StrategyMask::ALL,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ReffSpec {
    /// Two axes for a grid; none for a single point.
    pub axes: Vec<GridAxis>,
    pub mode: NgmMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RangeKind {
    #[default]
    Uniform,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivitySpec {
    pub distribution: RangeKind,
    /// Half-width of the uniform ranges as a fraction of the base value.
    pub spread: f64,
    /// Parameters to vary; empty means all.
    pub params: Vec<String>,
    /// Explicit ranges, replacing the generated one for the same name.
    pub ranges: Vec<ParamRange>,
    pub n: usize,
    pub seed: u64,
    pub outputs: Vec<String>,
    pub times: Vec<f64>,
}

impl Default for SensitivitySpec {
    fn default() -> Self {
        SensitivitySpec {
            distribution: RangeKind::Uniform,
            spread: 0.25,
            params: Vec::new(),
            ranges: Vec::new(),
            n: 1000,
            seed: 2024,
            outputs: ["I_H", "I_F", "I_D", "M"].map(String::from).to_vec(),
            times: vec![5.0, 10.0, 15.0, 20.0],
        }
    }
}

impl SensitivitySpec {
    pub fn resolve_ranges(&self, base: &ParamSet) -> Result<Vec<ParamRange>> {
        if !(self.spread > 0.0 && self.spread < 1.0) {
            return Err(Error::Config(format!(
                "spread must be in (0, 1), got {}",
                self.spread
            )));
        }
        let all = match self.distribution {
            RangeKind::Uniform => uniform_ranges(base, self.spread),
            RangeKind::Normal => normal_ranges(),
        };
        for name in &self.params {
            if base.get(name).is_none() {
                return Err(Error::Config(format!("unknown parameter '{name}'")));
            }
        }
        let mut out: Vec<ParamRange> = all
            .into_iter()
            .filter(|r| self.params.is_empty() || self.params.contains(&r.name))
            .collect();
        for r in &self.ranges {
            match out.iter_mut().find(|o| o.name == r.name) {
                Some(o) => *o = r.clone(),
                None => out.push(r.clone()),
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct FitSpec {
    /// `year,cases` CSV; the bundled illustrative series when absent.
    pub data: Option<PathBuf>,
    pub nelder_mead: FitConfig,
}

impl FitSpec {
    pub fn load_series(&self) -> Result<IncidenceSeries> {
        match &self.data {
            Some(path) => {
                let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
                IncidenceSeries::from_csv(f)
            }
            None => IncidenceSeries::from_csv(BUNDLED_SERIES.as_bytes()),
        }
    }
}

impl RunConfig {
    pub fn params(&self) -> Result<ParamSet> {
        let mut p = self.preset.params();
        for (name, v) in &self.parameters {
            p.set(name, *v)?;
        }
        p.validate()?;
        Ok(p)
    }

    /// Loads `path` (or starts from defaults) and applies `key=value`
    /// overrides before deserializing.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = match path {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
            }
            None => Value::Object(Default::default()),
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Sets the dotted `key` of `root` to `value`, creating objects along the
/// way. Numeric segments index into arrays. The value is parsed as JSON and
/// falls back to a plain string.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set expects key=value, got '{assignment}'")))?;
    let key = key.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("invalid key '{key}'")));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));

    let mut cur = root;
    for seg in key.split('.') {
        if cur.is_null() {
            *cur = Value::Object(Default::default());
        }
        cur = match cur {
            Value::Object(map) => map.entry(seg.to_string()).or_insert(Value::Null),
            Value::Array(items) => {
                let i: usize = seg
                    .parse()
                    .map_err(|_| Error::Config(format!("'{seg}' in '{key}' is not an index")))?;
                let len = items.len();
                items.get_mut(i).ok_or_else(|| {
                    Error::Config(format!("index {i} in '{key}' out of range (len {len})"))
                })?
            }
            _ => {
                return Err(Error::Config(format!(
                    "'{key}': cannot descend into a scalar at '{seg}'"
                )))
            }
        };
    }
    *cur = value;
    Ok(())
}
