use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::dynamics::Tolerances;
use crate::error::{Error, Result};
use crate::models::{Family, DEFAULT_GQM_GAMMA};

/// Where the training (and optional test) data comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Balanced 1-D Gaussian mixture. A test set of `n_test` points is drawn
    /// from the same law under a different seed.
    Synthetic1d {
        n: usize,
        seed: u64,
        #[serde(default)]
        n_test: usize,
    },
    /// A `features…,label` file, split into train and test.
    CsvTwoclass {
        path: PathBuf,
        n_train: usize,
        n_test: usize,
        #[serde(default)]
        split_seed: u64,
    },
    /// The random quadratic-model instance with one input `x` of dimension
    /// `dim`. Instance seed is `seed + run seed`.
    GqmRandom {
        dim: usize,
        #[serde(default)]
        label: f64,
        #[serde(default)]
        seed: u64,
    },
    /// One example with `‖x‖² = d`. Data seed is `seed + run seed`.
    Single {
        d: usize,
        #[serde(default)]
        label: f64,
        #[serde(default)]
        seed: u64,
    },
}

impl DatasetSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            DatasetSpec::Synthetic1d { .. } => "synthetic-1d",
            DatasetSpec::CsvTwoclass { .. } => "csv-twoclass",
            DatasetSpec::GqmRandom { .. } => "gqm-random",
            DatasetSpec::Single { .. } => "single",
        }
    }
}

/// Model families a sweep can train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Network,
    Linearized,
    Nqm,
    Gqm,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Network => "network",
            ModelKind::Linearized => "linearized",
            ModelKind::Nqm => "nqm",
            ModelKind::Gqm => "gqm",
        }
    }

    /// The network family, or `None` for the general quadratic model.
    pub fn family(self) -> Option<Family> {
        match self {
            ModelKind::Network => Some(Family::Network),
            ModelKind::Linearized => Some(Family::Linearized),
            ModelKind::Nqm => Some(Family::Nqm),
            ModelKind::Gqm => None,
        }
    }
}

impl From<Family> for ModelKind {
    fn from(f: Family) -> Self {
        match f {
            Family::Network => ModelKind::Network,
            Family::Linearized => ModelKind::Linearized,
            Family::Nqm => ModelKind::Nqm,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "network" => Ok(ModelKind::Network),
            "linearized" => Ok(ModelKind::Linearized),
            "nqm" => Ok(ModelKind::Nqm),
            "gqm" => Ok(ModelKind::Gqm),
            other => Err(Error::Argument(format!("unknown model family `{other}`"))),
        }
    }
}

/// Learning rates of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EtaGrid {
    /// Absolute learning rates.
    Values(Vec<f64>),
    /// Multiples of each run's `η_c = 2/λ_max(K(0))`.
    Critical(Vec<f64>),
    /// `count` multiples of `η_c` spread over the three bands.
    Auto(usize),
}

impl EtaGrid {
    pub fn len(&self) -> usize {
        match self {
            EtaGrid::Values(v) | EtaGrid::Critical(v) => v.len(),
            EtaGrid::Auto(count) => *count,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The learning rate at `index` for a run whose critical rate is
    /// `eta_critical`.
    pub fn eta(&self, index: usize, eta_critical: f64) -> f64 {
        match self {
            EtaGrid::Values(v) => v[index],
            EtaGrid::Critical(v) => v[index] * eta_critical,
            EtaGrid::Auto(count) => auto_multiples(*count)[index] * eta_critical,
        }
    }

    /// Whether the grid is expressed relative to `η_c`.
    pub fn is_relative(&self) -> bool {
        !matches!(self, EtaGrid::Values(_))
    }
}

/// Multiples of `η_c` for an automatic grid of `count ≥ 8` points: at least
/// three below `η_c`, at least three strictly inside `(η_c, η_max)` with
/// `η_max = 2η_c`, and two above `η_max`. Points keep clear of the
/// thresholds themselves.
pub fn auto_multiples(count: usize) -> Vec<f64> {
    let count = count.max(8);
    let sub = (3 * count / 8).max(3);
    let sup = 2;
    let band = count - sub - sup;
    let spread = |lo: f64, hi: f64, k: usize| -> Vec<f64> {
        (0..k).map(|i| lo + (hi - lo) * i as f64 / (k - 1).max(1) as f64).collect()
    };
    let mut out = spread(0.2, 0.9, sub);
    out.extend(spread(1.15, 1.85, band));
    out.extend(spread(2.2, 2.6, sup));
    out
}

/// Full-batch or mini-batch descent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Optimizer {
    Gd,
    Sgd { batch: usize },
}

fn default_eval_every() -> usize {
    5
}

fn default_delta() -> f64 {
    1.0
}

fn default_gamma() -> f64 {
    DEFAULT_GQM_GAMMA
}

fn default_gamma_grid() -> Vec<f64> {
    vec![1e-4, 1e-3, 1e-2]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Everything a sweep or study needs. Parsed from JSON; unknown fields are
/// rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub families: Vec<ModelKind>,
    pub width_grid: Vec<usize>,
    pub eta_grid: EtaGrid,
    pub seeds: Vec<u64>,
    pub max_steps: usize,
    #[serde(default = "optimizer_default")]
    pub optimizer: Optimizer,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Test-set evaluation cadence in steps.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// `δ = ηλ₀ − 2` for the width study.
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// γ of the general quadratic model in sweeps.
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_gamma_grid")]
    pub gamma_grid: Vec<f64>,
    /// Keep per-step loss and eigenvalue series in the sweep result.
    #[serde(default)]
    pub keep_traces: bool,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn optimizer_default() -> Optimizer {
    Optimizer::Gd
}

impl ExperimentConfig {
    /// 1-D Gaussian-mixture sweep with an automatic grid.
    pub fn synthetic_default() -> Self {
        Self {
            dataset: DatasetSpec::Synthetic1d {
                n: 128,
                seed: 4,
                n_test: 0,
            },
            families: vec![ModelKind::Nqm],
            width_grid: vec![5000],
            eta_grid: EtaGrid::Auto(8),
            seeds: vec![0],
            max_steps: 3000,
            optimizer: Optimizer::Gd,
            tolerances: Tolerances::default(),
            eval_every: default_eval_every(),
            delta: default_delta(),
            gamma: default_gamma(),
            gamma_grid: default_gamma_grid(),
            keep_traces: false,
            output_dir: default_output_dir(),
        }
    }

    /// The random quadratic-model instance at `η = 2.8`, label 0.
    pub fn gqm_default() -> Self {
        Self {
            dataset: DatasetSpec::GqmRandom {
                dim: 100,
                label: 0.0,
                seed: 0,
            },
            families: vec![ModelKind::Gqm],
            width_grid: vec![100],
            eta_grid: EtaGrid::Values(vec![2.8]),
            seeds: vec![0, 1, 2],
            max_steps: 1000,
            ..Self::synthetic_default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Config {
            field: "<root>".into(),
            message: e.to_string(),
        })?;
        Self::from_value(value)
    }

    /// Reads a config file. A relative CSV path is taken relative to the
    /// file's directory. A run manifest is accepted too; its recorded config
    /// is used as is.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: Value = serde_json::from_str(&text).map_err(|e| Error::Config {
            field: "<root>".into(),
            message: format!("{}: {e}", path.display()),
        })?;
        match value {
            Value::Object(mut map) if map.contains_key("config_hash") && map.contains_key("config") => {
                Self::from_value(map.remove("config").expect("checked"))
            }
            other => {
                let mut config: Self = serde_path_error(other)?;
                if let DatasetSpec::CsvTwoclass { path: csv, .. } = &mut config.dataset {
                    if let Some(dir) = path.parent().filter(|d| csv.is_relative() && !d.as_os_str().is_empty()) {
                        *csv = dir.join(&*csv);
                    }
                }
                config.validate()?;
                Ok(config)
            }
        }
    }

    fn from_value(value: Value) -> Result<Self> {
        let config: Self = serde_path_error(value)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the compact JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: String| Err(Error::Config { field: field.into(), message });
        if self.families.is_empty() {
            return bad("families", "at least one family is required".into());
        }
        if self.width_grid.is_empty() || self.width_grid.contains(&0) {
            return bad("width_grid", "widths must be a nonempty list of positive integers".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds", "at least one seed is required".into());
        }
        if self.max_steps == 0 {
            return bad("max_steps", "must be positive".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every", "must be positive".into());
        }
        match &self.eta_grid {
            EtaGrid::Values(v) | EtaGrid::Critical(v) => {
                if v.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
                    return bad("eta_grid", "entries must be positive and finite".into());
                }
                if v.windows(2).any(|w| w[1] <= w[0]) {
                    return bad("eta_grid", "entries must be strictly increasing".into());
                }
            }
            EtaGrid::Auto(count) => {
                if *count < 8 {
                    return bad("eta_grid", format!("auto grid needs at least 8 points, got {count}"));
                }
            }
        }
        if let Optimizer::Sgd { batch: 0 } = self.optimizer {
            return bad("optimizer.batch", "must be positive".into());
        }
        let t = &self.tolerances;
        if !(t.tol_rise >= 0.0 && t.rise_factor > 1.0 && t.divergence_threshold > 0.0 && t.converge_fraction > 0.0) {
            return bad("tolerances", "need tol_rise ≥ 0, rise_factor > 1, positive thresholds".into());
        }
        if !(self.delta.is_finite() && self.delta > 0.0 && self.delta < 2.0) {
            return bad("delta", format!("must lie in (0, 2), got {}", self.delta));
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return bad("gamma", "must be nonnegative".into());
        }
        if self.gamma_grid.is_empty() || self.gamma_grid.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return bad("gamma_grid", "entries must be positive".into());
        }
        let gqm_data = matches!(self.dataset, DatasetSpec::GqmRandom { .. });
        let has_gqm = self.families.contains(&ModelKind::Gqm);
        if has_gqm && !gqm_data {
            return bad("families", "gqm needs a gqm-random dataset".into());
        }
        if gqm_data && self.families.iter().any(|f| *f != ModelKind::Gqm) {
            return bad("families", "a gqm-random dataset only trains the gqm family".into());
        }
        match &self.dataset {
            DatasetSpec::Synthetic1d { n, n_test, .. } => {
                if *n < 2 || n % 2 != 0 {
                    return bad("dataset.n", format!("must be even and ≥ 2, got {n}"));
                }
                if *n_test == 1 || n_test % 2 != 0 {
                    return bad("dataset.n_test", format!("must be 0 or even and ≥ 2, got {n_test}"));
                }
            }
            DatasetSpec::CsvTwoclass { n_train, n_test, .. } => {
                if *n_train == 0 || *n_test == 0 {
                    return bad("dataset.n_train", "train and test sizes must be positive".into());
                }
            }
            DatasetSpec::GqmRandom { dim, .. } => {
                if *dim == 0 {
                    return bad("dataset.dim", "must be positive".into());
                }
            }
            DatasetSpec::Single { d, .. } => {
                if *d == 0 {
                    return bad("dataset.d", "must be positive".into());
                }
            }
        }
        Ok(())
    }

    /// Applies `key=value` overrides with dotted keys such as
    /// `dataset.n=64` or `tolerances.rise_factor=3`. Values are parsed as
    /// JSON, falling back to a plain string. Keys that do not already exist
    /// in the config are rejected.
    ///
    /// `model.width` and `model.family` are shorthands that set a one-point
    /// `width_grid` or `families` list.
    pub fn apply_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut value = serde_json::to_value(self).expect("config serializes");
        let mut keys: Vec<&str> = Vec::new();
        for raw in overrides {
            let raw = raw.as_ref();
            let (key, text) = raw.split_once('=').ok_or_else(|| Error::Config {
                field: raw.into(),
                message: "override must look like key=value".into(),
            })?;
            let key = key.trim();
            let mut parsed: Value = serde_json::from_str(text.trim()).unwrap_or_else(|_| Value::String(text.trim().into()));
            let key = match SHORTHANDS.iter().find(|(short, _)| *short == key) {
                Some((_, full)) => {
                    if !parsed.is_array() {
                        parsed = Value::Array(vec![parsed]);
                    }
                    *full
                }
                None => key,
            };
            let mut slot = &mut value;
            for part in key.split('.') {
                slot = match slot {
                    Value::Object(map) => map.get_mut(part),
                    Value::Array(items) => part.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
                    _ => None,
                }
                .ok_or_else(|| Error::Config {
                    field: key.into(),
                    message: "unknown key".into(),
                })?;
            }
            *slot = parsed;
            keys.push(key);
        }
        Self::from_value(value).map_err(|e| match e {
            Error::Config { field, message } => {
                let within = |k: &str| field == "<root>" || k.strip_prefix(field.as_str()).is_some_and(|r| r.starts_with('.'));
                let key = keys.iter().rev().find(|k| within(k)).map(|k| k.to_string());
                Error::Config {
                    field: key.unwrap_or(field),
                    message,
                }
            }
            other => other,
        })
    }
}

const SHORTHANDS: [(&str, &str); 2] = [("model.width", "width_grid"), ("model.family", "families")];

fn serde_path_error(value: Value) -> Result<ExperimentConfig> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { "<root>".to_string() } else { path };
        Error::Config {
            field,
            message: e.into_inner().to_string(),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_hash() {
        let c = ExperimentConfig::synthetic_default();
        let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_eq!(c.hash().len(), 64);
        let other = c.apply_overrides(&["max_steps=10"]).unwrap();
        assert_ne!(other.hash(), c.hash());
    }

    #[test]
    fn overrides_follow_dotted_paths() {
        let c = ExperimentConfig::synthetic_default();
        let o = c
            .apply_overrides(&["dataset.n=64", "tolerances.rise_factor=3", "families=[\"nqm\",\"network\"]"])
            .unwrap();
        assert!(matches!(o.dataset, DatasetSpec::Synthetic1d { n: 64, .. }));
        assert_eq!(o.tolerances.rise_factor, 3.0);
        assert_eq!(o.families, vec![ModelKind::Nqm, ModelKind::Network]);
        let o = c.apply_overrides(&["eta_grid={\"critical\":[0.5,1.5]}"]).unwrap();
        assert_eq!(o.eta_grid, EtaGrid::Critical(vec![0.5, 1.5]));
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        let c = ExperimentConfig::synthetic_default();
        assert_eq!(c.apply_overrides(&["model.width=4000"]).unwrap().width_grid, vec![4000]);
        assert_eq!(c.apply_overrides(&["model.family=network"]).unwrap().families, vec![ModelKind::Network]);
        match c.apply_overrides(&["model.depth=4"]) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "model.depth"),
            other => panic!("{other:?}"),
        }
        match c.apply_overrides(&["eta_grid={\"values\":[0.2,0.1]}"]) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "eta_grid"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(c.apply_overrides(&["seeds=[]"]), Err(Error::Config { .. })));
        assert!(matches!(c.apply_overrides(&["novalue"]), Err(Error::Config { .. })));
        let text = c.to_json().replace("\"max_steps\"", "\"max_stepz\"");
        match ExperimentConfig::from_json(&text) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "max_stepz"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn auto_grid_covers_three_bands() {
        for count in [8, 9, 12, 20] {
            let m = auto_multiples(count);
            assert_eq!(m.len(), count);
            assert!(m.windows(2).all(|w| w[1] > w[0]));
            assert!(m.iter().filter(|&&x| x < 1.0).count() >= 3);
            assert!(m.iter().filter(|&&x| x > 1.0 && x < 2.0).count() >= 3);
            assert!(m.iter().filter(|&&x| x > 2.0).count() >= 2);
        }
    }

    #[test]
    fn gqm_family_needs_gqm_data() {
        let c = ExperimentConfig::synthetic_default();
        assert!(matches!(c.apply_overrides(&["families=[\"gqm\"]"]), Err(Error::Config { .. })));
        let g = ExperimentConfig::gqm_default();
        g.validate().unwrap();
    }
}
