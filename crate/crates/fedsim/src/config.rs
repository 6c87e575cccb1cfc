//! Flat `key = value` experiment configs.
//!
//! One setting per line, `#` starts a comment, sections are dotted key
//! prefixes (`fed.local_lr = 0.001`). Every key has a default, so an empty
//! file is a valid config describing the desk benchmark.

use std::path::{Path, PathBuf};

use fedsim_core::data::SyntheticSpec;
use fedsim_core::model::ModelKind;
use fedsim_core::orchestrator::{desk_benchmark, DataSource, ExperimentConfig, Method};

use crate::error::{CliError, CliResult};

const DEFAULT_HIDDEN_DIM: usize = 32;

/// Config under construction. Model and data sections are staged so that
/// keys can arrive in any order.
#[derive(Debug, Clone)]
pub struct Settings {
    pub experiment: ExperimentConfig,
    model: String,
    hidden_dim: usize,
    data_kind: String,
    synthetic: SyntheticSpec,
    csv_path: String,
    label_column: String,
    feature_columns: Vec<String>,
    /// Directory that relative `data.path` values are resolved against.
    base_dir: PathBuf,
}

type Setter = fn(&mut Settings, &str) -> Option<()>;

struct Key {
    name: &'static str,
    range: &'static str,
    set: Setter,
}

fn parse<T: std::str::FromStr>(v: &str) -> Option<T> {
    v.parse().ok()
}

fn at_least(v: &str, min: usize) -> Option<usize> {
    parse::<usize>(v).filter(|&n| n >= min)
}

fn positive(v: &str) -> Option<f64> {
    parse::<f64>(v).filter(|x| *x > 0.0 && x.is_finite())
}

const KEYS: &[Key] = &[
    Key {
        name: "method",
        range: "one of centralized, fedavg, fedavg_hc, fedap, fedap_hc",
        set: |s, v| {
            s.experiment.method = Method::parse(v)?;
            Some(())
        },
    },
    Key {
        name: "model",
        range: "logistic_regression or mlp1",
        set: |s, v| {
            matches!(v, "logistic_regression" | "mlp1").then(|| s.model = v.to_string())
        },
    },
    Key {
        name: "model.hidden_dim",
        range: "integer >= 1 (mlp1 only)",
        set: |s, v| {
            s.hidden_dim = at_least(v, 1)?;
            Some(())
        },
    },
    Key {
        name: "fed.local_lr",
        range: "real >= 0",
        set: |s, v| {
            s.experiment.fed.local_lr = parse::<f64>(v).filter(|x| *x >= 0.0 && x.is_finite())?;
            Some(())
        },
    },
    Key {
        name: "fed.inner_epochs",
        range: "integer >= 1",
        set: |s, v| {
            s.experiment.fed.inner_epochs = at_least(v, 1)?;
            Some(())
        },
    },
    Key {
        name: "fed.batch_size",
        range: "integer >= 1",
        set: |s, v| {
            s.experiment.fed.batch_size = at_least(v, 1)?;
            Some(())
        },
    },
    Key {
        name: "fed.meta_batch",
        range: "integer >= 1, at most the number of clients",
        set: |s, v| {
            s.experiment.fed.meta_batch = at_least(v, 1)?;
            Some(())
        },
    },
    Key {
        name: "fed.total_rounds",
        range: "integer >= 1",
        set: |s, v| {
            s.experiment.fed.total_rounds = at_least(v, 1)?;
            Some(())
        },
    },
    Key {
        name: "fed.eta0",
        range: "real > 0",
        set: |s, v| {
            s.experiment.fed.eta0 = positive(v)?;
            Some(())
        },
    },
    Key {
        name: "fed.etak",
        range: "real in (0, fed.eta0]",
        set: |s, v| {
            s.experiment.fed.etak = positive(v)?;
            Some(())
        },
    },
    Key {
        name: "fed.personalization_epochs",
        range: "integer >= 0",
        set: |s, v| {
            s.experiment.fed.personalization_epochs = at_least(v, 0)?;
            Some(())
        },
    },
    Key {
        name: "fed.seed",
        range: "unsigned 64-bit integer",
        set: |s, v| {
            s.experiment.fed.seed = parse(v)?;
            Some(())
        },
    },
    Key {
        name: "cluster_init_rounds",
        range: "integer >= 0, below fed.total_rounds for clustered methods",
        set: |s, v| {
            s.experiment.cluster_init_rounds = at_least(v, 0)?;
            Some(())
        },
    },
    Key {
        name: "max_distance",
        range: "real > 0",
        set: |s, v| {
            s.experiment.max_distance = positive(v)?;
            Some(())
        },
    },
    Key {
        name: "extra_rounds",
        range: "integer >= 0",
        set: |s, v| {
            s.experiment.extra_rounds = at_least(v, 0)?;
            Some(())
        },
    },
    Key {
        name: "output_dir",
        range: "directory path",
        set: |s, v| {
            (!v.is_empty()).then(|| s.experiment.output_dir = v.to_string())
        },
    },
    Key {
        name: "data.kind",
        range: "synthetic or csv",
        set: |s, v| matches!(v, "synthetic" | "csv").then(|| s.data_kind = v.to_string()),
    },
    Key {
        name: "data.num_classes",
        range: "integer >= 2",
        set: |s, v| {
            s.synthetic.num_classes = at_least(v, 2)?;
            Some(())
        },
    },
    Key {
        name: "data.input_dim",
        range: "integer >= 1",
        set: |s, v| {
            s.synthetic.input_dim = at_least(v, 1)?;
            Some(())
        },
    },
    Key {
        name: "data.per_class_count",
        range: "integer >= 1",
        set: |s, v| {
            s.synthetic.per_class_count = at_least(v, 1)?;
            Some(())
        },
    },
    Key {
        name: "data.class_separation",
        range: "real > 0",
        set: |s, v| {
            s.synthetic.class_separation = positive(v)?;
            Some(())
        },
    },
    Key {
        name: "data.noise_sigma",
        range: "real > 0",
        set: |s, v| {
            s.synthetic.noise_sigma = positive(v)?;
            Some(())
        },
    },
    Key {
        name: "data.seed",
        range: "unsigned 64-bit integer",
        set: |s, v| {
            s.synthetic.seed = parse(v)?;
            Some(())
        },
    },
    Key {
        name: "data.path",
        range: "path to a CSV file with a header row",
        set: |s, v| (!v.is_empty()).then(|| s.csv_path = v.to_string()),
    },
    Key {
        name: "data.label_column",
        range: "column name",
        set: |s, v| (!v.is_empty()).then(|| s.label_column = v.to_string()),
    },
    Key {
        name: "data.feature_columns",
        range: "comma-separated column names, empty for all but the label",
        set: |s, v| {
            s.feature_columns = v
                .split(',')
                .map(str::trim)
                .filter(|c| !c.is_empty())
                .map(String::from)
                .collect();
            Some(())
        },
    },
    Key {
        name: "split.undersample_cap",
        range: "integer >= 0 (0 disables undersampling)",
        set: |s, v| {
            let cap = at_least(v, 0)?;
            s.experiment.split.undersample_cap = (cap > 0).then_some(cap);
            Some(())
        },
    },
    Key {
        name: "split.shard_size",
        range: "integer >= 1",
        set: |s, v| {
            s.experiment.split.shard_size = at_least(v, 1)?;
            Some(())
        },
    },
    Key {
        name: "split.train_fraction",
        range: "real in (0, 1)",
        set: |s, v| {
            s.experiment.split.train_fraction = parse::<f64>(v).filter(|x| *x > 0.0 && *x < 1.0)?;
            Some(())
        },
    },
];

/// Every accepted key with its accepted range.
pub fn accepted_keys() -> impl Iterator<Item = (&'static str, &'static str)> {
    KEYS.iter().map(|k| (k.name, k.range))
}

impl Default for Settings {
    fn default() -> Self {
        let experiment = ExperimentConfig::default();
        let synthetic = match &experiment.data {
            DataSource::Synthetic(s) => *s,
            DataSource::Csv { .. } => desk_benchmark(0),
        };
        Self {
            experiment,
            model: "logistic_regression".into(),
            hidden_dim: DEFAULT_HIDDEN_DIM,
            data_kind: "synthetic".into(),
            synthetic,
            csv_path: String::new(),
            label_column: "label".into(),
            feature_columns: Vec::new(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl Settings {
    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut s = Settings {
            base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
            ..Settings::default()
        };
        s.apply_text(&text, &path.display().to_string())?;
        Ok(s)
    }

    pub fn apply_text(&mut self, text: &str, origin: &str) -> CliResult<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::Config(format!("{origin}:{}: expected `key = value`, got `{line}`", n + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Applies one `KEY=VALUE` override.
    pub fn apply_override(&mut self, pair: &str) -> CliResult<()> {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override `{pair}` is not KEY=VALUE")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> CliResult<()> {
        let Some(k) = KEYS.iter().find(|k| k.name == key) else {
            let known: Vec<String> = KEYS.iter().map(|k| format!("  {} ({})", k.name, k.range)).collect();
            return Err(CliError::Config(format!(
                "unknown key `{key}`; accepted keys:\n{}",
                known.join("\n")
            )));
        };
        (k.set)(self, value).ok_or_else(|| {
            CliError::Config(format!("invalid value `{value}` for key `{key}`: expected {}", k.range))
        })
    }

    /// Resolves staged sections and validates the whole config.
    pub fn build(&self) -> CliResult<ExperimentConfig> {
        let mut cfg = self.experiment.clone();
        cfg.model = match self.model.as_str() {
            "mlp1" => ModelKind::Mlp1 {
                hidden_dim: self.hidden_dim,
            },
            _ => ModelKind::LogisticRegression,
        };
        cfg.data = match self.data_kind.as_str() {
            "csv" => {
                if self.csv_path.is_empty() {
                    return Err(CliError::Config(
                        "data.kind = csv requires data.path (path to a CSV file with a header row)".into(),
                    ));
                }
                let path = self.base_dir.join(&self.csv_path);
                DataSource::Csv {
                    path: path.to_string_lossy().into_owned(),
                    label_column: self.label_column.clone(),
                    feature_columns: self.feature_columns.clone(),
                }
            }
            _ => DataSource::Synthetic(self.synthetic),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
