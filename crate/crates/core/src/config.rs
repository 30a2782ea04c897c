//! Line-oriented run configuration: `[model]`, `[train]` and `[data]`
//! sections of `key = value` pairs. `#` starts a comment.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::Error;
use crate::params::Activation;
use crate::trainer::{FreezePolicy, TrainConfig};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub valid: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Skip inverse-relation augmentation.
    pub no_inverses: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataConfig,
}

pub const ENV_PRESET_DIR: &str = "RELDEP_PRESET_DIR";

fn config_err(line: usize, msg: impl std::fmt::Display) -> Error {
    if line == 0 {
        Error::Config(msg.to_string())
    } else {
        Error::Config(format!("line {line}: {msg}"))
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("`{key}` expects a number, got `{value}`"))
}

fn flag(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("`{key}` expects true or false, got `{value}`")),
    }
}

fn activation(key: &str, value: &str) -> Result<Activation, String> {
    Activation::parse(value).ok_or_else(|| format!("`{key}`: unknown activation `{value}`"))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, Error> {
        let mut cfg = RunConfig::default();
        cfg.merge(text)?;
        Ok(cfg)
    }

    /// Applies the assignments in `text` on top of the current values.
    pub fn merge(&mut self, text: &str) -> Result<(), Error> {
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !matches!(name, "model" | "train" | "data") {
                    return Err(config_err(i + 1, format!("unknown section `[{name}]`")));
                }
                section = Some(name.to_string());
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(config_err(i + 1, format!("expected `key = value`, got `{line}`")));
            };
            let Some(section) = &section else {
                return Err(config_err(i + 1, "assignment before any section header"));
            };
            self.set(&format!("{section}.{}", key.trim()), value.trim())
                .map_err(|m| config_err(i + 1, m))?;
        }
        Ok(())
    }

    /// Sets one `section.key` value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        let t = &mut self.train;
        let d = &mut t.dims;
        match key {
            "model.dim" => d.dim = num(key, value)?,
            "model.heads" => d.heads = num(key, value)?,
            "model.relation_layers" => d.relation_layers = num(key, value)?,
            "model.entity_layers" => d.entity_layers = num(key, value)?,
            "model.activation" => {
                let a = activation(key, value)?;
                d.relation_act = a;
                d.entity_act = a;
            }
            "model.relation_activation" => d.relation_act = activation(key, value)?,
            "model.entity_activation" => d.entity_act = activation(key, value)?,
            "train.learning_rate" => t.learning_rate = num(key, value)?,
            "train.weight_decay" => t.weight_decay = num(key, value)?,
            "train.lr_decay" => t.lr_decay = num(key, value)?,
            "train.negatives" => t.negatives = num(key, value)?,
            "train.batch_size" => t.batch_size = num(key, value)?,
            "train.max_epochs" => t.max_epochs = num(key, value)?,
            "train.patience" => t.patience = num(key, value)?,
            "train.freeze" => {
                t.freeze = FreezePolicy::parse(value).ok_or_else(|| format!("`{key}`: unknown policy `{value}`"))?
            }
            "train.dropout" => t.dropout = num(key, value)?,
            "train.l2_penalty" => t.l2_penalty = num(key, value)?,
            "train.seed" => t.seed = num(key, value)?,
            "data.train" => self.data.train = Some(value.into()),
            "data.valid" => self.data.valid = Some(value.into()),
            "data.test" => self.data.test = Some(value.into()),
            "data.no_inverses" => self.data.no_inverses = flag(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, Error> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Renders every value in the same syntax `parse` reads.
    pub fn render(&self) -> String {
        let t = &self.train;
        let d = &t.dims;
        let mut s = String::new();
        let _ = writeln!(s, "[model]");
        let _ = writeln!(s, "dim = {}", d.dim);
        let _ = writeln!(s, "heads = {}", d.heads);
        let _ = writeln!(s, "relation_layers = {}", d.relation_layers);
        let _ = writeln!(s, "entity_layers = {}", d.entity_layers);
        let _ = writeln!(s, "relation_activation = {}", d.relation_act.tag());
        let _ = writeln!(s, "entity_activation = {}", d.entity_act.tag());
        let _ = writeln!(s, "\n[train]");
        let _ = writeln!(s, "learning_rate = {}", t.learning_rate);
        let _ = writeln!(s, "weight_decay = {}", t.weight_decay);
        let _ = writeln!(s, "lr_decay = {}", t.lr_decay);
        let _ = writeln!(s, "negatives = {}", t.negatives);
        let _ = writeln!(s, "batch_size = {}", t.batch_size);
        let _ = writeln!(s, "max_epochs = {}", t.max_epochs);
        let _ = writeln!(s, "patience = {}", t.patience);
        let _ = writeln!(s, "freeze = {}", t.freeze.tag());
        let _ = writeln!(s, "dropout = {}", t.dropout);
        let _ = writeln!(s, "l2_penalty = {}", t.l2_penalty);
        let _ = writeln!(s, "seed = {}", t.seed);
        let _ = writeln!(s, "\n[data]");
        for (k, v) in [
            ("train", &self.data.train),
            ("valid", &self.data.valid),
            ("test", &self.data.test),
        ] {
            if let Some(p) = v {
                let _ = writeln!(s, "{k} = {}", p.display());
            }
        }
        let _ = writeln!(s, "no_inverses = {}", self.data.no_inverses);
        s
    }
}

/// Per-dataset settings: learning rate, activation, entity layers, relation
/// layers, hidden size, batch size.
pub const PRESETS: &[(&str, f64, &str, usize, usize, usize, usize)] = &[
    ("wn18rr", 0.003, "idd", 5, 3, 64, 50),
    ("fb15k237", 0.0009, "relu", 4, 4, 48, 10),
    ("nell995", 0.0011, "relu", 5, 4, 48, 5),
    ("yago3_10", 0.001, "relu", 7, 4, 64, 5),
    ("nell_100", 0.0016, "relu", 5, 3, 48, 10),
    ("nell_75", 0.0013, "relu", 5, 3, 48, 10),
    ("nell_50", 0.0015, "tanh", 5, 3, 48, 10),
    ("nell_25", 0.0016, "relu", 5, 3, 48, 10),
    ("wk_100", 0.0027, "relu", 5, 3, 48, 10),
    ("wk_75", 0.0018, "relu", 5, 3, 48, 10),
    ("wk_50", 0.0022, "relu", 5, 3, 48, 10),
    ("wk_25", 0.0023, "idd", 5, 3, 48, 10),
    ("fb_100", 0.0043, "relu", 5, 3, 48, 10),
    ("fb_75", 0.0037, "relu", 5, 3, 48, 10),
    ("fb_50", 0.0008, "relu", 5, 3, 48, 10),
    ("fb_25", 0.0005, "tanh", 5, 3, 16, 24),
    ("wn_v1", 0.005, "idd", 5, 3, 64, 100),
    ("wn_v2", 0.0016, "relu", 5, 4, 48, 20),
    ("wn_v3", 0.0014, "tanh", 5, 4, 64, 20),
    ("wn_v4", 0.006, "relu", 5, 3, 32, 10),
    ("fb_v1", 0.0092, "relu", 5, 3, 32, 20),
    ("fb_v2", 0.0077, "relu", 3, 3, 48, 10),
    ("fb_v3", 0.0006, "relu", 3, 3, 48, 20),
    ("fb_v4", 0.0052, "idd", 5, 4, 48, 20),
    ("nl_v1", 0.0021, "relu", 5, 3, 48, 10),
    ("nl_v2", 0.0075, "relu", 3, 3, 48, 100),
    ("nl_v3", 0.0008, "relu", 3, 3, 16, 10),
    ("nl_v4", 0.0005, "tanh", 5, 4, 16, 20),
    ("primekg", 0.00016, "relu", 5, 4, 16, 2),
    ("amazon_book", 0.0002, "idd", 5, 3, 32, 3),
    ("geokg", 0.0005, "relu", 4, 3, 16, 2),
];

/// Config text for a named preset, or `None` for an unknown name.
pub fn preset_text(name: &str) -> Option<String> {
    let &(_, lr, act, le, lr_layers, dim, batch) = PRESETS.iter().find(|p| p.0 == name)?;
    Some(format!(
        "[model]\ndim = {dim}\nrelation_layers = {lr_layers}\nentity_layers = {le}\nactivation = {act}\n\n\
         [train]\nlearning_rate = {lr}\nbatch_size = {batch}\n"
    ))
}
