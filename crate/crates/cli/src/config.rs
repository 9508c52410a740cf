//! Flat `key = value` run configuration. Values come from defaults, then a
//! config file, then command-line flags, each layer overriding the previous.

use std::fmt;
use std::path::Path;

use bystander_core::models::ModelVariant;
use bystander_core::nn::EncoderConfig;
use bystander_core::training::TrainConfig;
use bystander_core::{EditWindow, EditorClass, RepresentationMode};

use crate::CliError;

/// Where a setting came from, for diagnostics.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Origin {
    File { path: String, line: usize },
    Flag,
}

impl fmt::Display for Origin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Origin::File { path, line } => write!(f, "{path}:{line}"),
            Origin::Flag => f.write_str("command line"),
        }
    }
}

/// Editors named in the configuration, either a bare count (synthetic screens
/// name them `E1..En`) or an explicit `id:CLASS` list.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EditorRegistry {
    Count(usize),
    Named(Vec<(String, EditorClass)>),
}

impl EditorRegistry {
    pub fn parse(s: &str) -> Result<Self, String> {
        if let Ok(n) = s.trim().parse::<usize>() {
            if n == 0 {
                return Err("editor count must be positive".into());
            }
            return Ok(EditorRegistry::Count(n));
        }
        let mut named = Vec::new();
        for item in s.split(',').map(str::trim).filter(|i| !i.is_empty()) {
            let (id, class) = match item.split_once(':') {
                Some((id, class)) => (
                    id,
                    EditorClass::parse(class)
                        .ok_or_else(|| format!("unknown editor class {class:?}"))?,
                ),
                None => (item, EditorClass::ABE),
            };
            if id.is_empty() || named.iter().any(|(n, _)| n == id) {
                return Err(format!("bad or repeated editor id in {s:?}"));
            }
            named.push((id.to_string(), class));
        }
        if named.is_empty() {
            return Err("empty editor list".into());
        }
        Ok(EditorRegistry::Named(named))
    }

    pub fn len(&self) -> usize {
        match self {
            EditorRegistry::Count(n) => *n,
            EditorRegistry::Named(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn class_of(&self, id: &str) -> Option<EditorClass> {
        match self {
            EditorRegistry::Count(_) => None,
            EditorRegistry::Named(v) => v.iter().find(|(n, _)| n == id).map(|(_, c)| *c),
        }
    }
}

impl fmt::Display for EditorRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EditorRegistry::Count(n) => write!(f, "{n}"),
            EditorRegistry::Named(v) => {
                let items: Vec<String> = v
                    .iter()
                    .map(|(id, c)| format!("{id}:{}", c.name()))
                    .collect();
                f.write_str(&items.join(","))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub mode: RepresentationMode,
    pub variant: ModelVariant,
    pub window: EditWindow,
    pub editors: Option<EditorRegistry>,
    /// Editor to train or predict when the data holds several.
    pub editor: Option<String>,
    pub workers: usize,
    pub replicate: usize,
    pub d_model: usize,
    pub heads: usize,
    pub blocks: usize,
    pub position_bias: bool,
    pub efficiency: TrainConfig,
    pub proportion: TrainConfig,
    pub refs: usize,
    pub reads: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let enc = EncoderConfig::default();
        RunConfig {
            seed: 0,
            mode: RepresentationMode::ProtospacerPam,
            variant: ModelVariant::TwoStage,
            window: EditWindow::full(),
            editors: None,
            editor: None,
            workers: 1,
            replicate: 0,
            d_model: enc.d_model,
            heads: enc.heads,
            blocks: enc.blocks,
            position_bias: false,
            efficiency: TrainConfig::efficiency_default(),
            proportion: TrainConfig::proportion_default(),
            refs: 2000,
            reads: 5000,
        }
    }
}

/// Every key accepted in a config file or as `--key`.
pub const CONFIG_KEYS: [&str; 24] = [
    "seed",
    "mode",
    "variant",
    "window",
    "editors",
    "editor",
    "workers",
    "replicate",
    "d_model",
    "heads",
    "blocks",
    "position_bias",
    "efficiency_batch_size",
    "efficiency_epochs",
    "proportion_batch_size",
    "proportion_epochs",
    "base_lr",
    "lr_max_multiplier",
    "cycle_epochs",
    "dropout",
    "l2",
    "log_timing",
    "refs",
    "reads",
];

fn parse<T: std::str::FromStr>(value: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| format!("cannot parse {value:?}: {e}"))
}

fn parse_bool(value: &str) -> Result<bool, String> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(format!("expected true or false, got {other:?}")),
    }
}

impl RunConfig {
    /// Apply one setting. Hyperparameters without a stage prefix apply to both stages.
    pub fn set(&mut self, key: &str, value: &str, origin: &Origin) -> Result<(), CliError> {
        let value = value.trim();
        let result: Result<(), String> = (|| {
            match key {
                "seed" => {
                    self.seed = parse(value)?;
                    self.efficiency.seed = self.seed;
                    self.proportion.seed = self.seed;
                }
                "mode" => self.mode = parse(value)?,
                "variant" => self.variant = value.parse()?,
                "window" => self.window = parse(value)?,
                "editors" => self.editors = Some(EditorRegistry::parse(value)?),
                "editor" => self.editor = Some(value.to_string()),
                "workers" => self.workers = parse::<usize>(value)?.max(1),
                "replicate" => {
                    let r: usize = parse(value)?;
                    if r > 2 {
                        return Err("replicate must be 0, 1 or 2".into());
                    }
                    self.replicate = r;
                }
                "d_model" => self.d_model = parse(value)?,
                "heads" => self.heads = parse(value)?,
                "blocks" => self.blocks = parse(value)?,
                "position_bias" => self.position_bias = parse_bool(value)?,
                "efficiency_batch_size" => self.efficiency.batch_size = parse(value)?,
                "efficiency_epochs" => self.efficiency.epochs = parse(value)?,
                "proportion_batch_size" => self.proportion.batch_size = parse(value)?,
                "proportion_epochs" => self.proportion.epochs = parse(value)?,
                "base_lr" => {
                    self.efficiency.base_lr = parse(value)?;
                    self.proportion.base_lr = self.efficiency.base_lr;
                }
                "lr_max_multiplier" => {
                    self.efficiency.lr_max_multiplier = parse(value)?;
                    self.proportion.lr_max_multiplier = self.efficiency.lr_max_multiplier;
                }
                "cycle_epochs" => {
                    self.efficiency.cycle_epochs = parse(value)?;
                    self.proportion.cycle_epochs = self.efficiency.cycle_epochs;
                }
                "dropout" => {
                    self.efficiency.dropout = parse(value)?;
                    self.proportion.dropout = self.efficiency.dropout;
                }
                "l2" => {
                    self.efficiency.l2 = parse(value)?;
                    self.proportion.l2 = self.efficiency.l2;
                }
                "log_timing" => {
                    self.efficiency.log_timing = parse_bool(value)?;
                    self.proportion.log_timing = self.efficiency.log_timing;
                }
                "refs" => self.refs = parse(value)?,
                "reads" => self.reads = parse(value)?,
                _ => return Err("unknown key".into()),
            }
            Ok(())
        })();
        result.map_err(|message| CliError::Config {
            origin: origin.to_string(),
            key: key.to_string(),
            message,
        })
    }

    /// Apply a config file: one `key = value` per line, `#` starts a comment.
    pub fn apply_text(&mut self, text: &str, path: &str) -> Result<(), CliError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let origin = Origin::File {
                path: path.to_string(),
                line: i + 1,
            };
            let (key, value) = line.split_once('=').ok_or_else(|| CliError::Config {
                origin: origin.to_string(),
                key: line.to_string(),
                message: "expected key = value".into(),
            })?;
            self.set(key.trim(), value, &origin)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config {
            origin: path.display().to_string(),
            key: "config".into(),
            message: e.to_string(),
        })?;
        self.apply_text(&text, &path.display().to_string())
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig::new(self.d_model, self.heads, self.blocks)
    }

    /// Checks that need no data.
    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |key: &str, message: String| {
            Err(CliError::Config {
                origin: "configuration".into(),
                key: key.into(),
                message,
            })
        };
        if let Err(e) = self.encoder().validate() {
            return fail("encoder", e.to_string());
        }
        if let Err(e) = self.efficiency.validate() {
            return fail("efficiency", e.to_string());
        }
        if let Err(e) = self.proportion.validate() {
            return fail("proportion", e.to_string());
        }
        Ok(())
    }

    /// All settings as `key = value` pairs, in [`CONFIG_KEYS`] order.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let e = &self.efficiency;
        let p = &self.proportion;
        let mut pairs = vec![
            ("seed", self.seed.to_string()),
            ("mode", self.mode.name().to_string()),
            ("variant", self.variant.name().to_string()),
            ("window", self.window.to_string()),
        ];
        if let Some(reg) = &self.editors {
            pairs.push(("editors", reg.to_string()));
        }
        if let Some(ed) = &self.editor {
            pairs.push(("editor", ed.clone()));
        }
        pairs.extend([
            ("workers", self.workers.to_string()),
            ("replicate", self.replicate.to_string()),
            ("d_model", self.d_model.to_string()),
            ("heads", self.heads.to_string()),
            ("blocks", self.blocks.to_string()),
            ("position_bias", self.position_bias.to_string()),
            ("efficiency_batch_size", e.batch_size.to_string()),
            ("efficiency_epochs", e.epochs.to_string()),
            ("proportion_batch_size", p.batch_size.to_string()),
            ("proportion_epochs", p.epochs.to_string()),
            ("base_lr", e.base_lr.to_string()),
            ("lr_max_multiplier", e.lr_max_multiplier.to_string()),
            ("cycle_epochs", e.cycle_epochs.to_string()),
            ("dropout", e.dropout.to_string()),
            ("l2", e.l2.to_string()),
            ("log_timing", e.log_timing.to_string()),
            ("refs", self.refs.to_string()),
            ("reads", self.reads.to_string()),
        ]);
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}
