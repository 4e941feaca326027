use std::path::Path;

use framescale::bench::NeedleSpec;
use framescale::encoder::EncoderVariant;
use framescale::lm::{LmConfig, TrainConfig};
use framescale::schedule::EncodingConfig;
use framescale::{Error, Execution, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Everything a command needs besides its paths.
///
/// A config file may give any subset of fields, nested objects included;
/// missing values fall back to [`RunConfig::default`] and command-line flags
/// override both.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root seed. Required by commands that create data or weights.
    pub seed: Option<u64>,
    pub encoding: EncodingConfig,
    pub encoder: EncoderVariant,
    pub lm: LmConfig,
    pub train: TrainConfig,
    pub needle: NeedleSpec,
    pub execution: Execution,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            encoding: EncodingConfig::default(),
            encoder: EncoderVariant::Mock,
            lm: LmConfig::default(),
            train: TrainConfig::default(),
            needle: NeedleSpec::default(),
            execution: Execution::Parallel,
        }
    }
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

impl RunConfig {
    /// Defaults overlaid with the file at `path`, if any.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut value = serde_json::to_value(Self::default())?;
        if let Some(p) = path {
            let text = framescale::io::read_text(p)?;
            let file: Value = serde_json::from_str(&text)
                .map_err(|e| Error::InvalidArgument(format!("{}: {e}", p.display())))?;
            merge(&mut value, file);
        }
        serde_json::from_value(value).map_err(|e| Error::InvalidArgument(format!("config: {e}")))
    }

    /// Every violated constraint, joined into one error.
    pub fn validate(&self) -> Result<()> {
        let mut bad: Vec<String> = [
            self.encoding.validate(),
            self.lm.validate(),
            self.train.validate(),
            self.needle.validate(),
        ]
        .into_iter()
        .filter_map(|r| r.err().map(|e| e.to_string()))
        .collect();
        if self.lm.d_model != self.encoding.embed_dim {
            bad.push(format!(
                "lm.d_model ({}) must equal encoding.embed_dim ({})",
                self.lm.d_model, self.encoding.embed_dim
            ));
        }
        if framescale::vocab::class_capacity(self.lm.vocab) < self.needle.classes {
            bad.push(format!("lm.vocab ({}) leaves no room for {} classes", self.lm.vocab, self.needle.classes));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(bad.join("; ")))
        }
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::InvalidArgument("a seed is required: pass --seed or set \"seed\" in the config".into()))
    }
}
