//! Hyperparameters and mode switches, read from flat `key=value` text.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::pruning::Pruning;
use crate::relation::NegativePool;
use crate::subject::EntityReprMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncoderKind {
    BiGru,
    Avg,
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EncoderKind::BiGru => "bigru",
            EncoderKind::Avg => "avg",
        })
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bigru" => Ok(EncoderKind::BiGru),
            "avg" => Ok(EncoderKind::Avg),
            other => Err(Error::Config(format!("unknown encoder `{other}`"))),
        }
    }
}

/// How the two conditionals are combined when ranking candidates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Combine {
    /// `log p(r|q) + log p(s|q,r)` with candidate-set softmaxes.
    Softmax,
    /// `v(r,q) + u(s,r,q)`.
    Raw,
}

impl fmt::Display for Combine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Combine::Softmax => "softmax",
            Combine::Raw => "raw",
        })
    }
}

impl FromStr for Combine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(Combine::Softmax),
            "raw" => Ok(Combine::Raw),
            other => Err(Error::Config(format!("unknown combine mode `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hyperparams {
    pub embedding_dim: usize,
    pub hidden_size: usize,
    pub layers: usize,
    pub relation_dim: usize,
    pub entity_dim: usize,
    pub gamma_r: f64,
    pub gamma_s: f64,
    pub neg_relations: usize,
    pub relation_negatives: NegativePool,
    pub neg_entities: usize,
    pub lr_relation: f64,
    pub lr_subject: f64,
    pub lr_labeler: f64,
    pub lr_typevec_encoder: f64,
    pub lr_embed_avg: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub alpha: f64,
    pub init_range: f64,
    pub epochs: usize,
    pub seed: u64,
    pub transe_epochs: usize,
    pub transe_lr: f64,
    pub transe_margin: f64,
    pub freeze_entities: bool,
    pub resample_negatives: bool,
    pub hub_relations: Vec<String>,
    pub parallel: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            embedding_dim: 300,
            hidden_size: 256,
            layers: 2,
            relation_dim: 256,
            entity_dim: 256,
            gamma_r: 0.1,
            gamma_s: 0.1,
            neg_relations: 1024,
            relation_negatives: NegativePool::Unconnected,
            neg_entities: 1024,
            lr_relation: 0.02,
            lr_subject: 0.02,
            lr_labeler: 0.02,
            lr_typevec_encoder: 0.001,
            lr_embed_avg: 0.02,
            momentum: 0.9,
            batch_size: 256,
            dropout: 0.5,
            alpha: 1.0,
            init_range: 0.08,
            epochs: 30,
            seed: 1,
            transe_epochs: 100,
            transe_lr: 0.01,
            transe_margin: 1.0,
            freeze_entities: false,
            resample_negatives: true,
            hub_relations: Vec::new(),
            parallel: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Config {
    pub hyper: Hyperparams,
    pub entity_repr: EntityReprMode,
    pub encoder: EncoderKind,
    pub pruning: Pruning,
    pub combine: Combine,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            hyper: Hyperparams::default(),
            entity_repr: EntityReprMode::TypeVector,
            encoder: EncoderKind::BiGru,
            pruning: Pruning::Focused,
            combine: Combine::Softmax,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("bad value `{value}` for `{key}`: {e}")))
}

impl Config {
    pub const KEYS: &'static [&'static str] = &[
        "embedding_dim",
        "hidden_size",
        "layers",
        "relation_dim",
        "entity_dim",
        "gamma_r",
        "gamma_s",
        "neg_relations",
        "relation_negatives",
        "neg_entities",
        "lr_relation",
        "lr_subject",
        "lr_labeler",
        "lr_typevec_encoder",
        "lr_embed_avg",
        "momentum",
        "batch_size",
        "dropout",
        "alpha",
        "init_range",
        "epochs",
        "seed",
        "transe_epochs",
        "transe_lr",
        "transe_margin",
        "freeze_entities",
        "resample_negatives",
        "hub_relations",
        "parallel",
        "entity_repr",
        "encoder",
        "pruning",
        "combine",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let h = &mut self.hyper;
        let v = value.trim();
        match key.trim() {
            "embedding_dim" => h.embedding_dim = parse(key, v)?,
            "hidden_size" => h.hidden_size = parse(key, v)?,
            "layers" => h.layers = parse(key, v)?,
            "relation_dim" => h.relation_dim = parse(key, v)?,
            "entity_dim" => h.entity_dim = parse(key, v)?,
            "gamma_r" => h.gamma_r = parse(key, v)?,
            "gamma_s" => h.gamma_s = parse(key, v)?,
            "neg_relations" => h.neg_relations = parse(key, v)?,
            "relation_negatives" => h.relation_negatives = v.parse()?,
            "neg_entities" => h.neg_entities = parse(key, v)?,
            "lr_relation" => h.lr_relation = parse(key, v)?,
            "lr_subject" => h.lr_subject = parse(key, v)?,
            "lr_labeler" => h.lr_labeler = parse(key, v)?,
            "lr_typevec_encoder" => h.lr_typevec_encoder = parse(key, v)?,
            "lr_embed_avg" => h.lr_embed_avg = parse(key, v)?,
            "momentum" => h.momentum = parse(key, v)?,
            "batch_size" => h.batch_size = parse(key, v)?,
            "dropout" => h.dropout = parse(key, v)?,
            "alpha" => h.alpha = parse(key, v)?,
            "init_range" => h.init_range = parse(key, v)?,
            "epochs" => h.epochs = parse(key, v)?,
            "seed" => h.seed = parse(key, v)?,
            "transe_epochs" => h.transe_epochs = parse(key, v)?,
            "transe_lr" => h.transe_lr = parse(key, v)?,
            "transe_margin" => h.transe_margin = parse(key, v)?,
            "freeze_entities" => h.freeze_entities = parse(key, v)?,
            "resample_negatives" => h.resample_negatives = parse(key, v)?,
            "hub_relations" => {
                h.hub_relations = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_owned)
                    .collect()
            }
            "parallel" => h.parallel = parse(key, v)?,
            "entity_repr" => self.entity_repr = v.parse()?,
            "encoder" => self.encoder = v.parse()?,
            "pruning" => self.pruning = v.parse()?,
            "combine" => self.combine = v.parse()?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key=value` text. Blank lines and `#` comments are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", i + 1)))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(&fs::read_to_string(path)?)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.hyper;
        let positive = [
            ("embedding_dim", h.embedding_dim),
            ("hidden_size", h.hidden_size),
            ("layers", h.layers),
            ("relation_dim", h.relation_dim),
            ("entity_dim", h.entity_dim),
            ("batch_size", h.batch_size),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("`{k}` must be positive")));
            }
        }
        let rates = [
            ("lr_relation", h.lr_relation),
            ("lr_subject", h.lr_subject),
            ("lr_labeler", h.lr_labeler),
            ("lr_typevec_encoder", h.lr_typevec_encoder),
            ("lr_embed_avg", h.lr_embed_avg),
            ("init_range", h.init_range),
            ("transe_lr", h.transe_lr),
        ];
        for (k, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("`{k}` must be positive")));
            }
        }
        if !(0.0..1.0).contains(&h.momentum) {
            return Err(Error::Config("`momentum` must be in [0, 1)".into()));
        }
        if !(0.0..1.0).contains(&h.dropout) {
            return Err(Error::Config("`dropout` must be in [0, 1)".into()));
        }
        if h.alpha < 0.0 || h.gamma_r < 0.0 || h.gamma_s < 0.0 || h.transe_margin < 0.0 {
            return Err(Error::Config("margins and `alpha` must be non-negative".into()));
        }
        Ok(())
    }

    /// Serializes every key, one per line, in [`Config::KEYS`] order.
    pub fn to_text(&self) -> String {
        let h = &self.hyper;
        let mut s = String::new();
        let mut put = |k: &str, v: &dyn fmt::Display| {
            let _ = writeln!(s, "{k}={v}");
        };
        put("embedding_dim", &h.embedding_dim);
        put("hidden_size", &h.hidden_size);
        put("layers", &h.layers);
        put("relation_dim", &h.relation_dim);
        put("entity_dim", &h.entity_dim);
        put("gamma_r", &h.gamma_r);
        put("gamma_s", &h.gamma_s);
        put("neg_relations", &h.neg_relations);
        put("relation_negatives", &h.relation_negatives);
        put("neg_entities", &h.neg_entities);
        put("lr_relation", &h.lr_relation);
        put("lr_subject", &h.lr_subject);
        put("lr_labeler", &h.lr_labeler);
        put("lr_typevec_encoder", &h.lr_typevec_encoder);
        put("lr_embed_avg", &h.lr_embed_avg);
        put("momentum", &h.momentum);
        put("batch_size", &h.batch_size);
        put("dropout", &h.dropout);
        put("alpha", &h.alpha);
        put("init_range", &h.init_range);
        put("epochs", &h.epochs);
        put("seed", &h.seed);
        put("transe_epochs", &h.transe_epochs);
        put("transe_lr", &h.transe_lr);
        put("transe_margin", &h.transe_margin);
        put("freeze_entities", &h.freeze_entities);
        put("resample_negatives", &h.resample_negatives);
        put("hub_relations", &h.hub_relations.join(","));
        put("parallel", &h.parallel);
        put("entity_repr", &self.entity_repr);
        put("encoder", &self.encoder);
        put("pruning", &self.pruning);
        put("combine", &self.combine);
        s
    }

    /// Learning rate of the relation network for the configured encoder.
    pub fn relation_lr(&self) -> f64 {
        match self.encoder {
            EncoderKind::BiGru => self.hyper.lr_relation,
            EncoderKind::Avg => self.hyper.lr_embed_avg,
        }
    }

    pub fn subject_lr(&self) -> f64 {
        match self.entity_repr {
            EntityReprMode::TypeVector => self.hyper.lr_typevec_encoder,
            _ => self.hyper.lr_subject,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_values() {
        let h = Hyperparams::default();
        assert_eq!((h.embedding_dim, h.hidden_size, h.relation_dim), (300, 256, 256));
        assert_eq!((h.gamma_r, h.gamma_s), (0.1, 0.1));
        assert_eq!((h.neg_relations, h.neg_entities, h.batch_size), (1024, 1024, 256));
        assert_eq!((h.lr_relation, h.lr_typevec_encoder, h.lr_embed_avg), (0.02, 0.001, 0.02));
        assert_eq!((h.momentum, h.init_range, h.dropout, h.alpha), (0.9, 0.08, 0.5, 1.0));
    }

    #[test]
    fn text_roundtrip() {
        let mut c = Config::default();
        c.apply_text("# comment\nepochs = 7\nhub_relations=a, b\nencoder=avg\n\ncombine=raw\n")
            .unwrap();
        assert_eq!(c.hyper.epochs, 7);
        assert_eq!(c.hyper.hub_relations, vec!["a", "b"]);
        assert_eq!(c.encoder, EncoderKind::Avg);
        let mut d = Config::default();
        d.apply_text(&c.to_text()).unwrap();
        assert_eq!(c, d);
        assert_eq!(c.to_text().lines().count(), Config::KEYS.len());
    }

    #[test]
    fn rejects_bad_input() {
        let mut c = Config::default();
        assert!(matches!(c.set("learning_rate", "1"), Err(Error::Config(_))));
        assert!(c.set("epochs", "many").is_err());
        assert!(c.apply_text("epochs").is_err());
        c.set("momentum", "1.0").unwrap();
        assert!(c.validate().is_err());
        assert!(c.set("entity_repr", "glove").is_err());
    }
}
