//! Run configuration: flat key=value text files, strict parsing, canonical
//! serialization and hashing.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::ckdm::{ContrastiveMode, QueryPool};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::nn::Activation;
use crate::rng::fnv1a64;
use crate::scalar::Dtype;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub train_manifest: PathBuf,
    pub val_manifest: Option<PathBuf>,
    // Model dims.
    pub d_v: usize,
    pub d_e: usize,
    pub d_t: usize,
    pub d: usize,
    pub d_h: usize,
    pub d_a: usize,
    pub d_b: usize,
    pub heads: usize,
    pub g_att_layers: usize,
    pub fusion_rounds: usize,
    pub topdown_hidden: usize,
    pub f_ans_hidden: usize,
    pub activation: Activation,
    // Optimizer.
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    // Loop.
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    // Objective.
    pub contrastive_mode: ContrastiveMode,
    pub lambda: f64,
    pub temperature: f64,
    // Toggles.
    pub afm_enabled: bool,
    pub ckdm_enabled: bool,
    pub ckdm_loss_enabled: bool,
    // Misc.
    pub precision: Dtype,
    pub knowledge_streams: Vec<String>,
    pub query_pool: QueryPool,
}

impl TrainConfig {
    /// Desk-scale defaults; the dimensions every test configuration is a
    /// variation of.
    pub fn desk_default() -> Self {
        TrainConfig {
            train_manifest: PathBuf::new(),
            val_manifest: None,
            d_v: 32,
            d_e: 32,
            d_t: 32,
            d: 32,
            d_h: 32,
            d_a: 32,
            d_b: 32,
            heads: 4,
            g_att_layers: 2,
            fusion_rounds: 1,
            topdown_hidden: 32,
            f_ans_hidden: 32,
            activation: Activation::Relu,
            learning_rate: 1e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 100,
            batch_size: 16,
            seed: 0,
            contrastive_mode: ContrastiveMode::MatchedPair,
            lambda: 1.0,
            temperature: 1.0,
            afm_enabled: true,
            ckdm_enabled: true,
            ckdm_loss_enabled: true,
            precision: Dtype::F64,
            knowledge_streams: vec!["synthetic".to_string()],
            query_pool: QueryPool::Mean,
        }
    }

    /// Narrow configuration for gradient checking: small enough that a
    /// central difference over every parameter entry finishes in seconds.
    pub fn grad_check_default() -> Self {
        TrainConfig {
            d_v: 8,
            d_e: 8,
            d_t: 8,
            d: 8,
            d_h: 8,
            d_a: 8,
            d_b: 8,
            heads: 2,
            g_att_layers: 1,
            topdown_hidden: 8,
            f_ans_hidden: 8,
            batch_size: 2,
            ..TrainConfig::desk_default()
        }
    }

    /// Large preset: 512-wide hidden layers, 8 heads, 5 self-attention
    /// layers, 100 epochs. Usable, but nothing in the test suite
    /// requires it.
    pub fn large_default() -> Self {
        TrainConfig {
            d: 512,
            d_h: 512,
            d_a: 512,
            d_b: 512,
            d_v: 512,
            d_t: 512,
            d_e: 300,
            heads: 8,
            g_att_layers: 5,
            topdown_hidden: 512,
            f_ans_hidden: 512,
            ..TrainConfig::desk_default()
        }
    }

    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text)
    }

    /// Parse `key=value` lines. `#` starts a comment; unknown keys are
    /// errors. An optional `preset=desk|large` line (anywhere) selects the
    /// base configuration the other keys override.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Format(format!("config line {}: expected key=value", i + 1))
            })?;
            pairs.push((k.trim().to_string(), v.trim().to_string()));
        }

        let mut cfg = match pairs.iter().find(|(k, _)| k == "preset") {
            Some((_, v)) if v == "desk" => TrainConfig::desk_default(),
            Some((_, v)) if v == "large" => TrainConfig::large_default(),
            Some((_, v)) => {
                return Err(Error::Config(format!(
                    "unknown preset '{v}' (expected desk or large)"
                )))
            }
            None => TrainConfig::desk_default(),
        };

        let mut seen = BTreeSet::new();
        for (k, v) in &pairs {
            if k != "preset" && !seen.insert(k.clone()) {
                return Err(Error::Config(format!("duplicate config key '{k}'")));
            }
            cfg.apply(k, v)?;
        }
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("bad value '{value}' for {key}")))
        }
        fn flag(key: &str, value: &str) -> Result<bool> {
            match value {
                "true" => Ok(true),
                "false" => Ok(false),
                _ => Err(Error::Config(format!(
                    "bad value '{value}' for {key} (expected true/false)"
                ))),
            }
        }
        match key {
            "preset" => {}
            "train_manifest" => self.train_manifest = PathBuf::from(value),
            "val_manifest" => self.val_manifest = Some(PathBuf::from(value)),
            "d_v" => self.d_v = num(key, value)?,
            "d_e" => self.d_e = num(key, value)?,
            "d_t" => self.d_t = num(key, value)?,
            "d" => self.d = num(key, value)?,
            "d_h" => self.d_h = num(key, value)?,
            "d_a" => self.d_a = num(key, value)?,
            "d_b" => self.d_b = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "g_att_layers" => self.g_att_layers = num(key, value)?,
            "fusion_rounds" => self.fusion_rounds = num(key, value)?,
            "topdown_hidden" => self.topdown_hidden = num(key, value)?,
            "f_ans_hidden" => self.f_ans_hidden = num(key, value)?,
            "activation" => {
                self.activation = Activation::parse(value)
                    .ok_or_else(|| Error::Config(format!("unknown activation '{value}'")))?
            }
            "learning_rate" => self.learning_rate = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "beta1" => self.beta1 = num(key, value)?,
            "beta2" => self.beta2 = num(key, value)?,
            "adam_eps" => self.adam_eps = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "contrastive_mode" => {
                self.contrastive_mode = ContrastiveMode::parse(value)
                    .ok_or_else(|| Error::Config(format!("unknown contrastive mode '{value}'")))?
            }
            "lambda" => self.lambda = num(key, value)?,
            "temperature" => self.temperature = num(key, value)?,
            "afm_enabled" => self.afm_enabled = flag(key, value)?,
            "ckdm_enabled" => self.ckdm_enabled = flag(key, value)?,
            "ckdm_loss_enabled" => self.ckdm_loss_enabled = flag(key, value)?,
            "precision" => {
                self.precision = Dtype::parse(value)
                    .ok_or_else(|| Error::Config(format!("unknown precision '{value}'")))?
            }
            "knowledge_streams" => {
                self.knowledge_streams =
                    value.split(',').map(|s| s.trim().to_string()).collect();
            }
            "query_pool" => {
                self.query_pool = QueryPool::parse(value)
                    .ok_or_else(|| Error::Config(format!("unknown query pool '{value}'")))?
            }
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Canonical serialization: fixed key order, one value formatting.
    /// Parsing this text reproduces the config exactly.
    pub fn canonical_string(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        };
        push("train_manifest", self.train_manifest.display().to_string());
        if let Some(v) = &self.val_manifest {
            push("val_manifest", v.display().to_string());
        }
        push("d_v", self.d_v.to_string());
        push("d_e", self.d_e.to_string());
        push("d_t", self.d_t.to_string());
        push("d", self.d.to_string());
        push("d_h", self.d_h.to_string());
        push("d_a", self.d_a.to_string());
        push("d_b", self.d_b.to_string());
        push("heads", self.heads.to_string());
        push("g_att_layers", self.g_att_layers.to_string());
        push("fusion_rounds", self.fusion_rounds.to_string());
        push("topdown_hidden", self.topdown_hidden.to_string());
        push("f_ans_hidden", self.f_ans_hidden.to_string());
        push("activation", self.activation.name().to_string());
        push("learning_rate", format!("{}", self.learning_rate));
        push("weight_decay", format!("{}", self.weight_decay));
        push("beta1", format!("{}", self.beta1));
        push("beta2", format!("{}", self.beta2));
        push("adam_eps", format!("{}", self.adam_eps));
        push("epochs", self.epochs.to_string());
        push("batch_size", self.batch_size.to_string());
        push("seed", self.seed.to_string());
        push("contrastive_mode", self.contrastive_mode.name().to_string());
        push("lambda", format!("{}", self.lambda));
        push("temperature", format!("{}", self.temperature));
        push("afm_enabled", self.afm_enabled.to_string());
        push("ckdm_enabled", self.ckdm_enabled.to_string());
        push("ckdm_loss_enabled", self.ckdm_loss_enabled.to_string());
        push("precision", self.precision.name().to_string());
        push("knowledge_streams", self.knowledge_streams.join(","));
        push("query_pool", self.query_pool.name().to_string());
        out
    }

    /// Hash of the canonical serialization.
    pub fn hash(&self) -> String {
        format!("{:016x}", fnv1a64(self.canonical_string().as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.ckdm_enabled && self.ckdm_loss_enabled && self.batch_size < 2 {
            return Err(Error::Config(
                "batch_size must be at least 2 when the contrastive loss is enabled \
                 (a batch of one has no negatives)"
                    .into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if self.knowledge_streams.is_empty() {
            return Err(Error::Config("at least one knowledge stream".into()));
        }
        self.model_config(self.vocab_size_placeholder()).validate()
    }

    // Model validation needs some vocabulary size; 2 is the minimum legal.
    fn vocab_size_placeholder(&self) -> usize {
        2
    }

    pub fn model_config(&self, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            d_v: self.d_v,
            d_e: self.d_e,
            d_t: self.d_t,
            d: self.d,
            d_h: self.d_h,
            d_a: self.d_a,
            d_b: self.d_b,
            heads: self.heads,
            g_att_layers: self.g_att_layers,
            fusion_rounds: self.fusion_rounds,
            topdown_hidden: self.topdown_hidden,
            f_ans_hidden: self.f_ans_hidden,
            vocab_size,
            activation: self.activation,
            afm_enabled: self.afm_enabled,
            ckdm_enabled: self.ckdm_enabled,
            ckdm_loss_enabled: self.ckdm_loss_enabled,
            contrastive_mode: self.contrastive_mode,
            lambda: self.lambda,
            temperature: self.temperature,
            query_pool: self.query_pool,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_then_overrides() {
        let cfg = TrainConfig::parse_str(
            "train_manifest=data/train.manifest\nepochs=5\nlambda=0.5\nafm_enabled=false\n",
        )
        .unwrap();
        assert_eq!(cfg.epochs, 5);
        assert_eq!(cfg.lambda, 0.5);
        assert!(!cfg.afm_enabled);
        assert_eq!(cfg.learning_rate, 1e-4);
        assert_eq!(cfg.weight_decay, 0.01);
        assert_eq!(cfg.beta1, 0.9);
        assert_eq!(cfg.beta2, 0.999);
        assert_eq!(cfg.epochs, 5);
        assert_eq!(cfg.d, 32);
    }

    #[test]
    fn large_preset_sets_wide_dims() {
        let cfg = TrainConfig::parse_str("preset=large\ntrain_manifest=x\n").unwrap();
        assert_eq!(cfg.d, 512);
        assert_eq!(cfg.heads, 8);
        assert_eq!(cfg.g_att_layers, 5);
        assert_eq!(cfg.epochs, 100);
        assert_eq!(cfg.d_e, 300);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(matches!(
            TrainConfig::parse_str("learning_rte=0.1\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn duplicate_key_rejected() {
        assert!(matches!(
            TrainConfig::parse_str("epochs=1\nepochs=2\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let cfg =
            TrainConfig::parse_str("# a comment\n\nepochs=3   # trailing\n").unwrap();
        assert_eq!(cfg.epochs, 3);
    }

    #[test]
    fn contrastive_needs_batch_of_two() {
        let mut cfg = TrainConfig::desk_default();
        cfg.batch_size = 1;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.ckdm_loss_enabled = false;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn zero_epochs_rejected() {
        let mut cfg = TrainConfig::desk_default();
        cfg.epochs = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn canonical_string_roundtrips_and_hash_tracks_toggles() {
        let mut cfg = TrainConfig::desk_default();
        cfg.train_manifest = PathBuf::from("fx/train.manifest");
        let reparsed = TrainConfig::parse_str(&cfg.canonical_string()).unwrap();
        assert_eq!(cfg, reparsed);
        assert_eq!(cfg.hash(), reparsed.hash());

        let mut ablated = cfg.clone();
        ablated.afm_enabled = false;
        assert_ne!(cfg.hash(), ablated.hash());
    }

    #[test]
    fn knowledge_streams_parse_as_list() {
        let cfg = TrainConfig::parse_str("knowledge_streams=ofa, blip2\n").unwrap();
        assert_eq!(cfg.knowledge_streams, vec!["ofa", "blip2"]);
    }
}
