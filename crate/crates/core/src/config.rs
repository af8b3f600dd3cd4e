//! Plain-text `key = value` run configuration.

use std::fmt::Write as _;

use crate::corpus::GenConfig;
use crate::model::{DecodeConfig, ModelDims};
use crate::train::{AdamWConfig, LossConfig, SourceMode, TrainConfig, TrainMode};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected key = value")]
    Syntax { line: usize },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}: {reason}")]
    BadValue { key: String, value: String, reason: String },
}

pub type Result<T> = std::result::Result<T, ConfigError>;

/// Every key, its default and what it controls, in echo order.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("languages", "toyA,toyB,toyC", "comma-separated toy languages"),
    ("samples", "1000", "training samples to generate"),
    ("test_samples", "100", "fully parallel test samples to generate"),
    ("missing_rates", "", "per-language drop probability, comma-separated; empty means none"),
    ("loop_weights", "", "per-language loop-task share of present instances, '-' for unshifted"),
    ("loop_fraction", "0.5", "share of loop tasks among generated programs"),
    ("max_code_len", "26", "longest rendering kept"),
    ("dims", "desk", "size preset: micro, desk or paper"),
    ("d_model", "", "override the preset width"),
    ("heads", "", "override attention heads"),
    ("enc_layers", "", "override encoder depth"),
    ("dec_layers", "", "override decoder depth"),
    ("enc_ff", "", "override encoder feed-forward width"),
    ("dec_ff", "", "override decoder feed-forward width"),
    ("latent", "", "override latent size"),
    ("flag_len", "4", "flag tokens per language"),
    ("proj_hidden", "", "override projector hidden width"),
    ("max_len", "", "override the position table length"),
    ("lambda", "0.001", "trade-off weight of the shift terms"),
    ("mse_weight", "1", "weight of flag reconstruction against translation"),
    ("sources", "all", "translation sources per target: all or one"),
    ("inner_all", "false", "run the partially-missing inner loop over every language"),
    ("lr", "0.0001", "initial learning rate, decayed linearly to 0"),
    ("weight_decay", "0.01", "decoupled weight decay"),
    ("beta1", "0.9", "first-moment decay"),
    ("beta2", "0.999", "second-moment decay"),
    ("adam_eps", "1e-8", "denominator epsilon"),
    ("batch_size", "16", "samples per optimizer step"),
    ("epochs", "10", "passes over the training corpus"),
    ("steps", "", "optimizer step cap; empty for none"),
    ("mode", "semi", "semi trains on every sample, parallel on complete ones only"),
    ("workers", "1", "threads; results do not depend on it"),
    ("beam", "1", "beam width, 1 is greedy"),
    ("max_decode_len", "40", "generated tokens per translation"),
    ("val_pairs", "", "test pairs per direction for per-epoch validation; empty for all"),
    ("seed", "0", "root seed"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { values: KEYS.iter().map(|(_, d, _)| d.to_string()).collect() }
    }
}

fn idx(key: &str) -> Result<usize> {
    KEYS.iter().position(|(k, _, _)| *k == key).ok_or_else(|| ConfigError::UnknownKey(key.to_string()))
}

fn bad<T>(key: &str, value: &str, reason: impl Into<String>) -> Result<T> {
    Err(ConfigError::BadValue { key: key.into(), value: value.into(), reason: reason.into() })
}

impl RunConfig {
    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
            c.set(k.trim(), v.trim())?;
        }
        Ok(c)
    }

    /// Sets one key after checking that its value parses.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let i = idx(key)?;
        let old = std::mem::replace(&mut self.values[i], value.to_string());
        if let Err(e) = self.check(key) {
            self.values[i] = old;
            return Err(e);
        }
        Ok(())
    }

    /// `key=value` override as given on a command line.
    pub fn apply(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment.split_once('=').ok_or(ConfigError::Syntax { line: 0 })?;
        self.set(k.trim(), v.trim())
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        Ok(&self.values[idx(key)?])
    }

    /// Every key with its effective value.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for ((k, _, doc), v) in KEYS.iter().zip(&self.values) {
            let _ = writeln!(s, "# {doc}\n{k} = {v}");
        }
        s
    }

    fn check(&self, key: &str) -> Result<()> {
        match key {
            "languages" => self.languages().map(|_| ()),
            "missing_rates" => self.float_list(key).map(|_| ()),
            "loop_weights" => self.opt_float_list(key).map(|_| ()),
            "dims" => match self.get(key)? {
                "micro" | "desk" | "paper" => Ok(()),
                v => bad(key, v, "expected micro, desk or paper"),
            },
            "sources" => self.sources().map(|_| ()),
            "mode" => self.mode().map(|_| ()),
            "inner_all" => self.boolean(key).map(|_| ()),
            "loop_fraction" | "lambda" | "mse_weight" | "lr" | "weight_decay" | "beta1" | "beta2" | "adam_eps" => {
                self.float(key).map(|_| ())
            }
            _ => self.opt_usize(key).map(|_| ()),
        }
    }

    pub fn languages(&self) -> Result<Vec<String>> {
        let v = self.get("languages")?;
        let langs: Vec<String> = v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
        if langs.len() < 2 {
            return bad("languages", v, "need at least two");
        }
        Ok(langs)
    }

    fn float(&self, key: &str) -> Result<f64> {
        let v = self.get(key)?;
        match v.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(x),
            _ => bad(key, v, "expected a finite number"),
        }
    }

    fn opt_usize(&self, key: &str) -> Result<Option<usize>> {
        let v = self.get(key)?;
        if v.is_empty() {
            return Ok(None);
        }
        v.parse().map(Some).or_else(|_| bad(key, v, "expected a non-negative integer"))
    }

    fn usize(&self, key: &str) -> Result<usize> {
        self.opt_usize(key)?.map_or_else(|| bad(key, "", "value required"), Ok)
    }

    fn boolean(&self, key: &str) -> Result<bool> {
        match self.get(key)? {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            v => bad(key, v, "expected true or false"),
        }
    }

    fn float_list(&self, key: &str) -> Result<Vec<f64>> {
        let v = self.get(key)?;
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',').map(|s| s.trim().parse::<f64>().or_else(|_| bad(key, v, "expected numbers"))).collect()
    }

    fn opt_float_list(&self, key: &str) -> Result<Vec<Option<f64>>> {
        let v = self.get(key)?;
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|s| match s.trim() {
                "-" => Ok(None),
                t => t.parse::<f64>().map(Some).or_else(|_| bad(key, v, "expected numbers or '-'")),
            })
            .collect()
    }

    fn sources(&self) -> Result<SourceMode> {
        match self.get("sources")? {
            "all" => Ok(SourceMode::All),
            "one" => Ok(SourceMode::SampleOne),
            v => bad("sources", v, "expected all or one"),
        }
    }

    fn mode(&self) -> Result<TrainMode> {
        match self.get("mode")? {
            "semi" => Ok(TrainMode::SemiParallel),
            "parallel" => Ok(TrainMode::ParallelOnly),
            v => bad("mode", v, "expected semi or parallel"),
        }
    }

    pub fn seed(&self) -> Result<u64> {
        let v = self.get("seed")?;
        v.parse().or_else(|_| bad("seed", v, "expected an unsigned integer"))
    }

    pub fn flag_len(&self) -> Result<usize> {
        self.usize("flag_len")
    }

    pub fn test_samples(&self) -> Result<usize> {
        self.usize("test_samples")
    }

    pub fn workers(&self) -> Result<usize> {
        Ok(self.usize("workers")?.max(1))
    }

    pub fn gen_config(&self) -> Result<GenConfig> {
        let langs = self.languages()?;
        let names: Vec<&str> = langs.iter().map(String::as_str).collect();
        let mut g = GenConfig::new(&names, self.usize("samples")?, self.seed()?);
        let rates = self.float_list("missing_rates")?;
        if !rates.is_empty() {
            if rates.len() != langs.len() {
                return bad("missing_rates", self.get("missing_rates")?, "need one value per language");
            }
            g.missing_rates = rates;
        }
        let weights = self.opt_float_list("loop_weights")?;
        if !weights.is_empty() {
            if weights.len() != langs.len() {
                return bad("loop_weights", self.get("loop_weights")?, "need one value per language");
            }
            g.loop_weights = weights;
        }
        g.loop_fraction = self.float("loop_fraction")?;
        g.flag_len = self.flag_len()?;
        g.max_code_len = self.usize("max_code_len")?;
        Ok(g)
    }

    /// Model sizes for a corpus with `vocab` tokens and `n_langs` languages.
    pub fn dims(&self, vocab: usize, n_langs: usize) -> Result<ModelDims> {
        let mut d = match self.get("dims")? {
            "micro" => ModelDims::micro(vocab, n_langs),
            "paper" => ModelDims { vocab, ..ModelDims::paper(n_langs) },
            _ => ModelDims::desk(vocab, n_langs),
        };
        d.flag_len = self.flag_len()?;
        let overrides: [(&str, &mut usize); 9] = [
            ("d_model", &mut d.d_model),
            ("heads", &mut d.heads),
            ("enc_layers", &mut d.enc_layers),
            ("dec_layers", &mut d.dec_layers),
            ("enc_ff", &mut d.enc_ff),
            ("dec_ff", &mut d.dec_ff),
            ("latent", &mut d.latent),
            ("proj_hidden", &mut d.proj_hidden),
            ("max_len", &mut d.max_len),
        ];
        for (k, slot) in overrides {
            if let Some(v) = self.opt_usize(k)? {
                *slot = v;
            }
        }
        if let Err(e) = d.validate() {
            return bad("dims", self.get("dims")?, e.to_string());
        }
        Ok(d)
    }

    pub fn decode(&self) -> Result<DecodeConfig> {
        Ok(DecodeConfig { beam: self.usize("beam")?.max(1), max_len: self.usize("max_decode_len")? })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let lambda = self.float("lambda")?;
        if lambda < 0.0 {
            return bad("lambda", self.get("lambda")?, "must be >= 0");
        }
        let lr = self.float("lr")?;
        if lr <= 0.0 {
            return bad("lr", self.get("lr")?, "must be > 0");
        }
        Ok(TrainConfig {
            loss: LossConfig {
                lambda,
                mse_weight: self.float("mse_weight")?,
                sources: self.sources()?,
                inner_all: self.boolean("inner_all")?,
                ..LossConfig::default()
            },
            optim: AdamWConfig {
                lr,
                beta1: self.float("beta1")?,
                beta2: self.float("beta2")?,
                eps: self.float("adam_eps")?,
                weight_decay: self.float("weight_decay")?,
                total_steps: None,
            },
            batch_size: self.usize("batch_size")?.max(1),
            epochs: self.usize("epochs")?,
            steps: self.opt_usize("steps")?.map(|s| s as u64),
            seed: self.seed()?,
            mode: self.mode()?,
            workers: self.workers()?,
            decode: self.decode()?,
            val_pairs: self.opt_usize("val_pairs")?,
            out_dir: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_text() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        let t = c.train_config().unwrap();
        assert_eq!(t.loss.lambda, 1e-3);
        assert_eq!(t.optim.lr, 1e-4);
        assert_eq!(c.gen_config().unwrap().languages.len(), 3);
        assert_eq!(c.dims(60, 3).unwrap().d_model, 64);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(RunConfig::parse("colour = red"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(RunConfig::parse("lr 3"), Err(ConfigError::Syntax { line: 1 })));
        assert!(matches!(RunConfig::parse("epochs = -1"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(RunConfig::parse("mode = sometimes"), Err(ConfigError::BadValue { .. })));
        let c = RunConfig::parse("lambda = -1").unwrap();
        assert!(c.train_config().is_err());
    }

    #[test]
    fn overrides_apply() {
        let mut c =
            RunConfig::parse("# comment\nlanguages = toyA, toyD\nmissing_rates = 0, 0.4\nd_model = 16\nheads = 2")
                .unwrap();
        c.apply("steps=7").unwrap();
        assert_eq!(c.train_config().unwrap().steps, Some(7));
        assert_eq!(c.gen_config().unwrap().missing_rates, vec![0.0, 0.4]);
        assert_eq!(c.dims(30, 2).unwrap().d_model, 16);
        assert!(c.apply("missing_rates=0.1").is_ok());
        assert!(c.gen_config().is_err());
    }
}
