use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::toy::{random_program, render, TaskProfile, ToyLang};
use super::{CorpusError, Level, MultiParallelSample, Result, SemiParallelCorpus, Split, Vocab};
use crate::seed::derive;

/// Rejection-sampling draws per sample before giving up on `max_code_len`.
const MAX_ATTEMPTS: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub languages: Vec<String>,
    pub samples: usize,
    /// Probability that an instance of each language is dropped.
    pub missing_rates: Vec<f64>,
    /// Per-language target share of loop tasks among present instances;
    /// `None` leaves the language unshifted.
    pub loop_weights: Vec<Option<f64>>,
    /// Share of loop tasks among generated programs.
    pub loop_fraction: f64,
    pub flag_len: usize,
    /// Longest rendering allowed in any language.
    pub max_code_len: usize,
    pub seed: u64,
}

impl GenConfig {
    pub fn new(languages: &[&str], samples: usize, seed: u64) -> Self {
        let n = languages.len();
        GenConfig {
            languages: languages.iter().map(|s| s.to_string()).collect(),
            samples,
            missing_rates: vec![0.0; n],
            loop_weights: vec![None; n],
            loop_fraction: 0.5,
            flag_len: 4,
            max_code_len: 26,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let n = self.languages.len();
        let bad = |m: String| Err(CorpusError::ConfigError(m));
        if n < 2 {
            return bad("need at least two languages".into());
        }
        for (i, l) in self.languages.iter().enumerate() {
            ToyLang::from_name(l)?;
            if self.languages[..i].contains(l) {
                return bad(format!("language {l} listed twice"));
            }
        }
        if self.missing_rates.len() != n || self.loop_weights.len() != n {
            return bad("missing_rates and loop_weights need one entry per language".into());
        }
        if let Some(r) = self.missing_rates.iter().find(|r| !(0.0..1.0).contains(*r)) {
            return bad(format!("missing rate {r} outside [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.loop_fraction) {
            return bad(format!("loop_fraction {} outside [0, 1]", self.loop_fraction));
        }
        for w in self.loop_weights.iter().flatten() {
            if !(0.0..=1.0).contains(w) {
                return bad(format!("loop weight {w} outside [0, 1]"));
            }
            let shares = [(1.0 - self.loop_fraction, 1.0 - w), (self.loop_fraction, *w)];
            if shares.iter().any(|(base, want)| *base == 0.0 && *want > 0.0) {
                return bad(format!("loop weight {w} unreachable with loop_fraction {}", self.loop_fraction));
            }
        }
        if self.max_code_len < 4 {
            return bad("max_code_len below 4".into());
        }
        Ok(())
    }

    /// Keep probability per task for language `l`. With a shift profile the
    /// rate is scaled per task so present instances follow the target mix;
    /// the overall keep rate is lowered when the target mix demands it.
    fn keep_probs(&self, l: usize) -> [f64; 2] {
        let rho = 1.0 - self.missing_rates[l];
        match self.loop_weights[l] {
            None => [rho, rho],
            Some(w) => {
                let base = [1.0 - self.loop_fraction, self.loop_fraction];
                let want = [1.0 - w, w];
                let c = (0..2).filter(|&t| want[t] > 0.0).map(|t| base[t] / want[t]).fold(rho, f64::min);
                [0, 1].map(|t| if want[t] == 0.0 { 0.0 } else { (c * want[t] / base[t]).min(1.0) })
            }
        }
    }
}

fn task_index(t: TaskProfile) -> usize {
    match t {
        TaskProfile::Arith => 0,
        TaskProfile::Loop => 1,
    }
}

/// Generates a seeded semi-parallel corpus. Drops are independent per
/// (sample, language) given the task; when every language would be dropped,
/// one uniformly chosen language is kept.
pub fn generate_corpus(cfg: &GenConfig) -> Result<SemiParallelCorpus> {
    generate_with(cfg, cfg.seed, Split::Train, "s")
}

fn generate_with(cfg: &GenConfig, seed: u64, split: Split, prefix: &str) -> Result<SemiParallelCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.languages.len();
    let keep: Vec<[f64; 2]> = (0..n).map(|l| cfg.keep_probs(l)).collect();
    let mut samples = Vec::with_capacity(cfg.samples);
    for i in 0..cfg.samples {
        let profile = if rng.random_bool(cfg.loop_fraction) { TaskProfile::Loop } else { TaskProfile::Arith };
        let mut rendered = None;
        for _ in 0..MAX_ATTEMPTS {
            let p = random_program(&mut rng, profile);
            let r: Vec<Vec<String>> = cfg.languages.iter().map(|l| render(&p, l)).collect::<Result<_>>()?;
            if r.iter().all(|t| t.len() <= cfg.max_code_len) {
                rendered = Some(r);
                break;
            }
        }
        let rendered = rendered.ok_or_else(|| {
            CorpusError::ConfigError(format!("no {} program fits in max_code_len {}", profile.tag(), cfg.max_code_len))
        })?;
        let t = task_index(profile);
        let mut kept: Vec<bool> = (0..n).map(|l| rng.random_bool(keep[l][t])).collect();
        if !kept.iter().any(|k| *k) {
            kept[rng.random_range(0..n)] = true;
        }
        let entries = rendered.into_iter().zip(kept).map(|(r, k)| k.then_some(r)).collect();
        samples.push(MultiParallelSample {
            id: format!("{prefix}{i:05}"),
            level: Level::Program,
            entries,
            profile: Some(profile),
        });
    }
    Ok(SemiParallelCorpus {
        languages: cfg.languages.clone(),
        samples,
        vocab: Vocab::for_toy(&cfg.languages, cfg.flag_len)?,
        split,
    })
}

/// Train split per `cfg` plus a fully parallel, unshifted test split drawn
/// from an independent stream.
pub fn generate_splits(cfg: &GenConfig, test_samples: usize) -> Result<(SemiParallelCorpus, SemiParallelCorpus)> {
    let train = generate_with(cfg, derive(cfg.seed, "corpus-train"), Split::Train, "train-")?;
    let n = cfg.languages.len();
    let test_cfg =
        GenConfig { samples: test_samples, missing_rates: vec![0.0; n], loop_weights: vec![None; n], ..cfg.clone() };
    let test = generate_with(&test_cfg, derive(cfg.seed, "corpus-test"), Split::Test, "test-")?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_drops_means_fully_parallel() {
        let c = generate_corpus(&GenConfig::new(&["toyA", "toyB", "toyC"], 200, 1)).unwrap();
        assert_eq!(c.multi_parallel_fraction(), 1.0);
        assert!(c.samples.iter().all(|s| s.entries.iter().flatten().all(|t| t.len() <= 26)));
    }

    #[test]
    fn missing_rates_give_expected_parallel_fraction() {
        let mut cfg = GenConfig::new(&["toyA", "toyB", "toyC"], 1000, 7);
        cfg.missing_rates = vec![0.0, 0.4, 0.4];
        let c = generate_corpus(&cfg).unwrap();
        let f = c.multi_parallel_fraction();
        assert!((f - 0.36).abs() < 0.05, "{f}");
        assert_eq!(generate_corpus(&cfg).unwrap(), c);
        assert!(c.samples.iter().all(|s| !s.present().is_empty()));
    }

    #[test]
    fn shift_profile_skews_present_task_mix() {
        let mut cfg = GenConfig::new(&["toyA", "toyB", "toyC"], 2000, 11);
        cfg.loop_weights[2] = Some(0.9);
        let c = generate_corpus(&cfg).unwrap();
        let present: Vec<_> = c.samples.iter().filter(|s| s.entries[2].is_some()).collect();
        let loops = present.iter().filter(|s| s.profile == Some(TaskProfile::Loop)).count();
        let frac = loops as f64 / present.len() as f64;
        assert!((frac - 0.9).abs() < 0.03, "{frac}");
    }

    #[test]
    fn config_errors() {
        assert!(generate_corpus(&GenConfig::new(&["toyA"], 10, 1)).is_err());
        let mut cfg = GenConfig::new(&["toyA", "toyB"], 10, 1);
        cfg.missing_rates[0] = 1.0;
        assert!(matches!(generate_corpus(&cfg), Err(CorpusError::ConfigError(_))));
        assert!(generate_corpus(&GenConfig::new(&["toyA", "rust"], 10, 1)).is_err());
        let mut tiny = GenConfig::new(&["toyA", "toyB"], 10, 1);
        tiny.max_code_len = 5;
        assert!(matches!(generate_corpus(&tiny), Err(CorpusError::ConfigError(_))));
    }
}
