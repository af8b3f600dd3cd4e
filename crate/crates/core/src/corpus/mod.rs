//! Semi-parallel toy corpora, vocabulary and the flagged input encoding.

pub mod generate;
pub mod io;
pub mod stats;
pub mod toy;
pub mod vocab;

pub use generate::{generate_corpus, generate_splits, GenConfig};
pub use io::{load_corpus, save_corpus};
pub use stats::{stats, CorpusStats};
pub use toy::{parse, render, SemanticProgram, TaskProfile};
pub use vocab::{encode_input, Vocab};

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum CorpusError {
    #[error("config error: {0}")]
    ConfigError(String),
    #[error("unknown language {0}")]
    UnknownLanguage(String),
    #[error("unknown token {0:?}")]
    UnknownToken(String),
    #[error("parse error at line {line}: {detail}")]
    ParseError { line: usize, detail: String },
    #[error("duplicate sample id {0}")]
    DuplicateId(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

impl From<std::io::Error> for CorpusError {
    fn from(e: std::io::Error) -> Self {
        CorpusError::Io(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Level {
    Snippet,
    Program,
}

impl Level {
    pub fn tag(self) -> &'static str {
        match self {
            Level::Snippet => "snippet",
            Level::Program => "program",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        match s {
            "snippet" => Some(Level::Snippet),
            "program" => Some(Level::Program),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// One program in every language it was collected for.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiParallelSample {
    pub id: String,
    pub level: Level,
    /// Indexed by language id; `None` is an absent instance.
    pub entries: Vec<Option<Vec<String>>>,
    /// Task tag of generated samples.
    pub profile: Option<TaskProfile>,
}

impl MultiParallelSample {
    pub fn present(&self) -> Vec<usize> {
        (0..self.entries.len()).filter(|&l| self.entries[l].is_some()).collect()
    }

    pub fn absent(&self) -> Vec<usize> {
        (0..self.entries.len()).filter(|&l| self.entries[l].is_none()).collect()
    }

    pub fn is_multi_parallel(&self) -> bool {
        self.entries.iter().all(Option::is_some)
    }

    pub fn tokens(&self, lang: usize) -> Option<&[String]> {
        self.entries.get(lang)?.as_deref()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemiParallelCorpus {
    pub languages: Vec<String>,
    pub samples: Vec<MultiParallelSample>,
    pub vocab: Vocab,
    pub split: Split,
}

impl SemiParallelCorpus {
    pub fn n_langs(&self) -> usize {
        self.languages.len()
    }

    pub fn lang_id(&self, name: &str) -> Result<usize> {
        self.languages.iter().position(|l| l == name).ok_or_else(|| CorpusError::UnknownLanguage(name.to_string()))
    }

    pub fn multi_parallel_fraction(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().filter(|s| s.is_multi_parallel()).count() as f64 / self.samples.len() as f64
    }

    /// Samples holding an instance of `lang`.
    pub fn instances_of(&self, lang: usize) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.samples[i].entries[lang].is_some()).collect()
    }
}
