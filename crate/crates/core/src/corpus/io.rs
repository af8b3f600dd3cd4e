//! One record per line: `id TAB level TAB lang=BASE64(source) ...`.
//! Sources are whitespace tokenized; absent languages are omitted.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;

use super::toy::ToyLang;
use super::{CorpusError, Level, MultiParallelSample, Result, SemiParallelCorpus, Split, Vocab};

pub fn corpus_to_string(c: &SemiParallelCorpus) -> String {
    let mut out = String::new();
    for s in &c.samples {
        write!(out, "{}\t{}", s.id, s.level.tag()).expect("string write");
        for (l, e) in s.entries.iter().enumerate() {
            if let Some(toks) = e {
                write!(out, "\t{}={}", c.languages[l], STANDARD.encode(toks.join(" "))).expect("string write");
            }
        }
        out.push('\n');
    }
    out
}

pub fn save_corpus(c: &SemiParallelCorpus, path: &Path) -> Result<()> {
    std::fs::write(path, corpus_to_string(c))?;
    Ok(())
}

/// Parses corpus text. With `languages` given, that registry order is used
/// and other languages are rejected; otherwise languages are registered in
/// order of first appearance. Toy-only registries get the toy vocabulary,
/// anything else a vocabulary of the tokens seen.
pub fn parse_corpus(
    text: &str,
    languages: Option<&[String]>,
    flag_len: usize,
    split: Split,
) -> Result<SemiParallelCorpus> {
    let fixed = languages.is_some();
    let mut langs: Vec<String> = languages.map(<[String]>::to_vec).unwrap_or_default();
    // (id, level, [(language, tokens)])
    type Raw = (String, Level, Vec<(usize, Vec<String>)>);
    let mut raw: Vec<Raw> = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let perr = |detail: String| CorpusError::ParseError { line: line_no, detail };
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let id = fields.next().filter(|s| !s.is_empty()).ok_or_else(|| perr("missing id".into()))?;
        let level = fields.next().ok_or_else(|| perr("missing level".into()))?;
        let level = Level::from_tag(level).ok_or_else(|| perr(format!("unknown level {level:?}")))?;
        if !seen.insert(id.to_string()) {
            return Err(CorpusError::DuplicateId(id.to_string()));
        }
        let mut entries = Vec::new();
        for f in fields {
            let (lang, b64) = f.split_once('=').ok_or_else(|| perr(format!("field {f:?} lacks lang=")))?;
            let bytes = STANDARD.decode(b64).map_err(|e| perr(format!("bad base64 for {lang}: {e}")))?;
            let src = String::from_utf8(bytes).map_err(|e| perr(format!("source for {lang} is not UTF-8: {e}")))?;
            let l = match langs.iter().position(|x| x == lang) {
                Some(l) => l,
                None if fixed => return Err(CorpusError::UnknownLanguage(lang.to_string())),
                None => {
                    langs.push(lang.to_string());
                    langs.len() - 1
                }
            };
            if entries.iter().any(|(e, _)| *e == l) {
                return Err(perr(format!("language {lang} repeated")));
            }
            entries.push((l, src.split_whitespace().map(str::to_string).collect()));
        }
        if entries.is_empty() {
            return Err(perr("record has no language instance".into()));
        }
        raw.push((id.to_string(), level, entries));
    }
    if langs.is_empty() {
        return Err(CorpusError::ConfigError("corpus names no languages".into()));
    }
    let samples: Vec<MultiParallelSample> = raw
        .into_iter()
        .map(|(id, level, es)| {
            let mut entries = vec![None; langs.len()];
            for (l, t) in es {
                entries[l] = Some(t);
            }
            MultiParallelSample { id, level, entries, profile: None }
        })
        .collect();
    let vocab = if langs.iter().all(|l| ToyLang::from_name(l).is_ok()) {
        Vocab::for_toy(&langs, flag_len)?
    } else {
        let toks = samples.iter().flat_map(|s| s.entries.iter().flatten().flatten().map(String::as_str));
        Vocab::new(langs.len(), flag_len, toks)?
    };
    Ok(SemiParallelCorpus { languages: langs, samples, vocab, split })
}

pub fn load_corpus(
    path: &Path,
    languages: Option<&[String]>,
    flag_len: usize,
    split: Split,
) -> Result<SemiParallelCorpus> {
    let text = std::fs::read_to_string(path)?;
    parse_corpus(&text, languages, flag_len, split)
}
