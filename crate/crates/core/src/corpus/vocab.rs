use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::toy::{shared_tokens, ToyLang};
use super::{CorpusError, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const CLS: usize = 3;
pub const SEP: usize = 4;
const SPECIALS: [&str; 5] = ["[PAD]", "[BOS]", "[EOS]", "[CLS]", "[SEP]"];

/// Token table with contiguous ids: specials, then `k` flag tokens per
/// language, then code tokens.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    n_langs: usize,
    flag_len: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    tokens: Vec<String>,
    n_langs: usize,
    flag_len: usize,
}

impl From<VocabRepr> for Vocab {
    fn from(r: VocabRepr) -> Self {
        let index = r.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens: r.tokens, index, n_langs: r.n_langs, flag_len: r.flag_len }
    }
}

impl From<Vocab> for VocabRepr {
    fn from(v: Vocab) -> Self {
        VocabRepr { tokens: v.tokens, n_langs: v.n_langs, flag_len: v.flag_len }
    }
}

pub fn flag_token(lang: usize, j: usize) -> String {
    format!("[F{}_{}]", lang + 1, j + 1)
}

impl Vocab {
    /// Builds a vocabulary; code tokens keep first-seen order and duplicates are skipped.
    pub fn new<'a>(n_langs: usize, flag_len: usize, code_tokens: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        if n_langs == 0 || flag_len == 0 {
            return Err(CorpusError::ConfigError("vocabulary needs at least one language and k >= 1".into()));
        }
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        for l in 0..n_langs {
            for j in 0..flag_len {
                tokens.push(flag_token(l, j));
            }
        }
        let mut index: HashMap<String, usize> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        for t in code_tokens {
            if !index.contains_key(t) {
                index.insert(t.to_string(), tokens.len());
                tokens.push(t.to_string());
            }
        }
        Ok(Vocab { tokens, index, n_langs, flag_len })
    }

    /// Vocabulary covering the given toy languages.
    pub fn for_toy(languages: &[String], flag_len: usize) -> Result<Self> {
        let mut code: Vec<&str> = shared_tokens().collect();
        for l in languages {
            code.extend(ToyLang::from_name(l)?.keywords());
        }
        Self::new(languages.len(), flag_len, code)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn n_langs(&self) -> usize {
        self.n_langs
    }

    pub fn flag_len(&self) -> usize {
        self.flag_len
    }

    pub fn id(&self, tok: &str) -> Result<usize> {
        self.index.get(tok).copied().ok_or_else(|| CorpusError::UnknownToken(tok.to_string()))
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn flag(&self, lang: usize, j: usize) -> usize {
        SPECIALS.len() + lang * self.flag_len + j
    }

    /// True for ids that are code tokens (not specials or flags).
    pub fn is_code(&self, id: usize) -> bool {
        id >= SPECIALS.len() + self.n_langs * self.flag_len && id < self.tokens.len()
    }

    pub fn ids(&self, toks: &[String]) -> Result<Vec<usize>> {
        toks.iter().map(|t| self.id(t)).collect()
    }

    /// Code tokens of `ids`, stopping at EOS and skipping other specials.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter().take_while(|&&i| i != EOS).filter(|&&i| self.is_code(i)).map(|&i| self.tokens[i].clone()).collect()
    }
}

/// `[CLS] flag_1..flag_k code_1..code_c [SEP]` for language `lang`.
pub fn encode_input(vocab: &Vocab, tokens: &[String], lang: usize, k: usize) -> Result<Vec<usize>> {
    if lang >= vocab.n_langs() {
        return Err(CorpusError::UnknownLanguage(format!("language id {lang}")));
    }
    if k == 0 || k > vocab.flag_len() {
        return Err(CorpusError::ConfigError(format!("k = {k} outside 1..={}", vocab.flag_len())));
    }
    let mut out = Vec::with_capacity(tokens.len() + k + 2);
    out.push(CLS);
    out.extend((0..k).map(|j| vocab.flag(lang, j)));
    for t in tokens {
        out.push(vocab.id(t)?);
    }
    out.push(SEP);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn flagged_input_layout() {
        let v = Vocab::new(2, 2, ["a", "b"]).unwrap();
        let ids = encode_input(&v, &toks("a b"), 1, 2).unwrap();
        assert_eq!(ids, vec![CLS, v.flag(1, 0), v.flag(1, 1), v.id("a").unwrap(), v.id("b").unwrap(), SEP]);
        assert_eq!(v.token(ids[1]), Some("[F2_1]"));
        let v1 = Vocab::new(1, 1, ["a"]).unwrap();
        assert_eq!(encode_input(&v1, &[], 0, 1).unwrap(), vec![CLS, v1.flag(0, 0), SEP]);
        assert!(matches!(encode_input(&v, &toks("q"), 0, 2), Err(CorpusError::UnknownToken(_))));
        assert!(matches!(encode_input(&v, &[], 5, 2), Err(CorpusError::UnknownLanguage(_))));
    }

    #[test]
    fn ids_are_contiguous_and_flags_disjoint() {
        let langs: Vec<String> = ["toyA", "toyB", "toyC"].iter().map(|s| s.to_string()).collect();
        let v = Vocab::for_toy(&langs, 4).unwrap();
        assert_eq!(v.id("[PAD]").unwrap(), PAD);
        for (i, t) in v.tokens().iter().enumerate() {
            assert_eq!(v.id(t).unwrap(), i);
        }
        let mut flags: Vec<usize> =
            (0..3).flat_map(|l| (0..4).map(move |j| (l, j))).map(|(l, j)| v.flag(l, j)).collect();
        flags.sort();
        flags.dedup();
        assert_eq!(flags.len(), 12);
        assert!(v.len() <= 80);
    }

    #[test]
    fn serde_round_trip() {
        let v = Vocab::new(2, 3, ["x", "y"]).unwrap();
        let s = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&s).unwrap();
        assert_eq!(back, v);
    }
}
