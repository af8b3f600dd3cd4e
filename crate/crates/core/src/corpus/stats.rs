use std::fmt::Write as _;

use super::SemiParallelCorpus;

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusStats {
    pub languages: Vec<String>,
    pub samples: usize,
    pub counts: Vec<usize>,
    /// Samples holding both languages; symmetric with a zero diagonal.
    pub pairwise: Vec<Vec<usize>>,
    pub multi_parallel_fraction: f64,
    /// Sum of pairwise counts over `C(N,2) * samples`.
    pub bilingual_parallel_fraction: f64,
}

pub fn stats(c: &SemiParallelCorpus) -> CorpusStats {
    let n = c.n_langs();
    let mut counts = vec![0; n];
    let mut pairwise = vec![vec![0; n]; n];
    for s in &c.samples {
        let p = s.present();
        for &i in &p {
            counts[i] += 1;
            for &j in &p {
                if i != j {
                    pairwise[i][j] += 1;
                }
            }
        }
    }
    let pairs: usize = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).map(|(i, j)| pairwise[i][j]).sum();
    let possible = n * n.saturating_sub(1) / 2 * c.samples.len();
    CorpusStats {
        languages: c.languages.clone(),
        samples: c.samples.len(),
        counts,
        pairwise,
        multi_parallel_fraction: c.multi_parallel_fraction(),
        bilingual_parallel_fraction: if possible == 0 { 0.0 } else { pairs as f64 / possible as f64 },
    }
}

impl CorpusStats {
    pub fn counts_csv(&self) -> String {
        let mut s = String::from("lang,count\n");
        for (l, c) in self.languages.iter().zip(&self.counts) {
            writeln!(s, "{l},{c}").expect("string write");
        }
        s
    }

    pub fn pairs_csv(&self) -> String {
        let mut s = String::from("lang_i,lang_j,pairs\n");
        let n = self.languages.len();
        for i in 0..n {
            for j in i + 1..n {
                writeln!(s, "{},{},{}", self.languages[i], self.languages[j], self.pairwise[i][j])
                    .expect("string write");
            }
        }
        s
    }

    pub fn count_of(&self, lang: &str) -> Option<usize> {
        self.languages.iter().position(|l| l == lang).map(|i| self.counts[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_corpus, GenConfig};

    #[test]
    fn stats_match_generation() {
        let mut cfg = GenConfig::new(&["toyA", "toyB", "toyC"], 300, 5);
        cfg.missing_rates = vec![0.1, 0.4, 0.4];
        let c = generate_corpus(&cfg).unwrap();
        let st = stats(&c);
        for l in 0..3 {
            assert_eq!(st.counts[l], c.samples.iter().filter(|s| s.entries[l].is_some()).count());
            for m in 0..3 {
                assert_eq!(st.pairwise[l][m], st.pairwise[m][l]);
            }
        }
        let both01 = c.samples.iter().filter(|s| s.entries[0].is_some() && s.entries[1].is_some()).count();
        assert_eq!(st.pairwise[0][1], both01);
        assert!(st.counts_csv().starts_with("lang,count\ntoyA,"));
        assert_eq!(st.pairs_csv().lines().count(), 4);
        assert_eq!(stats(&generate_corpus(&cfg).unwrap()), st);
    }
}
