//! Byte pair encoding without an end-of-word marker. Continuation pieces
//! carry the `@@` suffix.

use std::collections::{HashMap, HashSet};

use super::PipelineError;

pub const SEPARATOR: &str = "@@";

/// Ordered merge rules; rank = position in `merges`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
}

impl BpeModel {
    pub fn from_merges(merges: Vec<(String, String)>) -> Result<Self, PipelineError> {
        let mut ranks = HashMap::with_capacity(merges.len());
        for (i, m) in merges.iter().enumerate() {
            if ranks.insert(m.clone(), i).is_some() {
                return Err(PipelineError::Bpe(format!("duplicate merge {} {}", m.0, m.1)));
            }
        }
        Ok(BpeModel { merges, ranks })
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    /// One merge per line, two space-separated symbols.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (a, b) in &self.merges {
            out.push_str(a);
            out.push(' ');
            out.push_str(b);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, PipelineError> {
        let mut merges = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                    merges.push((a.to_string(), b.to_string()))
                }
                _ => {
                    return Err(PipelineError::Bpe(format!(
                        "line {}: expected two space-separated symbols",
                        i + 1
                    )))
                }
            }
        }
        Self::from_merges(merges)
    }

    /// Segments one token. Pieces other than the last end in `@@`.
    pub fn apply(&self, token: &str) -> Vec<String> {
        let mut syms: Vec<String> = token.chars().map(String::from).collect();
        if syms.len() <= 1 {
            return if syms.is_empty() { vec![] } else { syms };
        }
        loop {
            let best = syms
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())).copied())
                .min();
            let Some(rank) = best else { break };
            let (a, b) = &self.merges[rank];
            let mut merged = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && &syms[i] == a && &syms[i + 1] == b {
                    merged.push(format!("{a}{b}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut syms[i]));
                    i += 1;
                }
            }
            syms = merged;
            if syms.len() == 1 {
                break;
            }
        }
        let last = syms.len() - 1;
        for s in &mut syms[..last] {
            s.push_str(SEPARATOR);
        }
        syms
    }

    pub fn apply_all<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<String> {
        tokens.iter().flat_map(|t| self.apply(t.as_ref())).collect()
    }
}

/// Reverses segmentation: `sent@@ ence` -> `sentence`.
pub fn join_subwords<S: AsRef<str>>(pieces: &[S]) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for p in pieces {
        let p = p.as_ref();
        match p.strip_suffix(SEPARATOR) {
            Some(stem) => cur.push_str(stem),
            None => {
                cur.push_str(p);
                out.push(std::mem::take(&mut cur));
            }
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Greedy most-frequent-pair merging. Pairs are counted inside words
/// weighted by word frequency; ties go to the lexicographically smallest
/// pair; merging stops early once no pair occurs at least twice.
pub fn train_bpe<S: AsRef<str>>(
    corpus: &[Vec<S>],
    num_merges: usize,
) -> Result<BpeModel, PipelineError> {
    let mut freq: HashMap<&str, i64> = HashMap::new();
    for seq in corpus {
        for t in seq {
            *freq.entry(t.as_ref()).or_default() += 1;
        }
    }
    if freq.is_empty() {
        return Err(PipelineError::EmptyCorpus);
    }
    let mut words: Vec<(Vec<String>, i64)> = freq
        .into_iter()
        .map(|(w, f)| (w.chars().map(String::from).collect(), f))
        .collect();
    words.sort();

    type Pair = (String, String);
    let mut counts: HashMap<Pair, i64> = HashMap::new();
    let mut index: HashMap<Pair, HashSet<usize>> = HashMap::new();
    for (wi, (syms, f)) in words.iter().enumerate() {
        for w in syms.windows(2) {
            let p = (w[0].clone(), w[1].clone());
            *counts.entry(p.clone()).or_default() += f;
            index.entry(p).or_default().insert(wi);
        }
    }

    let mut merges = Vec::new();
    while merges.len() < num_merges {
        let best = counts
            .iter()
            .filter(|(_, &c)| c >= 2)
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)))
            .map(|(p, _)| p.clone());
        let Some(pair) = best else { break };
        let affected: Vec<usize> = {
            let mut v: Vec<usize> = index.remove(&pair).unwrap_or_default().into_iter().collect();
            v.sort_unstable();
            v
        };
        let joined = format!("{}{}", pair.0, pair.1);
        for wi in affected {
            let (syms, f) = &mut words[wi];
            let f = *f;
            for w in syms.windows(2) {
                let p = (w[0].clone(), w[1].clone());
                if let Some(c) = counts.get_mut(&p) {
                    *c -= f;
                    if *c <= 0 {
                        counts.remove(&p);
                    }
                }
            }
            let mut merged = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == pair.0 && syms[i + 1] == pair.1 {
                    merged.push(joined.clone());
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut syms[i]));
                    i += 1;
                }
            }
            *syms = merged;
            for w in syms.windows(2) {
                let p = (w[0].clone(), w[1].clone());
                *counts.entry(p.clone()).or_default() += f;
                index.entry(p).or_default().insert(wi);
            }
        }
        counts.remove(&pair);
        merges.push(pair);
    }
    BpeModel::from_merges(merges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn words(ws: &[&str]) -> Vec<Vec<String>> {
        vec![ws.iter().map(|s| s.to_string()).collect()]
    }

    /// Brute-force pair count straight from the definition.
    fn most_frequent_pair(corpus: &[&str]) -> (String, String) {
        let mut best: Option<((String, String), usize)> = None;
        let mut pairs: Vec<(String, String)> = Vec::new();
        for w in corpus {
            let cs: Vec<char> = w.chars().collect();
            for i in 0..cs.len().saturating_sub(1) {
                pairs.push((cs[i].to_string(), cs[i + 1].to_string()));
            }
        }
        for p in &pairs {
            let c = pairs.iter().filter(|q| *q == p).count();
            let better = match &best {
                None => true,
                Some((bp, bc)) => c > *bc || (c == *bc && p < bp),
            };
            if better {
                best = Some((p.clone(), c));
            }
        }
        best.unwrap().0
    }

    #[test]
    fn first_merge_matches_pair_counting() {
        let corpus = ["low"; 5];
        let m = train_bpe(&words(&corpus), 1).unwrap();
        let oracle = most_frequent_pair(&corpus);
        assert_eq!(oracle, ("l".to_string(), "o".to_string()));
        assert_eq!(m.merges(), &[oracle]);

        let corpus = ["lower", "newest", "newest", "widest", "low", "low"];
        let m = train_bpe(&words(&corpus), 1).unwrap();
        assert_eq!(m.merges()[0], most_frequent_pair(&corpus));
    }

    #[test]
    fn zero_merges_is_character_level() {
        let m = train_bpe(&words(&["hello", "hello"]), 0).unwrap();
        assert!(m.is_empty());
        assert_eq!(m.apply("hi"), ["h@@", "i"]);
    }

    #[test]
    fn single_character_words_have_no_merges() {
        let m = train_bpe(&words(&["a", "b", "a", "c"]), 10).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn empty_corpus_rejected() {
        let c: Vec<Vec<String>> = vec![vec![]];
        assert!(matches!(train_bpe(&c, 5), Err(PipelineError::EmptyCorpus)));
    }

    #[test]
    fn splits_sentence_as_in_subword_example() {
        let merges = [
            ("s", "e"), ("se", "n"), ("sen", "t"), ("e", "n"), ("en", "c"),
            ("enc", "e"), ("ence", "-"), ("ence-", "0"), ("ence-0", "1"),
        ];
        let m = BpeModel::from_merges(
            merges.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
        )
        .unwrap();
        assert_eq!(m.apply("sentence-01"), ["sent@@", "ence-01"]);
        assert_eq!(m.apply("sent"), ["sent"]);
    }

    #[test]
    fn file_round_trip() {
        let m = train_bpe(&words(&["banana", "bandana", "ban", "ban"]), 5).unwrap();
        let back = BpeModel::from_text(&m.to_text()).unwrap();
        assert_eq!(back, m);
        assert!(BpeModel::from_text("a b\na b\n").is_err());
        assert!(BpeModel::from_text("abc\n").is_err());
    }

    #[test]
    fn join_reverses_segmentation() {
        assert_eq!(join_subwords(&["sent@@", "ence", "he"]), ["sentence", "he"]);
    }

    proptest! {
        #[test]
        fn reconstruction_law(corpus in proptest::collection::vec("[a-d]{1,6}", 1..20),
                              probe in "[a-e]{1,10}", merges in 0usize..30) {
            let c = vec![corpus];
            let m = train_bpe(&c, merges).unwrap();
            let pieces = m.apply(&probe);
            let last = pieces.len() - 1;
            for (i, p) in pieces.iter().enumerate() {
                prop_assert_eq!(p.ends_with(SEPARATOR), i != last);
            }
            let joined: String = pieces.iter().map(|p| p.trim_end_matches(SEPARATOR)).collect();
            prop_assert_eq!(joined, probe);
        }
    }
}
