//! Corpus BLEU, length ratio and bucketed reports.
//!
//! BLEU is corpus-level BLEU-4: clipped n-gram counts are summed over the
//! corpus before forming precisions, with no smoothing, and the brevity
//! penalty uses total lengths. Orders for which the hypotheses contain no
//! n-grams at all are left out of the geometric mean, so corpora of very
//! short sentences still score; a corpus with no hypothesis tokens scores 0.

use std::collections::HashMap;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::penman::AmrGraph;
use crate::pipeline::SEPARATOR;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("{hyps} hypotheses for {refs} references")]
    Misaligned { hyps: usize, refs: usize },
    #[error("references have no tokens")]
    ZeroReferenceLength,
    #[error("invalid bucket edges: {0}")]
    Buckets(String),
}

pub const MAX_ORDER: usize = 4;

/// Rejoins BPE pieces and splits on whitespace.
pub fn tokenize(line: &str) -> Vec<String> {
    let joined = line.replace(&format!("{SEPARATOR} "), "");
    let joined = joined.strip_suffix(SEPARATOR).unwrap_or(&joined);
    joined.split_whitespace().map(str::to_string).collect()
}

fn ngrams<S: AsRef<str>>(toks: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *out.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    out
}

fn check<A, B>(hyps: &[A], refs: &[B]) -> Result<(), EvalError> {
    if hyps.len() != refs.len() {
        return Err(EvalError::Misaligned {
            hyps: hyps.len(),
            refs: refs.len(),
        });
    }
    if hyps.is_empty() {
        return Err(EvalError::EmptyCorpus);
    }
    Ok(())
}

/// Corpus BLEU-4 in [0, 100] over tokenized sentences.
pub fn bleu<S: AsRef<str>, T: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<T>]) -> Result<f64, EvalError> {
    check(hyps, refs)?;
    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut c, mut r) = (0usize, 0usize);
    for (h, rf) in hyps.iter().zip(refs) {
        c += h.len();
        r += rf.len();
        for n in 1..=MAX_ORDER {
            let hc = ngrams(h, n);
            let rc = ngrams(rf, n);
            for (g, &k) in &hc {
                matches[n - 1] += k.min(rc.get(g).copied().unwrap_or(0));
                totals[n - 1] += k;
            }
        }
    }
    if c == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    let mut orders = 0;
    for n in 0..MAX_ORDER {
        if totals[n] == 0 {
            continue;
        }
        if matches[n] == 0 {
            return Ok(0.0);
        }
        log_sum += (matches[n] as f64 / totals[n] as f64).ln();
        orders += 1;
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    Ok(100.0 * bp * (log_sum / orders as f64).exp())
}

/// Total hypothesis tokens over total reference tokens.
pub fn length_ratio<S, T>(hyps: &[Vec<S>], refs: &[Vec<T>]) -> Result<f64, EvalError> {
    check(hyps, refs)?;
    let r: usize = refs.iter().map(Vec::len).sum();
    if r == 0 {
        return Err(EvalError::ZeroReferenceLength);
    }
    let c: usize = hyps.iter().map(Vec::len).sum();
    Ok(c as f64 / r as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BucketMode {
    /// Number of nodes with two or more parents.
    Reentrancy,
    /// Number of concepts (nodes).
    Size,
}

impl BucketMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BucketMode::Reentrancy => "reentrancy",
            BucketMode::Size => "size",
        }
    }

    /// `{0}, {1–2}, {3–5}, >5` for reentrancies; tens up to `>40` for size.
    pub fn default_edges(self) -> Vec<usize> {
        match self {
            BucketMode::Reentrancy => vec![0, 2, 5],
            BucketMode::Size => vec![10, 20, 30, 40],
        }
    }

    pub fn measure(self, g: &AmrGraph) -> usize {
        match self {
            BucketMode::Reentrancy => g.reentrancy_count(),
            BucketMode::Size => g.len(),
        }
    }
}

/// Parses comma-separated, strictly increasing inclusive upper edges.
pub fn parse_edges(text: &str) -> Result<Vec<usize>, EvalError> {
    let edges = text
        .split(',')
        .map(|s| s.trim().parse::<usize>().map_err(|_| EvalError::Buckets(text.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    validate_edges(&edges)?;
    Ok(edges)
}

fn validate_edges(edges: &[usize]) -> Result<(), EvalError> {
    if edges.is_empty() || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EvalError::Buckets(format!("{edges:?} must be non-empty and increasing")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketRow {
    pub bucket: String,
    pub lo: usize,
    /// Inclusive; `None` for the open last bucket.
    pub hi: Option<usize>,
    pub count: usize,
    pub bleu: Option<f64>,
    pub length_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketReport {
    pub mode: BucketMode,
    pub rows: Vec<BucketRow>,
}

impl BucketReport {
    pub fn total(&self) -> usize {
        self.rows.iter().map(|r| r.count).sum()
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let fmt = |v: Option<f64>, p: usize| v.map_or_else(|| "-".to_string(), |x| format!("{x:.p$}"));
        writeln!(out, "{:<12} {:>7} {:>8} {:>8}", self.mode.as_str(), "count", "bleu", "ratio").unwrap();
        for r in &self.rows {
            writeln!(
                out,
                "{:<12} {:>7} {:>8} {:>8}",
                r.bucket,
                r.count,
                fmt(r.bleu, 2),
                fmt(r.length_ratio, 3)
            )
            .unwrap();
        }
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let mut v = serde_json::to_value(r).expect("row serializes");
            v["mode"] = self.mode.as_str().into();
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("mode,bucket,count,bleu,length_ratio\n");
        let f = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{}",
                self.mode.as_str(),
                r.bucket,
                r.count,
                f(r.bleu),
                f(r.length_ratio)
            )
            .unwrap();
        }
        out
    }
}

/// Partitions the corpus by `mode` and scores each bucket.
pub fn bucket_report<S: AsRef<str>, T: AsRef<str>>(
    graphs: &[AmrGraph],
    hyps: &[Vec<S>],
    refs: &[Vec<T>],
    mode: BucketMode,
    edges: &[usize],
) -> Result<BucketReport, EvalError> {
    check(hyps, refs)?;
    if graphs.len() != hyps.len() {
        return Err(EvalError::Misaligned {
            hyps: hyps.len(),
            refs: graphs.len(),
        });
    }
    validate_edges(edges)?;
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); edges.len() + 1];
    for (i, g) in graphs.iter().enumerate() {
        let v = mode.measure(g);
        let b = edges.iter().position(|&e| v <= e).unwrap_or(edges.len());
        members[b].push(i);
    }
    let mut rows = Vec::with_capacity(members.len());
    for (b, idx) in members.iter().enumerate() {
        let lo = if b == 0 { 0 } else { edges[b - 1] + 1 };
        let hi = edges.get(b).copied();
        let bucket = match hi {
            Some(h) if h == lo => format!("{lo}"),
            Some(h) => format!("{lo}-{h}"),
            None => format!(">{}", edges[edges.len() - 1]),
        };
        let (bleu_v, ratio) = if idx.is_empty() {
            (None, None)
        } else {
            let hs: Vec<&[S]> = idx.iter().map(|&i| hyps[i].as_slice()).collect();
            let rs: Vec<&[T]> = idx.iter().map(|&i| refs[i].as_slice()).collect();
            let hs: Vec<Vec<&str>> = hs.iter().map(|h| h.iter().map(AsRef::as_ref).collect()).collect();
            let rs: Vec<Vec<&str>> = rs.iter().map(|r| r.iter().map(AsRef::as_ref).collect()).collect();
            (bleu(&hs, &rs).ok(), length_ratio(&hs, &rs).ok())
        };
        rows.push(BucketRow {
            bucket,
            lo,
            hi,
            count: idx.len(),
            bleu: bleu_v,
            length_ratio: ratio,
        });
    }
    Ok(BucketReport { mode, rows })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::penman::parse_penman;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Clipped n-gram counting by exhaustive position comparison.
    pub(crate) fn oracle_bleu(hyps: &[Vec<String>], refs: &[Vec<String>]) -> f64 {
        let count = |s: &[String], g: &[String]| {
            (0..(s.len() + 1).saturating_sub(g.len()))
                .filter(|&i| s[i..i + g.len()] == *g)
                .count()
        };
        let mut m = [0usize; 4];
        let mut t = [0usize; 4];
        let (mut c, mut r) = (0, 0);
        for (h, rf) in hyps.iter().zip(refs) {
            c += h.len();
            r += rf.len();
            for n in 1..=4 {
                if h.len() < n {
                    continue;
                }
                let mut done: Vec<&[String]> = Vec::new();
                for i in 0..=h.len() - n {
                    let g = &h[i..i + n];
                    t[n - 1] += 1;
                    if done.contains(&g) {
                        continue;
                    }
                    done.push(g);
                    m[n - 1] += count(h, g).min(count(rf, g));
                }
            }
        }
        if c == 0 {
            return 0.0;
        }
        let used: Vec<usize> = (0..4).filter(|&n| t[n] > 0).collect();
        if used.iter().any(|&n| m[n] == 0) {
            return 0.0;
        }
        let mut prod = 1.0f64;
        for &n in &used {
            prod *= m[n] as f64 / t[n] as f64;
        }
        let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
        100.0 * bp * prod.powf(1.0 / used.len() as f64)
    }

    pub(crate) fn random_corpus(rng: &mut ChaCha8Rng, size: usize) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
        let words = ["a", "b", "c", "d", "e"];
        let sent = |rng: &mut ChaCha8Rng| -> Vec<String> {
            let len = rng.gen_range(3..12);
            (0..len).map(|_| words[rng.gen_range(0..words.len())].to_string()).collect()
        };
        let refs: Vec<_> = (0..size).map(|_| sent(rng)).collect();
        let hyps: Vec<_> = refs
            .iter()
            .map(|r| {
                let mut h = r.clone();
                for w in h.iter_mut() {
                    if rng.gen_bool(0.2) {
                        *w = words[rng.gen_range(0..words.len())].to_string();
                    }
                }
                if rng.gen_bool(0.3) {
                    h.pop();
                }
                h
            })
            .collect();
        (hyps, refs)
    }

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn bleu_examples() {
        let h = vec![toks("the cat sat on the mat"), toks("a b c d")];
        assert_eq!(bleu(&h, &h).unwrap(), 100.0);
        assert_eq!(bleu(&[toks("x y z w")], &[toks("a b c d")]).unwrap(), 0.0);
        let (hyps, refs) = (
            vec![toks("the cat sat on a mat"), toks("there is a cat here"), toks("a dog")],
            vec![toks("the cat sat on the mat"), toks("a cat is here"), toks("the dog barks")],
        );
        let got = bleu(&hyps, &refs).unwrap();
        assert!((got - oracle_bleu(&hyps, &refs)).abs() < 1e-12);
        assert!(got > 0.0 && got < 100.0);
        assert_eq!(bleu::<String, String>(&[], &[]), Err(EvalError::EmptyCorpus));
        assert!(matches!(bleu(&h, &h[..1]), Err(EvalError::Misaligned { .. })));
    }

    #[test]
    fn bleu_matches_oracle_on_random_corpora() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let size = rng.gen_range(1..6);
            let (h, r) = random_corpus(&mut rng, size);
            assert!((bleu(&h, &r).unwrap() - oracle_bleu(&h, &r)).abs() < 1e-12);
        }
    }

    #[test]
    fn brevity_penalty_applies() {
        let r = vec![toks("a b c d e f g h")];
        let h = vec![toks("a b c d")];
        let want = 100.0 * (1.0 - 8.0 / 4.0f64).exp();
        assert!((bleu(&h, &r).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn bpe_pieces_are_rejoined() {
        assert_eq!(tokenize("sent@@ ence is here@@"), vec!["sentence", "is", "here"]);
    }

    #[test]
    fn length_ratio_examples() {
        let r = vec![toks("a b c"), toks("d e")];
        assert_eq!(length_ratio(&r, &r).unwrap(), 1.0);
        let empty: Vec<Vec<String>> = vec![vec![], vec![]];
        assert_eq!(length_ratio(&empty, &r).unwrap(), 0.0);
        assert_eq!(length_ratio(&r, &empty), Err(EvalError::ZeroReferenceLength));
    }

    proptest! {
        #[test]
        fn bleu_is_order_and_duplication_invariant(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (h, r) = random_corpus(&mut rng, 5);
            let base = bleu(&h, &r).unwrap();
            let mut idx: Vec<usize> = (0..5).collect();
            idx.reverse();
            idx.swap(0, 2);
            let ph: Vec<_> = idx.iter().map(|&i| h[i].clone()).collect();
            let pr: Vec<_> = idx.iter().map(|&i| r[i].clone()).collect();
            prop_assert!((bleu(&ph, &pr).unwrap() - base).abs() < 1e-9);
            let dh: Vec<_> = h.iter().chain(&h).cloned().collect();
            let dr: Vec<_> = r.iter().chain(&r).cloned().collect();
            prop_assert!((bleu(&dh, &dr).unwrap() - base).abs() < 1e-9);
            prop_assert_eq!(bleu(&h, &h).unwrap(), 100.0);
        }
    }

    fn chain(n: usize, reentrant: usize) -> AmrGraph {
        // n-node chain plus `reentrant` extra edges pointing back at early nodes
        let mut s = String::new();
        for i in 0..n {
            s.push_str(&format!("(v{i} / c{i} "));
            if i + 1 < n {
                s.push_str(":next ");
            }
        }
        for k in 0..reentrant {
            s.push_str(&format!(":back v{} ", k + 1));
        }
        s.push_str(&")".repeat(n));
        parse_penman(&s).unwrap()
    }

    #[test]
    fn buckets_partition_the_corpus() {
        let graphs: Vec<AmrGraph> = [(3, 0), (5, 1), (12, 2), (8, 4), (45, 7)]
            .iter()
            .map(|&(n, r)| chain(n, r))
            .collect();
        assert_eq!(graphs[3].reentrancy_count(), 4);
        let h: Vec<Vec<String>> = (0..5).map(|i| toks(&format!("w{i} x y z"))).collect();
        let rep = bucket_report(&graphs, &h, &h, BucketMode::Reentrancy, &BucketMode::Reentrancy.default_edges()).unwrap();
        let labels: Vec<_> = rep.rows.iter().map(|r| r.bucket.as_str()).collect();
        assert_eq!(labels, ["0", "1-2", "3-5", ">5"]);
        assert_eq!(rep.rows.iter().map(|r| r.count).collect::<Vec<_>>(), [1, 2, 1, 1]);
        assert_eq!(rep.total(), 5);
        assert_eq!(rep.rows[1].bleu, Some(100.0));
        let size = bucket_report(&graphs, &h, &h, BucketMode::Size, &BucketMode::Size.default_edges()).unwrap();
        assert_eq!(size.rows.iter().map(|r| r.count).collect::<Vec<_>>(), [3, 1, 0, 0, 1]);
        assert_eq!(size.rows[2].bleu, None);
        assert_eq!(size.rows[4].bucket, ">40");
        assert!(size.to_csv().starts_with("mode,bucket,count,bleu,length_ratio\nsize,0-10,3,100,1\n"));
        assert_eq!(size.to_jsonl().lines().count(), 5);
        assert!(size.to_table().contains(">40"));
    }

    #[test]
    fn reentrancy_free_corpus_fills_one_bucket() {
        let graphs: Vec<AmrGraph> = (1..6).map(|n| chain(n, 0)).collect();
        let h: Vec<Vec<String>> = (0..5).map(|_| toks("a b")).collect();
        let rep = bucket_report(&graphs, &h, &h, BucketMode::Reentrancy, &[0, 2, 5]).unwrap();
        assert_eq!(rep.rows.iter().filter(|r| r.count > 0).count(), 1);
    }

    #[test]
    fn bucket_errors() {
        let g = vec![chain(2, 0)];
        let h = vec![toks("a")];
        assert!(bucket_report(&g, &h, &h, BucketMode::Size, &[3, 3]).is_err());
        assert!(bucket_report(&[], &h, &h, BucketMode::Size, &[3]).is_err());
        assert_eq!(parse_edges("0, 2,5").unwrap(), vec![0, 2, 5]);
        assert!(parse_edges("2,1").is_err());
        assert!(parse_edges("a").is_err());
    }
}
