use std::collections::HashMap;

use super::ModelError;
use crate::pipeline::{Record, BOS, EOS, LABEL_NONE, LABEL_PAD, PAD};

/// Path tables of a batch with distinct paths pulled out.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchPaths {
    pub max_path_len: usize,
    /// `B × n × n × max_path_len` label ids, PAD-filled.
    pub ids: Vec<usize>,
    /// Distinct label sequences in first-seen order.
    pub unique: Vec<Vec<usize>>,
    /// For pair `(s, i, j)` at `s·n·n + i·n + j`, its index in `unique`.
    pub pair_index: Vec<usize>,
}

/// Padded model inputs.
///
/// Sequences are right-padded with PAD to the longest in the batch; masks
/// are `true` on real positions. Decoder inputs start with BOS and the gold
/// outputs end with EOS. Pairs involving a padded position get the `None`
/// path.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub size: usize,
    pub src_len: usize,
    pub src: Vec<usize>,
    pub src_mask: Vec<bool>,
    pub paths: Option<BatchPaths>,
    pub tgt_len: usize,
    pub tgt_in: Vec<usize>,
    pub tgt_mask: Vec<bool>,
    pub tgt_out: Vec<Option<usize>>,
}

impl Batch {
    pub fn new(records: &[&Record]) -> Result<Self, ModelError> {
        if records.is_empty() {
            return Err(ModelError::EmptyBatch);
        }
        if records.iter().any(|r| r.src.is_empty()) {
            return Err(ModelError::EmptySource);
        }
        let with_paths = records.iter().filter(|r| !r.paths.is_empty()).count();
        if with_paths != 0 && with_paths != records.len() {
            return Err(ModelError::Shape("some records lack path tables".into()));
        }
        let size = records.len();
        let n = records.iter().map(|r| r.src.len()).max().unwrap_or(0);
        let m = records.iter().map(|r| r.tgt.len() + 1).max().unwrap_or(1);

        let mut src = Vec::with_capacity(size * n);
        let mut src_mask = Vec::with_capacity(size * n);
        let mut tgt_in = Vec::with_capacity(size * m);
        let mut tgt_mask = Vec::with_capacity(size * m);
        let mut tgt_out = Vec::with_capacity(size * m);
        for r in records {
            let k = r.src.len();
            src.extend(&r.src);
            src.extend(std::iter::repeat_n(PAD, n - k));
            src_mask.extend((0..n).map(|i| i < k));
            let t = r.tgt.len() + 1;
            tgt_in.push(BOS);
            tgt_in.extend(&r.tgt);
            tgt_in.extend(std::iter::repeat_n(PAD, m - t));
            tgt_mask.extend((0..m).map(|i| i < t));
            tgt_out.extend(r.tgt.iter().map(|&x| Some(x)));
            tgt_out.push(Some(EOS));
            tgt_out.extend(std::iter::repeat_n(None, m - t));
        }

        let paths = if with_paths == 0 {
            None
        } else {
            Some(collect_paths(records, n)?)
        };
        Ok(Batch {
            size,
            src_len: n,
            src,
            src_mask,
            paths,
            tgt_len: m,
            tgt_in,
            tgt_mask,
            tgt_out,
        })
    }

    pub fn from_records(records: &[Record]) -> Result<Self, ModelError> {
        let refs: Vec<&Record> = records.iter().collect();
        Batch::new(&refs)
    }

    /// Number of real target positions, EOS included.
    pub fn target_tokens(&self) -> usize {
        self.tgt_out.iter().filter(|t| t.is_some()).count()
    }
}

fn collect_paths(records: &[&Record], n: usize) -> Result<BatchPaths, ModelError> {
    let mut max_path_len = 0;
    for r in records {
        let k = r.src.len();
        if r.paths.len() % (k * k) != 0 || r.paths.is_empty() {
            return Err(ModelError::Shape(format!(
                "path table of {} ids does not fit {k} tokens",
                r.paths.len()
            )));
        }
        let l = r.paths.len() / (k * k);
        if max_path_len != 0 && l != max_path_len {
            return Err(ModelError::Shape("records disagree on the path length".into()));
        }
        max_path_len = l;
    }
    let l = max_path_len;
    let mut ids = Vec::with_capacity(records.len() * n * n * l);
    let mut unique: Vec<Vec<usize>> = Vec::new();
    let mut seen: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut pair_index = Vec::with_capacity(records.len() * n * n);
    let none = {
        let mut p = vec![LABEL_NONE];
        p.resize(l, LABEL_PAD);
        p
    };
    for r in records {
        let k = r.src.len();
        for i in 0..n {
            for j in 0..n {
                let padded = if i < k && j < k {
                    &r.paths[(i * k + j) * l..(i * k + j + 1) * l]
                } else {
                    &none[..]
                };
                ids.extend_from_slice(padded);
                let mut path: Vec<usize> =
                    padded.iter().copied().take_while(|&x| x != LABEL_PAD).collect();
                if path.is_empty() {
                    path.push(LABEL_NONE);
                }
                let next = unique.len();
                let idx = *seen.entry(path.clone()).or_insert(next);
                if idx == next {
                    unique.push(path);
                }
                pair_index.push(idx);
            }
        }
    }
    Ok(BatchPaths {
        max_path_len,
        ids,
        unique,
        pair_index,
    })
}
