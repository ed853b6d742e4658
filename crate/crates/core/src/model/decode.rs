
use super::{argmax, Batch, Model, ModelError, Structure};
use crate::numerics::{Binder, Tensor};
use crate::pipeline::{BOS, EOS};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Greedy,
    /// Beam search of the given width; finished hypotheses are ranked by
    /// total log-probability divided by their length (EOS included).
    Beam(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenerateOptions {
    pub strategy: Strategy,
    /// Maximum number of generated tokens, EOS included.
    pub max_len: usize,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        GenerateOptions {
            strategy: Strategy::Greedy,
            max_len: 100,
        }
    }
}

struct Source<'a> {
    memory: Tensor,
    mask: &'a [bool],
    len: usize,
}

fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    row.iter().map(|z| z - lse).collect()
}

fn next_log_probs(model: &Model, src: &Source<'_>, prefix: &[usize]) -> Result<Vec<f64>, ModelError> {
    let mut b = Binder::new(model.params());
    let memory = b.graph.input(src.memory.clone());
    let mask = vec![true; prefix.len()];
    let logits = model.decode_on(&mut b, memory, src.mask, src.len, prefix, &mask, prefix.len(), None)?;
    let v = b.graph.value(logits);
    Ok(log_softmax(v.row(v.rows() - 1)))
}

fn greedy(model: &Model, src: &Source<'_>, max_len: usize) -> Result<Vec<usize>, ModelError> {
    let mut prefix = vec![BOS];
    for _ in 0..max_len {
        let t = argmax(&next_log_probs(model, src, &prefix)?);
        if t == EOS {
            break;
        }
        prefix.push(t);
    }
    prefix.remove(0);
    Ok(prefix)
}

struct Candidate {
    score: f64,
    step: f64,
    beam: usize,
    token: usize,
}

fn beam(model: &Model, src: &Source<'_>, width: usize, max_len: usize) -> Result<Vec<usize>, ModelError> {
    let mut beams: Vec<(Vec<usize>, f64)> = vec![(vec![BOS], 0.0)];
    let mut finished: Vec<(Vec<usize>, f64)> = Vec::new();
    for _ in 0..max_len {
        if beams.is_empty() || finished.len() >= width {
            break;
        }
        let mut cands = Vec::new();
        for (bi, (prefix, cum)) in beams.iter().enumerate() {
            let lp = next_log_probs(model, src, prefix)?;
            cands.extend(lp.iter().enumerate().map(|(token, &step)| Candidate {
                score: cum + step,
                step,
                beam: bi,
                token,
            }));
        }
        cands.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then(b.step.total_cmp(&a.step))
                .then(a.beam.cmp(&b.beam))
                .then(a.token.cmp(&b.token))
        });
        let mut next = Vec::with_capacity(width);
        for c in cands.into_iter().take(width - finished.len()) {
            let mut tokens = beams[c.beam].0.clone();
            tokens.push(c.token);
            if c.token == EOS {
                let len = (tokens.len() - 1) as f64;
                finished.push((tokens, c.score / len));
            } else {
                next.push((tokens, c.score));
            }
        }
        beams = next;
    }
    for (tokens, cum) in beams {
        let len = (tokens.len() - 1).max(1) as f64;
        finished.push((tokens, cum / len));
    }
    let best = finished
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| a.1.total_cmp(&b.1).then(j.cmp(i)))
        .map(|(i, _)| i)
        .expect("at least one hypothesis");
    let mut tokens = finished.swap_remove(best).0;
    tokens.remove(0);
    if tokens.last() == Some(&EOS) {
        tokens.pop();
    }
    Ok(tokens)
}

/// Decodes every sequence of `batch`; the returned ids exclude BOS and EOS.
pub fn generate(
    model: &Model,
    batch: &Batch,
    structure: Structure,
    opts: GenerateOptions,
) -> Result<Vec<Vec<usize>>, ModelError> {
    if let Strategy::Beam(0) = opts.strategy {
        return Err(ModelError::BeamWidth);
    }
    let max_len = opts.max_len.min(model.config().max_len.saturating_sub(1));
    let memory = model.encode(batch, structure)?;
    let (n, d) = (batch.src_len, model.config().d_model);
    (0..batch.size)
        .map(|s| {
            let rows = memory.data()[s * n * d..(s + 1) * n * d].to_vec();
            let src = Source {
                memory: Tensor::matrix(n, d, rows),
                mask: &batch.src_mask[s * n..(s + 1) * n],
                len: n,
            };
            match opts.strategy {
                Strategy::Greedy => greedy(model, &src, max_len),
                Strategy::Beam(k) => beam(model, &src, k, max_len),
            }
        })
        .collect()
}

