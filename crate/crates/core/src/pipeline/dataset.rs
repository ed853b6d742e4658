use serde::{Deserialize, Serialize};

use crate::penman::{simplify, AmrEntry, AmrGraph, SimplifyOptions};

use super::{
    build_feature_vocab, build_label_vocab, build_vocab, extend_graph_subwords, extract_paths,
    linearize_concepts, linearize_full, mask_indirect, segment_nodes, train_bpe, BpeModel,
    PathMatrix, PipelineError, Vocabulary, LABEL_PAD,
};

/// One line of a preprocessed dataset file.
///
/// `paths` is the row-major n×n path table, each path padded with the PAD
/// label id to the dataset's maximum path length; it is empty in baseline
/// records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub src: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub paths: Vec<usize>,
    pub tgt: Vec<usize>,
}

pub fn write_records(records: &[Record]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn read_records(text: &str) -> Result<Vec<Record>, PipelineError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| PipelineError::Record {
                line: i + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PreprocessOptions {
    pub simplify: SimplifyOptions,
    pub bpe_merges: usize,
    pub max_path_len: usize,
    pub vocab_size: Option<usize>,
    pub feature_vocab_size: usize,
    pub mask_indirect: bool,
    pub lowercase: bool,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            simplify: SimplifyOptions::default(),
            bpe_merges: 10_000,
            max_path_len: 4,
            vocab_size: None,
            feature_vocab_size: 20_000,
            mask_indirect: false,
            lowercase: true,
        }
    }
}

/// Learned preprocessing state, shared by every split of one experiment.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub bpe: BpeModel,
    pub vocab: Vocabulary,
    pub labels: Vocabulary,
    pub features: Vocabulary,
}

/// Token-level view of one graph/sentence pair before id mapping.
#[derive(Debug, Clone)]
pub struct PreparedExample {
    pub graph: AmrGraph,
    pub baseline: Vec<String>,
    pub concepts: Vec<String>,
    pub paths: PathMatrix,
    pub target: Vec<String>,
}

impl PreparedExample {
    pub fn new(
        graph: &AmrGraph,
        sentence: &str,
        bpe: &BpeModel,
        opts: &PreprocessOptions,
    ) -> Result<Self, PipelineError> {
        let g = simplify(graph, opts.simplify);
        let baseline = bpe.apply_all(&linearize_full(&g));
        let seg = segment_nodes(&g, bpe);
        let ext = extend_graph_subwords(&g, &seg)?;
        let (concepts, order) = linearize_concepts(&ext);
        let mut paths = extract_paths(&ext, &order, opts.max_path_len)?;
        if opts.mask_indirect {
            paths = mask_indirect(&paths, &ext);
        }
        let words = target_words(sentence, opts.lowercase);
        Ok(PreparedExample {
            graph: g,
            baseline,
            concepts,
            paths,
            target: bpe.apply_all(&words),
        })
    }
}

fn target_words(sentence: &str, lowercase: bool) -> Vec<String> {
    sentence
        .split_whitespace()
        .map(|w| if lowercase { w.to_lowercase() } else { w.to_string() })
        .collect()
}

/// Maps a path table to label ids, padding each path to `max_len`.
pub fn encode_paths(pm: &PathMatrix, labels: &Vocabulary, max_len: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(pm.n() * pm.n() * max_len);
    for entry in pm.entries() {
        let start = out.len();
        out.extend(entry.iter().take(max_len).map(|l| labels.id(l)));
        out.resize(start + max_len, LABEL_PAD);
    }
    out
}

#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub artifacts: Artifacts,
    pub baseline: Vec<Record>,
    pub structural: Vec<Record>,
    /// Lowercased, whitespace-tokenized reference sentences.
    pub references: Vec<String>,
    pub graphs: Vec<AmrGraph>,
}

/// Runs the whole pipeline over a corpus. With `reuse`, the given BPE model
/// and vocabularies are applied instead of being learned.
pub fn preprocess(
    entries: &[AmrEntry],
    opts: &PreprocessOptions,
    reuse: Option<Artifacts>,
) -> Result<Preprocessed, PipelineError> {
    if entries.is_empty() {
        return Err(PipelineError::EmptyCorpus);
    }
    let sentences = entries
        .iter()
        .map(|e| {
            e.sentence
                .as_deref()
                .ok_or(PipelineError::MissingSentence { line: e.line })
        })
        .collect::<Result<Vec<_>, _>>()?;

    let bpe = match &reuse {
        Some(a) => a.bpe.clone(),
        None => {
            let mut corpus: Vec<Vec<String>> = Vec::with_capacity(entries.len() * 2);
            for (e, s) in entries.iter().zip(&sentences) {
                corpus.push(linearize_full(&simplify(&e.graph, opts.simplify)));
                corpus.push(target_words(s, opts.lowercase));
            }
            train_bpe(&corpus, opts.bpe_merges)?
        }
    };

    let examples = entries
        .iter()
        .zip(&sentences)
        .map(|(e, s)| PreparedExample::new(&e.graph, s, &bpe, opts))
        .collect::<Result<Vec<_>, _>>()?;

    let artifacts = match reuse {
        Some(a) => a,
        None => {
            let mut sides: Vec<Vec<String>> = Vec::with_capacity(examples.len() * 3);
            for ex in &examples {
                sides.push(ex.baseline.clone());
                sides.push(ex.concepts.clone());
                sides.push(ex.target.clone());
            }
            let vocab = build_vocab(&sides, opts.vocab_size);
            let labels = build_label_vocab(
                examples
                    .iter()
                    .flat_map(|ex| ex.paths.entries().iter().flatten().map(String::as_str)),
            );
            let keys: Vec<String> = examples
                .iter()
                .flat_map(|ex| ex.paths.entries().iter().map(|p| p.join(" ")))
                .collect();
            let features =
                build_feature_vocab(keys.iter().map(String::as_str), opts.feature_vocab_size);
            Artifacts {
                bpe,
                vocab,
                labels,
                features,
            }
        }
    };

    let mut baseline = Vec::with_capacity(examples.len());
    let mut structural = Vec::with_capacity(examples.len());
    for ex in &examples {
        let tgt = artifacts.vocab.encode(&ex.target);
        baseline.push(Record {
            src: artifacts.vocab.encode(&ex.baseline),
            paths: Vec::new(),
            tgt: tgt.clone(),
        });
        structural.push(Record {
            src: artifacts.vocab.encode(&ex.concepts),
            paths: encode_paths(&ex.paths, &artifacts.labels, opts.max_path_len),
            tgt,
        });
    }
    let references = sentences
        .iter()
        .map(|s| target_words(s, opts.lowercase).join(" "))
        .collect();
    Ok(Preprocessed {
        artifacts,
        baseline,
        structural,
        references,
        graphs: examples.into_iter().map(|e| e.graph).collect(),
    })
}
