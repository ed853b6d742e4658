use std::collections::HashMap;

use super::PipelineError;

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const EOS: usize = 3;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";

/// Reserved ids of the path-label vocabulary.
pub const LABEL_PAD: usize = 0;
pub const LABEL_UNK: usize = 1;
pub const LABEL_NONE: usize = 2;

/// Id 0 of the path-feature vocabulary.
pub const FEATURE_UNK: usize = 0;

/// Ordered token list; line number in the vocabulary file is the id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    unk: usize,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>, unk: usize) -> Result<Self, PipelineError> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(PipelineError::Vocab(format!("duplicate token {t:?}")));
            }
        }
        if unk >= tokens.len() {
            return Err(PipelineError::Vocab("vocabulary lacks its UNK entry".into()));
        }
        Ok(Vocabulary { tokens, index, unk })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn unk_id(&self) -> usize {
        self.unk
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, falling back to UNK.
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(self.unk)
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(UNK_TOKEN, String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, toks: &[S]) -> Vec<usize> {
        toks.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    /// Reads a token vocabulary (`<unk>` at id 1).
    pub fn from_text(text: &str) -> Result<Self, PipelineError> {
        Self::from_text_with_unk(text, UNK)
    }

    pub fn from_text_with_unk(text: &str, unk: usize) -> Result<Self, PipelineError> {
        Self::from_tokens(text.lines().map(str::to_string).collect(), unk)
    }
}

fn ranked<'a, I>(items: I, reserved: &[&str], unk: usize, max_size: Option<usize>) -> Vocabulary
where
    I: IntoIterator<Item = &'a str>,
{
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in items {
        if !reserved.contains(&t) {
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    if let Some(m) = max_size {
        ranked.truncate(m);
    }
    let tokens = reserved
        .iter()
        .map(|s| s.to_string())
        .chain(ranked.into_iter().map(|(t, _)| t.to_string()))
        .collect();
    Vocabulary::from_tokens(tokens, unk).expect("reserved and ranked tokens are distinct")
}

/// Shared source/target vocabulary: PAD, UNK, BOS, EOS, then tokens by
/// descending frequency (ties lexicographic). `max_size` caps the
/// non-reserved part.
pub fn build_vocab<S: AsRef<str>>(corpora: &[Vec<S>], max_size: Option<usize>) -> Vocabulary {
    ranked(
        corpora.iter().flatten().map(AsRef::as_ref),
        &[PAD_TOKEN, UNK_TOKEN, BOS_TOKEN, EOS_TOKEN],
        UNK,
        max_size,
    )
}

/// Vocabulary of direction-annotated path labels: PAD, UNK, None, then
/// labels by frequency.
pub fn build_label_vocab<'a, I>(labels: I) -> Vocabulary
where
    I: IntoIterator<Item = &'a str>,
{
    ranked(labels, &[PAD_TOKEN, UNK_TOKEN, super::NONE_LABEL], LABEL_UNK, None)
}

/// Whole-path string features, UNK first, capped at `max_size` entries
/// besides UNK.
pub fn build_feature_vocab<'a, I>(keys: I, max_size: usize) -> Vocabulary
where
    I: IntoIterator<Item = &'a str>,
{
    ranked(keys, &[UNK_TOKEN], FEATURE_UNK, Some(max_size))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frequency_order_with_reserved_prefix() {
        let v = build_vocab(&[vec!["a", "a", "b"]], None);
        assert_eq!(v.tokens(), ["<pad>", "<unk>", "<s>", "</s>", "a", "b"]);
    }

    #[test]
    fn ties_are_lexicographic_and_cap_applies() {
        let toks: Vec<String> = (0..10)
            .flat_map(|i| std::iter::repeat_n(format!("t{i}"), 10 - i))
            .collect();
        let v = build_vocab(&[toks], Some(5));
        assert_eq!(v.len(), 9);
        assert_eq!(&v.tokens()[4..], ["t0", "t1", "t2", "t3", "t4"]);
        assert_eq!(v.id("t9"), UNK);
        let tie = build_vocab(&[vec!["b", "a"]], None);
        assert_eq!(&tie.tokens()[4..], ["a", "b"]);
    }

    #[test]
    fn shared_between_sides() {
        let src = vec!["boy", "want"];
        let tgt = vec!["the", "boy", "wants"];
        let v = build_vocab(&[src.clone(), tgt.clone()], None);
        assert!(src.iter().chain(&tgt).all(|t| v.get(t).is_some()));
    }

    #[test]
    fn file_round_trip() {
        let v = build_vocab(&[vec!["x", "y", "y"]], None);
        assert_eq!(Vocabulary::from_text(&v.to_text()).unwrap(), v);
        assert!(Vocabulary::from_text("a\na\n").is_err());
        let l = build_label_vocab([":ARG0↓", ":ARG0↓", ":mod↑"]);
        assert_eq!(l.id("None"), LABEL_NONE);
        assert_eq!(l.id(":ARG0↓"), 3);
        let f = build_feature_vocab(["a b", "a b", "c"], 1);
        assert_eq!(f.tokens(), ["<unk>", "a b"]);
        assert_eq!(f.id("c"), FEATURE_UNK);
    }
}
