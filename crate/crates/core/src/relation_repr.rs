//! Maps a structural label path to the relation vector used in
//! structure-aware attention.
//!
//! Five interchangeable strategies are provided:
//!
//! * `feature`: the whole path is one string feature with its own learned
//!   vector; paths outside the feature vocabulary share the UNK vector.
//! * `avg` / `sum`: mean or sum of the label embeddings.
//! * `sa`: label + position embeddings, one self-attention layer, then an
//!   attentive pooling `α = softmax(w2 · tanh(W1 hᵀ))`, `r = Σ α_i h_i`.
//! * `cnn`: the path is right-padded with the PAD label to the kernel width
//!   and a single width-`kernel` convolution window with ReLU gives `r`.
//!
//! Paths are sequences of label ids (PAD removed). Vectors have the
//! per-head attention size `d_z`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::numerics::{init_params, Binder, NumericsError, ParamId, ParamStore, Tensor, Var};
use crate::pipeline::{Vocabulary, FEATURE_UNK, LABEL_NONE, LABEL_PAD};

#[derive(Debug, Error)]
pub enum RelationError {
    #[error("empty path")]
    EmptyPath,
    #[error("path of length {len} exceeds the maximum {max}")]
    PathTooLong { len: usize, max: usize },
    #[error("label id {0} out of range")]
    LabelOutOfRange(usize),
    #[error("encoder is {actual}, not {expected}")]
    WrongVariant {
        expected: RelationMethod,
        actual: RelationMethod,
    },
    #[error("unknown relation method {0:?} (expected feature, avg, sum, sa or cnn)")]
    UnknownMethod(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RelationMethod {
    Feature,
    Avg,
    Sum,
    Sa,
    Cnn,
}

impl RelationMethod {
    pub const ALL: [RelationMethod; 5] = [
        RelationMethod::Feature,
        RelationMethod::Avg,
        RelationMethod::Sum,
        RelationMethod::Sa,
        RelationMethod::Cnn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RelationMethod::Feature => "feature",
            RelationMethod::Avg => "avg",
            RelationMethod::Sum => "sum",
            RelationMethod::Sa => "sa",
            RelationMethod::Cnn => "cnn",
        }
    }
}

impl fmt::Display for RelationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelationMethod {
    type Err = RelationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RelationMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| RelationError::UnknownMethod(s.to_string()))
    }
}

/// Sizes needed to allocate an encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationDims {
    /// Output size, equal to the label embedding size.
    pub dim: usize,
    pub num_labels: usize,
    pub num_features: usize,
    pub max_path_len: usize,
    /// Hidden size of the attentive pooling in `sa`.
    pub d_w: usize,
    /// Convolution width in `cnn`.
    pub kernel: usize,
}

#[derive(Debug, Clone)]
enum Slots {
    Feature {
        table: ParamId,
    },
    Pool {
        labels: ParamId,
        mean: bool,
    },
    Sa {
        labels: ParamId,
        pos: ParamId,
        wq: ParamId,
        wk: ParamId,
        wv: ParamId,
        w1: ParamId,
        w2: ParamId,
    },
    Cnn {
        labels: ParamId,
        kernel: ParamId,
        bias: ParamId,
    },
}

/// One relation strategy plus the ids of its parameters in a [`ParamStore`].
/// A single encoder serves every head and layer.
#[derive(Debug, Clone)]
pub struct RelationEncoder {
    method: RelationMethod,
    dims: RelationDims,
    slots: Slots,
    features: HashMap<Vec<usize>, usize>,
}

impl RelationEncoder {
    /// Registers this method's parameters under the `rel.` prefix.
    pub fn new(
        method: RelationMethod,
        dims: RelationDims,
        store: &mut ParamStore,
        seed: u64,
    ) -> Result<Self, RelationError> {
        if dims.dim == 0 || dims.max_path_len == 0 {
            return Err(RelationError::Config("dimensions must be positive".into()));
        }
        if dims.num_labels <= LABEL_NONE {
            return Err(RelationError::Config("label vocabulary is empty".into()));
        }
        let d = dims.dim;
        let mut k = 0u64;
        let mut add = |store: &mut ParamStore, name: &str, shape: &[usize]| -> Result<ParamId, RelationError> {
            k += 1;
            let t = init_params(shape, seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k))?;
            Ok(store.add(format!("rel.{name}"), t))
        };
        let slots = match method {
            RelationMethod::Feature => {
                if dims.num_features == 0 {
                    return Err(RelationError::Config("feature vocabulary is empty".into()));
                }
                Slots::Feature {
                    table: add(store, "features", &[dims.num_features, d])?,
                }
            }
            RelationMethod::Avg | RelationMethod::Sum => Slots::Pool {
                labels: add(store, "labels", &[dims.num_labels, d])?,
                mean: method == RelationMethod::Avg,
            },
            RelationMethod::Sa => {
                if dims.d_w == 0 {
                    return Err(RelationError::Config("d_w must be positive".into()));
                }
                Slots::Sa {
                    labels: add(store, "labels", &[dims.num_labels, d])?,
                    pos: add(store, "sa.pos", &[dims.max_path_len, d])?,
                    wq: add(store, "sa.wq", &[d, d])?,
                    wk: add(store, "sa.wk", &[d, d])?,
                    wv: add(store, "sa.wv", &[d, d])?,
                    w1: add(store, "sa.w1", &[dims.d_w, d])?,
                    w2: add(store, "sa.w2", &[1, dims.d_w])?,
                }
            }
            RelationMethod::Cnn => {
                if dims.kernel < dims.max_path_len {
                    return Err(RelationError::Config(format!(
                        "kernel width {} is shorter than the maximum path length {}",
                        dims.kernel, dims.max_path_len
                    )));
                }
                let labels = add(store, "labels", &[dims.num_labels, d])?;
                let kernel = add(store, "cnn.kernel", &[dims.kernel * d, d])?;
                let bias = store.add("rel.cnn.bias", Tensor::zeros(&[1, d]));
                Slots::Cnn {
                    labels,
                    kernel,
                    bias,
                }
            }
        };
        Ok(RelationEncoder {
            method,
            dims,
            slots,
            features: HashMap::new(),
        })
    }

    /// Installs the feature vocabulary: each entry is a space-joined label
    /// path; entries with labels unknown to `labels` are unreachable.
    pub fn with_features(mut self, features: &Vocabulary, labels: &Vocabulary) -> Self {
        self.features = features
            .tokens()
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != FEATURE_UNK)
            .filter_map(|(i, key)| {
                let ids: Option<Vec<usize>> = key.split(' ').map(|l| labels.get(l)).collect();
                ids.map(|ids| (ids, i))
            })
            .collect();
        self
    }

    /// Feature id for a path; UNK when not in the vocabulary.
    pub fn feature_id(&self, path: &[usize]) -> usize {
        self.features
            .get(path)
            .copied()
            .filter(|&i| i < self.dims.num_features)
            .unwrap_or(FEATURE_UNK)
    }

    /// Maps a path key directly to a feature id (used when the feature
    /// vocabulary is managed outside a label vocabulary).
    pub fn set_feature(&mut self, path: Vec<usize>, id: usize) {
        self.features.insert(path, id);
    }

    pub fn method(&self) -> RelationMethod {
        self.method
    }

    pub fn dims(&self) -> &RelationDims {
        &self.dims
    }

    fn validate(&self, path: &[usize]) -> Result<(), RelationError> {
        if path.is_empty() {
            return Err(RelationError::EmptyPath);
        }
        if path.len() > self.dims.max_path_len {
            return Err(RelationError::PathTooLong {
                len: path.len(),
                max: self.dims.max_path_len,
            });
        }
        if let Some(&bad) = path.iter().find(|&&l| l >= self.dims.num_labels) {
            return Err(RelationError::LabelOutOfRange(bad));
        }
        Ok(())
    }

    /// Relation vectors for `paths`, one row each, recorded on the tape.
    pub fn encode_on(&self, b: &mut Binder<'_>, paths: &[Vec<usize>]) -> Result<Var, RelationError> {
        for p in paths {
            self.validate(p)?;
        }
        if paths.is_empty() {
            return Err(RelationError::EmptyPath);
        }
        Ok(match &self.slots {
            Slots::Feature { table } => {
                let t = b.p(*table);
                let ids = paths.iter().map(|p| self.feature_id(p)).collect();
                b.graph.gather_rows(t, ids)
            }
            Slots::Pool { labels, mean } => {
                let t = b.p(*labels);
                b.graph.pool_rows(t, paths.to_vec(), *mean)
            }
            Slots::Sa {
                labels,
                pos,
                wq,
                wk,
                wv,
                w1,
                w2,
            } => {
                let (t, pe) = (b.p(*labels), b.p(*pos));
                let (wq, wk, wv, w1, w2) = (b.p(*wq), b.p(*wk), b.p(*wv), b.p(*w1), b.p(*w2));
                let scale = 1.0 / (self.dims.dim as f64).sqrt();
                let mut rows = Vec::with_capacity(paths.len());
                for p in paths {
                    let g = &mut b.graph;
                    let emb = g.gather_rows(t, p.clone());
                    let pos_rows = g.slice(pe, 0, p.len(), 0, self.dims.dim);
                    let e = g.add(emb, pos_rows);
                    let q = g.matmul(e, wq);
                    let k = g.matmul(e, wk);
                    let v = g.matmul(e, wv);
                    let s = g.matmul_t(q, k);
                    let s = g.scale(s, scale);
                    let a = g.softmax_rows(s, None)?;
                    let h = g.matmul(a, v);
                    let hidden = g.matmul_t(w1, h);
                    let hidden = g.tanh(hidden);
                    let score = g.matmul(w2, hidden);
                    let alpha = g.softmax_rows(score, None)?;
                    rows.push(g.matmul(alpha, h));
                }
                b.graph.concat_rows(&rows)
            }
            Slots::Cnn {
                labels,
                kernel,
                bias,
            } => {
                let (t, k, bias) = (b.p(*labels), b.p(*kernel), b.p(*bias));
                let padded = paths
                    .iter()
                    .map(|p| {
                        let mut q = p.clone();
                        q.resize(self.dims.kernel, LABEL_PAD);
                        q
                    })
                    .collect();
                let g = &mut b.graph;
                let windows = g.gather_flat(t, padded);
                let pre = g.matmul(windows, k);
                let pre = g.add_row(pre, bias);
                g.relu(pre)
            }
        })
    }

    /// Encodes one path outside any model forward pass.
    pub fn encode(&self, store: &ParamStore, path: &[usize]) -> Result<Vec<f64>, RelationError> {
        let mut b = Binder::new(store);
        let v = self.encode_on(&mut b, &[path.to_vec()])?;
        Ok(b.graph.value(v).data().to_vec())
    }

    /// Attentive-pooling weights α of the `sa` method for one path.
    pub fn sa_weights(&self, store: &ParamStore, path: &[usize]) -> Result<Vec<f64>, RelationError> {
        self.expect(RelationMethod::Sa)?;
        self.validate(path)?;
        let Slots::Sa { labels, pos, wq, wk, wv, w1, w2 } = &self.slots else {
            unreachable!()
        };
        let d = self.dims.dim;
        let get = |id: &ParamId| store.get(*id);
        let k = path.len();
        let mut e = Vec::with_capacity(k * d);
        for (i, &l) in path.iter().enumerate() {
            let lr = get(labels).row(l);
            let pr = get(pos).row(i);
            e.extend(lr.iter().zip(pr).map(|(a, b)| a + b));
        }
        let e = Tensor::matrix(k, d, e);
        let q = e.matmul(get(wq))?;
        let kk = e.matmul(get(wk))?;
        let v = e.matmul(get(wv))?;
        let mut s = q.matmul(&kk.transpose())?;
        s.data_mut().iter_mut().for_each(|x| *x /= (d as f64).sqrt());
        let mut a = Vec::with_capacity(k * k);
        for i in 0..k {
            a.extend(crate::numerics::softmax(s.row(i))?);
        }
        let h = Tensor::matrix(k, k, a).matmul(&v)?;
        let mut hidden = get(w1).matmul(&h.transpose())?;
        hidden.data_mut().iter_mut().for_each(|x| *x = x.tanh());
        let score = get(w2).matmul(&hidden)?;
        Ok(crate::numerics::softmax(score.data())?)
    }

    fn expect(&self, m: RelationMethod) -> Result<(), RelationError> {
        if self.method != m {
            return Err(RelationError::WrongVariant {
                expected: m,
                actual: self.method,
            });
        }
        Ok(())
    }
}

pub fn encode_feature(
    path: &[usize],
    enc: &RelationEncoder,
    store: &ParamStore,
) -> Result<Vec<f64>, RelationError> {
    enc.expect(RelationMethod::Feature)?;
    enc.encode(store, path)
}

pub fn encode_avg(
    path: &[usize],
    enc: &RelationEncoder,
    store: &ParamStore,
) -> Result<Vec<f64>, RelationError> {
    enc.expect(RelationMethod::Avg)?;
    enc.encode(store, path)
}

pub fn encode_sum(
    path: &[usize],
    enc: &RelationEncoder,
    store: &ParamStore,
) -> Result<Vec<f64>, RelationError> {
    enc.expect(RelationMethod::Sum)?;
    enc.encode(store, path)
}

pub fn encode_sa(
    path: &[usize],
    enc: &RelationEncoder,
    store: &ParamStore,
) -> Result<Vec<f64>, RelationError> {
    enc.expect(RelationMethod::Sa)?;
    enc.encode(store, path)
}

pub fn encode_cnn(
    path: &[usize],
    enc: &RelationEncoder,
    store: &ParamStore,
) -> Result<Vec<f64>, RelationError> {
    enc.expect(RelationMethod::Cnn)?;
    enc.encode(store, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::grad_check;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dims(dim: usize) -> RelationDims {
        RelationDims {
            dim,
            num_labels: 7,
            num_features: 5,
            max_path_len: 4,
            d_w: 3,
            kernel: 4,
        }
    }

    fn build(method: RelationMethod, dim: usize) -> (RelationEncoder, ParamStore) {
        let mut store = ParamStore::new();
        let enc = RelationEncoder::new(method, dims(dim), &mut store, 11).unwrap();
        (enc, store)
    }

    fn table(store: &ParamStore, name: &str) -> Tensor {
        store.get(store.id(name).unwrap()).clone()
    }

    fn set(store: &mut ParamStore, name: &str, data: Vec<f64>) {
        let id = store.id(name).unwrap();
        let t = store.get_mut(id);
        assert_eq!(t.len(), data.len());
        t.data_mut().copy_from_slice(&data);
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn method_names_round_trip() {
        for m in RelationMethod::ALL {
            assert_eq!(m.as_str().parse::<RelationMethod>().unwrap(), m);
        }
        assert!("gru".parse::<RelationMethod>().is_err());
    }

    #[test]
    fn feature_lookup_and_unk() {
        let (mut enc, store) = build(RelationMethod::Feature, 3);
        enc.set_feature(vec![3], 2);
        enc.set_feature(vec![3, 4], 3);
        let t = table(&store, "rel.features");
        assert_eq!(encode_feature(&[3], &enc, &store).unwrap(), t.row(2));
        assert_eq!(encode_feature(&[3, 4], &enc, &store).unwrap(), t.row(3));
        assert_eq!(encode_feature(&[5, 6], &enc, &store).unwrap(), t.row(FEATURE_UNK));
        assert_eq!(
            encode_feature(&[3, 4], &enc, &store).unwrap(),
            encode_feature(&[3, 4], &enc, &store).unwrap()
        );
    }

    #[test]
    fn feature_keys_from_vocabularies() {
        let labels = Vocabulary::from_text("<pad>\n<unk>\nNone\n:ARG1↑\n:ARG2↓\n").unwrap();
        let feats = Vocabulary::from_text_with_unk("<unk>\n:ARG1↑\n:ARG1↑ :ARG2↓\n:foo↑\n", 0).unwrap();
        let (enc, _) = build(RelationMethod::Feature, 2);
        let enc = enc.with_features(&feats, &labels);
        assert_eq!(enc.feature_id(&[3]), 1);
        assert_eq!(enc.feature_id(&[3, 4]), 2);
        assert_eq!(enc.feature_id(&[4]), FEATURE_UNK);
    }

    #[test]
    fn avg_examples() {
        let (enc, mut store) = build(RelationMethod::Avg, 3);
        let t = table(&store, "rel.labels");
        assert!(close(&encode_avg(&[4, 4, 4], &enc, &store).unwrap(), t.row(4), 1e-15));
        let mut data = t.data().to_vec();
        for c in 0..3 {
            data[6 * 3 + c] = -data[5 * 3 + c];
        }
        set(&mut store, "rel.labels", data);
        assert!(encode_avg(&[5, 6], &enc, &store).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn avg_and_sum_match_scalar_loop() {
        let (avg, store_a) = build(RelationMethod::Avg, 5);
        let (sum, store_s) = build(RelationMethod::Sum, 5);
        let path = [2, 6, 3];
        for (enc, store, mean) in [(&avg, &store_a, true), (&sum, &store_s, false)] {
            let t = table(store, "rel.labels");
            let mut want = vec![0.0; 5];
            for c in 0..5 {
                for &l in &path {
                    want[c] += t.at(l, c);
                }
                if mean {
                    want[c] /= path.len() as f64;
                }
            }
            assert!(close(&enc.encode(store, &path).unwrap(), &want, 1e-15));
        }
    }

    #[test]
    fn sum_examples() {
        let (sum, store) = build(RelationMethod::Sum, 4);
        let mut avg_store = ParamStore::new();
        let avg = RelationEncoder::new(RelationMethod::Avg, dims(4), &mut avg_store, 11).unwrap();
        assert_eq!(
            encode_sum(&[3], &sum, &store).unwrap(),
            encode_avg(&[3], &avg, &avg_store).unwrap()
        );
        let t = table(&store, "rel.labels");
        let want: Vec<f64> = t.row(2).iter().map(|v| 3.0 * v).collect();
        assert!(close(&encode_sum(&[2, 2, 2], &sum, &store).unwrap(), &want, 1e-15));
    }

    #[test]
    fn wrong_variant_and_bad_paths() {
        let (enc, store) = build(RelationMethod::Sum, 2);
        assert!(matches!(
            encode_avg(&[2], &enc, &store),
            Err(RelationError::WrongVariant { .. })
        ));
        assert!(matches!(enc.encode(&store, &[]), Err(RelationError::EmptyPath)));
        assert!(matches!(
            enc.encode(&store, &[2; 5]),
            Err(RelationError::PathTooLong { .. })
        ));
        assert!(matches!(
            enc.encode(&store, &[9]),
            Err(RelationError::LabelOutOfRange(9))
        ));
    }

    #[test]
    fn cnn_rejects_short_kernel() {
        let mut d = dims(2);
        d.kernel = 3;
        assert!(RelationEncoder::new(RelationMethod::Cnn, d, &mut ParamStore::new(), 1).is_err());
    }

    #[test]
    fn sa_singleton_weight_is_one() {
        let (enc, store) = build(RelationMethod::Sa, 4);
        assert_eq!(enc.sa_weights(&store, &[5]).unwrap(), vec![1.0]);
        // k = 1: self-attention over one element returns e·W^V
        let labels = table(&store, "rel.labels");
        let pos = table(&store, "rel.sa.pos");
        let wv = table(&store, "rel.sa.wv");
        let e: Vec<f64> = labels.row(5).iter().zip(pos.row(0)).map(|(a, b)| a + b).collect();
        let h = Tensor::matrix(1, 4, e).matmul(&wv).unwrap();
        assert!(close(&encode_sa(&[5], &enc, &store).unwrap(), h.data(), 1e-14));
    }

    #[test]
    fn sa_two_labels_closed_form() {
        let mut d = dims(2);
        d.d_w = 2;
        let mut store = ParamStore::new();
        let enc = RelationEncoder::new(RelationMethod::Sa, d, &mut store, 3).unwrap();
        let mut labels = vec![0.0; 14];
        labels[6..10].copy_from_slice(&[1.0, 0.0, 0.0, 1.0]); // labels 3, 4
        set(&mut store, "rel.labels", labels);
        set(&mut store, "rel.sa.pos", vec![0.5, 0.0, 0.0, -0.5, 0.0, 0.0, 0.0, 0.0]);
        set(&mut store, "rel.sa.wq", vec![1.0, 0.0, 0.0, 1.0]);
        set(&mut store, "rel.sa.wk", vec![2.0, 0.0, 0.0, 1.0]);
        set(&mut store, "rel.sa.wv", vec![1.0, 1.0, 0.0, 1.0]);
        set(&mut store, "rel.sa.w1", vec![1.0, 0.0, 0.0, 1.0]);
        set(&mut store, "rel.sa.w2", vec![1.0, -1.0]);

        // e1 = (1.5, 0), e2 = (0, 0.5)
        let (e1, e2) = ([1.5_f64, 0.0], [0.0_f64, 0.5]);
        let q = [e1, e2];
        let k = [[2.0 * e1[0], e1[1]], [2.0 * e2[0], e2[1]]];
        let v = [[e1[0], e1[0] + e1[1]], [e2[0], e2[0] + e2[1]]];
        let s2 = 2.0_f64.sqrt();
        let mut h = [[0.0; 2]; 2];
        for i in 0..2 {
            let s0 = (q[i][0] * k[0][0] + q[i][1] * k[0][1]) / s2;
            let s1 = (q[i][0] * k[1][0] + q[i][1] * k[1][1]) / s2;
            let a0 = 1.0 / (1.0 + (s1 - s0).exp());
            let a1 = 1.0 - a0;
            for c in 0..2 {
                h[i][c] = a0 * v[0][c] + a1 * v[1][c];
            }
        }
        let score = |hi: [f64; 2]| hi[0].tanh() - hi[1].tanh();
        let (g0, g1) = (score(h[0]), score(h[1]));
        let alpha0 = 1.0 / (1.0 + (g1 - g0).exp());
        let alpha1 = 1.0 - alpha0;
        let want = [
            alpha0 * h[0][0] + alpha1 * h[1][0],
            alpha0 * h[0][1] + alpha1 * h[1][1],
        ];
        let got = encode_sa(&[3, 4], &enc, &store).unwrap();
        assert!(close(&got, &want, 1e-12), "{got:?} vs {want:?}");
        let alpha = enc.sa_weights(&store, &[3, 4]).unwrap();
        assert!(close(&alpha, &[alpha0, alpha1], 1e-12));
    }

    #[test]
    fn cnn_relu_clamps() {
        let (enc, mut store) = build(RelationMethod::Cnn, 3);
        set(&mut store, "rel.labels", vec![0.0; 21]);
        assert!(encode_cnn(&[2, 3], &enc, &store).unwrap().iter().all(|&v| v == 0.0));
        let (enc, mut store) = build(RelationMethod::Cnn, 3);
        set(&mut store, "rel.labels", vec![1.0; 21]);
        set(&mut store, "rel.cnn.kernel", vec![-1.0; 36]);
        assert!(encode_cnn(&[2, 3, 4], &enc, &store).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn cnn_matches_direct_convolution() {
        let (enc, mut store) = build(RelationMethod::Cnn, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        set(&mut store, "rel.cnn.bias", (0..3).map(|_| rng.gen_range(-0.2..0.2)).collect());
        let path = [4, 1, 6];
        let t = table(&store, "rel.labels");
        let k = table(&store, "rel.cnn.kernel");
        let b = table(&store, "rel.cnn.bias");
        let mut padded = path.to_vec();
        padded.resize(4, LABEL_PAD);
        let width = 4;
        let mut want = Vec::new();
        for start in 0..=(padded.len() - width) {
            for c in 0..3 {
                let mut acc = b.data()[c];
                for p in 0..width {
                    for i in 0..3 {
                        acc += t.at(padded[start + p], i) * k.at(p * 3 + i, c);
                    }
                }
                want.push(acc.max(0.0));
            }
        }
        assert!(close(&encode_cnn(&path, &enc, &store).unwrap(), &want, 1e-14));
    }

    fn loss(enc: &RelationEncoder, store: &ParamStore, paths: &[Vec<usize>], w: &Tensor) -> (f64, Vec<f64>) {
        let mut b = Binder::new(store);
        let r = enc.encode_on(&mut b, paths).unwrap();
        let w = b.graph.input(w.clone());
        let t = b.graph.tanh(r);
        let m = b.graph.mul(t, w);
        let l = b.graph.sum(m);
        let value = b.graph.value(l).data()[0];
        let grads = b.gradients(l);
        (value, grads.into_iter().flat_map(Tensor::into_data).collect())
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let paths = vec![vec![3], vec![4, 5], vec![2, 6, 3, 1], vec![5, 5, 4]];
        for m in RelationMethod::ALL {
            let (mut enc, store) = build(m, 4);
            enc.set_feature(vec![4, 5], 3);
            enc.set_feature(vec![3], 1);
            let w = init_params(&[paths.len(), 4], 99).unwrap();
            let (_, grad) = loss(&enc, &store, &paths, &w);
            let mut probe = store.clone();
            let report = grad_check(
                |p| {
                    probe.set_flat(p);
                    loss(&enc, &probe, &paths, &w).0
                },
                &grad,
                &store.flatten(),
                1e-5,
            )
            .unwrap();
            assert!(report.max_rel_error < 1e-4, "{m}: {report:?}");
        }
    }

    proptest! {
        #[test]
        fn output_has_dim_entries(path in proptest::collection::vec(0usize..7, 1..=4), m in 0usize..5) {
            let (enc, store) = build(RelationMethod::ALL[m], 6);
            let r = enc.encode(&store, &path).unwrap();
            prop_assert_eq!(r.len(), 6);
            prop_assert_eq!(&r, &enc.encode(&store, &path).unwrap());
        }

        #[test]
        fn sa_weights_are_a_distribution(path in proptest::collection::vec(0usize..7, 1..=4)) {
            let (enc, store) = build(RelationMethod::Sa, 4);
            let a = enc.sa_weights(&store, &path).unwrap();
            prop_assert!(a.iter().all(|&x| x >= 0.0));
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn sum_is_k_times_avg_for_uniform_paths(l in 0usize..7, k in 1usize..=4) {
            let (sum, s1) = build(RelationMethod::Sum, 3);
            let (avg, s2) = build(RelationMethod::Avg, 3);
            let path = vec![l; k];
            let s = sum.encode(&s1, &path).unwrap();
            let a = avg.encode(&s2, &path).unwrap();
            for (x, y) in s.iter().zip(&a) {
                prop_assert!((x - k as f64 * y).abs() < 1e-12);
            }
        }
    }
}
