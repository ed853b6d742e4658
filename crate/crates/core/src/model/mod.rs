//! Encoder-decoder Transformer whose encoder can use structure-aware
//! self-attention over graph paths.
//!
//! Layers are post-norm (`LN(x + sublayer(x))`). Source and target share one
//! embedding table, scaled by √d_model and summed with sinusoidal position
//! encodings. Relation vectors are computed once per distinct path in a
//! batch, shared by every encoder layer and head; each head owns its `W^R`
//! and `W^F`. The decoder and cross-attention are standard.

mod attention;
mod batch;
mod config;
mod decode;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::numerics::{
    init_params, Binder, Checkpoint, Graph, NumericsError, ParamId, ParamStore, Tensor, Var,
};
use crate::relation_repr::{RelationDims, RelationEncoder, RelationError};

pub use attention::{
    attention_baseline, attention_structural, attention_weights, multi_head, AttentionHeadParams,
};
use attention::{attend, RelTerms};
pub use batch::{Batch, BatchPaths};
pub use config::{parse_config_text, ModelConfig};
pub use config::parse_bool;
pub use decode::{generate, GenerateOptions, Strategy};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty source sequence")]
    EmptySource,
    #[error("empty batch")]
    EmptyBatch,
    #[error("sequence of length {len} exceeds max_len {max}")]
    TooLong { len: usize, max: usize },
    #[error("token id {0} outside the vocabulary")]
    TokenOutOfRange(usize),
    #[error("beam width must be at least 1")]
    BeamWidth,
    #[error("structure-aware encoding needs a batch with path tables")]
    MissingPaths,
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Relation(#[from] RelationError),
}

/// How the encoder treats relations on a given call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Structure {
    /// Plain self-attention; paths are ignored.
    Baseline,
    /// Relation vectors from the batch paths.
    Paths,
    /// Structure-aware layers with every relation vector forced to zero.
    ZeroRelations,
}

#[derive(Debug, Clone)]
struct AttnIds {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    wo: ParamId,
    wr: Vec<ParamId>,
    wf: Vec<ParamId>,
}

#[derive(Debug, Clone)]
struct NormIds {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct FfnIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    attn: AttnIds,
    ln1: NormIds,
    ffn: FfnIds,
    ln2: NormIds,
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    self_attn: AttnIds,
    ln1: NormIds,
    cross: AttnIds,
    ln2: NormIds,
    ffn: FfnIds,
    ln3: NormIds,
}

const LN_EPS: f64 = 1e-6;

/// Per-sequence attention geometry: rows `b * nq .. (b + 1) * nq` of the
/// queries attend over rows `b * nk ..` of the keys under `masks[b]`.
struct Geometry<'a> {
    nq: usize,
    nk: usize,
    masks: &'a [Vec<bool>],
}

struct Relations<'a> {
    table: Var,
    pair_index: &'a [usize],
}

/// Dropout source for training; `None` means inference.
pub type DropoutRng<'r> = Option<&'r mut ChaCha8Rng>;

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    embed: ParamId,
    out_w: ParamId,
    out_b: ParamId,
    encoder: Vec<EncoderLayer>,
    decoder: Vec<DecoderLayer>,
    relation: Option<RelationEncoder>,
}

struct Init {
    seed: u64,
    counter: u64,
}

impl Init {
    fn next(&mut self) -> u64 {
        self.counter += 1;
        self.seed
            .wrapping_mul(0x2545_F491_4F6C_DD1D)
            .wrapping_add(self.counter.wrapping_mul(0x9E37_79B9_7F4A_7C15))
    }

    fn uniform(&mut self, store: &mut ParamStore, name: String, shape: &[usize]) -> Result<ParamId, ModelError> {
        let t = init_params(shape, self.next())?;
        Ok(store.add(name, t))
    }
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let (d, v, h, dz) = (config.d_model, config.vocab_size, config.num_heads, config.d_z());
        let mut store = ParamStore::new();
        let mut init = Init { seed, counter: 0 };

        let embed_t = init_params(&[d, v], init.next())?.reshape(&[v, d])?;
        let embed = store.add("embed", embed_t);
        let out_w = init.uniform(&mut store, "out.w".into(), &[d, v])?;
        let out_b = store.add("out.b", Tensor::zeros(&[1, v]));

        let attn = |store: &mut ParamStore, init: &mut Init, p: &str, structural: bool| -> Result<AttnIds, ModelError> {
            let mut ids = AttnIds {
                wq: init.uniform(store, format!("{p}.wq"), &[d, d])?,
                wk: init.uniform(store, format!("{p}.wk"), &[d, d])?,
                wv: init.uniform(store, format!("{p}.wv"), &[d, d])?,
                wo: init.uniform(store, format!("{p}.wo"), &[d, d])?,
                wr: Vec::new(),
                wf: Vec::new(),
            };
            if structural {
                for k in 0..h {
                    ids.wr.push(init.uniform(store, format!("{p}.wr.{k}"), &[dz, dz])?);
                    ids.wf.push(init.uniform(store, format!("{p}.wf.{k}"), &[dz, dz])?);
                }
            }
            Ok(ids)
        };
        let norm = |store: &mut ParamStore, p: &str| NormIds {
            gain: store.add(format!("{p}.gain"), Tensor::full(&[1, d], 1.0)),
            bias: store.add(format!("{p}.bias"), Tensor::zeros(&[1, d])),
        };
        let ffn = |store: &mut ParamStore, init: &mut Init, p: &str| -> Result<FfnIds, ModelError> {
            Ok(FfnIds {
                w1: init.uniform(store, format!("{p}.w1"), &[d, config.d_ff])?,
                b1: store.add(format!("{p}.b1"), Tensor::zeros(&[1, config.d_ff])),
                w2: init.uniform(store, format!("{p}.w2"), &[config.d_ff, d])?,
                b2: store.add(format!("{p}.b2"), Tensor::zeros(&[1, d])),
            })
        };

        let mut encoder = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let p = format!("enc.{l}");
            encoder.push(EncoderLayer {
                attn: attn(&mut store, &mut init, &format!("{p}.attn"), config.structure_aware)?,
                ln1: norm(&mut store, &format!("{p}.ln1")),
                ffn: ffn(&mut store, &mut init, &format!("{p}.ffn"))?,
                ln2: norm(&mut store, &format!("{p}.ln2")),
            });
        }
        let mut decoder = Vec::with_capacity(config.num_layers);
        for l in 0..config.num_layers {
            let p = format!("dec.{l}");
            decoder.push(DecoderLayer {
                self_attn: attn(&mut store, &mut init, &format!("{p}.self"), false)?,
                ln1: norm(&mut store, &format!("{p}.ln1")),
                cross: attn(&mut store, &mut init, &format!("{p}.cross"), false)?,
                ln2: norm(&mut store, &format!("{p}.ln2")),
                ffn: ffn(&mut store, &mut init, &format!("{p}.ffn"))?,
                ln3: norm(&mut store, &format!("{p}.ln3")),
            });
        }
        let relation = if config.structure_aware {
            let dims = RelationDims {
                dim: dz,
                num_labels: config.num_labels,
                num_features: config.num_features,
                max_path_len: config.max_path_len,
                d_w: config.d_w,
                kernel: config.cnn_kernel,
            };
            Some(RelationEncoder::new(config.relation_method, dims, &mut store, init.next())?)
        } else {
            None
        };
        Ok(Model {
            config,
            store,
            embed,
            out_w,
            out_b,
            encoder,
            decoder,
            relation,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn relation_encoder(&self) -> Option<&RelationEncoder> {
        self.relation.as_ref()
    }

    pub fn relation_encoder_mut(&mut self) -> Option<&mut RelationEncoder> {
        self.relation.as_mut()
    }

    /// Structure used when the caller does not choose one.
    pub fn default_structure(&self) -> Structure {
        if self.config.structure_aware {
            Structure::Paths
        } else {
            Structure::Baseline
        }
    }

    /// Model config under `model.` keys plus every parameter tensor.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint {
            tensors: self.store.to_map(),
            ..Default::default()
        };
        for (k, v) in self.config.to_map() {
            ck.metadata.insert(format!("model.{k}"), v);
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        let map = ck
            .metadata
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("model.").map(|k| (k.to_string(), v.clone())))
            .collect();
        let config = ModelConfig::from_map(&map)?;
        let mut model = Model::new(config, 0)?;
        let params: std::collections::BTreeMap<_, _> = ck
            .tensors
            .iter()
            .filter(|(k, _)| model.store.id(k).is_some())
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        model.store.load_map(&params)?;
        Ok(model)
    }

    fn check_tokens(&self, ids: &[usize]) -> Result<(), ModelError> {
        match ids.iter().find(|&&t| t >= self.config.vocab_size) {
            Some(&t) => Err(ModelError::TokenOutOfRange(t)),
            None => Ok(()),
        }
    }

    fn check_len(&self, len: usize) -> Result<(), ModelError> {
        if len > self.config.max_len {
            return Err(ModelError::TooLong {
                len,
                max: self.config.max_len,
            });
        }
        Ok(())
    }

    fn dropout(&self, g: &mut Graph, x: Var, rng: &mut DropoutRng<'_>) -> Var {
        match dropout_mask(g.value(x).len(), self.config.dropout, rng) {
            Some(m) => g.dropout(x, m),
            None => x,
        }
    }

    /// Token embeddings times √d plus positions, for `rows / len` sequences.
    fn embed(&self, b: &mut Binder<'_>, ids: &[usize], len: usize, rng: &mut DropoutRng<'_>) -> Var {
        let d = self.config.d_model;
        let table = b.p(self.embed);
        let e = b.graph.gather_rows(table, ids.to_vec());
        let e = b.graph.scale(e, (d as f64).sqrt());
        let pe = positions(len, d);
        let mut all = Vec::with_capacity(ids.len() * d);
        for _ in 0..ids.len() / len {
            all.extend_from_slice(pe.data());
        }
        let pe = b.graph.input(Tensor::matrix(ids.len(), d, all));
        let x = b.graph.add(e, pe);
        self.dropout(&mut b.graph, x, rng)
    }

    #[allow(clippy::too_many_arguments)]
    fn attention(
        &self,
        b: &mut Binder<'_>,
        xq: Var,
        xkv: Var,
        ids: &AttnIds,
        geo: &Geometry<'_>,
        rel: Option<&Relations<'_>>,
        rng: &mut DropoutRng<'_>,
    ) -> Result<Var, ModelError> {
        let (h, dz) = (self.config.num_heads, self.config.d_z());
        let (wq, wk, wv, wo) = (b.p(ids.wq), b.p(ids.wk), b.p(ids.wv), b.p(ids.wo));
        let q = b.graph.matmul(xq, wq);
        let k = b.graph.matmul(xkv, wk);
        let v = b.graph.matmul(xkv, wv);
        let terms: Vec<(Var, Var)> = match rel {
            Some(r) => (0..h)
                .map(|head| {
                    let (wr, wf) = (b.p(ids.wr[head]), b.p(ids.wf[head]));
                    (b.graph.matmul(r.table, wr), b.graph.matmul(r.table, wf))
                })
                .collect(),
            None => Vec::new(),
        };
        let g = &mut b.graph;
        let mut seqs = Vec::with_capacity(geo.masks.len());
        for (s, mask) in geo.masks.iter().enumerate() {
            let mut heads = Vec::with_capacity(h);
            for head in 0..h {
                let qs = g.slice(q, s * geo.nq, geo.nq, head * dz, dz);
                let ks = g.slice(k, s * geo.nk, geo.nk, head * dz, dz);
                let vs = g.slice(v, s * geo.nk, geo.nk, head * dz, dz);
                let rt = match (rel, terms.get(head)) {
                    (Some(r), Some(&(rw, rf))) => {
                        let pairs = geo.nq * geo.nk;
                        let idx = r.pair_index[s * pairs..(s + 1) * pairs].to_vec();
                        Some(RelTerms {
                            rw: g.gather_rows(rw, idx.clone()),
                            rf: g.gather_rows(rf, idx),
                        })
                    }
                    _ => None,
                };
                let drop = dropout_mask(geo.nq * geo.nk, self.config.dropout, rng);
                let (z, _) = attend(g, qs, ks, vs, rt, Some(mask), drop)?;
                heads.push(z);
            }
            seqs.push(if h == 1 { heads[0] } else { g.concat_cols(&heads) });
        }
        let cat = if seqs.len() == 1 { seqs[0] } else { g.concat_rows(&seqs) };
        Ok(g.matmul(cat, wo))
    }

    fn ffn(&self, b: &mut Binder<'_>, x: Var, ids: &FfnIds) -> Var {
        let (w1, b1, w2, b2) = (b.p(ids.w1), b.p(ids.b1), b.p(ids.w2), b.p(ids.b2));
        let g = &mut b.graph;
        let hdn = g.matmul(x, w1);
        let hdn = g.add_row(hdn, b1);
        let hdn = g.relu(hdn);
        let y = g.matmul(hdn, w2);
        g.add_row(y, b2)
    }

    fn add_norm(&self, b: &mut Binder<'_>, x: Var, y: Var, ids: &NormIds, rng: &mut DropoutRng<'_>) -> Var {
        let y = self.dropout(&mut b.graph, y, rng);
        let (gain, bias) = (b.p(ids.gain), b.p(ids.bias));
        let s = b.graph.add(x, y);
        b.graph.layer_norm(s, gain, bias, LN_EPS)
    }

    /// Encoder states, one row per source position (`B·n × d_model`).
    pub fn encode_on(
        &self,
        b: &mut Binder<'_>,
        batch: &Batch,
        structure: Structure,
        mut rng: DropoutRng<'_>,
    ) -> Result<Var, ModelError> {
        let n = batch.src_len;
        self.check_len(n)?;
        self.check_tokens(&batch.src)?;
        let relations = match structure {
            Structure::Baseline => None,
            Structure::Paths | Structure::ZeroRelations => {
                let enc = self.relation.as_ref().ok_or_else(|| {
                    ModelError::Config("the model was built without structure-aware layers".into())
                })?;
                let paths = batch.paths.as_ref().ok_or(ModelError::MissingPaths)?;
                let table = if structure == Structure::Paths {
                    enc.encode_on(b, &paths.unique)?
                } else {
                    b.graph.input(Tensor::zeros(&[paths.unique.len(), self.config.d_z()]))
                };
                Some((table, paths))
            }
        };
        let masks: Vec<Vec<bool>> = (0..batch.size)
            .map(|s| {
                let valid = &batch.src_mask[s * n..(s + 1) * n];
                (0..n).flat_map(|_| valid.iter().copied()).collect()
            })
            .collect();
        let geo = Geometry { nq: n, nk: n, masks: &masks };
        let rel = relations.map(|(table, p)| Relations {
            table,
            pair_index: &p.pair_index,
        });
        let mut x = self.embed(b, &batch.src, n, &mut rng);
        for layer in &self.encoder {
            let a = self.attention(b, x, x, &layer.attn, &geo, rel.as_ref(), &mut rng)?;
            x = self.add_norm(b, x, a, &layer.ln1, &mut rng);
            let f = self.ffn(b, x, &layer.ffn);
            x = self.add_norm(b, x, f, &layer.ln2, &mut rng);
        }
        Ok(x)
    }

    /// Inference-mode encoder output as a `B·n × d_model` tensor.
    pub fn encode(&self, batch: &Batch, structure: Structure) -> Result<Tensor, ModelError> {
        let mut b = Binder::new(&self.store);
        let x = self.encode_on(&mut b, batch, structure, None)?;
        Ok(b.graph.value(x).clone())
    }

    /// Decoder logits (`B·m × V`) for decoder inputs `tgt_in` (`B·m`, each
    /// row starting with BOS) over encoder `memory` (`B·n × d`).
    #[allow(clippy::too_many_arguments)]
    pub fn decode_on(
        &self,
        b: &mut Binder<'_>,
        memory: Var,
        src_mask: &[bool],
        src_len: usize,
        tgt_in: &[usize],
        tgt_mask: &[bool],
        tgt_len: usize,
        mut rng: DropoutRng<'_>,
    ) -> Result<Var, ModelError> {
        self.check_len(tgt_len)?;
        self.check_tokens(tgt_in)?;
        let (n, m) = (src_len, tgt_len);
        let bsz = tgt_in.len() / m;
        if bsz * m != tgt_in.len() || src_mask.len() != bsz * n || tgt_mask.len() != bsz * m {
            return Err(ModelError::Shape("decoder inputs disagree on batch size".into()));
        }
        let self_masks: Vec<Vec<bool>> = (0..bsz)
            .map(|s| {
                let valid = &tgt_mask[s * m..(s + 1) * m];
                (0..m)
                    .flat_map(|i| (0..m).map(move |j| j <= i && valid[j]))
                    .collect()
            })
            .collect();
        let cross_masks: Vec<Vec<bool>> = (0..bsz)
            .map(|s| {
                let valid = &src_mask[s * n..(s + 1) * n];
                (0..m).flat_map(|_| valid.iter().copied()).collect()
            })
            .collect();
        let self_geo = Geometry { nq: m, nk: m, masks: &self_masks };
        let cross_geo = Geometry { nq: m, nk: n, masks: &cross_masks };
        let mut y = self.embed(b, tgt_in, m, &mut rng);
        for layer in &self.decoder {
            let a = self.attention(b, y, y, &layer.self_attn, &self_geo, None, &mut rng)?;
            y = self.add_norm(b, y, a, &layer.ln1, &mut rng);
            let c = self.attention(b, y, memory, &layer.cross, &cross_geo, None, &mut rng)?;
            y = self.add_norm(b, y, c, &layer.ln2, &mut rng);
            let f = self.ffn(b, y, &layer.ffn);
            y = self.add_norm(b, y, f, &layer.ln3, &mut rng);
        }
        let (w, bias) = (b.p(self.out_w), b.p(self.out_b));
        let logits = b.graph.matmul(y, w);
        Ok(b.graph.add_row(logits, bias))
    }

    /// Teacher-forced logits and label-smoothed loss over non-PAD targets.
    pub fn loss_on(
        &self,
        b: &mut Binder<'_>,
        batch: &Batch,
        structure: Structure,
        smoothing: f64,
        mut rng: DropoutRng<'_>,
    ) -> Result<(Var, Var), ModelError> {
        let memory = self.encode_on(b, batch, structure, rng.as_deref_mut())?;
        let logits = self.decode_on(
            b,
            memory,
            &batch.src_mask,
            batch.src_len,
            &batch.tgt_in,
            &batch.tgt_mask,
            batch.tgt_len,
            rng,
        )?;
        let loss = b.graph.cross_entropy(logits, &batch.tgt_out, smoothing)?;
        Ok((loss, logits))
    }

    /// Inference-mode teacher-forced logits.
    pub fn logits(&self, batch: &Batch, structure: Structure) -> Result<Tensor, ModelError> {
        let mut b = Binder::new(&self.store);
        let (_, logits) = self.loss_on(&mut b, batch, structure, 0.0, None)?;
        Ok(b.graph.value(logits).clone())
    }

    /// `(correct, total)` argmax predictions over non-PAD target positions.
    pub fn teacher_forced_accuracy(
        &self,
        batch: &Batch,
        structure: Structure,
    ) -> Result<(usize, usize), ModelError> {
        let logits = self.logits(batch, structure)?;
        Ok(count_correct(&logits, &batch.tgt_out))
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub fn count_correct(logits: &Tensor, targets: &[Option<usize>]) -> (usize, usize) {
    let mut correct = 0;
    let mut total = 0;
    for (i, t) in targets.iter().enumerate() {
        if let Some(t) = t {
            total += 1;
            if argmax(logits.row(i)) == *t {
                correct += 1;
            }
        }
    }
    (correct, total)
}

fn dropout_mask(len: usize, rate: f64, rng: &mut DropoutRng<'_>) -> Option<Vec<f64>> {
    let rng = rng.as_deref_mut()?;
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    Some(
        (0..len)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect(),
    )
}

/// Sinusoidal position encodings, `len × d`.
pub fn positions(len: usize, d: usize) -> Tensor {
    let mut data = vec![0.0; len * d];
    for pos in 0..len {
        for i in 0..d {
            let exponent = (2 * (i / 2)) as f64 / d as f64;
            let angle = pos as f64 / 10000f64.powf(exponent);
            data[pos * d + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    Tensor::matrix(len, d, data)
}
