//! Scaled dot-product attention with optional relation terms.
//!
//! With relation vectors `r_ij` a head computes
//!
//! ```text
//! e_ij = (x_i W^Q)(x_j W^K + r_ij W^R)ᵀ / √d_z
//! z_i  = Σ_j α_ij (x_j W^V + r_ij W^F)
//! ```
//!
//! and without them the `W^R`/`W^F` terms are simply absent. The tensor-level
//! functions here run the same tape code as the model.

use super::ModelError;
use crate::numerics::{Graph, Tensor, Var};

/// Per-head projections. `wr`/`wf` are present only for structure-aware
/// heads.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHeadParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wr: Option<Tensor>,
    pub wf: Option<Tensor>,
}

impl AttentionHeadParams {
    pub fn d_z(&self) -> usize {
        self.wq.cols()
    }

    fn check(&self, d_x: usize) -> Result<(), ModelError> {
        let dz = self.d_z();
        let ok = [&self.wq, &self.wk, &self.wv]
            .iter()
            .all(|w| w.shape() == [d_x, dz])
            && [&self.wr, &self.wf]
                .iter()
                .all(|w| w.as_ref().is_none_or(|w| w.shape() == [dz, dz]));
        if ok {
            Ok(())
        } else {
            Err(ModelError::Shape(format!(
                "head parameters do not fit d_x={d_x}, d_z={dz}"
            )))
        }
    }
}

/// Relation terms already multiplied by `W^R` and `W^F`, one row per
/// (query, key) pair in row-major order.
#[derive(Debug, Clone, Copy)]
pub(crate) struct RelTerms {
    pub rw: Var,
    pub rf: Var,
}

/// One head over already-projected queries, keys and values. Returns the
/// head output and the attention weights.
pub(crate) fn attend(
    g: &mut Graph,
    q: Var,
    k: Var,
    v: Var,
    rel: Option<RelTerms>,
    mask: Option<&[bool]>,
    dropout: Option<Vec<f64>>,
) -> Result<(Var, Var), ModelError> {
    let dz = g.value(q).cols();
    let mut s = g.matmul_t(q, k);
    if let Some(r) = rel {
        let extra = g.row_dot(q, r.rw);
        s = g.add(s, extra);
    }
    let s = g.scale(s, 1.0 / (dz as f64).sqrt());
    let alpha = g.softmax_rows(s, mask)?;
    let a = match dropout {
        Some(m) => g.dropout(alpha, m),
        None => alpha,
    };
    let mut z = g.matmul(a, v);
    if let Some(r) = rel {
        let extra = g.rel_mix(a, r.rf);
        z = g.add(z, extra);
    }
    Ok((z, alpha))
}

fn check_mask(mask: Option<&[bool]>, n: usize) -> Result<(), ModelError> {
    match mask {
        Some(m) if m.len() != n * n => Err(ModelError::Shape(format!(
            "mask has {} entries, expected {}",
            m.len(),
            n * n
        ))),
        _ => Ok(()),
    }
}

fn run_head(
    x: &Tensor,
    r: Option<&Tensor>,
    head: &AttentionHeadParams,
    mask: Option<&[bool]>,
) -> Result<(Tensor, Tensor), ModelError> {
    let n = x.rows();
    if n == 0 {
        return Err(ModelError::EmptySource);
    }
    head.check(x.cols())?;
    check_mask(mask, n)?;
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let (wq, wk, wv) = (
        g.input(head.wq.clone()),
        g.input(head.wk.clone()),
        g.input(head.wv.clone()),
    );
    let (q, k, v) = (g.matmul(xv, wq), g.matmul(xv, wk), g.matmul(xv, wv));
    let rel = match r {
        None => None,
        Some(r) => {
            let dz = head.d_z();
            if r.rows() != n * n || r.cols() != dz {
                return Err(ModelError::Shape(format!(
                    "relations must be {}×{dz}, got {}×{}",
                    n * n,
                    r.rows(),
                    r.cols()
                )));
            }
            let (Some(wr), Some(wf)) = (&head.wr, &head.wf) else {
                return Err(ModelError::Shape("structural head without W^R/W^F".into()));
            };
            let rv = g.input(r.clone());
            let (wr, wf) = (g.input(wr.clone()), g.input(wf.clone()));
            Some(RelTerms {
                rw: g.matmul(rv, wr),
                rf: g.matmul(rv, wf),
            })
        }
    };
    let (z, alpha) = attend(&mut g, q, k, v, rel, mask, None)?;
    Ok((g.value(z).clone(), g.value(alpha).clone()))
}

/// Baseline head. `mask[i * n + j] == false` hides key j from query i.
pub fn attention_baseline(
    x: &Tensor,
    head: &AttentionHeadParams,
    mask: Option<&[bool]>,
) -> Result<Tensor, ModelError> {
    run_head(x, None, head, mask).map(|(z, _)| z)
}

/// Structure-aware head; `r` holds `r_ij` in row `i * n + j`.
pub fn attention_structural(
    x: &Tensor,
    r: &Tensor,
    head: &AttentionHeadParams,
    mask: Option<&[bool]>,
) -> Result<Tensor, ModelError> {
    run_head(x, Some(r), head, mask).map(|(z, _)| z)
}

/// Attention weights of a head (baseline when `r` is `None`).
pub fn attention_weights(
    x: &Tensor,
    r: Option<&Tensor>,
    head: &AttentionHeadParams,
    mask: Option<&[bool]>,
) -> Result<Tensor, ModelError> {
    run_head(x, r, head, mask).map(|(_, a)| a)
}

/// Concatenates the head outputs and applies the output projection `wo`.
pub fn multi_head(
    x: &Tensor,
    r: Option<&Tensor>,
    heads: &[AttentionHeadParams],
    wo: &Tensor,
    mask: Option<&[bool]>,
) -> Result<Tensor, ModelError> {
    if heads.is_empty() {
        return Err(ModelError::Shape("no attention heads".into()));
    }
    let width: usize = heads.iter().map(AttentionHeadParams::d_z).sum();
    if wo.rows() != width {
        return Err(ModelError::Shape(format!(
            "output projection has {} rows, heads give {width}",
            wo.rows()
        )));
    }
    let mut g = Graph::new();
    let mut outs = Vec::with_capacity(heads.len());
    for h in heads {
        let z = match r {
            Some(r) => attention_structural(x, r, h, mask)?,
            None => attention_baseline(x, h, mask)?,
        };
        outs.push(g.input(z));
    }
    let cat = g.concat_cols(&outs);
    let wo = g.input(wo.clone());
    let y = g.matmul(cat, wo);
    Ok(g.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::init_params;

    fn head(d_x: usize, dz: usize, seed: u64) -> AttentionHeadParams {
        AttentionHeadParams {
            wq: init_params(&[d_x, dz], seed).unwrap(),
            wk: init_params(&[d_x, dz], seed + 1).unwrap(),
            wv: init_params(&[d_x, dz], seed + 2).unwrap(),
            wr: Some(init_params(&[dz, dz], seed + 3).unwrap()),
            wf: Some(init_params(&[dz, dz], seed + 4).unwrap()),
        }
    }

    #[test]
    fn single_element_returns_value_projection() {
        let x = init_params(&[1, 3], 9).unwrap();
        let h = head(3, 2, 1);
        let z = attention_baseline(&x, &h, None).unwrap();
        assert!(z.max_abs_diff(&x.matmul(&h.wv).unwrap()) < 1e-15);
        let r = init_params(&[1, 2], 10).unwrap();
        let z = attention_structural(&x, &r, &h, None).unwrap();
        let want = x.matmul(&h.wv).unwrap();
        let extra = r.matmul(h.wf.as_ref().unwrap()).unwrap();
        let want: Vec<f64> = want.data().iter().zip(extra.data()).map(|(a, b)| a + b).collect();
        assert!(z.data().iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn identical_rows_give_uniform_weights() {
        let row = init_params(&[1, 4], 2).unwrap();
        let x = Tensor::matrix(3, 4, row.data().repeat(3));
        let mask = [true, false, true, true, false, true, true, false, true];
        let a = attention_weights(&x, None, &head(4, 2, 5), Some(&mask)).unwrap();
        for i in 0..3 {
            assert!((a.at(i, 0) - 0.5).abs() < 1e-15);
            assert_eq!(a.at(i, 1), 0.0);
            assert!((a.at(i, 2) - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_relations_reduce_to_baseline() {
        let x = init_params(&[4, 6], 3).unwrap();
        let h = head(6, 3, 7);
        let zero = Tensor::zeros(&[16, 3]);
        assert_eq!(
            attention_structural(&x, &zero, &h, None).unwrap(),
            attention_baseline(&x, &h, None).unwrap()
        );
    }

    #[test]
    fn rows_are_stochastic() {
        let x = init_params(&[5, 4], 11).unwrap();
        let r = init_params(&[25, 2], 12).unwrap();
        let a = attention_weights(&x, Some(&r), &head(4, 2, 13), None).unwrap();
        for i in 0..5 {
            assert!((a.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_errors() {
        let x = init_params(&[2, 4], 1).unwrap();
        let h = head(3, 2, 1);
        assert!(attention_baseline(&x, &h, None).is_err());
        let h = head(4, 2, 1);
        assert!(attention_baseline(&x, &h, Some(&[true; 3])).is_err());
        assert!(matches!(
            attention_baseline(&x, &h, Some(&[false, false, true, true])),
            Err(ModelError::Numerics(_))
        ));
        assert!(attention_structural(&x, &Tensor::zeros(&[3, 2]), &h, None).is_err());
        assert!(matches!(
            attention_baseline(&Tensor::zeros(&[0, 4]), &h, None),
            Err(ModelError::EmptySource)
        ));
    }

    #[test]
    fn multi_head_compositions() {
        let x = init_params(&[3, 4], 21).unwrap();
        let h = head(4, 4, 22);
        let wo = init_params(&[4, 4], 23).unwrap();
        let one = multi_head(&x, None, std::slice::from_ref(&h), &wo, None).unwrap();
        let want = attention_baseline(&x, &h, None).unwrap().matmul(&wo).unwrap();
        assert!(one.max_abs_diff(&want) < 1e-15);

        let hh = head(4, 2, 30);
        let eye = Tensor::matrix(4, 4, (0..16).map(|i| if i % 5 == 0 { 1.0 } else { 0.0 }).collect());
        let twin = multi_head(&x, None, &[hh.clone(), hh.clone()], &eye, None).unwrap();
        for i in 0..3 {
            assert_eq!(twin.row(i)[..2], twin.row(i)[2..]);
        }

        let (h0, h1) = (head(4, 2, 40), head(4, 2, 50));
        let r = init_params(&[9, 2], 60).unwrap();
        let got = multi_head(&x, Some(&r), &[h0.clone(), h1.clone()], &wo, None).unwrap();
        let z0 = attention_structural(&x, &r, &h0, None).unwrap();
        let z1 = attention_structural(&x, &r, &h1, None).unwrap();
        let mut want = vec![0.0; 12];
        for i in 0..3 {
            for c in 0..4 {
                for k in 0..4 {
                    let zk = if k < 2 { z0.at(i, k) } else { z1.at(i, k - 2) };
                    want[i * 4 + c] += zk * wo.at(k, c);
                }
            }
        }
        assert!(got.data().iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-14));
    }
}
