//! The four attention connection patterns: self, causal, focused and cross.
//!
//! All four are the same scaled-dot-product kernel with different shape
//! contracts. Focused attention compresses an arbitrary-length key sequence
//! down to a fixed number of latent query rows; cross attention re-expands or
//! integrates a fixed-size context into another stream. The kernel records
//! `D * Lq * Lk` score units into the ledger on every call.

use crate::cost::{CostLedger, CostTag};
use crate::error::{Error, Result};
use crate::tensor::{matmul, softmax_lastdim, BoolMask, Rng, Tensor};

/// Head layout for one attention operation. `d_head` is the paper's d_k.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionSpec {
    pub d_model: usize,
    pub n_heads: usize,
}

impl AttentionSpec {
    pub fn new(d_model: usize, n_heads: usize) -> Result<Self> {
        if n_heads == 0 || d_model % n_heads != 0 {
            return Err(Error::Config(format!(
                "n_heads {} must divide d_model {}",
                n_heads, d_model
            )));
        }
        Ok(Self { d_model, n_heads })
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Bias-free q/k/v/output projections, each `D x D`.
#[derive(Debug, Clone)]
pub struct ProjectionSet {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    pub wo: Tensor,
}

impl ProjectionSet {
    pub fn init(d_model: usize, rng: &mut Rng) -> Self {
        let scale = 1.0 / (d_model as f32).sqrt();
        Self {
            wq: rng.fill_uniform(d_model, d_model, scale),
            wk: rng.fill_uniform(d_model, d_model, scale),
            wv: rng.fill_uniform(d_model, d_model, scale),
            wo: rng.fill_uniform(d_model, d_model, scale),
        }
    }

    pub fn param_count(&self) -> usize {
        self.wq.numel() + self.wk.numel() + self.wv.numel() + self.wo.numel()
    }
}

/// Key/value pair already projected for one cross-attention site, reusable
/// across steps without recomputation.
#[derive(Debug, Clone)]
pub struct CachedKv {
    pub k: Tensor,
    pub v: Tensor,
}

/// Multi-head scaled dot-product attention over already-projected q/k/v.
///
/// Returns the concatenated head outputs (the caller applies the output
/// projection). Records `D * Lq * Lk` into the meter. Masked weights are
/// exactly zero, so excluded keys contribute nothing to the value mix.
pub fn scaled_dot_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    mask: Option<&BoolMask>,
    spec: AttentionSpec,
    tag: CostTag,
    meter: &mut CostLedger,
) -> Result<Tensor> {
    let lq = q.rows();
    let lk = k.rows();
    if lk == 0 {
        return Err(Error::EmptyKeys);
    }
    if q.cols() != spec.d_model || k.cols() != spec.d_model || v.cols() != spec.d_model || v.rows() != lk {
        return Err(Error::Shape {
            op: "scaled_dot_attention",
            detail: format!(
                "q {:?} k {:?} v {:?} vs d_model {}",
                q.shape(),
                k.shape(),
                v.shape(),
                spec.d_model
            ),
        });
    }
    meter.record(tag, lq, lk, spec.d_model);
    meter.record_macs(lq, spec.d_model, lk); // scores
    meter.record_macs(lq, lk, spec.d_model); // value mix

    let dh = spec.d_head();
    let scale = 1.0 / (dh as f32).sqrt();
    let mut out = Tensor::zeros(vec![lq, spec.d_model]);
    let mut scores = vec![0.0f32; lq * lk];
    for h in 0..spec.n_heads {
        let off = h * dh;
        for i in 0..lq {
            let qrow = &q.row(i)[off..off + dh];
            let srow = &mut scores[i * lk..(i + 1) * lk];
            for (j, s) in srow.iter_mut().enumerate() {
                let krow = &k.row(j)[off..off + dh];
                let mut dot = 0.0f32;
                for (a, b) in qrow.iter().zip(krow.iter()) {
                    dot += a * b;
                }
                *s = dot * scale;
            }
        }
        let weights = softmax_lastdim(&Tensor::from_rows(lq, lk, scores.clone())?, mask)?;
        for i in 0..lq {
            let wrow = weights.row(i);
            let orow = &mut out.data_mut()[i * spec.d_model + off..i * spec.d_model + off + dh];
            for (j, &w) in wrow.iter().enumerate() {
                let vrow = &v.row(j)[off..off + dh];
                for (o, &vv) in orow.iter_mut().zip(vrow.iter()) {
                    *o += w * vv;
                }
            }
        }
    }
    out.check_finite("scaled_dot_attention")?;
    Ok(out)
}

/// Lower-triangular mask: position (i, j) is allowed iff j <= i.
pub fn causal_mask(l: usize) -> BoolMask {
    let mut allowed = vec![false; l * l];
    for i in 0..l {
        for j in 0..=i {
            allowed[i * l + j] = true;
        }
    }
    BoolMask::new(l, l, allowed).expect("square mask")
}

/// Focused attention: a learned bank of `Woh` latent queries compresses an
/// arbitrary-length sequence `x` to exactly `Woh` rows. No mask.
pub fn focused_attention(
    latent_queries: &Tensor,
    x: &Tensor,
    weights: &ProjectionSet,
    spec: AttentionSpec,
    meter: &mut CostLedger,
) -> Result<Tensor> {
    if x.rows() == 0 {
        return Err(Error::EmptyKeys);
    }
    let q = project(latent_queries, &weights.wq, meter)?;
    let k = project(x, &weights.wk, meter)?;
    let v = project(x, &weights.wv, meter)?;
    let mixed = scaled_dot_attention(&q, &k, &v, None, spec, CostTag::Focused, meter)?;
    project(&mixed, &weights.wo, meter)
}

/// Cross attention: queries projected from `q_src`, keys/values projected
/// from `context` or reused bit-identically from `cached`.
pub fn cross_attention(
    q_src: &Tensor,
    context: Option<&Tensor>,
    cached: Option<&CachedKv>,
    weights: &ProjectionSet,
    spec: AttentionSpec,
    tag: CostTag,
    meter: &mut CostLedger,
) -> Result<Tensor> {
    let q = project(q_src, &weights.wq, meter)?;
    let (k, v) = match (cached, context) {
        (Some(c), _) => (c.k.clone(), c.v.clone()),
        (None, Some(ctx)) if ctx.rows() > 0 => (
            project(ctx, &weights.wk, meter)?,
            project(ctx, &weights.wv, meter)?,
        ),
        _ => return Err(Error::EmptyKeys),
    };
    let mixed = scaled_dot_attention(&q, &k, &v, None, spec, tag, meter)?;
    project(&mixed, &weights.wo, meter)
}

/// Projects the key/value pair for a context once, for reuse across steps.
pub fn project_kv(context: &Tensor, weights: &ProjectionSet, meter: &mut CostLedger) -> Result<CachedKv> {
    Ok(CachedKv {
        k: project(context, &weights.wk, meter)?,
        v: project(context, &weights.wv, meter)?,
    })
}

/// Matmul with full-MAC accounting.
pub fn project(x: &Tensor, w: &Tensor, meter: &mut CostLedger) -> Result<Tensor> {
    meter.record_macs(x.rows(), x.cols(), w.cols());
    matmul(x, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec8() -> AttentionSpec {
        AttentionSpec::new(8, 2).unwrap()
    }

    fn rng() -> Rng {
        Rng::new(7)
    }

    #[test]
    fn single_key_returns_value_row() {
        let mut meter = CostLedger::new();
        let mut r = rng();
        let q = r.fill_uniform(3, 8, 1.0);
        let k = r.fill_uniform(1, 8, 1.0);
        let v = r.fill_uniform(1, 8, 1.0);
        let out = scaled_dot_attention(&q, &k, &v, None, spec8(), CostTag::GenCross, &mut meter).unwrap();
        for i in 0..3 {
            assert_eq!(out.row(i), v.row(0));
        }
    }

    #[test]
    fn symmetric_inputs_give_symmetric_output() {
        let mut meter = CostLedger::new();
        // Two identical rows: attention over them is symmetric in the rows.
        let row: Vec<f32> = (0..8).map(|i| (i as f32 * 0.25).sin()).collect();
        let mut data = row.clone();
        data.extend_from_slice(&row);
        let x = Tensor::from_rows(2, 8, data).unwrap();
        let out = scaled_dot_attention(&x, &x, &x, None, spec8(), CostTag::CtxSelf, &mut meter).unwrap();
        assert_eq!(out.row(0), out.row(1));
    }

    #[test]
    fn meter_records_score_units() {
        let mut meter = CostLedger::new();
        let mut r = rng();
        let q = r.fill_uniform(3, 8, 1.0);
        let k = r.fill_uniform(5, 8, 1.0);
        let v = r.fill_uniform(5, 8, 1.0);
        scaled_dot_attention(&q, &k, &v, None, spec8(), CostTag::GenCausal, &mut meter).unwrap();
        assert_eq!(meter.units(), 120); // 8 * 3 * 5
    }

    #[test]
    fn empty_keys_error() {
        let mut meter = CostLedger::new();
        let mut r = rng();
        let q = r.fill_uniform(2, 8, 1.0);
        let k = Tensor::zeros(vec![0, 8]);
        let v = Tensor::zeros(vec![0, 8]);
        assert!(matches!(
            scaled_dot_attention(&q, &k, &v, None, spec8(), CostTag::GenCausal, &mut meter),
            Err(Error::EmptyKeys)
        ));
    }

    #[test]
    fn causal_mask_shapes() {
        let m1 = causal_mask(1);
        assert!(m1.is_allowed(0, 0));

        let m3 = causal_mask(3);
        let allowed = (0..3)
            .flat_map(|i| (0..3).map(move |j| (i, j)))
            .filter(|&(i, j)| m3.is_allowed(i, j))
            .count();
        assert_eq!(allowed, 6);

        let m32 = causal_mask(32);
        for i in 0..32 {
            let row_allowed = (0..32).filter(|&j| m32.is_allowed(i, j)).count();
            assert_eq!(row_allowed, i + 1);
        }
    }

    #[test]
    fn focused_single_key() {
        let mut meter = CostLedger::new();
        let mut r = rng();
        let spec = spec8();
        let w = ProjectionSet::init(8, &mut r);
        let latents = r.fill_uniform(4, 8, 1.0);
        let x = r.fill_uniform(1, 8, 1.0);
        let out = focused_attention(&latents, &x, &w, spec, &mut meter).unwrap();
        // Softmax over one key: every output row is the projected value row.
        let expected = {
            let mut m = CostLedger::new();
            let v = project(&x, &w.wv, &mut m).unwrap();
            project(&v, &w.wo, &mut m).unwrap()
        };
        for i in 0..4 {
            assert_eq!(out.row(i), expected.row(0));
        }
    }

    #[test]
    fn focused_output_length_is_fixed() {
        let spec = spec8();
        let mut r = rng();
        let w = ProjectionSet::init(8, &mut r);
        let latents = r.fill_uniform(4, 8, 1.0);
        for lk in [1usize, 10, 10_000] {
            let mut meter = CostLedger::new();
            let x = r.fill_uniform(lk, 8, 0.5);
            let out = focused_attention(&latents, &x, &w, spec, &mut meter).unwrap();
            assert_eq!(out.shape(), &[4, 8]);
        }
    }

    #[test]
    fn focused_meter_full_history() {
        // Lk = N - Wog history rows cost D * (N - Wog) * Woh.
        let spec = spec8();
        let mut r = rng();
        let w = ProjectionSet::init(8, &mut r);
        let latents = r.fill_uniform(4, 8, 1.0);
        let x = r.fill_uniform(12, 8, 0.5);
        let mut meter = CostLedger::new();
        focused_attention(&latents, &x, &w, spec, &mut meter).unwrap();
        assert_eq!(meter.units(), 8 * 12 * 4);
    }

    #[test]
    fn cross_cached_matches_recompute_bitwise() {
        let spec = spec8();
        let mut r = rng();
        let w = ProjectionSet::init(8, &mut r);
        let q = r.fill_uniform(3, 8, 1.0);
        let ctx = r.fill_uniform(5, 8, 1.0);
        let mut m1 = CostLedger::new();
        let fresh = cross_attention(&q, Some(&ctx), None, &w, spec, CostTag::GenCross, &mut m1).unwrap();
        let mut m2 = CostLedger::new();
        let cached = project_kv(&ctx, &w, &mut m2).unwrap();
        let reused = cross_attention(&q, None, Some(&cached), &w, spec, CostTag::GenCross, &mut m2).unwrap();
        assert_eq!(fresh.data(), reused.data());
    }

    #[test]
    fn cross_single_key_and_meter() {
        let spec = spec8();
        let mut r = rng();
        let w = ProjectionSet::init(8, &mut r);
        let q = r.fill_uniform(2, 8, 1.0);
        let ctx = r.fill_uniform(1, 8, 1.0);
        let mut meter = CostLedger::new();
        let out = cross_attention(&q, Some(&ctx), None, &w, spec, CostTag::GenCross, &mut meter).unwrap();
        assert_eq!(out.row(0), out.row(1));
        assert_eq!(meter.units(), 8 * 2 * 1);

        // Lq = Wog queries over Lc = Woh context rows: D * Wog * Woh.
        let q4 = r.fill_uniform(4, 8, 1.0);
        let ctx4 = r.fill_uniform(4, 8, 1.0);
        let mut meter2 = CostLedger::new();
        cross_attention(&q4, Some(&ctx4), None, &w, spec, CostTag::GenCross, &mut meter2).unwrap();
        assert_eq!(meter2.units(), 8 * 4 * 4);
    }

    #[test]
    fn cross_empty_context_without_cache_errors() {
        let spec = spec8();
        let mut r = rng();
        let w = ProjectionSet::init(8, &mut r);
        let q = r.fill_uniform(2, 8, 1.0);
        let mut meter = CostLedger::new();
        assert!(matches!(
            cross_attention(&q, None, None, &w, spec, CostTag::GenCross, &mut meter),
            Err(Error::EmptyKeys)
        ));
    }

    /// Causality is bitwise exact: perturbing row j cannot change any output
    /// row i < j because masked weights are exactly zero.
    #[test]
    fn causal_perturbation_is_bitwise_invisible_upstream() {
        let spec = spec8();
        let mut r = rng();
        let l = 6;
        let x = r.fill_uniform(l, 8, 1.0);
        let mask = causal_mask(l);
        let mut m = CostLedger::new();
        let base = scaled_dot_attention(&x, &x, &x, Some(&mask), spec, CostTag::GenCausal, &mut m).unwrap();
        for j in 1..l {
            let mut data = x.data().to_vec();
            for c in 0..8 {
                data[j * 8 + c] += 0.5;
            }
            let xp = Tensor::from_rows(l, 8, data).unwrap();
            let out = scaled_dot_attention(&xp, &xp, &xp, Some(&mask), spec, CostTag::GenCausal, &mut m).unwrap();
            for i in 0..j {
                assert_eq!(base.row(i), out.row(i), "row {} changed by perturbing row {}", i, j);
            }
        }
    }

    /// With positions disabled, focused attention is permutation-equivariant
    /// in its key dimension: each output row is a weighted sum over (key,
    /// value) pairs, so permuting x changes only the accumulation order. The
    /// order-canonical oracle sorts contributions before summing and must be
    /// bitwise stable under permutation.
    #[test]
    fn focused_permutation_equivariance_canonical() {
        let spec = spec8();
        let mut r = rng();
        let w = ProjectionSet::init(8, &mut r);
        let latents = r.fill_uniform(4, 8, 1.0);

        // Order-canonical focused attention: per head and output row, gather
        // (weight, value-row) pairs keyed by the value row bits, sort, then
        // accumulate in sorted order.
        let canonical = |x: &Tensor| -> Vec<u32> {
            let mut m = CostLedger::new();
            let q = project(&latents, &w.wq, &mut m).unwrap();
            let k = project(x, &w.wk, &mut m).unwrap();
            let v = project(x, &w.wv, &mut m).unwrap();
            let dh = spec.d_head();
            let lk = x.rows();
            let mut out = vec![0.0f32; 4 * 8];
            for h in 0..spec.n_heads {
                let off = h * dh;
                for i in 0..4 {
                    let qrow = &q.row(i)[off..off + dh];
                    let mut scores: Vec<f32> = (0..lk)
                        .map(|j| {
                            let krow = &k.row(j)[off..off + dh];
                            qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f32>()
                                / (dh as f32).sqrt()
                        })
                        .collect();
                    let max = scores.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                    for s in scores.iter_mut() {
                        *s = (*s - max).exp();
                    }
                    // Canonical order: sort contributions by value-row bits.
                    let mut items: Vec<(Vec<u32>, f32)> = (0..lk)
                        .map(|j| {
                            let bits: Vec<u32> =
                                v.row(j)[off..off + dh].iter().map(|f| f.to_bits()).collect();
                            (bits, scores[j])
                        })
                        .collect();
                    items.sort_by(|a, b| a.0.cmp(&b.0));
                    let denom: f32 = items.iter().map(|(_, s)| *s).sum();
                    for (bits, s) in items {
                        let wgt = s / denom;
                        for (c, b) in bits.iter().enumerate() {
                            out[i * 8 + off + c] += wgt * f32::from_bits(*b);
                        }
                    }
                }
            }
            out.iter().map(|f| f.to_bits()).collect()
        };

        let x = r.fill_uniform(4, 8, 1.0);
        let base = canonical(&x);
        // All permutations of 4 rows, generated by repeated rotations/swaps.
        let perms: Vec<Vec<usize>> = vec![
            vec![1, 0, 2, 3],
            vec![3, 2, 1, 0],
            vec![2, 3, 0, 1],
            vec![1, 2, 3, 0],
        ];
        for p in perms {
            let data: Vec<f32> = p.iter().flat_map(|&j| x.row(j).to_vec()).collect();
            let xp = Tensor::from_rows(4, 8, data).unwrap();
            assert_eq!(canonical(&xp), base);
        }
    }

    /// Total recorded units equal the shadow sum of D*Lq*Lk per invocation.
    #[test]
    fn meter_exactness_against_shadow() {
        let spec = spec8();
        let mut r = rng();
        let w = ProjectionSet::init(8, &mut r);
        let latents = r.fill_uniform(4, 8, 1.0);
        let mut meter = CostLedger::new();
        let mut shadow: u64 = 0;
        for lk in [1usize, 3, 9, 17] {
            let x = r.fill_uniform(lk, 8, 0.5);
            focused_attention(&latents, &x, &w, spec, &mut meter).unwrap();
            shadow += (8 * 4 * lk) as u64;
            let q = r.fill_uniform(2, 8, 0.5);
            cross_attention(&q, Some(&x), None, &w, spec, CostTag::GenCross, &mut meter).unwrap();
            shadow += (8 * 2 * lk) as u64;
        }
        assert_eq!(meter.units(), shadow);
        let rec_sum: u64 = meter.records().iter().map(|rec| rec.units()).sum();
        assert_eq!(meter.units(), rec_sum);
    }
}
