//! Scaled dot-product attention and its group-restricted multi-head form.
//!
//! A group restriction partitions the token rows; attention runs
//! independently inside each group, which is how the temporal and spatial
//! axes are realized. A designated shared row (the CLS token) may join every
//! group; its outputs are averaged across groups.

use crate::error::{Error, Result};
use crate::rollout::AttentionRecorder;
use crate::tensor::{Tape, TensorId};
use crate::transformer::TokenGrid;

/// Token-index groups an attention application is restricted to. `shared`,
/// when set, names a row that participates in every group in addition to the
/// rows listed there; `passthrough` rows skip the attention entirely (their
/// attention output is zero, so only the residual path moves them). Together
/// the three parts must partition the token rows.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenGroups {
    pub groups: Vec<Vec<usize>>,
    pub shared: Option<usize>,
    pub passthrough: Vec<usize>,
}

impl TokenGroups {
    /// One group per spatial position, each holding that patch across all
    /// frames. The CLS token, when present, passes through untouched.
    pub fn temporal(grid: &TokenGrid) -> Self {
        let groups = (0..grid.spatial)
            .map(|s| (0..grid.frames).map(|t| grid.row_of(t, s)).collect())
            .collect();
        TokenGroups { groups, shared: None, passthrough: grid.cls_row().into_iter().collect() }
    }

    /// One group per frame, each holding that frame's patches. The CLS token,
    /// when present, is shared into every frame group.
    pub fn spatial(grid: &TokenGrid) -> Self {
        let groups = (0..grid.frames)
            .map(|t| (0..grid.spatial).map(|s| grid.row_of(t, s)).collect())
            .collect();
        TokenGroups { groups, shared: grid.cls_row(), passthrough: Vec::new() }
    }

    /// A single group over all `n` tokens (unrestricted attention).
    pub fn all(n: usize) -> Self {
        TokenGroups { groups: vec![(0..n).collect()], shared: None, passthrough: Vec::new() }
    }

    /// Every token alone in its own group.
    pub fn singletons(n: usize) -> Self {
        TokenGroups {
            groups: (0..n).map(|i| vec![i]).collect(),
            shared: None,
            passthrough: Vec::new(),
        }
    }

    /// Checks that groups, the shared row, and passthrough rows together
    /// partition `0..n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        let mut mark = |row: usize| -> Result<()> {
            if row >= n || std::mem::replace(&mut seen[row], true) {
                return Err(Error::Input(format!(
                    "token groups must partition 0..{n}; row {row} repeated or out of range"
                )));
            }
            Ok(())
        };
        if let Some(s) = self.shared {
            mark(s)?;
        }
        for &row in &self.passthrough {
            mark(row)?;
        }
        for g in &self.groups {
            if g.is_empty() {
                return Err(Error::Input("empty token group".into()));
            }
            for &row in g {
                mark(row)?;
            }
        }
        if seen.iter().any(|&s| !s) {
            return Err(Error::Input(format!("token groups do not cover all {n} rows")));
        }
        Ok(())
    }

    /// Group member rows including the shared row (placed first).
    fn members(&self, group: usize) -> Vec<usize> {
        let mut rows = Vec::with_capacity(self.groups[group].len() + 1);
        if let Some(s) = self.shared {
            rows.push(s);
        }
        rows.extend_from_slice(&self.groups[group]);
        rows
    }
}

/// Plain scaled dot-product attention: `softmax(Q K^T / sqrt(d_k)) V`.
pub fn attention(tape: &mut Tape, q: TensorId, k: TensorId, v: TensorId) -> Result<TensorId> {
    let (qs, ks, vs) = (
        tape.shape(q).to_vec(),
        tape.shape(k).to_vec(),
        tape.shape(v).to_vec(),
    );
    if qs.len() != 2 || ks.len() != 2 || vs.len() != 2 || qs[1] != ks[1] || ks[0] != vs[0] {
        return Err(Error::Shape { op: "attention", lhs: qs, rhs: ks });
    }
    let kt = tape.transpose(k, &[1, 0])?;
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, 1.0 / (qs[1] as f32).sqrt())?;
    let weights = tape.softmax_lastdim(scaled)?;
    tape.matmul(weights, v)
}

/// Attention projection weights bound on the tape. `wo` must already have
/// the row count matching the heads being run (`|head range| * head_dim`).
#[derive(Debug, Clone, Copy)]
pub struct AttnProjections {
    pub wq: TensorId,
    pub wk: TensorId,
    pub wv: TensorId,
    pub wo: TensorId,
}

/// Multi-head attention restricted to token groups.
///
/// Heads `head_range` of the usual `h`-way column split of Q/K/V attend
/// within each group; per-group head outputs are concatenated, scattered back
/// to token order (shared rows averaged over groups), and projected by `wo`.
#[allow(clippy::too_many_arguments)]
pub fn multi_head(
    tape: &mut Tape,
    x: TensorId,
    proj: &AttnProjections,
    num_heads: usize,
    head_range: std::ops::Range<usize>,
    groups: &TokenGroups,
    mut recorder: Option<&mut AttentionRecorder>,
) -> Result<TensorId> {
    let n = tape.shape(x)[0];
    let d = tape.shape(x)[1];
    if num_heads == 0 || d % num_heads != 0 || head_range.end > num_heads || head_range.is_empty() {
        return Err(Error::Config(format!(
            "bad head split: {head_range:?} of {num_heads} heads over width {d}"
        )));
    }
    groups.validate(n)?;
    let dh = d / num_heads;
    let q = tape.matmul(x, proj.wq)?;
    let k = tape.matmul(x, proj.wk)?;
    let v = tape.matmul(x, proj.wv)?;

    let mut parts: Vec<(TensorId, Vec<usize>)> = Vec::with_capacity(groups.groups.len());
    for gi in 0..groups.groups.len() {
        let rows = groups.members(gi);
        let qg = tape.gather_rows(q, &rows)?;
        let kg = tape.gather_rows(k, &rows)?;
        let vg = tape.gather_rows(v, &rows)?;
        let mut head_outs = Vec::with_capacity(head_range.len());
        for head in head_range.clone() {
            let qh = tape.slice_cols(qg, head * dh, dh)?;
            let kh = tape.slice_cols(kg, head * dh, dh)?;
            let vh = tape.slice_cols(vg, head * dh, dh)?;
            let kt = tape.transpose(kh, &[1, 0])?;
            let scores = tape.matmul(qh, kt)?;
            let scaled = tape.scale(scores, 1.0 / (dh as f32).sqrt())?;
            let weights = tape.softmax_lastdim(scaled)?;
            if let Some(rec) = recorder.as_deref_mut() {
                rec.push(head, gi, &rows, tape.data(weights));
            }
            head_outs.push(tape.matmul(weights, vh)?);
        }
        let group_out = if head_outs.len() == 1 {
            head_outs[0]
        } else {
            tape.concat_lastdim(&head_outs)?
        };
        parts.push((group_out, rows));
    }
    let assembled = tape.scatter_mean_rows(&parts, n)?;
    tape.matmul(assembled, proj.wo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_leaf(tape: &mut Tape, rng: &mut ChaCha8Rng, shape: &[usize]) -> TensorId {
        let numel: usize = shape.iter().product();
        let data: Vec<f32> = (0..numel).map(|_| rng.random::<f32>() - 0.5).collect();
        tape.leaf_data(data, shape, false).unwrap()
    }

    #[test]
    fn singleton_attention_returns_value_row() {
        let mut tape = Tape::new();
        let q = tape.constant(vec![0.3, -0.7], &[1, 2]).unwrap();
        let k = tape.constant(vec![0.3, -0.7], &[1, 2]).unwrap();
        let v = tape.constant(vec![5.0, 6.0, 7.0], &[1, 3]).unwrap();
        let out = attention(&mut tape, q, k, v).unwrap();
        assert_eq!(tape.data(out), &[5.0, 6.0, 7.0]);
    }

    #[test]
    fn equal_logits_average_values() {
        // Q orthogonal to all keys: all logits zero, softmax uniform.
        let mut tape = Tape::new();
        let q = tape.constant(vec![1.0, 0.0], &[1, 2]).unwrap();
        let k = tape.constant(vec![0.0, 1.0, 0.0, -1.0, 0.0, 5.0], &[3, 2]).unwrap();
        let v = tape.constant(vec![3.0, 0.0, 6.0, 9.0, 0.0, -3.0], &[3, 2]).unwrap();
        let out = attention(&mut tape, q, k, v).unwrap();
        let got = tape.data(out);
        assert!((got[0] - 3.0).abs() < 1e-6 && (got[1] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn attention_matches_naive_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut tape = Tape::new();
        let q = rand_leaf(&mut tape, &mut rng, &[3, 4]);
        let k = rand_leaf(&mut tape, &mut rng, &[5, 4]);
        let v = rand_leaf(&mut tape, &mut rng, &[5, 2]);
        let out = attention(&mut tape, q, k, v).unwrap();

        // Naive oracle, straight from the definition.
        let (qd, kd, vd) = (tape.data(q).to_vec(), tape.data(k).to_vec(), tape.data(v).to_vec());
        let scale = 1.0 / (4.0f32).sqrt();
        for i in 0..3 {
            let logits: Vec<f32> = (0..5)
                .map(|j| (0..4).map(|c| qd[i * 4 + c] * kd[j * 4 + c]).sum::<f32>() * scale)
                .collect();
            let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let exps: Vec<f32> = logits.iter().map(|&l| (l - max).exp()).collect();
            let z: f32 = exps.iter().sum();
            for c in 0..2 {
                let want: f32 = (0..5).map(|j| exps[j] / z * vd[j * 2 + c]).sum();
                let got = tape.data(out)[i * 2 + c];
                assert!((got - want).abs() < 1e-5, "({i},{c}): {got} vs {want}");
            }
        }
    }

    #[test]
    fn one_group_one_head_equals_plain_attention_with_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut tape = Tape::new();
        let x = rand_leaf(&mut tape, &mut rng, &[5, 4]);
        let wq = rand_leaf(&mut tape, &mut rng, &[4, 4]);
        let wk = rand_leaf(&mut tape, &mut rng, &[4, 4]);
        let wv = rand_leaf(&mut tape, &mut rng, &[4, 4]);
        let wo = rand_leaf(&mut tape, &mut rng, &[4, 4]);
        let proj = AttnProjections { wq, wk, wv, wo };
        let grouped = multi_head(&mut tape, x, &proj, 1, 0..1, &TokenGroups::all(5), None).unwrap();

        let q = tape.matmul(x, wq).unwrap();
        let k = tape.matmul(x, wk).unwrap();
        let v = tape.matmul(x, wv).unwrap();
        let plain = attention(&mut tape, q, k, v).unwrap();
        let plain = tape.matmul(plain, wo).unwrap();
        for (a, b) in tape.data(grouped).iter().zip(tape.data(plain)) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn singleton_groups_keep_only_value_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut tape = Tape::new();
        let x = rand_leaf(&mut tape, &mut rng, &[4, 4]);
        let wq = rand_leaf(&mut tape, &mut rng, &[4, 4]);
        let wk = rand_leaf(&mut tape, &mut rng, &[4, 4]);
        let wv = rand_leaf(&mut tape, &mut rng, &[4, 4]);
        let wo = rand_leaf(&mut tape, &mut rng, &[4, 4]);
        let proj = AttnProjections { wq, wk, wv, wo };
        let out = multi_head(&mut tape, x, &proj, 2, 0..2, &TokenGroups::singletons(4), None).unwrap();

        // Each token attends only to itself: output = x W^V W^O.
        let v = tape.matmul(x, wv).unwrap();
        let want = tape.matmul(v, wo).unwrap();
        for (a, b) in tape.data(out).iter().zip(tape.data(want)) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn invalid_partition_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(vec![0.0; 12], &[3, 4]).unwrap();
        let w = tape.constant(vec![0.0; 16], &[4, 4]).unwrap();
        let proj = AttnProjections { wq: w, wk: w, wv: w, wo: w };
        let bad = TokenGroups { groups: vec![vec![0, 1], vec![1, 2]], shared: None, passthrough: vec![] };
        let err = multi_head(&mut tape, x, &proj, 2, 0..2, &bad, None).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
        let uncovered = TokenGroups { groups: vec![vec![0, 1]], shared: None, passthrough: vec![] };
        assert!(multi_head(&mut tape, x, &proj, 2, 0..2, &uncovered, None).is_err());
    }
}
