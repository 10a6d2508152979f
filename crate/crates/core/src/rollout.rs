//! Attention recording and rollout analysis.
//!
//! During a forward pass the encoder can stream every softmax weight matrix
//! into an [`AttentionRecorder`]; recording copies values out of the tape and
//! never touches the computation. Rollout then embeds each grouped matrix
//! into full token-index space, averages heads, mixes in the identity for the
//! residual path, row-normalizes, and multiplies across attention
//! applications in forward order. Row `i` of the result attributes output
//! token `i` to the input patches.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::ImageSequence;
use crate::error::{Error, Result};
use crate::imageio::write_png;

/// Which token axis an attention application (or head) worked along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttnAxis {
    Temporal,
    Spatial,
    /// Both axes inside one application (factorised dot-product layers).
    Fused,
}

/// Restricts which attention applications participate in rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AxisSelection {
    All,
    TemporalOnly,
    SpatialOnly,
}

impl AxisSelection {
    fn keeps(&self, axis: AttnAxis) -> bool {
        match self {
            AxisSelection::All => true,
            AxisSelection::TemporalOnly => axis == AttnAxis::Temporal,
            AxisSelection::SpatialOnly => axis == AttnAxis::Spatial,
        }
    }
}

/// One softmax weight matrix captured inside a group restriction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub layer: usize,
    /// Ordinal of the attention application within the forward pass (divided
    /// layers apply attention twice per layer, factorised once).
    pub application: usize,
    pub head: usize,
    pub axis: AttnAxis,
    pub group: usize,
    /// Global token row of each local row/column of `weights`.
    pub rows: Vec<usize>,
    /// Row-stochastic `rows.len() x rows.len()` matrix, row-major.
    pub weights: Vec<f32>,
}

/// Collects [`AttentionRecord`]s during a forward pass, together with the
/// token-grid geometry needed to interpret them.
#[derive(Debug, Default, Clone)]
pub struct AttentionRecorder {
    pub records: Vec<AttentionRecord>,
    pub token_count: usize,
    pub frames: usize,
    pub spatial: usize,
    pub has_cls: bool,
    layer: usize,
    application: usize,
    axis: AttnAxis,
    started: bool,
}

impl Default for AttnAxis {
    fn default() -> Self {
        AttnAxis::Fused
    }
}

impl AttentionRecorder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set_grid(&mut self, token_count: usize, frames: usize, spatial: usize, has_cls: bool) {
        self.token_count = token_count;
        self.frames = frames;
        self.spatial = spatial;
        self.has_cls = has_cls;
    }

    /// Marks the start of one attention application.
    pub fn begin_application(&mut self, layer: usize, axis: AttnAxis) {
        if self.started {
            self.application += 1;
        }
        self.started = true;
        self.layer = layer;
        self.axis = axis;
    }

    /// Overrides the axis for records that follow (factorised layers tag the
    /// two head halves differently inside one application).
    pub fn set_axis(&mut self, axis: AttnAxis) {
        self.axis = axis;
    }

    pub fn push(&mut self, head: usize, group: usize, rows: &[usize], weights: &[f32]) {
        debug_assert_eq!(weights.len(), rows.len() * rows.len());
        self.records.push(AttentionRecord {
            layer: self.layer,
            application: self.application,
            head,
            axis: self.axis,
            group,
            rows: rows.to_vec(),
            weights: weights.to_vec(),
        });
    }
}

/// Dense attribution of output tokens (rows) to input tokens (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutMap {
    pub matrix: Vec<f32>,
    pub token_count: usize,
    pub frames: usize,
    pub spatial: usize,
    pub has_cls: bool,
}

impl RolloutMap {
    pub fn value(&self, row: usize, col: usize) -> f32 {
        self.matrix[row * self.token_count + col]
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.matrix[row * self.token_count..(row + 1) * self.token_count]
    }

    /// Global row of patch `(frame, spatial)`.
    pub fn row_of(&self, frame: usize, spatial: usize) -> usize {
        usize::from(self.has_cls) + frame * self.spatial + spatial
    }

    /// Attribution from one output token to every patch, as a frames x
    /// spatial grid (the CLS column, when present, is dropped).
    pub fn patch_weights(&self, row: usize) -> PatchWeights {
        let offset = usize::from(self.has_cls);
        let src = self.row(row);
        PatchWeights {
            frames: self.frames,
            spatial: self.spatial,
            weights: src[offset..].to_vec(),
        }
    }

    /// Patch attribution of the CLS output token.
    pub fn cls_patch_weights(&self) -> Result<PatchWeights> {
        if !self.has_cls {
            return Err(Error::Input("this rollout has no CLS token".into()));
        }
        Ok(self.patch_weights(0))
    }

    /// Patch attribution of the mean-pooled output: the average of every
    /// token row. This is the readout view for encoders without a CLS token.
    pub fn pooled_patch_weights(&self) -> PatchWeights {
        let offset = usize::from(self.has_cls);
        let n = self.token_count;
        let mut weights = vec![0.0f32; n - offset];
        for row in 0..n {
            let src = self.row(row);
            for (w, &v) in weights.iter_mut().zip(&src[offset..]) {
                *w += v / n as f32;
            }
        }
        PatchWeights { frames: self.frames, spatial: self.spatial, weights }
    }
}

/// Per-frame, per-patch nonnegative weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchWeights {
    pub frames: usize,
    pub spatial: usize,
    /// `frames * spatial` values, frame-major.
    pub weights: Vec<f32>,
}

/// Multiplies residual-adjusted, row-normalized attention matrices across
/// applications in forward order: `0.5*A + 0.5*I`, renormalized, head-averaged
/// per application, grouped matrices embedded into full token space first.
pub fn rollout(rec: &AttentionRecorder, selection: AxisSelection) -> Result<RolloutMap> {
    let n = rec.token_count;
    if n == 0 {
        return Err(Error::Input("recorder carries no grid geometry".into()));
    }
    if rec.records.is_empty() {
        return Err(Error::Input("no attention records to roll out".into()));
    }
    let max_app = rec.records.iter().map(|r| r.application).max().unwrap();
    let mut result = identity(n);
    for app in 0..=max_app {
        let records: Vec<&AttentionRecord> = rec
            .records
            .iter()
            .filter(|r| r.application == app && selection.keeps(r.axis))
            .collect();
        if records.is_empty() {
            continue; // application contributes only its residual path
        }
        for r in &records {
            if r.rows.iter().any(|&row| row >= n) {
                return Err(Error::Input(format!(
                    "record in application {app} addresses row outside the {n}-token grid"
                )));
            }
        }
        // Head-average the embedded matrices of this application.
        let mut heads: Vec<usize> = records.iter().map(|r| r.head).collect();
        heads.sort_unstable();
        heads.dedup();
        let mut averaged = vec![0.0f32; n * n];
        for &head in &heads {
            let embedded = embed_head(n, records.iter().copied().filter(|r| r.head == head))?;
            for (a, e) in averaged.iter_mut().zip(&embedded) {
                *a += e / heads.len() as f32;
            }
        }
        // Residual mixing and row renormalization.
        for row in 0..n {
            let slice = &mut averaged[row * n..(row + 1) * n];
            for v in slice.iter_mut() {
                *v *= 0.5;
            }
            slice[row] += 0.5;
            let sum: f32 = slice.iter().sum();
            for v in slice.iter_mut() {
                *v /= sum;
            }
        }
        // result = averaged * result   (later applications on the left)
        result = mat_mul(&averaged, &result, n);
    }
    Ok(RolloutMap {
        matrix: result,
        token_count: n,
        frames: rec.frames,
        spatial: rec.spatial,
        has_cls: rec.has_cls,
    })
}

/// Embeds one head's grouped matrices into full token space. Rows covered by
/// several groups get the mean of their group rows; uncovered rows keep the
/// identity (they passed through this application untouched).
fn embed_head<'a>(n: usize, records: impl Iterator<Item = &'a AttentionRecord>) -> Result<Vec<f32>> {
    let mut m = vec![0.0f32; n * n];
    let mut counts = vec![0u32; n];
    for r in records {
        let g = r.rows.len();
        for (qi, &qrow) in r.rows.iter().enumerate() {
            counts[qrow] += 1;
            for (ki, &krow) in r.rows.iter().enumerate() {
                m[qrow * n + krow] += r.weights[qi * g + ki];
            }
        }
    }
    for row in 0..n {
        if counts[row] == 0 {
            m[row * n + row] = 1.0;
        } else if counts[row] > 1 {
            let c = counts[row] as f32;
            for v in &mut m[row * n..(row + 1) * n] {
                *v /= c;
            }
        }
    }
    Ok(m)
}

fn identity(n: usize) -> Vec<f32> {
    let mut m = vec![0.0f32; n * n];
    for i in 0..n {
        m[i * n + i] = 1.0;
    }
    m
}

fn mat_mul(a: &[f32], b: &[f32], n: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; n * n];
    for i in 0..n {
        for p in 0..n {
            let av = a[i * n + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (ov, &bv) in orow.iter_mut().zip(brow) {
                *ov += av * bv;
            }
        }
    }
    out
}

/// Sums the rollout mass flowing from the selected final-frame patches to
/// each frame, normalized to sum 1 across frames. CLS mass is excluded.
pub fn temporal_profile(map: &RolloutMap, selected_spatial: &[usize]) -> Result<Vec<f32>> {
    if selected_spatial.is_empty() {
        return Err(Error::Input("temporal profile needs at least one selected patch".into()));
    }
    if selected_spatial.iter().any(|&s| s >= map.spatial) {
        return Err(Error::Input(format!(
            "selected patch index out of range (spatial = {})",
            map.spatial
        )));
    }
    let last = map.frames - 1;
    let mut mass = vec![0.0f64; map.frames];
    for &s in selected_spatial {
        let row = map.row(map.row_of(last, s));
        for f in 0..map.frames {
            for sp in 0..map.spatial {
                mass[f] += row[map.row_of(f, sp)] as f64;
            }
        }
    }
    let total: f64 = mass.iter().sum();
    if total <= 0.0 {
        return Err(Error::Numeric("temporal profile has zero total mass".into()));
    }
    Ok(mass.into_iter().map(|v| (v / total) as f32).collect())
}

/// Rendered heatmap artifacts for one output token.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HeatmapFiles {
    pub heat_pngs: Vec<PathBuf>,
    pub overlay_pngs: Vec<PathBuf>,
    pub weights_csv: PathBuf,
}

/// Writes one grayscale heat PNG per frame (patch brightness = weight scaled
/// to [0, 1] by the max weight), optional overlays modulating the source
/// luminance, and the normalized weights as CSV (one row per frame).
pub fn render_heatmap(
    pw: &PatchWeights,
    grid: (usize, usize),
    source: Option<&ImageSequence>,
    out_dir: &Path,
    stem: &str,
) -> Result<HeatmapFiles> {
    let (gh, gw) = grid;
    if gh * gw != pw.spatial {
        return Err(Error::shape("render_heatmap", &[gh, gw], &[pw.spatial]));
    }
    if let Some(seq) = source {
        if seq.frames() != pw.frames || seq.height() % gh != 0 || seq.width() % gw != 0 {
            return Err(Error::Input(format!(
                "source sequence {}x{}x{} does not match a {}x{} patch grid over {} frames",
                seq.frames(),
                seq.height(),
                seq.width(),
                gh,
                gw,
                pw.frames
            )));
        }
    }
    std::fs::create_dir_all(out_dir)?;
    let max = pw.weights.iter().cloned().fold(0.0f32, f32::max);
    let norm: Vec<f32> = if max > 0.0 {
        pw.weights.iter().map(|w| w / max).collect()
    } else {
        vec![0.0; pw.weights.len()]
    };

    // Pixel size of a rendered patch when there is no source to overlay.
    const TILE: usize = 12;
    let (ph, pw_px) = source
        .map(|s| (s.height() / gh, s.width() / gw))
        .unwrap_or((TILE, TILE));
    let (img_h, img_w) = (gh * ph, gw * pw_px);

    let mut heat_pngs = Vec::new();
    let mut overlay_pngs = Vec::new();
    for f in 0..pw.frames {
        let frame_norm = &norm[f * pw.spatial..(f + 1) * pw.spatial];
        let mut heat = vec![0.0f32; img_h * img_w];
        for gy in 0..gh {
            for gx in 0..gw {
                let w = frame_norm[gy * gw + gx];
                for py in 0..ph {
                    for px in 0..pw_px {
                        heat[(gy * ph + py) * img_w + gx * pw_px + px] = w;
                    }
                }
            }
        }
        let heat_path = out_dir.join(format!("{stem}_f{f:02}.png"));
        write_png(&heat_path, &heat, img_h, img_w, 1)?;
        heat_pngs.push(heat_path);

        if let Some(seq) = source {
            let mut overlay = vec![0.0f32; img_h * img_w];
            for y in 0..img_h {
                for x in 0..img_w {
                    let mut lum = 0.0;
                    for c in 0..seq.channels() {
                        lum += seq.pixel(f, y, x, c);
                    }
                    lum /= seq.channels() as f32;
                    overlay[y * img_w + x] = lum * heat[y * img_w + x];
                }
            }
            let overlay_path = out_dir.join(format!("{stem}_f{f:02}_overlay.png"));
            write_png(&overlay_path, &overlay, img_h, img_w, 1)?;
            overlay_pngs.push(overlay_path);
        }
    }

    let weights_csv = out_dir.join(format!("{stem}_weights.csv"));
    let mut csv = String::new();
    for f in 0..pw.frames {
        let row: Vec<String> = norm[f * pw.spatial..(f + 1) * pw.spatial]
            .iter()
            .map(|w| format!("{w}"))
            .collect();
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    std::fs::write(&weights_csv, csv)?;
    Ok(HeatmapFiles { heat_pngs, overlay_pngs, weights_csv })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recorder_with(n: usize, frames: usize, spatial: usize, records: Vec<AttentionRecord>) -> AttentionRecorder {
        AttentionRecorder {
            records,
            token_count: n,
            frames,
            spatial,
            has_cls: false,
            layer: 0,
            application: 0,
            axis: AttnAxis::Fused,
            started: false,
        }
    }

    fn full_record(app: usize, weights: Vec<f32>, n: usize) -> AttentionRecord {
        AttentionRecord {
            layer: app,
            application: app,
            head: 0,
            axis: AttnAxis::Spatial,
            group: 0,
            rows: (0..n).collect(),
            weights,
        }
    }

    #[test]
    fn identity_attention_rolls_to_identity() {
        let n = 3;
        let mut eye = vec![0.0f32; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let rec = recorder_with(n, 1, 3, vec![full_record(0, eye.clone(), n)]);
        let map = rollout(&rec, AxisSelection::All).unwrap();
        assert_eq!(map.matrix, eye);
    }

    #[test]
    fn two_layer_toy_matches_hand_product() {
        // 4 tokens, two applications with known row-stochastic matrices.
        let n = 4;
        let a1: Vec<f32> = vec![
            0.7, 0.1, 0.1, 0.1, //
            0.25, 0.25, 0.25, 0.25, //
            0.0, 0.0, 1.0, 0.0, //
            0.4, 0.3, 0.2, 0.1,
        ];
        let a2: Vec<f32> = vec![
            0.1, 0.2, 0.3, 0.4, //
            0.5, 0.5, 0.0, 0.0, //
            0.25, 0.25, 0.25, 0.25, //
            0.0, 1.0, 0.0, 0.0,
        ];
        let rec = recorder_with(
            n,
            1,
            4,
            vec![full_record(0, a1.clone(), n), full_record(1, a2.clone(), n)],
        );
        let map = rollout(&rec, AxisSelection::All).unwrap();

        // Hand computation: (0.5*A2 + 0.5*I) * (0.5*A1 + 0.5*I), rows renormalized.
        let mix = |a: &[f32]| {
            let mut m = vec![0.0f32; n * n];
            for i in 0..n {
                for j in 0..n {
                    m[i * n + j] = 0.5 * a[i * n + j] + if i == j { 0.5 } else { 0.0 };
                }
                let sum: f32 = m[i * n..(i + 1) * n].iter().sum();
                for j in 0..n {
                    m[i * n + j] /= sum;
                }
            }
            m
        };
        let expected = mat_mul(&mix(&a2), &mix(&a1), n);
        for (got, want) in map.matrix.iter().zip(&expected) {
            assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        }
    }

    #[test]
    fn rollout_rows_stay_stochastic() {
        let n = 4;
        let mut recs = Vec::new();
        // Ten applications of a lopsided but stochastic matrix.
        let a: Vec<f32> = vec![
            0.9, 0.05, 0.03, 0.02, //
            0.1, 0.8, 0.05, 0.05, //
            0.3, 0.3, 0.3, 0.1, //
            0.05, 0.05, 0.05, 0.85,
        ];
        for app in 0..10 {
            recs.push(full_record(app, a.clone(), n));
        }
        let rec = recorder_with(n, 2, 2, recs);
        let map = rollout(&rec, AxisSelection::All).unwrap();
        for row in 0..n {
            let sum: f32 = map.row(row).iter().sum();
            assert!((sum - 1.0).abs() < 1e-4, "row {row} sums to {sum}");
            assert!(map.row(row).iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn grouped_records_embed_with_identity_elsewhere() {
        // One group covering tokens {0, 2} only; token 1 must keep identity.
        let rec = recorder_with(
            3,
            1,
            3,
            vec![AttentionRecord {
                layer: 0,
                application: 0,
                head: 0,
                axis: AttnAxis::Temporal,
                group: 0,
                rows: vec![0, 2],
                weights: vec![0.25, 0.75, 0.6, 0.4],
            }],
        );
        let map = rollout(&rec, AxisSelection::All).unwrap();
        // Token 1: pure residual+identity row.
        assert!((map.value(1, 1) - 1.0).abs() < 1e-6);
        assert!(map.value(1, 0).abs() < 1e-6 && map.value(1, 2).abs() < 1e-6);
        // Token 0 splits between itself (residual + self weight) and token 2.
        let expect_00 = 0.5 + 0.5 * 0.25;
        let expect_02 = 0.5 * 0.75;
        assert!((map.value(0, 0) - expect_00).abs() < 1e-6);
        assert!((map.value(0, 2) - expect_02).abs() < 1e-6);
    }

    #[test]
    fn temporal_profile_cases() {
        // Two frames x two patches, no CLS. Identity rollout: all mass stays
        // on the final frame.
        let n = 4;
        let rec = recorder_with(n, 2, 2, vec![full_record(0, identity(n), n)]);
        let map = rollout(&rec, AxisSelection::All).unwrap();
        let profile = temporal_profile(&map, &[0, 1]).unwrap();
        assert!((profile[1] - 1.0).abs() < 1e-6 && profile[0].abs() < 1e-6);

        // Uniform rollout: uniform profile.
        let uniform = vec![0.25f32; 16];
        let rec = recorder_with(n, 2, 2, vec![full_record(0, uniform, n)]);
        let map = rollout(&rec, AxisSelection::All).unwrap();
        // Mix with identity makes rows non-uniform, so build the map directly.
        let map = RolloutMap { matrix: vec![0.25; 16], ..map };
        let profile = temporal_profile(&map, &[0, 1]).unwrap();
        assert!((profile[0] - 0.5).abs() < 1e-6 && (profile[1] - 0.5).abs() < 1e-6);

        assert!(temporal_profile(&map, &[]).is_err());
    }

    #[test]
    fn heatmap_csv_matches_rendered_weights() {
        let dir = std::env::temp_dir().join(format!("gf-heat-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        let pw = PatchWeights { frames: 2, spatial: 4, weights: vec![0.1, 0.2, 0.3, 0.4, 0.0, 0.4, 0.2, 0.1] };
        let files = render_heatmap(&pw, (2, 2), None, &dir, "t").unwrap();
        assert_eq!(files.heat_pngs.len(), 2);
        let csv = std::fs::read_to_string(&files.weights_csv).unwrap();
        let parsed: Vec<Vec<f32>> = csv
            .lines()
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect();
        // CSV holds max-normalized weights; PNG quantizes those to 1/255.
        let (data, h, w, _c) = crate::imageio::read_png(&files.heat_pngs[0]).unwrap();
        assert_eq!((h, w), (24, 24));
        for gy in 0..2 {
            for gx in 0..2 {
                let px = data[(gy * 12) * 24 + gx * 12];
                let want = parsed[0][gy * 2 + gx];
                assert!((px - want).abs() <= 1.0 / 255.0 + 1e-6, "{px} vs {want}");
            }
        }
        // One-hot map renders a single bright patch.
        let pw = PatchWeights { frames: 1, spatial: 4, weights: vec![0.0, 1.0, 0.0, 0.0] };
        let files = render_heatmap(&pw, (2, 2), None, &dir, "onehot").unwrap();
        let (data, _, _, _) = crate::imageio::read_png(&files.heat_pngs[0]).unwrap();
        assert_eq!(data.iter().filter(|&&v| v > 0.5).count(), 12 * 12);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
