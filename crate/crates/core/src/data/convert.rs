//! Converter from a directory-of-PNG-frames layout into the canonical
//! dataset format. This is how the published slip-detection recordings are
//! brought in: one directory per sample holding `visual/` and `tactile/`
//! frame folders, plus a `labels.csv` with `sample_id,label` lines (label is
//! `stable` or `slip`). The first 14 frames of each folder, in lexicographic
//! order, become the sample; fewer than 14 frames is an error.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{save_slip_dataset, ImageSequence, Modality, SlipLabel, SlipSample, SLIP_FRAMES};
use crate::error::{Error, Result};
use crate::imageio::read_png;

/// Converts `input` into a canonical slip dataset at `output`; returns the
/// number of samples written.
pub fn convert_slip_dataset(input: &Path, output: &Path) -> Result<usize> {
    let labels_path = input.join("labels.csv");
    if !labels_path.exists() {
        return Err(Error::Data(format!("missing {}", labels_path.display())));
    }
    let mut samples = Vec::new();
    for (lineno, line) in fs::read_to_string(&labels_path)?.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (id, label_str) = line.split_once(',').ok_or_else(|| {
            Error::Data(format!("labels.csv line {}: expected `id,label`", lineno + 1))
        })?;
        let (id, label_str) = (id.trim(), label_str.trim());
        let label = match label_str {
            "stable" => SlipLabel::Stable,
            "slip" => SlipLabel::Slip,
            other => {
                return Err(Error::Data(format!(
                    "labels.csv line {}: unknown label {other:?}",
                    lineno + 1
                )))
            }
        };
        let visual = read_sequence(&input.join(id).join("visual"), Modality::Visual, id)?;
        let tactile = read_sequence(&input.join(id).join("tactile"), Modality::Tactile, id)?;
        samples.push(SlipSample::new(id.to_string(), visual, tactile, label)?);
    }
    if samples.is_empty() {
        return Err(Error::Data("labels.csv lists no samples".into()));
    }
    save_slip_dataset(output, &samples)?;
    Ok(samples.len())
}

fn read_sequence(dir: &Path, modality: Modality, sample_id: &str) -> Result<ImageSequence> {
    if !dir.is_dir() {
        return Err(Error::Data(format!("sample {sample_id}: missing frame directory {}", dir.display())));
    }
    let mut frames: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "png").unwrap_or(false))
        .collect();
    frames.sort();
    if frames.len() < SLIP_FRAMES {
        return Err(Error::Data(format!(
            "sample {sample_id}: {} has {} png frames, need at least {SLIP_FRAMES}",
            dir.display(),
            frames.len()
        )));
    }
    let mut data = Vec::new();
    let mut dims: Option<(usize, usize, usize)> = None;
    for path in frames.iter().take(SLIP_FRAMES) {
        let (px, h, w, c) = read_png(path)?;
        match dims {
            None => dims = Some((h, w, c)),
            Some(d) if d != (h, w, c) => {
                return Err(Error::Data(format!(
                    "sample {sample_id}: frame {} is {h}x{w}x{c}, others are {}x{}x{}",
                    path.display(),
                    d.0,
                    d.1,
                    d.2
                )))
            }
            _ => {}
        }
        data.extend_from_slice(&px);
    }
    let (h, w, c) = dims.expect("at least 14 frames were read");
    ImageSequence::new(data, (SLIP_FRAMES, h, w, c), modality, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::load_slip_dataset;
    use crate::imageio::write_png;

    fn build_fixture(root: &Path, frame_count: usize) {
        let mut labels = String::new();
        for (i, label) in ["stable", "slip"].iter().enumerate() {
            let id = format!("s{i}");
            labels.push_str(&format!("{id},{label}\n"));
            for sub in ["visual", "tactile"] {
                let dir = root.join(&id).join(sub);
                fs::create_dir_all(&dir).unwrap();
                let c = if sub == "visual" { 3 } else { 1 };
                for f in 0..frame_count {
                    let data: Vec<f32> = (0..4 * 3 * c).map(|k| ((k + f) % 7) as f32 / 6.0).collect();
                    write_png(&dir.join(format!("frame_{f:03}.png")), &data, 4, 3, c).unwrap();
                }
            }
        }
        fs::write(root.join("labels.csv"), labels).unwrap();
    }

    #[test]
    fn converter_builds_loadable_dataset() {
        let base = std::env::temp_dir().join(format!("gf-conv-{}", std::process::id()));
        let (input, output) = (base.join("in"), base.join("out"));
        let _ = fs::remove_dir_all(&base);
        fs::create_dir_all(&input).unwrap();
        build_fixture(&input, 16); // extra frames beyond 14 are ignored

        let n = convert_slip_dataset(&input, &output).unwrap();
        assert_eq!(n, 2);
        let samples = load_slip_dataset(&output).unwrap();
        assert_eq!(samples.len(), 2);
        for s in &samples {
            assert_eq!(s.visual.frames(), SLIP_FRAMES);
            assert_eq!(s.tactile.frames(), SLIP_FRAMES);
            assert_eq!(s.visual.channels(), 3);
            assert_eq!(s.tactile.channels(), 1);
        }
        assert_eq!(samples[0].label, SlipLabel::Stable);
        assert_eq!(samples[1].label, SlipLabel::Slip);
        fs::remove_dir_all(&base).unwrap();
    }

    #[test]
    fn converter_enforces_frame_minimum() {
        let base = std::env::temp_dir().join(format!("gf-conv-short-{}", std::process::id()));
        let (input, output) = (base.join("in"), base.join("out"));
        let _ = fs::remove_dir_all(&base);
        fs::create_dir_all(&input).unwrap();
        build_fixture(&input, 13);
        let err = convert_slip_dataset(&input, &output).unwrap_err();
        assert!(err.to_string().contains("need at least 14"), "got {err}");
        fs::remove_dir_all(&base).unwrap();
    }
}
