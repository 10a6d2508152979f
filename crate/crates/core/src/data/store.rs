//! On-disk dataset layout: `root/manifest.json` plus one directory of TSR1
//! tensor files per sample. Tensor payloads round-trip bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{ActionKind, GraspSample, ImageSequence, Modality, SlipSample};
use crate::error::{Error, Result};
use crate::heads::{FruitLabel, GraspOutcome};
use crate::tensor::{load_tensor, save_tensor};

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetManifest {
    kind: String,
    sample_count: usize,
    samples: Vec<SampleEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleEntry {
    id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    outcome: Option<GraspOutcome>,
    #[serde(skip_serializing_if = "Option::is_none")]
    fruit: Option<FruitLabel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    force_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    slip: Option<crate::data::SlipLabel>,
    tensors: BTreeMap<String, TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    file: String,
    shape: Vec<usize>,
}

const GRASP_STREAMS: [(&str, ActionKind, Modality); 4] = [
    ("pinch_tactile", ActionKind::Pinch, Modality::Tactile),
    ("pinch_visual", ActionKind::Pinch, Modality::Visual),
    ("slide_tactile", ActionKind::Slide, Modality::Tactile),
    ("slide_visual", ActionKind::Slide, Modality::Visual),
];

pub fn save_grasp_dataset(root: &Path, samples: &[GraspSample]) -> Result<()> {
    fs::create_dir_all(root)?;
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let dir = root.join(&s.id);
        fs::create_dir_all(&dir)?;
        let mut tensors = BTreeMap::new();
        for (name, action, modality) in GRASP_STREAMS {
            let seq = s.sequence(action, modality);
            let t = seq.to_tensor();
            let rel = format!("{}/{}.tsr", s.id, name);
            save_tensor(root.join(&rel), &t)?;
            tensors.insert(name.to_string(), TensorEntry { file: rel, shape: t.shape().to_vec() });
        }
        entries.push(SampleEntry {
            id: s.id.clone(),
            outcome: Some(s.outcome),
            fruit: Some(s.fruit),
            force_threshold: Some(s.force_threshold),
            slip: None,
            tensors,
        });
    }
    write_manifest(root, "grasp", entries)
}

pub fn load_grasp_dataset(root: &Path) -> Result<Vec<GraspSample>> {
    let manifest = read_manifest(root, "grasp")?;
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for e in &manifest.samples {
        let mut seqs: Vec<ImageSequence> = Vec::with_capacity(4);
        for (name, action, modality) in GRASP_STREAMS {
            let t = load_sample_tensor(root, e, name)?;
            seqs.push(ImageSequence::from_tensor(&t, modality, Some(action)).map_err(|err| {
                Error::Data(format!("sample {}: bad {name} sequence: {err}", e.id))
            })?);
        }
        let slide_visual = seqs.pop().unwrap();
        let slide_tactile = seqs.pop().unwrap();
        let pinch_visual = seqs.pop().unwrap();
        let pinch_tactile = seqs.pop().unwrap();
        samples.push(GraspSample {
            id: e.id.clone(),
            pinch_tactile,
            pinch_visual,
            slide_tactile,
            slide_visual,
            force_threshold: e
                .force_threshold
                .ok_or_else(|| Error::Data(format!("sample {}: missing force_threshold", e.id)))?,
            outcome: e.outcome.ok_or_else(|| Error::Data(format!("sample {}: missing outcome", e.id)))?,
            fruit: e.fruit.ok_or_else(|| Error::Data(format!("sample {}: missing fruit", e.id)))?,
        });
    }
    Ok(samples)
}

pub fn save_slip_dataset(root: &Path, samples: &[SlipSample]) -> Result<()> {
    fs::create_dir_all(root)?;
    let mut entries = Vec::with_capacity(samples.len());
    for s in samples {
        let dir = root.join(&s.id);
        fs::create_dir_all(&dir)?;
        let mut tensors = BTreeMap::new();
        for (name, seq) in [("visual", &s.visual), ("tactile", &s.tactile)] {
            let t = seq.to_tensor();
            let rel = format!("{}/{}.tsr", s.id, name);
            save_tensor(root.join(&rel), &t)?;
            tensors.insert(name.to_string(), TensorEntry { file: rel, shape: t.shape().to_vec() });
        }
        entries.push(SampleEntry {
            id: s.id.clone(),
            outcome: None,
            fruit: None,
            force_threshold: None,
            slip: Some(s.label),
            tensors,
        });
    }
    write_manifest(root, "slip", entries)
}

pub fn load_slip_dataset(root: &Path) -> Result<Vec<SlipSample>> {
    let manifest = read_manifest(root, "slip")?;
    let mut samples = Vec::with_capacity(manifest.samples.len());
    for e in &manifest.samples {
        let visual = ImageSequence::from_tensor(
            &load_sample_tensor(root, e, "visual")?,
            Modality::Visual,
            None,
        )
        .map_err(|err| Error::Data(format!("sample {}: bad visual sequence: {err}", e.id)))?;
        let tactile = ImageSequence::from_tensor(
            &load_sample_tensor(root, e, "tactile")?,
            Modality::Tactile,
            None,
        )
        .map_err(|err| Error::Data(format!("sample {}: bad tactile sequence: {err}", e.id)))?;
        let label = e
            .slip
            .ok_or_else(|| Error::Data(format!("sample {}: missing slip label", e.id)))?;
        samples.push(SlipSample::new(e.id.clone(), visual, tactile, label)?);
    }
    Ok(samples)
}

fn write_manifest(root: &Path, kind: &str, samples: Vec<SampleEntry>) -> Result<()> {
    let manifest = DatasetManifest { kind: kind.to_string(), sample_count: samples.len(), samples };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(root.join("manifest.json"), json)?;
    Ok(())
}

fn read_manifest(root: &Path, expected_kind: &str) -> Result<DatasetManifest> {
    let path = root.join("manifest.json");
    if !path.exists() {
        return Err(Error::Data(format!("missing manifest {}", path.display())));
    }
    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(&path)?)?;
    if manifest.kind != expected_kind {
        return Err(Error::Data(format!(
            "dataset kind is {:?}, expected {:?}",
            manifest.kind, expected_kind
        )));
    }
    if manifest.sample_count != manifest.samples.len() {
        return Err(Error::Data(format!(
            "manifest count {} does not match {} sample entries{}",
            manifest.sample_count,
            manifest.samples.len(),
            manifest
                .samples
                .get(manifest.sample_count.min(manifest.samples.len()).saturating_sub(1))
                .map(|e| format!(" (near sample {})", e.id))
                .unwrap_or_default()
        )));
    }
    Ok(manifest)
}

fn load_sample_tensor(root: &Path, e: &SampleEntry, name: &str) -> Result<crate::tensor::Tensor> {
    let entry = e
        .tensors
        .get(name)
        .ok_or_else(|| Error::Data(format!("sample {}: manifest lists no {name} tensor", e.id)))?;
    let path: PathBuf = root.join(&entry.file);
    let t = load_tensor(&path)
        .map_err(|err| Error::Data(format!("sample {}: {}: {err}", e.id, path.display())))?;
    if t.shape() != entry.shape.as_slice() {
        return Err(Error::Data(format!(
            "sample {}: tensor {name} has shape {:?}, manifest says {:?}",
            e.id,
            t.shape(),
            entry.shape
        )));
    }
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_grasp, generate_slip, SyntheticSpec};

    fn tmpdir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("gf-store-{tag}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn tiny_spec() -> SyntheticSpec {
        SyntheticSpec {
            samples: 3,
            tactile_height: 16,
            tactile_width: 12,
            visual_height: 16,
            visual_width: 12,
            seed: 9,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn grasp_roundtrip_is_bitwise() {
        let dir = tmpdir("grasp");
        let samples = generate_grasp(&tiny_spec()).unwrap();
        save_grasp_dataset(&dir, &samples).unwrap();
        let back = load_grasp_dataset(&dir).unwrap();
        assert_eq!(back.len(), samples.len());
        for (a, b) in samples.iter().zip(&back) {
            assert_eq!(a.id, b.id);
            assert_eq!(a.outcome, b.outcome);
            assert_eq!(a.fruit, b.fruit);
            let bits = |s: &ImageSequence| s.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.pinch_tactile), bits(&b.pinch_tactile));
            assert_eq!(bits(&a.slide_visual), bits(&b.slide_visual));
        }
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn slip_roundtrip_and_count_mismatch() {
        let dir = tmpdir("slip");
        let samples = generate_slip(&tiny_spec()).unwrap();
        save_slip_dataset(&dir, &samples).unwrap();
        let back = load_slip_dataset(&dir).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[1].label, samples[1].label);

        // Corrupt the count; the loader must name the problem.
        let manifest_path = dir.join("manifest.json");
        let text = fs::read_to_string(&manifest_path).unwrap();
        fs::write(&manifest_path, text.replace("\"sample_count\": 3", "\"sample_count\": 4")).unwrap();
        let err = load_slip_dataset(&dir).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("does not match"), "got: {msg}");
        fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn shape_mismatch_names_sample() {
        let dir = tmpdir("shape");
        let samples = generate_slip(&tiny_spec()).unwrap();
        save_slip_dataset(&dir, &samples).unwrap();
        // Overwrite one tensor with a different shape.
        let t = crate::tensor::Tensor::zeros(&[1, 2, 2, 1]);
        save_tensor(dir.join("slip_0001/visual.tsr"), &t).unwrap();
        let err = load_slip_dataset(&dir).unwrap_err();
        assert!(err.to_string().contains("slip_0001"), "got: {err}");
        fs::remove_dir_all(&dir).unwrap();
    }
}
