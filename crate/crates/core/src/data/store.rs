//! Dataset directories: `manifest.json` plus `TFC1` image files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::DomainDataset;
use crate::error::{Error, Result};
use crate::tensor::{io, Tensor};

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub classes: Vec<String>,
    pub domains: Vec<String>,
    pub samples: Vec<SampleEntry>,
}

/// One sample. When several entries name the same file, the file holds
/// their records concatenated in manifest order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub file: String,
    pub class: usize,
    pub domain: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// `samples/NNNNNN.tfc`, one record each.
    PerSample,
    /// `domain_D.tfc` holding every sample of domain `D`.
    PackedByDomain,
}

pub fn save(ds: &DomainDataset, dir: &Path) -> Result<()> {
    save_with_layout(ds, dir, Layout::PackedByDomain)
}

pub fn save_with_layout(ds: &DomainDataset, dir: &Path, layout: Layout) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let [_, c, h, w] = ds.images.shape();
    let image = |i: usize| {
        Tensor::from_vec([1, c, h, w], ds.images.item(i).to_vec()).expect("item shape")
    };
    let mut samples = Vec::with_capacity(ds.len());
    match layout {
        Layout::PerSample => {
            let sub = dir.join("samples");
            fs::create_dir_all(&sub).map_err(|e| Error::io(&sub, e))?;
            for i in 0..ds.len() {
                let file = format!("samples/{i:06}.tfc");
                io::write(&dir.join(&file), &image(i))?;
                samples.push(SampleEntry {
                    file,
                    class: ds.labels[i],
                    domain: ds.domains[i],
                });
            }
        }
        Layout::PackedByDomain => {
            let mut packs: BTreeMap<usize, Vec<Tensor<f32>>> = BTreeMap::new();
            for i in 0..ds.len() {
                let d = ds.domains[i];
                packs.entry(d).or_default().push(image(i));
                samples.push(SampleEntry {
                    file: format!("domain_{d}.tfc"),
                    class: ds.labels[i],
                    domain: d,
                });
            }
            for (d, tensors) in packs {
                io::write_packed(&dir.join(format!("domain_{d}.tfc")), &tensors)?;
            }
        }
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        classes: ds.class_names.clone(),
        domains: ds.domain_names.clone(),
        samples,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

pub fn load(dir: &Path) -> Result<DomainDataset> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.clone(),
        offset: 0,
        message: format!("invalid manifest: {e}"),
    })?;
    if manifest.version != MANIFEST_VERSION {
        return Err(Error::Format {
            path,
            offset: 0,
            message: format!("unsupported manifest version {}", manifest.version),
        });
    }
    if manifest.samples.is_empty() {
        return Err(Error::Format {
            path,
            offset: 0,
            message: "manifest lists no samples".into(),
        });
    }

    // Records are consumed per file in manifest order.
    let mut readers: BTreeMap<&str, io::Reader> = BTreeMap::new();
    let mut images: Vec<Tensor<f32>> = Vec::with_capacity(manifest.samples.len());
    for entry in &manifest.samples {
        if !readers.contains_key(entry.file.as_str()) {
            let file_path = dir.join(&entry.file);
            readers.insert(&entry.file, io::Reader::open(&file_path)?);
        }
        let reader = readers.get_mut(entry.file.as_str()).expect("inserted above");
        let t = reader.next::<f32>()?;
        if t.shape()[0] != 1 {
            return Err(Error::Format {
                path: dir.join(&entry.file),
                offset: 0,
                message: format!("expected one image per record, got shape {:?}", t.shape()),
            });
        }
        if let Some(first) = images.first() {
            if first.shape() != t.shape() {
                return Err(Error::shape(
                    format!("dataset image in {}", entry.file),
                    first.shape(),
                    t.shape(),
                ));
            }
        }
        images.push(t);
    }
    for (file, reader) in &readers {
        if !reader.at_end() {
            return Err(Error::Format {
                path: dir.join(file),
                offset: 0,
                message: "file holds more records than the manifest lists".into(),
            });
        }
    }
    let refs: Vec<&Tensor<f32>> = images.iter().collect();
    DomainDataset::new(
        Tensor::concat(&refs)?,
        manifest.samples.iter().map(|s| s.class).collect(),
        manifest.samples.iter().map(|s| s.domain).collect(),
        manifest.classes,
        manifest.domains,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, SyntheticSpec};

    fn two_samples() -> DomainDataset {
        DomainDataset::new(
            Tensor::from_vec([2, 1, 1, 2], vec![0.0, 0.5, 1.0, 0.25]).unwrap(),
            vec![1, 0],
            vec![0, 1],
            vec!["hbar".into(), "vbar".into()],
            vec!["a".into(), "b".into()],
        )
        .unwrap()
    }

    #[test]
    fn manifest_matches_documented_schema() {
        let dir = tempfile::tempdir().unwrap();
        save_with_layout(&two_samples(), dir.path(), Layout::PerSample).unwrap();
        let text = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        let golden = r#"{
  "version": 1,
  "classes": [
    "hbar",
    "vbar"
  ],
  "domains": [
    "a",
    "b"
  ],
  "samples": [
    {
      "file": "samples/000000.tfc",
      "class": 1,
      "domain": 0
    },
    {
      "file": "samples/000001.tfc",
      "class": 0,
      "domain": 1
    }
  ]
}
"#;
        assert_eq!(text, golden);
    }

    #[test]
    fn both_layouts_roundtrip_bitwise() {
        let mut spec = SyntheticSpec::amplitude_shift(2);
        spec.per_cell = 3;
        let ds = generate(&spec).unwrap();
        for layout in [Layout::PerSample, Layout::PackedByDomain] {
            let dir = tempfile::tempdir().unwrap();
            save_with_layout(&ds, dir.path(), layout).unwrap();
            let back = load(dir.path()).unwrap();
            assert_eq!(back, ds, "{layout:?}");
            let bits = |d: &DomainDataset| d.images.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&back), bits(&ds));
        }
    }

    #[test]
    fn missing_tensor_file_is_named() {
        let dir = tempfile::tempdir().unwrap();
        save_with_layout(&two_samples(), dir.path(), Layout::PerSample).unwrap();
        fs::remove_file(dir.path().join("samples/000001.tfc")).unwrap();
        let err = load(dir.path()).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
        assert!(err.to_string().contains("000001.tfc"), "{err}");
    }

    #[test]
    fn truncated_payload_reports_file_and_offset() {
        let dir = tempfile::tempdir().unwrap();
        save(&two_samples(), dir.path()).unwrap();
        let f = dir.path().join("domain_1.tfc");
        let bytes = fs::read(&f).unwrap();
        fs::write(&f, &bytes[..bytes.len() - 2]).unwrap();
        let err = load(dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("domain_1.tfc") && msg.contains("offset 22"), "{msg}");
    }

    #[test]
    fn extra_records_rejected() {
        let mut spec = SyntheticSpec::amplitude_shift(2);
        spec.per_cell = 2;
        let dir = tempfile::tempdir().unwrap();
        save(&generate(&spec).unwrap(), dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let mut m: DatasetManifest = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        m.samples.pop();
        fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
        assert!(load(dir.path()).is_err());
    }
}
