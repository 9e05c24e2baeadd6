//! Model files: a JSON manifest next to a little-endian f64 parameter blob.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Arch, Model};
use crate::error::{Error, Result};
use crate::grid::{self, raster_stem, with_suffix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub arch: Arch,
    pub shapes: Vec<(String, Vec<usize>)>,
    pub seed: u64,
    /// Scaler file the model expects its inputs to be scaled with.
    pub scaler: Option<String>,
    pub columns: Vec<String>,
    pub blob: String,
}

impl Model {
    /// Write `<stem>.json` and `<stem>.f64`.
    pub fn save(&self, path: impl AsRef<Path>, seed: u64, scaler: Option<&str>, columns: &[String]) -> Result<()> {
        let json = with_suffix(&raster_stem(path.as_ref()), "json");
        let blob = with_suffix(&raster_stem(path.as_ref()), "f64");
        let manifest = ModelManifest {
            arch: self.arch.clone(),
            shapes: self.arch.blocks(),
            seed,
            scaler: scaler.map(String::from),
            columns: columns.to_vec(),
            blob: blob.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        };
        let bytes: Vec<u8> = self.params.iter().flat_map(|v| v.to_le_bytes()).collect();
        if let Some(parent) = blob.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&blob, bytes).map_err(|e| Error::io(&blob, e))?;
        grid::write_json(&json, &manifest)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Model, ModelManifest)> {
        let json = with_suffix(&raster_stem(path.as_ref()), "json");
        let manifest: ModelManifest = grid::read_json(&json)?;
        if manifest.shapes != manifest.arch.blocks() {
            return Err(Error::Data(format!("{}: shapes disagree with the architecture", json.display())));
        }
        let blob: PathBuf = json.with_file_name(&manifest.blob);
        let bytes = fs::read(&blob).map_err(|e| Error::io(&blob, e))?;
        let mut model = Model::zeros(manifest.arch.clone())?;
        if bytes.len() != model.params.len() * 8 {
            return Err(Error::Data(format!(
                "{}: expected {} parameters, found {} bytes",
                blob.display(),
                model.params.len(),
                bytes.len()
            )));
        }
        for (p, b) in model.params.iter_mut().zip(bytes.chunks_exact(8)) {
            *p = f64::from_le_bytes(b.try_into().expect("8-byte chunk"));
        }
        Ok((model, manifest))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let m = Model::init(Arch::lstm(3, 2), 5).unwrap();
        let cols: Vec<String> = vec!["a".into()];
        m.save(dir.path().join("model"), 5, Some("scaler.json"), &cols).unwrap();
        let (back, manifest) = Model::load(dir.path().join("model")).unwrap();
        assert_eq!(back, m);
        assert_eq!(manifest.seed, 5);
        assert_eq!(manifest.scaler.as_deref(), Some("scaler.json"));
        assert_eq!(manifest.shapes[0], ("W_x".to_string(), vec![3, 8]));
        fs::write(dir.path().join("model.f64"), [0u8; 8]).unwrap();
        assert!(Model::load(dir.path().join("model")).is_err());
    }
}
