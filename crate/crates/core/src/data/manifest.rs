//! JSON dataset manifests and few-shot subset selection.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::raster;
use super::sample::SegmentationSample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    /// Paths are relative to the manifest's directory unless absolute.
    pub image: PathBuf,
    pub mask: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ignore: Option<PathBuf>,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub class_name: String,
    pub samples: Vec<SampleRecord>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)?;
        m.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Ids are unique, which makes the role splits disjoint.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for s in &self.samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Config(format!("sample id `{}` appears more than once", s.id)));
            }
        }
        Ok(())
    }

    pub fn split(&self, role: Role) -> Vec<&SampleRecord> {
        self.samples.iter().filter(|s| s.role == role).collect()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn load_record(&self, r: &SampleRecord) -> Result<SegmentationSample> {
        let image = raster::read_rgb(self.resolve(&r.image))?;
        let mask = raster::read_mask(self.resolve(&r.mask))?;
        let ignore = r
            .ignore
            .as_ref()
            .map(|p| raster::read_mask(self.resolve(p)))
            .transpose()?;
        SegmentationSample::new(image, mask, ignore, r.id.clone())
    }

    pub fn load_split(&self, role: Role) -> Result<Vec<SegmentationSample>> {
        self.split(role).into_iter().map(|r| self.load_record(r)).collect()
    }

    /// SHA-256 over the training ids in manifest order.
    pub fn train_digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for r in self.split(Role::Train) {
            h.update(r.id.as_bytes());
            h.update([0u8]);
        }
        h.finalize().into()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotSpec {
    pub k: usize,
    pub seed: u64,
    /// Explicit ids pin a published shot set; `k` must equal its length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ids: Option<Vec<String>>,
}

/// Deterministic k-subset of the training split, returned in manifest order.
pub fn few_shot_select<'a>(manifest: &'a DatasetManifest, spec: &FewShotSpec) -> Result<Vec<&'a SampleRecord>> {
    let train = manifest.split(Role::Train);
    if spec.k == 0 {
        return Err(Error::Config("few-shot k must be at least 1".into()));
    }
    if spec.k > train.len() {
        return Err(Error::Config(format!(
            "few-shot k = {} exceeds the {} available training samples",
            spec.k,
            train.len()
        )));
    }
    if let Some(ids) = &spec.ids {
        if ids.len() != spec.k {
            return Err(Error::Config(format!("{} pinned ids given for k = {}", ids.len(), spec.k)));
        }
        let wanted: HashSet<&str> = ids.iter().map(String::as_str).collect();
        let picked: Vec<_> = train.into_iter().filter(|r| wanted.contains(r.id.as_str())).collect();
        if picked.len() != spec.k {
            return Err(Error::Config("pinned few-shot ids not all found in the training split".into()));
        }
        return Ok(picked);
    }
    if spec.k == train.len() {
        return Ok(train);
    }
    let mut seed = manifest.train_digest();
    for (b, s) in seed.iter_mut().zip(spec.seed.to_le_bytes()) {
        *b ^= s;
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    let mut idx: Vec<usize> = (0..train.len()).collect();
    idx.shuffle(&mut rng);
    let mut chosen = idx[..spec.k].to_vec();
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|i| train[i]).collect())
}
