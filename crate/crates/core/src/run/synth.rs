//! Synthetic dataset on disk: PNG pairs plus a manifest with a 7:1:2 split.

use std::path::Path;

use crate::data::manifest::{DatasetManifest, Role, SampleRecord};
use crate::data::raster::{write_mask, write_rgb};
use crate::data::synth::{synth_generate, SynthClass};
use crate::error::{Error, Result};

/// Role of item `i` of `n`: the first ~70% train, the next ~10% val, the rest test.
pub fn split_role(i: usize, n: usize) -> Role {
    let n_train = (0.7 * n as f64).round() as usize;
    let n_val = (0.1 * n as f64).round() as usize;
    if i < n_train {
        Role::Train
    } else if i < n_train + n_val {
        Role::Val
    } else {
        Role::Test
    }
}

/// Write `count` samples to `dir` and return the saved manifest (`manifest.json`).
pub fn write_dataset(dir: &Path, seed: u64, count: usize, class: SynthClass, force: bool) -> Result<DatasetManifest> {
    if dir.exists() {
        let non_empty = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .next()
            .is_some();
        if non_empty && !force {
            return Err(Error::Config(format!(
                "{} exists and is not empty (use --force to overwrite)",
                dir.display()
            )));
        }
    }
    let samples = synth_generate(seed, count, class)?;
    for sub in ["images", "masks"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let mut records = Vec::with_capacity(count);
    for (i, s) in samples.iter().enumerate() {
        let id = format!("{i:04}");
        let image = Path::new("images").join(format!("{id}.png"));
        let mask = Path::new("masks").join(format!("{id}.png"));
        write_rgb(dir.join(&image), &s.image)?;
        write_mask(dir.join(&mask), &s.mask)?;
        records.push(SampleRecord {
            id,
            image,
            mask,
            ignore: None,
            role: split_role(i, count),
        });
    }
    let manifest = DatasetManifest {
        name: format!("synth-{}-{seed}", class.name()),
        class_name: class.name().to_string(),
        samples: records,
        base_dir: dir.to_path_buf(),
    };
    manifest.save(dir.join("manifest.json"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forty_split() {
        let roles: Vec<Role> = (0..40).map(|i| split_role(i, 40)).collect();
        let n = |r| roles.iter().filter(|&&x| x == r).count();
        assert_eq!((n(Role::Train), n(Role::Val), n(Role::Test)), (28, 4, 8));
    }
}
