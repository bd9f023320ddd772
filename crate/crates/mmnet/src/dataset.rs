//! On-disk dataset: `<root>/class_<id>/sample_<n>.ppm` with
//! `sample_<n>_mask.pgm`, indexed by `<root>/manifest.txt`
//! (`class_id<TAB>image_path<TAB>mask_path`, paths relative to the root).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mmnet_core::data::{generate_synthetic, Sample, SampleSource, SyntheticSpec};

use crate::error::RunError;
use crate::netpbm::{read_pgm, read_ppm, write_pgm, write_ppm};

pub const MANIFEST: &str = "manifest.txt";

/// Renders every sample of `spec` under `root` and writes the manifest.
/// Returns the number of samples written.
pub fn write_synthetic_dataset(spec: &SyntheticSpec, root: &Path) -> Result<usize, RunError> {
    spec.validate()?;
    let mut manifest = String::new();
    for class_id in 1..=spec.class_count {
        let dir = format!("class_{class_id}");
        std::fs::create_dir_all(root.join(&dir)).map_err(|e| RunError::io(&root.join(&dir), e))?;
        for n in 0..spec.samples_per_class {
            let s = generate_synthetic(spec, class_id, n)?;
            let image = format!("{dir}/sample_{n}.ppm");
            let mask = format!("{dir}/sample_{n}_mask.pgm");
            write_ppm(&s.image, &root.join(&image))?;
            write_pgm(&s.mask, &root.join(&mask))?;
            writeln!(manifest, "{class_id}\t{image}\t{mask}").expect("writing to a String");
        }
    }
    let path = root.join(MANIFEST);
    std::fs::write(&path, manifest).map_err(|e| RunError::io(&path, e))?;
    Ok(spec.class_count * spec.samples_per_class)
}

/// Manifest-backed [`SampleSource`]. Files are read when a sample is requested.
#[derive(Clone, Debug)]
pub struct DiskDataset {
    root: PathBuf,
    /// `classes[c - 1]` lists `(image, mask)` paths of class `c`.
    classes: Vec<Vec<(PathBuf, PathBuf)>>,
}

impl DiskDataset {
    pub fn open(root: &Path) -> Result<Self, RunError> {
        let path = root.join(MANIFEST);
        let text = std::fs::read_to_string(&path).map_err(|e| RunError::io(&path, e))?;
        let mut classes: Vec<Vec<(PathBuf, PathBuf)>> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = |what: &str| {
                RunError::Dataset(format!("{} line {}: {what}", path.display(), i + 1))
            };
            let cols: Vec<&str> = line.split('\t').collect();
            let [id, image, mask] = cols[..] else {
                return Err(bad("expected three tab-separated columns"));
            };
            let id: usize = id
                .parse()
                .map_err(|_| bad("class id is not a positive integer"))?;
            if id == 0 {
                return Err(bad("class ids start at 1"));
            }
            if classes.len() < id {
                classes.resize_with(id, Vec::new);
            }
            classes[id - 1].push((PathBuf::from(image), PathBuf::from(mask)));
        }
        if let Some(empty) = classes.iter().position(Vec::is_empty) {
            return Err(RunError::Dataset(format!(
                "class {} has no samples",
                empty + 1
            )));
        }
        if classes.is_empty() {
            return Err(RunError::Dataset(format!(
                "{} lists no samples",
                path.display()
            )));
        }
        Ok(Self {
            root: root.to_path_buf(),
            classes,
        })
    }

    fn load(&self, class_id: usize, index: usize) -> Result<Sample, RunError> {
        let (image, mask) = self
            .classes
            .get(class_id.wrapping_sub(1))
            .and_then(|c| c.get(index))
            .ok_or(mmnet_core::Error::ClassOutOfRange(class_id))?;
        let image = read_ppm(&self.root.join(image))?;
        let mask = read_pgm(&self.root.join(mask))?;
        if image.shape()[1..] != *mask.shape() {
            return Err(RunError::Dataset(format!(
                "class {class_id} sample {index}: image {:?} and mask {:?} differ in extent",
                image.shape(),
                mask.shape()
            )));
        }
        Ok(Sample { image, mask })
    }
}

impl SampleSource for DiskDataset {
    fn class_count(&self) -> usize {
        self.classes.len()
    }

    fn samples_in_class(&self, class_id: usize) -> usize {
        self.classes
            .get(class_id.wrapping_sub(1))
            .map_or(0, Vec::len)
    }

    fn sample(&self, class_id: usize, index: usize) -> mmnet_core::Result<Sample> {
        self.load(class_id, index).map_err(|e| match e {
            RunError::Core(c) => c,
            other => mmnet_core::Error::Sampling(other.to_string()),
        })
    }
}
