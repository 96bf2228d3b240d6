//! On-disk dataset directory:
//!
//! ```text
//! dataset.toml          class names and image size
//! manifest.csv          case_id,partition,slices
//! images/<case>_<slice>.png   16-bit grayscale, value / 65535 in [0, 1]
//! masks/<case>_<slice>.png    8-bit labels
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::normalize::SliceSample;
use crate::data::split::SplitManifest;
use crate::data::volume::{png_files, read_png, ClassOrder};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetMeta {
    classes: Vec<String>,
    image_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ManifestRow {
    case_id: String,
    partition: String,
    slices: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: ClassOrder,
    pub samples: Vec<SliceSample>,
    /// Partition name per case id.
    pub partitions: BTreeMap<String, String>,
}

impl Dataset {
    /// Wraps samples; cases missing from `split` are put in `train`.
    pub fn new(classes: ClassOrder, samples: Vec<SliceSample>, split: Option<&SplitManifest>) -> Result<Self> {
        let n = classes.len();
        let size = samples.first().map(|s| s.image.dim());
        for s in &samples {
            if s.image.dim() != s.mask.dim() || Some(s.image.dim()) != size {
                return Err(Error::Shape(format!("sample {} slice {} has inconsistent size", s.case_id, s.slice_index)));
            }
            if let Some(&l) = s.mask.iter().find(|&&l| l as usize >= n) {
                return Err(Error::InvalidArgument(format!("label {l} in case {} exceeds {n} classes", s.case_id)));
            }
        }
        let mut partitions = BTreeMap::new();
        for s in &samples {
            let part = split.and_then(|m| m.partition_of(&s.case_id)).unwrap_or("train");
            partitions.insert(s.case_id.clone(), part.to_string());
        }
        Ok(Self { classes, samples, partitions })
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn image_size(&self) -> Option<(usize, usize)> {
        self.samples.first().map(|s| s.image.dim())
    }

    /// Case ids in sorted order.
    pub fn cases(&self) -> Vec<String> {
        self.partitions.keys().cloned().collect()
    }

    pub fn samples_in(&self, partition: &str) -> Vec<&SliceSample> {
        self.samples.iter().filter(|s| self.partitions.get(&s.case_id).is_some_and(|p| p == partition)).collect()
    }

    /// Samples grouped by case, each group sorted by slice index.
    pub fn by_case<'a>(samples: &[&'a SliceSample]) -> BTreeMap<String, Vec<&'a SliceSample>> {
        let mut out: BTreeMap<String, Vec<&SliceSample>> = BTreeMap::new();
        for s in samples {
            out.entry(s.case_id.clone()).or_default().push(s);
        }
        for v in out.values_mut() {
            v.sort_by_key(|s| s.slice_index);
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let images = dir.join("images");
        let masks = dir.join("masks");
        for d in [dir, &images, &masks] {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        let (h, _) = self.image_size().unwrap_or((0, 0));
        let meta = DatasetMeta { classes: self.classes.names.clone(), image_size: h };
        let meta_path = dir.join("dataset.toml");
        let text = toml::to_string(&meta).map_err(|e| Error::format(&meta_path, e))?;
        std::fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;

        for s in &self.samples {
            let name = sample_file_name(&s.case_id, s.slice_index);
            let (h, w) = s.image.dim();
            let px: Vec<u16> = s.image.iter().map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16).collect();
            let img = image::ImageBuffer::<image::Luma<u16>, _>::from_raw(w as u32, h as u32, px).expect("buffer size");
            let p = images.join(&name);
            img.save(&p).map_err(|e| Error::format(&p, e))?;
            let m = image::GrayImage::from_raw(w as u32, h as u32, s.mask.iter().copied().collect()).expect("buffer size");
            let p = masks.join(&name);
            m.save(&p).map_err(|e| Error::format(&p, e))?;
        }

        let path = dir.join("manifest.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::format(&path, e))?;
        for (case, part) in &self.partitions {
            let slices = self.samples.iter().filter(|s| &s.case_id == case).count();
            w.serialize(ManifestRow { case_id: case.clone(), partition: part.clone(), slices })
                .map_err(|e| Error::format(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let meta_path = dir.join("dataset.toml");
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: DatasetMeta = toml::from_str(&text).map_err(|e| Error::format(&meta_path, e))?;
        let classes = ClassOrder::new(meta.classes).map_err(|e| Error::format(&meta_path, e))?;

        let path = dir.join("manifest.csv");
        let mut r = csv::Reader::from_path(&path).map_err(|e| Error::format(&path, e))?;
        let rows: Vec<ManifestRow> =
            r.deserialize().collect::<std::result::Result<_, _>>().map_err(|e| Error::format(&path, e))?;

        let mut samples = Vec::new();
        let mut partitions = BTreeMap::new();
        let image_dir = dir.join("images");
        let files = png_files(&image_dir)?;
        for row in rows {
            let prefix = format!("{}_", row.case_id);
            let mut found = 0;
            for f in &files {
                let stem = f.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
                let Some(idx) = stem.strip_prefix(&prefix).and_then(|i| i.parse::<usize>().ok()) else { continue };
                let img = read_png(f)?;
                let mask_path = dir.join("masks").join(f.file_name().expect("file name"));
                let mask = read_png(&mask_path)?;
                if mask.dim() != img.dim() {
                    return Err(Error::format(&mask_path, "mask and image sizes differ"));
                }
                samples.push(SliceSample {
                    image: img.mapv(|v| v / 65535.0),
                    mask: mask.mapv(|v| v as u8),
                    case_id: row.case_id.clone(),
                    slice_index: idx,
                });
                found += 1;
            }
            if found != row.slices {
                return Err(Error::format(&path, format!("case {} lists {} slices, found {found}", row.case_id, row.slices)));
            }
            partitions.insert(row.case_id, row.partition);
        }
        samples.sort_by(|a, b| (&a.case_id, a.slice_index).cmp(&(&b.case_id, b.slice_index)));
        let ds = Self::new(classes, samples, None)?;
        Ok(Self { partitions, ..ds })
    }
}

pub fn sample_file_name(case_id: &str, slice: usize) -> String {
    format!("{case_id}_{slice:04}.png")
}

/// Stacks sample masks into a `(slices, h, w)` label volume.
pub fn stack_masks(masks: &[&Array2<u8>]) -> ndarray::Array3<u8> {
    let views: Vec<_> = masks.iter().map(|m| m.view()).collect();
    ndarray::stack(ndarray::Axis(0), &views).expect("equal mask sizes")
}
