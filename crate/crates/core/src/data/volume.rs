use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, Axis};
use nifti::{IntoNdArray, NiftiObject, ReaderOptions};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    #[default]
    Ct,
    Mr,
    Pet,
}

/// Scalar volume in `(depth, height, width)` order with spacing in mm.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub voxels: Array3<f64>,
    pub spacing: [f64; 3],
    pub modality: Modality,
}

impl Volume {
    pub fn new(voxels: Array3<f64>, spacing: [f64; 3], modality: Modality) -> Result<Self> {
        if voxels.iter().len() == 0 {
            return Err(Error::InvalidArgument(format!("volume has an empty axis: {:?}", voxels.shape())));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument(format!("spacing must be positive, got {spacing:?}")));
        }
        Ok(Self { voxels, spacing, modality })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.voxels.dim()
    }

    /// Voxel values as integer labels; errors on negative, fractional or >255 values.
    pub fn to_labels(&self) -> Result<Array3<u8>> {
        let mut out = Array3::zeros(self.voxels.dim());
        for (o, &v) in out.iter_mut().zip(self.voxels.iter()) {
            if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
                return Err(Error::InvalidArgument(format!("label value {v} is not an integer in 0..=255")));
            }
            *o = v as u8;
        }
        Ok(out)
    }
}

/// Ordered class names; index 0 is background.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassOrder {
    pub names: Vec<String>,
}

impl ClassOrder {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::InvalidArgument("class list is empty".into()));
        }
        for (i, n) in names.iter().enumerate() {
            if names[..i].contains(n) {
                return Err(Error::InvalidArgument(format!("duplicate class name {n}")));
            }
        }
        Ok(Self { names })
    }

    /// Background followed by `foreground`.
    pub fn with_background(foreground: &[&str]) -> Result<Self> {
        Self::new(std::iter::once("background").chain(foreground.iter().copied()).map(String::from).collect())
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Integer label volume.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    pub labels: Array3<u8>,
    pub spacing: [f64; 3],
}

/// Reads a NIfTI file (`.nii`, `.nii.gz`) or a directory of PNG slices.
///
/// NIfTI axes `(x, y, z)` become `(depth, height, width) = (z, y, x)`, and
/// the header spacing is reordered the same way. PNG slices are read in
/// file-name order with unit spacing and raw (unscaled) pixel values.
pub fn load_volume(path: &Path, modality: Modality) -> Result<Volume> {
    if path.is_dir() {
        return load_png_dir(path, modality);
    }
    let obj = ReaderOptions::new().read_file(path).map_err(|e| Error::format(path, e))?;
    let pix = obj.header().pixdim;
    let data = obj.into_volume().into_ndarray::<f64>().map_err(|e| Error::format(path, e))?;
    let data = match data.ndim() {
        2 => data.insert_axis(Axis(2)),
        3 => data,
        4 if data.shape()[3] == 1 => data.index_axis_move(Axis(3), 0),
        n => return Err(Error::format(path, format!("expected a 3-D volume, got rank {n}"))),
    };
    let voxels = data
        .into_dimensionality::<ndarray::Ix3>()
        .map_err(|e| Error::format(path, e))?
        .permuted_axes([2, 1, 0])
        .as_standard_layout()
        .into_owned();
    let spacing = [pix[3], pix[2], pix[1]].map(|s| if s > 0.0 { s as f64 } else { 1.0 });
    Volume::new(voxels, spacing, modality).map_err(|e| Error::format(path, e))
}

/// Sorted PNG files in a directory.
pub fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    files.sort();
    Ok(files)
}

/// One grayscale PNG as raw values (8- or 16-bit).
pub fn read_png(path: &Path) -> Result<Array2<f64>> {
    let img = image::open(path).map_err(|e| Error::format(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        image::DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(f64::from).collect(),
        image::DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(f64::from).collect(),
        other => other.to_luma16().into_raw().into_iter().map(f64::from).collect(),
    };
    Array2::from_shape_vec((h, w), data).map_err(|e| Error::format(path, e))
}

fn load_png_dir(dir: &Path, modality: Modality) -> Result<Volume> {
    let files = png_files(dir)?;
    if files.is_empty() {
        return Err(Error::format(dir, "no PNG slices found"));
    }
    let slices = files.iter().map(|f| read_png(f)).collect::<Result<Vec<_>>>()?;
    let dim = slices[0].dim();
    if let Some((f, s)) = files.iter().zip(&slices).find(|(_, s)| s.dim() != dim) {
        return Err(Error::format(f, format!("slice is {:?}, expected {dim:?}", s.dim())));
    }
    let views: Vec<_> = slices.iter().map(|s| s.view()).collect();
    let voxels = ndarray::stack(Axis(0), &views).map_err(|e| Error::format(dir, e))?;
    Volume::new(voxels, [1.0; 3], modality)
}

/// Combines binary structure volumes into one label volume.
///
/// `label_volumes[k]` becomes label `k + 1`; on overlap the later structure
/// wins. The order must list background first.
pub fn merge_labels(label_volumes: &[Volume], order: &ClassOrder) -> Result<LabelVolume> {
    if label_volumes.len() + 1 != order.len() {
        return Err(Error::InvalidArgument(format!(
            "{} structure volumes for {} foreground classes",
            label_volumes.len(),
            order.len() - 1
        )));
    }
    let first = label_volumes.first().ok_or_else(|| Error::InvalidArgument("no structure volumes".into()))?;
    let shape = first.voxels.dim();
    let mut labels = Array3::<u8>::zeros(shape);
    for (k, v) in label_volumes.iter().enumerate() {
        if v.voxels.dim() != shape {
            return Err(Error::Shape(format!("structure {k} is {:?}, expected {shape:?}", v.voxels.dim())));
        }
        if let Some(x) = v.voxels.iter().find(|&&x| x != 0.0 && x != 1.0) {
            return Err(Error::InvalidArgument(format!("structure {} is not binary (value {x})", order.names[k + 1])));
        }
        let label = u8::try_from(k + 1).map_err(|_| Error::InvalidArgument("more than 255 classes".into()))?;
        ndarray::Zip::from(&mut labels).and(&v.voxels).for_each(|l, &x| {
            if x == 1.0 {
                *l = label;
            }
        });
    }
    Ok(LabelVolume { labels, spacing: first.spacing })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary(shape: (usize, usize, usize), on: &[(usize, usize, usize)]) -> Volume {
        let mut v = Array3::zeros(shape);
        for &i in on {
            v[i] = 1.0;
        }
        Volume::new(v, [1.0; 3], Modality::Ct).unwrap()
    }

    #[test]
    fn merge_disjoint_and_overlap() {
        let order = ClassOrder::with_background(&["a", "b"]).unwrap();
        let a = binary((1, 2, 2), &[(0, 0, 0), (0, 0, 1)]);
        let b = binary((1, 2, 2), &[(0, 0, 1), (0, 1, 1)]);
        let m = merge_labels(&[a, b], &order).unwrap();
        assert_eq!(m.labels.iter().copied().collect::<Vec<_>>(), vec![1, 2, 0, 2]);
    }

    #[test]
    fn merge_six_structures_in_order() {
        let names = ["brainstem", "mandible", "parotid_l", "parotid_r", "submandibular_l", "submandibular_r"];
        let order = ClassOrder::with_background(&names).unwrap();
        let vols: Vec<Volume> = (0..6).map(|k| binary((1, 1, 6), &[(0, 0, k)])).collect();
        let m = merge_labels(&vols, &order).unwrap();
        assert_eq!(m.labels.iter().copied().collect::<Vec<_>>(), vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(order.names[1], "brainstem");
    }

    #[test]
    fn merge_rejects_shape_mismatch_and_non_binary() {
        let order = ClassOrder::with_background(&["a", "b"]).unwrap();
        assert!(merge_labels(&[binary((1, 2, 2), &[]), binary((1, 3, 2), &[])], &order).is_err());
        let mut c = binary((1, 2, 2), &[]);
        c.voxels[[0, 0, 0]] = 2.0;
        assert!(merge_labels(&[binary((1, 2, 2), &[]), c], &order).is_err());
    }

    #[test]
    fn class_order_rejects_duplicates() {
        assert!(ClassOrder::with_background(&["a", "a"]).is_err());
    }

    #[test]
    fn nifti_round_trip_reorders_axes_and_spacing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.nii.gz");
        // (x, y, z) = (4, 3, 2)
        let data = ndarray::Array3::from_shape_fn((4, 3, 2), |(x, y, z)| (x + 10 * y + 100 * z) as f32);
        let mut header = nifti::NiftiHeader::default();
        header.pixdim = [1.0, 1.0, 1.0, 3.0, 1.0, 1.0, 1.0, 1.0];
        nifti::writer::WriterOptions::new(&path).reference_header(&header).write_nifti(&data).unwrap();
        let v = load_volume(&path, Modality::Ct).unwrap();
        assert_eq!(v.shape(), (2, 3, 4));
        assert_eq!(v.spacing, [3.0, 1.0, 1.0]);
        assert_eq!(v.voxels[[1, 2, 3]], 3.0 + 20.0 + 100.0);
    }

    #[test]
    fn png_directory_loading() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..3 {
            image::GrayImage::from_pixel(5, 4, image::Luma([i as u8 * 7])).save(dir.path().join(format!("s{i}.png"))).unwrap();
        }
        let v = load_volume(dir.path(), Modality::Mr).unwrap();
        assert_eq!(v.shape(), (3, 4, 5));
        assert_eq!(v.spacing, [1.0; 3]);
        assert_eq!(v.voxels[[2, 0, 0]], 14.0);
        image::GrayImage::new(6, 6).save(dir.path().join("s9.png")).unwrap();
        assert!(load_volume(dir.path(), Modality::Mr).is_err());
    }
}
