use mcfnet_tensor::resize_bilinear_plane;
use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::volume::{LabelVolume, Modality, Volume};
use crate::{Error, Result};

/// Intensity normalization and resampling settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NormalizationConfig {
    pub ct_window_level: f64,
    pub ct_window_width: f64,
    pub lower_percentile: f64,
    pub upper_percentile: f64,
    pub image_size: usize,
    /// Drop slices whose mask is entirely background.
    pub foreground_only: bool,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        Self {
            ct_window_level: 40.0,
            ct_window_width: 400.0,
            lower_percentile: 0.5,
            upper_percentile: 99.5,
            image_size: 256,
            foreground_only: true,
        }
    }
}

/// One normalized axial slice with its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceSample {
    pub image: Array2<f64>,
    pub mask: Array2<u8>,
    pub case_id: String,
    pub slice_index: usize,
}

/// Percentile of unsorted data with linear interpolation.
pub fn percentile(values: &mut [f64], pct: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let rank = (pct / 100.0).clamp(0.0, 1.0) * (values.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(values.len() - 1);
    values[lo] + (rank - lo as f64) * (values[hi] - values[lo])
}

/// Min-max scaling to [0, 1]; constant input gives zeros.
pub fn min_max(x: &Array2<f64>) -> Array2<f64> {
    let lo = x.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Array2::zeros(x.dim());
    }
    x.mapv(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
}

/// Modality-specific intensity normalization of one slice.
pub fn normalize_slice(x: ArrayView2<'_, f64>, modality: Modality, cfg: &NormalizationConfig) -> Array2<f64> {
    let clipped = match modality {
        Modality::Ct => {
            let lo = cfg.ct_window_level - cfg.ct_window_width / 2.0;
            let hi = cfg.ct_window_level + cfg.ct_window_width / 2.0;
            x.mapv(|v| v.clamp(lo, hi))
        }
        Modality::Mr | Modality::Pet => {
            let mut vals: Vec<f64> = x.iter().copied().collect();
            let lo = percentile(&mut vals, cfg.lower_percentile);
            let hi = percentile(&mut vals, cfg.upper_percentile);
            x.mapv(|v| v.clamp(lo, hi))
        }
    };
    min_max(&clipped)
}

/// Bilinear resize of a 2-D image.
pub fn resize_image(x: ArrayView2<'_, f64>, oh: usize, ow: usize) -> Array2<f64> {
    let (h, w) = x.dim();
    let src: Vec<f64> = x.iter().copied().collect();
    Array2::from_shape_vec((oh, ow), resize_bilinear_plane(&src, h, w, oh, ow)).expect("resize shape")
}

/// Nearest-neighbour resize of a label map (half-pixel centres).
pub fn resize_labels(x: ArrayView2<'_, u8>, oh: usize, ow: usize) -> Array2<u8> {
    let (h, w) = x.dim();
    let pick = |t: usize, src: usize, dst: usize| (((t as f64 + 0.5) * src as f64 / dst as f64).floor() as usize).min(src - 1);
    Array2::from_shape_fn((oh, ow), |(i, j)| x[[pick(i, h, oh), pick(j, w, ow)]])
}

/// Axial slices of a volume, normalized and resized to the configured size.
pub fn slice_and_normalize(
    v: &Volume,
    labels: &LabelVolume,
    case_id: &str,
    cfg: &NormalizationConfig,
) -> Result<Vec<SliceSample>> {
    if v.voxels.dim() != labels.labels.dim() {
        return Err(Error::Shape(format!("image {:?} vs labels {:?}", v.voxels.dim(), labels.labels.dim())));
    }
    if cfg.image_size == 0 {
        return Err(Error::Config("image_size must be positive".into()));
    }
    let n = cfg.image_size;
    let mut out = Vec::new();
    for (z, (img, lab)) in v.voxels.axis_iter(Axis(0)).zip(labels.labels.axis_iter(Axis(0))).enumerate() {
        if cfg.foreground_only && lab.iter().all(|&l| l == 0) {
            continue;
        }
        let norm = normalize_slice(img, v.modality, cfg);
        out.push(SliceSample {
            image: resize_image(norm.view(), n, n),
            mask: resize_labels(lab, n, n),
            case_id: case_id.to_string(),
            slice_index: z,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn vol(voxels: Array3<f64>, modality: Modality) -> Volume {
        Volume::new(voxels, [1.0; 3], modality).unwrap()
    }

    #[test]
    fn constant_slice_becomes_zeros() {
        let v = vol(Array3::from_elem((1, 8, 8), 123.0), Modality::Mr);
        let l = LabelVolume { labels: Array3::from_elem((1, 8, 8), 1), spacing: [1.0; 3] };
        let s = slice_and_normalize(&v, &l, "c", &NormalizationConfig { image_size: 4, ..Default::default() }).unwrap();
        assert!(s[0].image.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn large_ct_slice_resizes_and_keeps_labels() {
        let v = vol(Array3::from_shape_fn((1, 512, 512), |(_, i, j)| (i as f64 - j as f64) * 3.0), Modality::Ct);
        let labels = Array3::from_shape_fn((1, 512, 512), |(_, i, j)| ((i / 100 + j / 150) % 4) as u8);
        let l = LabelVolume { labels: labels.clone(), spacing: [1.0; 3] };
        let s = slice_and_normalize(&v, &l, "c", &NormalizationConfig::default()).unwrap();
        assert_eq!(s[0].image.dim(), (256, 256));
        assert!(s[0].image.iter().all(|&x| (0.0..=1.0).contains(&x)));
        let before: BTreeSet<u8> = labels.iter().copied().collect();
        let after: BTreeSet<u8> = s[0].mask.iter().copied().collect();
        assert_eq!(before, after);
    }

    #[test]
    fn foreground_filter_keeps_labelled_slices() {
        let v = vol(Array3::from_shape_fn((100, 4, 4), |(z, i, _)| (z + i) as f64), Modality::Pet);
        let labels = Array3::from_shape_fn((100, 4, 4), |(z, i, j)| u8::from(z < 30 && i == j));
        let l = LabelVolume { labels, spacing: [1.0; 3] };
        let cfg = NormalizationConfig { image_size: 4, ..Default::default() };
        assert_eq!(slice_and_normalize(&v, &l, "c", &cfg).unwrap().len(), 30);
        let all = NormalizationConfig { foreground_only: false, ..cfg };
        assert_eq!(slice_and_normalize(&v, &l, "c", &all).unwrap().len(), 100);
        let bad = LabelVolume { labels: Array3::zeros((99, 4, 4)), spacing: [1.0; 3] };
        assert!(slice_and_normalize(&v, &bad, "c", &all).is_err());
    }

    proptest! {
        #[test]
        fn normalized_values_in_unit_interval(
            vals in proptest::collection::vec(-2000.0f64..3000.0, 36),
            ct in any::<bool>(),
            size in 1usize..12,
        ) {
            let x = Array2::from_shape_vec((6, 6), vals).unwrap();
            let m = if ct { Modality::Ct } else { Modality::Mr };
            let n = normalize_slice(x.view(), m, &NormalizationConfig::default());
            let r = resize_image(n.view(), size, size + 1);
            prop_assert!(r.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn nearest_resize_introduces_no_labels(
            vals in proptest::collection::vec(0u8..6, 49),
            oh in 1usize..20,
            ow in 1usize..20,
        ) {
            let x = Array2::from_shape_vec((7, 7), vals).unwrap();
            let before: BTreeSet<u8> = x.iter().copied().collect();
            let r = resize_labels(x.view(), oh, ow);
            prop_assert!(r.iter().all(|l| before.contains(l)));
        }
    }
}
