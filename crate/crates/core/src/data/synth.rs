//! Synthetic segmentation data: one non-overlapping ellipse or rectangle
//! per foreground class on a flat background.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::normalize::SliceSample;
use crate::{Error, Result};

const PLACEMENT_ATTEMPTS: usize = 2000;
/// Minimum empty band between shape bounding boxes.
const GAP: usize = 2;

/// Rendered intensity of a label; background is darkest.
pub fn label_intensity(label: u8, classes: usize) -> f64 {
    0.1 + 0.9 * label as f64 / (classes - 1) as f64
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    top: usize,
    left: usize,
    h: usize,
    w: usize,
}

impl Rect {
    fn clear_of(&self, o: &Rect) -> bool {
        self.top + self.h + GAP <= o.top
            || o.top + o.h + GAP <= self.top
            || self.left + self.w + GAP <= o.left
            || o.left + o.w + GAP <= self.left
    }
}

/// One sample per case with `classes - 1` shapes, labels `1..classes`.
pub fn synth_dataset(n_cases: usize, classes: usize, image_size: usize, seed: u64) -> Result<Vec<SliceSample>> {
    if classes < 2 {
        return Err(Error::InvalidArgument(format!("need background plus at least one shape class, got {classes}")));
    }
    if classes > 256 {
        return Err(Error::InvalidArgument("at most 255 shape classes".into()));
    }
    let shapes = classes - 1;
    let min_side = (image_size / 8).max(5);
    let max_side = (image_size / 3).max(min_side);
    let needed = shapes * (min_side + GAP) * (min_side + GAP);
    if image_size < min_side + 2 || needed > image_size * image_size {
        return Err(Error::InvalidArgument(format!("{image_size}x{image_size} is too small for {shapes} shapes")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_cases).map(|c| synth_sample(&mut rng, c, classes, image_size, min_side, max_side)).collect()
}

fn synth_sample(
    rng: &mut ChaCha8Rng,
    case: usize,
    classes: usize,
    n: usize,
    min_side: usize,
    max_side: usize,
) -> Result<SliceSample> {
    let mut placed: Vec<Rect> = Vec::with_capacity(classes - 1);
    let mut mask = Array2::<u8>::zeros((n, n));
    for label in 1..classes as u8 {
        let mut rect = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let h = rng.random_range(min_side..=max_side.min(n - 2));
            let w = rng.random_range(min_side..=max_side.min(n - 2));
            let cand = Rect { top: rng.random_range(1..=n - 1 - h), left: rng.random_range(1..=n - 1 - w), h, w };
            if placed.iter().all(|p| cand.clear_of(p)) {
                rect = Some(cand);
                break;
            }
        }
        let r = rect.ok_or_else(|| {
            Error::InvalidArgument(format!("{n}x{n} is too small to place {} shapes", classes - 1))
        })?;
        let ellipse = rng.random_bool(0.5);
        let (cy, cx) = (r.top as f64 + (r.h as f64 - 1.0) / 2.0, r.left as f64 + (r.w as f64 - 1.0) / 2.0);
        let (ry, rx) = (r.h as f64 / 2.0, r.w as f64 / 2.0);
        for i in r.top..r.top + r.h {
            for j in r.left..r.left + r.w {
                let inside = !ellipse || {
                    let (dy, dx) = ((i as f64 - cy) / ry, (j as f64 - cx) / rx);
                    dy * dy + dx * dx <= 1.0
                };
                if inside {
                    mask[[i, j]] = label;
                }
            }
        }
        placed.push(r);
    }
    let image = mask.mapv(|l| label_intensity(l, classes));
    Ok(SliceSample { image, mask, case_id: format!("case{case:03}"), slice_index: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructor_contract() {
        let d = synth_dataset(16, 3, 256, 1).unwrap();
        assert_eq!(d.len(), 16);
        for s in &d {
            assert!(s.mask.iter().all(|&l| l < 3));
            for l in 1..3u8 {
                assert!(s.mask.iter().any(|&m| m == l));
            }
            for (m, v) in s.mask.iter().zip(s.image.iter()) {
                assert_eq!(*v, label_intensity(*m, 3));
            }
        }
        assert_eq!(d, synth_dataset(16, 3, 256, 1).unwrap());
    }

    #[test]
    fn too_small() {
        assert!(synth_dataset(1, 6, 8, 0).is_err());
        assert!(synth_dataset(1, 1, 64, 0).is_err());
    }
}
