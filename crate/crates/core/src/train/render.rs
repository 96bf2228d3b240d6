//! PNG overlays of predictions and loss curves.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use ndarray::Array2;

use crate::data::SliceSample;
use crate::metrics::boundary;
use crate::train::checkpoint::Checkpoint;
use crate::train::eval::predict;
use crate::train::log::{read_log, EpochRecord};
use crate::{Error, Result};

const GT_COLOR: Rgb<u8> = Rgb([0, 220, 0]);
const PRED_COLOR: Rgb<u8> = Rgb([230, 30, 30]);
const CURVE_SIZE: (u32, u32) = (640, 400);
const MARGIN: u32 = 40;

/// Foreground contours of a label map (any non-background label).
fn contour(mask: &Array2<u8>) -> Array2<bool> {
    let mut out = Array2::from_elem(mask.dim(), false);
    for c in mask.iter().copied().filter(|&l| l > 0).collect::<std::collections::BTreeSet<_>>() {
        let b = boundary(&mask.mapv(|l| l == c).into_dyn().view());
        for (o, &v) in out.iter_mut().zip(b.iter()) {
            *o |= v;
        }
    }
    out
}

/// Grayscale image with ground-truth contours in green and predicted
/// contours in red drawn on top.
pub fn overlay(image: &Array2<f64>, gt: &Array2<u8>, pred: &Array2<u8>) -> RgbImage {
    let (h, w) = image.dim();
    let (gc, pc) = (contour(gt), contour(pred));
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (y, x) = (y as usize, x as usize);
        if pc[[y, x]] {
            PRED_COLOR
        } else if gc[[y, x]] {
            GT_COLOR
        } else {
            let v = (image[[y, x]].clamp(0.0, 1.0) * 255.0).round() as u8;
            Rgb([v, v, v])
        }
    })
}

fn draw_line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).max(1);
    for i in 0..=steps {
        let x = x0 + (x1 - x0) * i / steps;
        let y = y0 + (y1 - y0) * i / steps;
        if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// Epoch-loss polyline on white with plain axes. The vertical axis spans
/// the observed loss range.
pub fn loss_curve(records: &[EpochRecord]) -> RgbImage {
    let (w, h) = CURVE_SIZE;
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    let black = Rgb([0, 0, 0]);
    let (left, bottom, right, top) = (MARGIN as i64, (h - MARGIN) as i64, (w - MARGIN / 2) as i64, (MARGIN / 2) as i64);
    draw_line(&mut img, (left, bottom), (right, bottom), black);
    draw_line(&mut img, (left, bottom), (left, top), black);
    let losses: Vec<f64> = records.iter().map(|r| r.loss).filter(|l| l.is_finite()).collect();
    if losses.is_empty() {
        return img;
    }
    let lo = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = losses.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let n = losses.len().max(2) - 1;
    let pts: Vec<(i64, i64)> = losses
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let x = left + (right - left) * i as i64 / n as i64;
            let y = bottom - ((l - lo) / span * (bottom - top) as f64).round() as i64;
            (x, y)
        })
        .collect();
    if pts.len() == 1 {
        draw_line(&mut img, pts[0], pts[0], PRED_COLOR);
    }
    for p in pts.windows(2) {
        draw_line(&mut img, p[0], p[1], PRED_COLOR);
    }
    img
}

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save(path).map_err(|e| Error::format(path, e))
}

/// Writes one overlay per sample and, when `log` is given, a loss curve.
/// Returns the written paths.
pub fn render_outputs(ckpt: &Checkpoint, samples: &[&SliceSample], out_dir: &Path, log: Option<&Path>) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (net, store) = ckpt.restore()?;
    let images: Vec<&Array2<f64>> = samples.iter().map(|s| &s.image).collect();
    let preds = predict(&net, &store, &images)?;
    let mut written = Vec::with_capacity(samples.len() + 1);
    for (s, p) in samples.iter().zip(&preds) {
        let path = out_dir.join(format!("{}_{:04}_overlay.png", s.case_id, s.slice_index));
        save(&overlay(&s.image, &s.mask, p), &path)?;
        written.push(path);
    }
    if let Some(log) = log {
        let path = out_dir.join("loss_curve.png");
        save(&loss_curve(&read_log(log)?), &path)?;
        written.push(path);
    }
    Ok(written)
}
