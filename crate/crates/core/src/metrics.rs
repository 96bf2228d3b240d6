//! Overlap and boundary-distance metrics on binary masks of any rank.
//!
//! Percent metrics follow these empty-set conventions: DSC is 100 when both
//! masks are empty; recall is 100 when the ground truth is empty and the
//! prediction agrees (else 0), and precision likewise on the prediction side.
//!
//! HD95 pools the nearest-boundary distances of both directions and takes
//! their 95th percentile with linear interpolation. A boundary voxel is a
//! foreground voxel with at least one background face neighbour; positions
//! outside the array count as background except along axes of extent 1.

use std::io::Write;
use std::path::Path;

use ndarray::{ArrayViewD, Axis, Dimension, IxDyn};

use crate::{Error, Result};

/// Confusion counts between a prediction and a ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

pub fn confusion(pred: &ArrayViewD<'_, bool>, gt: &ArrayViewD<'_, bool>) -> Result<Confusion> {
    if pred.shape() != gt.shape() {
        return Err(Error::Shape(format!("prediction {:?} vs ground truth {:?}", pred.shape(), gt.shape())));
    }
    let mut c = Confusion::default();
    for (&p, &g) in pred.iter().zip(gt.iter()) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(c)
}

impl Confusion {
    pub fn dsc(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            100.0
        } else {
            100.0 * (2 * self.tp) as f64 / denom as f64
        }
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_, self.fp == 0)
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp, self.fn_ == 0)
    }
}

fn ratio(num: usize, den: usize, other_side_empty: bool) -> f64 {
    match den {
        0 if other_side_empty => 100.0,
        0 => 0.0,
        _ => 100.0 * num as f64 / den as f64,
    }
}

/// Dice similarity in percent.
pub fn dsc(pred: &ArrayViewD<'_, bool>, gt: &ArrayViewD<'_, bool>) -> Result<f64> {
    Ok(confusion(pred, gt)?.dsc())
}

/// `(recall, precision)` in percent.
pub fn recall_precision(pred: &ArrayViewD<'_, bool>, gt: &ArrayViewD<'_, bool>) -> Result<(f64, f64)> {
    let c = confusion(pred, gt)?;
    Ok((c.recall(), c.precision()))
}

/// HD95 value; `flagged` marks the one-mask-empty penalty case.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hd95 {
    pub value: f64,
    pub flagged: bool,
}

/// Boundary voxels of a mask. When every axis has extent 1 the single
/// voxel counts as its own boundary.
pub fn boundary(mask: &ArrayViewD<'_, bool>) -> ndarray::ArrayD<bool> {
    let shape = mask.shape().to_vec();
    let mut out = ndarray::ArrayD::from_elem(IxDyn(&shape), false);
    let mut nb = vec![0usize; shape.len()];
    for (idx, &v) in mask.indexed_iter() {
        if !v {
            continue;
        }
        let idx = idx.slice().to_vec();
        let mut edge = false;
        'axes: for (a, &n) in shape.iter().enumerate() {
            if n == 1 {
                continue;
            }
            for step in [-1isize, 1] {
                let j = idx[a] as isize + step;
                if j < 0 || j >= n as isize {
                    edge = true;
                    break 'axes;
                }
                nb.copy_from_slice(&idx);
                nb[a] = j as usize;
                if !mask[IxDyn(&nb)] {
                    edge = true;
                    break 'axes;
                }
            }
        }
        out[IxDyn(&idx)] = edge || shape.iter().all(|&n| n == 1);
    }
    out
}

/// Exact squared Euclidean distance to the nearest `true` voxel, with
/// per-axis spacing. Voxels are `f64::INFINITY` when the seed set is empty.
pub fn squared_edt(seeds: &ArrayViewD<'_, bool>, spacing: &[f64]) -> ndarray::ArrayD<f64> {
    assert_eq!(spacing.len(), seeds.ndim(), "squared_edt: spacing rank");
    let mut d = seeds.mapv(|s| if s { 0.0 } else { f64::INFINITY });
    let longest = seeds.shape().iter().copied().max().unwrap_or(0);
    let mut f = vec![0.0; longest];
    let mut out = vec![0.0; longest];
    let mut v = vec![0usize; longest];
    let mut z = vec![0.0; longest + 1];
    for (axis, &sp) in spacing.iter().enumerate() {
        let w2 = sp * sp;
        for mut lane in d.lanes_mut(Axis(axis)) {
            let n = lane.len();
            for (i, x) in lane.iter().enumerate() {
                f[i] = *x;
            }
            lower_envelope(&f[..n], w2, &mut out[..n], &mut v, &mut z);
            for (x, o) in lane.iter_mut().zip(&out[..n]) {
                *x = *o;
            }
        }
    }
    d
}

/// `out[q] = min_p w2 (q - p)² + f[p]` over finite `f[p]`.
fn lower_envelope(f: &[f64], w2: f64, out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k: isize = -1;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        let fq = f[q] + w2 * (q * q) as f64;
        loop {
            if k < 0 {
                k = 0;
                v[0] = q;
                z[0] = f64::NEG_INFINITY;
                z[1] = f64::INFINITY;
                break;
            }
            let p = v[k as usize];
            let fp = f[p] + w2 * (p * p) as f64;
            let s = (fq - fp) / (2.0 * w2 * (q - p) as f64);
            if s <= z[k as usize] {
                k -= 1;
                continue;
            }
            k += 1;
            v[k as usize] = q;
            z[k as usize] = s;
            z[k as usize + 1] = f64::INFINITY;
            break;
        }
    }
    if k < 0 {
        out.fill(f64::INFINITY);
        return;
    }
    let mut j = 0usize;
    for (q, o) in out.iter_mut().enumerate() {
        while z[j + 1] < q as f64 {
            j += 1;
        }
        let p = v[j];
        let dq = q as f64 - p as f64;
        *o = w2 * dq * dq + f[p];
    }
}

/// 95th percentile with linear interpolation between order statistics.
pub fn percentile95(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "percentile of an empty set");
    values.sort_by(f64::total_cmp);
    let rank = 0.95 * (values.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(values.len() - 1);
    let frac = rank - lo as f64;
    values[lo] + frac * (values[hi] - values[lo])
}

/// Physical length of the array diagonal.
pub fn diagonal(shape: &[usize], spacing: &[f64]) -> f64 {
    shape.iter().zip(spacing).map(|(&n, &s)| (n as f64 * s).powi(2)).sum::<f64>().sqrt()
}

pub fn hd95(pred: &ArrayViewD<'_, bool>, gt: &ArrayViewD<'_, bool>, spacing: &[f64]) -> Result<Hd95> {
    if pred.shape() != gt.shape() {
        return Err(Error::Shape(format!("prediction {:?} vs ground truth {:?}", pred.shape(), gt.shape())));
    }
    if spacing.len() != pred.ndim() || spacing.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidArgument(format!("spacing {spacing:?} for a rank-{} mask", pred.ndim())));
    }
    let (pe, ge) = (!pred.iter().any(|&v| v), !gt.iter().any(|&v| v));
    match (pe, ge) {
        (true, true) => return Ok(Hd95 { value: 0.0, flagged: false }),
        (true, false) | (false, true) => {
            return Ok(Hd95 { value: diagonal(pred.shape(), spacing), flagged: true });
        }
        _ => {}
    }
    let bp = boundary(pred);
    let bg = boundary(gt);
    let dp = squared_edt(&bp.view(), spacing);
    let dg = squared_edt(&bg.view(), spacing);
    let mut dists: Vec<f64> = Vec::new();
    for (&b, &d) in bp.iter().zip(dg.iter()) {
        if b {
            dists.push(d.sqrt());
        }
    }
    for (&b, &d) in bg.iter().zip(dp.iter()) {
        if b {
            dists.push(d.sqrt());
        }
    }
    Ok(Hd95 { value: percentile95(&mut dists), flagged: false })
}

/// Metrics of one class in one case.
#[derive(Debug, Clone, PartialEq)]
pub struct CaseClassMetrics {
    pub case_id: String,
    pub class: usize,
    pub class_name: String,
    pub dsc: f64,
    pub hd95: f64,
    pub hd95_flagged: bool,
    pub recall: f64,
    pub precision: f64,
}

/// Per-case, per-class metrics with dataset means.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub rows: Vec<CaseClassMetrics>,
    pub class_names: Vec<String>,
}

impl MetricReport {
    /// Scores every foreground class of one labelled volume.
    ///
    /// `pred` and `gt` are label arrays of equal shape; `class_names`
    /// includes background at index 0.
    pub fn case_rows(
        case_id: &str,
        pred: &ArrayViewD<'_, u8>,
        gt: &ArrayViewD<'_, u8>,
        spacing: &[f64],
        class_names: &[String],
    ) -> Result<Vec<CaseClassMetrics>> {
        if pred.shape() != gt.shape() {
            return Err(Error::Shape(format!("prediction {:?} vs ground truth {:?}", pred.shape(), gt.shape())));
        }
        let classes: Vec<usize> = (1..class_names.len()).collect();
        let rows = mcfnet_tensor::par::map_slice(&classes, |&c| -> Result<CaseClassMetrics> {
            let p = pred.mapv(|v| v as usize == c);
            let g = gt.mapv(|v| v as usize == c);
            let conf = confusion(&p.view(), &g.view())?;
            let h = hd95(&p.view(), &g.view(), spacing)?;
            Ok(CaseClassMetrics {
                case_id: case_id.to_string(),
                class: c,
                class_name: class_names[c].clone(),
                dsc: conf.dsc(),
                hd95: h.value,
                hd95_flagged: h.flagged,
                recall: conf.recall(),
                precision: conf.precision(),
            })
        });
        rows.into_iter().collect()
    }

    pub fn mean_dsc(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.dsc))
    }

    pub fn mean_hd95(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.hd95))
    }

    pub fn mean_recall(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.recall))
    }

    pub fn mean_precision(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.precision))
    }

    /// Mean DSC per foreground class, in class order.
    pub fn class_dsc(&self) -> Vec<(String, f64)> {
        (1..self.class_names.len())
            .map(|c| (self.class_names[c].clone(), mean(self.rows.iter().filter(|r| r.class == c).map(|r| r.dsc))))
            .collect()
    }

    /// Writes `metrics.csv` (one row per case and class) and `summary.csv`.
    pub fn write_csv(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("metrics.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::format(&path, e))?;
        let header = ["case_id", "class", "class_name", "dsc", "hd95", "hd95_flagged", "recall", "precision"];
        w.write_record(header).map_err(|e| Error::format(&path, e))?;
        for r in &self.rows {
            w.write_record([
                r.case_id.clone(),
                r.class.to_string(),
                r.class_name.clone(),
                format!("{:.6}", r.dsc),
                format!("{:.6}", r.hd95),
                r.hd95_flagged.to_string(),
                format!("{:.6}", r.recall),
                format!("{:.6}", r.precision),
            ])
            .map_err(|e| Error::format(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;

        let path = dir.join("summary.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::format(&path, e))?;
        let mut header = vec!["mean_dsc".to_string(), "mean_hd95".to_string()];
        let mut values = vec![format!("{:.6}", self.mean_dsc()), format!("{:.6}", self.mean_hd95())];
        for (name, d) in self.class_dsc() {
            header.push(format!("dsc_{name}"));
            values.push(format!("{d:.6}"));
        }
        w.write_record(&header).map_err(|e| Error::format(&path, e))?;
        w.write_record(&values).map_err(|e| Error::format(&path, e))?;
        w.flush().map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    /// Plain-text table for terminals.
    pub fn write_table(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "mean DSC {:.2}  mean HD95 {:.2}", self.mean_dsc(), self.mean_hd95())?;
        for (name, d) in self.class_dsc() {
            writeln!(out, "  {name:<16} DSC {d:.2}")?;
        }
        Ok(())
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}
