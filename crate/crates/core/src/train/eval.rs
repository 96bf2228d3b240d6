use mcfnet_tensor::{Graph, ParamStore, Tensor};
use ndarray::{Array2, Axis, IxDyn};

use crate::data::dataset::stack_masks;
use crate::data::{Dataset, SliceSample};
use crate::metrics::{confusion, MetricReport};
use crate::model::McfNet;
use crate::nn::Ctx;
use crate::train::checkpoint::Checkpoint;
use crate::{Error, Result};

/// Slices per inference forward pass.
const PREDICT_BATCH: usize = 4;

/// Stacks 2-D images into a `(b, 1, h, w)` tensor.
pub fn image_batch(images: &[&Array2<f64>]) -> Result<Tensor> {
    let (h, w) = images.first().map(|i| i.dim()).ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    if let Some(bad) = images.iter().find(|i| i.dim() != (h, w)) {
        return Err(Error::Shape(format!("batch mixes {:?} and {:?} images", (h, w), bad.dim())));
    }
    let data: Vec<f64> = images.iter().flat_map(|i| i.iter().copied()).collect();
    Ok(Tensor::from_shape_vec(IxDyn(&[images.len(), 1, h, w]), data).expect("batch shape"))
}

/// Per-pixel argmax over the class axis of a `(b, classes, h, w)` tensor.
/// Ties go to the lower class index.
pub fn argmax_labels(pred: &Tensor) -> Vec<Array2<u8>> {
    let s = pred.shape();
    let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
    (0..b)
        .map(|i| {
            let p = pred.index_axis(Axis(0), i);
            Array2::from_shape_fn((h, w), |(y, x)| {
                let mut best = 0;
                for k in 1..c {
                    if p[[k, y, x]] > p[[best, y, x]] {
                        best = k;
                    }
                }
                best as u8
            })
        })
        .collect()
}

/// Label maps predicted from the final aggregated output, eval-mode.
pub fn predict(net: &McfNet, store: &ParamStore, images: &[&Array2<f64>]) -> Result<Vec<Array2<u8>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(PREDICT_BATCH) {
        let g = Graph::inference();
        let x = g.constant(image_batch(chunk)?);
        let y = net.forward(Ctx::new(&g, store), &x)?;
        out.extend(argmax_labels(y.pred.value()));
    }
    Ok(out)
}

/// Mean foreground DSC (percent) of one 2-D prediction.
pub fn slice_dsc(pred: &Array2<u8>, gt: &Array2<u8>, classes: usize) -> Result<f64> {
    let mut total = 0.0;
    for c in 1..classes as u8 {
        let p = pred.mapv(|v| v == c).into_dyn();
        let g = gt.mapv(|v| v == c).into_dyn();
        total += confusion(&p.view(), &g.view())?.dsc();
    }
    Ok(total / (classes - 1).max(1) as f64)
}

/// Scores `samples` per case: slices are stacked in index order into one
/// volume per case and measured with unit voxel spacing.
pub fn evaluate_model(
    net: &McfNet,
    store: &ParamStore,
    samples: &[&SliceSample],
    class_names: &[String],
) -> Result<MetricReport> {
    if net.config.classes != class_names.len() {
        return Err(Error::ClassMismatch { checkpoint: net.config.classes, dataset: class_names.len() });
    }
    let cases: Vec<_> = Dataset::by_case(samples).into_iter().collect();
    let rows = mcfnet_tensor::par::map_slice(&cases, |(case, slices)| -> Result<_> {
        let images: Vec<&Array2<f64>> = slices.iter().map(|s| &s.image).collect();
        let pred = predict(net, store, &images)?;
        let pred = stack_masks(&pred.iter().collect::<Vec<_>>());
        let gt = stack_masks(&slices.iter().map(|s| &s.mask).collect::<Vec<_>>());
        MetricReport::case_rows(case, &pred.view().into_dyn(), &gt.view().into_dyn(), &[1.0; 3], class_names)
    });
    let mut report = MetricReport { rows: Vec::new(), class_names: class_names.to_vec() };
    for r in rows {
        report.rows.extend(r?);
    }
    Ok(report)
}

/// Evaluates a checkpoint on one partition of a dataset (all samples when
/// `partition` is `None`).
pub fn evaluate(ckpt: &Checkpoint, dataset: &Dataset, partition: Option<&str>) -> Result<MetricReport> {
    if ckpt.num_classes() != dataset.num_classes() {
        return Err(Error::ClassMismatch { checkpoint: ckpt.num_classes(), dataset: dataset.num_classes() });
    }
    let (net, store) = ckpt.restore()?;
    let samples: Vec<&SliceSample> = match partition {
        Some(p) => dataset.samples_in(p),
        None => dataset.samples.iter().collect(),
    };
    if samples.is_empty() {
        return Err(Error::InvalidArgument(format!("no samples in partition {partition:?}")));
    }
    evaluate_model(&net, &store, &samples, &dataset.classes.names)
}
