//! Training loop: Adam with per-epoch cosine decay, multi-set loss weights
//! updated between epochs, best and last checkpoints.

use std::path::{Path, PathBuf};

use mcfnet_tensor::{Graph, ParamId, ParamStore, Tensor};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::dataset::stack_masks;
use crate::data::{make_split, synth_dataset, ClassOrder, Dataset, SliceSample};
use crate::loss::{dice_ce_from_logits, one_hot};
use crate::mfa::{enumerate_subsets, mfa_loss, MfaState, SubsetSets};
use crate::model::McfNet;
use crate::nn::Ctx;
use crate::train::checkpoint::Checkpoint;
use crate::train::config::{Config, DataSection};
use crate::train::eval::{argmax_labels, evaluate_model, image_batch, slice_dsc};
use crate::train::log::{pad4, EpochRecord, TrainLog};
use crate::train::optim::Adam;
use crate::train::schedule::lr_schedule;
use crate::{Error, Result};

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const LOG_FILE: &str = "train_log.tsv";
pub const DIAGNOSTIC_FILE: &str = "diagnostic.txt";

/// Outcome of one optimizer step.
#[derive(Debug, Clone)]
pub struct StepReport {
    pub loss: f64,
    /// Per-set losses; empty when the multi-set loss is off.
    pub set_losses: Vec<f64>,
    /// Argmax labels of the training-mode prediction.
    pub predictions: Vec<Array2<u8>>,
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Mean DSC (percent) that selected the best checkpoint.
    pub best_score: f64,
    pub best_checkpoint: PathBuf,
    pub last_checkpoint: PathBuf,
    pub log: PathBuf,
}

pub struct Trainer {
    pub config: Config,
    pub net: McfNet,
    pub store: ParamStore,
    pub mfa: MfaState,
    pub class_names: Vec<String>,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub iterations: usize,
    adam: Adam,
    subsets: SubsetSets,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(config: Config, classes: &ClassOrder) -> Result<Self> {
        config.validate()?;
        let model_cfg = config.model_config(classes.len())?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
        let mut store = ParamStore::new();
        let net = McfNet::new(&mut store, &mut rng, &model_cfg)?;
        let subsets = enumerate_subsets(4)?;
        Ok(Self {
            mfa: MfaState::new(subsets.sets.len(), &config.mfa),
            adam: Adam::new(config.train.weight_decay),
            class_names: classes.names.clone(),
            epoch: 0,
            iterations: 0,
            config,
            net,
            store,
            subsets,
            rng,
        })
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    /// One forward/backward pass and parameter update on `batch`.
    pub fn step(&mut self, batch: &[&SliceSample], lr: f64) -> Result<StepReport> {
        let images: Vec<&Array2<f64>> = batch.iter().map(|s| &s.image).collect();
        let x = image_batch(&images)?;
        let masks = stack_masks(&batch.iter().map(|s| &s.mask).collect::<Vec<_>>());
        let target = one_hot(masks.view(), self.classes())?;

        let g = Graph::train();
        let xv = g.constant(x);
        let out = self.net.forward(Ctx::new(&g, &self.store), &xv)?;
        let (loss, set_losses) = if self.config.mfa.enabled {
            let (l, report) =
                mfa_loss(&out.maps, &target, &self.mfa, &self.subsets, &self.config.loss, self.config.mfa.reduction)?;
            (l, report.set_losses)
        } else {
            (dice_ce_from_logits(&out.pred, &target, &self.config.loss)?, Vec::new())
        };
        let value = loss.item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("training loss at iteration {}", self.iterations)));
        }
        let predictions = argmax_labels(out.pred.value());

        let grads = g.backward(&loss);
        let mut params: Vec<(ParamId, Tensor)> = grads.params().into_iter().collect();
        params.sort_by_key(|(id, _)| *id);
        if let Some((id, _)) = params.iter().find(|(_, t)| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("gradient of {}", self.store.name(*id))));
        }
        let buffers = g.take_buffer_updates();
        drop(out);
        drop(g);
        self.adam.step(&mut self.store, &params, lr)?;
        for (id, t) in buffers {
            self.store.set(id, t);
        }
        self.iterations += 1;
        Ok(StepReport { loss: value, set_losses, predictions })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(
            &self.config,
            &self.class_names,
            self.epoch,
            self.iterations,
            &self.store,
            &self.mfa,
            self.adam.state(&self.store),
        )
    }

    fn max_iterations(&self) -> usize {
        self.config.train.max_iterations.unwrap_or(usize::MAX)
    }

    /// Trains on the configured partition of `dataset`, writing checkpoints
    /// and the epoch log into `out_dir`.
    pub fn run(&mut self, dataset: &Dataset, out_dir: &Path) -> Result<TrainSummary> {
        if dataset.num_classes() != self.classes() {
            return Err(Error::ClassMismatch { checkpoint: self.classes(), dataset: dataset.num_classes() });
        }
        std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
        let pool = dataset.samples_in(&self.config.data.partition);
        if pool.is_empty() {
            return Err(Error::InvalidArgument(format!("no samples in partition {:?}", self.config.data.partition)));
        }
        let (train, val) = self.hold_out(&pool)?;
        log::info!("training on {} slices, validating on {}", train.len(), val.len());

        let log_path = out_dir.join(LOG_FILE);
        let mut log_file = TrainLog::create(&log_path)?;
        let best_path = out_dir.join(BEST_CHECKPOINT);
        let last_path = out_dir.join(LAST_CHECKPOINT);
        let t = self.config.train.clone();
        let mut records = Vec::new();
        let (mut best_epoch, mut best_score) = (0, f64::NEG_INFINITY);
        let mut order: Vec<usize> = (0..train.len()).collect();

        while self.epoch < t.epochs && self.iterations < self.max_iterations() {
            let lr = lr_schedule(self.epoch, t.learning_rate, t.epochs)?;
            let weights = self.mfa.weights.clone();
            order.shuffle(&mut self.rng);
            let (mut loss_sum, mut set_sum, mut dsc_sum) = (0.0, vec![0.0; 4], 0.0);
            let (mut seen, mut steps) = (0usize, 0usize);
            for chunk in order.chunks(t.batch_size) {
                if self.iterations >= self.max_iterations() {
                    break;
                }
                let batch: Vec<&SliceSample> = chunk.iter().map(|&i| train[i]).collect();
                let report = match self.step(&batch, lr) {
                    Ok(r) => r,
                    Err(e @ Error::NonFinite(_)) => {
                        self.write_diagnostic(out_dir, &e, &batch, records.last());
                        return Err(e);
                    }
                    Err(e) => return Err(e),
                };
                loss_sum += report.loss;
                for (acc, l) in set_sum.iter_mut().zip(&report.set_losses) {
                    *acc += l;
                }
                for (p, s) in report.predictions.iter().zip(&batch) {
                    dsc_sum += slice_dsc(p, &s.mask, self.classes())?;
                }
                seen += batch.len();
                steps += 1;
            }
            if steps == 0 {
                break;
            }
            let set_means: Vec<f64> = set_sum.iter().map(|s| s / steps as f64).collect();
            let enabled = self.config.mfa.enabled;
            let rec = EpochRecord {
                epoch: self.epoch,
                lr,
                loss: loss_sum / steps as f64,
                set_losses: if enabled { pad4(&set_means) } else { pad4(&[]) },
                weights: pad4(&weights),
                train_dsc: dsc_sum / seen as f64,
            };
            if enabled {
                self.mfa.update(&set_means)?;
            }
            self.epoch += 1;
            log::info!("epoch {} loss {:.5} train DSC {:.2}", rec.epoch, rec.loss, rec.train_dsc);
            log_file.append(&rec)?;

            let score = if val.is_empty() {
                rec.train_dsc
            } else {
                evaluate_model(&self.net, &self.store, &val, &self.class_names)?.mean_dsc()
            };
            let ckpt = self.checkpoint();
            if score > best_score || records.is_empty() {
                best_score = score;
                best_epoch = rec.epoch;
                ckpt.save(&best_path)?;
            }
            ckpt.save(&last_path)?;
            records.push(rec);
        }
        if records.is_empty() {
            return Err(Error::InvalidArgument("training ran no iterations".into()));
        }
        Ok(TrainSummary { records, best_epoch, best_score, best_checkpoint: best_path, last_checkpoint: last_path, log: log_path })
    }

    /// Splits the training pool by case into fitting and selection samples.
    fn hold_out<'a>(&self, pool: &[&'a SliceSample]) -> Result<(Vec<&'a SliceSample>, Vec<&'a SliceSample>)> {
        let frac = self.config.train.validation_fraction;
        let cases: Vec<String> = Dataset::by_case(pool).into_keys().collect();
        if frac == 0.0 || cases.len() < 2 {
            return Ok((pool.to_vec(), Vec::new()));
        }
        let split = make_split(&cases, 1.0 - frac, self.config.train.seed)?;
        let (train, val) = pool.iter().partition(|s| split.partition_of(&s.case_id) == Some("train"));
        Ok((train, val))
    }

    fn write_diagnostic(&self, out_dir: &Path, err: &Error, batch: &[&SliceSample], last: Option<&EpochRecord>) {
        let mut text = format!("error: {err}\nepoch: {}\niteration: {}\n", self.epoch, self.iterations);
        let ids: Vec<String> = batch.iter().map(|s| format!("{}:{}", s.case_id, s.slice_index)).collect();
        text.push_str(&format!("batch: {}\nweights: {:?}\n", ids.join(" "), self.mfa.weights));
        if let Some(r) = last {
            text.push_str(&format!("last epoch: {}\n", r.to_line()));
        }
        let path = out_dir.join(DIAGNOSTIC_FILE);
        if let Err(e) = std::fs::write(&path, text) {
            log::error!("could not write {}: {e}", path.display());
        }
    }
}

/// Reads the configured dataset directory or generates the synthetic one.
pub fn load_dataset(data: &DataSection) -> Result<Dataset> {
    let ds = match (&data.path, &data.synthetic) {
        (Some(path), None) => Dataset::read(path)?,
        (None, Some(s)) => {
            let names: Vec<String> = (1..s.classes).map(|i| format!("shape{i}")).collect();
            let names: Vec<&str> = names.iter().map(String::as_str).collect();
            let classes = ClassOrder::with_background(&names)?;
            Dataset::new(classes, synth_dataset(s.cases, s.classes, s.image_size, s.seed)?, None)?
        }
        _ => return Err(Error::Config("set exactly one of data.path and data.synthetic".into())),
    };
    if let Some(c) = data.classes {
        if c != ds.num_classes() {
            return Err(Error::ClassMismatch { checkpoint: c, dataset: ds.num_classes() });
        }
    }
    Ok(ds)
}
