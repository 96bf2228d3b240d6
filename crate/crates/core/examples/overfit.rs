//! Overfits the micro cascade on 16 synthetic 256x256 images and reports
//! the train-set DSC of the final weights.
//!
//! `cargo run --release -p mcfnet --example overfit -- [batch] [iterations]`

use mcfnet::train::config::SynthSection;
use mcfnet::train::{evaluate, load_dataset, Config, Trainer};

fn main() -> mcfnet::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let batch = args.next().unwrap_or(2);
    let iterations = args.next().unwrap_or(200);

    let mut cfg = Config::default();
    cfg.model.width_divisor = 8;
    cfg.model.se_reduction = 2;
    cfg.train.batch_size = batch;
    cfg.train.epochs = iterations.div_ceil(16usize.div_ceil(batch));
    cfg.train.max_iterations = Some(iterations);
    cfg.train.validation_fraction = 0.0;
    cfg.data.synthetic = Some(SynthSection { cases: 16, classes: 3, image_size: 256, seed: 1 });

    let ds = load_dataset(&cfg.data)?;
    let mut trainer = Trainer::new(cfg, &ds.classes)?;
    let out = std::env::temp_dir().join("mcfnet-overfit");
    let start = std::time::Instant::now();
    let summary = trainer.run(&ds, &out)?;
    for r in &summary.records {
        println!("epoch {:3} lr {:.2e} loss {:.4} train DSC {:6.2} W {:?}", r.epoch, r.lr, r.loss, r.train_dsc, r.weights);
    }
    let report = evaluate(&trainer.checkpoint(), &ds, Some("train"))?;
    println!("final train DSC {:.2} after {:.0?}", report.mean_dsc(), start.elapsed());
    Ok(())
}
