//! Five-fold cross-validation of a small model on a synthetic set.
//!
//! cargo run --release --example kfold -- [n] [epochs] [k]

use idgrid::eval::kfold_run;
use idgrid::label::GridLabel;
use idgrid::nn::{ChannelConfig, Model};
use idgrid::rng::{self, tag};
use idgrid::synth::{Composition, RenderSpec};
use idgrid::train::{predict_labels, synthetic_samples, train, TrainConfig, TrainSample};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<usize> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let n = args.first().copied().unwrap_or(200);
    let epochs = args.get(1).copied().unwrap_or(3);
    let k = args.get(2).copied().unwrap_or(5);
    let seed = 4;

    let samples = synthetic_samples(&Composition::reference(n), &RenderSpec::default(), seed)?;
    let truth: Vec<GridLabel> = samples.iter().map(|s| s.label).collect();
    let report = kfold_run(&truth, k, seed, |fold, train_idx, val_idx| {
        let fold_seed = rng::derive_seed(seed, tag::FOLDS, &[fold as u64]);
        let pick = |idx: &[usize]| -> Vec<TrainSample> { idx.iter().map(|&i| samples[i].clone()).collect() };
        let config = TrainConfig { epochs, seed: fold_seed, ..Default::default() };
        let model = Model::build(ChannelConfig::SMALL, fold_seed)?;
        let (model, history) = train(model, &pick(train_idx), None, &config, &config.policy()?)?;
        eprintln!("fold {fold}: {} train / {} val, final loss {:.4}", train_idx.len(), val_idx.len(), history.losses().last().unwrap());
        predict_labels(&model, &pick(val_idx), config.threshold)
    })?;
    print!("{}", report.to_csv());
    Ok(())
}
