//! Trains the small network on a synthetic set and reports validation metrics.
//!
//! cargo run --release --example train_small -- [n_train] [n_val] [epochs] [seed]

use std::time::Instant;

use idgrid::nn::{ChannelConfig, Model};
use idgrid::synth::{Composition, RenderSpec};
use idgrid::train::{synthetic_samples, train_with_progress, TrainConfig, HISTORY_HEADER};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<u64> = std::env::args().skip(1).map(|a| a.parse()).collect::<Result<_, _>>()?;
    let arg = |i: usize, default: u64| args.get(i).copied().unwrap_or(default);
    let (n_train, n_val, epochs, seed) = (arg(0, 400) as usize, arg(1, 100) as usize, arg(2, 10) as usize, arg(3, 0));

    let spec = RenderSpec::default();
    let train_set = synthetic_samples(&Composition::reference(n_train), &spec, seed)?;
    let val_set = synthetic_samples(&Composition::reference(n_val), &spec, seed + 1)?;
    let config = TrainConfig { epochs, seed, ..Default::default() };
    let policy = config.policy()?;
    println!("augmentation: mu {:.4}, p = ({:.3}, {:.3}, {:.3})", policy.mu, policy.p_rt, policy.p_sh, policy.p_sc);

    let model = Model::build(ChannelConfig::SMALL, seed)?;
    println!("{} parameters\n{HISTORY_HEADER}", model.param_count());
    let start = Instant::now();
    let (_model, history) = train_with_progress(model, &train_set, Some(&val_set), &config, &policy, |e| println!("{e}"))?;
    let last = history.epochs.last().expect("at least one epoch");
    let val = last.validation.expect("validation set given");
    println!(
        "done in {:.0?}: val acc {:.4}, alpha {:.4}, beta {:.4}",
        start.elapsed(),
        val.acc,
        val.alpha_rate,
        val.beta_rate
    );
    Ok(())
}
