//! Prints the stage shapes and parameter counts of the network presets.

use idgrid::nn::{layer_specs, ChannelConfig, Model, Prediction};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let model = Model::<f32>::build(ChannelConfig::SMALL, 0)?;
    println!("{:<16} {:>4} {:>4} {:>4}", "stage", "ch", "h", "w");
    for (name, c, h, w) in model.trace_shapes() {
        println!("{name:<16} {c:>4} {h:>4} {w:>4}");
    }
    println!();
    for spec in layer_specs(model.config()) {
        println!("{:<16} {:?} {:>7}", spec.name, spec.weight_shape(), spec.param_count());
    }
    println!();
    let mut previous = None;
    for (name, config) in [("small", ChannelConfig::SMALL), ("medium", ChannelConfig::MEDIUM), ("large", ChannelConfig::LARGE)] {
        let count = Model::<f32>::build(config, 0)?.param_count();
        let ratio = previous.map(|p: usize| format!(" (x{:.3})", count as f64 / p as f64)).unwrap_or_default();
        println!("{name:<7} {:?}/{}: {count} parameters{ratio}", config.channels, config.last_channel);
        previous = Some(count);
    }

    let probs = model.forward(&vec![0.95; 128 * 128])?;
    let p = Prediction::from_probabilities(&probs, 0.5);
    println!("\nuntrained output on a blank page: {} (confidence {:.3})", p.label.to_text(), p.confidence);
    Ok(())
}
