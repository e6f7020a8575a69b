//! Trains briefly, saves the model, then scores a folder of fresh scans the
//! way the `predict` command does.
//!
//! cargo run --release --example predict -- [epochs]

use idgrid::cli::{predict_directory, prediction_csv};
use idgrid::label::StudentId;
use idgrid::nn::{io, ChannelConfig, Model};
use idgrid::rng;
use idgrid::synth::{render, Composition, RenderSpec, SampleKind};
use idgrid::train::{synthetic_samples, train, TrainConfig};
use idgrid::GridLabel;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs = std::env::args().nth(1).map(|a| a.parse()).transpose()?.unwrap_or(8);
    let spec = RenderSpec::default();
    let samples = synthetic_samples(&Composition::reference(400), &spec, 12)?;
    let config = TrainConfig { epochs, seed: 12, ..Default::default() };
    let (model, _) = train(Model::build(ChannelConfig::SMALL, 12)?, &samples, None, &config, &config.policy()?)?;

    let dir = tempfile_dir()?;
    let model_path = dir.join("model.mgrd");
    io::save(&model, &model_path)?;
    let model = io::load(&model_path)?;

    let ids = ["5555555555", "0123456789", "9876543210"];
    for (i, id) in ids.iter().enumerate() {
        let label = GridLabel::from_student_id(&id.parse::<StudentId>()?);
        render(&label, &spec, SampleKind::Cfmt, &mut rng::seeded(i as u64))?.save_png(&dir.join(format!("scan{i}.png")))?;
    }
    let mut gap = GridLabel::from_student_id(&"1234512345".parse::<StudentId>()?);
    gap.clear_column(4);
    render(&gap, &spec, SampleKind::MissingColumn, &mut rng::seeded(9))?.save_png(&dir.join("scan_gap.png"))?;

    let rows = predict_directory(&model, &dir, config.threshold)?;
    print!("{}", prediction_csv(&rows));
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

fn tempfile_dir() -> std::io::Result<std::path::PathBuf> {
    let dir = std::env::temp_dir().join(format!("idgrid-predict-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
