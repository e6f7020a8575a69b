//! Renders a small synthetic dataset to disk and reads it back.
//!
//! cargo run --example render_dataset -- [out_dir] [n] [seed]

use std::path::PathBuf;

use idgrid::synth::{generate_dataset, load_dataset, pixel_oracle, Composition, RenderSpec, SampleKind, MANIFEST_FILE};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/example-data".into()));
    let n: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(40);
    let seed: u64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(1);

    let spec = RenderSpec::default();
    let composition = Composition::reference(n);
    let entries = generate_dataset(&out, n, &composition, &spec, seed)?;
    for kind in SampleKind::ALL {
        println!("{kind:>15}: {}", composition.count(kind));
    }
    for e in entries.iter().take(5) {
        println!("{}", e.to_line());
    }

    let manifest = out.join(MANIFEST_FILE);
    let records = load_dataset(&manifest)?;
    let clean = spec.noise_free();
    let agree = records.iter().filter(|r| pixel_oracle(&r.image, &clean) == r.label).count();
    println!(
        "{} images {}x{} in {}; thresholding cell means recovers {agree} labels",
        records.len(),
        spec.canvas_size,
        spec.canvas_size,
        out.display()
    );
    Ok(())
}
