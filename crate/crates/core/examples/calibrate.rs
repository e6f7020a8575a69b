//! Calibrates the augmentation probabilities and checks them empirically.
//!
//! cargo run --example calibrate -- [p_org]

use idgrid::augment::{augment, solve_mu, AppliedTransforms, AugmentationFactors, AugmentationPolicy, TransformRanges};
use idgrid::image::GrayImage;
use idgrid::rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let p_org: f64 = std::env::args().nth(1).map(|a| a.parse()).transpose()?.unwrap_or(0.5);
    let factors = AugmentationFactors::default();
    let policy = AugmentationPolicy::calibrate(p_org, &factors, TransformRanges::default())?;
    println!("p_org {p_org}: mu {:.6}, residual {:.2e}", policy.mu, policy.residual());
    println!("p_rt {:.4}  p_sh {:.4}  p_sc {:.4}", policy.p_rt, policy.p_sh, policy.p_sc);

    for p in [0.2, 0.4, 0.6, 0.8, 1.0] {
        println!("  p_org {p:.1} -> mu {:.4}", solve_mu(p, &factors)?);
    }

    let mut r = rng::seeded(0);
    let draws = 20_000;
    let untouched = (0..draws).filter(|_| AppliedTransforms::draw(&policy, &mut r).is_none()).count();
    println!("untouched in {draws} draws: {:.4}", untouched as f64 / draws as f64);

    let img = GrayImage::from_fn(64, 64, |x, y| if (x / 8 + y / 8) % 2 == 0 { 0.1 } else { 0.9 });
    let out = augment(&img, &policy, &mut rng::seeded(3));
    let changed = img.pixels().iter().zip(out.pixels()).filter(|(a, b)| (*a - *b).abs() > 1e-3).count();
    println!("one augmented checkerboard: {changed} of {} pixels changed", img.pixels().len());
    Ok(())
}
