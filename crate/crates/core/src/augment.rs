//! Calibrated geometric augmentation.
//!
//! Each transform `x` (rotation, shear, scale) fires independently with
//! probability `p_x = mu * gamma_x`. The multiplier `mu` is chosen so that the
//! chance of a sample passing through untouched equals the requested `p_org`:
//!
//! ```text
//! p_org = (1 - mu*gamma_rt) (1 - mu*gamma_sh) (1 - mu*gamma_sc)
//! ```
//!
//! `mu` is found by golden-section search on the squared residual of that
//! equation; the product is strictly decreasing in `mu`, so the residual is
//! unimodal on the feasible interval.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::GrayImage;
use crate::rng::Rng;

/// Interval width at which the golden-section search stops.
pub const MU_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AugmentError {
    #[error("p_org = {0} is outside (0, 1]")]
    TargetOutOfRange(f64),
    #[error("augmentation factor {name} = {value} is outside [0, 1]")]
    FactorOutOfRange { name: &'static str, value: f64 },
    #[error("all augmentation factors are zero, p_org = {0} < 1 is unreachable")]
    Unreachable(f64),
    #[error("mu = {mu} is outside [0, {max}]")]
    MuOutOfRange { mu: f64, max: f64 },
    #[error("invalid transform range: {0}")]
    Range(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationFactors {
    pub gamma_rt: f64,
    pub gamma_sh: f64,
    pub gamma_sc: f64,
}

impl Default for AugmentationFactors {
    fn default() -> Self {
        Self { gamma_rt: 0.4, gamma_sh: 0.3, gamma_sc: 0.3 }
    }
}

impl AugmentationFactors {
    pub fn as_array(&self) -> [f64; 3] {
        [self.gamma_rt, self.gamma_sh, self.gamma_sc]
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let named = [("gamma_rt", self.gamma_rt), ("gamma_sh", self.gamma_sh), ("gamma_sc", self.gamma_sc)];
        for (name, value) in named {
            if !(0.0..=1.0).contains(&value) {
                return Err(AugmentError::FactorOutOfRange { name, value });
            }
        }
        Ok(())
    }

    /// Largest multiplier that keeps every probability at most 1.
    /// Infinite when all factors are zero.
    pub fn mu_max(&self) -> f64 {
        self.as_array()
            .into_iter()
            .filter(|&g| g > 0.0)
            .map(|g| 1.0 / g)
            .fold(f64::INFINITY, f64::min)
    }

    /// Probability that no transform fires for multiplier `mu`.
    pub fn untouched_fraction(&self, mu: f64) -> f64 {
        self.as_array().into_iter().map(|g| 1.0 - mu * g).product()
    }
}

/// Minimizes a unimodal `f` on `[lo, hi]` until the bracket is narrower than `tol`.
pub fn golden_section_minimize(mut f: impl FnMut(f64) -> f64, lo: f64, hi: f64, tol: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    // the bracket endpoints may be exact roots (e.g. mu = 0)
    let mid = 0.5 * (a + b);
    [a, mid, b]
        .into_iter()
        .map(|x| (x, f(x)))
        .fold((mid, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
        .0
}

/// Solves `untouched_fraction(mu) = p_org` for `mu` in `[0, mu_max]`.
pub fn solve_mu(p_org: f64, factors: &AugmentationFactors) -> Result<f64, AugmentError> {
    if !(p_org > 0.0 && p_org <= 1.0) {
        return Err(AugmentError::TargetOutOfRange(p_org));
    }
    factors.validate()?;
    if p_org == 1.0 {
        return Ok(0.0);
    }
    let mu_max = factors.mu_max();
    if !mu_max.is_finite() {
        return Err(AugmentError::Unreachable(p_org));
    }
    if factors.untouched_fraction(mu_max) > p_org {
        return Err(AugmentError::TargetOutOfRange(p_org));
    }
    let residual = |mu: f64| {
        let r = factors.untouched_fraction(mu) - p_org;
        r * r
    };
    Ok(golden_section_minimize(residual, 0.0, mu_max, MU_TOLERANCE))
}

/// Per-transform probabilities `mu * gamma`.
pub fn probabilities(mu: f64, factors: &AugmentationFactors) -> Result<[f64; 3], AugmentError> {
    factors.validate()?;
    let max = factors.mu_max();
    if !(mu >= 0.0 && mu <= max) {
        return Err(AugmentError::MuOutOfRange { mu, max });
    }
    Ok(factors.as_array().map(|g| (mu * g).clamp(0.0, 1.0)))
}

/// Magnitude ranges of the three transforms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformRanges {
    /// Rotation drawn uniformly from `±rotation_deg` degrees.
    pub rotation_deg: f64,
    /// Horizontal shear (tangent) drawn uniformly from `±shear`.
    pub shear: f64,
    pub scale_min: f64,
    pub scale_max: f64,
}

impl Default for TransformRanges {
    fn default() -> Self {
        Self { rotation_deg: 10.0, shear: 0.1, scale_min: 0.9, scale_max: 1.1 }
    }
}

impl TransformRanges {
    pub fn validate(&self) -> Result<(), AugmentError> {
        if !(self.rotation_deg >= 0.0 && self.shear >= 0.0) {
            return Err(AugmentError::Range("rotation and shear magnitudes must be non-negative".into()));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max) {
            return Err(AugmentError::Range(format!(
                "scale interval [{}, {}] is empty or non-positive",
                self.scale_min, self.scale_max
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentationPolicy {
    pub p_org: f64,
    pub mu: f64,
    pub p_rt: f64,
    pub p_sh: f64,
    pub p_sc: f64,
    pub ranges: TransformRanges,
}

impl AugmentationPolicy {
    pub fn calibrate(p_org: f64, factors: &AugmentationFactors, ranges: TransformRanges) -> Result<Self, AugmentError> {
        ranges.validate()?;
        let mu = solve_mu(p_org, factors)?;
        let [p_rt, p_sh, p_sc] = probabilities(mu, factors)?;
        Ok(Self { p_org, mu, p_rt, p_sh, p_sc, ranges })
    }

    /// Policy that never transforms.
    pub fn disabled() -> Self {
        Self { p_org: 1.0, mu: 0.0, p_rt: 0.0, p_sh: 0.0, p_sc: 0.0, ranges: TransformRanges::default() }
    }

    /// `|(1-p_rt)(1-p_sh)(1-p_sc) - p_org|`.
    pub fn residual(&self) -> f64 {
        ((1.0 - self.p_rt) * (1.0 - self.p_sh) * (1.0 - self.p_sc) - self.p_org).abs()
    }

    pub fn is_identity(&self) -> bool {
        self.p_rt == 0.0 && self.p_sh == 0.0 && self.p_sc == 0.0
    }
}

/// Transforms drawn for one sample; `None` entries did not fire.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AppliedTransforms {
    pub rotation_deg: Option<f64>,
    pub shear: Option<f64>,
    pub scale: Option<f64>,
}

impl AppliedTransforms {
    pub fn draw(policy: &AugmentationPolicy, rng: &mut Rng) -> Self {
        let r = &policy.ranges;
        let symmetric = |rng: &mut Rng, m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
        let rotation_deg = (rng.random::<f64>() < policy.p_rt).then(|| symmetric(rng, r.rotation_deg));
        let shear = (rng.random::<f64>() < policy.p_sh).then(|| symmetric(rng, r.shear));
        let scale = (rng.random::<f64>() < policy.p_sc).then(|| {
            if r.scale_max > r.scale_min {
                rng.random_range(r.scale_min..=r.scale_max)
            } else {
                r.scale_min
            }
        });
        Self { rotation_deg, shear, scale }
    }

    pub fn is_none(&self) -> bool {
        self.rotation_deg.is_none() && self.shear.is_none() && self.scale.is_none()
    }

    /// Forward 2×2 map `scale · shear · rotation` about the image center.
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        let theta = self.rotation_deg.unwrap_or(0.0).to_radians();
        let (s, c) = theta.sin_cos();
        let rot = [[c, -s], [s, c]];
        let sh = [[1.0, self.shear.unwrap_or(0.0)], [0.0, 1.0]];
        let k = self.scale.unwrap_or(1.0);
        let sc = [[k, 0.0], [0.0, k]];
        mul(sc, mul(sh, rot))
    }

    /// Warps `image` with bilinear interpolation; uncovered pixels become white.
    pub fn apply(&self, image: &GrayImage) -> GrayImage {
        let m = self.matrix();
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        let inv = [[m[1][1] / det, -m[0][1] / det], [-m[1][0] / det, m[0][0] / det]];
        let cx = image.width() as f64 / 2.0;
        let cy = image.height() as f64 / 2.0;
        GrayImage::from_fn(image.width(), image.height(), |x, y| {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            let sx = inv[0][0] * dx + inv[0][1] * dy + cx;
            let sy = inv[1][0] * dx + inv[1][1] * dy + cy;
            image.sample_bilinear(sx as f32, sy as f32, 1.0)
        })
    }
}

fn mul(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

/// Randomly rotates, shears and scales a square image according to `policy`.
pub fn augment(image: &GrayImage, policy: &AugmentationPolicy, rng: &mut Rng) -> GrayImage {
    maybe_augment(image, policy, rng).unwrap_or_else(|| image.clone())
}

/// Like [`augment`] but returns `None` when no transform fired.
pub fn maybe_augment(image: &GrayImage, policy: &AugmentationPolicy, rng: &mut Rng) -> Option<GrayImage> {
    debug_assert!(image.is_square(), "augmentation expects a square image");
    let t = AppliedTransforms::draw(policy, rng);
    (!t.is_none()).then(|| t.apply(image))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    // Independent oracle: plain bisection on the decreasing product.
    fn bisect_mu(p_org: f64, f: &AugmentationFactors) -> f64 {
        let (mut lo, mut hi) = (0.0, f.mu_max());
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if f.untouched_fraction(mid) > p_org {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn reference_calibration() {
        let f = AugmentationFactors::default();
        let oracle = bisect_mu(0.5, &f);
        assert!((oracle - 0.6173).abs() < 1e-4, "oracle {oracle}");
        let mu = solve_mu(0.5, &f).unwrap();
        assert!((mu - oracle).abs() < 1e-6);
        assert!((f.untouched_fraction(mu) - 0.5).abs() < 1e-6);
        let p = probabilities(mu, &f).unwrap();
        for (got, want) in p.iter().zip([0.2469, 0.1852, 0.1852]) {
            assert!((got - want).abs() < 1e-4, "{got} vs {want}");
        }
    }

    #[test]
    fn edge_targets() {
        let f = AugmentationFactors::default();
        assert_eq!(solve_mu(1.0, &f).unwrap(), 0.0);
        // 0.6 * 0.7 * 0.7 = 0.294
        assert!((solve_mu(0.294, &f).unwrap() - 1.0).abs() < 1e-6);
        assert_eq!(solve_mu(0.0, &f), Err(AugmentError::TargetOutOfRange(0.0)));
        assert_eq!(solve_mu(1.2, &f), Err(AugmentError::TargetOutOfRange(1.2)));
        let zero = AugmentationFactors { gamma_rt: 0.0, gamma_sh: 0.0, gamma_sc: 0.0 };
        assert_eq!(solve_mu(0.5, &zero), Err(AugmentError::Unreachable(0.5)));
        assert_eq!(solve_mu(1.0, &zero), Ok(0.0));
        let bad = AugmentationFactors { gamma_rt: 1.5, ..f };
        assert!(matches!(solve_mu(0.5, &bad), Err(AugmentError::FactorOutOfRange { .. })));
    }

    #[test]
    fn probability_products() {
        let f = AugmentationFactors::default();
        assert_eq!(probabilities(0.0, &f).unwrap(), [0.0, 0.0, 0.0]);
        assert_eq!(probabilities(1.0, &f).unwrap(), [0.4, 0.3, 0.3]);
        assert!(matches!(probabilities(3.0, &f), Err(AugmentError::MuOutOfRange { .. })));
        assert!(matches!(probabilities(-0.1, &f), Err(AugmentError::MuOutOfRange { .. })));
    }

    #[test]
    fn mu_decreases_with_target() {
        let f = AugmentationFactors::default();
        let mus: Vec<f64> = (1..=20).map(|i| solve_mu(i as f64 / 20.0, &f).unwrap()).collect();
        assert!(mus.windows(2).all(|w| w[0] > w[1]), "{mus:?}");
    }

    #[test]
    fn zero_policy_is_identity() {
        let img = GrayImage::from_fn(32, 32, |x, y| ((x ^ y) & 7) as f32 / 7.0);
        let mut r = rng::seeded(1);
        let policy = AugmentationPolicy::calibrate(1.0, &AugmentationFactors::default(), TransformRanges::default()).unwrap();
        assert!(policy.is_identity());
        for _ in 0..100 {
            assert_eq!(augment(&img, &policy, &mut r), img);
            assert_eq!(augment(&img, &AugmentationPolicy::disabled(), &mut r), img);
        }
    }

    #[test]
    fn unit_transform_preserves_image() {
        let img = GrayImage::from_fn(16, 16, |x, y| (x * y % 5) as f32 / 4.0);
        let t = AppliedTransforms { rotation_deg: Some(0.0), shear: Some(0.0), scale: Some(1.0) };
        let out = t.apply(&img);
        for (a, b) in out.pixels().iter().zip(img.pixels()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn rotation_moves_content_and_fills_white() {
        let img = GrayImage::new(64, 64, 0.0);
        let t = AppliedTransforms { rotation_deg: Some(45.0), ..Default::default() };
        let out = t.apply(&img);
        // corners of a black square rotated by 45° come from outside the frame
        assert!(out.get(0, 0) > 0.99);
        assert!(out.get(32, 32) < 1e-6);
    }

    proptest! {
        #[test]
        fn calibration_identity(p_org in 0.01f64..1.0, g in prop::array::uniform3(0.0f64..1.0)) {
            prop_assume!(g.iter().any(|&x| x > 1e-3));
            let f = AugmentationFactors { gamma_rt: g[0], gamma_sh: g[1], gamma_sc: g[2] };
            let policy = AugmentationPolicy::calibrate(p_org, &f, TransformRanges::default()).unwrap();
            prop_assert!(policy.residual() < 1e-6);
            prop_assert!((policy.mu - bisect_mu(p_org, &f)).abs() < 1e-6);
        }
    }
}
