//! Synthetic scans of the 10×10 student-ID matrix template.
//!
//! The renderer draws the printed grid (digit `d` in row `d` of every column),
//! blackens the cells set in a [`GridLabel`], optionally crosses the whole table
//! out, and adds scanner noise. Every sample is rendered from its own random
//! stream derived from the dataset seed and the sample index, so a dataset is
//! fully determined by `(seed, spec, composition)`.

mod font;

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::image::{GrayImage, ImageError};
use crate::label::{CodecError, GridLabel, DIGITS, POSITIONS};
use crate::rng::{self, tag, Rng};

pub use font::{GLYPH_HEIGHT, GLYPH_WIDTH};

/// File name of the dataset manifest inside a dataset directory.
pub const MANIFEST_FILE: &str = "manifest.tsv";
const IMAGE_DIR: &str = "images";

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("render geometry infeasible: {0}")]
    Geometry(String),
    #[error("invalid render parameter: {0}")]
    Parameter(String),
    #[error("unknown sample kind {0:?}")]
    UnknownKind(String),
    #[error("composition sums to {sum}, expected {n}")]
    Composition { n: usize, sum: usize },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error("manifest line {line}: {reason}")]
    Manifest { line: usize, reason: String },
    #[error("manifest line {line}: {source}")]
    Record {
        line: usize,
        #[source]
        source: CodecError,
    },
}

fn io_err(path: &Path, source: std::io::Error) -> SynthError {
    SynthError::Io { path: path.display().to_string(), source }
}

/// How a template was filled in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SampleKind {
    Cfmt,
    MultiMark,
    MissingColumn,
    CrossedOut,
}

impl SampleKind {
    pub const ALL: [SampleKind; 4] =
        [SampleKind::Cfmt, SampleKind::MultiMark, SampleKind::MissingColumn, SampleKind::CrossedOut];

    pub fn as_str(&self) -> &'static str {
        match self {
            SampleKind::Cfmt => "cfmt",
            SampleKind::MultiMark => "multi-mark",
            SampleKind::MissingColumn => "missing-column",
            SampleKind::CrossedOut => "crossed-out",
        }
    }
}

impl fmt::Display for SampleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SampleKind {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| SynthError::UnknownKind(s.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GlyphStyle {
    /// Pixels per font dot.
    pub dot_size: usize,
    pub intensity: f32,
}

impl Default for GlyphStyle {
    fn default() -> Self {
        Self { dot_size: 2, intensity: 0.35 }
    }
}

/// Darkness of blackened cells, drawn once per cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InkModel {
    pub mean: f32,
    pub std_dev: f32,
    /// Per-pixel uniform texture amplitude.
    pub texture: f32,
}

impl Default for InkModel {
    fn default() -> Self {
        Self { mean: 0.1, std_dev: 0.03, texture: 0.04 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    pub gaussian_sigma: f32,
    pub salt_pepper_rate: f32,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self { gaussian_sigma: 0.02, salt_pepper_rate: 0.002 }
    }
}

impl NoiseModel {
    pub fn none() -> Self {
        Self { gaussian_sigma: 0.0, salt_pepper_rate: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSpec {
    pub canvas_size: usize,
    pub cell_size: usize,
    pub grid_line_width: usize,
    pub grid_line_level: f32,
    pub glyph_style: GlyphStyle,
    pub ink_model: InkModel,
    /// Maximum per-cell fill offset in pixels along each axis.
    pub jitter: usize,
    pub noise: NoiseModel,
    pub background_level: f32,
    pub cross_width: f32,
    pub cross_level: f32,
}

impl Default for RenderSpec {
    fn default() -> Self {
        Self {
            canvas_size: 320,
            cell_size: 28,
            grid_line_width: 2,
            grid_line_level: 0.25,
            glyph_style: GlyphStyle::default(),
            ink_model: InkModel::default(),
            jitter: 2,
            noise: NoiseModel::default(),
            background_level: 0.95,
            cross_width: 3.0,
            cross_level: 0.2,
        }
    }
}

impl RenderSpec {
    pub fn noise_free(mut self) -> Self {
        self.noise = NoiseModel::none();
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let grid = POSITIONS * self.cell_size + self.grid_line_width;
        if grid > self.canvas_size {
            return Err(SynthError::Geometry(format!(
                "grid of {grid}px does not fit a {}px canvas",
                self.canvas_size
            )));
        }
        let interior = self.cell_size.saturating_sub(2 * self.grid_line_width);
        let glyph_w = GLYPH_WIDTH * self.glyph_style.dot_size;
        let glyph_h = GLYPH_HEIGHT * self.glyph_style.dot_size;
        if interior < glyph_w.max(glyph_h) + 2 {
            return Err(SynthError::Geometry(format!(
                "cell interior of {interior}px cannot hold a {glyph_w}x{glyph_h}px digit"
            )));
        }
        let levels = [
            ("grid_line_level", self.grid_line_level),
            ("glyph_style.intensity", self.glyph_style.intensity),
            ("ink_model.mean", self.ink_model.mean),
            ("ink_model.std_dev", self.ink_model.std_dev),
            ("ink_model.texture", self.ink_model.texture),
            ("noise.gaussian_sigma", self.noise.gaussian_sigma),
            ("noise.salt_pepper_rate", self.noise.salt_pepper_rate),
            ("background_level", self.background_level),
            ("cross_level", self.cross_level),
        ];
        for (name, v) in levels {
            if !(0.0..=1.0).contains(&v) {
                return Err(SynthError::Parameter(format!("{name} = {v} is outside [0, 1]")));
            }
        }
        if !(self.cross_width > 0.0) {
            return Err(SynthError::Parameter("cross_width must be positive".into()));
        }
        Ok(())
    }

    /// Top-left pixel of the table.
    pub fn origin(&self) -> usize {
        (self.canvas_size - POSITIONS * self.cell_size) / 2
    }

    /// Half-open pixel box `(x0, y0, x1, y1)` of a cell's interior, excluding grid lines.
    pub fn cell_interior(&self, digit: usize, column: usize) -> (usize, usize, usize, usize) {
        let o = self.origin();
        let lw = self.grid_line_width;
        let x0 = o + column * self.cell_size;
        let y0 = o + digit * self.cell_size;
        (x0 + lw, y0 + lw, x0 + self.cell_size - lw, y0 + self.cell_size - lw)
    }
}

/// Draws a random label of the requested kind.
///
/// Crossed-out sheets reuse the multi-mark or missing-column patterns, so their
/// labels never satisfy CFMT.
pub fn sample_label(rng: &mut Rng, kind: SampleKind) -> GridLabel {
    let mut label = GridLabel::empty();
    for c in 0..POSITIONS {
        label.set(rng.random_range(0..DIGITS), c, true);
    }
    let columns = |rng: &mut Rng, n: usize| -> Vec<usize> {
        let mut cols: Vec<usize> = (0..POSITIONS).collect();
        cols.shuffle(rng);
        cols.truncate(n);
        cols
    };
    match kind {
        SampleKind::Cfmt => {}
        SampleKind::MultiMark => {
            let k = rng.random_range(1..=3);
            for c in columns(rng, k) {
                let existing = label.column_digits(c).next().expect("base is cfmt");
                let extra = (existing + rng.random_range(1..DIGITS)) % DIGITS;
                label.set(extra, c, true);
            }
        }
        SampleKind::MissingColumn => {
            let m = rng.random_range(1..=3);
            for c in columns(rng, m) {
                label.clear_column(c);
            }
        }
        SampleKind::CrossedOut => {
            let base = if rng.random_bool(0.5) { SampleKind::MultiMark } else { SampleKind::MissingColumn };
            return sample_label(rng, base);
        }
    }
    label
}

/// Renders one template scan. Deterministic in `(label, spec, kind, rng state)`.
pub fn render(label: &GridLabel, spec: &RenderSpec, kind: SampleKind, rng: &mut Rng) -> Result<GrayImage, SynthError> {
    spec.validate()?;
    let size = spec.canvas_size;
    let mut img = GrayImage::new(size, size, spec.background_level);
    let darken = |img: &mut GrayImage, x: usize, y: usize, v: f32| {
        if v < img.get(x, y) {
            img.set(x, y, v);
        }
    };

    let origin = spec.origin();
    let span = POSITIONS * spec.cell_size;
    let lw = spec.grid_line_width;
    for k in 0..=POSITIONS {
        let start = origin + k * spec.cell_size - lw / 2;
        for t in start..(start + lw).min(size) {
            for s in origin - lw / 2..(origin + span + lw - lw / 2).min(size) {
                darken(&mut img, t, s, spec.grid_line_level);
                darken(&mut img, s, t, spec.grid_line_level);
            }
        }
    }

    let dot = spec.glyph_style.dot_size;
    let (gw, gh) = (GLYPH_WIDTH * dot, GLYPH_HEIGHT * dot);
    for d in 0..DIGITS {
        for c in 0..POSITIONS {
            let (x0, y0, x1, y1) = spec.cell_interior(d, c);
            let gx = x0 + (x1 - x0 - gw) / 2;
            let gy = y0 + (y1 - y0 - gh) / 2;
            for row in 0..GLYPH_HEIGHT {
                for col in 0..GLYPH_WIDTH {
                    if font::dot(d, col, row) {
                        for py in 0..dot {
                            for px in 0..dot {
                                darken(&mut img, gx + col * dot + px, gy + row * dot + py, spec.glyph_style.intensity);
                            }
                        }
                    }
                }
            }
        }
    }

    let ink = Normal::new(spec.ink_model.mean, spec.ink_model.std_dev.max(1e-9))
        .map_err(|e| SynthError::Parameter(e.to_string()))?;
    let jitter = spec.jitter as i64;
    for d in 0..DIGITS {
        for c in 0..POSITIONS {
            if !label.get(d, c) {
                continue;
            }
            let level = ink.sample(rng).clamp(0.0, 2.0 * spec.ink_model.mean.max(0.05));
            let (x0, y0, x1, y1) = spec.cell_interior(d, c);
            let dx = rng.random_range(-jitter..=jitter) as isize;
            let dy = rng.random_range(-jitter..=jitter) as isize;
            let clip = |v: isize, lo: usize, hi: usize| v.clamp(lo as isize, hi as isize) as usize;
            let fy0 = clip(y0 as isize + dy, y0, y1);
            let fy1 = clip(y1 as isize + dy, y0, y1);
            for y in fy0..fy1 {
                // ragged left/right edges, like a pen stroke
                let ragged_l: isize = rng.random_range(0..=1i64) as isize;
                let ragged_r: isize = rng.random_range(0..=1i64) as isize;
                let fx0 = clip(x0 as isize + dx + ragged_l, x0, x1);
                let fx1 = clip(x1 as isize + dx - ragged_r, x0, x1);
                for x in fx0..fx1 {
                    let t = spec.ink_model.texture;
                    let v = if t > 0.0 { level + rng.random_range(-t..=t) } else { level };
                    darken(&mut img, x, y, v.clamp(0.0, 1.0));
                }
            }
        }
    }

    if kind == SampleKind::CrossedOut {
        let (a, b) = (origin as f32, (origin + span) as f32);
        let half = spec.cross_width / 2.0;
        let len = (b - a) * std::f32::consts::SQRT_2;
        for y in origin..(origin + span).min(size) {
            for x in origin..(origin + span).min(size) {
                let (px, py) = (x as f32 + 0.5 - a, y as f32 + 0.5 - a);
                // distance to the two table diagonals
                let d1 = (px - py).abs() / std::f32::consts::SQRT_2;
                let d2 = (px + py - (b - a)).abs() / std::f32::consts::SQRT_2;
                if d1.min(d2) <= half && len > 0.0 {
                    darken(&mut img, x, y, spec.cross_level);
                }
            }
        }
    }

    let sigma = spec.noise.gaussian_sigma;
    let sp = spec.noise.salt_pepper_rate;
    if sigma > 0.0 || sp > 0.0 {
        let gauss = Normal::new(0.0f32, sigma.max(1e-12)).map_err(|e| SynthError::Parameter(e.to_string()))?;
        for v in img.pixels_mut() {
            if sigma > 0.0 {
                *v += gauss.sample(rng);
            }
            if sp > 0.0 && rng.random::<f32>() < sp {
                *v = if rng.random_bool(0.5) { 0.0 } else { 1.0 };
            }
            *v = v.clamp(0.0, 1.0);
        }
    }
    Ok(img)
}

/// Requested number of samples of each kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Composition {
    pub cfmt: usize,
    pub multi_mark: usize,
    pub missing_column: usize,
    pub crossed_out: usize,
}

/// CFMT share of the reference collection: 1658 of 1703 scans.
pub const CFMT_SHARE: f64 = 1658.0 / 1703.0;

impl Composition {
    /// `n` samples at the reference CFMT share, the rest split evenly over the
    /// three incorrect kinds.
    pub fn reference(n: usize) -> Self {
        let cfmt = (n as f64 * CFMT_SHARE).round() as usize;
        Self::with_cfmt(n, cfmt).expect("rounded share never exceeds n")
    }

    /// `cfmt` correct samples and the remaining `n - cfmt` split evenly.
    pub fn with_cfmt(n: usize, cfmt: usize) -> Result<Self, SynthError> {
        if cfmt > n {
            return Err(SynthError::Composition { n, sum: cfmt });
        }
        let rest = n - cfmt;
        let share = |i: usize| rest / 3 + usize::from(i < rest % 3);
        Ok(Self { cfmt, multi_mark: share(0), missing_column: share(1), crossed_out: share(2) })
    }

    pub fn only_cfmt(n: usize) -> Self {
        Self { cfmt: n, multi_mark: 0, missing_column: 0, crossed_out: 0 }
    }

    pub fn total(&self) -> usize {
        self.cfmt + self.multi_mark + self.missing_column + self.crossed_out
    }

    pub fn count(&self, kind: SampleKind) -> usize {
        match kind {
            SampleKind::Cfmt => self.cfmt,
            SampleKind::MultiMark => self.multi_mark,
            SampleKind::MissingColumn => self.missing_column,
            SampleKind::CrossedOut => self.crossed_out,
        }
    }

    /// Kind of every sample index: exact counts in seeded random order.
    pub fn kinds(&self, seed: u64) -> Vec<SampleKind> {
        let mut kinds: Vec<SampleKind> = SampleKind::ALL
            .into_iter()
            .flat_map(|k| std::iter::repeat_n(k, self.count(k)))
            .collect();
        kinds.shuffle(&mut rng::stream(seed, tag::LABEL, &[u64::MAX]));
        kinds
    }
}

#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub image: GrayImage,
    pub label: GridLabel,
    pub kind: SampleKind,
    pub seed: u64,
}

/// Draws and renders sample `index` of a dataset.
pub fn synthesize(index: usize, kind: SampleKind, spec: &RenderSpec, seed: u64) -> Result<SampleRecord, SynthError> {
    let label = sample_label(&mut rng::stream(seed, tag::LABEL, &[index as u64]), kind);
    let sample_seed = rng::derive_seed(seed, tag::RENDER, &[index as u64]);
    let image = render(&label, spec, kind, &mut rng::seeded(sample_seed))?;
    Ok(SampleRecord { image, label, kind, seed: sample_seed })
}

/// Builds an in-memory dataset with exactly the requested composition.
pub fn generate(n: usize, composition: &Composition, spec: &RenderSpec, seed: u64) -> Result<Vec<SampleRecord>, SynthError> {
    if composition.total() != n {
        return Err(SynthError::Composition { n, sum: composition.total() });
    }
    spec.validate()?;
    composition
        .kinds(seed)
        .into_iter()
        .enumerate()
        .map(|(i, kind)| synthesize(i, kind, spec, seed))
        .collect()
}

/// One manifest line: image path relative to the manifest, label and kind.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: GridLabel,
    pub kind: SampleKind,
}

impl ManifestEntry {
    pub fn to_line(&self) -> String {
        format!("{}\t{}\t{}", self.path.display(), self.label.to_text(), self.kind)
    }
}

/// Renders the dataset into `dir` as `images/NNNNN.png` plus `manifest.tsv`.
pub fn generate_dataset(
    dir: &Path,
    n: usize,
    composition: &Composition,
    spec: &RenderSpec,
    seed: u64,
) -> Result<Vec<ManifestEntry>, SynthError> {
    if composition.total() != n {
        return Err(SynthError::Composition { n, sum: composition.total() });
    }
    spec.validate()?;
    let image_dir = dir.join(IMAGE_DIR);
    fs::create_dir_all(&image_dir).map_err(|e| io_err(&image_dir, e))?;
    let mut entries = Vec::with_capacity(n);
    for (i, kind) in composition.kinds(seed).into_iter().enumerate() {
        let record = synthesize(i, kind, spec, seed)?;
        let rel = PathBuf::from(IMAGE_DIR).join(format!("{i:05}.png"));
        record.image.save_png(&dir.join(&rel))?;
        entries.push(ManifestEntry { path: rel, label: record.label, kind });
    }
    write_manifest(&dir.join(MANIFEST_FILE), &entries)?;
    Ok(entries)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<(), SynthError> {
    let file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    let mut out = BufWriter::new(file);
    for entry in entries {
        writeln!(out, "{}", entry.to_line()).map_err(|e| io_err(path, e))?;
    }
    out.flush().map_err(|e| io_err(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>, SynthError> {
    let file = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let mut entries = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [p, record, kind] = fields[..] else {
            return Err(SynthError::Manifest {
                line: i + 1,
                reason: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        };
        let label = GridLabel::from_text(record).map_err(|source| SynthError::Record { line: i + 1, source })?;
        let kind = kind.parse().map_err(|e: SynthError| SynthError::Manifest { line: i + 1, reason: e.to_string() })?;
        entries.push(ManifestEntry { path: PathBuf::from(p), label, kind });
    }
    Ok(entries)
}

/// Reads a manifest and every image it lists.
pub fn load_dataset(manifest: &Path) -> Result<Vec<SampleRecord>, SynthError> {
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    read_manifest(manifest)?
        .into_iter()
        .map(|entry| {
            let image = GrayImage::load_png(&base.join(&entry.path))?;
            Ok(SampleRecord { image, label: entry.label, kind: entry.kind, seed: 0 })
        })
        .collect()
}

/// Reads back a label by thresholding each cell's mean interior intensity.
/// Only reliable on noise-free renders.
pub fn pixel_oracle(image: &GrayImage, spec: &RenderSpec) -> GridLabel {
    let mut label = GridLabel::empty();
    for d in 0..DIGITS {
        for c in 0..POSITIONS {
            let (x0, y0, x1, y1) = spec.cell_interior(d, c);
            if image.region_mean(x0, y0, x1, y1) < spec.background_level - 0.3 {
                label.set(d, c, true);
            }
        }
    }
    label
}
