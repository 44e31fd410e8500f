//! Images as 256 discrete tokens inlined into `src` attributes.
//!
//! [`PaletteCodec`] stands in for a learned VQ codec: it splits a prepared
//! 256×256 image into a 16×16 grid of 16×16-pixel blocks and maps each block's
//! mean colour to the nearest entry of a fixed 1024-colour palette. Anything
//! implementing [`ImageCodec`] can replace it.

use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::RgbImage;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::html::Element;
use crate::record::IMAGE_TOKENS_PER_IMAGE;

pub const IMAGE_SIDE: u32 = 256;
pub const GRID_SIDE: usize = 16;
pub const BLOCK_SIDE: usize = 16;
pub const PALETTE_SIZE: usize = 1024;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("cannot decode image: {0}")]
    Decode(String),
    #[error("expected {expected} image tokens, got {got}")]
    TokenCount { expected: usize, got: usize },
    #[error("image token {0} outside the codebook")]
    InvalidToken(u32),
    #[error("element <{0}> has no src attribute")]
    MissingSrc(String),
    #[error("tensor must be 256x256x3, got {0} bytes")]
    BadTensor(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PrepareMode {
    /// Random crop after the shorter-side resize.
    Train,
    /// Deterministic centre crop.
    Eval,
}

/// A 256×256 RGB image, row-major, 3 bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageTensor {
    pixels: Vec<u8>,
}

impl ImageTensor {
    pub fn from_pixels(pixels: Vec<u8>) -> Result<Self, ImageError> {
        let want = (IMAGE_SIDE * IMAGE_SIDE * 3) as usize;
        if pixels.len() != want {
            return Err(ImageError::BadTensor(pixels.len()));
        }
        Ok(Self { pixels })
    }

    pub fn filled(rgb: [u8; 3]) -> Self {
        let pixels = rgb.iter().copied().cycle().take((IMAGE_SIDE * IMAGE_SIDE * 3) as usize).collect();
        Self { pixels }
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * IMAGE_SIDE as usize + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * IMAGE_SIDE as usize + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn to_rgb_image(&self) -> RgbImage {
        RgbImage::from_raw(IMAGE_SIDE, IMAGE_SIDE, self.pixels.clone()).expect("fixed size")
    }

    /// Mean colour of grid block `(bx, by)`.
    pub fn block_mean(&self, bx: usize, by: usize) -> [f64; 3] {
        let mut sum = [0u64; 3];
        for y in by * BLOCK_SIDE..(by + 1) * BLOCK_SIDE {
            for x in bx * BLOCK_SIDE..(bx + 1) * BLOCK_SIDE {
                let p = self.pixel(x, y);
                for c in 0..3 {
                    sum[c] += p[c] as u64;
                }
            }
        }
        let n = (BLOCK_SIDE * BLOCK_SIDE) as f64;
        [sum[0] as f64 / n, sum[1] as f64 / n, sum[2] as f64 / n]
    }
}

/// Exactly 256 codebook indices, row-major over the 16×16 grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageTokens(Vec<u32>);

impl ImageTokens {
    pub fn new(codes: Vec<u32>, codebook_size: u32) -> Result<Self, ImageError> {
        if codes.len() != IMAGE_TOKENS_PER_IMAGE {
            return Err(ImageError::TokenCount { expected: IMAGE_TOKENS_PER_IMAGE, got: codes.len() });
        }
        if let Some(&bad) = codes.iter().find(|&&c| c >= codebook_size) {
            return Err(ImageError::InvalidToken(bad));
        }
        Ok(Self(codes))
    }

    pub fn codes(&self) -> &[u32] {
        &self.0
    }

    /// `IMG{k}` renderings joined by single spaces.
    pub fn render(&self) -> String {
        render_codes(&self.0)
    }
}

pub fn render_codes(codes: &[u32]) -> String {
    codes.iter().map(|k| format!("IMG{k}")).collect::<Vec<_>>().join(" ")
}

pub trait ImageCodec {
    fn codebook_size(&self) -> u32;
    fn tokenize(&self, image: &ImageTensor) -> ImageTokens;
    fn detokenize(&self, tokens: &ImageTokens) -> Result<ImageTensor, ImageError>;
}

/// Shorter-side-to-256 target size; unchanged when the shorter side is already 256.
pub fn resized_dims(width: u32, height: u32) -> (u32, u32) {
    let short = width.min(height);
    if short == IMAGE_SIDE {
        return (width, height);
    }
    let scale = |v: u32| ((v as u64 * IMAGE_SIDE as u64 + short as u64 / 2) / short as u64).max(IMAGE_SIDE as u64) as u32;
    if width <= height {
        (IMAGE_SIDE, scale(height))
    } else {
        (scale(width), IMAGE_SIDE)
    }
}

/// Top-left corner of the 256×256 crop out of a `width`×`height` image.
pub fn crop_offsets<R: Rng + ?Sized>(width: u32, height: u32, mode: PrepareMode, rng: &mut R) -> (u32, u32) {
    let (sx, sy) = (width - IMAGE_SIDE, height - IMAGE_SIDE);
    match mode {
        PrepareMode::Eval => (sx / 2, sy / 2),
        PrepareMode::Train => (rng.random_range(0..=sx), rng.random_range(0..=sy)),
    }
}

/// Decodes, resizes the shorter side to 256 and crops to 256×256.
pub fn prepare<R: Rng + ?Sized>(bytes: &[u8], mode: PrepareMode, rng: &mut R) -> Result<ImageTensor, ImageError> {
    let decoded = image::load_from_memory(bytes).map_err(|e| ImageError::Decode(e.to_string()))?;
    prepare_rgb(decoded.to_rgb8(), mode, rng)
}

pub fn prepare_rgb<R: Rng + ?Sized>(img: RgbImage, mode: PrepareMode, rng: &mut R) -> Result<ImageTensor, ImageError> {
    let (w, h) = img.dimensions();
    if w == 0 || h == 0 {
        return Err(ImageError::Decode("empty image".into()));
    }
    let (nw, nh) = resized_dims(w, h);
    let img = if (nw, nh) == (w, h) { img } else { image::imageops::resize(&img, nw, nh, FilterType::Triangle) };
    let (x, y) = crop_offsets(nw, nh, mode, rng);
    let crop = image::imageops::crop_imm(&img, x, y, IMAGE_SIDE, IMAGE_SIDE).to_image();
    ImageTensor::from_pixels(crop.into_raw())
}

/// Palette levels per channel: 8 red, 16 green, 8 blue (3 + 4 + 3 bits).
const LEVELS: [u32; 3] = [8, 16, 8];

/// Block-mean nearest-palette codec.
#[derive(Debug, Clone)]
pub struct PaletteCodec {
    palette: Vec<[u8; 3]>,
}

impl Default for PaletteCodec {
    fn default() -> Self {
        Self::new()
    }
}

impl PaletteCodec {
    pub fn new() -> Self {
        let level = |i: u32, n: u32| ((i * 255 + (n - 1) / 2) / (n - 1)) as u8;
        let mut palette = Vec::with_capacity(PALETTE_SIZE);
        for r in 0..LEVELS[0] {
            for g in 0..LEVELS[1] {
                for b in 0..LEVELS[2] {
                    palette.push([level(r, LEVELS[0]), level(g, LEVELS[1]), level(b, LEVELS[2])]);
                }
            }
        }
        debug_assert_eq!(palette.len(), PALETTE_SIZE);
        Self { palette }
    }

    pub fn palette(&self) -> &[[u8; 3]] {
        &self.palette
    }

    /// Nearest palette entry by squared distance; ties go to the lowest index.
    pub fn nearest(&self, rgb: [f64; 3]) -> u32 {
        let mut best = (f64::INFINITY, 0u32);
        for (i, p) in self.palette.iter().enumerate() {
            let d: f64 = (0..3).map(|c| (rgb[c] - p[c] as f64).powi(2)).sum();
            if d < best.0 {
                best = (d, i as u32);
            }
        }
        best.1
    }
}

impl ImageCodec for PaletteCodec {
    fn codebook_size(&self) -> u32 {
        PALETTE_SIZE as u32
    }

    fn tokenize(&self, image: &ImageTensor) -> ImageTokens {
        let mut codes = Vec::with_capacity(IMAGE_TOKENS_PER_IMAGE);
        for by in 0..GRID_SIDE {
            for bx in 0..GRID_SIDE {
                codes.push(self.nearest(image.block_mean(bx, by)));
            }
        }
        ImageTokens(codes)
    }

    fn detokenize(&self, tokens: &ImageTokens) -> Result<ImageTensor, ImageError> {
        let mut out = ImageTensor::filled([0, 0, 0]);
        for (i, &code) in tokens.codes().iter().enumerate() {
            let rgb = *self.palette.get(code as usize).ok_or(ImageError::InvalidToken(code))?;
            let (bx, by) = (i % GRID_SIDE, i / GRID_SIDE);
            for y in by * BLOCK_SIDE..(by + 1) * BLOCK_SIDE {
                for x in bx * BLOCK_SIDE..(bx + 1) * BLOCK_SIDE {
                    out.set_pixel(x, y, rgb);
                }
            }
        }
        Ok(out)
    }
}

/// Replaces the `src` of an `img` element with the rendered tokens.
pub fn embed_in_src(img: &mut Element, tokens: &ImageTokens) -> Result<(), ImageError> {
    match img.attrs.get_mut("src") {
        Some(src) if img.tag == "img" => {
            *src = tokens.render();
            Ok(())
        }
        _ => Err(ImageError::MissingSrc(img.tag.clone())),
    }
}

/// Maps an `src` value to a file under `dir`. URLs resolve by their last path segment;
/// nothing is ever fetched.
pub fn resolve_src(dir: &Path, src: &str) -> Option<PathBuf> {
    let path = match src.split_once("://") {
        Some((_, rest)) => rest.split(['?', '#']).next()?.rsplit('/').next()?,
        None => src.trim_start_matches("./"),
    };
    if path.is_empty() || path.contains("..") {
        return None;
    }
    let full = dir.join(path);
    full.is_file().then_some(full)
}

/// Tokenizes every `img` whose `src` resolves to a local file. `rng_for` supplies
/// the crop randomness for the n-th image. Returns the number of images embedded.
pub fn inline_images<C: ImageCodec, R: Rng>(
    root: &mut Element,
    dir: &Path,
    mode: PrepareMode,
    codec: &C,
    mut rng_for: impl FnMut(usize) -> R,
) -> Result<usize, ImageError> {
    let mut count = 0;
    let mut result = Ok(());
    root.walk_mut(&mut |e| {
        if result.is_err() || e.tag != "img" {
            return;
        }
        let Some(path) = e.attrs.get("src").and_then(|s| resolve_src(dir, s)) else { return };
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(err) => {
                result = Err(ImageError::Decode(format!("{}: {err}", path.display())));
                return;
            }
        };
        let mut rng = rng_for(count);
        result = prepare(&bytes, mode, &mut rng).and_then(|t| embed_in_src(e, &codec.tokenize(&t)));
        count += 1;
    });
    result.map(|_| count)
}

/// `img` elements in document order.
pub fn images(root: &Element) -> Vec<&Element> {
    let mut out = Vec::new();
    root.walk(&mut |e| {
        if e.tag == "img" {
            out.push(e);
        }
    });
    out
}
