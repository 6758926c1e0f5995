//! 8-bit RGB images: decoding, ROI extraction, normalization into network
//! input, and the perturbations used by robustness sweeps.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::INPUT_SIZE;
use crate::tensor::Tensor;
use crate::weights::{ChannelOrder, Normalization};

/// Row-major RGB raster, three bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Argument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height * 3 {
            return Err(Error::Argument(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(ImageBuffer {
            width,
            height,
            pixels,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                pixels.extend_from_slice(&f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        Self::from_fn(width, height, |_, _| rgb)
    }

    /// Decodes a PNG or JPEG file.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let decoded = image::open(path).map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::Image {
                path: path.to_path_buf(),
                message: other.to_string(),
            },
        })?;
        let rgb = decoded.to_rgb8();
        let (w, h) = rgb.dimensions();
        Self::new(w as usize, h as usize, rgb.into_raw())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        image::save_buffer(
            path,
            &self.pixels,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// One colour plane as a dense row-major array.
    fn plane(&self, c: usize) -> Vec<u8> {
        self.pixels.iter().skip(c).step_by(3).copied().collect()
    }

    fn from_planes(width: usize, height: usize, planes: [Vec<u8>; 3]) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height * 3);
        for i in 0..width * height {
            pixels.extend(planes.iter().map(|p| p[i]));
        }
        Self::new(width, height, pixels)
    }

    fn map_planes(&self, f: impl Fn(&[u8]) -> Vec<u8>) -> Result<Self> {
        let planes = [0, 1, 2].map(|c| f(&self.plane(c)));
        Self::from_planes(self.width, self.height, planes)
    }
}

/// Copies the 224x224 window whose top-left corner is `(x, y)`.
pub fn crop_roi(img: &ImageBuffer, x: usize, y: usize) -> Result<ImageBuffer> {
    crop(img, x, y, INPUT_SIZE, INPUT_SIZE)
}

fn crop(img: &ImageBuffer, x: usize, y: usize, w: usize, h: usize) -> Result<ImageBuffer> {
    if x + w > img.width || y + h > img.height {
        return Err(Error::Argument(format!(
            "ROI {w}x{h} at ({x},{y}) does not fit in {}x{} image",
            img.width, img.height
        )));
    }
    let mut pixels = Vec::with_capacity(w * h * 3);
    for row in y..y + h {
        let start = (row * img.width + x) * 3;
        pixels.extend_from_slice(&img.pixels[start..start + w * 3]);
    }
    ImageBuffer::new(w, h, pixels)
}

/// Default ROI: scale the short side to 224 (bilinear), then take the
/// centred 224x224 window. Images whose short side is already 224 are not
/// resampled.
pub fn center_roi(img: &ImageBuffer) -> Result<ImageBuffer> {
    let short = img.width.min(img.height);
    let scaled = if short == INPUT_SIZE {
        img.clone()
    } else {
        let (w, h) = if img.width <= img.height {
            (INPUT_SIZE, (img.height * INPUT_SIZE + short / 2) / short)
        } else {
            ((img.width * INPUT_SIZE + short / 2) / short, INPUT_SIZE)
        };
        let src =
            image::RgbImage::from_raw(img.width as u32, img.height as u32, img.pixels.clone())
                .ok_or_else(|| Error::Argument("image buffer size mismatch".into()))?;
        let resized = image::imageops::resize(
            &src,
            w.max(INPUT_SIZE) as u32,
            h.max(INPUT_SIZE) as u32,
            image::imageops::FilterType::Triangle,
        );
        let (rw, rh) = resized.dimensions();
        ImageBuffer::new(rw as usize, rh as usize, resized.into_raw())?
    };
    let x = (scaled.width - INPUT_SIZE) / 2;
    let y = (scaled.height - INPUT_SIZE) / 2;
    crop_roi(&scaled, x, y)
}

/// `(pixel / pixel_scale - mean[c]) / std[c]`, channel-major, in the
/// manifest's channel order. Arithmetic is plain `f32` in that order.
pub fn to_input_tensor(img: &ImageBuffer, norm: &Normalization) -> Result<Tensor> {
    if img.width != INPUT_SIZE || img.height != INPUT_SIZE {
        return Err(Error::Argument(format!(
            "network input image must be {INPUT_SIZE}x{INPUT_SIZE}, got {}x{}",
            img.width, img.height
        )));
    }
    let plane = INPUT_SIZE * INPUT_SIZE;
    let mut data = vec![0.0f32; 3 * plane];
    for c in 0..3 {
        let src = match norm.channel_order {
            ChannelOrder::Rgb => c,
            ChannelOrder::Bgr => 2 - c,
        };
        let (mean, std) = (norm.mean[c], norm.std[c]);
        for (i, slot) in data[c * plane..(c + 1) * plane].iter_mut().enumerate() {
            let v = f32::from(img.pixels[i * 3 + src]);
            *slot = (v / norm.pixel_scale - mean) / std;
        }
    }
    Tensor::new(3, INPUT_SIZE, INPUT_SIZE, data)
}

/// Replaces each pixel with probability `p` by black or white (even odds).
pub fn salt_pepper(img: &ImageBuffer, p: f64, seed: u64) -> Result<ImageBuffer> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Argument(format!(
            "salt-and-pepper proportion {p} not in [0, 1]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = img.clone();
    for px in out.pixels.chunks_exact_mut(3) {
        if rng.gen::<f64>() < p {
            let v = if rng.gen::<bool>() { 255 } else { 0 };
            px.fill(v);
        }
    }
    Ok(out)
}

fn check_odd(kind: &str, size: usize) -> Result<()> {
    if size == 0 || size.is_multiple_of(2) {
        return Err(Error::Argument(format!(
            "{kind} size must be odd and >= 1, got {size}"
        )));
    }
    Ok(())
}

/// Normalized 1-D Gaussian taps for an odd window `k`, sigma = k / 6.
pub fn gaussian_taps(k: usize) -> Result<Vec<f64>> {
    check_odd("gaussian kernel", k)?;
    let r = (k / 2) as isize;
    let sigma = k as f64 / 6.0;
    let raw: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / sum).collect())
}

/// Separable Gaussian smoothing with clamp-to-edge borders; the result is
/// rounded once at the end.
pub fn gaussian_blur(img: &ImageBuffer, k: usize) -> Result<ImageBuffer> {
    let taps = gaussian_taps(k)?;
    if k == 1 {
        return Ok(img.clone());
    }
    let (w, h) = (img.width, img.height);
    let r = (k / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    img.map_planes(|plane| {
        let mut horiz = vec![0.0f64; w * h];
        for y in 0..h {
            let row = &plane[y * w..(y + 1) * w];
            for x in 0..w {
                horiz[y * w + x] = taps
                    .iter()
                    .enumerate()
                    .map(|(t, wt)| wt * f64::from(row[clamp(x as isize + t as isize - r, w)]))
                    .sum();
            }
        }
        let mut out = vec![0u8; w * h];
        for y in 0..h {
            for x in 0..w {
                let v: f64 = taps
                    .iter()
                    .enumerate()
                    .map(|(t, wt)| wt * horiz[clamp(y as isize + t as isize - r, h) * w + x])
                    .sum();
                out[y * w + x] = v.round().clamp(0.0, 255.0) as u8;
            }
        }
        out
    })
}

/// Windowwise minimum over an `s`x`s` square, per channel.
pub fn erode(img: &ImageBuffer, s: usize) -> Result<ImageBuffer> {
    check_odd("erosion structuring element", s)?;
    img.map_planes(|p| square_filter(p, img.width, img.height, s, u8::min))
}

/// Windowwise maximum over an `s`x`s` square, per channel.
pub fn dilate(img: &ImageBuffer, s: usize) -> Result<ImageBuffer> {
    check_odd("dilation structuring element", s)?;
    img.map_planes(|p| square_filter(p, img.width, img.height, s, u8::max))
}

// Square min/max is separable: rows first, then columns.
fn square_filter(plane: &[u8], w: usize, h: usize, s: usize, pick: fn(u8, u8) -> u8) -> Vec<u8> {
    if s == 1 {
        return plane.to_vec();
    }
    let r = (s / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut rows = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            rows[y * w + x] = (-r..=r)
                .map(|d| plane[y * w + clamp(x as isize + d, w)])
                .reduce(pick)
                .unwrap_or_default();
        }
    }
    let mut out = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (-r..=r)
                .map(|d| rows[clamp(y as isize + d, h) * w + x])
                .reduce(pick)
                .unwrap_or_default();
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationKind {
    Saltpepper,
    Gaussian,
    Erode,
    Dilate,
}

impl PerturbationKind {
    /// Level at which the perturbation leaves the image untouched.
    pub fn identity_level(self) -> f64 {
        match self {
            PerturbationKind::Saltpepper => 0.0,
            _ => 1.0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PerturbationKind::Saltpepper => "saltpepper",
            PerturbationKind::Gaussian => "gaussian",
            PerturbationKind::Erode => "erode",
            PerturbationKind::Dilate => "dilate",
        }
    }

    /// Sweep grid used when no levels are given.
    pub fn default_levels(self) -> Vec<f64> {
        match self {
            PerturbationKind::Saltpepper => vec![0.05, 0.1, 0.2, 0.3, 0.4, 0.5],
            _ => vec![3.0, 5.0, 7.0, 9.0, 11.0],
        }
    }
}

impl fmt::Display for PerturbationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PerturbationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "saltpepper" | "salt_pepper" | "bw" => Ok(PerturbationKind::Saltpepper),
            "gaussian" | "blur" => Ok(PerturbationKind::Gaussian),
            "erode" | "erosion" => Ok(PerturbationKind::Erode),
            "dilate" | "dilation" => Ok(PerturbationKind::Dilate),
            other => Err(Error::Argument(format!(
                "unknown perturbation {other:?} (saltpepper|gaussian|erode|dilate)"
            ))),
        }
    }
}

/// One perturbation at one level. `level` is a proportion for salt-and-pepper
/// and an odd window size for the others; `seed` only matters for noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub kind: PerturbationKind,
    pub level: f64,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn new(kind: PerturbationKind, level: f64, seed: u64) -> Result<Self> {
        let spec = PerturbationSpec { kind, level, seed };
        spec.window_size()?;
        Ok(spec)
    }

    fn window_size(&self) -> Result<usize> {
        match self.kind {
            PerturbationKind::Saltpepper => {
                if !(0.0..=1.0).contains(&self.level) {
                    return Err(Error::Argument(format!(
                        "salt-and-pepper proportion {} not in [0, 1]",
                        self.level
                    )));
                }
                Ok(0)
            }
            _ => {
                let s = self.level;
                if s.fract() != 0.0 || s < 1.0 || s % 2.0 != 1.0 {
                    return Err(Error::Argument(format!(
                        "{} size must be an odd integer >= 1, got {s}",
                        self.kind
                    )));
                }
                Ok(s as usize)
            }
        }
    }

    pub fn is_identity(&self) -> bool {
        self.level == self.kind.identity_level()
    }

    pub fn apply(&self, img: &ImageBuffer) -> Result<ImageBuffer> {
        let size = self.window_size()?;
        match self.kind {
            PerturbationKind::Saltpepper => salt_pepper(img, self.level, self.seed),
            PerturbationKind::Gaussian => gaussian_blur(img, size),
            PerturbationKind::Erode => erode(img, size),
            PerturbationKind::Dilate => dilate(img, size),
        }
    }
}
