//! Exposure simulation, HDR merging and Gaussian filtering.
//!
//! The simulated sensor is linear: an exposure of `t` seconds records
//! `clip(t * I + noise, 0, 1)` quantized to `2^bits` levels. Bracketed
//! frames merge into radiance-per-second by a weighted average that
//! ignores clipped values.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::math::Real;

/// One captured frame and its exposure time in seconds.
#[derive(Debug, Clone)]
pub struct LdrFrame<T> {
    /// `[H x W x 3]`, values in [0, 1].
    pub image: Array3<T>,
    pub exposure_s: T,
}

/// A bracketed exposure stack.
#[derive(Debug, Clone)]
pub struct ExposureStack<T> {
    frames: Vec<LdrFrame<T>>,
}

impl<T: Real> ExposureStack<T> {
    /// Validates positive, pairwise-distinct exposures and equal shapes.
    pub fn new(frames: Vec<LdrFrame<T>>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::invalid("exposure stack needs at least one frame"));
        }
        let shape = frames[0].image.raw_dim();
        for (i, f) in frames.iter().enumerate() {
            if f.exposure_s <= T::zero() {
                return Err(Error::invalid("exposure times must be positive"));
            }
            if f.image.raw_dim() != shape {
                return Err(Error::shape(format!(
                    "frame {i} has shape {:?}, expected {:?}",
                    f.image.shape(),
                    frames[0].image.shape()
                )));
            }
            for g in &frames[..i] {
                if g.exposure_s == f.exposure_s {
                    return Err(Error::invalid(format!(
                        "duplicate exposure time {}",
                        f.exposure_s
                    )));
                }
            }
        }
        Ok(ExposureStack { frames })
    }

    pub fn frames(&self) -> &[LdrFrame<T>] {
        &self.frames
    }
}

/// Additive Gaussian read noise plus uniform quantization.
#[derive(Debug, Clone, Copy)]
pub struct NoiseModel<T> {
    /// Read-noise standard deviation in normalized [0, 1] units.
    pub read_sigma: T,
    /// Quantization depth; 8 to 16 bits.
    pub quantization_bits: u32,
    pub seed: u64,
}

impl<T: Real> NoiseModel<T> {
    pub fn new(read_sigma: T, quantization_bits: u32, seed: u64) -> Result<Self> {
        if read_sigma < T::zero() {
            return Err(Error::invalid("read_sigma must be non-negative"));
        }
        if !(8..=16).contains(&quantization_bits) {
            return Err(Error::invalid("quantization_bits must be in [8, 16]"));
        }
        Ok(NoiseModel {
            read_sigma,
            quantization_bits,
            seed,
        })
    }

    pub fn noiseless(quantization_bits: u32) -> Result<Self> {
        Self::new(T::zero(), quantization_bits, 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    Tent,
    Uniform,
}

/// Per-value merge weight.
#[derive(Debug, Clone, Copy)]
pub struct WeightFunction<T> {
    pub kind: WeightKind,
    /// Values within this margin of 0 or 1 get zero weight (tent kind).
    pub clip_margin: T,
}

impl<T: Real> WeightFunction<T> {
    pub fn tent() -> Self {
        WeightFunction {
            kind: WeightKind::Tent,
            clip_margin: T::of(0.02),
        }
    }

    pub fn uniform() -> Self {
        WeightFunction {
            kind: WeightKind::Uniform,
            clip_margin: T::zero(),
        }
    }

    /// Weight of a recorded value in [0, 1]. The tent peaks at 0.5 and is
    /// zero within `clip_margin` of either clip boundary.
    pub fn weight(&self, v: T) -> T {
        match self.kind {
            WeightKind::Uniform => T::one(),
            WeightKind::Tent => {
                let lo = v - self.clip_margin;
                let hi = T::one() - self.clip_margin - v;
                lo.min(hi).max(T::zero())
            }
        }
    }
}

/// Linear radiance per second with a per-pixel saturation mask.
#[derive(Debug, Clone)]
pub struct RadianceImage<T> {
    /// `[H x W x 3]`.
    pub values: Array3<T>,
    /// True where no frame carried usable (unclipped) information and a
    /// fallback value was substituted.
    pub saturated_mask: Array2<bool>,
}

impl<T: Real> RadianceImage<T> {
    pub fn from_values(values: Array3<T>) -> Self {
        let (h, w) = (values.shape()[0], values.shape()[1]);
        RadianceImage {
            values,
            saturated_mask: Array2::from_elem((h, w), false),
        }
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.values.shape()[0], self.values.shape()[1])
    }
}

#[inline]
fn mix(h: u64, v: u64) -> u64 {
    let mut z = h ^ v.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Standard-normal sample fully determined by (seed, frame tag, pixel).
/// Counter-based so parallel and serial traversal orders agree bit-for-bit.
fn read_noise_sample(seed: u64, frame_tag: u64, y: usize, x: usize, c: usize) -> f64 {
    let key = mix(mix(mix(mix(seed, frame_tag), y as u64), x as u64), c as u64);
    let a = mix(key, 0x5bf0_3635);
    let b = mix(key, 0xa511_e9b3);
    // Box-Muller; u1 in (0, 1], u2 in [0, 1).
    let u1 = ((a >> 11) as f64 + 1.0) / 9_007_199_254_740_993.0;
    let u2 = (b >> 11) as f64 / 9_007_199_254_740_992.0;
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Simulates one LDR exposure of a radiance image:
/// `quantize(clip(t * I + eps, 0, 1))` with `eps ~ N(0, read_sigma)`.
///
/// Noise is a pure function of `(noise.seed, exposure_s, pixel, channel)`,
/// so repeated calls are bit-identical and distinct exposures get
/// independent noise.
pub fn simulate_ldr<T: Real>(
    radiance: &RadianceImage<T>,
    exposure_s: T,
    noise: &NoiseModel<T>,
) -> Result<Array3<T>> {
    if exposure_s <= T::zero() {
        return Err(Error::invalid("exposure time must be positive"));
    }
    let levels = (1u32 << noise.quantization_bits) - 1;
    let q = T::of(levels as f64);
    let frame_tag = exposure_s.to_f64_lossy().to_bits();
    let (h, w) = radiance.resolution();
    let mut out = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut v = exposure_s * radiance.values[[y, x, c]];
                if noise.read_sigma > T::zero() {
                    let e = read_noise_sample(noise.seed, frame_tag, y, x, c);
                    v += noise.read_sigma * T::of(e);
                }
                let clipped = v.max(T::zero()).min(T::one());
                out[[y, x, c]] = (clipped * q).round() / q;
            }
        }
    }
    Ok(out)
}

/// Merges an exposure stack into radiance per second:
///
/// ```text
/// I_HDR = sum_i W(v_i) * v_i / t_i  /  sum_i W(v_i)
/// ```
///
/// Pixels where every frame's weight vanishes (in any channel) fall back
/// to the shortest exposure's estimate and are flagged in the mask.
pub fn merge_hdr<T: Real>(
    stack: &ExposureStack<T>,
    weight: &WeightFunction<T>,
) -> Result<RadianceImage<T>> {
    let frames = stack.frames();
    let (h, w) = (frames[0].image.shape()[0], frames[0].image.shape()[1]);
    let shortest = frames
        .iter()
        .min_by(|a, b| {
            a.exposure_s
                .partial_cmp(&b.exposure_s)
                .expect("exposure times are finite")
        })
        .expect("stack is non-empty");

    let mut values = Array3::zeros((h, w, 3));
    let mut mask = Array2::from_elem((h, w), false);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let mut num = T::zero();
                let mut den = T::zero();
                for f in frames {
                    let v = f.image[[y, x, c]];
                    let wgt = weight.weight(v);
                    num += wgt * v / f.exposure_s;
                    den += wgt;
                }
                if den > T::zero() {
                    values[[y, x, c]] = num / den;
                } else {
                    values[[y, x, c]] = shortest.image[[y, x, c]] / shortest.exposure_s;
                    mask[[y, x]] = true;
                }
            }
        }
    }
    Ok(RadianceImage {
        values,
        saturated_mask: mask,
    })
}

fn gaussian_kernel<T: Real>(sigma: T) -> Vec<T> {
    let radius = (T::of(3.0) * sigma).ceil().to_f64_lossy() as i64;
    let mut k = Vec::with_capacity((2 * radius + 1) as usize);
    let two_s2 = T::of(2.0) * sigma * sigma;
    let mut sum = T::zero();
    for i in -radius..=radius {
        let d = T::of(i as f64);
        let v = (-(d * d) / two_s2).exp();
        sum += v;
        k.push(v);
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

fn blur_axis<T: Real>(src: &mut Vec<T>, tmp: &mut Vec<T>, len: usize, stride: usize, count: usize, kernel: &[T]) {
    let radius = (kernel.len() / 2) as i64;
    for lane in 0..count {
        let base = lane * if stride == 1 { len } else { 1 };
        // For stride != 1 the lanes interleave; compute explicit offsets.
        for i in 0..len {
            let mut acc = T::zero();
            for (ki, &kv) in kernel.iter().enumerate() {
                let j = (i as i64 + ki as i64 - radius).clamp(0, len as i64 - 1) as usize;
                acc += kv * src[base + j * stride];
            }
            tmp[base + i * stride] = acc;
        }
    }
    std::mem::swap(src, tmp);
}

/// Separable Gaussian blur of an `[H x W x C]` image. Kernel radius is
/// `ceil(3 sigma)`, renormalized to sum 1; borders replicate; `sigma = 0`
/// returns the image unchanged.
pub fn gaussian_filter<T: Real>(image: &Array3<T>, sigma: T) -> Result<Array3<T>> {
    if sigma < T::zero() {
        return Err(Error::invalid("sigma must be non-negative"));
    }
    if sigma == T::zero() {
        return Ok(image.clone());
    }
    let (h, w, ch) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    let kernel = gaussian_kernel(sigma);
    // Work channel-by-channel on contiguous row-major planes.
    let mut plane = vec![T::zero(); h * w];
    let mut tmp = vec![T::zero(); h * w];
    let mut result = Array3::zeros((h, w, ch));
    for c in 0..ch {
        for y in 0..h {
            for x in 0..w {
                plane[y * w + x] = image[[y, x, c]];
            }
        }
        // Horizontal: rows are contiguous lanes.
        blur_axis(&mut plane, &mut tmp, w, 1, h, &kernel);
        // Vertical: columns are strided lanes.
        blur_axis(&mut plane, &mut tmp, h, w, w, &kernel);
        for y in 0..h {
            for x in 0..w {
                result[[y, x, c]] = plane[y * w + x];
            }
        }
    }
    Ok(result)
}

/// [`gaussian_filter`] for a single-channel image.
pub fn gaussian_filter_2d<T: Real>(image: &Array2<T>, sigma: T) -> Result<Array2<T>> {
    if sigma < T::zero() {
        return Err(Error::invalid("sigma must be non-negative"));
    }
    if sigma == T::zero() {
        return Ok(image.clone());
    }
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let kernel = gaussian_kernel(sigma);
    let mut plane: Vec<T> = image.iter().copied().collect();
    let mut tmp = vec![T::zero(); h * w];
    blur_axis(&mut plane, &mut tmp, w, 1, h, &kernel);
    blur_axis(&mut plane, &mut tmp, h, w, w, &kernel);
    Ok(Array2::from_shape_vec((h, w), plane).expect("shape preserved"))
}
