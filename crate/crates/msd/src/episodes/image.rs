//! Image primitives for the augmentation pipelines.
//!
//! All primitives work on `[C, H, W]` tensors with values in `[0, 1]`, clamp
//! their output back into that range, and draw randomness only from the rng
//! they are given.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub struct ImageView<'a> {
    pub data: &'a [f64],
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

fn view(img: &Tensor) -> Result<ImageView<'_>> {
    match img.shape() {
        [c, h, w] => Ok(ImageView {
            data: img.data(),
            channels: *c,
            height: *h,
            width: *w,
        }),
        other => Err(Error::invalid_shape("image op", other, &[3, 0, 0])),
    }
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

fn rebuild(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Tensor> {
    Tensor::from_vec(vec![channels, height, width], data.into_iter().map(clamp01).collect())
}

/// Crops `size x size` from the image center.
pub fn center_crop(img: &Tensor, size: usize) -> Result<Tensor> {
    let v = view(img)?;
    if size > v.height || size > v.width || size == 0 {
        return Err(Error::invalid_shape("center_crop", img.shape(), &[v.channels, size, size]));
    }
    let top = (v.height - size) / 2;
    let left = (v.width - size) / 2;
    crop(&v, top, left, size, size)
}

fn crop(v: &ImageView<'_>, top: usize, left: usize, ch: usize, cw: usize) -> Result<Tensor> {
    let mut out = Vec::with_capacity(v.channels * ch * cw);
    for c in 0..v.channels {
        for y in 0..ch {
            let row = (c * v.height + top + y) * v.width + left;
            out.extend_from_slice(&v.data[row..row + cw]);
        }
    }
    Tensor::from_vec(vec![v.channels, ch, cw], out)
}

/// Bilinear resize to `(out_h, out_w)`. Same-size calls are exact identities.
pub fn resize_bilinear(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let v = view(img)?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid_shape("resize", img.shape(), &[v.channels, out_h, out_w]));
    }
    if out_h == v.height && out_w == v.width {
        return Ok(img.detach());
    }
    let mut out = Vec::with_capacity(v.channels * out_h * out_w);
    let sy = v.height as f64 / out_h as f64;
    let sx = v.width as f64 / out_w as f64;
    for c in 0..v.channels {
        let plane = &v.data[c * v.height * v.width..(c + 1) * v.height * v.width];
        for y in 0..out_h {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (v.height - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(v.height - 1);
            let wy = fy - y0 as f64;
            for x in 0..out_w {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (v.width - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(v.width - 1);
                let wx = fx - x0 as f64;
                let top = plane[y0 * v.width + x0] * (1.0 - wx) + plane[y0 * v.width + x1] * wx;
                let bot = plane[y1 * v.width + x0] * (1.0 - wx) + plane[y1 * v.width + x1] * wx;
                out.push(top * (1.0 - wy) + bot * wy);
            }
        }
    }
    rebuild(v.channels, out_h, out_w, out)
}

/// Random square crop covering an area fraction drawn from `scale`, resized
/// back to the original extents. Aspect ratio is kept fixed.
pub fn resize_crop(img: &Tensor, scale: (f64, f64), rng: &mut ChaCha8Rng) -> Result<Tensor> {
    let v = view(img)?;
    let (lo, hi) = scale;
    if !(0.0 < lo && lo <= hi && hi <= 1.0) {
        return Err(Error::Config(format!("resize_crop scale range ({lo}, {hi}) invalid")));
    }
    let s = if lo == hi { lo } else { rng.gen_range(lo..hi) };
    let side_h = ((v.height as f64) * s.sqrt()).round().max(1.0) as usize;
    let side_h = side_h.min(v.height);
    let side_w = ((v.width as f64) * s.sqrt()).round().max(1.0) as usize;
    let side_w = side_w.min(v.width);
    let top = if side_h < v.height { rng.gen_range(0..=v.height - side_h) } else { 0 };
    let left = if side_w < v.width { rng.gen_range(0..=v.width - side_w) } else { 0 };
    let cropped = crop(&v, top, left, side_h, side_w)?;
    resize_bilinear(&cropped, v.height, v.width)
}

fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Replaces each pixel by its luma in all three channels.
pub fn grayscale(img: &Tensor) -> Result<Tensor> {
    let v = view(img)?;
    if v.channels != 3 {
        return Err(Error::invalid_shape("grayscale", img.shape(), &[3, v.height, v.width]));
    }
    let plane = v.height * v.width;
    let mut out = vec![0.0; 3 * plane];
    for i in 0..plane {
        let y = luma(v.data[i], v.data[plane + i], v.data[2 * plane + i]);
        out[i] = y;
        out[plane + i] = y;
        out[2 * plane + i] = y;
    }
    rebuild(3, v.height, v.width, out)
}

/// Mirrors the image horizontally.
pub fn hflip(img: &Tensor) -> Result<Tensor> {
    let v = view(img)?;
    let mut out = Vec::with_capacity(v.data.len());
    for c in 0..v.channels {
        for y in 0..v.height {
            let row = (c * v.height + y) * v.width;
            out.extend(v.data[row..row + v.width].iter().rev());
        }
    }
    Tensor::from_vec(img.shape().to_vec(), out)
}

/// Color jitter: multiplicative brightness/contrast/saturation factors drawn
/// uniformly from `[1-s, 1+s]` and an additive hue rotation bounded by
/// `hue` (as a fraction of the color wheel). Applied in that fixed order.
pub fn color_jitter(
    img: &Tensor,
    strengths: (f64, f64, f64, f64),
    rng: &mut ChaCha8Rng,
) -> Result<Tensor> {
    let v = view(img)?;
    if v.channels != 3 {
        return Err(Error::invalid_shape("color_jitter", img.shape(), &[3, v.height, v.width]));
    }
    let (bs, cs, ss, hs) = strengths;
    let draw = |rng: &mut ChaCha8Rng, s: f64| -> f64 {
        if s == 0.0 {
            1.0
        } else {
            rng.gen_range((1.0 - s).max(0.0)..1.0 + s)
        }
    };
    let fb = draw(rng, bs);
    let fc = draw(rng, cs);
    let fs = draw(rng, ss);
    let dh = if hs == 0.0 { 0.0 } else { rng.gen_range(-hs..hs) };

    let plane = v.height * v.width;
    let mut data = v.data.to_vec();

    // brightness
    data.iter_mut().for_each(|p| *p = clamp01(*p * fb));
    // contrast around the mean luma
    let mean = (0..plane)
        .map(|i| luma(data[i], data[plane + i], data[2 * plane + i]))
        .sum::<f64>()
        / plane as f64;
    data.iter_mut().for_each(|p| *p = clamp01((*p - mean) * fc + mean));
    // saturation toward per-pixel luma
    for i in 0..plane {
        let y = luma(data[i], data[plane + i], data[2 * plane + i]);
        for c in 0..3 {
            let p = &mut data[c * plane + i];
            *p = clamp01(y + (*p - y) * fs);
        }
    }
    // hue rotation in HSV
    if dh != 0.0 {
        for i in 0..plane {
            let (h, s, val) = rgb_to_hsv(data[i], data[plane + i], data[2 * plane + i]);
            let h = (h + dh).rem_euclid(1.0);
            let (r, g, b) = hsv_to_rgb(h, s, val);
            data[i] = r;
            data[plane + i] = g;
            data[2 * plane + i] = b;
        }
    }
    rebuild(3, v.height, v.width, data)
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        (((g - b) / delta).rem_euclid(6.0)) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = h * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6.rem_euclid(2.0)) - 1.0).abs());
    let (r, g, b) = match h6 as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r + m, g + m, b + m)
}

/// Gaussian blur with the given sigma, separable kernel, clamp-to-edge
/// padding. Sigmas below 0.05 are effectively the identity.
pub fn gaussian_blur(img: &Tensor, sigma: f64) -> Result<Tensor> {
    let v = view(img)?;
    if sigma <= 0.0 {
        return Ok(img.detach());
    }
    let radius = (3.0 * sigma).ceil().max(1.0) as usize;
    let mut kernel = Vec::with_capacity(2 * radius + 1);
    for i in 0..=2 * radius {
        let d = i as f64 - radius as f64;
        kernel.push((-d * d / (2.0 * sigma * sigma)).exp());
    }
    let norm: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= norm);

    let plane = v.height * v.width;
    let mut horiz = vec![0.0; v.data.len()];
    for c in 0..v.channels {
        for y in 0..v.height {
            for x in 0..v.width {
                let mut acc = 0.0;
                for (i, k) in kernel.iter().enumerate() {
                    let sx = (x as isize + i as isize - radius as isize)
                        .clamp(0, v.width as isize - 1) as usize;
                    acc += k * v.data[c * plane + y * v.width + sx];
                }
                horiz[c * plane + y * v.width + x] = acc;
            }
        }
    }
    let mut out = vec![0.0; v.data.len()];
    for c in 0..v.channels {
        for y in 0..v.height {
            for x in 0..v.width {
                let mut acc = 0.0;
                for (i, k) in kernel.iter().enumerate() {
                    let sy = (y as isize + i as isize - radius as isize)
                        .clamp(0, v.height as isize - 1) as usize;
                    acc += k * horiz[c * plane + sy * v.width + x];
                }
                out[c * plane + y * v.width + x] = acc;
            }
        }
    }
    rebuild(v.channels, v.height, v.width, out)
}

/// Draws the blur sigma around `expectation` with the given `variance`,
/// truncated below at 0.05.
pub fn draw_blur_sigma(expectation: f64, variance: f64, rng: &mut ChaCha8Rng) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    (expectation + z * variance.sqrt()).max(0.05)
}
