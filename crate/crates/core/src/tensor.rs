//! Dense image and cube containers plus the bilinear sampler.

use crate::error::{shape_mismatch, Error, Result};

/// Row-major float image with 1 or 3 interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuf {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<f32>,
}

impl ImageBuf {
    /// Zero-filled image.
    pub fn new(width: usize, height: usize, channels: usize) -> Result<Self> {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Result<Self> {
        check_dims(width, height, channels)?;
        if !value.is_finite() {
            return Err(Error::InvalidArgument(format!("fill value {value} is not finite")));
        }
        Ok(Self { width, height, channels, pixels: vec![value; width * height * channels] })
    }

    pub fn from_pixels(width: usize, height: usize, channels: usize, pixels: Vec<f32>) -> Result<Self> {
        check_dims(width, height, channels)?;
        if pixels.len() != width * height * channels {
            return Err(shape_mismatch(
                "pixel buffer length vs width*height*channels",
                pixels.len(),
                width * height * channels,
            ));
        }
        if let Some(i) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("pixel {i} is not finite")));
        }
        Ok(Self { width, height, channels, pixels })
    }

    /// Builds an image by evaluating `f(x, y, c)` at every sample.
    pub fn from_fn(width: usize, height: usize, channels: usize, f: impl Fn(usize, usize, usize) -> f32) -> Result<Self> {
        check_dims(width, height, channels)?;
        let mut pixels = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    pixels.push(f(x, y, c));
                }
            }
        }
        Self::from_pixels(width, height, channels, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(width, height, channels)`
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.width, self.height, self.channels)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f32> {
        self.pixels
    }

    pub fn row_len(&self) -> usize {
        self.width * self.channels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, value: f32) {
        self.pixels[(y * self.width + x) * self.channels + c] = value;
    }

    pub fn row(&self, y: usize) -> &[f32] {
        let n = self.row_len();
        &self.pixels[y * n..(y + 1) * n]
    }

    pub fn row_mut(&mut self, y: usize) -> &mut [f32] {
        let n = self.row_len();
        &mut self.pixels[y * n..(y + 1) * n]
    }

    /// Mutable access to the raw buffer. Callers must keep values finite.
    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn same_shape(&self, other: &ImageBuf) -> bool {
        self.dims() == other.dims()
    }

    pub fn flip_vertical(&self) -> ImageBuf {
        let mut out = self.clone();
        for y in 0..self.height {
            out.row_mut(y).copy_from_slice(self.row(self.height - 1 - y));
        }
        out
    }

    /// Clamps every value into `[0, 1]`.
    pub fn clamp_unit(&mut self) {
        for v in &mut self.pixels {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Sample variance over all values, accumulated in f64.
    pub fn variance(&self) -> f64 {
        let n = self.pixels.len() as f64;
        let mean = self.pixels.iter().map(|&v| v as f64).sum::<f64>() / n;
        self.pixels.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n
    }

    /// Bilinear sample with clamp-to-edge borders.
    pub fn sample(&self, x: f32, y: f32, c: usize) -> Result<f32> {
        bilinear_sample(self, x, y, c)
    }

    /// Box-filter resampling to `width x height`: every output pixel is the
    /// area-weighted mean of the source pixels it covers.
    pub fn area_resize(&self, width: usize, height: usize) -> Result<ImageBuf> {
        check_dims(width, height, self.channels)?;
        if width == self.width && height == self.height {
            return Ok(self.clone());
        }
        let wx = area_weights(self.width, width);
        let wy = area_weights(self.height, height);
        let ch = self.channels;

        // Horizontal pass into an f64 buffer, then vertical.
        let mut tmp = vec![0f64; width * self.height * ch];
        for y in 0..self.height {
            let src = self.row(y);
            let dst = &mut tmp[y * width * ch..(y + 1) * width * ch];
            for (ox, taps) in wx.iter().enumerate() {
                for &(sx, w) in taps {
                    for c in 0..ch {
                        dst[ox * ch + c] += w * src[sx * ch + c] as f64;
                    }
                }
            }
        }
        let mut out = vec![0f32; width * height * ch];
        for (oy, taps) in wy.iter().enumerate() {
            let dst = &mut out[oy * width * ch..(oy + 1) * width * ch];
            let mut acc = vec![0f64; width * ch];
            for &(sy, w) in taps {
                let src = &tmp[sy * width * ch..(sy + 1) * width * ch];
                for (a, s) in acc.iter_mut().zip(src) {
                    *a += w * s;
                }
            }
            for (d, a) in dst.iter_mut().zip(acc) {
                *d = a as f32;
            }
        }
        ImageBuf::from_pixels(width, height, ch, out)
    }

    /// Copies the rectangle `[x0, x0+w) x [y0, y0+h)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<ImageBuf> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::InvalidArgument(format!(
                "crop {w}x{h}+{x0}+{y0} exceeds {}x{} image",
                self.width, self.height
            )));
        }
        ImageBuf::from_fn(w, h, self.channels, |x, y, c| self.get(x0 + x, y0 + y, c))
    }
}

fn check_dims(width: usize, height: usize, channels: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!("image must be non-empty, got {width}x{height}")));
    }
    if channels != 1 && channels != 3 {
        return Err(Error::InvalidArgument(format!("images carry 1 or 3 channels, got {channels}")));
    }
    Ok(())
}

/// For each output index, the list of `(source index, weight)` pairs of a box
/// filter mapping `src` samples onto `dst` samples. Weights sum to one.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let ratio = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = o as f64 * ratio;
            let hi = (o + 1) as f64 * ratio;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(src);
            (first..last)
                .filter_map(|s| {
                    let overlap = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                    (overlap > 0.0).then_some((s, overlap / ratio))
                })
                .collect()
        })
        .collect()
}

/// Bilinear interpolation at continuous `(x, y)` (column, row), with
/// out-of-range coordinates clamped to the border.
pub fn bilinear_sample(img: &ImageBuf, x: f32, y: f32, c: usize) -> Result<f32> {
    if !x.is_finite() || !y.is_finite() {
        return Err(Error::InvalidArgument(format!("sample coordinate ({x}, {y}) is not finite")));
    }
    if c >= img.channels {
        return Err(Error::InvalidArgument(format!("channel {c} out of range for {} channels", img.channels)));
    }
    let tap = BilinearTap::new(img.width, img.height, x as f64, y as f64);
    Ok(tap.value(img.pixels(), img.channels, c) as f32)
}

/// Precomputed bilinear footprint of one sample position. Lets callers read
/// several channels (and the positional derivative) for the cost of one
/// coordinate computation.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BilinearTap {
    i00: usize,
    i01: usize,
    i10: usize,
    i11: usize,
    fx: f64,
    fy: f64,
    /// false when the axis coordinate was clamped, so the sample is locally
    /// constant along that axis.
    live_x: bool,
    live_y: bool,
}

impl BilinearTap {
    #[inline]
    pub(crate) fn new(width: usize, height: usize, x: f64, y: f64) -> Self {
        let (x0, x1, fx, live_x) = axis(x, width);
        let (y0, y1, fy, live_y) = axis(y, height);
        Self {
            i00: y0 * width + x0,
            i01: y0 * width + x1,
            i10: y1 * width + x0,
            i11: y1 * width + x1,
            fx,
            fy,
            live_x,
            live_y,
        }
    }

    #[inline]
    pub(crate) fn value(&self, pixels: &[f32], channels: usize, c: usize) -> f64 {
        let p00 = pixels[self.i00 * channels + c] as f64;
        let p01 = pixels[self.i01 * channels + c] as f64;
        let p10 = pixels[self.i10 * channels + c] as f64;
        let p11 = pixels[self.i11 * channels + c] as f64;
        let top = p00 + self.fx * (p01 - p00);
        let bottom = p10 + self.fx * (p11 - p10);
        top + self.fy * (bottom - top)
    }

    /// Value and its partial derivatives with respect to `x` and `y`.
    #[inline]
    pub(crate) fn value_grad(&self, pixels: &[f32], channels: usize, c: usize) -> (f64, f64, f64) {
        let p00 = pixels[self.i00 * channels + c] as f64;
        let p01 = pixels[self.i01 * channels + c] as f64;
        let p10 = pixels[self.i10 * channels + c] as f64;
        let p11 = pixels[self.i11 * channels + c] as f64;
        let top = p00 + self.fx * (p01 - p00);
        let bottom = p10 + self.fx * (p11 - p10);
        let value = top + self.fy * (bottom - top);
        let dx = if self.live_x { (1.0 - self.fy) * (p01 - p00) + self.fy * (p11 - p10) } else { 0.0 };
        let dy = if self.live_y { bottom - top } else { 0.0 };
        (value, dx, dy)
    }
}

#[inline]
fn axis(v: f64, len: usize) -> (usize, usize, f64, bool) {
    let max = (len - 1) as f64;
    if v <= 0.0 || len == 1 {
        // At exactly 0 the right-hand derivative is still meaningful.
        let live = v == 0.0 && len > 1;
        return (0, if live { 1 } else { 0 }, 0.0, live);
    }
    if v >= max {
        return (len - 1, len - 1, 0.0, false);
    }
    let i0 = v.floor() as usize;
    (i0, i0 + 1, v - i0 as f64, true)
}

/// Dense `frames x height x width x channels` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Cube {
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Cube {
    pub fn zeros(frames: usize, height: usize, width: usize, channels: usize) -> Result<Self> {
        Self::filled(frames, height, width, channels, 0.0)
    }

    pub fn filled(frames: usize, height: usize, width: usize, channels: usize, value: f32) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "cube dimensions must be positive, got {frames}x{height}x{width}x{channels}"
            )));
        }
        Ok(Self { frames, height, width, channels, data: vec![value; frames * height * width * channels] })
    }

    pub fn from_data(frames: usize, height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        let mut cube = Self::zeros(frames, height, width, channels)?;
        if data.len() != cube.data.len() {
            return Err(shape_mismatch("cube data length vs N*H*W*C", data.len(), cube.data.len()));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("cube element {i} is not finite")));
        }
        cube.data = data;
        Ok(cube)
    }

    /// Stacks equally shaped images into an image cube.
    pub fn from_images(images: &[ImageBuf]) -> Result<Self> {
        let first = images
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot build a cube from zero images".into()))?;
        let mut data = Vec::with_capacity(images.len() * first.pixels().len());
        for img in images {
            if !img.same_shape(first) {
                return Err(shape_mismatch("image dims (w, h, c)", img.dims(), first.dims()));
            }
            data.extend_from_slice(img.pixels());
        }
        Cube::from_data(images.len(), first.height(), first.width(), first.channels(), data)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `(N, H, W, C)`
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.frames, self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    #[inline]
    pub fn index(&self, n: usize, y: usize, x: usize, c: usize) -> usize {
        ((n * self.height + y) * self.width + x) * self.channels + c
    }

    #[inline]
    pub fn get(&self, n: usize, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.index(n, y, x, c)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, y: usize, x: usize, c: usize, value: f32) {
        let i = self.index(n, y, x, c);
        self.data[i] = value;
    }

    pub fn frame(&self, n: usize) -> &[f32] {
        let len = self.frame_len();
        &self.data[n * len..(n + 1) * len]
    }

    /// Frame `n` as an image; only valid for 1- or 3-channel cubes.
    pub fn frame_image(&self, n: usize) -> Result<ImageBuf> {
        ImageBuf::from_pixels(self.width, self.height, self.channels, self.frame(n).to_vec())
    }

    pub fn to_images(&self) -> Result<Vec<ImageBuf>> {
        (0..self.frames).map(|n| self.frame_image(n)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(w: usize, h: usize) -> ImageBuf {
        ImageBuf::from_fn(w, h, 1, |x, y, _| ((x * 7 + y * 13) % 17) as f32 / 16.0).unwrap()
    }

    #[test]
    fn constant_image_samples_constant() {
        let img = ImageBuf::filled(9, 5, 1, 0.7).unwrap();
        for &(x, y) in &[(0.0, 0.0), (3.3, 2.9), (-4.0, 10.0), (8.99, 0.01)] {
            assert_eq!(bilinear_sample(&img, x, y, 0).unwrap(), 0.7);
        }
    }

    #[test]
    fn integer_coordinates_hit_nodes() {
        let img = ramp(8, 8);
        assert_eq!(bilinear_sample(&img, 3.0, 5.0, 0).unwrap(), img.get(3, 5, 0));
    }

    #[test]
    fn checker_center_is_mean() {
        let img = ImageBuf::from_pixels(2, 2, 1, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        assert_eq!(bilinear_sample(&img, 0.5, 0.5, 0).unwrap(), 0.5);
    }

    #[test]
    fn out_of_range_clamps_to_edge() {
        let img = ramp(6, 4);
        for y in 0..4 {
            assert_eq!(bilinear_sample(&img, -2.0, y as f32, 0).unwrap(), img.get(0, y, 0));
            assert_eq!(bilinear_sample(&img, 40.0, y as f32, 0).unwrap(), img.get(5, y, 0));
        }
    }

    #[test]
    fn non_finite_coordinates_rejected() {
        let img = ramp(4, 4);
        assert!(matches!(bilinear_sample(&img, f32::NAN, 0.0, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(bilinear_sample(&img, 0.0, f32::INFINITY, 0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn construction_checks() {
        assert!(ImageBuf::new(0, 3, 1).is_err());
        assert!(ImageBuf::new(3, 3, 2).is_err());
        assert!(ImageBuf::from_pixels(2, 2, 1, vec![0.0; 3]).is_err());
        assert!(ImageBuf::from_pixels(1, 1, 1, vec![f32::NAN]).is_err());
        assert!(Cube::from_data(1, 2, 2, 2, vec![0.0; 7]).is_err());
    }

    #[test]
    fn area_resize_halves_exactly() {
        let img = ImageBuf::from_pixels(4, 2, 1, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]).unwrap();
        let half = img.area_resize(2, 1).unwrap();
        assert_eq!(half.pixels(), &[2.5, 4.5]);
    }

    #[test]
    fn area_resize_preserves_mean_for_fractional_ratio() {
        let img = ramp(10, 7);
        let small = img.area_resize(4, 3).unwrap();
        let m0 = img.pixels().iter().map(|&v| v as f64).sum::<f64>() / 70.0;
        let m1 = small.pixels().iter().map(|&v| v as f64).sum::<f64>() / 12.0;
        assert!((m0 - m1).abs() < 1e-6);
    }

    #[test]
    fn tap_gradient_matches_difference() {
        let img = ramp(8, 8);
        let tap = BilinearTap::new(8, 8, 2.3, 4.6);
        let (v, dx, dy) = tap.value_grad(img.pixels(), 1, 0);
        let h = 1e-6;
        let vx = BilinearTap::new(8, 8, 2.3 + h, 4.6).value(img.pixels(), 1, 0);
        let vy = BilinearTap::new(8, 8, 2.3, 4.6 + h).value(img.pixels(), 1, 0);
        assert!(((vx - v) / h - dx).abs() < 1e-6);
        assert!(((vy - v) / h - dy).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn grid_points_reproduce_image(w in 1usize..12, h in 1usize..12, seed in 0u32..1000) {
            let img = ImageBuf::from_fn(w, h, 1, |x, y, _| ((x as u32 * 31 + y as u32 * 17 + seed) % 101) as f32 / 100.0).unwrap();
            for y in 0..h {
                for x in 0..w {
                    prop_assert_eq!(bilinear_sample(&img, x as f32, y as f32, 0).unwrap(), img.get(x, y, 0));
                }
            }
        }

        #[test]
        fn sampling_is_linear_in_the_image(x in -3.0f32..12.0, y in -3.0f32..12.0, s in 0u32..50) {
            let a = ImageBuf::from_fn(9, 9, 1, |i, j, _| ((i as u32 * 3 + j as u32 * 5 + s) % 11) as f32 / 20.0).unwrap();
            let b = ImageBuf::from_fn(9, 9, 1, |i, j, _| ((i as u32 * 7 + j as u32 + s) % 13) as f32 / 26.0).unwrap();
            let sum = ImageBuf::from_fn(9, 9, 1, |i, j, c| a.get(i, j, c) + b.get(i, j, c)).unwrap();
            let lhs = bilinear_sample(&sum, x, y, 0).unwrap();
            let rhs = bilinear_sample(&a, x, y, 0).unwrap() + bilinear_sample(&b, x, y, 0).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-5);
        }

        #[test]
        fn sampling_is_lipschitz(x in 0.0f32..7.0, y in 0.0f32..7.0, d in 0.0f32..0.99) {
            let img = ramp(8, 8);
            let mut max_adj = 0f32;
            for j in 0..8 {
                for i in 0..8 {
                    if i + 1 < 8 { max_adj = max_adj.max((img.get(i + 1, j, 0) - img.get(i, j, 0)).abs()); }
                    if j + 1 < 8 { max_adj = max_adj.max((img.get(i, j + 1, 0) - img.get(i, j, 0)).abs()); }
                }
            }
            let f0 = bilinear_sample(&img, x, y, 0).unwrap();
            let fx = bilinear_sample(&img, x + d, y, 0).unwrap();
            let fy = bilinear_sample(&img, x, y + d, 0).unwrap();
            prop_assert!((fx - f0).abs() <= d * max_adj + 1e-5);
            prop_assert!((fy - f0).abs() <= d * max_adj + 1e-5);
        }
    }
}
