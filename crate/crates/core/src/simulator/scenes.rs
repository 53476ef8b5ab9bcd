//! Procedural scenes with analytic ground truth.
//!
//! Every scene is a function of continuous image position and time, so any
//! GS frame can be rendered exactly and the true motion is known.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::VelocityCube;
use crate::par;
use crate::simulator::{FrameStack, RsConfig, ScanDirection};
use crate::tensor::ImageBuf;

/// A time-varying scene that can be rendered into GS frames.
pub trait Scene: Sync {
    /// Intensity of channel `c` at pixel centre `(x, y)` and time `t`.
    fn intensity(&self, x: f64, y: f64, c: usize, t: f64) -> f64;

    /// Renders row `y` at time `t` into `out` (`width * channels` values).
    fn render_row(&self, y: usize, t: f64, channels: usize, out: &mut [f32]) {
        for (x, px) in out.chunks_mut(channels).enumerate() {
            for (c, v) in px.iter_mut().enumerate() {
                *v = self.intensity(x as f64, y as f64, c, t).clamp(0.0, 1.0) as f32;
            }
        }
    }
}

/// Renders the GS frame at time `t`.
pub fn render_frame<S: Scene + ?Sized>(scene: &S, width: usize, height: usize, channels: usize, t: f64) -> Result<ImageBuf> {
    let mut img = ImageBuf::new(width, height, channels)?;
    let row_len = img.row_len();
    par::for_each_chunk_mut(img.pixels_mut(), row_len, |y, row| scene.render_row(y, t, channels, row));
    Ok(img)
}

/// Renders `count` frames at `t0, t0 + dt, ...`.
pub fn render_stack<S: Scene + ?Sized>(
    scene: &S,
    width: usize,
    height: usize,
    channels: usize,
    t0: f64,
    dt: f64,
    count: usize,
) -> Result<FrameStack> {
    let frames = par::map_range(count, |k| render_frame(scene, width, height, channels, t0 + k as f64 * dt))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    FrameStack::new(frames, t0, dt)
}

/// Smooth band-limited texture: a normalised sum of random plane waves.
#[derive(Debug, Clone)]
pub struct Texture {
    waves: Vec<Wave>,
    channel_phase: [f64; 3],
    amplitude: f64,
}

#[derive(Debug, Clone, Copy)]
struct Wave {
    kx: f64,
    ky: f64,
    phase: f64,
    weight: f64,
}

impl Texture {
    /// `count` plane waves with wavelengths drawn from `[min_wavelength, max_wavelength]` pixels.
    pub fn random(seed: u64, count: usize, min_wavelength: f64, max_wavelength: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let waves: Vec<Wave> = (0..count.max(1))
            .map(|_| {
                let lambda = rng.gen_range(min_wavelength..=max_wavelength);
                let theta = rng.gen_range(0.0..std::f64::consts::PI);
                let k = std::f64::consts::TAU / lambda;
                Wave {
                    kx: k * theta.cos(),
                    ky: k * theta.sin(),
                    phase: rng.gen_range(0.0..std::f64::consts::TAU),
                    weight: rng.gen_range(0.5..1.0),
                }
            })
            .collect();
        // Scale so the sum has a standard deviation of 0.15 around mid-grey.
        let std: f64 = (waves.iter().map(|w| w.weight * w.weight).sum::<f64>() / 2.0).sqrt();
        Self {
            waves,
            channel_phase: [0.0, rng.gen_range(0.5..2.5), rng.gen_range(2.5..4.5)],
            amplitude: 0.15 / std,
        }
    }

    /// Value in `[0, 1]` at continuous position `(x, y)`.
    pub fn value(&self, x: f64, y: f64, c: usize) -> f64 {
        let shift = self.channel_phase[c.min(2)];
        let s: f64 = self.waves.iter().map(|w| w.weight * (w.kx * x + w.ky * y + w.phase + shift).sin()).sum();
        (0.5 + self.amplitude * s).clamp(0.02, 0.98)
    }

    /// Values at `(x - dx, y - dy)` for `x = 0, 1, ...`, one per entry of
    /// `out`, written with stride `stride` starting at `out[0]`.
    ///
    /// Steps each wave along the row with the angle-addition recurrence,
    /// reseeding periodically to bound drift.
    fn row_into(&self, dx: f64, y: f64, c: usize, out: &mut [f32], stride: usize) {
        const RESEED: usize = 32;
        let shift = self.channel_phase[c.min(2)];
        let width = out.len().div_ceil(stride);
        let mut acc = vec![0.0f64; width];
        for w in &self.waves {
            let base = -w.kx * dx + w.ky * y + w.phase + shift;
            let (sk, ck) = w.kx.sin_cos();
            let mut x = 0;
            while x < width {
                let (mut s, mut co) = (w.kx * x as f64 + base).sin_cos();
                for a in &mut acc[x..(x + RESEED).min(width)] {
                    *a += w.weight * s;
                    (s, co) = (s * ck + co * sk, co * ck - s * sk);
                }
                x += RESEED;
            }
        }
        for (i, a) in acc.iter().enumerate() {
            out[i * stride] = (0.5 + self.amplitude * a).clamp(0.02, 0.98) as f32;
        }
    }
}

/// Texture translating at a constant velocity (pixels per second).
#[derive(Debug, Clone)]
pub struct TranslatingTexture {
    pub texture: Texture,
    pub velocity: [f64; 2],
}

impl Scene for TranslatingTexture {
    fn intensity(&self, x: f64, y: f64, c: usize, t: f64) -> f64 {
        self.texture.value(x - self.velocity[0] * t, y - self.velocity[1] * t, c)
    }

    fn render_row(&self, y: usize, t: f64, channels: usize, out: &mut [f32]) {
        let (dx, dy) = (self.velocity[0] * t, self.velocity[1] * t);
        for c in 0..channels {
            self.texture.row_into(dx, y as f64 - dy, c, &mut out[c..], channels);
        }
    }
}

/// Texture rotating about a centre at a constant angular rate (radians per
/// second). Gives a row-varying horizontal velocity field.
#[derive(Debug, Clone)]
pub struct RotatingTexture {
    pub texture: Texture,
    pub center: [f64; 2],
    pub angular_rate: f64,
}

impl Scene for RotatingTexture {
    fn intensity(&self, x: f64, y: f64, c: usize, t: f64) -> f64 {
        let (s, co) = (-self.angular_rate * t).sin_cos();
        let dx = x - self.center[0];
        let dy = y - self.center[1];
        self.texture.value(self.center[0] + co * dx - s * dy, self.center[1] + s * dx + co * dy, c)
    }
}

/// Opposite horizontal motion in the upper and lower halves; a simple scene
/// that no single global velocity explains.
#[derive(Debug, Clone)]
pub struct ShearedTexture {
    pub texture: Texture,
    pub split_row: f64,
    pub velocity_top: f64,
    pub velocity_bottom: f64,
}

impl Scene for ShearedTexture {
    fn intensity(&self, x: f64, y: f64, c: usize, t: f64) -> f64 {
        let v = if y < self.split_row { self.velocity_top } else { self.velocity_bottom };
        self.texture.value(x - v * t, y, c)
    }
}

/// Bright bar of fixed width on a dark background, translating horizontally.
/// The bar centre on row `y` at time `t` is
/// `x_at_zero + tilt * (y - pivot_row) + velocity * t`. Each pixel `x` covers
/// `[x - 0.5, x + 0.5]` and is shaded by its exact overlap with the bar, so
/// the intensity centroid of a row equals the bar centre.
#[derive(Debug, Clone, Copy)]
pub struct TranslatingBar {
    pub x_at_zero: f64,
    pub width: f64,
    pub tilt: f64,
    pub pivot_row: f64,
    pub velocity: f64,
    pub foreground: f64,
    pub background: f64,
}

impl TranslatingBar {
    pub fn center(&self, y: f64, t: f64) -> f64 {
        self.x_at_zero + self.tilt * (y - self.pivot_row) + self.velocity * t
    }

    fn coverage(&self, x: f64, y: f64, t: f64) -> f64 {
        let c = self.center(y, t);
        let lo = (c - self.width / 2.0).max(x - 0.5);
        let hi = (c + self.width / 2.0).min(x + 0.5);
        (hi - lo).max(0.0)
    }
}

impl Scene for TranslatingBar {
    fn intensity(&self, x: f64, y: f64, _c: usize, t: f64) -> f64 {
        self.background + (self.foreground - self.background) * self.coverage(x, y, t)
    }
}

/// A smooth texture translating at a constant velocity, sampled on a stack
/// whose interval equals the row readout. Every scan instant and every
/// extraction target then lands on a stack frame, so RS and ground-truth
/// renders are exact.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TranslationSetup {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub row_readout: f64,
    /// Pixels per full-frame readout `(M - 1) * t_r`.
    pub velocity: [f64; 2],
    pub seed: u64,
    /// Extra stack frames on each side of the exposure window (covers
    /// misaligned captures up to this many rows).
    pub margin_rows: usize,
}

impl Default for TranslationSetup {
    fn default() -> Self {
        Self {
            width: 256,
            height: 256,
            channels: 1,
            row_readout: 87e-6,
            velocity: [1.0, 0.5],
            seed: 7,
            margin_rows: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TranslationScene {
    pub stack: FrameStack,
    /// T2B camera; the midpoint sits `M/2 + margin_rows` readouts after the
    /// first stack frame.
    pub config: RsConfig,
    pub scene: TranslatingTexture,
}

impl TranslationScene {
    /// Ground-truth velocity cube for `targets` extraction instants.
    pub fn oracle_velocity(&self, targets: usize) -> VelocityCube {
        let v = self.scene.velocity;
        VelocityCube::GlobalConst {
            frames: targets,
            v: [self.config.velocity_units(v[0]), self.config.velocity_units(v[1])],
        }
    }
}

pub fn translation_scene(setup: &TranslationSetup) -> Result<TranslationScene> {
    let rows = setup.height;
    let half = rows / 2 + setup.margin_rows;
    let midpoint = half as f64 * setup.row_readout;
    let config = RsConfig::new(rows, setup.row_readout, midpoint, ScanDirection::T2B)?;
    let per_second = 1.0 / config.frame_readout();
    let scene = TranslatingTexture {
        texture: Texture::random(setup.seed, 12, 12.0, 48.0),
        velocity: [setup.velocity[0] * per_second, setup.velocity[1] * per_second],
    };
    let count = 2 * half + rows % 2 + 1;
    let stack = render_stack(&scene, setup.width, rows, setup.channels, 0.0, setup.row_readout, count)?;
    Ok(TranslationScene { stack, config, scene })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn texture_is_deterministic_and_in_range() {
        let a = Texture::random(7, 12, 10.0, 40.0);
        let b = Texture::random(7, 12, 10.0, 40.0);
        let mut lo = 1.0f64;
        let mut hi = 0.0f64;
        for i in 0..400 {
            let (x, y) = (i as f64 * 0.73, i as f64 * 1.37);
            assert_eq!(a.value(x, y, 0), b.value(x, y, 0));
            lo = lo.min(a.value(x, y, 0));
            hi = hi.max(a.value(x, y, 0));
        }
        assert!(lo >= 0.02 && hi <= 0.98);
        assert!(hi - lo > 0.3, "texture contrast too low: {lo}..{hi}");
    }

    #[test]
    fn translation_scene_covers_window() {
        let setup = TranslationSetup { width: 16, height: 9, margin_rows: 2, ..Default::default() };
        let s = translation_scene(&setup).unwrap();
        for mis in [-2, 0, 2] {
            assert!(crate::simulator::synthesize_dual(&s.stack, &s.config, mis).is_ok());
        }
        assert!(s.stack.check_coverage(s.config.exposure_start(), s.config.exposure_end()).is_ok());
        match s.oracle_velocity(5) {
            VelocityCube::GlobalConst { frames: 5, v } => {
                assert!((v[0] - 1.0).abs() < 1e-12 && (v[1] - 0.5).abs() < 1e-12);
            }
            other => panic!("unexpected oracle {other:?}"),
        }
    }

    #[test]
    fn fast_row_render_matches_pointwise() {
        let scene = TranslatingTexture { texture: Texture::random(3, 12, 8.0, 40.0), velocity: [310.0, -120.0] };
        let (w, ch, t) = (300, 3, 0.0137);
        let mut row = vec![0.0f32; w * ch];
        scene.render_row(17, t, ch, &mut row);
        for x in 0..w {
            for c in 0..ch {
                let exact = scene.intensity(x as f64, 17.0, c, t).clamp(0.0, 1.0) as f32;
                assert!((row[x * ch + c] - exact).abs() < 1e-6, "x={x} c={c}");
            }
        }
    }

    #[test]
    fn bar_centroid_matches_center() {
        let bar = TranslatingBar {
            x_at_zero: 10.3,
            width: 1.0,
            tilt: 0.0,
            pivot_row: 0.0,
            velocity: 0.0,
            foreground: 1.0,
            background: 0.0,
        };
        let row: Vec<f64> = (0..32).map(|x| bar.intensity(x as f64, 0.0, 0, 0.0)).collect();
        let mass: f64 = row.iter().sum();
        let centroid: f64 = row.iter().enumerate().map(|(x, v)| x as f64 * v).sum::<f64>() / mass;
        assert!((mass - 1.0).abs() < 1e-12);
        assert!((centroid - 10.3).abs() < 1e-12);
    }
}
