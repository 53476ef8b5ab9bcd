//! Rolling-shutter image formation from global-shutter frame stacks.
//!
//! Row `i` (0-based) of an RS image with midpoint time `t` and row readout
//! `t_r` is copied from the GS scene at its scan instant:
//!
//! * top-to-bottom: `t + (i - M/2) * t_r`
//! * bottom-to-top: `t - (i - M/2) * t_r`
//!
//! The GS scene between two stack frames is the linear blend of the bracketing
//! frames. Exposure per row is instantaneous.

pub mod scenes;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{target_times, GsSequence};
use crate::par;
use crate::tensor::ImageBuf;

/// Fractional stack positions closer than this to a frame index snap onto it,
/// so grid-aligned scan instants copy rows without blending.
const SNAP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanDirection {
    T2B,
    B2T,
}

impl ScanDirection {
    pub fn reversed(self) -> Self {
        match self {
            ScanDirection::T2B => ScanDirection::B2T,
            ScanDirection::B2T => ScanDirection::T2B,
        }
    }
}

/// Shutter geometry of one RS capture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RsConfig {
    /// Row count `M` (image height).
    pub rows: usize,
    /// Seconds between the scan instants of adjacent rows.
    pub row_readout: f64,
    /// Exposure midpoint `t` in seconds.
    pub midpoint: f64,
    pub direction: ScanDirection,
}

impl RsConfig {
    pub fn new(rows: usize, row_readout: f64, midpoint: f64, direction: ScanDirection) -> Result<Self> {
        if rows < 2 {
            return Err(Error::InvalidArgument(format!("an RS frame needs at least 2 rows, got {rows}")));
        }
        if !(row_readout > 0.0 && row_readout.is_finite()) {
            return Err(Error::InvalidArgument(format!("row readout must be positive, got {row_readout}")));
        }
        if !midpoint.is_finite() {
            return Err(Error::InvalidArgument(format!("midpoint {midpoint} is not finite")));
        }
        Ok(Self { rows, row_readout, midpoint, direction })
    }

    /// `t_s = t - t_r * M / 2`
    pub fn exposure_start(&self) -> f64 {
        self.midpoint - self.row_readout * self.rows as f64 / 2.0
    }

    /// `t_e = t + t_r * M / 2`
    pub fn exposure_end(&self) -> f64 {
        self.midpoint + self.row_readout * self.rows as f64 / 2.0
    }

    /// Duration of one full-frame readout, `(M - 1) * t_r`; the time unit of
    /// velocity cubes.
    pub fn frame_readout(&self) -> f64 {
        (self.rows - 1) as f64 * self.row_readout
    }

    pub fn with_direction(mut self, direction: ScanDirection) -> Self {
        self.direction = direction;
        self
    }

    pub fn with_midpoint(mut self, midpoint: f64) -> Self {
        self.midpoint = midpoint;
        self
    }

    /// Converts a scene velocity in pixels per second into velocity-cube units
    /// (pixels per full-frame readout).
    pub fn velocity_units(&self, px_per_second: f64) -> f64 {
        px_per_second * self.frame_readout()
    }
}

/// Scan instant of row `row` (0-based).
pub fn scan_instant(row: usize, cfg: &RsConfig) -> Result<f64> {
    if row >= cfg.rows {
        return Err(Error::RowOutOfRange { row, rows: cfg.rows });
    }
    Ok(scan_instant_unchecked(row, cfg))
}

#[inline]
fn scan_instant_unchecked(row: usize, cfg: &RsConfig) -> f64 {
    let offset = (row as f64 - cfg.rows as f64 / 2.0) * cfg.row_readout;
    match cfg.direction {
        ScanDirection::T2B => cfg.midpoint + offset,
        ScanDirection::B2T => cfg.midpoint - offset,
    }
}

/// Uniformly timestamped GS frames.
#[derive(Debug, Clone)]
pub struct FrameStack {
    frames: Vec<ImageBuf>,
    t0: f64,
    dt: f64,
}

impl FrameStack {
    pub fn new(frames: Vec<ImageBuf>, t0: f64, dt: f64) -> Result<Self> {
        if frames.len() < 2 {
            return Err(Error::InvalidArgument(format!("a frame stack needs at least 2 frames, got {}", frames.len())));
        }
        if !(dt > 0.0 && dt.is_finite()) || !t0.is_finite() {
            return Err(Error::InvalidArgument(format!("stack timing t0={t0}, dt={dt} is invalid")));
        }
        if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| !f.same_shape(&frames[0])) {
            return Err(Error::ShapeMismatch(format!(
                "stack frame {i} has dims {:?} but frame 0 has {:?}",
                f.dims(),
                frames[0].dims()
            )));
        }
        Ok(Self { frames, t0, dt })
    }

    pub fn frames(&self) -> &[ImageBuf] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t_end(&self) -> f64 {
        self.t0 + (self.frames.len() - 1) as f64 * self.dt
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn channels(&self) -> usize {
        self.frames[0].channels()
    }

    /// Fails with a coverage error unless `[start, end]` lies inside the stack span.
    pub fn check_coverage(&self, start: f64, end: f64) -> Result<()> {
        let tol = SNAP * self.dt;
        if start < self.t0 - tol || end > self.t_end() + tol {
            return Err(Error::Coverage {
                need_start: start,
                need_end: end,
                have_start: self.t0,
                have_end: self.t_end(),
            });
        }
        Ok(())
    }

    /// Bracketing frame index and blend weight for instant `tau`.
    fn bracket(&self, tau: f64) -> (usize, f32) {
        let pos = (tau - self.t0) / self.dt;
        let nearest = pos.round();
        let last = self.frames.len() - 1;
        if (pos - nearest).abs() < SNAP {
            return ((nearest.max(0.0) as usize).min(last), 0.0);
        }
        let k = (pos.floor().max(0.0) as usize).min(last - 1);
        (k, (pos - k as f64).clamp(0.0, 1.0) as f32)
    }

    /// Writes row `y` of the GS scene at `tau` into `out`. Requires coverage.
    fn blend_row_into(&self, tau: f64, y: usize, out: &mut [f32]) {
        let (k, alpha) = self.bracket(tau);
        let a = self.frames[k].row(y);
        if alpha == 0.0 {
            out.copy_from_slice(a);
            return;
        }
        let b = self.frames[k + 1].row(y);
        for ((o, &va), &vb) in out.iter_mut().zip(a).zip(b) {
            // a + alpha * (b - a) is exact when a == b.
            *o = va + alpha * (vb - va);
        }
    }

    /// GS frame at an arbitrary instant inside the stack span.
    pub fn frame_at(&self, tau: f64) -> Result<ImageBuf> {
        self.check_coverage(tau, tau)?;
        let (w, h, c) = self.frames[0].dims();
        let mut out = ImageBuf::new(w, h, c)?;
        let row_len = out.row_len();
        par::for_each_chunk_mut(out.pixels_mut(), row_len, |y, row| self.blend_row_into(tau, y, row));
        Ok(out)
    }
}

/// A dual reversed RS capture sharing one row geometry.
#[derive(Debug, Clone)]
pub struct DualPair {
    pub t2b: ImageBuf,
    pub b2t: ImageBuf,
    /// Geometry of the top-to-bottom capture; the bottom-to-top one shares
    /// `rows` and `row_readout` and has midpoint `midpoint + misalignment * row_readout`.
    pub config: RsConfig,
    /// Clock offset of the b2t capture, in whole rows.
    pub row_misalignment: i32,
}

impl DualPair {
    pub fn new(t2b: ImageBuf, b2t: ImageBuf, config: RsConfig, row_misalignment: i32) -> Result<Self> {
        if !t2b.same_shape(&b2t) {
            return Err(Error::ShapeMismatch(format!(
                "t2b dims {:?} vs b2t dims {:?}",
                t2b.dims(),
                b2t.dims()
            )));
        }
        if t2b.height() != config.rows {
            return Err(Error::ShapeMismatch(format!(
                "image height {} vs configured rows {}",
                t2b.height(),
                config.rows
            )));
        }
        if row_misalignment.unsigned_abs() as usize >= config.rows {
            return Err(Error::InvalidArgument(format!(
                "misalignment of {row_misalignment} rows exceeds the {} row frame",
                config.rows
            )));
        }
        Ok(Self { t2b, b2t, config: config.with_direction(ScanDirection::T2B), row_misalignment })
    }

    pub fn width(&self) -> usize {
        self.t2b.width()
    }

    pub fn height(&self) -> usize {
        self.t2b.height()
    }

    pub fn channels(&self) -> usize {
        self.t2b.channels()
    }
}

/// Renders one RS image from a GS stack.
pub fn synthesize_rs(stack: &FrameStack, cfg: &RsConfig) -> Result<ImageBuf> {
    if stack.height() != cfg.rows {
        return Err(Error::ShapeMismatch(format!(
            "stack frame height {} vs configured rows {}",
            stack.height(),
            cfg.rows
        )));
    }
    let first = scan_instant_unchecked(0, cfg);
    let last = scan_instant_unchecked(cfg.rows - 1, cfg);
    stack.check_coverage(first.min(last), first.max(last))?;

    let mut out = ImageBuf::new(stack.width(), stack.height(), stack.channels())?;
    let row_len = out.row_len();
    par::for_each_chunk_mut(out.pixels_mut(), row_len, |y, row| {
        stack.blend_row_into(scan_instant_unchecked(y, cfg), y, row);
    });
    Ok(out)
}

/// Renders the t2b/b2t pair. The b2t capture is delayed by `misalign_rows`
/// row readouts.
pub fn synthesize_dual(stack: &FrameStack, cfg: &RsConfig, misalign_rows: i32) -> Result<DualPair> {
    if misalign_rows.unsigned_abs() as usize >= cfg.rows {
        return Err(Error::InvalidArgument(format!(
            "misalignment of {misalign_rows} rows exceeds the {} row frame",
            cfg.rows
        )));
    }
    let t2b_cfg = cfg.with_direction(ScanDirection::T2B);
    let b2t_cfg = cfg
        .with_direction(ScanDirection::B2T)
        .with_midpoint(cfg.midpoint + misalign_rows as f64 * cfg.row_readout);
    let t2b = synthesize_rs(stack, &t2b_cfg)?;
    let b2t = synthesize_rs(stack, &b2t_cfg)?;
    DualPair::new(t2b, b2t, t2b_cfg, misalign_rows)
}

/// Ground-truth GS frames at the `n` extraction instants of `cfg`.
pub fn synthesize_gt(stack: &FrameStack, cfg: &RsConfig, n: usize) -> Result<GsSequence> {
    let instants = target_times(cfg, n)?;
    stack.check_coverage(instants[0], instants[instants.len() - 1])?;
    let frames = instants.iter().map(|&t| stack.frame_at(t)).collect::<Result<Vec<_>>>()?;
    GsSequence::new(frames, instants)
}

/// Setup of the readout-ambiguity demonstration: a vertical bar seen by a
/// slow-readout camera and a pre-tilted bar seen by a fast-readout camera,
/// both moving horizontally at the same speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmbiguitySetup {
    pub width: usize,
    pub height: usize,
    pub bar_width: f64,
    /// Bar centre at the midpoint time, in pixels.
    pub bar_x: f64,
    /// Horizontal speed in pixels per second.
    pub speed: f64,
    /// Row readout of the camera viewing the vertical bar.
    pub readout_a: f64,
    /// Row readout of the camera viewing the tilted bar.
    pub readout_b: f64,
    pub midpoint: f64,
}

impl Default for AmbiguitySetup {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            bar_width: 12.0,
            bar_x: 64.0,
            speed: 2000.0,
            readout_a: 2e-4,
            readout_b: 1e-4,
            midpoint: 0.1,
        }
    }
}

impl AmbiguitySetup {
    /// Horizontal slope (pixels per row) that makes the tilted bar look
    /// identical to the vertical one under top-to-bottom scanning.
    pub fn tilt(&self) -> f64 {
        self.speed * (self.readout_a - self.readout_b)
    }
}

/// One scene of the ambiguity pair: the GS stack and the camera that views it.
#[derive(Debug, Clone)]
pub struct AmbiguityScene {
    pub stack: FrameStack,
    pub config: RsConfig,
    /// Bar slope in pixels per row.
    pub tilt: f64,
}

/// Ambiguity scenes with the default setup.
pub fn ambiguity_scene() -> Result<(AmbiguityScene, AmbiguityScene)> {
    ambiguity_scene_with(&AmbiguitySetup::default())
}

/// Builds scene A (vertical bar, readout `readout_a`) and scene B (bar tilted
/// by [`AmbiguitySetup::tilt`], readout `readout_b`). Each stack is sampled at
/// its own row readout so every scan instant falls on a stack frame.
pub fn ambiguity_scene_with(setup: &AmbiguitySetup) -> Result<(AmbiguityScene, AmbiguityScene)> {
    let make = |tilt: f64, readout: f64| -> Result<AmbiguityScene> {
        let config = RsConfig::new(setup.height, readout, setup.midpoint, ScanDirection::T2B)?;
        let bar = scenes::TranslatingBar {
            x_at_zero: setup.bar_x - setup.speed * setup.midpoint,
            width: setup.bar_width,
            tilt,
            pivot_row: setup.height as f64 / 2.0,
            velocity: setup.speed,
            foreground: 0.9,
            background: 0.1,
        };
        let half = setup.height / 2 + 1;
        let t0 = setup.midpoint - half as f64 * readout;
        let stack = scenes::render_stack(&bar, setup.width, setup.height, 1, t0, readout, 2 * half + 1)?;
        Ok(AmbiguityScene { stack, config, tilt })
    };
    Ok((make(0.0, setup.readout_a)?, make(setup.tilt(), setup.readout_b)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::scenes::{render_stack, TranslatingBar};

    fn cfg(rows: usize, dir: ScanDirection) -> RsConfig {
        RsConfig::new(rows, 1e-3, 1.0, dir).unwrap()
    }

    #[test]
    fn middle_row_scans_at_midpoint() {
        for dir in [ScanDirection::T2B, ScanDirection::B2T] {
            assert_eq!(scan_instant(5, &cfg(10, dir)).unwrap(), 1.0);
        }
    }

    #[test]
    fn first_t2b_row_scans_at_exposure_start() {
        let c = cfg(10, ScanDirection::T2B);
        assert!((scan_instant(0, &c).unwrap() - c.exposure_start()).abs() < 1e-15);
    }

    #[test]
    fn directions_are_symmetric_about_midpoint() {
        for i in 0..10 {
            let a = scan_instant(i, &cfg(10, ScanDirection::T2B)).unwrap();
            let b = scan_instant(i, &cfg(10, ScanDirection::B2T)).unwrap();
            assert!((a + b - 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn row_out_of_range() {
        assert_eq!(scan_instant(10, &cfg(10, ScanDirection::T2B)), Err(Error::RowOutOfRange { row: 10, rows: 10 }));
    }

    #[test]
    fn config_validation() {
        assert!(RsConfig::new(1, 1e-3, 0.0, ScanDirection::T2B).is_err());
        assert!(RsConfig::new(4, 0.0, 0.0, ScanDirection::T2B).is_err());
        assert!(RsConfig::new(4, -1.0, 0.0, ScanDirection::T2B).is_err());
        let c = cfg(10, ScanDirection::T2B);
        assert!((c.exposure_end() - c.exposure_start() - 10.0 * 1e-3).abs() < 1e-12);
    }

    #[test]
    fn stack_validation() {
        let a = ImageBuf::new(4, 4, 1).unwrap();
        let b = ImageBuf::new(4, 5, 1).unwrap();
        assert!(FrameStack::new(vec![a.clone()], 0.0, 1.0).is_err());
        assert!(FrameStack::new(vec![a.clone(), a.clone()], 0.0, 0.0).is_err());
        assert!(matches!(FrameStack::new(vec![a, b], 0.0, 1.0), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn insufficient_coverage_names_interval() {
        let f = ImageBuf::filled(4, 8, 1, 0.5).unwrap();
        let stack = FrameStack::new(vec![f.clone(), f], 0.0, 1e-3).unwrap();
        let c = RsConfig::new(8, 1e-3, 0.5, ScanDirection::T2B).unwrap();
        match synthesize_rs(&stack, &c) {
            Err(Error::Coverage { need_start, need_end, have_start, have_end }) => {
                assert!((need_start - 0.496).abs() < 1e-12);
                assert!((need_end - 0.503).abs() < 1e-12);
                assert_eq!((have_start, have_end), (0.0, 1e-3));
            }
            other => panic!("expected coverage error, got {other:?}"),
        }
    }

    #[test]
    fn static_stack_is_a_fixpoint() {
        let frame = ImageBuf::from_fn(7, 6, 3, |x, y, c| ((x * 5 + y * 3 + c) % 9) as f32 / 8.0 * 0.7 + 0.01).unwrap();
        let stack = FrameStack::new(vec![frame.clone(); 6], 0.0, 0.37e-3).unwrap();
        for tr in [1e-4, 2.3e-4] {
            let c = RsConfig::new(6, tr, 0.8e-3, ScanDirection::T2B).unwrap();
            assert_eq!(synthesize_rs(&stack, &c).unwrap(), frame);
            let dual = synthesize_dual(&stack, &c, 0).unwrap();
            assert_eq!(dual.t2b, dual.b2t);
        }
    }

    #[test]
    fn locality_outside_bracket() {
        let bar = TranslatingBar {
            x_at_zero: 2.0,
            width: 3.0,
            tilt: 0.0,
            pivot_row: 0.0,
            velocity: 1000.0,
            foreground: 1.0,
            background: 0.0,
        };
        let stack = render_stack(&bar, 32, 16, 1, 0.0, 1e-3, 20).unwrap();
        let c = RsConfig::new(16, 1e-3, 10.25e-3, ScanDirection::T2B).unwrap();
        let base = synthesize_rs(&stack, &c).unwrap();
        // Row 3 scans at 10.25e-3 + (3 - 8) * 1e-3 = 5.25e-3, bracketed by frames 5 and 6.
        let mut frames = stack.frames().to_vec();
        for (k, f) in frames.iter_mut().enumerate() {
            if k != 5 && k != 6 {
                *f = ImageBuf::filled(32, 16, 1, 0.33).unwrap();
            }
        }
        let altered = synthesize_rs(&FrameStack::new(frames, 0.0, 1e-3).unwrap(), &c).unwrap();
        assert_eq!(base.row(3), altered.row(3));
        assert_ne!(base.row(0), altered.row(0));
    }

    #[test]
    fn misalignment_delays_b2t() {
        let bar = TranslatingBar {
            x_at_zero: 4.0,
            width: 2.0,
            tilt: 0.0,
            pivot_row: 0.0,
            velocity: 300.0,
            foreground: 1.0,
            background: 0.0,
        };
        let stack = render_stack(&bar, 48, 16, 1, 0.0, 0.5e-3, 80).unwrap();
        let c = RsConfig::new(16, 1e-3, 15e-3, ScanDirection::T2B).unwrap();
        let shifted = synthesize_dual(&stack, &c, 2).unwrap();
        let rerendered = synthesize_dual(&stack, &c.with_midpoint(17e-3), 0).unwrap();
        assert_eq!(shifted.b2t, rerendered.b2t);
        assert_eq!(shifted.row_misalignment, 2);
        assert!(synthesize_dual(&stack, &c, 16).is_err());
    }
}
