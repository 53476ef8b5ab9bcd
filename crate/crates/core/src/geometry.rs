//! Time cubes, target instants and the velocity-to-flow factorization.
//!
//! For `N` extraction targets and `M` rows, the time cube holds the signed
//! offset between each RS row's scan instant and each target instant,
//! normalised by the full-frame readout `(M - 1) * t_r`. With 0-based row `m`
//! and target `n`:
//!
//! ```text
//! t2b:  m / (M - 1)           - n / (N - 1)
//! b2t:  (M - 1 - m) / (M - 1) - n / (N - 1)
//! ```
//!
//! A single target (`N = 1`) sits at the frame midpoint, fraction `1/2`.
//! Multiplying the cube by a velocity in pixels per full-frame readout gives
//! the backward-warping flow in pixels.

use serde::{Deserialize, Serialize};

use crate::error::{shape_mismatch, Error, Result};
use crate::simulator::{RsConfig, ScanDirection};
use crate::tensor::{Cube, ImageBuf};

/// Per-row normalised time offsets for every target instant.
///
/// Entries are stored as integer numerators over one shared denominator so
/// structural identities (flip, row sums) can be checked exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeCube {
    rows: usize,
    targets: usize,
    direction: ScanDirection,
    shift_rows: i64,
    denominator: i64,
    numerators: Vec<i64>,
}

/// Builds the time cube for `rows` rows and `targets` extraction instants.
pub fn build_time_cube(rows: usize, targets: usize, direction: ScanDirection) -> Result<TimeCube> {
    TimeCube::new(rows, targets, direction, 0)
}

impl TimeCube {
    /// Time cube whose scan instants are delayed by `shift_rows` row readouts
    /// (a misaligned capture clock). `shift_rows = 0` is the plain cube.
    pub fn new(rows: usize, targets: usize, direction: ScanDirection, shift_rows: i64) -> Result<Self> {
        if rows < 2 {
            return Err(Error::InvalidArgument(format!("time cube needs at least 2 rows, got {rows}")));
        }
        if targets == 0 {
            return Err(Error::InvalidArgument("time cube needs at least one target".into()));
        }
        let (m1, per_row) = (rows as i64 - 1, row_weight(targets));
        let denominator = m1 * per_row;
        let mut numerators = Vec::with_capacity(rows * targets);
        for n in 0..targets {
            let target = target_numerator(n, targets, m1);
            for m in 0..rows as i64 {
                let row = match direction {
                    ScanDirection::T2B => m,
                    ScanDirection::B2T => m1 - m,
                };
                numerators.push((row + shift_rows) * per_row - target);
            }
        }
        Ok(Self { rows, targets, direction, shift_rows, denominator, numerators })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn targets(&self) -> usize {
        self.targets
    }

    pub fn direction(&self) -> ScanDirection {
        self.direction
    }

    pub fn shift_rows(&self) -> i64 {
        self.shift_rows
    }

    /// Shared denominator of all entries.
    pub fn denominator(&self) -> i64 {
        self.denominator
    }

    /// Exact numerator of entry `(n, m)` (0-based target and row).
    pub fn numerator(&self, n: usize, m: usize) -> i64 {
        self.numerators[n * self.rows + m]
    }

    /// Entry `(n, m)` as a float.
    pub fn value(&self, n: usize, m: usize) -> f64 {
        self.numerator(n, m) as f64 / self.denominator as f64
    }

    /// Offsets of every row for target `n`.
    pub fn row_values(&self, n: usize) -> Vec<f64> {
        (0..self.rows).map(|m| self.value(n, m)).collect()
    }

    /// Offset at a continuous row coordinate. Agrees with [`TimeCube::value`]
    /// on integer rows; used when the cube is evaluated on a resampled grid.
    pub fn value_at_row(&self, n: usize, row: f64) -> f64 {
        let m1 = (self.rows - 1) as f64;
        let r = match self.direction {
            ScanDirection::T2B => row,
            ScanDirection::B2T => m1 - row,
        };
        let target = target_numerator(n, self.targets, self.rows as i64 - 1) as f64 / self.denominator as f64;
        (r + self.shift_rows as f64) / m1 - target
    }

    /// Normalised position of target `n` in the exposure window, in `[0, 1]`.
    pub fn target_fraction(&self, n: usize) -> f64 {
        target_numerator(n, self.targets, self.rows as i64 - 1) as f64 / self.denominator as f64
    }
}

/// Denominator contribution per row: `N - 1`, or 2 for the midpoint-only cube.
fn row_weight(targets: usize) -> i64 {
    if targets == 1 {
        2
    } else {
        targets as i64 - 1
    }
}

/// Numerator of target `n`'s fraction over the denominator `(M - 1) * row_weight`.
fn target_numerator(n: usize, targets: usize, m1: i64) -> i64 {
    if targets == 1 {
        m1
    } else {
        n as i64 * m1
    }
}

/// Extraction instants spanning `[t_s, t_e]` uniformly; a single target sits at `t`.
pub fn target_times(cfg: &RsConfig, targets: usize) -> Result<Vec<f64>> {
    match targets {
        0 => Err(Error::InvalidArgument("at least one target instant is required".into())),
        1 => Ok(vec![cfg.midpoint]),
        _ => {
            let (ts, te) = (cfg.exposure_start(), cfg.exposure_end());
            Ok((0..targets)
                .map(|n| ts + n as f64 / (targets - 1) as f64 * (te - ts))
                .collect())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parameterization {
    /// One 2-vector shared by every pixel and target.
    GlobalConst,
    /// `v(x, y)` affine in normalised image position, shared by every target.
    GlobalAffine,
    /// Independent 2-vector per pixel and target.
    Dense,
}

/// Velocity cube in pixels per full-frame readout.
#[derive(Debug, Clone, PartialEq)]
pub enum VelocityCube {
    GlobalConst { frames: usize, v: [f64; 2] },
    /// `vx = c0 + c1 xn + c2 yn`, `vy = c3 + c4 xn + c5 yn`, with `xn`, `yn`
    /// from [`normalized_coords`].
    GlobalAffine { frames: usize, coeffs: [f64; 6] },
    /// `frames x H x W x 2`
    Dense(Cube),
}

/// Image position mapped so the centre is 0 and the borders are near ±1.
#[inline]
pub fn normalized_coords(x: f64, y: f64, width: usize, height: usize) -> (f64, f64) {
    (
        (x - (width as f64 - 1.0) / 2.0) / (width as f64 / 2.0),
        (y - (height as f64 - 1.0) / 2.0) / (height as f64 / 2.0),
    )
}

impl VelocityCube {
    pub fn zeros(kind: Parameterization, frames: usize, height: usize, width: usize) -> Result<Self> {
        Ok(match kind {
            Parameterization::GlobalConst => VelocityCube::GlobalConst { frames, v: [0.0; 2] },
            Parameterization::GlobalAffine => VelocityCube::GlobalAffine { frames, coeffs: [0.0; 6] },
            Parameterization::Dense => VelocityCube::Dense(Cube::zeros(frames, height, width, 2)?),
        })
    }

    pub fn parameterization(&self) -> Parameterization {
        match self {
            VelocityCube::GlobalConst { .. } => Parameterization::GlobalConst,
            VelocityCube::GlobalAffine { .. } => Parameterization::GlobalAffine,
            VelocityCube::Dense(_) => Parameterization::Dense,
        }
    }

    pub fn frames(&self) -> usize {
        match self {
            VelocityCube::GlobalConst { frames, .. } | VelocityCube::GlobalAffine { frames, .. } => *frames,
            VelocityCube::Dense(c) => c.frames(),
        }
    }

    /// Expands to a dense `frames x height x width x 2` cube.
    pub fn expand(&self, height: usize, width: usize) -> Result<Cube> {
        match self {
            VelocityCube::Dense(c) => {
                if c.height() != height || c.width() != width || c.channels() != 2 {
                    return Err(shape_mismatch("dense velocity (h, w, c) vs grid", (c.height(), c.width(), c.channels()), (height, width, 2)));
                }
                Ok(c.clone())
            }
            _ => {
                let frames = self.frames();
                let mut cube = Cube::zeros(frames, height, width, 2)?;
                let plane: Vec<f32> = (0..height)
                    .flat_map(|y| (0..width).map(move |x| (x, y)))
                    .flat_map(|(x, y)| {
                        let v = self.global_at(x as f64, y as f64, width, height);
                        [v[0] as f32, v[1] as f32]
                    })
                    .collect();
                for n in 0..frames {
                    let len = plane.len();
                    cube.data_mut()[n * len..(n + 1) * len].copy_from_slice(&plane);
                }
                Ok(cube)
            }
        }
    }

    /// Velocity of a global parameterization at full-resolution position `(x, y)`.
    fn global_at(&self, x: f64, y: f64, width: usize, height: usize) -> [f64; 2] {
        match self {
            VelocityCube::GlobalConst { v, .. } => *v,
            VelocityCube::GlobalAffine { coeffs: c, .. } => {
                let (xn, yn) = normalized_coords(x, y, width, height);
                [c[0] + c[1] * xn + c[2] * yn, c[3] + c[4] * xn + c[5] * yn]
            }
            VelocityCube::Dense(_) => unreachable!("dense velocity has no global form"),
        }
    }

    /// Elementwise `a * self + b * other` for cubes of the same parameterization.
    pub fn combine(&self, a: f64, other: &VelocityCube, b: f64) -> Result<VelocityCube> {
        match (self, other) {
            (VelocityCube::GlobalConst { frames, v: p }, VelocityCube::GlobalConst { v: q, .. }) => {
                Ok(VelocityCube::GlobalConst { frames: *frames, v: [a * p[0] + b * q[0], a * p[1] + b * q[1]] })
            }
            (VelocityCube::GlobalAffine { frames, coeffs: p }, VelocityCube::GlobalAffine { coeffs: q, .. }) => {
                let mut coeffs = [0.0; 6];
                for i in 0..6 {
                    coeffs[i] = a * p[i] + b * q[i];
                }
                Ok(VelocityCube::GlobalAffine { frames: *frames, coeffs })
            }
            (VelocityCube::Dense(p), VelocityCube::Dense(q)) if p.shape() == q.shape() => {
                let data = p.data().iter().zip(q.data()).map(|(&x, &y)| (a * x as f64 + b * y as f64) as f32).collect();
                let (n, h, w, c) = p.shape();
                Ok(VelocityCube::Dense(Cube::from_data(n, h, w, c, data)?))
            }
            _ => Err(Error::ShapeMismatch("velocity cubes have different parameterizations or shapes".into())),
        }
    }
}

/// `F[n](x, y) = P[n][y] * V[n](x, y)` per component.
pub fn flow_from_velocity(p: &TimeCube, v: &VelocityCube, width: usize) -> Result<Cube> {
    if v.frames() != p.targets() {
        return Err(shape_mismatch("velocity frames vs time-cube targets", v.frames(), p.targets()));
    }
    let mut flow = v.expand(p.rows(), width)?;
    let row_len = width * 2;
    for n in 0..p.targets() {
        for (m, row) in flow.data_mut()[n * p.rows() * row_len..(n + 1) * p.rows() * row_len]
            .chunks_mut(row_len)
            .enumerate()
        {
            let offset = p.value(n, m);
            for f in row {
                *f = (offset * *f as f64) as f32;
            }
        }
    }
    Ok(flow)
}

/// Extracted (or ground-truth) GS frames with their instants.
#[derive(Debug, Clone, PartialEq)]
pub struct GsSequence {
    pub frames: Vec<ImageBuf>,
    pub instants: Vec<f64>,
}

impl GsSequence {
    pub fn new(frames: Vec<ImageBuf>, instants: Vec<f64>) -> Result<Self> {
        if frames.is_empty() || frames.len() != instants.len() {
            return Err(shape_mismatch("frame count vs instant count", frames.len(), instants.len()));
        }
        if let Some(f) = frames.iter().find(|f| !f.same_shape(&frames[0])) {
            return Err(shape_mismatch("sequence frame dims", f.dims(), frames[0].dims()));
        }
        if instants.windows(2).any(|w| w[1].partial_cmp(&w[0]) != Some(std::cmp::Ordering::Greater)) {
            return Err(Error::InvalidArgument("sequence instants must be strictly increasing".into()));
        }
        Ok(Self { frames, instants })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}
