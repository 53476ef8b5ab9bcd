//! Dual-consistency objective: Charbonnier data term between the two warped
//! RS inputs plus total variation of both flow cubes, with its analytic
//! gradient with respect to the velocity parameters.

use serde::Serialize;

use crate::error::{shape_mismatch, Error, Result};
use crate::geometry::{normalized_coords, Parameterization, VelocityCube};
use crate::par;
use crate::tensor::{BilinearTap, Cube, ImageBuf};
use crate::warp::in_bounds;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ObjectiveBreakdown {
    pub data_term: f64,
    pub tv_term: f64,
    pub total: f64,
}

/// Mean of `sqrt((a - b)^2 + eps^2)` over all elements.
pub fn charbonnier(a: &[f32], b: &[f32], eps: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(shape_mismatch("charbonnier operands (len)", a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::InvalidArgument("charbonnier of empty input".into()));
    }
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            (d * d + eps * eps).sqrt()
        })
        .sum();
    Ok(sum / a.len() as f64)
}

/// Anisotropic total variation: for every frame and channel, the mean
/// absolute forward difference along x plus the mean along y, averaged over
/// frames and channels.
pub fn tv(flow: &Cube) -> f64 {
    let (frames, h, w, ch) = flow.shape();
    if frames * ch == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for n in 0..frames {
        for c in 0..ch {
            let (mut sx, mut sy) = (0.0f64, 0.0f64);
            for y in 0..h {
                for x in 0..w {
                    let v = flow.get(n, y, x, c) as f64;
                    if x + 1 < w {
                        sx += (flow.get(n, y, x + 1, c) as f64 - v).abs();
                    }
                    if y + 1 < h {
                        sy += (flow.get(n, y + 1, x, c) as f64 - v).abs();
                    }
                }
            }
            if w > 1 {
                total += sx / ((w - 1) * h) as f64;
            }
            if h > 1 {
                total += sy / (w * (h - 1)) as f64;
            }
        }
    }
    total / (frames * ch) as f64
}

/// Dual pair and time offsets at one pyramid resolution.
#[derive(Debug, Clone)]
pub(crate) struct Level {
    pub(crate) t2b: ImageBuf,
    pub(crate) b2t: ImageBuf,
    pub(crate) targets: usize,
    /// `targets x height` time offsets of the t2b and b2t inputs.
    pub(crate) pa: Vec<f64>,
    pub(crate) pb: Vec<f64>,
    /// Level size over full size, per axis `(x, y)`.
    pub(crate) scale: [f64; 2],
}

impl Level {
    pub(crate) fn width(&self) -> usize {
        self.t2b.width()
    }

    pub(crate) fn height(&self) -> usize {
        self.t2b.height()
    }

    pub(crate) fn dense_len(&self) -> usize {
        self.targets * self.height() * self.width() * 2
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Weights {
    pub(crate) lambda_v: f64,
    pub(crate) eps: f64,
}

#[derive(Debug, Clone, Copy, Default)]
struct RowSums {
    data: f64,
    count: usize,
    tv_x: f64,
    tv_y: f64,
}

#[inline]
fn sign(e: f64) -> f64 {
    if e > 0.0 {
        1.0
    } else if e < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradient scale factors for the two TV sums, fixed by the grid size.
struct TvScale {
    x: f64,
    y: f64,
}

impl TvScale {
    fn new(level: &Level) -> Self {
        let (w, h) = (level.width(), level.height());
        // Two flow cubes, two components each, averaged over targets.
        let k = 1.0 / (2 * level.targets) as f64;
        Self {
            x: if w > 1 { k / ((w - 1) * h) as f64 } else { 0.0 },
            y: if h > 1 { k / (w * (h - 1)) as f64 } else { 0.0 },
        }
    }
}

/// Objective terms of row `y` of target `n`. When `grad` is given, writes the
/// unnormalised data gradient and the scaled TV gradient for this row.
fn row_terms(
    level: &Level,
    v: &[f64],
    n: usize,
    y: usize,
    eps: f64,
    tv_scale: &TvScale,
    grad: Option<(&mut [f64], &mut [f64])>,
) -> RowSums {
    let (w, h, ch) = level.t2b.dims();
    let r = n * h + y;
    let base = r * w * 2;
    let row = &v[base..base + 2 * w];
    let (pa, pb) = (level.pa[r], level.pb[r]);
    let (ta, tb) = (level.t2b.pixels(), level.b2t.pixels());
    let mut s = RowSums::default();
    let mut grad = grad;

    for x in 0..w {
        let (vx, vy) = (row[2 * x], row[2 * x + 1]);
        let (xa, ya) = (x as f64 + pa * vx, y as f64 + pa * vy);
        let (xb, yb) = (x as f64 + pb * vx, y as f64 + pb * vy);
        if !(in_bounds(xa, ya, w, h) && in_bounds(xb, yb, w, h)) {
            continue;
        }
        let tap_a = BilinearTap::new(w, h, xa, ya);
        let tap_b = BilinearTap::new(w, h, xb, yb);
        let (mut gx, mut gy) = (0.0, 0.0);
        for c in 0..ch {
            let (va, dax, day) = tap_a.value_grad(ta, ch, c);
            let (vb, dbx, dby) = tap_b.value_grad(tb, ch, c);
            let d = va - vb;
            let rho = (d * d + eps * eps).sqrt();
            s.data += rho;
            s.count += 1;
            if rho > 0.0 {
                let g = d / rho;
                gx += g * (pa * dax - pb * dbx);
                gy += g * (pa * day - pb * dby);
            }
        }
        if let Some((gd, _)) = grad.as_mut() {
            gd[2 * x] = gx;
            gd[2 * x + 1] = gy;
        }
    }

    for p in [pa, pb] {
        for x in 0..w.saturating_sub(1) {
            for k in 0..2 {
                let e = p * (row[2 * (x + 1) + k] - row[2 * x + k]);
                s.tv_x += e.abs();
                if let Some((_, gt)) = grad.as_mut() {
                    let g = sign(e) * p * tv_scale.x;
                    gt[2 * (x + 1) + k] += g;
                    gt[2 * x + k] -= g;
                }
            }
        }
    }
    // The difference to the next row is counted here; the one from the
    // previous row only contributes to this row's gradient.
    if y + 1 < h {
        let next = &v[base + 2 * w..base + 4 * w];
        for (p, q) in [(pa, level.pa[r + 1]), (pb, level.pb[r + 1])] {
            for i in 0..2 * w {
                let e = q * next[i] - p * row[i];
                s.tv_y += e.abs();
                if let Some((_, gt)) = grad.as_mut() {
                    gt[i] -= sign(e) * p * tv_scale.y;
                }
            }
        }
    }
    if y > 0 {
        if let Some((_, gt)) = grad.as_mut() {
            let prev = &v[base - 2 * w..base];
            for (p, q) in [(pa, level.pa[r - 1]), (pb, level.pb[r - 1])] {
                for i in 0..2 * w {
                    let e = p * row[i] - q * prev[i];
                    gt[i] += sign(e) * p * tv_scale.y;
                }
            }
        }
    }
    s
}

/// Objective (and optionally its gradient) for a dense level-unit velocity
/// field `v` of length `targets * height * width * 2`.
pub(crate) fn evaluate_dense(level: &Level, v: &[f64], weights: Weights, want_grad: bool) -> (ObjectiveBreakdown, Option<Vec<f64>>) {
    debug_assert_eq!(v.len(), level.dense_len());
    let (w, h) = (level.width(), level.height());
    let rows = level.targets * h;
    let tv_scale = TvScale::new(level);
    let eps = weights.eps;

    let (sums, grads) = if want_grad {
        // Each chunk holds one row's data gradient followed by its TV gradient.
        let mut buf = vec![0.0f64; rows * 4 * w];
        let sums = par::map_chunks_mut(&mut buf, 4 * w, |r, chunk| {
            let (gd, gt) = chunk.split_at_mut(2 * w);
            row_terms(level, v, r / h, r % h, eps, &tv_scale, Some((gd, gt)))
        });
        (sums, Some(buf))
    } else {
        (par::map_range(rows, |r| row_terms(level, v, r / h, r % h, eps, &tv_scale, None)), None)
    };

    let mut total = RowSums::default();
    for s in &sums {
        total.data += s.data;
        total.count += s.count;
        total.tv_x += s.tv_x;
        total.tv_y += s.tv_y;
    }
    let data_term = if total.count == 0 { (1.0 + eps * eps).sqrt() } else { total.data / total.count as f64 };
    let tv_term = tv_scale.x * total.tv_x + tv_scale.y * total.tv_y;
    let breakdown = ObjectiveBreakdown { data_term, tv_term, total: data_term + weights.lambda_v * tv_term };

    let grad = grads.map(|buf| {
        let inv_count = if total.count == 0 { 0.0 } else { 1.0 / total.count as f64 };
        let mut g = vec![0.0; v.len()];
        for (r, chunk) in buf.chunks(4 * w).enumerate() {
            let out = &mut g[r * 2 * w..(r + 1) * 2 * w];
            for i in 0..2 * w {
                out[i] = chunk[i] * inv_count + weights.lambda_v * chunk[2 * w + i];
            }
        }
        g
    });
    (breakdown, grad)
}

/// Number of free parameters of a parameterization on `level`.
pub(crate) fn param_len(kind: Parameterization, level: &Level) -> usize {
    match kind {
        Parameterization::GlobalConst => 2,
        Parameterization::GlobalAffine => 6,
        Parameterization::Dense => level.dense_len(),
    }
}

/// Expands parameters to a dense level-unit field. Global parameters are in
/// full-resolution pixels and are scaled per axis; dense parameters are
/// already level-unit.
pub(crate) fn params_to_dense(kind: Parameterization, p: &[f64], level: &Level) -> Vec<f64> {
    let (w, h) = (level.width(), level.height());
    let [sx, sy] = level.scale;
    match kind {
        Parameterization::Dense => p.to_vec(),
        Parameterization::GlobalConst => {
            let px = [p[0] * sx, p[1] * sy];
            px.iter().copied().cycle().take(level.dense_len()).collect()
        }
        Parameterization::GlobalAffine => {
            let mut plane = Vec::with_capacity(w * h * 2);
            for y in 0..h {
                for x in 0..w {
                    let (xn, yn) = normalized_coords(x as f64, y as f64, w, h);
                    plane.push(sx * (p[0] + p[1] * xn + p[2] * yn));
                    plane.push(sy * (p[3] + p[4] * xn + p[5] * yn));
                }
            }
            let mut out = Vec::with_capacity(level.dense_len());
            for _ in 0..level.targets {
                out.extend_from_slice(&plane);
            }
            out
        }
    }
}

/// Chains a dense-field gradient back to the parameters.
pub(crate) fn chain_gradient(kind: Parameterization, g: &[f64], level: &Level) -> Vec<f64> {
    let (w, h) = (level.width(), level.height());
    let [sx, sy] = level.scale;
    match kind {
        Parameterization::Dense => g.to_vec(),
        Parameterization::GlobalConst => {
            let (mut gx, mut gy) = (0.0, 0.0);
            for pair in g.chunks_exact(2) {
                gx += pair[0];
                gy += pair[1];
            }
            vec![sx * gx, sy * gy]
        }
        Parameterization::GlobalAffine => {
            let mut out = [0.0f64; 6];
            for (i, pair) in g.chunks_exact(2).enumerate() {
                let pix = i % (w * h);
                let (xn, yn) = normalized_coords((pix % w) as f64, (pix / w) as f64, w, h);
                out[0] += pair[0];
                out[1] += pair[0] * xn;
                out[2] += pair[0] * yn;
                out[3] += pair[1];
                out[4] += pair[1] * xn;
                out[5] += pair[1] * yn;
            }
            vec![sx * out[0], sx * out[1], sx * out[2], sy * out[3], sy * out[4], sy * out[5]]
        }
    }
}

/// Parameter vector of a full-resolution velocity cube.
pub(crate) fn velocity_params(v: &VelocityCube) -> Vec<f64> {
    match v {
        VelocityCube::GlobalConst { v, .. } => v.to_vec(),
        VelocityCube::GlobalAffine { coeffs, .. } => coeffs.to_vec(),
        VelocityCube::Dense(c) => c.data().iter().map(|&x| x as f64).collect(),
    }
}

/// Inverse of [`velocity_params`] for a full-resolution grid.
pub(crate) fn velocity_from_params(kind: Parameterization, p: &[f64], frames: usize, height: usize, width: usize) -> Result<VelocityCube> {
    Ok(match kind {
        Parameterization::GlobalConst => VelocityCube::GlobalConst { frames, v: [p[0], p[1]] },
        Parameterization::GlobalAffine => {
            VelocityCube::GlobalAffine { frames, coeffs: [p[0], p[1], p[2], p[3], p[4], p[5]] }
        }
        Parameterization::Dense => {
            VelocityCube::Dense(Cube::from_data(frames, height, width, 2, p.iter().map(|&x| x as f32).collect())?)
        }
    })
}
