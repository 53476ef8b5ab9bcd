//! Resolution pyramid for coarse-to-fine estimation.

use crate::error::Result;
use crate::geometry::TimeCube;
use crate::simulator::DualPair;
use crate::solver::objective::Level;

/// Level extent for `scale`, at least 2 (or the full extent if smaller).
pub(crate) fn level_size(full: usize, scale: f64) -> usize {
    ((full as f64 * scale).round() as usize).clamp(full.min(2), full)
}

/// Area-downsampled pair and per-row time offsets at `scale`.
///
/// Level row `r` covers full-resolution rows around
/// `(r + 0.5) * H / h - 0.5`; its offset is the time cube evaluated there.
pub(crate) fn build_level(pair: &DualPair, ta: &TimeCube, tb: &TimeCube, scale: f64) -> Result<Level> {
    let (w, h) = (pair.width(), pair.height());
    let (lw, lh) = (level_size(w, scale), level_size(h, scale));
    let full = lw == w && lh == h;
    let (t2b, b2t) = if full {
        (pair.t2b.clone(), pair.b2t.clone())
    } else {
        (pair.t2b.area_resize(lw, lh)?, pair.b2t.area_resize(lw, lh)?)
    };
    let targets = ta.targets();
    let offsets = |cube: &TimeCube| -> Vec<f64> {
        (0..targets)
            .flat_map(|n| {
                (0..lh).map(move |r| {
                    if full {
                        cube.value(n, r)
                    } else {
                        cube.value_at_row(n, (r as f64 + 0.5) * h as f64 / lh as f64 - 0.5)
                    }
                })
            })
            .collect()
    };
    Ok(Level {
        pa: offsets(ta),
        pb: offsets(tb),
        t2b,
        b2t,
        targets,
        scale: [lw as f64 / w as f64, lh as f64 / h as f64],
    })
}

/// Bilinear resampling of a dense `frames x h x w x 2` field to
/// `new_h x new_w`, with component `k` multiplied by `gain[k]`.
pub(crate) fn resample_dense(
    v: &[f64],
    frames: usize,
    (h, w): (usize, usize),
    (new_h, new_w): (usize, usize),
    gain: [f64; 2],
) -> Vec<f64> {
    let coord = |dst: usize, src_len: usize, dst_len: usize| -> (usize, usize, f64) {
        let s = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5).clamp(0.0, (src_len - 1) as f64);
        let i0 = (s.floor() as usize).min(src_len - 1);
        let i1 = (i0 + 1).min(src_len - 1);
        (i0, i1, s - i0 as f64)
    };
    let mut out = Vec::with_capacity(frames * new_h * new_w * 2);
    for n in 0..frames {
        let frame = &v[n * h * w * 2..(n + 1) * h * w * 2];
        for y in 0..new_h {
            let (y0, y1, fy) = coord(y, h, new_h);
            for x in 0..new_w {
                let (x0, x1, fx) = coord(x, w, new_w);
                for (k, g) in gain.iter().enumerate() {
                    let at = |yy: usize, xx: usize| frame[(yy * w + xx) * 2 + k];
                    let top = at(y0, x0) + fx * (at(y0, x1) - at(y0, x0));
                    let bottom = at(y1, x0) + fx * (at(y1, x1) - at(y1, x0));
                    out.push(g * (top + fy * (bottom - top)));
                }
            }
        }
    }
    out
}
