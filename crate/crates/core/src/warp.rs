//! Backward warping of RS inputs and the mask/residual fusion of the two
//! warped sequences.

use crate::error::{shape_mismatch, Error, Result};
use crate::geometry::TimeCube;
use crate::par;
use crate::tensor::{BilinearTap, Cube, ImageBuf};

/// Per-target warped images plus a 0/1 flag marking samples that stayed
/// inside the source image.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpResult {
    pub warped: Cube,
    pub validity: Cube,
}

#[inline]
pub(crate) fn in_bounds(x: f64, y: f64, width: usize, height: usize) -> bool {
    x >= 0.0 && y >= 0.0 && x <= (width - 1) as f64 && y <= (height - 1) as f64
}

/// `warped[n](x, y) = src(x + F_x[n](x, y), y + F_y[n](x, y))`, bilinear with
/// clamp-to-edge.
pub fn backward_warp(src: &ImageBuf, flow: &Cube) -> Result<WarpResult> {
    let (w, h, ch) = src.dims();
    if flow.height() != h || flow.width() != w || flow.channels() != 2 {
        return Err(shape_mismatch(
            "flow (h, w, c) vs source (h, w, 2)",
            (flow.height(), flow.width(), flow.channels()),
            (h, w, 2),
        ));
    }
    let frames = flow.frames();
    let mut warped = Cube::zeros(frames, h, w, ch)?;
    let mut validity = Cube::zeros(frames, h, w, 1)?;

    par::for_each_chunk_mut(warped.data_mut(), w * ch, |row, out| {
        let (n, y) = (row / h, row % h);
        for x in 0..w {
            let sx = x as f64 + flow.get(n, y, x, 0) as f64;
            let sy = y as f64 + flow.get(n, y, x, 1) as f64;
            let tap = BilinearTap::new(w, h, sx, sy);
            for c in 0..ch {
                out[x * ch + c] = tap.value(src.pixels(), ch, c) as f32;
            }
        }
    });
    par::for_each_chunk_mut(validity.data_mut(), w, |row, out| {
        let (n, y) = (row / h, row % h);
        for (x, v) in out.iter_mut().enumerate() {
            let sx = x as f64 + flow.get(n, y, x, 0) as f64;
            let sy = y as f64 + flow.get(n, y, x, 1) as f64;
            *v = if in_bounds(sx, sy, w, h) { 1.0 } else { 0.0 };
        }
    });
    Ok(WarpResult { warped, validity })
}

/// Weight on the t2b input for target `n`, row `m`: the b2t time distance
/// over the sum of both, so the temporally closer input dominates.
#[inline]
pub(crate) fn proximity_weight(t2b: f64, b2t: f64) -> f64 {
    let (a, b) = (t2b.abs(), b2t.abs());
    if a < 1e-12 && b < 1e-12 {
        0.5
    } else {
        b / (a + b)
    }
}

/// Mask cube (`N x M x width x 1`) weighting the t2b warp toward rows whose
/// scan instant is closer to the target instant.
pub fn proximity_mask(t2b: &TimeCube, b2t: &TimeCube, width: usize) -> Result<Cube> {
    if t2b.rows() != b2t.rows() || t2b.targets() != b2t.targets() {
        return Err(shape_mismatch(
            "time cubes (targets, rows)",
            (t2b.targets(), t2b.rows()),
            (b2t.targets(), b2t.rows()),
        ));
    }
    let (targets, rows) = (t2b.targets(), t2b.rows());
    let mut mask = Cube::zeros(targets, rows, width, 1)?;
    for n in 0..targets {
        for m in 0..rows {
            let w = proximity_weight(t2b.value(n, m), b2t.value(n, m)) as f32;
            let start = mask.index(n, m, 0, 0);
            mask.data_mut()[start..start + width].fill(w);
        }
    }
    Ok(mask)
}

/// `out = res + M * W_t2b + (1 - M) * W_b2t`, clamped to `[0, 1]`.
///
/// Where exactly one warp sampled outside its source the mask is overridden to
/// take the valid one. `residual = None` means an all-zero residual.
pub fn blend(t2b: &WarpResult, b2t: &WarpResult, mask: &Cube, residual: Option<&Cube>) -> Result<Vec<ImageBuf>> {
    let shape = t2b.warped.shape();
    if b2t.warped.shape() != shape {
        return Err(shape_mismatch("warped t2b vs b2t", shape, b2t.warped.shape()));
    }
    let (frames, h, w, ch) = shape;
    let flag_shape = (frames, h, w, 1);
    for (name, cube) in [("t2b validity", &t2b.validity), ("b2t validity", &b2t.validity), ("mask", mask)] {
        if cube.shape() != flag_shape {
            return Err(shape_mismatch(name, cube.shape(), flag_shape));
        }
    }
    if let Some(r) = residual {
        if r.shape() != shape {
            return Err(shape_mismatch("residual vs warped", r.shape(), shape));
        }
    }
    if let Some(i) = mask.data().iter().position(|m| !(0.0..=1.0).contains(m)) {
        return Err(Error::InvalidArgument(format!("mask entry {i} is outside [0, 1]")));
    }

    let mut out = Cube::zeros(frames, h, w, ch)?;
    par::for_each_chunk_mut(out.data_mut(), h * w * ch, |n, frame| {
        for p in 0..h * w {
            let (va, vb) = (t2b.validity.data()[n * h * w + p], b2t.validity.data()[n * h * w + p]);
            let m = match (va > 0.5, vb > 0.5) {
                (true, false) => 1.0,
                (false, true) => 0.0,
                _ => mask.data()[n * h * w + p],
            };
            for c in 0..ch {
                let i = (n * h * w + p) * ch + c;
                let res = residual.map_or(0.0, |r| r.data()[i]);
                let (a, b) = (t2b.warped.data()[i], b2t.warped.data()[i]);
                // m * a + (1 - m) * b, written to be exact at both mask
                // endpoints and when the two inputs agree.
                let mix = if m == 1.0 {
                    a
                } else if m == 0.0 {
                    b
                } else {
                    b + m * (a - b)
                };
                let v = res + mix;
                frame[p * ch + c] = v.clamp(0.0, 1.0);
            }
        }
    });
    out.to_images()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::build_time_cube;
    use crate::simulator::ScanDirection;
    use proptest::prelude::*;

    fn texture(w: usize, h: usize) -> ImageBuf {
        ImageBuf::from_fn(w, h, 1, |x, y, _| (((x * 5 + y * 11) % 13) as f32 / 13.0) * 0.8 + 0.1).unwrap()
    }

    fn constant_flow(frames: usize, h: usize, w: usize, fx: f32, fy: f32) -> Cube {
        let data = (0..frames * h * w).flat_map(|_| [fx, fy]).collect();
        Cube::from_data(frames, h, w, 2, data).unwrap()
    }

    #[test]
    fn identity_flow() {
        let src = texture(7, 5);
        let r = backward_warp(&src, &constant_flow(2, 5, 7, 0.0, 0.0)).unwrap();
        for n in 0..2 {
            assert_eq!(r.warped.frame(n), src.pixels());
        }
        assert!(r.validity.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn unit_shift() {
        let src = texture(7, 5);
        let r = backward_warp(&src, &constant_flow(1, 5, 7, 1.0, 0.0)).unwrap();
        for y in 0..5 {
            for x in 0..6 {
                assert_eq!(r.warped.get(0, y, x, 0), src.get(x + 1, y, 0));
                assert_eq!(r.validity.get(0, y, x, 0), 1.0);
            }
            assert_eq!(r.validity.get(0, y, 6, 0), 0.0);
        }
    }

    #[test]
    fn warp_shape_mismatch() {
        let src = texture(7, 5);
        assert!(matches!(backward_warp(&src, &constant_flow(1, 4, 7, 0.0, 0.0)), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn mask_examples() {
        assert_eq!(proximity_weight(0.0, 0.7), 1.0);
        assert_eq!(proximity_weight(0.3, -0.3), 0.5);
        assert_eq!(proximity_weight(0.0, 0.0), 0.5);
        let a = build_time_cube(9, 5, ScanDirection::T2B).unwrap();
        let b = build_time_cube(9, 5, ScanDirection::B2T).unwrap();
        let mask = proximity_mask(&a, &b, 3).unwrap();
        assert!(mask.frame(2).iter().all(|&m| m == 0.5));
        let c = build_time_cube(9, 3, ScanDirection::B2T).unwrap();
        assert!(proximity_mask(&a, &c, 3).is_err());
    }

    fn warp_of(src: &ImageBuf, frames: usize) -> WarpResult {
        backward_warp(src, &constant_flow(frames, src.height(), src.width(), 0.0, 0.0)).unwrap()
    }

    #[test]
    fn blend_endpoints_and_agreement() {
        let a = texture(6, 4);
        let b = ImageBuf::filled(6, 4, 1, 0.3).unwrap();
        let (wa, wb) = (warp_of(&a, 2), warp_of(&b, 2));
        let ones = Cube::filled(2, 4, 6, 1, 1.0).unwrap();
        let out = blend(&wa, &wb, &ones, None).unwrap();
        assert_eq!(out[0], a);

        let half = Cube::filled(2, 4, 6, 1, 0.5).unwrap();
        assert_eq!(blend(&wa, &wa, &half, None).unwrap()[1], a);

        let res = Cube::filled(2, 4, 6, 1, 0.1).unwrap();
        let shifted = blend(&wa, &wa, &half, Some(&res)).unwrap();
        for (o, s) in shifted[0].pixels().iter().zip(a.pixels()) {
            assert!((o - (s + 0.1).min(1.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn blend_trusts_the_valid_side() {
        let a = texture(6, 4);
        let b = ImageBuf::filled(6, 4, 1, 0.3).unwrap();
        let (mut wa, wb) = (warp_of(&a, 1), warp_of(&b, 1));
        wa.validity.set(0, 1, 2, 0, 0.0);
        let ones = Cube::filled(1, 4, 6, 1, 1.0).unwrap();
        let out = blend(&wa, &wb, &ones, None).unwrap();
        assert_eq!(out[0].get(2, 1, 0), 0.3);
        assert_eq!(out[0].get(3, 1, 0), a.get(3, 1, 0));
    }

    #[test]
    fn blend_rejects_bad_shapes() {
        let a = texture(6, 4);
        let wa = warp_of(&a, 2);
        let wb = warp_of(&a, 1);
        let mask = Cube::filled(2, 4, 6, 1, 0.5).unwrap();
        assert!(blend(&wa, &wb, &mask, None).is_err());
        let bad = Cube::filled(2, 4, 6, 1, 1.5).unwrap();
        assert!(blend(&wa, &wa, &bad, None).is_err());
    }

    proptest! {
        #[test]
        fn constant_image_survives_any_flow(fx in -10.0f32..10.0, fy in -10.0f32..10.0, v in 0.0f32..1.0) {
            let src = ImageBuf::filled(5, 6, 1, v).unwrap();
            let r = backward_warp(&src, &constant_flow(1, 6, 5, fx, fy)).unwrap();
            prop_assert!(r.warped.data().iter().all(|&x| x == v));
        }

        #[test]
        fn warp_is_shift_equivariant(dx in -2i32..=2, dy in -2i32..=2, fx in -1.5f32..1.5, fy in -1.5f32..1.5) {
            let (w, h) = (12usize, 10usize);
            let src = texture(w, h);
            // shifted(x, y) = src(x - dx, y - dy), defined where that is in range.
            let shifted = ImageBuf::from_fn(w, h, 1, |x, y, c| {
                let sx = (x as i32 - dx).clamp(0, w as i32 - 1) as usize;
                let sy = (y as i32 - dy).clamp(0, h as i32 - 1) as usize;
                src.get(sx, sy, c)
            }).unwrap();
            let a = backward_warp(&src, &constant_flow(1, h, w, fx, fy)).unwrap();
            let b = backward_warp(&shifted, &constant_flow(1, h, w, fx + dx as f32, fy + dy as f32)).unwrap();
            // Compare where both samples land at least one pixel inside the
            // region where `shifted` is an exact copy of `src`.
            for y in 0..h {
                for x in 0..w {
                    let (sx, sy) = (x as f32 + fx, y as f32 + fy);
                    let inside = sx >= 0.0 && sy >= 0.0 && sx <= (w - 1) as f32 && sy <= (h - 1) as f32;
                    let (tx, ty) = (sx + dx as f32, sy + dy as f32);
                    let copy = tx >= dx.max(0) as f32 && ty >= dy.max(0) as f32
                        && tx <= (w as i32 - 1 + dx.min(0)) as f32 && ty <= (h as i32 - 1 + dy.min(0)) as f32;
                    if inside && copy && a.validity.get(0, y, x, 0) == 1.0 && b.validity.get(0, y, x, 0) == 1.0 {
                        prop_assert!((a.warped.get(0, y, x, 0) - b.warped.get(0, y, x, 0)).abs() < 1e-5);
                    }
                }
            }
        }

        #[test]
        fn zero_residual_blend_is_a_partition_of_unity(m in 0.0f32..=1.0, s in 0u32..20) {
            let a = ImageBuf::from_fn(5, 4, 1, |x, y, _| ((x as u32 * 3 + y as u32 + s) % 7) as f32 / 7.0).unwrap();
            let b = ImageBuf::from_fn(5, 4, 1, |x, y, _| ((x as u32 + y as u32 * 5 + s) % 9) as f32 / 9.0).unwrap();
            let mask = Cube::filled(1, 4, 5, 1, m).unwrap();
            let out = blend(&warp_of(&a, 1), &warp_of(&b, 1), &mask, None).unwrap();
            for i in 0..20 {
                let expected = m * a.pixels()[i] + (1.0 - m) * b.pixels()[i];
                prop_assert!((out[0].pixels()[i] - expected).abs() < 1e-6);
            }
        }
    }
}
