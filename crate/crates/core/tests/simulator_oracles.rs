use dualrs_core::metrics::mse;
use dualrs_core::simulator::scenes::{render_frame, render_stack, Scene, Texture, TranslatingBar, TranslatingTexture};
use dualrs_core::simulator::{ambiguity_scene, ambiguity_scene_with, AmbiguitySetup};
use dualrs_core::{scan_instant, synthesize_dual, synthesize_gt, synthesize_rs, ImageBuf, RsConfig, ScanDirection};

/// Intensity centroid of a row, `None` unless the row holds a full unit of bar mass.
fn row_centroid(img: &ImageBuf, y: usize) -> Option<f64> {
    let row = img.row(y);
    let mass: f64 = row.iter().map(|&v| v as f64).sum();
    if (mass - 1.0).abs() > 1e-4 {
        return None;
    }
    Some(row.iter().enumerate().map(|(x, &v)| x as f64 * v as f64).sum::<f64>() / mass)
}

/// Per-row horizontal displacement of a thin bar moving `v` px per row readout.
fn slant(v: f64, row_readout: f64, stack_dt: f64) -> Vec<(usize, f64)> {
    let (w, h) = (256, 256);
    let t = 0.01;
    let bar = TranslatingBar {
        x_at_zero: 3.0 - v / row_readout * (t - h as f64 / 2.0 * row_readout),
        width: 1.0,
        tilt: 0.0,
        pivot_row: 0.0,
        velocity: v / row_readout,
        foreground: 1.0,
        background: 0.0,
    };
    let cfg = RsConfig::new(h, row_readout, t, ScanDirection::T2B).unwrap();
    let t0 = cfg.exposure_start() - stack_dt;
    let count = ((cfg.exposure_end() - t0) / stack_dt).ceil() as usize + 2;
    let stack = render_stack(&bar, w, h, 1, t0, stack_dt, count).unwrap();
    let rs = synthesize_rs(&stack, &cfg).unwrap();
    let c0 = row_centroid(&rs, 0).expect("bar visible on the first row");
    (0..h).filter_map(|y| row_centroid(&rs, y).map(|c| (y, c - c0))).collect()
}

#[test]
fn thin_bar_slant_matches_velocity() {
    let tr = 87e-6;
    for v in [0.5, 1.0, 2.0] {
        for dt in [tr, 8.0 * tr] {
            let rows = slant(v, tr, dt);
            assert!(rows.len() > 100, "v={v}: only {} rows visible", rows.len());
            for (y, d) in rows {
                assert!((d - v * y as f64).abs() <= 0.51, "v={v} dt={dt} row {y}: {d}");
            }
        }
    }
}

#[test]
fn doubling_readout_doubles_slant() {
    let tr = 87e-6;
    // Fixed speed in px/s: 0.5 px per row at tr becomes 1 px per row at 2 tr.
    let base = slant(0.5, tr, tr);
    let doubled = slant(1.0, 2.0 * tr, 2.0 * tr);
    let last = base.last().unwrap().0.min(doubled.last().unwrap().0);
    let at = |rows: &[(usize, f64)], y: usize| rows.iter().find(|(r, _)| *r == y).unwrap().1;
    for y in [10, 50, last] {
        assert!((at(&doubled, y) - 2.0 * at(&base, y)).abs() < 1e-6);
    }
}

#[test]
fn rows_match_per_row_render_of_the_scene() {
    let scene = TranslatingTexture { texture: Texture::random(11, 10, 10.0, 40.0), velocity: [4000.0, -1500.0] };
    let (w, h, tr) = (48, 40, 1e-4);
    let cfg = RsConfig::new(h, tr, 30.0 * tr, ScanDirection::T2B).unwrap();
    let stack = render_stack(&scene, w, h, 3, 0.0, tr, 61).unwrap();
    for dir in [ScanDirection::T2B, ScanDirection::B2T] {
        let c = cfg.with_direction(dir);
        let rs = synthesize_rs(&stack, &c).unwrap();
        for y in 0..h {
            let mut expected = vec![0.0f32; w * 3];
            scene.render_row(y, scan_instant(y, &c).unwrap(), 3, &mut expected);
            for (a, b) in rs.row(y).iter().zip(&expected) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }
}

struct Flipped<S> {
    inner: S,
    height: usize,
}

impl<S: Scene> Scene for Flipped<S> {
    fn intensity(&self, x: f64, y: f64, c: usize, t: f64) -> f64 {
        self.inner.intensity(x, (self.height - 1) as f64 - y, c, t)
    }
}

#[test]
fn reversed_scan_is_flip_conjugate_with_one_row_shift() {
    let scene = TranslatingTexture { texture: Texture::random(5, 8, 12.0, 30.0), velocity: [2500.0, 900.0] };
    let (w, h, tr) = (40, 32, 1e-4);
    let flipped = Flipped { inner: scene.clone(), height: h };
    let stack = render_stack(&scene, w, h, 1, 0.0, tr, 50).unwrap();
    let flipped_stack = render_stack(&flipped, w, h, 1, 0.0, tr, 50).unwrap();
    let t = 24.0 * tr;
    let b2t = synthesize_rs(&stack, &RsConfig::new(h, tr, t, ScanDirection::B2T).unwrap()).unwrap();
    let t2b = synthesize_rs(&flipped_stack, &RsConfig::new(h, tr, t + tr, ScanDirection::T2B).unwrap()).unwrap();
    assert_eq!(b2t, t2b.flip_vertical());
}

#[test]
fn middle_rows_agree_for_any_scene() {
    let (w, h, tr) = (36, 30, 1e-4);
    for seed in 0..4 {
        let scene = TranslatingTexture {
            texture: Texture::random(seed, 9, 8.0, 30.0),
            velocity: [1000.0 * seed as f64 - 1500.0, 700.0],
        };
        let stack = render_stack(&scene, w, h, 1, 0.0, 0.37 * tr, 100).unwrap();
        let cfg = RsConfig::new(h, tr, 17.0 * tr, ScanDirection::T2B).unwrap();
        let pair = synthesize_dual(&stack, &cfg, 0).unwrap();
        assert_eq!(pair.t2b.row(h / 2), pair.b2t.row(h / 2));
    }
}

#[test]
fn ground_truth_frames_follow_the_scene() {
    let scene = TranslatingTexture { texture: Texture::random(2, 10, 10.0, 40.0), velocity: [3000.0, 0.0] };
    let (w, h, tr) = (40, 32, 1e-4);
    let cfg = RsConfig::new(h, tr, 20.0 * tr, ScanDirection::T2B).unwrap();
    let stack = render_stack(&scene, w, h, 1, 0.0, tr, 41).unwrap();
    let gt = synthesize_gt(&stack, &cfg, 5).unwrap();
    assert_eq!(gt.instants.len(), 5);
    for (frame, &t) in gt.frames.iter().zip(&gt.instants) {
        let expected = render_frame(&scene, w, h, 1, t).unwrap();
        assert!(mse(frame, &expected, None).unwrap() < 1e-12);
    }
    // Equal spacing in time means equal displacement between consecutive targets.
    let steps: Vec<f64> = gt.instants.windows(2).map(|p| p[1] - p[0]).collect();
    assert!(steps.iter().all(|s| (s - steps[0]).abs() < 1e-12));
    assert!((steps[0] - h as f64 * tr / 4.0).abs() < 1e-12);

    let single = synthesize_gt(&stack, &cfg, 1).unwrap();
    assert_eq!(single.instants, vec![cfg.midpoint]);
}

fn bar_region_mse(a: &ImageBuf, b: &ImageBuf) -> f64 {
    // Columns where either image differs from the background.
    let cols: Vec<usize> = (0..a.width())
        .filter(|&x| (0..a.height()).any(|y| a.get(x, y, 0) > 0.11 || b.get(x, y, 0) > 0.11))
        .collect();
    let mut sum = 0.0;
    for y in 0..a.height() {
        for &x in &cols {
            let d = a.get(x, y, 0) as f64 - b.get(x, y, 0) as f64;
            sum += d * d;
        }
    }
    sum / (cols.len() * a.height()) as f64
}

#[test]
fn readout_ambiguity() {
    let (a, b) = ambiguity_scene().unwrap();
    let t2b_a = synthesize_rs(&a.stack, &a.config).unwrap();
    let t2b_b = synthesize_rs(&b.stack, &b.config).unwrap();
    assert!(mse(&t2b_a, &t2b_b, None).unwrap() < 1e-6);
    let b2t_a = synthesize_rs(&a.stack, &a.config.with_direction(ScanDirection::B2T)).unwrap();
    let b2t_b = synthesize_rs(&b.stack, &b.config.with_direction(ScanDirection::B2T)).unwrap();
    assert!(bar_region_mse(&b2t_a, &b2t_b) > 1e-3);
}

#[test]
fn ambiguity_without_motion_needs_no_tilt() {
    let (a, b) = ambiguity_scene_with(&AmbiguitySetup { speed: 0.0, ..Default::default() }).unwrap();
    assert_eq!(b.tilt, 0.0);
    assert_eq!(a.stack.frames()[0], b.stack.frames()[0]);
    let dual_a = synthesize_dual(&a.stack, &a.config, 0).unwrap();
    let dual_b = synthesize_dual(&b.stack, &b.config, 0).unwrap();
    assert_eq!(dual_a.t2b, dual_b.t2b);
    assert_eq!(dual_a.b2t, dual_b.b2t);
}
