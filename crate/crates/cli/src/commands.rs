//! Subcommand implementations. Each returns a short human-readable summary.

use std::path::Path;

use serde::Serialize;

use dualrs_core::metrics::{mse, psnr, row_profile, spearman, ssim, Region};
use dualrs_core::simulator::{ambiguity_scene_with, AmbiguitySetup};
use dualrs_core::{
    extract_frames, synthesize_dual, synthesize_gt, synthesize_rs, DualPair, GsSequence, ImageBuf, RsConfig,
    ScanDirection, SolverParams, TimeCube, VelocityCube,
};

use crate::cli::{AmbiguityArgs, Command, CompareArgs, ExtractArgs, ProfileArgs, SynthArgs};
use crate::error::{CliError, CliResult};
use crate::manifest::{Manifest, Procedural};
use crate::output::{format_number, number_or_inf, write_csv, write_json, SCHEMA_VERSION};
use crate::{cubefile, imageio};

/// Fraction of each dimension kept by the interior crop.
pub const INTERIOR_FRACTION: f64 = 0.8;

pub fn run(command: &Command) -> CliResult<String> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Extract(a) => extract(a),
        Command::Eval(a) => eval(a),
        Command::Ambiguity(a) => ambiguity(a),
        Command::ProfileRows(a) => profile_rows(a),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VelocitySummary {
    GlobalConst { v: [f64; 2] },
    GlobalAffine { coeffs: [f64; 6] },
    /// Mean vector over all targets and pixels.
    Dense { mean: [f64; 2] },
}

impl VelocitySummary {
    pub fn of(v: &VelocityCube) -> Self {
        match v {
            VelocityCube::GlobalConst { v, .. } => Self::GlobalConst { v: *v },
            VelocityCube::GlobalAffine { coeffs, .. } => Self::GlobalAffine { coeffs: *coeffs },
            VelocityCube::Dense(c) => {
                let mut sum = [0.0f64; 2];
                for px in c.data().chunks_exact(2) {
                    sum[0] += px[0] as f64;
                    sum[1] += px[1] as f64;
                }
                let count = (c.data().len() / 2).max(1) as f64;
                Self::Dense { mean: [sum[0] / count, sum[1] / count] }
            }
        }
    }
}

#[derive(Serialize)]
struct SynthMetadata<'a> {
    schema_version: u32,
    scene: &'a str,
    width: usize,
    height: usize,
    channels: usize,
    row_readout: f64,
    midpoint: f64,
    exposure_start: f64,
    exposure_end: f64,
    misalign_rows: i32,
    n_frames: usize,
    gt_instants: &'a [f64],
    stack_t0: f64,
    stack_dt: f64,
    stack_frames: usize,
    quantized_stack: bool,
    procedural: Option<&'a Procedural>,
    oracle_velocity: Option<VelocitySummary>,
}

pub fn synth(args: &SynthArgs) -> CliResult<String> {
    let mut m = Manifest::load(&args.manifest)?;
    if let Some(seed) = args.seed {
        match m.procedural.as_mut() {
            Some(p) => p.set_seed(seed),
            None => return Err(CliError::Usage("--seed only applies to procedural scenes".into())),
        }
    }
    if let Some(mis) = args.misalign_rows {
        m.misalign_rows = mis;
    }
    if let Some(n) = args.n_frames {
        m.n_frames = n;
    }
    if let Some(dir) = &args.out_dir {
        m.out_dir = dir.clone();
    }
    m.validate()?;

    let scene = m.load_scene()?;
    let (cfg, stack) = (scene.config, &scene.stack);
    let pair = synthesize_dual(stack, &cfg, m.misalign_rows).map_err(CliError::data)?;
    let gt = synthesize_gt(stack, &cfg, m.n_frames).map_err(CliError::data)?;

    let out = &m.out_dir;
    imageio::write_png(&out.join("t2b.png"), &pair.t2b)?;
    imageio::write_png(&out.join("b2t.png"), &pair.b2t)?;
    cubefile::write_image(&out.join("t2b.drsc"), &pair.t2b)?;
    cubefile::write_image(&out.join("b2t.drsc"), &pair.b2t)?;
    imageio::write_sequence(&out.join("gt"), "gt", &gt.frames, &out.join("gt.drsc"))?;
    if let Some(v) = &scene.oracle {
        let cube = v.expand(cfg.rows, stack.width()).map_err(CliError::data)?;
        cubefile::write(&out.join("oracle_velocity.drsc"), &cube)?;
    }
    let meta = SynthMetadata {
        schema_version: SCHEMA_VERSION,
        scene: &m.scene,
        width: stack.width(),
        height: stack.height(),
        channels: stack.channels(),
        row_readout: cfg.row_readout,
        midpoint: cfg.midpoint,
        exposure_start: cfg.exposure_start(),
        exposure_end: cfg.exposure_end(),
        misalign_rows: m.misalign_rows,
        n_frames: m.n_frames,
        gt_instants: &gt.instants,
        stack_t0: stack.t0(),
        stack_dt: stack.dt(),
        stack_frames: stack.len(),
        quantized_stack: scene.quantized,
        procedural: m.procedural.as_ref(),
        oracle_velocity: scene.oracle.as_ref().map(VelocitySummary::of),
    };
    write_json(&out.join("metadata.json"), &meta)?;
    Ok(format!(
        "synth: {} {}x{}x{}, {} GT frames -> {}",
        m.scene,
        stack.width(),
        stack.height(),
        stack.channels(),
        m.n_frames,
        out.display()
    ))
}

/// Reads a velocity cube file (`N x H x W x 2`) as a dense velocity.
pub fn read_velocity(path: &Path, frames: usize, height: usize, width: usize) -> CliResult<VelocityCube> {
    let cube = cubefile::read(path)?;
    let want = (frames, height, width, 2);
    if cube.shape() != want {
        return Err(CliError::Data(format!(
            "{}: velocity cube shape {:?} does not match the expected {:?}",
            path.display(),
            cube.shape(),
            want
        )));
    }
    Ok(VelocityCube::Dense(cube))
}

#[derive(Serialize)]
struct ExtractReport<'a> {
    schema_version: u32,
    width: usize,
    height: usize,
    channels: usize,
    quantized_input: bool,
    misalign_rows: i32,
    row_readout: f64,
    midpoint: f64,
    params: &'a SolverParams,
    oracle_velocity: bool,
    velocity: VelocitySummary,
    instants: &'a [f64],
    accepted_iterates: usize,
    final_total: Option<f64>,
}

pub fn solver_params(args: &ExtractArgs) -> CliResult<SolverParams> {
    let mut p = SolverParams::new(args.param.into(), args.n_frames);
    if let Some(s) = &args.scales {
        p.scales = s.clone();
    }
    if let Some(i) = args.iters {
        p.iters_per_scale = i;
    }
    if let Some(l) = args.lambda_v {
        p.lambda_v = l;
    }
    p.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(p)
}

fn read_input(path: &Path) -> CliResult<(ImageBuf, bool)> {
    let img = imageio::read_image(path)?;
    Ok((img, !imageio::is_cube_path(path)))
}

pub fn extract(args: &ExtractArgs) -> CliResult<String> {
    let params = solver_params(args)?;
    let cfg = RsConfig::new(2, args.row_readout, args.midpoint, ScanDirection::T2B)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let (t2b, qa) = read_input(&args.t2b)?;
    let (b2t, qb) = read_input(&args.b2t)?;
    if !t2b.same_shape(&b2t) {
        return Err(CliError::Data(format!(
            "t2b {} has dims {:?} but b2t {} has dims {:?} (width, height, channels)",
            args.t2b.display(),
            t2b.dims(),
            args.b2t.display(),
            b2t.dims()
        )));
    }
    let (w, h) = (t2b.width(), t2b.height());
    let cfg = RsConfig::new(h, cfg.row_readout, cfg.midpoint, ScanDirection::T2B).map_err(CliError::data)?;
    let pair = DualPair::new(t2b, b2t, cfg, args.misalign_rows).map_err(CliError::data)?;
    let oracle = match &args.oracle_velocity {
        Some(p) => Some(read_velocity(p, params.n_frames, h, w)?),
        None => None,
    };
    let x = extract_frames(&pair, &params, oracle.as_ref()).map_err(CliError::data)?;

    let out = &args.out_dir;
    imageio::write_sequence(&out.join("frames"), "frame", &x.sequence.frames, &out.join("frames.drsc"))?;
    let velocity = x.velocity.expand(h, w).map_err(CliError::data)?;
    cubefile::write(&out.join("velocity.drsc"), &velocity)?;
    cubefile::write(&out.join("flow_t2b.drsc"), &x.flow_t2b)?;
    cubefile::write(&out.join("flow_b2t.drsc"), &x.flow_b2t)?;
    let mut rows = vec![["level", "scale", "iter", "data_term", "tv_term", "total"].map(String::from).to_vec()];
    rows.extend(x.log.iter().map(|e| {
        vec![
            e.level.to_string(),
            e.scale.to_string(),
            e.iter.to_string(),
            e.data_term.to_string(),
            e.tv_term.to_string(),
            e.total.to_string(),
        ]
    }));
    write_csv(&out.join("objective_log.csv"), &rows)?;
    let summary = VelocitySummary::of(&x.velocity);
    let report = ExtractReport {
        schema_version: SCHEMA_VERSION,
        width: w,
        height: h,
        channels: pair.channels(),
        quantized_input: qa || qb,
        misalign_rows: args.misalign_rows,
        row_readout: args.row_readout,
        midpoint: args.midpoint,
        params: &params,
        oracle_velocity: oracle.is_some(),
        velocity: summary.clone(),
        instants: &x.sequence.instants,
        accepted_iterates: x.log.len(),
        final_total: x.log.last().map(|e| e.total),
    };
    write_json(&out.join("extract.json"), &report)?;
    Ok(format!("extract: {} frames, velocity {:?} -> {}", params.n_frames, summary, out.display()))
}

/// Frames of `outputs` and `gt` checked for matching count and dims.
fn load_pair(args: &CompareArgs) -> CliResult<(Vec<ImageBuf>, Vec<ImageBuf>, bool)> {
    let (outs, qa) = imageio::read_sequence(&args.outputs)?;
    let (gts, qb) = imageio::read_sequence(&args.gt)?;
    if outs.len() != gts.len() {
        return Err(CliError::Data(format!(
            "{} holds {} frames but {} holds {}",
            args.outputs.display(),
            outs.len(),
            args.gt.display(),
            gts.len()
        )));
    }
    for (i, (o, g)) in outs.iter().zip(&gts).enumerate() {
        if !o.same_shape(g) {
            return Err(CliError::Data(format!(
                "frame {i}: outputs dims {:?} vs gt dims {:?} (width, height, channels)",
                o.dims(),
                g.dims()
            )));
        }
    }
    Ok((outs, gts, qa || qb))
}

fn as_sequence(frames: Vec<ImageBuf>) -> CliResult<GsSequence> {
    let instants = (0..frames.len()).map(|i| i as f64).collect();
    GsSequence::new(frames, instants).map_err(CliError::data)
}

fn quantization_note(quantized: bool) -> &'static str {
    if quantized {
        "8-bit PNG inputs: metrics include quantization error (up to 1/510 per value)"
    } else {
        "float cube inputs: no quantization"
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrameMetrics {
    pub frame: usize,
    #[serde(serialize_with = "number_or_inf")]
    pub psnr: f64,
    #[serde(serialize_with = "number_or_inf")]
    pub psnr_interior: f64,
    /// Absent when the frame is smaller than the SSIM window.
    pub ssim: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub frames: Vec<FrameMetrics>,
    #[serde(serialize_with = "number_or_inf")]
    pub mean_psnr: f64,
    #[serde(serialize_with = "number_or_inf")]
    pub mean_psnr_interior: f64,
    pub mean_ssim: Option<f64>,
    pub interior: Region,
    pub row_mse: Vec<Vec<f64>>,
    pub quantized: bool,
    pub note: String,
}

pub fn evaluate(outs: &[ImageBuf], gts: &[ImageBuf], quantized: bool) -> CliResult<EvalReport> {
    let (w, h) = (outs[0].width(), outs[0].height());
    let interior = Region::interior(w, h, INTERIOR_FRACTION);
    let mut frames = Vec::with_capacity(outs.len());
    for (i, (o, g)) in outs.iter().zip(gts).enumerate() {
        frames.push(FrameMetrics {
            frame: i,
            psnr: psnr(o, g, None).map_err(CliError::data)?,
            psnr_interior: psnr(o, g, Some(interior)).map_err(CliError::data)?,
            ssim: ssim(o, g).ok(),
        });
    }
    let n = frames.len() as f64;
    let mean_ssim = frames.iter().map(|f| f.ssim).sum::<Option<f64>>().map(|s| s / n);
    let profiles = row_profile(&as_sequence(outs.to_vec())?, &as_sequence(gts.to_vec())?).map_err(CliError::data)?;
    Ok(EvalReport {
        schema_version: SCHEMA_VERSION,
        mean_psnr: frames.iter().map(|f| f.psnr).sum::<f64>() / n,
        mean_psnr_interior: frames.iter().map(|f| f.psnr_interior).sum::<f64>() / n,
        mean_ssim,
        frames,
        interior,
        row_mse: profiles.into_iter().map(|p| p.mse).collect(),
        quantized,
        note: quantization_note(quantized).into(),
    })
}

fn eval_table(r: &EvalReport) -> String {
    let ssim = |s: Option<f64>| s.map_or("n/a".to_string(), |v| format!("{v:.6}"));
    let db = |v: f64| if v.is_finite() { format!("{v:.4}") } else { format_number(v) };
    let mut t = format!("{:<6} {:>12} {:>18} {:>10}\n", "frame", "psnr_db", "psnr_interior_db", "ssim");
    for f in &r.frames {
        t += &format!("{:<6} {:>12} {:>18} {:>10}\n", f.frame, db(f.psnr), db(f.psnr_interior), ssim(f.ssim));
    }
    t += &format!("{:<6} {:>12} {:>18} {:>10}\n", "mean", db(r.mean_psnr), db(r.mean_psnr_interior), ssim(r.mean_ssim));
    t += &format!("note: {}\n", r.note);
    t
}

pub fn eval(args: &CompareArgs) -> CliResult<String> {
    let (outs, gts, quantized) = load_pair(args)?;
    let report = evaluate(&outs, &gts, quantized)?;
    let table = eval_table(&report);
    write_json(&args.out_dir.join("eval.json"), &report)?;
    crate::output::write_atomic(&args.out_dir.join("eval.txt"), table.as_bytes())?;
    Ok(table)
}

/// Per-row `min(|P_t2b|, |P_b2t|)` for every target: how far in time the
/// nearest input row is from the target instant.
pub fn time_distance(rows: usize, targets: usize, misalign_rows: i32) -> CliResult<Vec<Vec<f64>>> {
    let ta = TimeCube::new(rows, targets, ScanDirection::T2B, 0).map_err(CliError::data)?;
    let tb = TimeCube::new(rows, targets, ScanDirection::B2T, misalign_rows as i64).map_err(CliError::data)?;
    Ok((0..targets)
        .map(|n| (0..rows).map(|m| ta.value(n, m).abs().min(tb.value(n, m).abs())).collect())
        .collect())
}

#[derive(Serialize)]
struct ProfileReport {
    schema_version: u32,
    misalign_rows: i32,
    /// Spearman correlation per target; `None` where a profile is constant.
    spearman: Vec<Option<f64>>,
}

pub fn profile_rows(args: &ProfileArgs) -> CliResult<String> {
    let (outs, gts, _) = load_pair(&args.compare)?;
    let (rows, n) = (outs[0].height(), outs.len());
    let profiles = row_profile(&as_sequence(outs)?, &as_sequence(gts)?).map_err(CliError::data)?;
    let dist = time_distance(rows, n, args.misalign_rows)?;
    let mut csv = vec![["target", "row", "mse", "time_distance"].map(String::from).to_vec()];
    let mut rho = Vec::with_capacity(n);
    let mut summary = String::new();
    for (p, d) in profiles.iter().zip(&dist) {
        for (row, (m, t)) in p.mse.iter().zip(d).enumerate() {
            csv.push(vec![p.target.to_string(), row.to_string(), m.to_string(), t.to_string()]);
        }
        let r = spearman(&p.mse, d).ok();
        summary += &format!(
            "target {}: spearman {}\n",
            p.target,
            r.map_or("undefined".to_string(), |v| format!("{v:.4}"))
        );
        rho.push(r);
    }
    let out = &args.compare.out_dir;
    write_csv(&out.join("row_profile.csv"), &csv)?;
    write_json(
        &out.join("row_profile.json"),
        &ProfileReport { schema_version: SCHEMA_VERSION, misalign_rows: args.misalign_rows, spearman: rho },
    )?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AmbiguityReport {
    pub schema_version: u32,
    pub width: usize,
    pub height: usize,
    pub speed_px_per_s: f64,
    pub readout_a: f64,
    pub readout_b: f64,
    pub tilt_px_per_row: f64,
    /// MSE between the two top-to-bottom renders.
    pub t2b_mse: f64,
    /// MSE between the two bottom-to-top renders, whole image.
    pub b2t_mse: f64,
    /// Same, restricted to columns the object touches in either render.
    pub b2t_object_mse: f64,
    pub object_columns: usize,
}

/// Columns where either image rises above `threshold`.
fn object_columns(a: &ImageBuf, b: &ImageBuf, threshold: f32) -> Vec<usize> {
    (0..a.width())
        .filter(|&x| (0..a.height()).any(|y| a.get(x, y, 0) > threshold || b.get(x, y, 0) > threshold))
        .collect()
}

pub struct AmbiguityRenders {
    pub t2b: [ImageBuf; 2],
    pub b2t: [ImageBuf; 2],
    pub report: AmbiguityReport,
}

pub fn ambiguity_renders(setup: &AmbiguitySetup) -> CliResult<AmbiguityRenders> {
    let (a, b) = ambiguity_scene_with(setup).map_err(CliError::data)?;
    let render = |s: &dualrs_core::simulator::AmbiguityScene, dir| {
        synthesize_rs(&s.stack, &s.config.with_direction(dir)).map_err(CliError::data)
    };
    let t2b = [render(&a, ScanDirection::T2B)?, render(&b, ScanDirection::T2B)?];
    let b2t = [render(&a, ScanDirection::B2T)?, render(&b, ScanDirection::B2T)?];
    // Background is 0.1; anything brighter is touched by the bar.
    let cols = object_columns(&b2t[0], &b2t[1], 0.11);
    let (w, h) = (setup.width, setup.height);
    let object = if cols.is_empty() {
        0.0
    } else {
        let x0 = cols[0];
        let x1 = *cols.last().unwrap();
        mse(&b2t[0], &b2t[1], Some(Region { x0, y0: 0, width: x1 - x0 + 1, height: h })).map_err(CliError::data)?
    };
    let report = AmbiguityReport {
        schema_version: SCHEMA_VERSION,
        width: w,
        height: h,
        speed_px_per_s: setup.speed,
        readout_a: setup.readout_a,
        readout_b: setup.readout_b,
        tilt_px_per_row: setup.tilt(),
        t2b_mse: mse(&t2b[0], &t2b[1], None).map_err(CliError::data)?,
        b2t_mse: mse(&b2t[0], &b2t[1], None).map_err(CliError::data)?,
        b2t_object_mse: object,
        object_columns: cols.len(),
    };
    Ok(AmbiguityRenders { t2b, b2t, report })
}

pub fn ambiguity(args: &AmbiguityArgs) -> CliResult<String> {
    let r = ambiguity_renders(&AmbiguitySetup::default())?;
    let out = &args.out_dir;
    for (name, img) in [
        ("scene_a_t2b", &r.t2b[0]),
        ("scene_b_t2b", &r.t2b[1]),
        ("scene_a_b2t", &r.b2t[0]),
        ("scene_b_b2t", &r.b2t[1]),
    ] {
        imageio::write_png(&out.join(format!("{name}.png")), img)?;
        cubefile::write_image(&out.join(format!("{name}.drsc")), img)?;
    }
    write_json(&out.join("ambiguity.json"), &r.report)?;
    Ok(format!(
        "ambiguity: t2b mse {:.3e} (single view cannot tell the scenes apart), b2t object mse {:.3e}",
        r.report.t2b_mse, r.report.b2t_object_mse
    ))
}
