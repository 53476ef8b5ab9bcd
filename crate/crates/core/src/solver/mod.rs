//! Coarse-to-fine velocity estimation and GS sequence extraction.
//!
//! The velocity cube is found by minimising a self-supervised objective: the
//! two RS inputs, each warped to the target instants with its own time cube,
//! should agree. A total-variation penalty on both flow cubes picks the
//! smoothest among equally good velocities. Each pyramid level runs gradient
//! descent with a backtracking line search, warm-started from the previous
//! level.

mod objective;
mod pyramid;

use serde::{Deserialize, Serialize};

pub use objective::{charbonnier, tv, ObjectiveBreakdown};

use crate::error::{shape_mismatch, Error, Result};
use crate::geometry::{
    build_time_cube, flow_from_velocity, target_times, GsSequence, Parameterization, TimeCube, VelocityCube,
};
use crate::simulator::{DualPair, ScanDirection};
use crate::tensor::Cube;
use crate::warp::{backward_warp, blend, proximity_mask};
use objective::{
    chain_gradient, evaluate_dense, param_len, params_to_dense, velocity_from_params, velocity_params, Level, Weights,
};
use pyramid::{build_level, resample_dense};

/// Line-search halvings tried before a level is declared converged.
pub const MAX_HALVINGS: usize = 10;
/// Upper bound on step growth relative to the initial step.
const MAX_STEP_GROWTH: f64 = 4096.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub parameterization: Parameterization,
    /// Resolution fractions, strictly increasing and ending at 1.
    pub scales: Vec<f64>,
    pub iters_per_scale: usize,
    pub step: f64,
    pub lambda_v: f64,
    pub charbonnier_eps: f64,
    pub n_frames: usize,
}

impl SolverParams {
    /// Defaults for `kind` with `n_frames` targets.
    pub fn new(kind: Parameterization, n_frames: usize) -> Self {
        Self {
            parameterization: kind,
            scales: vec![0.125, 0.25, 0.5, 1.0],
            iters_per_scale: 200,
            step: match kind {
                Parameterization::Dense => 0.05,
                _ => 0.5,
            },
            lambda_v: 0.1,
            charbonnier_eps: 1e-3,
            n_frames,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.scales.is_empty() {
            return bad("at least one scale is required".into());
        }
        if self.scales.iter().any(|s| !(s.is_finite() && *s > 0.0 && *s <= 1.0)) {
            return bad(format!("scales must lie in (0, 1], got {:?}", self.scales));
        }
        if self.scales.windows(2).any(|w| w[1] <= w[0]) {
            return bad(format!("scales must be strictly increasing, got {:?}", self.scales));
        }
        if *self.scales.last().unwrap() != 1.0 {
            return bad(format!("the last scale must be 1, got {:?}", self.scales));
        }
        if !(self.step.is_finite() && self.step > 0.0) {
            return bad(format!("step must be positive, got {}", self.step));
        }
        if !(self.lambda_v.is_finite() && self.lambda_v >= 0.0) {
            return bad(format!("lambda_v must be non-negative, got {}", self.lambda_v));
        }
        if !(self.charbonnier_eps.is_finite() && self.charbonnier_eps >= 0.0) {
            return bad(format!("charbonnier_eps must be non-negative, got {}", self.charbonnier_eps));
        }
        if self.n_frames == 0 {
            return bad("n_frames must be at least 1".into());
        }
        Ok(())
    }

    fn weights(&self) -> Weights {
        Weights { lambda_v: self.lambda_v, eps: self.charbonnier_eps }
    }
}

impl Default for SolverParams {
    fn default() -> Self {
        Self::new(Parameterization::GlobalConst, 9)
    }
}

/// One accepted iterate. Iteration 0 is the starting point of a level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogEntry {
    pub level: usize,
    pub scale: f64,
    pub iter: usize,
    pub data_term: f64,
    pub tv_term: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub velocity: VelocityCube,
    pub log: Vec<LogEntry>,
}

fn time_cubes(pair: &DualPair, targets: usize) -> Result<(TimeCube, TimeCube)> {
    let rows = pair.height();
    Ok((
        build_time_cube(rows, targets, ScanDirection::T2B)?,
        TimeCube::new(rows, targets, ScanDirection::B2T, pair.row_misalignment as i64)?,
    ))
}

fn full_level(pair: &DualPair, targets: usize) -> Result<Level> {
    let (ta, tb) = time_cubes(pair, targets)?;
    build_level(pair, &ta, &tb, 1.0)
}

fn check_velocity(v: &VelocityCube, pair: &DualPair, targets: usize) -> Result<()> {
    if v.frames() != targets {
        return Err(shape_mismatch("velocity frames vs targets", v.frames(), targets));
    }
    if let VelocityCube::Dense(c) = v {
        let expected = (targets, pair.height(), pair.width(), 2);
        if c.shape() != expected {
            return Err(shape_mismatch("dense velocity shape", c.shape(), expected));
        }
    }
    Ok(())
}

/// Objective evaluator for a fixed pair at full resolution.
#[derive(Debug, Clone)]
pub struct DualObjective {
    level: Level,
    weights: Weights,
}

impl DualObjective {
    pub fn new(pair: &DualPair, params: &SolverParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { level: full_level(pair, params.n_frames)?, weights: params.weights() })
    }

    fn check(&self, v: &VelocityCube) -> Result<()> {
        if v.frames() != self.level.targets {
            return Err(shape_mismatch("velocity frames vs targets", v.frames(), self.level.targets));
        }
        if let VelocityCube::Dense(c) = v {
            let expected = (self.level.targets, self.level.height(), self.level.width(), 2);
            if c.shape() != expected {
                return Err(shape_mismatch("dense velocity shape", c.shape(), expected));
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, v: &VelocityCube) -> Result<ObjectiveBreakdown> {
        self.check(v)?;
        let dense = params_to_dense(v.parameterization(), &velocity_params(v), &self.level);
        Ok(evaluate_dense(&self.level, &dense, self.weights, false).0)
    }

    /// Objective and its gradient with respect to the parameters of `v`
    /// (2 values for a constant velocity, 6 for affine, one per cube entry
    /// for dense).
    pub fn evaluate_with_gradient(&self, v: &VelocityCube) -> Result<(ObjectiveBreakdown, Vec<f64>)> {
        self.check(v)?;
        let kind = v.parameterization();
        let dense = params_to_dense(kind, &velocity_params(v), &self.level);
        let (b, g) = evaluate_dense(&self.level, &dense, self.weights, true);
        Ok((b, chain_gradient(kind, &g.expect("gradient requested"), &self.level)))
    }
}

/// Dual-consistency objective of `v` on `pair`.
pub fn dual_objective(pair: &DualPair, v: &VelocityCube, params: &SolverParams) -> Result<ObjectiveBreakdown> {
    DualObjective::new(pair, params)?.evaluate(v)
}

/// Gradient descent with backtracking on one level. Returns the final
/// parameters; accepted iterates are appended to `log`.
fn descend(
    level: &Level,
    kind: Parameterization,
    mut p: Vec<f64>,
    params: &SolverParams,
    (index, scale): (usize, f64),
    log: &mut Vec<LogEntry>,
) -> Vec<f64> {
    let weights = params.weights();
    let eval = |p: &[f64]| {
        let dense = params_to_dense(kind, p, level);
        let (b, g) = evaluate_dense(level, &dense, weights, true);
        (b, chain_gradient(kind, &g.expect("gradient requested"), level))
    };
    let entry = |iter: usize, b: ObjectiveBreakdown| LogEntry {
        level: index,
        scale,
        iter,
        data_term: b.data_term,
        tv_term: b.tv_term,
        total: b.total,
    };
    // Dense gradients shrink with the number of entries, so scale them back up.
    let precond = match kind {
        Parameterization::Dense => (level.targets * level.width() * level.height()) as f64,
        _ => 1.0,
    };

    let (mut current, mut grad) = eval(&p);
    log.push(entry(0, current));
    let mut step = params.step;
    for iter in 1..=params.iters_per_scale {
        if grad.iter().all(|&g| g == 0.0) {
            break;
        }
        let mut trial = step;
        let mut accepted = None;
        for _ in 0..=MAX_HALVINGS {
            let candidate: Vec<f64> = p.iter().zip(&grad).map(|(x, g)| x - trial * precond * g).collect();
            let (b, g) = eval(&candidate);
            if b.total < current.total {
                accepted = Some((candidate, b, g));
                break;
            }
            trial *= 0.5;
        }
        let Some((candidate, b, g)) = accepted else {
            log::debug!("level {index}: line search exhausted after {} iterations", iter - 1);
            break;
        };
        p = candidate;
        current = b;
        grad = g;
        log.push(entry(iter, current));
        step = (trial * 2.0).min(params.step * MAX_STEP_GROWTH);
    }
    log::debug!("level {index} (scale {scale}): objective {:.6e}", current.total);
    p
}

/// Estimates the velocity cube from zero.
pub fn estimate_velocity(pair: &DualPair, params: &SolverParams) -> Result<Estimate> {
    refine_velocity(pair, params, None)
}

/// Estimates the velocity cube, starting the coarsest level from `init`
/// (zero when `None`).
pub fn refine_velocity(pair: &DualPair, params: &SolverParams, init: Option<&VelocityCube>) -> Result<Estimate> {
    params.validate()?;
    let kind = params.parameterization;
    let (targets, w, h) = (params.n_frames, pair.width(), pair.height());
    if let Some(v) = init {
        check_velocity(v, pair, targets)?;
        if v.parameterization() != kind {
            return Err(Error::InvalidArgument(format!(
                "initial velocity is {:?} but the solver was asked for {kind:?}",
                v.parameterization()
            )));
        }
    }
    if pair.t2b.variance() < 1e-12 && pair.b2t.variance() < 1e-12 {
        log::warn!("both RS inputs are flat; the objective carries no motion information, returning zero velocity");
        return Ok(Estimate { velocity: VelocityCube::zeros(kind, targets, h, w)?, log: Vec::new() });
    }

    let (ta, tb) = time_cubes(pair, targets)?;
    let mut log = Vec::new();
    let mut p: Option<Vec<f64>> = None;
    let mut prev_dims = (h, w);
    for (index, &scale) in params.scales.iter().enumerate() {
        let level = build_level(pair, &ta, &tb, scale)?;
        let dims = (level.height(), level.width());
        let start = match (p.take(), kind) {
            (Some(prev), Parameterization::Dense) => resample_dense(
                &prev,
                targets,
                prev_dims,
                dims,
                [dims.1 as f64 / prev_dims.1 as f64, dims.0 as f64 / prev_dims.0 as f64],
            ),
            (Some(prev), _) => prev,
            (None, Parameterization::Dense) => match init {
                Some(v) => resample_dense(&velocity_params(v), targets, (h, w), dims, level.scale),
                None => vec![0.0; param_len(kind, &level)],
            },
            (None, _) => init.map_or_else(|| vec![0.0; param_len(kind, &level)], velocity_params),
        };
        p = Some(descend(&level, kind, start, params, (index, scale), &mut log));
        prev_dims = dims;
    }
    let p = p.expect("at least one scale");
    let velocity = match kind {
        // The last level is full resolution, but resample in case rounding differed.
        Parameterization::Dense if prev_dims != (h, w) => {
            let gain = [w as f64 / prev_dims.1 as f64, h as f64 / prev_dims.0 as f64];
            velocity_from_params(kind, &resample_dense(&p, targets, prev_dims, (h, w), gain), targets, h, w)?
        }
        _ => velocity_from_params(kind, &p, targets, h, w)?,
    };
    Ok(Estimate { velocity, log })
}

/// Output of [`extract_frames`].
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    pub sequence: GsSequence,
    pub velocity: VelocityCube,
    pub flow_t2b: Cube,
    pub flow_b2t: Cube,
    /// Solver log; empty when the velocity was supplied.
    pub log: Vec<LogEntry>,
}

/// Warps both inputs with `velocity` and fuses them into `targets` GS frames.
fn render_with(pair: &DualPair, velocity: &VelocityCube, targets: usize) -> Result<(GsSequence, Cube, Cube)> {
    check_velocity(velocity, pair, targets)?;
    let (ta, tb) = time_cubes(pair, targets)?;
    let flow_t2b = flow_from_velocity(&ta, velocity, pair.width())?;
    let flow_b2t = flow_from_velocity(&tb, velocity, pair.width())?;
    let wa = backward_warp(&pair.t2b, &flow_t2b)?;
    let wb = backward_warp(&pair.b2t, &flow_b2t)?;
    let mask = proximity_mask(&ta, &tb, pair.width())?;
    let frames = blend(&wa, &wb, &mask, None)?;
    let sequence = GsSequence::new(frames, target_times(&pair.config, targets)?)?;
    Ok((sequence, flow_t2b, flow_b2t))
}

/// Extracts `params.n_frames` GS frames spanning the exposure window. The
/// velocity is estimated unless `oracle` supplies it.
pub fn extract_frames(pair: &DualPair, params: &SolverParams, oracle: Option<&VelocityCube>) -> Result<Extraction> {
    params.validate()?;
    let (velocity, log) = match oracle {
        Some(v) => (v.clone(), Vec::new()),
        None => {
            let e = estimate_velocity(pair, params)?;
            (e.velocity, e.log)
        }
    };
    let (sequence, flow_t2b, flow_b2t) = render_with(pair, &velocity, params.n_frames)?;
    Ok(Extraction { sequence, velocity, flow_t2b, flow_b2t, log })
}

/// Supervised variant of the objective: Charbonnier distance between the
/// frames extracted with `v` and ground truth, plus the same flow TV.
pub fn supervised_objective(
    pair: &DualPair,
    v: &VelocityCube,
    gt: &GsSequence,
    params: &SolverParams,
) -> Result<ObjectiveBreakdown> {
    params.validate()?;
    if gt.len() != params.n_frames {
        return Err(shape_mismatch("ground-truth frames vs n_frames", gt.len(), params.n_frames));
    }
    let (out, fa, fb) = render_with(pair, v, params.n_frames)?;
    let mut a = Vec::new();
    let mut b = Vec::new();
    for (o, g) in out.frames.iter().zip(&gt.frames) {
        if !o.same_shape(g) {
            return Err(shape_mismatch("extracted vs ground-truth frame", o.dims(), g.dims()));
        }
        a.extend_from_slice(o.pixels());
        b.extend_from_slice(g.pixels());
    }
    let data_term = charbonnier(&a, &b, params.charbonnier_eps)?;
    let tv_term = tv(&fa) + tv(&fb);
    Ok(ObjectiveBreakdown { data_term, tv_term, total: data_term + params.lambda_v * tv_term })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::RsConfig;
    use crate::tensor::ImageBuf;

    fn pair_of(t2b: ImageBuf, b2t: ImageBuf, misalign: i32) -> DualPair {
        let cfg = RsConfig::new(t2b.height(), 1e-4, 0.01, ScanDirection::T2B).unwrap();
        DualPair::new(t2b, b2t, cfg, misalign).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(SolverParams::default().validate().is_ok());
        let mut p = SolverParams::default();
        p.scales = vec![0.5, 0.25, 1.0];
        assert!(p.validate().is_err());
        p.scales = vec![0.25, 0.5];
        assert!(p.validate().is_err());
        p.scales = vec![1.0];
        p.lambda_v = -0.1;
        assert!(p.validate().is_err());
        p.lambda_v = 0.0;
        p.n_frames = 0;
        assert!(p.validate().is_err());
        assert_eq!(SolverParams::new(Parameterization::Dense, 5).step, 0.05);
    }

    #[test]
    fn flat_inputs_return_zero() {
        let img = ImageBuf::filled(16, 12, 1, 0.4).unwrap();
        let pair = pair_of(img.clone(), img, 0);
        let e = estimate_velocity(&pair, &SolverParams::new(Parameterization::GlobalAffine, 3)).unwrap();
        assert_eq!(e.velocity, VelocityCube::GlobalAffine { frames: 3, coeffs: [0.0; 6] });
        assert!(e.log.is_empty());
    }

    #[test]
    fn static_textured_pair_stays_at_zero() {
        let img = ImageBuf::from_fn(24, 20, 1, |x, y, _| (0.5 + 0.3 * ((x as f64 * 0.7).sin() * (y as f64 * 0.4).cos())) as f32).unwrap();
        let pair = pair_of(img.clone(), img.clone(), 0);
        for kind in [Parameterization::GlobalConst, Parameterization::GlobalAffine, Parameterization::Dense] {
            let e = estimate_velocity(&pair, &SolverParams::new(kind, 3)).unwrap();
            let max = velocity_params(&e.velocity).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            assert!(max <= 1e-3, "{kind:?}: {max}");
            let x = extract_frames(&pair, &SolverParams::new(kind, 3), None).unwrap();
            assert!(x.sequence.frames.iter().all(|f| *f == img));
        }
    }

    #[test]
    fn init_shape_is_checked() {
        let img = ImageBuf::from_fn(10, 8, 1, |x, y, _| ((x * y) % 5) as f32 / 5.0).unwrap();
        let pair = pair_of(img.clone(), img, 0);
        let params = SolverParams::new(Parameterization::GlobalConst, 3);
        let wrong_frames = VelocityCube::GlobalConst { frames: 2, v: [0.0; 2] };
        assert!(refine_velocity(&pair, &params, Some(&wrong_frames)).is_err());
        let wrong_kind = VelocityCube::GlobalAffine { frames: 3, coeffs: [0.0; 6] };
        assert!(refine_velocity(&pair, &params, Some(&wrong_kind)).is_err());
        assert!(extract_frames(&pair, &params, Some(&wrong_frames)).is_err());
    }

    #[test]
    fn supervised_objective_is_floor_for_identity() {
        let img = ImageBuf::from_fn(12, 10, 1, |x, y, _| ((x + 2 * y) % 7) as f32 / 7.0).unwrap();
        let pair = pair_of(img.clone(), img.clone(), 0);
        let params = SolverParams::new(Parameterization::GlobalConst, 2);
        let gt = GsSequence::new(vec![img.clone(), img], target_times(&pair.config, 2).unwrap()).unwrap();
        let zero = VelocityCube::GlobalConst { frames: 2, v: [0.0; 2] };
        let b = supervised_objective(&pair, &zero, &gt, &params).unwrap();
        assert!((b.data_term - 1e-3).abs() < 1e-12);
        assert_eq!(b.tv_term, 0.0);
    }
}
