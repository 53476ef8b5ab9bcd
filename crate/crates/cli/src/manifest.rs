//! Scene manifests for `synth`.
//!
//! A manifest names either a directory of uniformly timestamped GS frames
//! (`stack_dir`, resolved relative to the manifest) or a procedural scene.
//! The row count is the frame height.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "scene": "street-01",
//!   "stack_dir": "frames",
//!   "t0": 0.0,
//!   "dt": 0.000087,
//!   "row_readout": 0.000087,
//!   "midpoint": 0.0235,
//!   "misalign_rows": 0,
//!   "n_frames": 9,
//!   "out_dir": "out"
//! }
//! ```
//!
//! Procedural scenes replace `stack_dir`, `t0`, `dt` and `midpoint` with a
//! `procedural` section; their stack is sampled once per row readout.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dualrs_core::simulator::scenes::{render_stack, translation_scene, RotatingTexture, Texture, TranslationSetup};
use dualrs_core::{FrameStack, RsConfig, ScanDirection, VelocityCube};

use crate::error::{CliError, CliResult};
use crate::imageio;
use crate::output::SCHEMA_VERSION;

pub const DEFAULT_N_FRAMES: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub scene: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stack_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub procedural: Option<Procedural>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub row_readout: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub midpoint: Option<f64>,
    #[serde(default)]
    pub misalign_rows: i32,
    #[serde(default = "default_n_frames")]
    pub n_frames: usize,
    pub out_dir: PathBuf,
}

fn default_n_frames() -> usize {
    DEFAULT_N_FRAMES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Procedural {
    /// Smooth random texture translating at `velocity` pixels per frame readout.
    Translation {
        width: usize,
        height: usize,
        #[serde(default = "one")]
        channels: usize,
        velocity: [f64; 2],
        #[serde(default)]
        seed: u64,
    },
    /// Texture rotating about the image centre at `angular_rate` radians per
    /// frame readout.
    Rotation {
        width: usize,
        height: usize,
        #[serde(default = "one")]
        channels: usize,
        angular_rate: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn one() -> usize {
    1
}

/// A loaded scene: the stack, the T2B camera and the known motion, if any.
pub struct LoadedScene {
    pub stack: FrameStack,
    pub config: RsConfig,
    pub oracle: Option<VelocityCube>,
    /// True when the stack came from 8-bit images.
    pub quantized: bool,
}

impl Manifest {
    /// Parses manifest JSON; errors carry the line and column.
    pub fn parse(text: &str) -> CliResult<Self> {
        let m: Manifest = serde_json::from_str(text).map_err(|e| CliError::Config(format!("manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    /// Loads a manifest and resolves relative paths against its directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut m = Self::parse(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        if let Some(dir) = &m.stack_dir {
            m.stack_dir = Some(base.join(dir));
        }
        m.out_dir = base.join(&m.out_dir);
        if let Some(dir) = &m.stack_dir {
            if !dir.is_dir() {
                return Err(CliError::Data(format!("stack_dir {} is not a directory", dir.display())));
            }
        }
        Ok(m)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |msg: String| Err(CliError::Config(format!("manifest: {msg}")));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if !(self.row_readout.is_finite() && self.row_readout > 0.0) {
            return bad(format!("row_readout must be positive, got {}", self.row_readout));
        }
        if self.n_frames == 0 {
            return bad("n_frames must be at least 1".into());
        }
        match (&self.stack_dir, &self.procedural) {
            (Some(_), Some(_)) => bad("give either stack_dir or procedural, not both".into()),
            (None, None) => bad("one of stack_dir or procedural is required".into()),
            (Some(_), None) => {
                let (Some(t0), Some(dt), Some(mid)) = (self.t0, self.dt, self.midpoint) else {
                    return bad("stack_dir scenes need t0, dt and midpoint".into());
                };
                if !(dt.is_finite() && dt > 0.0) {
                    return bad(format!("dt must be positive, got {dt}"));
                }
                if !t0.is_finite() || !mid.is_finite() {
                    return bad("t0 and midpoint must be finite".into());
                }
                Ok(())
            }
            (None, Some(p)) => {
                if self.t0.is_some() || self.dt.is_some() || self.midpoint.is_some() {
                    return bad("procedural scenes derive t0, dt and midpoint; remove them".into());
                }
                let (w, h, c) = p.dims();
                if w < 2 || h < 2 || !(c == 1 || c == 3) {
                    return bad(format!("procedural size {w}x{h} with {c} channels is not supported"));
                }
                if self.misalign_rows.unsigned_abs() as usize >= h {
                    return bad(format!("misalign_rows {} exceeds the {h} row frame", self.misalign_rows));
                }
                Ok(())
            }
        }
    }

    /// Renders or reads the frame stack.
    pub fn load_scene(&self) -> CliResult<LoadedScene> {
        if let Some(p) = &self.procedural {
            return p.build(self.row_readout, self.misalign_rows, self.n_frames);
        }
        let dir = self.stack_dir.as_ref().expect("validated");
        let (frames, quantized) = imageio::read_sequence(dir)?;
        let rows = frames[0].height();
        let stack = FrameStack::new(frames, self.t0.unwrap(), self.dt.unwrap()).map_err(CliError::data)?;
        let config =
            RsConfig::new(rows, self.row_readout, self.midpoint.unwrap(), ScanDirection::T2B).map_err(CliError::data)?;
        Ok(LoadedScene { stack, config, oracle: None, quantized })
    }
}

impl Procedural {
    pub fn dims(&self) -> (usize, usize, usize) {
        match *self {
            Procedural::Translation { width, height, channels, .. } | Procedural::Rotation { width, height, channels, .. } => {
                (width, height, channels)
            }
        }
    }

    pub fn set_seed(&mut self, value: u64) {
        match self {
            Procedural::Translation { seed, .. } | Procedural::Rotation { seed, .. } => *seed = value,
        }
    }

    fn build(&self, row_readout: f64, misalign_rows: i32, n_frames: usize) -> CliResult<LoadedScene> {
        let margin = misalign_rows.unsigned_abs() as usize + 2;
        match *self {
            Procedural::Translation { width, height, channels, velocity, seed } => {
                let setup = TranslationSetup { width, height, channels, row_readout, velocity, seed, margin_rows: margin };
                let s = translation_scene(&setup).map_err(CliError::data)?;
                let oracle = s.oracle_velocity(n_frames);
                Ok(LoadedScene { stack: s.stack, config: s.config, oracle: Some(oracle), quantized: false })
            }
            Procedural::Rotation { width, height, channels, angular_rate, seed } => {
                let half = height / 2 + margin;
                let config = RsConfig::new(height, row_readout, half as f64 * row_readout, ScanDirection::T2B)
                    .map_err(CliError::data)?;
                let scene = RotatingTexture {
                    texture: Texture::random(seed, 12, 12.0, 48.0),
                    center: [(width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0],
                    angular_rate: angular_rate / config.frame_readout(),
                };
                let count = 2 * half + height % 2 + 1;
                let stack = render_stack(&scene, width, height, channels, 0.0, row_readout, count).map_err(CliError::data)?;
                Ok(LoadedScene { stack, config, oracle: None, quantized: false })
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const STACK: &str = r#"{
        "schema_version": 1, "scene": "s", "stack_dir": "frames",
        "t0": 0.0, "dt": 0.001, "row_readout": 0.0001, "midpoint": 0.01, "out_dir": "out"
    }"#;

    #[test]
    fn parses_with_defaults() {
        let m = Manifest::parse(STACK).unwrap();
        assert_eq!(m.n_frames, 9);
        assert_eq!(m.misalign_rows, 0);
        assert_eq!(m.stack_dir.as_deref(), Some(Path::new("frames")));
    }

    #[test]
    fn unknown_field_reports_position() {
        let text = STACK.replace("\"scene\"", "\"scnee\"");
        let err = Manifest::parse(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("scnee") && msg.contains("line 2"), "{msg}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn rejects_invalid_timing() {
        for (from, to) in [("\"dt\": 0.001", "\"dt\": 0.0"), ("\"row_readout\": 0.0001", "\"row_readout\": -1.0")] {
            assert!(matches!(Manifest::parse(&STACK.replace(from, to)), Err(CliError::Config(_))));
        }
        let no_mid = STACK.replace("\"midpoint\": 0.01,", "");
        assert!(Manifest::parse(&no_mid).is_err());
    }

    #[test]
    fn procedural_section() {
        let text = r#"{"schema_version": 1, "scene": "p", "row_readout": 1e-4, "out_dir": "o",
            "procedural": {"kind": "translation", "width": 24, "height": 16, "velocity": [1.0, 0.0], "seed": 3}}"#;
        let m = Manifest::parse(text).unwrap();
        let scene = m.load_scene().unwrap();
        assert_eq!(scene.stack.height(), 16);
        assert!(scene.oracle.is_some());
        let with_t0 = text.replace("\"out_dir\"", "\"t0\": 0.0, \"out_dir\"");
        assert!(Manifest::parse(&with_t0).is_err());
    }

    #[test]
    fn missing_stack_dir_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        std::fs::write(&p, STACK).unwrap();
        assert!(matches!(Manifest::load(&p), Err(CliError::Data(_))));
    }
}
