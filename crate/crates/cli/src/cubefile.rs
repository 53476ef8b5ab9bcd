//! Lossless float tensor files.
//!
//! Layout: the 5-byte magic `DRSC1`, then `N, H, W, C` as little-endian
//! `u32`, then `N * H * W * C` little-endian `f32` values in `n, h, w, c`
//! order.

use std::path::Path;

use dualrs_core::{Cube, ImageBuf};

use crate::error::{CliError, CliResult};
use crate::output::write_atomic;

pub const MAGIC: &[u8; 5] = b"DRSC1";
const HEADER_LEN: usize = 5 + 16;

pub fn encode(cube: &Cube) -> CliResult<Vec<u8>> {
    let (n, h, w, c) = cube.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + cube.data().len() * 4);
    out.extend_from_slice(MAGIC);
    for d in [n, h, w, c] {
        let d = u32::try_from(d).map_err(|_| CliError::Data(format!("dimension {d} does not fit the cube header")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in cube.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> CliResult<Cube> {
    if bytes.len() < HEADER_LEN || &bytes[..5] != MAGIC {
        return Err(CliError::Data("not a cube file (missing DRSC1 header)".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[5 + 4 * i..9 + 4 * i].try_into().unwrap()) as usize;
    let (n, h, w, c) = (dim(0), dim(1), dim(2), dim(3));
    let count = n
        .checked_mul(h)
        .and_then(|v| v.checked_mul(w))
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| CliError::Data("cube dimensions overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != count * 4 {
        return Err(CliError::Data(format!(
            "cube header {n}x{h}x{w}x{c} needs {} payload bytes, found {}",
            count * 4,
            payload.len()
        )));
    }
    let data = payload.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
    Cube::from_data(n, h, w, c, data).map_err(CliError::data)
}

pub fn read(path: &Path) -> CliResult<Cube> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode(&bytes).map_err(|e| match e {
        CliError::Data(msg) => CliError::Data(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write(path: &Path, cube: &Cube) -> CliResult<()> {
    write_atomic(path, &encode(cube)?)
}

/// A cube holding a single image.
pub fn read_image(path: &Path) -> CliResult<ImageBuf> {
    let cube = read(path)?;
    if cube.frames() != 1 {
        return Err(CliError::Data(format!("{}: expected one frame, found {}", path.display(), cube.frames())));
    }
    cube.frame_image(0).map_err(CliError::data)
}

pub fn write_image(path: &Path, img: &ImageBuf) -> CliResult<()> {
    let cube = Cube::from_images(std::slice::from_ref(img)).map_err(CliError::data)?;
    write(path, &cube)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let cube = Cube::from_data(1, 1, 2, 1, vec![1.0, -0.5]).unwrap();
        let bytes = encode(&cube).unwrap();
        assert_eq!(&bytes[..5], b"DRSC1");
        assert_eq!(&bytes[5..21], &[1, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&bytes[21..25], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 29);
    }

    #[test]
    fn rejects_corrupt_input() {
        assert!(decode(b"DRSC2\0\0\0\0").is_err());
        let mut bytes = encode(&Cube::filled(1, 2, 2, 1, 0.5).unwrap()).unwrap();
        bytes.pop();
        assert!(matches!(decode(&bytes), Err(CliError::Data(_))));
    }

    proptest! {
        #[test]
        fn round_trip_is_lossless(n in 1usize..3, h in 1usize..5, w in 1usize..5, c in 1usize..4, seed in any::<u32>()) {
            let data: Vec<f32> = (0..n * h * w * c).map(|i| ((i as u32).wrapping_mul(2654435761) ^ seed) as f32 / u32::MAX as f32).collect();
            let cube = Cube::from_data(n, h, w, c, data).unwrap();
            let bytes = encode(&cube).unwrap();
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(&back, &cube);
            prop_assert_eq!(encode(&back).unwrap(), bytes);
        }
    }
}
