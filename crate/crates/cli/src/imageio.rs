//! Image and frame-sequence input/output.
//!
//! PNG files are read as 8-bit grey or RGB and scaled to `[0, 1]`. Paths
//! ending in `.drsc` are read as lossless float cube files instead.

use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageFormat, RgbImage};

use dualrs_core::{Cube, ImageBuf};

use crate::cubefile;
use crate::error::{CliError, CliResult};
use crate::output::write_atomic;

pub fn is_cube_path(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("drsc"))
}

fn is_png_path(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

pub fn read_png(path: &Path) -> CliResult<ImageBuf> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => CliError::io(path, io),
        other => CliError::Data(format!("{}: {other}", path.display())),
    })?;
    let grey = matches!(img, DynamicImage::ImageLuma8(_) | DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLumaA16(_));
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, raw) = if grey { (1, img.to_luma8().into_raw()) } else { (3, img.to_rgb8().into_raw()) };
    let pixels = raw.into_iter().map(|v| v as f32 / 255.0).collect();
    ImageBuf::from_pixels(w, h, channels, pixels).map_err(CliError::data)
}

/// 8-bit PNG encoding (grey or RGB) of an image, values clamped to `[0, 1]`.
pub fn encode_png(img: &ImageBuf) -> CliResult<Vec<u8>> {
    let raw: Vec<u8> = img.pixels().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let dynamic = match img.channels() {
        1 => DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, raw).expect("buffer length matches")),
        _ => DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, raw).expect("buffer length matches")),
    };
    let mut bytes = Vec::new();
    dynamic
        .write_to(&mut Cursor::new(&mut bytes), ImageFormat::Png)
        .map_err(|e| CliError::Data(format!("png encoding failed: {e}")))?;
    Ok(bytes)
}

pub fn write_png(path: &Path, img: &ImageBuf) -> CliResult<()> {
    write_atomic(path, &encode_png(img)?)
}

/// Reads one image from a PNG or single-frame cube file.
pub fn read_image(path: &Path) -> CliResult<ImageBuf> {
    if is_cube_path(path) {
        cubefile::read_image(path)
    } else {
        read_png(path)
    }
}

/// Image files (PNG or cube) in a directory, sorted by name.
pub fn list_frames(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let p = entry.map_err(|e| CliError::io(dir, e))?.path();
        if p.is_file() && (is_png_path(&p) || is_cube_path(&p)) {
            paths.push(p);
        }
    }
    paths.sort();
    Ok(paths)
}

/// A frame sequence from a multi-frame cube file or a directory of images.
/// The flag reports whether any input was 8-bit quantized.
pub fn read_sequence(path: &Path) -> CliResult<(Vec<ImageBuf>, bool)> {
    if path.is_dir() {
        let files = list_frames(path)?;
        if files.is_empty() {
            return Err(CliError::Data(format!("{}: no PNG or .drsc frames found", path.display())));
        }
        let quantized = files.iter().any(|p| !is_cube_path(p));
        let frames = files.iter().map(|p| read_image(p)).collect::<CliResult<Vec<_>>>()?;
        Ok((frames, quantized))
    } else if is_cube_path(path) {
        let cube = cubefile::read(path)?;
        Ok((cube.to_images().map_err(CliError::data)?, false))
    } else if path.exists() {
        Ok((vec![read_png(path)?], true))
    } else {
        Err(CliError::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory")))
    }
}

/// Writes frames as `prefix_00.png, ...` into `dir` plus a lossless cube.
pub fn write_sequence(dir: &Path, prefix: &str, frames: &[ImageBuf], cube_path: &Path) -> CliResult<()> {
    for (i, f) in frames.iter().enumerate() {
        write_png(&dir.join(format!("{prefix}_{i:02}.png")), f)?;
    }
    cubefile::write(cube_path, &Cube::from_images(frames).map_err(CliError::data)?)
}
