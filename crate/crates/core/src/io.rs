//! PNG export and import.
//!
//! Intensities are written linearly as 16-bit samples clipped to `[0, 1]`,
//! one file per plane: RGB when there are three channels, grayscale for one,
//! one grayscale file per channel otherwise.

use std::path::{Path, PathBuf};

use image::{ImageBuffer, Luma, Rgb};

use crate::error::{Error, Result};
use crate::field::{IntensityImage, Provenance};

fn q16(v: f64) -> u16 {
    (v.clamp(0.0, 1.0) * 65535.0).round() as u16
}

fn interleave<T: Copy>(planes: &[&[T]], n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n * planes.len());
    for i in 0..n {
        for p in planes {
            out.push(p[i]);
        }
    }
    out
}

fn save_u16(path: &Path, w: usize, h: usize, channels: &[Vec<u16>]) -> Result<()> {
    let (w32, h32) = (w as u32, h as u32);
    match channels.len() {
        1 => ImageBuffer::<Luma<u16>, _>::from_raw(w32, h32, channels[0].clone()).unwrap().save(path)?,
        3 => {
            let refs: Vec<&[u16]> = channels.iter().map(|c| c.as_slice()).collect();
            ImageBuffer::<Rgb<u16>, _>::from_raw(w32, h32, interleave(&refs, w * h)).unwrap().save(path)?
        }
        _ => return Err(Error::InvalidArgument("only 1 or 3 channels fit one PNG".into())),
    }
    Ok(())
}

/// Writes `img` as 16-bit linear PNG(s) at `path`; returns the files written.
pub fn write_intensity_png(path: &Path, img: &IntensityImage) -> Result<Vec<PathBuf>> {
    let chans: Vec<Vec<u16>> = (0..img.channels).map(|c| img.channel(c).iter().map(|v| q16(*v)).collect()).collect();
    if img.channels == 1 || img.channels == 3 {
        save_u16(path, img.width, img.height, &chans)?;
        return Ok(vec![path.to_path_buf()]);
    }
    let stem = path.with_extension("");
    let mut out = Vec::new();
    for (c, data) in chans.into_iter().enumerate() {
        let p = PathBuf::from(format!("{}_c{c}.png", stem.display()));
        save_u16(&p, img.width, img.height, &[data])?;
        out.push(p);
    }
    Ok(out)
}

/// Linear `[0, 1]` values to 8-bit sRGB.
pub fn srgb8(v: f64) -> u8 {
    let v = v.clamp(0.0, 1.0);
    let s = if v <= 0.0031308 { 12.92 * v } else { 1.055 * v.powf(1.0 / 2.4) - 0.055 };
    (s * 255.0).round() as u8
}

/// 8-bit sRGB preview of a one- or three-channel image.
pub fn write_srgb_preview(path: &Path, img: &IntensityImage) -> Result<()> {
    let (w, h) = (img.width as u32, img.height as u32);
    let chans: Vec<Vec<u8>> = (0..img.channels).map(|c| img.channel(c).iter().map(|v| srgb8(*v)).collect()).collect();
    match img.channels {
        1 => ImageBuffer::<Luma<u8>, _>::from_raw(w, h, chans[0].clone()).unwrap().save(path)?,
        3 => {
            let refs: Vec<&[u8]> = chans.iter().map(|c| c.as_slice()).collect();
            ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, interleave(&refs, img.width * img.height)).unwrap().save(path)?
        }
        _ => return Err(Error::InvalidArgument("previews need 1 or 3 channels".into())),
    }
    Ok(())
}

/// Reads a PNG as linear values in `[0, 1]` (no transfer-curve decoding).
pub fn read_png(path: &Path) -> Result<IntensityImage> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, raw): (usize, Vec<u16>) = if img.color().channel_count() >= 3 {
        (3, img.to_rgb16().into_raw())
    } else {
        (1, img.to_luma16().into_raw())
    };
    let mut data = vec![0.0; w * h * channels];
    for (i, px) in raw.chunks_exact(channels).enumerate() {
        for (c, v) in px.iter().enumerate() {
            data[c * w * h + i] = *v as f64 / 65535.0;
        }
    }
    IntensityImage::from_vec(w, h, channels, Provenance::Target, data)
}

/// Phase in `[0, 2π)` quantized to `bits` (8 or 10). Ten-bit codes are
/// stored in the top bits of 16-bit samples.
pub fn write_phase_png(path: &Path, phase: &[f64], width: usize, height: usize, channels: usize, bits: u32) -> Result<()> {
    if bits != 8 && bits != 10 {
        return Err(Error::InvalidArgument(format!("phase bit depth must be 8 or 10, got {bits}")));
    }
    if phase.len() != width * height * channels {
        return Err(Error::Shape("phase array does not match its dimensions".into()));
    }
    let levels = 1u32 << bits;
    let code = |t: f64| {
        let u = t.rem_euclid(std::f64::consts::TAU) / std::f64::consts::TAU;
        ((u * levels as f64).floor() as u32).min(levels - 1)
    };
    let np = width * height;
    if bits == 8 {
        let chans: Vec<Vec<u8>> = (0..channels).map(|c| phase[c * np..(c + 1) * np].iter().map(|t| code(*t) as u8).collect()).collect();
        let (w, h) = (width as u32, height as u32);
        match channels {
            1 => ImageBuffer::<Luma<u8>, _>::from_raw(w, h, chans[0].clone()).unwrap().save(path)?,
            3 => {
                let refs: Vec<&[u8]> = chans.iter().map(|c| c.as_slice()).collect();
                ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, interleave(&refs, np)).unwrap().save(path)?
            }
            _ => return Err(Error::InvalidArgument("phase PNGs need 1 or 3 channels".into())),
        }
    } else {
        let chans: Vec<Vec<u16>> =
            (0..channels).map(|c| phase[c * np..(c + 1) * np].iter().map(|t| (code(*t) << 6) as u16).collect()).collect();
        save_u16(path, width, height, &chans)?;
    }
    Ok(())
}
