//! Pixel buffers, bilinear patch resampling and image file IO.
//!
//! Channel values live in [0, 1]. Pixel (ix, iy) covers the unit square
//! [ix, ix+1) x [iy, iy+1) with its center at (ix + 0.5, iy + 0.5).

use std::io::Write;
use std::path::Path;

use ndarray::Array3;
use thiserror::Error;

use crate::geometry::Patch;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("failed to decode {path}: {source}")]
    Decode {
        path: String,
        source: image::ImageError,
    },
    #[error("failed to encode {path}: {source}")]
    Encode {
        path: String,
        source: image::ImageError,
    },
}

/// An RGB image with interleaved f32 channel data in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new_filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Image {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c] as f64
    }

    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    pub fn set_rgb(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let base = (y * self.width + x) * 3;
        self.data[base..base + 3].copy_from_slice(&rgb);
    }

    /// Bilinear sample at a continuous image coordinate with edge
    /// replication outside the image bounds.
    pub fn sample_bilinear(&self, x: f64, y: f64, c: usize) -> f64 {
        let fx = x - 0.5;
        let fy = y - 0.5;
        let x0 = fx.floor();
        let y0 = fy.floor();
        let tx = fx - x0;
        let ty = fy - y0;
        let clamp_x = |v: f64| (v.max(0.0) as usize).min(self.width - 1);
        let clamp_y = |v: f64| (v.max(0.0) as usize).min(self.height - 1);
        let x0i = clamp_x(x0);
        let x1i = clamp_x(x0 + 1.0);
        let y0i = clamp_y(y0);
        let y1i = clamp_y(y0 + 1.0);
        let v00 = self.get(x0i, y0i, c);
        let v10 = self.get(x1i, y0i, c);
        let v01 = self.get(x0i, y1i, c);
        let v11 = self.get(x1i, y1i, c);
        let top = v00 * (1.0 - tx) + v10 * tx;
        let bot = v01 * (1.0 - tx) + v11 * tx;
        top * (1.0 - ty) + bot * ty
    }
}

/// Uniformly scale a square patch of an image to an `n` x `n` RGB block
/// (channels-first). Samples outside the image are edge-replicated.
///
/// The caller must pass a square patch; part and body patches are
/// square-extended before they reach the network.
pub fn resample_patch(image: &Image, patch: &Patch, n: usize) -> Array3<f64> {
    assert!(
        (patch.w() - patch.h()).abs() < 1e-9,
        "resample_patch requires a square patch, got {}x{}",
        patch.w(),
        patch.h()
    );
    assert!(n >= 1);
    let mut out = Array3::zeros((3, n, n));
    let step_x = patch.w() / n as f64;
    let step_y = patch.h() / n as f64;
    let left = patch.left();
    let top = patch.top();
    for row in 0..n {
        let sy = top + (row as f64 + 0.5) * step_y;
        for col in 0..n {
            let sx = left + (col as f64 + 0.5) * step_x;
            for c in 0..3 {
                out[[c, row, col]] = image.sample_bilinear(sx, sy, c);
            }
        }
    }
    out
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn save_png(image: &Image, path: &Path) -> Result<(), ImageError> {
    let mut buf = image::RgbImage::new(image.width as u32, image.height as u32);
    for y in 0..image.height {
        for x in 0..image.width {
            let base = (y * image.width + x) * 3;
            buf.put_pixel(
                x as u32,
                y as u32,
                image::Rgb([
                    to_u8(image.data[base]),
                    to_u8(image.data[base + 1]),
                    to_u8(image.data[base + 2]),
                ]),
            );
        }
    }
    buf.save(path).map_err(|source| ImageError::Encode {
        path: path.display().to_string(),
        source,
    })
}

/// Load a PNG or PPM image as RGB in [0, 1].
pub fn load_image(path: &Path) -> Result<Image, ImageError> {
    let img = image::open(path)
        .map_err(|source| ImageError::Decode {
            path: path.display().to_string(),
            source,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.as_raw().iter().map(|b| *b as f32 / 255.0).collect();
    Ok(Image {
        width: w,
        height: h,
        data,
    })
}

/// Write a scalar grid as a 16-bit binary PGM, min-max scaled to the full
/// 16-bit range. Returns the (min, max) of the input so the caller can
/// record the scale in a sidecar file.
pub fn write_pgm16(grid: &ndarray::Array2<f64>, path: &Path) -> Result<(f64, f64), ImageError> {
    let (h, w) = grid.dim();
    let min = grid.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if max > min { max - min } else { 1.0 };
    let mut bytes = Vec::with_capacity(32 + w * h * 2);
    write!(&mut bytes, "P5\n{} {}\n65535\n", w, h).expect("in-memory write");
    for row in 0..h {
        for col in 0..w {
            let v = ((grid[[row, col]] - min) / span * 65535.0).round() as u16;
            bytes.extend_from_slice(&v.to_be_bytes());
        }
    }
    std::fs::write(path, bytes).map_err(|source| ImageError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok((min, max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Patch;

    fn gradient_image(w: usize, h: usize) -> Image {
        let mut img = Image::new_filled(w, h, [0.0; 3]);
        for y in 0..h {
            for x in 0..w {
                img.set_rgb(
                    x,
                    y,
                    [
                        x as f32 / w as f32,
                        y as f32 / h as f32,
                        ((x + y) % 2) as f32,
                    ],
                );
            }
        }
        img
    }

    #[test]
    fn identity_copy_when_scale_one() {
        let img = gradient_image(8, 8);
        let patch = Patch::new(4.0, 4.0, 4.0, 4.0).unwrap();
        let block = resample_patch(&img, &patch, 4);
        for row in 0..4 {
            for col in 0..4 {
                for c in 0..3 {
                    let expect = img.get(col + 2, row + 2, c);
                    assert!((block[[c, row, col]] - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn constant_patch_stays_constant() {
        let img = Image::new_filled(16, 16, [0.25, 0.5, 0.75]);
        let patch = Patch::new(8.0, 8.0, 8.0, 8.0).unwrap();
        let block = resample_patch(&img, &patch, 4);
        for v in block.index_axis(ndarray::Axis(0), 0).iter() {
            assert!((v - 0.25).abs() < 1e-12);
        }
        for v in block.index_axis(ndarray::Axis(0), 2).iter() {
            assert!((v - 0.75).abs() < 1e-12);
        }
    }

    #[test]
    fn border_straddling_replicates_edges() {
        let img = gradient_image(6, 6);
        // patch extends 3px past the left image border
        let patch = Patch::new(6.0, 6.0, 0.0, 3.0).unwrap();
        let block = resample_patch(&img, &patch, 6);
        // direct per-pixel oracle
        for row in 0..6 {
            for col in 0..6 {
                let sx = -3.0 + col as f64 + 0.5;
                let sy = 0.0 + row as f64 + 0.5;
                for c in 0..3 {
                    assert_eq!(block[[c, row, col]], img.sample_bilinear(sx, sy, c));
                }
            }
        }
        // columns sampled fully outside equal the first image column
        for row in 0..6 {
            for c in 0..3 {
                assert_eq!(block[[c, row, 0]], img.get(0, row, c));
                assert_eq!(block[[c, row, 1]], img.get(0, row, c));
            }
        }
    }

    #[test]
    fn values_stay_in_unit_range() {
        let img = gradient_image(9, 7);
        let patch = Patch::new(20.0, 20.0, 4.0, 3.0).unwrap();
        let block = resample_patch(&img, &patch, 16);
        for v in block.iter() {
            assert!(*v >= 0.0 && *v <= 1.0);
        }
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let img = gradient_image(5, 4);
        save_png(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert_eq!(back.width(), 5);
        assert_eq!(back.height(), 4);
        for y in 0..4 {
            for x in 0..5 {
                for c in 0..3 {
                    assert!((back.get(x, y, c) - img.get(x, y, c)).abs() < 1.0 / 255.0);
                }
            }
        }
    }

    #[test]
    fn pgm16_header_and_scale() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.pgm");
        let grid = ndarray::arr2(&[[0.0, 1.0], [2.0, 4.0]]);
        let (min, max) = write_pgm16(&grid, &path).unwrap();
        assert_eq!((min, max), (0.0, 4.0));
        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"P5\n2 2\n65535\n"));
        let px = &bytes[bytes.len() - 8..];
        assert_eq!(u16::from_be_bytes([px[0], px[1]]), 0);
        assert_eq!(u16::from_be_bytes([px[6], px[7]]), 65535);
    }
}
