//! 8-bit PNG input and output.

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use ndarray::Array3;

use super::sample::Mask;
use crate::error::{Error, Result};

/// Read any PNG as RGB in `[0, 1]`, shape `H x W x 3`.
pub fn read_rgb(path: impl AsRef<Path>) -> Result<Array3<f32>> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Ok(Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
        img.get_pixel(x as u32, y as u32)[c] as f32 / 255.0
    }))
}

/// Read a mask PNG; pixels above 127 are foreground.
pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8();
    let (w, h) = img.dimensions();
    Ok(Mask::from_shape_fn((h as usize, w as usize), |(y, x)| {
        img.get_pixel(x as u32, y as u32)[0] > 127
    }))
}

pub fn write_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = mask.dim();
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        Luma([if mask[[y as usize, x as usize]] { 255 } else { 0 }])
    });
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Write an `H x W x 3` array in `[0, 1]` (one channel is written as gray).
pub fn write_rgb(path: impl AsRef<Path>, image: &Array3<f32>) -> Result<()> {
    let path = path.as_ref();
    let (h, w, c) = image.dim();
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (y, x) = (y as usize, x as usize);
        if c >= 3 {
            Rgb([to_u8(image[[y, x, 0]]), to_u8(image[[y, x, 1]]), to_u8(image[[y, x, 2]])])
        } else {
            let v = to_u8(image[[y, x, 0]]);
            Rgb([v, v, v])
        }
    });
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_quantised_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let img = Array3::from_shape_fn((5, 6, 3), |(y, x, c)| ((y * 40 + x * 7 + c * 60) % 256) as f32 / 255.0);
        let p = dir.path().join("img.png");
        write_rgb(&p, &img).unwrap();
        assert_eq!(read_rgb(&p).unwrap(), img);

        let mask = Mask::from_shape_fn((4, 3), |(y, x)| (y + x) % 2 == 0);
        let p = dir.path().join("mask.png");
        write_mask(&p, &mask).unwrap();
        assert_eq!(read_mask(&p).unwrap(), mask);
    }
}
