//! Tiling of large scans into fixed-size tiles and stitching predictions back.
//!
//! Tiles start at multiples of `stride`. Tiles that run past the right or
//! bottom edge are completed by reflection padding; each tile records how much
//! of it is real scan so stitching can crop the padding away again.

use ndarray::{s, Array2, Array3, ArrayView2, ArrayView3};

use super::sample::{Mask, SegmentationSample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TileSpan {
    pub y: usize,
    pub x: usize,
    /// Rows of the tile that come from the scan; the rest is padding.
    pub valid_h: usize,
    pub valid_w: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileLayout {
    pub scan_h: usize,
    pub scan_w: usize,
    pub tile: usize,
    pub stride: usize,
    pub spans: Vec<TileSpan>,
}

fn axis_starts(len: usize, tile: usize, stride: usize) -> Vec<usize> {
    let mut out = vec![0];
    let mut p = 0;
    while p + tile < len {
        p += stride;
        if p >= len {
            break;
        }
        out.push(p);
    }
    out
}

impl TileLayout {
    pub fn new(scan_h: usize, scan_w: usize, tile: usize, stride: usize) -> Result<Self> {
        if tile == 0 || stride == 0 {
            return Err(Error::Config("tile size and stride must be at least 1".into()));
        }
        if stride > tile {
            return Err(Error::Config(format!("stride {stride} larger than tile {tile} leaves gaps")));
        }
        if scan_h == 0 || scan_w == 0 {
            return Err(Error::Dimension("cannot tile an empty scan".into()));
        }
        if scan_h < tile || scan_w < tile {
            log::warn!("scan {scan_h}x{scan_w} is smaller than one {tile}px tile; padding by reflection");
        }
        let ys = axis_starts(scan_h, tile, stride);
        let xs = axis_starts(scan_w, tile, stride);
        let spans = ys
            .iter()
            .flat_map(|&y| {
                xs.iter().map(move |&x| TileSpan {
                    y,
                    x,
                    valid_h: tile.min(scan_h - y),
                    valid_w: tile.min(scan_w - x),
                })
            })
            .collect();
        Ok(TileLayout {
            scan_h,
            scan_w,
            tile,
            stride,
            spans,
        })
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }
}

/// Mirror an index into `[0, n)` without repeating the edge sample.
pub fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

pub fn extract_plane<T: Clone>(src: ArrayView2<T>, span: &TileSpan, tile: usize) -> Array2<T> {
    let (h, w) = src.dim();
    Array2::from_shape_fn((tile, tile), |(i, j)| {
        src[[reflect_index(span.y + i, h), reflect_index(span.x + j, w)]].clone()
    })
}

pub fn extract_hwc<T: Clone>(src: ArrayView3<T>, span: &TileSpan, tile: usize) -> Array3<T> {
    let (h, w, c) = src.dim();
    Array3::from_shape_fn((tile, tile, c), |(i, j, k)| {
        src[[reflect_index(span.y + i, h), reflect_index(span.x + j, w), k]].clone()
    })
}

/// Cut a scan into tiles. Image, mask and ignore mask are tiled identically.
pub fn tile_image(
    scan: &SegmentationSample,
    tile: usize,
    stride: usize,
) -> Result<(Vec<SegmentationSample>, TileLayout)> {
    scan.validate()?;
    let layout = TileLayout::new(scan.height(), scan.width(), tile, stride)?;
    let tiles = layout
        .spans
        .iter()
        .map(|span| SegmentationSample {
            image: extract_hwc(scan.image.view(), span, tile),
            mask: extract_plane(scan.mask.view(), span, tile),
            ignore: scan.ignore.as_ref().map(|ig| extract_plane(ig.view(), span, tile)),
            source: scan.source.clone(),
            origin: (scan.origin.0 + span.y, scan.origin.1 + span.x),
        })
        .collect();
    Ok((tiles, layout))
}

fn check_tiles<T>(tiles: &[Array2<T>], layout: &TileLayout) -> Result<()> {
    if tiles.len() != layout.len() {
        return Err(Error::Dimension(format!(
            "{} tiles supplied for a layout of {}",
            tiles.len(),
            layout.len()
        )));
    }
    if let Some(t) = tiles.iter().find(|t| t.dim() != (layout.tile, layout.tile)) {
        return Err(Error::Dimension(format!("tile of shape {:?}, expected {}", t.dim(), layout.tile)));
    }
    Ok(())
}

/// Place each tile's valid region back into a scan-sized plane. Later tiles
/// overwrite earlier ones where strides overlap.
pub fn stitch<T: Clone + Default>(tiles: &[Array2<T>], layout: &TileLayout) -> Result<Array2<T>> {
    check_tiles(tiles, layout)?;
    let mut out = Array2::from_elem((layout.scan_h, layout.scan_w), T::default());
    for (t, span) in tiles.iter().zip(&layout.spans) {
        out.slice_mut(s![span.y..span.y + span.valid_h, span.x..span.x + span.valid_w])
            .assign(&t.slice(s![..span.valid_h, ..span.valid_w]));
    }
    Ok(out)
}

/// Average overlapping tile values; for overlapped strides.
pub fn stitch_average(tiles: &[Array2<f32>], layout: &TileLayout) -> Result<Array2<f32>> {
    check_tiles(tiles, layout)?;
    let mut sum = Array2::<f32>::zeros((layout.scan_h, layout.scan_w));
    let mut count = Array2::<f32>::zeros((layout.scan_h, layout.scan_w));
    for (t, span) in tiles.iter().zip(&layout.spans) {
        let region = s![span.y..span.y + span.valid_h, span.x..span.x + span.valid_w];
        sum.slice_mut(region)
            .zip_mut_with(&t.slice(s![..span.valid_h, ..span.valid_w]), |a, &b| *a += b);
        count.slice_mut(region).mapv_inplace(|c| c + 1.0);
    }
    Ok(sum / count)
}

/// Stitch binary masks by direct placement.
pub fn stitch_masks(tiles: &[Mask], layout: &TileLayout) -> Result<Mask> {
    stitch(tiles, layout)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scan(h: usize, w: usize) -> SegmentationSample {
        let image = Array3::from_shape_fn((h, w, 3), |(y, x, c)| ((y * 31 + x * 17 + c) % 251) as f32 / 250.0);
        let mask = Mask::from_shape_fn((h, w), |(y, x)| (y * 7 + x * 3) % 5 == 0);
        SegmentationSample::new(image, mask, None, "scan").unwrap()
    }

    #[test]
    fn exact_cover_896() {
        let layout = TileLayout::new(896, 896, 448, 448).unwrap();
        assert_eq!(layout.len(), 4);
        assert!(layout.spans.iter().all(|s| s.valid_h == 448 && s.valid_w == 448));
    }

    #[test]
    fn remainder_bookkeeping_500() {
        let layout = TileLayout::new(500, 500, 448, 448).unwrap();
        assert_eq!(layout.len(), 4);
        let last = layout.spans[3];
        assert_eq!((last.y, last.x), (448, 448));
        assert_eq!((last.valid_h, last.valid_w), (52, 52));
        assert_eq!(448 - last.valid_h, 396);
    }

    #[test]
    fn small_scan_yields_single_padded_tile() {
        let s = scan(10, 7);
        let (tiles, layout) = tile_image(&s, 16, 16).unwrap();
        assert_eq!(tiles.len(), 1);
        assert_eq!(tiles[0].mask.dim(), (16, 16));
        assert_eq!(stitch_masks(&[tiles[0].mask.clone()], &layout).unwrap(), s.mask);
    }

    #[test]
    fn reflection_does_not_repeat_edge() {
        let v: Vec<usize> = (0..8).map(|i| reflect_index(i, 4)).collect();
        assert_eq!(v, vec![0, 1, 2, 3, 2, 1, 0, 1]);
    }

    #[test]
    fn overlapping_average_of_identical_tiles_is_exact() {
        let s = scan(40, 33);
        let plane = s.image.slice(s![.., .., 0]).to_owned();
        let layout = TileLayout::new(40, 33, 16, 8).unwrap();
        let tiles: Vec<_> = layout.spans.iter().map(|sp| extract_plane(plane.view(), sp, 16)).collect();
        let back = stitch_average(&tiles, &layout).unwrap();
        for (a, b) in back.iter().zip(plane.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }
}
