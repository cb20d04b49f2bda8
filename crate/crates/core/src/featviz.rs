//! PCA of patch features rendered as RGB.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Array3, ArrayView2, Axis};

use crate::encoder::FeatureGrid;
use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaBasis {
    pub mean: Array1<f64>,
    /// `k x D`, orthonormal rows.
    pub components: Array2<f64>,
    /// Eigenvalues of the sample covariance, nonincreasing.
    pub explained_variance: Vec<f64>,
}

/// Top-`k` principal directions of `features` (`N x D`).
///
/// Each component is signed so that its largest-magnitude coefficient is positive.
pub fn pca_fit(features: ArrayView2<f64>, k: usize) -> Result<PcaBasis> {
    let (n, d) = features.dim();
    if k == 0 || n < k || d < k {
        return Err(Error::Dimension(format!("PCA with k = {k} needs at least k rows and columns, got {n}x{d}")));
    }
    let mean = features.mean_axis(Axis(0)).unwrap();
    let centred = &features - &mean;
    let denom = (n.max(2) - 1) as f64;
    let cov = centred.t().dot(&centred) / denom;
    let total: f64 = cov.diag().sum();
    let scale: f64 = features.iter().map(|v| v * v).sum::<f64>() / (n * d) as f64;
    if total <= 1e-24 * scale.max(f64::MIN_POSITIVE) {
        return Err(Error::Degenerate("features have zero variance".into()));
    }
    let m = DMatrix::from_fn(d, d, |i, j| cov[[i, j]]);
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut components = Array2::zeros((k, d));
    let mut explained_variance = Vec::with_capacity(k);
    for (row, &idx) in order.iter().take(k).enumerate() {
        let v = eig.eigenvectors.column(idx);
        let pivot = (0..d)
            .max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs()).then(b.cmp(&a)))
            .unwrap();
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            components[[row, j]] = sign * v[j];
        }
        explained_variance.push(eig.eigenvalues[idx].max(0.0));
    }
    Ok(PcaBasis {
        mean,
        components,
        explained_variance,
    })
}

impl PcaBasis {
    pub fn depth(&self) -> usize {
        self.mean.len()
    }

    /// Coordinates of `rows` (`N x D`) in the basis (`N x k`).
    pub fn project(&self, rows: ArrayView2<f64>) -> Result<Array2<f64>> {
        if rows.ncols() != self.depth() {
            return Err(Error::Dimension(format!(
                "features have depth {}, basis expects {}",
                rows.ncols(),
                self.depth()
            )));
        }
        Ok((&rows - &self.mean).dot(&self.components.t()))
    }
}

fn grid_rows<F: Real>(grid: &FeatureGrid<F>) -> Array2<f64> {
    grid.as_rows().mapv(|v| v.to_f64_lossy())
}

/// Fit a three-component basis to one feature grid.
pub fn fit_grid<F: Real>(grid: &FeatureGrid<F>) -> Result<PcaBasis> {
    pca_fit(grid_rows(grid).view(), 3)
}

/// `H' x W' x 3` image in `[0, 1]`; each channel is min-max normalised and a
/// constant channel becomes 0.5.
pub fn project_to_rgb<F: Real>(grid: &FeatureGrid<F>, basis: &PcaBasis) -> Result<Array3<f32>> {
    let (gh, gw, _) = grid.dim();
    let mut proj = basis.project(grid_rows(grid).view())?;
    let k = proj.ncols();
    for mut col in proj.columns_mut() {
        let lo = col.fold(f64::INFINITY, |a, &b| a.min(b));
        let hi = col.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let span = hi - lo;
        if span <= 1e-12 * hi.abs().max(lo.abs()).max(1e-300) {
            col.fill(0.5);
        } else {
            col.mapv_inplace(|v| (v - lo) / span);
        }
    }
    let mut rgb = Array3::<f32>::from_elem((gh, gw, 3), 0.5);
    for (r, row) in proj.rows().into_iter().enumerate() {
        for c in 0..k.min(3) {
            rgb[[r / gw, r % gw, c]] = row[c] as f32;
        }
    }
    Ok(rgb)
}

/// Nearest-neighbour upsampling so each patch stays a crisp block.
pub fn upsample_nearest(rgb: &Array3<f32>, h: usize, w: usize) -> Array3<f32> {
    let (gh, gw, c) = rgb.dim();
    Array3::from_shape_fn((h, w, c), |(y, x, k)| rgb[[(y * gh / h).min(gh - 1), (x * gw / w).min(gw - 1), k]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn line_data() {
        let x = Array2::from_shape_fn((20, 3), |(i, j)| (i as f64 - 7.0) * [1.0, -2.0, 2.0][j] / 3.0);
        let b = pca_fit(x.view(), 3).unwrap();
        let c0 = b.components.row(0);
        assert!((c0[1] + 2.0 / 3.0).abs() < 1e-9, "{c0}");
        assert!(b.explained_variance[1].abs() < 1e-9);
    }

    #[test]
    fn zero_variance_rejected() {
        let x = Array2::from_elem((5, 4), 3.0);
        assert!(matches!(pca_fit(x.view(), 3), Err(Error::Degenerate(_))));
    }

    #[test]
    fn two_clusters_give_two_colours() {
        let mut g = Array3::<f64>::zeros((2, 2, 4));
        for (i, v) in [[1.0, 0.0, 2.0, 0.5], [1.0, 0.0, 2.0, 0.5], [-1.0, 3.0, 0.0, 0.5], [-1.0, 3.0, 0.0, 0.5]]
            .iter()
            .enumerate()
        {
            for k in 0..4 {
                g[[i / 2, i % 2, k]] = v[k];
            }
        }
        let grid = FeatureGrid::new(g);
        let b = pca_fit(grid_rows(&grid).view(), 1).unwrap();
        let rgb = project_to_rgb(&grid, &b).unwrap();
        assert_eq!(rgb.dim(), (2, 2, 3));
        assert_ne!(rgb[[0, 0, 0]], rgb[[1, 0, 0]]);
        assert_eq!(rgb[[0, 0, 0]], rgb[[0, 1, 0]]);
    }

    #[test]
    fn nearest_upsampling_blocks() {
        let rgb = array![[[0.0f32], [1.0]]];
        let up = upsample_nearest(&rgb, 1, 4);
        assert_eq!(up.iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 1.0, 1.0]);
    }
}
