//! Multiresolution bisquare basis functions.
//!
//! Each resolution grids the domain's bounding box into a near-square
//! lattice of centroids and attaches one compactly supported bisquare bump
//! to every centroid: `(1 - (d/a)^2)^2` for distance `d` below the aperture
//! `a`, zero outside. Coarse resolutions capture global structure, finer
//! ones local detail. Evaluating all functions at a set of points yields a
//! sparse matrix because only the few functions whose support circle
//! contains a point contribute.

use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{FrkError, Result};
use crate::grid::{BoundingBox, Grid, Location};
use crate::sparse::RowSparseMatrix;

/// Aperture = 1.5 x the shortest distance between neighboring centers.
/// Yields overlapping but local support.
const APERTURE_SPACING_FACTOR: f64 = 1.5;

/// One resolution: a set of centroids sharing a support radius.
#[derive(Debug, Clone)]
pub struct Resolution {
    centers: Vec<Location>,
    aperture: f64,
}

impl Resolution {
    pub fn new(centers: Vec<Location>, aperture: f64) -> Result<Self> {
        if centers.is_empty() {
            return Err(FrkError::InvalidArgument(
                "resolution needs at least one center".into(),
            ));
        }
        if !(aperture > 0.0 && aperture.is_finite()) {
            return Err(FrkError::InvalidArgument(
                "aperture must be positive and finite".into(),
            ));
        }
        for (i, c) in centers.iter().enumerate() {
            if !c.is_finite() {
                return Err(FrkError::NonFinite(i));
            }
            for (j, other) in centers.iter().enumerate().skip(i + 1) {
                if c == other {
                    return Err(FrkError::DuplicateLocation(i, j));
                }
            }
        }
        Ok(Self { centers, aperture })
    }

    pub fn centers(&self) -> &[Location] {
        &self.centers
    }

    pub fn aperture(&self) -> f64 {
        self.aperture
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

/// Near-square `rows x cols` factorization of `count`, matching the box
/// aspect ratio as closely as possible (cols along width, rows along
/// height). Exact factorizations only; 4 -> 2x2, 12 -> 3x4 on a square box,
/// primes degrade to a single row or column.
fn lattice_shape(count: usize, bbox: &BoundingBox) -> (usize, usize) {
    debug_assert!(count > 0);
    let width = bbox.width().max(f64::MIN_POSITIVE);
    let height = bbox.height().max(f64::MIN_POSITIVE);
    let target = width / height; // desired cols/rows
    let mut best = (1, count);
    let mut best_err = f64::INFINITY;
    for rows in 1..=count {
        if !count.is_multiple_of(rows) {
            continue;
        }
        let cols = count / rows;
        let ratio = cols as f64 / rows as f64;
        let err = (ratio.ln() - target.ln()).abs();
        if err < best_err {
            best_err = err;
            best = (rows, cols);
        }
    }
    best
}

/// Centers at the midpoints of a `rows x cols` partition of the bounding
/// box, row-major, plus the lattice cell size.
pub(crate) fn lattice_centers(
    count: usize,
    bbox: &BoundingBox,
) -> (Vec<Location>, (f64, f64)) {
    let (rows, cols) = lattice_shape(count, bbox);
    let cell_w = bbox.width() / cols as f64;
    let cell_h = bbox.height() / rows as f64;
    let mut centers = Vec::with_capacity(count);
    for j in 0..rows {
        for i in 0..cols {
            centers.push(Location::new(
                bbox.min.x + (i as f64 + 0.5) * cell_w,
                bbox.min.y + (j as f64 + 0.5) * cell_h,
            ));
        }
    }
    (centers, (cell_w, cell_h))
}

/// Lay out one resolution of centroids per requested count over the grid's
/// bounding box, coarse to fine. The aperture of a resolution is 1.5 x the
/// shortest spacing between neighboring centers; a single-center resolution
/// falls back to 1.5 x the longer bounding-box side so its support covers
/// the domain.
pub fn build_multires_centroids(grid: &Grid, counts: &[usize]) -> Result<Vec<Resolution>> {
    if grid.is_empty() {
        return Err(FrkError::EmptyGrid);
    }
    if counts.is_empty() {
        return Err(FrkError::InvalidArgument(
            "at least one resolution count is required".into(),
        ));
    }
    let bbox = grid.bounding_box();
    let mut resolutions = Vec::with_capacity(counts.len());
    for &count in counts {
        if count == 0 {
            return Err(FrkError::InvalidArgument(
                "resolution count must be positive".into(),
            ));
        }
        let (centers, (cell_w, cell_h)) = lattice_centers(count, &bbox);
        let (rows, cols) = lattice_shape(count, &bbox);
        let mut spacing = f64::INFINITY;
        if cols > 1 {
            spacing = spacing.min(cell_w);
        }
        if rows > 1 {
            spacing = spacing.min(cell_h);
        }
        let aperture = if spacing.is_finite() && spacing > 0.0 {
            APERTURE_SPACING_FACTOR * spacing
        } else {
            // Single center or degenerate axis: cover the domain.
            let side = bbox.width().max(bbox.height());
            if side <= 0.0 {
                return Err(FrkError::InvalidArgument(
                    "bounding box is degenerate; cannot derive an aperture".into(),
                ));
            }
            APERTURE_SPACING_FACTOR * side
        };
        resolutions.push(Resolution::new(centers, aperture)?);
    }
    Ok(resolutions)
}

/// Bisquare bump: `(1 - (d/a)^2)^2` on `d < a`, zero otherwise.
#[inline]
pub fn bisquare(distance: f64, aperture: f64) -> f64 {
    if distance < aperture {
        let u = distance / aperture;
        let w = 1.0 - u * u;
        w * w
    } else {
        0.0
    }
}

/// Evaluate all basis functions (resolutions concatenated coarse to fine)
/// at the given points into a `|points| x r` sparse matrix. Exact zeros
/// outside a function's support circle are not stored.
pub fn evaluate_bisquare(resolutions: &[Resolution], points: &[Location]) -> RowSparseMatrix {
    let r: usize = resolutions.iter().map(Resolution::len).sum();
    let mut rows = Vec::with_capacity(points.len());
    for p in points {
        let mut row = Vec::new();
        let mut col0 = 0;
        for res in resolutions {
            for (j, center) in res.centers().iter().enumerate() {
                let v = bisquare(p.distance(center), res.aperture());
                if v > 0.0 {
                    row.push((col0 + j, v));
                }
            }
            col0 += res.len();
        }
        rows.push(row);
    }
    RowSparseMatrix::from_rows(r, rows)
}

/// A multiresolution basis together with its evaluation at a grid.
#[derive(Debug, Clone)]
pub struct BasisSet {
    resolutions: Vec<Resolution>,
    r: usize,
    evaluation: RowSparseMatrix,
}

impl BasisSet {
    /// Lay out lattice centroids for each count and evaluate at the grid's
    /// locations.
    pub fn build(grid: &Grid, counts: &[usize]) -> Result<Self> {
        let resolutions = build_multires_centroids(grid, counts)?;
        Ok(Self::from_resolutions(resolutions, grid))
    }

    /// Wrap externally constructed resolutions, evaluating at the grid.
    pub fn from_resolutions(resolutions: Vec<Resolution>, grid: &Grid) -> Self {
        let evaluation = evaluate_bisquare(&resolutions, grid.locations());
        let r = resolutions.iter().map(Resolution::len).sum();
        Self {
            resolutions,
            r,
            evaluation,
        }
    }

    pub fn resolutions(&self) -> &[Resolution] {
        &self.resolutions
    }

    /// Total basis function count.
    pub fn r(&self) -> usize {
        self.r
    }

    /// The sparse evaluation matrix at the grid the set was built on
    /// (one row per grid location).
    pub fn evaluation(&self) -> &RowSparseMatrix {
        &self.evaluation
    }

    /// Evaluate the basis at arbitrary points.
    pub fn evaluate_at(&self, points: &[Location]) -> RowSparseMatrix {
        evaluate_bisquare(&self.resolutions, points)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn unit_square_grid(n_side: usize) -> Grid {
        let step = 1.0 / (n_side as f64 - 1.0);
        let locs = Grid::lattice_locations(n_side, n_side, step, step);
        let n = locs.len();
        Grid::new(locs, vec![None; n]).unwrap()
    }

    #[test]
    fn two_scale_layout_counts() {
        let grid = unit_square_grid(60);
        let res = build_multires_centroids(&grid, &[4, 25]).unwrap();
        assert_eq!(res.len(), 2);
        assert_eq!(res[0].len(), 4);
        assert_eq!(res[1].len(), 25);
        // Finer resolutions have smaller apertures.
        assert!(res[1].aperture() < res[0].aperture());
    }

    #[test]
    fn single_count_centers_on_bbox_centroid() {
        let grid = unit_square_grid(10);
        let res = build_multires_centroids(&grid, &[1]).unwrap();
        assert_eq!(res[0].len(), 1);
        let c = res[0].centers()[0];
        assert_relative_eq!(c.x, 0.5, epsilon = 1e-12);
        assert_relative_eq!(c.y, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn three_scale_application_config() {
        let step = 1.0;
        let locs = Grid::lattice_locations(300, 300, step, step);
        let n = locs.len();
        let grid = Grid::new(locs, vec![None; n]).unwrap();
        let basis = BasisSet::build(&grid, &[16, 64, 225]).unwrap();
        assert_eq!(basis.r(), 305);
    }

    #[test]
    fn errors_on_empty_grid_and_zero_count() {
        let grid = unit_square_grid(4);
        assert!(matches!(
            build_multires_centroids(&grid, &[0]),
            Err(FrkError::InvalidArgument(_))
        ));
        assert!(matches!(
            build_multires_centroids(&grid, &[]),
            Err(FrkError::InvalidArgument(_))
        ));
    }

    #[test]
    fn bisquare_values() {
        // Point at a center.
        assert_eq!(bisquare(0.0, 2.0), 1.0);
        // At or past the support boundary.
        assert_eq!(bisquare(2.0, 2.0), 0.0);
        assert_eq!(bisquare(2.5, 2.0), 0.0);
        // Half the aperture: (1 - 0.25)^2.
        assert_relative_eq!(bisquare(1.0, 2.0), 0.5625, epsilon = 1e-15);
    }

    #[test]
    fn evaluation_rows_match_direct_formula() {
        let grid = unit_square_grid(7);
        let basis = BasisSet::build(&grid, &[4, 9]).unwrap();
        let pts = [Location::new(0.3, 0.4), Location::new(0.91, 0.07)];
        let z = basis.evaluate_at(&pts);
        assert_eq!(z.nrows(), 2);
        assert_eq!(z.ncols(), 13);
        let dense = z.to_dense();
        for (i, p) in pts.iter().enumerate() {
            let mut col = 0;
            for res in basis.resolutions() {
                for c in res.centers() {
                    assert_relative_eq!(
                        dense[(i, col)],
                        bisquare(p.distance(c), res.aperture()),
                        epsilon = 1e-15
                    );
                    col += 1;
                }
            }
        }
    }

    #[test]
    fn figure_scale_sparsity() {
        // Two-scale configuration on a 60x60 grid: rows must stay far
        // sparser than r = 29.
        let locs = Grid::lattice_locations(60, 60, 1.0, 1.0);
        let n = locs.len();
        let grid = Grid::new(locs, vec![None; n]).unwrap();
        let basis = BasisSet::build(&grid, &[4, 25]).unwrap();
        let z = basis.evaluation();
        let mean_nnz = z.nnz() as f64 / z.nrows() as f64;
        assert!(
            mean_nnz < basis.r() as f64 / 2.0,
            "mean nnz per row {mean_nnz} should be well below r = {}",
            basis.r()
        );
    }

    proptest! {
        // Values lie in [0, 1]; 1 exactly at the center.
        #[test]
        fn bisquare_bounded(d in 0.0..100.0f64, a in 1e-6..100.0f64) {
            let v = bisquare(d, a);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert_eq!(v == 1.0, d == 0.0);
        }

        // Radially non-increasing in the distance.
        #[test]
        fn bisquare_monotone(d1 in 0.0..10.0f64, d2 in 0.0..10.0f64, a in 0.1..10.0f64) {
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            prop_assert!(bisquare(lo, a) >= bisquare(hi, a));
        }

        // Support is local: zero at and beyond the aperture.
        #[test]
        fn bisquare_local_support(extra in 0.0..10.0f64, a in 0.1..10.0f64) {
            prop_assert_eq!(bisquare(a + extra, a), 0.0);
        }
    }
}
