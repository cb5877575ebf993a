//! Spatial grids: planar locations with optionally observed values.

use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::error::{FrkError, Result};

/// A planar location. Distances are Euclidean; the library treats
/// coordinates (degrees or abstract grid units) as flat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Location {
    pub x: f64,
    pub y: f64,
}

impl Location {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Location) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        (dx * dx + dy * dy).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// Axis-aligned bounding box of a set of locations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub min: Location,
    pub max: Location,
}

impl BoundingBox {
    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn center(&self) -> Location {
        Location::new(
            0.5 * (self.min.x + self.max.x),
            0.5 * (self.min.y + self.max.y),
        )
    }
}

/// An ordered set of distinct locations, each either observed (carrying a
/// finite value) or missing. The observation mask is implied by
/// `values[i].is_some()`, which makes "values present wherever the mask is
/// true" hold by construction.
#[derive(Debug, Clone)]
pub struct Grid {
    locations: Vec<Location>,
    values: Vec<Option<f64>>,
}

impl Grid {
    /// Build a grid, validating finiteness, matching lengths, and
    /// distinctness of the locations.
    pub fn new(locations: Vec<Location>, values: Vec<Option<f64>>) -> Result<Self> {
        if locations.is_empty() {
            return Err(FrkError::EmptyGrid);
        }
        if locations.len() != values.len() {
            return Err(FrkError::DimensionMismatch {
                what: "grid values",
                expected: locations.len(),
                got: values.len(),
            });
        }
        for (i, loc) in locations.iter().enumerate() {
            if !loc.is_finite() {
                return Err(FrkError::NonFinite(i));
            }
            if let Some(v) = values[i] {
                if !v.is_finite() {
                    return Err(FrkError::NonFinite(i));
                }
            }
        }
        // Duplicate detection by sorting index views; exact coordinate
        // equality is the contract.
        let mut order: Vec<usize> = (0..locations.len()).collect();
        order.sort_unstable_by(|&a, &b| {
            locations[a]
                .x
                .total_cmp(&locations[b].x)
                .then(locations[a].y.total_cmp(&locations[b].y))
        });
        for pair in order.windows(2) {
            if locations[pair[0]] == locations[pair[1]] {
                return Err(FrkError::DuplicateLocation(pair[0], pair[1]));
            }
        }
        Ok(Self { locations, values })
    }

    /// Fully observed grid from parallel location/value vectors.
    pub fn fully_observed(locations: Vec<Location>, values: Vec<f64>) -> Result<Self> {
        let values = values.into_iter().map(Some).collect();
        Self::new(locations, values)
    }

    /// Number of locations (observed or not).
    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn location(&self, i: usize) -> Location {
        self.locations[i]
    }

    /// Value at row `i`, `None` if missing.
    pub fn value(&self, i: usize) -> Option<f64> {
        self.values[i]
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn is_observed(&self, i: usize) -> bool {
        self.values[i].is_some()
    }

    pub fn n_observed(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    /// Indices of observed rows, in grid order.
    pub fn observed_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_observed(i)).collect()
    }

    /// Observed values in grid order.
    pub fn observed_values(&self) -> Vec<f64> {
        self.values.iter().filter_map(|v| *v).collect()
    }

    /// Copy of the grid with the given rows masked out (set to missing).
    /// Used by holdout cross-validation.
    pub fn with_masked(&self, rows: &[usize]) -> Grid {
        let mut values = self.values.clone();
        for &i in rows {
            values[i] = None;
        }
        Grid {
            locations: self.locations.clone(),
            values,
        }
    }

    pub fn bounding_box(&self) -> BoundingBox {
        let mut min = self.locations[0];
        let mut max = self.locations[0];
        for loc in &self.locations {
            min.x = min.x.min(loc.x);
            min.y = min.y.min(loc.y);
            max.x = max.x.max(loc.x);
            max.y = max.y.max(loc.y);
        }
        BoundingBox { min, max }
    }

    /// Locations laid out on a regular `nx x ny` lattice with spacing
    /// `(dx, dy)` starting at the origin, row-major (y varies slowest).
    pub fn lattice_locations(nx: usize, ny: usize, dx: f64, dy: f64) -> Vec<Location> {
        let mut out = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                out.push(Location::new(i as f64 * dx, j as f64 * dy));
            }
        }
        out
    }
}
