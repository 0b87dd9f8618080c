//! Map geometry, photon events, pixel grids and the hyperparameter bundle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::num::Real;

/// Analysed sky patch and energy range. Coordinates in degrees, energies in GeV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapBounds<T = f64> {
    pub x_min: T,
    pub x_max: T,
    pub y_min: T,
    pub y_max: T,
    pub e_min: T,
    pub e_max: T,
}

impl<T: Real> MapBounds<T> {
    pub fn new(x_min: T, x_max: T, y_min: T, y_max: T, e_min: T, e_max: T) -> Result<Self> {
        let b = MapBounds { x_min, x_max, y_min, y_max, e_min, e_max };
        b.validate()?;
        Ok(b)
    }

    /// Square patch of half-width `half` centred on the origin.
    pub fn square(half: T, e_min: T, e_max: T) -> Result<Self> {
        Self::new(-half, half, -half, half, e_min, e_max)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.x_min < self.x_max
            && self.y_min < self.y_max
            && self.e_min > T::zero()
            && self.e_min < self.e_max;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "map bounds need x_min < x_max, y_min < y_max, 0 < e_min < e_max: {self:?}"
            )))
        }
    }

    #[inline]
    pub fn contains(&self, x: T, y: T) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }

    #[inline]
    pub fn width(&self) -> T {
        self.x_max - self.x_min
    }

    #[inline]
    pub fn height(&self) -> T {
        self.y_max - self.y_min
    }

    #[inline]
    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn x_axis(&self) -> (T, T) {
        (self.x_min, self.x_max)
    }

    pub fn y_axis(&self) -> (T, T) {
        (self.y_min, self.y_max)
    }
}

/// One detected photon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotonEvent<T = f64> {
    pub x: T,
    pub y: T,
    pub energy: T,
}

impl<T: Real> PhotonEvent<T> {
    pub fn new(x: T, y: T, energy: T) -> Self {
        PhotonEvent { x, y, energy }
    }

    /// Check the event against the map; `index` is only used in the error.
    pub fn check(&self, bounds: &MapBounds<T>, index: usize) -> Result<()> {
        if !self.x.is_finite() || !self.y.is_finite() || !self.energy.is_finite() {
            return Err(Error::OutOfBounds { index, msg: "non-finite field".into() });
        }
        if !bounds.contains(self.x, self.y) {
            return Err(Error::OutOfBounds {
                index,
                msg: format!("position ({}, {}) outside map", self.x, self.y),
            });
        }
        if self.energy < bounds.e_min {
            return Err(Error::OutOfBounds {
                index,
                msg: format!("energy {} below e_min {}", self.energy, bounds.e_min),
            });
        }
        Ok(())
    }
}

/// Pixelisation of a map: square pixels of side `pixel_size` degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub bounds: MapBounds<f64>,
    pub pixel_size: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn new(bounds: MapBounds<f64>, pixel_size: f64) -> Result<Self> {
        bounds.validate()?;
        if !(pixel_size > 0.0) {
            return Err(Error::InvalidArgument(format!("pixel size must be positive, got {pixel_size}")));
        }
        let nx = (bounds.width() / pixel_size).round() as usize;
        let ny = (bounds.height() / pixel_size).round() as usize;
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidArgument("pixel size larger than the map".into()));
        }
        Ok(GridSpec { bounds, pixel_size, nx, ny })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Column of `x`: bins are `[lo, hi)`, the right map edge falls in the last column.
    #[inline]
    pub fn col(&self, x: f64) -> usize {
        axis_bin(x, self.bounds.x_min, self.pixel_size, self.nx)
    }

    #[inline]
    pub fn row(&self, y: f64) -> usize {
        axis_bin(y, self.bounds.y_min, self.pixel_size, self.ny)
    }

    /// Row-major cell index (rows run from `y_min` upward).
    #[inline]
    pub fn cell(&self, x: f64, y: f64) -> usize {
        self.row(y) * self.nx + self.col(x)
    }

    #[inline]
    pub fn cell_xy(&self, index: usize) -> (usize, usize) {
        (index % self.nx, index / self.nx)
    }

    #[inline]
    pub fn center(&self, col: usize, row: usize) -> (f64, f64) {
        (
            self.bounds.x_min + (col as f64 + 0.5) * self.pixel_size,
            self.bounds.y_min + (row as f64 + 0.5) * self.pixel_size,
        )
    }

    #[inline]
    pub fn pixel_area(&self) -> f64 {
        self.pixel_size * self.pixel_size
    }

    /// Indices of the (up to 8) neighbours of a cell.
    pub fn neighbours(&self, index: usize) -> impl Iterator<Item = usize> + '_ {
        let (c, r) = self.cell_xy(index);
        let (c, r) = (c as isize, r as isize);
        (-1isize..=1)
            .flat_map(move |dr| (-1isize..=1).map(move |dc| (dc, dr)))
            .filter(|&(dc, dr)| dc != 0 || dr != 0)
            .filter_map(move |(dc, dr)| {
                let (cc, rr) = (c + dc, r + dr);
                (cc >= 0 && rr >= 0 && (cc as usize) < self.nx && (rr as usize) < self.ny)
                    .then(|| rr as usize * self.nx + cc as usize)
            })
    }
}

#[inline]
fn axis_bin(v: f64, lo: f64, step: f64, n: usize) -> usize {
    let k = ((v - lo) / step).floor();
    if k < 0.0 {
        0
    } else {
        (k as usize).min(n - 1)
    }
}

/// Values on a pixel grid, row-major from `y_min` upward.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<V> {
    pub spec: GridSpec,
    pub values: Vec<V>,
}

/// Integer counts per pixel.
pub type PixelGrid = Grid<u64>;

impl<V: Clone + Default> Grid<V> {
    pub fn zeros(spec: GridSpec) -> Self {
        Grid { values: vec![V::default(); spec.len()], spec }
    }
}

impl<V: Copy> Grid<V> {
    #[inline]
    pub fn get(&self, col: usize, row: usize) -> V {
        self.values[row * self.spec.nx + col]
    }
}

impl PixelGrid {
    pub fn total(&self) -> u64 {
        self.values.iter().sum()
    }
}

/// Count events per pixel. Every in-bounds event lands in exactly one pixel.
pub fn bin_events(events: &[PhotonEvent<f64>], spec: &GridSpec) -> Result<PixelGrid> {
    let mut grid = PixelGrid::zeros(*spec);
    for (i, e) in events.iter().enumerate() {
        if !spec.bounds.contains(e.x, e.y) {
            return Err(Error::OutOfBounds { index: i, msg: format!("position ({}, {}) outside map", e.x, e.y) });
        }
        grid.values[spec.cell(e.x, e.y)] += 1;
    }
    Ok(grid)
}

/// Model hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Symmetric Beta prior on the source fraction.
    pub lambda: f64,
    pub alpha_s: f64,
    pub alpha_b: f64,
    pub a_eta_s: f64,
    pub b_eta_s: f64,
    pub a_eta_b: f64,
    pub b_eta_b: f64,
    /// Smoothness floors on the background kernel standard deviation (degrees).
    pub c_ell: f64,
    pub c_b: f64,
    /// Auxiliary parameter draws per level.
    pub h_s: usize,
    pub h_b: usize,
    /// Variance of the random-walk proposal for source locations (deg^2).
    pub prop_sd2: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            lambda: 1.0,
            alpha_s: 2.0,
            alpha_b: 1.5,
            a_eta_s: 3.196,
            b_eta_s: 2.196,
            a_eta_b: 1.79,
            b_eta_b: 0.714,
            c_ell: 1.0,
            c_b: 1.0,
            h_s: 5,
            h_b: 5,
            prop_sd2: 0.001,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        let reals = [
            ("lambda", self.lambda),
            ("alpha_s", self.alpha_s),
            ("alpha_b", self.alpha_b),
            ("a_eta_s", self.a_eta_s),
            ("b_eta_s", self.b_eta_s),
            ("a_eta_b", self.a_eta_b),
            ("b_eta_b", self.b_eta_b),
            ("c_ell", self.c_ell),
            ("c_b", self.c_b),
            ("prop_sd2", self.prop_sd2),
        ];
        for (name, v) in reals {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.h_s == 0 || self.h_b == 0 {
            return Err(Error::InvalidArgument("h_s and h_b must be at least 1".into()));
        }
        Ok(())
    }
}
