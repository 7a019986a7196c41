use serde::{Deserialize, Serialize};

use crate::error::{invalid, CoreError, Result};

/// Georeferencing of a north-up grid. Cell `(row, col)` covers
/// `x ∈ [origin_x + col·ps, origin_x + (col+1)·ps]`,
/// `y ∈ [origin_y − (row+1)·ps, origin_y − row·ps]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size: f64,
}

impl Grid {
    pub fn new(width: usize, height: usize, origin_x: f64, origin_y: f64, pixel_size: f64) -> Result<Self> {
        if !(pixel_size > 0.0 && pixel_size.is_finite()) {
            return invalid("Grid::new", format!("pixel_size must be > 0, got {pixel_size}"));
        }
        if !origin_x.is_finite() || !origin_y.is_finite() {
            return invalid("Grid::new", "origin must be finite");
        }
        Ok(Self {
            width,
            height,
            origin_x,
            origin_y,
            pixel_size,
        })
    }

    /// Unit pixels with the top-left corner at the map origin.
    pub fn pixels(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            origin_x: 0.0,
            origin_y: 0.0,
            pixel_size: 1.0,
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.pixel_size,
            self.origin_y - (row as f64 + 0.5) * self.pixel_size,
        )
    }

    /// Map coordinates of grid vertex `(row, col)`.
    pub fn vertex(&self, row: i64, col: i64) -> (f64, f64) {
        (
            self.origin_x + col as f64 * self.pixel_size,
            self.origin_y - row as f64 * self.pixel_size,
        )
    }

    /// Cell containing a map point, if inside.
    pub fn locate(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let c = ((x - self.origin_x) / self.pixel_size).floor();
        let r = ((self.origin_y - y) / self.pixel_size).floor();
        if c >= 0.0 && r >= 0.0 && (c as usize) < self.width && (r as usize) < self.height {
            Some((r as usize, c as usize))
        } else {
            None
        }
    }

    /// A sub-window of `height × width` cells starting at `(row, col)`.
    pub fn window(&self, row: usize, col: usize, height: usize, width: usize) -> Grid {
        let (x, y) = self.vertex(row as i64, col as i64);
        Grid {
            width,
            height,
            origin_x: x,
            origin_y: y,
            pixel_size: self.pixel_size,
        }
    }
}

/// Row-major grid of cells. `f32` for continuous layers, `u16` for
/// categories, `u32` for component or parcel ids, `[u8; 3]` for imagery.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster<T> {
    grid: Grid,
    nodata: Option<T>,
    cells: Vec<T>,
}

/// Categorical raster; masks hold only 0 and 1.
pub type LabelRaster = Raster<u16>;
pub type Mask = Raster<u16>;
pub type FloatRaster = Raster<f32>;
pub type RgbRaster = Raster<[u8; 3]>;

impl<T: Copy> Raster<T> {
    pub fn new(grid: Grid, cells: Vec<T>) -> Result<Self> {
        if cells.len() != grid.len() {
            return invalid(
                "Raster::new",
                format!("{}×{} grid needs {} cells, got {}", grid.width, grid.height, grid.len(), cells.len()),
            );
        }
        if !(grid.pixel_size > 0.0) {
            return invalid("Raster::new", "pixel_size must be > 0");
        }
        Ok(Self {
            grid,
            nodata: None,
            cells,
        })
    }

    pub fn filled(grid: Grid, value: T) -> Self {
        Self {
            grid,
            nodata: None,
            cells: vec![value; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut cells = Vec::with_capacity(grid.len());
        for r in 0..grid.height {
            for c in 0..grid.width {
                cells.push(f(r, c));
            }
        }
        Self {
            grid,
            nodata: None,
            cells,
        }
    }

    pub fn with_nodata(mut self, nodata: Option<T>) -> Self {
        self.nodata = nodata;
        self
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn width(&self) -> usize {
        self.grid.width
    }

    pub fn height(&self) -> usize {
        self.grid.height
    }

    pub fn nodata(&self) -> Option<T> {
        self.nodata
    }

    pub fn cells(&self) -> &[T] {
        &self.cells
    }

    pub fn cells_mut(&mut self) -> &mut [T] {
        &mut self.cells
    }

    pub fn into_cells(self) -> Vec<T> {
        self.cells
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> T {
        self.cells[row * self.grid.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: T) {
        let w = self.grid.width;
        self.cells[row * w + col] = v;
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Raster<U> {
        Raster {
            grid: self.grid,
            nodata: self.nodata.map(&f),
            cells: self.cells.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_aligned<U>(&self, other: &Raster<U>) -> bool {
        self.grid == other.grid
    }

    pub fn ensure_aligned<U>(&self, other: &Raster<U>, op: &'static str) -> Result<()> {
        if self.is_aligned(other) {
            Ok(())
        } else {
            Err(CoreError::Misaligned { op })
        }
    }

    /// Copy of a `height × width` window starting at `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<Self> {
        if row + height > self.height() || col + width > self.width() {
            return invalid("Raster::crop", "window exceeds raster");
        }
        let grid = self.grid.window(row, col, height, width);
        let mut cells = Vec::with_capacity(height * width);
        for r in row..row + height {
            let start = r * self.width() + col;
            cells.extend_from_slice(&self.cells[start..start + width]);
        }
        Ok(Self {
            grid,
            nodata: self.nodata,
            cells,
        })
    }

    /// Write `tile` into this raster at `(row, col)`.
    pub fn paste(&mut self, tile: &Raster<T>, row: usize, col: usize) -> Result<()> {
        if row + tile.height() > self.height() || col + tile.width() > self.width() {
            return invalid("Raster::paste", "tile exceeds raster");
        }
        let w = self.width();
        for r in 0..tile.height() {
            let dst = (row + r) * w + col;
            self.cells[dst..dst + tile.width()]
                .copy_from_slice(&tile.cells[r * tile.width()..(r + 1) * tile.width()]);
        }
        Ok(())
    }
}

impl Raster<u16> {
    /// Number of 1-cells in a mask (any nonzero cell counts).
    pub fn count_nonzero(&self) -> usize {
        self.cells.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_binary(&self) -> bool {
        self.cells.iter().all(|&v| v <= 1)
    }
}

/// Nearest-neighbour resampling of `src` onto `target` by cell centre.
/// Cells whose centre falls outside `src` get `fill`.
pub fn resample_nearest<T: Copy>(src: &Raster<T>, target: Grid, fill: T) -> Raster<T> {
    let mut out = Raster::from_fn(target, |r, c| {
        let (x, y) = target.cell_center(r, c);
        match src.grid.locate(x, y) {
            Some((sr, sc)) => src.get(sr, sc),
            None => fill,
        }
    });
    out.nodata = src.nodata;
    out
}
