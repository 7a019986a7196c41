//! Raster and vector primitives, agricultural scene division, parcel
//! extraction, semantic change map assembly and accuracy metrics.

pub mod assembly;
mod error;
pub mod geom;
pub mod io;
pub mod metrics;
pub mod morph;
pub mod parcel;
pub mod raster;
pub mod scene;

pub use error::{CoreError, Result};
pub use geom::{polygon_area, polygonize, rasterize, simplify_polygon, Polygon, PolygonSet};
pub use morph::{connected_components, dilate, skeletonize, slope_from_dem, Connectivity};
pub use raster::{FloatRaster, Grid, LabelRaster, Mask, Raster, RgbRaster};
