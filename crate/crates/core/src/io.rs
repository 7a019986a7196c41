//! PGR rasters, PNG imagery and GeoJSON polygons.
//!
//! A PGR raster is a little-endian row-major payload file `name.pgr` with a
//! JSON header next to it at `name.pgr.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{CoreError, Result};
use crate::geom::{Point, Polygon, PolygonSet, Ring};
use crate::raster::{Grid, Raster, RgbRaster};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PgrHeader {
    pub width: usize,
    pub height: usize,
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size: f64,
    pub dtype: String,
    pub nodata: Option<f64>,
}

pub trait PgrCell: Copy {
    const DTYPE: &'static str;
    const SIZE: usize;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
    fn to_f64(self) -> f64;
    fn from_f64(v: f64) -> Self;
}

impl PgrCell for f32 {
    const DTYPE: &'static str = "f32";
    const SIZE: usize = 4;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(b: &[u8]) -> Self {
        f32::from_le_bytes([b[0], b[1], b[2], b[3]])
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v as f32
    }
}

impl PgrCell for u16 {
    const DTYPE: &'static str = "u16";
    const SIZE: usize = 2;
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn read_le(b: &[u8]) -> Self {
        u16::from_le_bytes([b[0], b[1]])
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn from_f64(v: f64) -> Self {
        v as u16
    }
}

pub fn pgr_header_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_pgr<T: PgrCell>(raster: &Raster<T>, path: &Path) -> Result<()> {
    let g = raster.grid();
    let header = PgrHeader {
        width: g.width,
        height: g.height,
        origin_x: g.origin_x,
        origin_y: g.origin_y,
        pixel_size: g.pixel_size,
        dtype: T::DTYPE.into(),
        nodata: raster.nodata().map(T::to_f64),
    };
    let mut payload = Vec::with_capacity(raster.cells().len() * T::SIZE);
    for &v in raster.cells() {
        v.write_le(&mut payload);
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, payload)?;
    fs::write(pgr_header_path(path), serde_json::to_string_pretty(&header)?)?;
    Ok(())
}

pub fn read_pgr<T: PgrCell>(path: &Path) -> Result<Raster<T>> {
    let header: PgrHeader = serde_json::from_slice(&fs::read(pgr_header_path(path))?)?;
    if header.dtype != T::DTYPE {
        return Err(CoreError::Format(format!(
            "{}: dtype {} where {} was expected",
            path.display(),
            header.dtype,
            T::DTYPE
        )));
    }
    let grid = Grid::new(header.width, header.height, header.origin_x, header.origin_y, header.pixel_size)?;
    let bytes = fs::read(path)?;
    if bytes.len() != grid.len() * T::SIZE {
        return Err(CoreError::Format(format!(
            "{}: payload has {} bytes, header implies {}",
            path.display(),
            bytes.len(),
            grid.len() * T::SIZE
        )));
    }
    let cells = bytes.chunks_exact(T::SIZE).map(T::read_le).collect();
    Ok(Raster::new(grid, cells)?.with_nodata(header.nodata.map(T::from_f64)))
}

/// Write imagery as 8-bit RGB PNG. Georeferencing is not stored.
pub fn write_png(raster: &RgbRaster, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(raster.cells().len() * 3);
    for px in raster.cells() {
        buf.extend_from_slice(px);
    }
    let img = image::RgbImage::from_raw(raster.width() as u32, raster.height() as u32, buf)
        .ok_or_else(|| CoreError::Format("image buffer size".into()))?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Read a PNG as RGB onto `grid`, or onto unit pixels when `grid` is `None`.
pub fn read_png(path: &Path, grid: Option<Grid>) -> Result<RgbRaster> {
    let img = image::open(path)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let grid = grid.unwrap_or_else(|| Grid::pixels(w, h));
    if grid.width != w || grid.height != h {
        return Err(CoreError::Format(format!(
            "{}: image is {w}×{h}, frame is {}×{}",
            path.display(),
            grid.width,
            grid.height
        )));
    }
    Raster::new(grid, img.pixels().map(|p| p.0).collect())
}

fn ring_json(ring: &Ring) -> Value {
    Value::Array(ring.iter().map(|p| json!([p[0], p[1]])).collect())
}

pub fn polygons_to_geojson(set: &PolygonSet) -> Value {
    let features: Vec<Value> = set
        .iter()
        .map(|p| {
            let mut props = p.props.clone();
            props.insert("label".into(), json!(p.label));
            let rings: Vec<Value> = std::iter::once(&p.exterior).chain(&p.holes).map(ring_json).collect();
            json!({
                "type": "Feature",
                "properties": props,
                "geometry": {"type": "Polygon", "coordinates": rings},
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

fn parse_point(v: &Value) -> Result<Point> {
    match v.as_array().map(Vec::as_slice) {
        Some([x, y, ..]) => match (x.as_f64(), y.as_f64()) {
            (Some(x), Some(y)) => Ok([x, y]),
            _ => Err(CoreError::Format("coordinate is not numeric".into())),
        },
        _ => Err(CoreError::Format("coordinate must be [x, y]".into())),
    }
}

fn parse_line(v: &Value) -> Result<Vec<Point>> {
    v.as_array()
        .ok_or_else(|| CoreError::Format("expected a coordinate array".into()))?
        .iter()
        .map(parse_point)
        .collect()
}

fn parse_polygon(coords: &Value, label: u32, props: &Map<String, Value>) -> Result<Polygon> {
    let rings = coords
        .as_array()
        .ok_or_else(|| CoreError::Format("polygon coordinates must be an array".into()))?;
    let mut rings = rings.iter().map(parse_line).collect::<Result<Vec<_>>>()?;
    if rings.is_empty() {
        return Err(CoreError::Geometry("polygon without rings".into()));
    }
    let exterior = rings.remove(0);
    let mut p = Polygon {
        exterior,
        holes: rings,
        label,
        props: props.clone(),
    };
    p.orient();
    p.validate()?;
    Ok(p)
}

/// Vector layers read from a FeatureCollection: polygons and polylines.
#[derive(Clone, Debug, Default)]
pub struct VectorLayer {
    pub polygons: PolygonSet,
    pub lines: Vec<Vec<Point>>,
}

pub fn geojson_to_layer(doc: &Value) -> Result<VectorLayer> {
    let features = match doc.get("type").and_then(Value::as_str) {
        Some("FeatureCollection") => doc["features"]
            .as_array()
            .ok_or_else(|| CoreError::Format("features must be an array".into()))?
            .clone(),
        Some("Feature") => vec![doc.clone()],
        _ => return Err(CoreError::Format("expected a GeoJSON FeatureCollection".into())),
    };
    let mut layer = VectorLayer::default();
    for f in &features {
        let mut props = f.get("properties").and_then(Value::as_object).cloned().unwrap_or_default();
        let label = match props.remove("label") {
            Some(v) => v
                .as_u64()
                .and_then(|v| u32::try_from(v).ok())
                .ok_or_else(|| CoreError::Format("label must be a non-negative integer".into()))?,
            None => 1,
        };
        let geom = &f["geometry"];
        let coords = &geom["coordinates"];
        match geom.get("type").and_then(Value::as_str) {
            Some("Polygon") => layer.polygons.polygons.push(parse_polygon(coords, label, &props)?),
            Some("MultiPolygon") => {
                for part in coords.as_array().into_iter().flatten() {
                    layer.polygons.polygons.push(parse_polygon(part, label, &props)?);
                }
            }
            Some("LineString") => layer.lines.push(parse_line(coords)?),
            Some("MultiLineString") => {
                for part in coords.as_array().into_iter().flatten() {
                    layer.lines.push(parse_line(part)?);
                }
            }
            Some(other) => return Err(CoreError::Format(format!("unsupported geometry type {other}"))),
            None => return Err(CoreError::Format("feature without geometry type".into())),
        }
    }
    Ok(layer)
}

pub fn lines_to_geojson(lines: &[Vec<Point>]) -> Value {
    let features: Vec<Value> = lines
        .iter()
        .map(|l| {
            json!({
                "type": "Feature",
                "properties": {},
                "geometry": {"type": "LineString", "coordinates": l.iter().map(|p| json!([p[0], p[1]])).collect::<Vec<_>>()},
            })
        })
        .collect();
    json!({"type": "FeatureCollection", "features": features})
}

pub fn write_json(value: &impl Serialize, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn read_json(path: &Path) -> Result<Value> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

pub fn write_polygons(set: &PolygonSet, path: &Path) -> Result<()> {
    write_json(&polygons_to_geojson(set), path)
}

pub fn read_polygons(path: &Path) -> Result<PolygonSet> {
    Ok(geojson_to_layer(&read_json(path)?)?.polygons)
}
