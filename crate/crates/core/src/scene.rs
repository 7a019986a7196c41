//! Agricultural geographic scene division: land-cover overlay, terrain
//! thresholds and OSM masking.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geom::{rasterize, segment_distance, Point, PolygonSet};
use crate::morph::slope_from_dem;
use crate::raster::{resample_nearest, FloatRaster, Grid, LabelRaster, Mask, Raster};

/// Agricultural land-cover groups. Discriminants order precedence when two
/// products disagree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LulcClass {
    Other = 0,
    AgriShrub = 1,
    AgriTree = 2,
    AgriCrop = 3,
}

impl LulcClass {
    pub fn is_agri(self) -> bool {
        self != LulcClass::Other
    }

    pub fn from_code(v: u16) -> LulcClass {
        match v {
            1 => LulcClass::AgriShrub,
            2 => LulcClass::AgriTree,
            3 => LulcClass::AgriCrop,
            _ => LulcClass::Other,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LulcProduct {
    pub labels: LabelRaster,
    pub class_map: BTreeMap<u16, LulcClass>,
}

impl LulcProduct {
    pub fn new(labels: LabelRaster, class_map: BTreeMap<u16, LulcClass>) -> Result<Self> {
        let p = Self { labels, class_map };
        p.check()?;
        Ok(p)
    }

    fn check(&self) -> Result<()> {
        if let Some(v) = self.labels.cells().iter().find(|v| !self.class_map.contains_key(v)) {
            return invalid("LulcProduct", format!("raw class {v} missing from class map"));
        }
        Ok(())
    }

    /// Group codes (`LulcClass as u16`) per cell.
    pub fn groups(&self) -> Result<LabelRaster> {
        self.check()?;
        Ok(self.labels.map(|v| self.class_map[&v] as u16))
    }

    /// Nearest-neighbour resample onto another frame. Cells off the source
    /// extent take `fill`, which must be in the class map.
    pub fn resampled(&self, grid: Grid, fill: u16) -> Result<Self> {
        if !self.class_map.contains_key(&fill) {
            return invalid("LulcProduct::resampled", format!("fill class {fill} not in class map"));
        }
        Ok(Self {
            labels: resample_nearest(&self.labels, grid, fill),
            class_map: self.class_map.clone(),
        })
    }
}

/// Per-cell group of the overlay of two products: the higher-precedence
/// group wins (crop, then tree, then shrub).
pub fn lulc_union(a: &LulcProduct, b: &LulcProduct) -> Result<LabelRaster> {
    a.labels.ensure_aligned(&b.labels, "lulc_union")?;
    let (ga, gb) = (a.groups()?, b.groups()?);
    let cells = ga.cells().iter().zip(gb.cells()).map(|(&x, &y)| x.max(y)).collect();
    Raster::new(*ga.grid(), cells)
}

/// Cells that either product assigns to an agricultural group.
pub fn preselect_agriculture(a: &LulcProduct, b: &LulcProduct) -> Result<Mask> {
    Ok(lulc_union(a, b)?.map(|g| u16::from(LulcClass::from_code(g).is_agri())))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TerrainThresholds {
    pub max_elev: f64,
    pub max_slope: f64,
}

impl Default for TerrainThresholds {
    fn default() -> Self {
        Self {
            max_elev: 93.0,
            max_slope: 16.0,
        }
    }
}

/// Remove tree and shrub cells above the elevation or slope limit. Crop
/// cells and cells at exactly the limit are kept.
pub fn terrain_filter(
    pre: &Mask,
    lulc_union: &LabelRaster,
    dem: &FloatRaster,
    slope: &FloatRaster,
    th: TerrainThresholds,
) -> Result<Mask> {
    pre.ensure_aligned(lulc_union, "terrain_filter")?;
    pre.ensure_aligned(dem, "terrain_filter")?;
    pre.ensure_aligned(slope, "terrain_filter")?;
    let cells = (0..pre.cells().len())
        .map(|i| {
            let g = LulcClass::from_code(lulc_union.cells()[i]);
            let woody = matches!(g, LulcClass::AgriTree | LulcClass::AgriShrub);
            let steep = dem.cells()[i] as f64 > th.max_elev || slope.cells()[i] as f64 > th.max_slope;
            u16::from(pre.cells()[i] != 0 && !(woody && steep))
        })
        .collect();
    Raster::new(*pre.grid(), cells)
}

#[derive(Clone, Debug, Default)]
pub struct OsmLayers {
    pub buildings: PolygonSet,
    pub water: PolygonSet,
    pub roads: Vec<Vec<Point>>,
    /// Full width of the road corridor in map units.
    pub road_width: f64,
}

pub const DEFAULT_ROAD_WIDTH: f64 = 6.0;

/// Cells whose centre lies in a building, water body or road corridor.
pub fn osm_cover(grid: Grid, osm: &OsmLayers) -> Result<Mask> {
    if !osm.roads.is_empty() && !(osm.road_width > 0.0) {
        return invalid("osm_cover", "road buffer width must be > 0");
    }
    let mut polys = PolygonSet::new(osm.buildings.iter().chain(osm.water.iter()).cloned().collect());
    for p in &mut polys.polygons {
        p.label = 1;
    }
    let mut cover = rasterize(&polys, grid).map(|v| u16::from(v != 0));
    let half = osm.road_width / 2.0;
    let ps = grid.pixel_size;
    for line in &osm.roads {
        for seg in line.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let (x0, x1) = (a[0].min(b[0]) - half, a[0].max(b[0]) + half);
            let (y0, y1) = (a[1].min(b[1]) - half, a[1].max(b[1]) + half);
            let c0 = ((x0 - grid.origin_x) / ps - 0.5).floor().max(0.0) as usize;
            let c1 = (((x1 - grid.origin_x) / ps - 0.5).ceil() + 1.0).clamp(0.0, grid.width as f64) as usize;
            let r0 = ((grid.origin_y - y1) / ps - 0.5).floor().max(0.0) as usize;
            let r1 = (((grid.origin_y - y0) / ps - 0.5).ceil() + 1.0).clamp(0.0, grid.height as f64) as usize;
            for r in r0..r1 {
                for c in c0..c1 {
                    let (x, y) = grid.cell_center(r, c);
                    if segment_distance([x, y], a, b) <= half {
                        cover.set(r, c, 1);
                    }
                }
            }
        }
    }
    Ok(cover)
}

pub fn remove_osm(mask: &Mask, osm: &OsmLayers) -> Result<Mask> {
    let cover = osm_cover(*mask.grid(), osm)?;
    let cells = mask
        .cells()
        .iter()
        .zip(cover.cells())
        .map(|(&m, &o)| u16::from(m != 0 && o == 0))
        .collect();
    Raster::new(*mask.grid(), cells)
}

/// Replace cells outside the scene by `fill`.
pub fn clip<T: Copy>(image: &Raster<T>, scene: &Mask, fill: T) -> Result<Raster<T>> {
    image.ensure_aligned(scene, "clip")?;
    let mut out = image.clone();
    for (v, &s) in out.cells_mut().iter_mut().zip(scene.cells()) {
        if s == 0 {
            *v = fill;
        }
    }
    Ok(out)
}

/// Intermediate and final masks of a scene division.
#[derive(Clone, Debug)]
pub struct SceneDivision {
    pub preselected: Mask,
    pub lulc_union: LabelRaster,
    pub slope: FloatRaster,
    pub terrain: Mask,
    pub scene: Mask,
}

/// Full division on the DEM's frame. Land-cover products on other frames
/// are resampled nearest-neighbour first (off-extent cells become `Other`).
pub fn divide_scene(
    a: &LulcProduct,
    b: &LulcProduct,
    dem: &FloatRaster,
    osm: &OsmLayers,
    th: TerrainThresholds,
) -> Result<SceneDivision> {
    let frame = *dem.grid();
    let fit = |p: &LulcProduct| -> Result<LulcProduct> {
        if *p.labels.grid() == frame {
            return Ok(p.clone());
        }
        let fill = p
            .class_map
            .iter()
            .find(|(_, c)| **c == LulcClass::Other)
            .map(|(k, _)| *k);
        let mut q = p.clone();
        let fill = fill.unwrap_or_else(|| {
            let k = q.class_map.keys().next_back().map_or(0, |k| k.saturating_add(1));
            q.class_map.insert(k, LulcClass::Other);
            k
        });
        q.resampled(frame, fill)
    };
    let (a, b) = (fit(a)?, fit(b)?);
    let union = lulc_union(&a, &b)?;
    let preselected = union.map(|g| u16::from(LulcClass::from_code(g).is_agri()));
    let slope = slope_from_dem(dem)?;
    let terrain = terrain_filter(&preselected, &union, dem, &slope, th)?;
    let scene = remove_osm(&terrain, osm)?;
    Ok(SceneDivision {
        preselected,
        lulc_union: union,
        slope,
        terrain,
        scene,
    })
}
