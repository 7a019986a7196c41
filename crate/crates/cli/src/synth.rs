//! Synthetic bi-temporal farmland scenes with ground truth for every stage.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use agsp_core::assembly::{assemble, category_report, CategoryReport, TransitionTable};
use agsp_core::io::{lines_to_geojson, read_json, read_pgr, read_png, read_polygons, write_json, write_pgr, write_png, write_polygons};
use agsp_core::scene::{LulcClass, LulcProduct, OsmLayers};
use agsp_core::{FloatRaster, Grid, LabelRaster, Mask, Polygon, PolygonSet, Raster, RgbRaster};
use agsp_tensor::init::{substream, Rng64};
use rand::distributions::WeightedIndex;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaletteMode {
    Distinct,
    /// Crop colours pulled towards a common green.
    Confusable,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    /// Scene side in pixels.
    pub size: usize,
    pub tile: usize,
    pub pixel_size: f64,
    /// Map coordinates of the top-left corner.
    pub origin: [f64; 2],
    /// Nominal field side in pixels.
    pub cell: usize,
    /// Maximum shift of each field boundary.
    pub jitter: usize,
    /// Width of the lines between fields.
    pub ridge: usize,
    /// Road width in pixels.
    pub road_width: usize,
    /// Relative frequency of each change category over crop fields;
    /// category 0 fields are bare soil at both dates.
    pub frequencies: [f64; 7],
    pub palette: PaletteMode,
    /// Per-pixel colour noise (standard deviation).
    pub noise: f64,
    pub villages: usize,
    pub ponds: usize,
    /// Train / validation / test proportions.
    pub split: [usize; 3],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            size: 768,
            tile: 64,
            pixel_size: 1.0,
            origin: [500_000.0, 3_300_000.0],
            cell: 64,
            jitter: 10,
            ridge: 2,
            road_width: 6,
            frequencies: [0.1, 0.15, 0.15, 0.15, 0.15, 0.15, 0.15],
            palette: PaletteMode::Distinct,
            noise: 8.0,
            villages: 3,
            ponds: 2,
            split: [6, 1, 3],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(format!("synth: {m}")));
        if self.tile == 0 || self.tile > self.size {
            return bad(format!("tile {} does not fit a {} scene", self.tile, self.size));
        }
        if self.size % self.tile != 0 {
            return bad(format!("scene size {} is not a multiple of tile {}", self.size, self.tile));
        }
        if self.tile % 16 != 0 {
            return bad(format!("tile {} must be a multiple of 16", self.tile));
        }
        if self.ridge == 0 || self.road_width < self.ridge {
            return bad("ridge must be positive and no wider than the road".into());
        }
        if self.cell < 4 * self.jitter + 2 * self.road_width + 8 || self.cell > self.size {
            return bad(format!("field size {} is too small for jitter {}", self.cell, self.jitter));
        }
        if !(self.pixel_size > 0.0) || self.origin.iter().any(|v| !v.is_finite()) {
            return bad("pixel size must be positive and the origin finite".into());
        }
        if self.frequencies.iter().any(|f| !(*f >= 0.0 && f.is_finite())) || self.frequencies.iter().sum::<f64>() <= 0.0 {
            return bad("frequencies must be non-negative with a positive sum".into());
        }
        if self.split.iter().sum::<usize>() == 0 {
            return bad("split proportions sum to zero".into());
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be non-negative".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.size, self.size, self.origin[0], self.origin[1], self.pixel_size).expect("validated")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tile {
    pub row: usize,
    pub col: usize,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub grid: Grid,
    pub tile: usize,
    /// Road corridor width in map units.
    pub road_width: f64,
    pub tiles: Vec<Tile>,
    pub lulc_a: BTreeMap<u16, LulcClass>,
    pub lulc_b: BTreeMap<u16, LulcClass>,
    /// Area, area share and parcel count per change category.
    pub categories: CategoryReport,
    pub parcel_total: usize,
}

impl Manifest {
    pub fn tiles_in(&self, split: Split) -> impl Iterator<Item = &Tile> {
        self.tiles.iter().filter(move |t| t.split == split)
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub t1: RgbRaster,
    pub t2: RgbRaster,
    pub seg_t1: LabelRaster,
    pub seg_t2: LabelRaster,
    pub change: Mask,
    pub semantic: LabelRaster,
    pub edges: Mask,
    pub parcels: PolygonSet,
    pub dem: FloatRaster,
    pub lulc_a: LulcProduct,
    pub lulc_b: LulcProduct,
    pub osm: OsmLayers,
    pub manifest: Manifest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Crop(u16),
    Forest,
    Village,
    Pond,
}

#[derive(Clone, Copy, Debug)]
struct Cell {
    r0: usize,
    r1: usize,
    c0: usize,
    c1: usize,
    kind: Kind,
}

/// Pixel cover class, before truth and colours are derived.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Cover {
    Ridge,
    Road,
    Field(usize),
    Roof(usize),
}

const BARE: [u8; 3] = [156, 128, 96];
const T1_COLORS: [[u8; 3]; 5] = [BARE, [78, 170, 62], [46, 112, 128], [168, 212, 70], [232, 206, 48]];
const T2_COLORS: [[u8; 3]; 5] = [BARE, [78, 170, 62], [46, 112, 128], [98, 150, 42], [150, 196, 176]];
const CONFUSION_GREEN: [f64; 3] = [110.0, 150.0, 80.0];
const FOREST: [u8; 3] = [28, 72, 40];
const RIDGE: [u8; 3] = [104, 84, 62];
const ROAD: [u8; 3] = [118, 118, 122];
const YARD: [u8; 3] = [176, 168, 150];
const ROOFS: [[u8; 3]; 2] = [[190, 70, 56], [150, 150, 160]];
const WATER: [u8; 3] = [44, 74, 150];

const LULC_CROP: u16 = 1;
const LULC_TREE: u16 = 2;
const LULC_BUILT: u16 = 3;
const LULC_WATER: u16 = 4;
/// Coarse product downsampling factor.
const COARSE: usize = 4;

fn crop_colors(mode: PaletteMode, base: [[u8; 3]; 5]) -> [[f64; 3]; 5] {
    let mut out = base.map(|c| c.map(f64::from));
    if mode == PaletteMode::Confusable {
        for c in out.iter_mut().skip(1) {
            for ch in 0..3 {
                c[ch] = CONFUSION_GREEN[ch] + 0.4 * (c[ch] - CONFUSION_GREEN[ch]);
            }
        }
    }
    out
}

/// Jittered boundaries `0 = b0 < b1 < … < bn = size`.
fn boundaries(size: usize, cell: usize, jitter: usize, rng: &mut Rng64) -> Vec<usize> {
    let n = ((size as f64 / cell as f64).round() as usize).max(1);
    let mut b = vec![0];
    for k in 1..n {
        let j = rng.gen_range(-(jitter as i64)..=jitter as i64);
        b.push((k as i64 * size as i64 / n as i64 + j) as usize);
    }
    b.push(size);
    b
}

/// Pixel span `[start, end)` of a line of width `w` at boundary `b`.
fn line_span(b: usize, w: usize, size: usize, ridge: usize) -> (usize, usize) {
    if b == 0 {
        (0, ridge)
    } else if b == size {
        (size - ridge, size)
    } else {
        (b - w / 2, b - w / 2 + w)
    }
}

fn layout(cfg: &SynthConfig, rng: &mut Rng64) -> (Vec<Cell>, Option<usize>, [f64; 3]) {
    let size = cfg.size;
    let ys = boundaries(size, cfg.cell, cfg.jitter, rng);
    let road = (ys.len() > 2).then(|| ys[(ys.len() - 1) / 2]);
    let width = |b: usize| if Some(b) == road { cfg.road_width } else { cfg.ridge };
    let mut cells = Vec::new();
    for band in ys.windows(2) {
        let r0 = line_span(band[0], width(band[0]), size, cfg.ridge).1;
        let r1 = line_span(band[1], width(band[1]), size, cfg.ridge).0;
        let xs = boundaries(size, cfg.cell, cfg.jitter, rng);
        for span in xs.windows(2) {
            let c0 = line_span(span[0], cfg.ridge, size, cfg.ridge).1;
            let c1 = line_span(span[1], cfg.ridge, size, cfg.ridge).0;
            cells.push(Cell {
                r0,
                r1,
                c0,
                c1,
                kind: Kind::Crop(0),
            });
        }
    }
    // hill: centre, spread
    let s = size as f64;
    let hill = [s * rng.gen_range(0.65..0.8), s * rng.gen_range(0.2..0.35), 0.09 * s];
    let weights = WeightedIndex::new(cfg.frequencies).expect("validated frequencies");
    let mut open = Vec::new();
    for (i, c) in cells.iter_mut().enumerate() {
        let (cy, cx) = ((c.r0 + c.r1) as f64 / 2.0, (c.c0 + c.c1) as f64 / 2.0);
        if (cx - hill[0]).hypot(cy - hill[1]) < 1.3 * hill[2] {
            c.kind = Kind::Forest;
        } else {
            c.kind = Kind::Crop(weights.sample(rng) as u16);
            open.push(i);
        }
    }
    open.shuffle(rng);
    let mut picks = open.into_iter();
    for (kind, n) in [(Kind::Village, cfg.villages), (Kind::Pond, cfg.ponds)] {
        for i in picks.by_ref().take(n) {
            cells[i].kind = kind;
        }
    }
    (cells, road.map(|b| b - cfg.road_width / 2), hill)
}

/// Houses in the four quadrants of a village field, as pixel rectangles.
fn houses(c: &Cell) -> Vec<(usize, usize, usize, usize)> {
    let (hm, wm) = ((c.r0 + c.r1) / 2, (c.c0 + c.c1) / 2);
    let mut out = Vec::new();
    for (a, b) in [(c.r0, hm), (hm, c.r1)] {
        for (l, r) in [(c.c0, wm), (wm, c.c1)] {
            let (dh, dw) = ((b - a) / 4, (r - l) / 4);
            if b - a > 2 * dh && r - l > 2 * dw && dh > 0 && dw > 0 {
                out.push((a + dh, b - dh, l + dw, r - dw));
            }
        }
    }
    out
}

fn pixel_rect(grid: &Grid, r0: usize, r1: usize, c0: usize, c1: usize, label: u32) -> Polygon {
    let ps = grid.pixel_size;
    Polygon::rect(
        grid.origin_x + c0 as f64 * ps,
        grid.origin_y - r1 as f64 * ps,
        grid.origin_x + c1 as f64 * ps,
        grid.origin_y - r0 as f64 * ps,
        label,
    )
}

fn dem(grid: Grid, hill: [f64; 3]) -> FloatRaster {
    let s = grid.width as f64;
    let tau = std::f64::consts::TAU;
    Raster::from_fn(grid, |r, c| {
        let (x, y) = (c as f64 + 0.5, r as f64 + 0.5);
        let d2 = (x - hill[0]).powi(2) + (y - hill[1]).powi(2);
        let base = 42.0 + 5.0 * (tau * x / (0.6 * s)).sin() + 4.0 * (tau * y / (0.45 * s)).cos();
        (base + 90.0 * (-d2 / (2.0 * hill[2] * hill[2])).exp()) as f32
    })
}

fn split_tiles(cfg: &SynthConfig, seed: u64) -> Vec<Tile> {
    let per = cfg.size / cfg.tile;
    let n = per * per;
    let total: usize = cfg.split.iter().sum();
    let n_train = (n as f64 * cfg.split[0] as f64 / total as f64).round() as usize;
    let n_val = ((n as f64 * cfg.split[1] as f64 / total as f64).round() as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, "split"));
    let mut split = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        if rank < n_train {
            split[i] = Split::Train;
        } else if rank < n_train + n_val {
            split[i] = Split::Val;
        }
    }
    (0..n)
        .map(|i| Tile {
            row: i / per * cfg.tile,
            col: i % per * cfg.tile,
            split: split[i],
        })
        .collect()
}

pub fn lulc_class_maps() -> (BTreeMap<u16, LulcClass>, BTreeMap<u16, LulcClass>) {
    let a = [
        (LULC_CROP, LulcClass::AgriCrop),
        (LULC_TREE, LulcClass::AgriTree),
        (LULC_BUILT, LulcClass::Other),
        (LULC_WATER, LulcClass::Other),
    ];
    let b = [(20, LulcClass::AgriShrub), (40, LulcClass::AgriCrop), (50, LulcClass::Other), (80, LulcClass::Other)];
    (a.into_iter().collect(), b.into_iter().collect())
}

fn coarse_code(fine: u16) -> u16 {
    match fine {
        LULC_CROP => 40,
        LULC_TREE => 20,
        LULC_BUILT => 50,
        _ => 80,
    }
}

pub fn synth(cfg: &SynthConfig, seed: u64) -> Result<SyntheticScene> {
    cfg.validate()?;
    let grid = cfg.grid();
    let size = cfg.size;
    let (cells, road_row, hill) = layout(cfg, &mut substream(seed, "layout"));

    let mut cover = vec![Cover::Ridge; size * size];
    let mut roofs = Vec::new();
    for (i, c) in cells.iter().enumerate() {
        for r in c.r0..c.r1 {
            cover[r * size + c.c0..r * size + c.c1].fill(Cover::Field(i));
        }
        if c.kind == Kind::Village {
            for h in houses(c) {
                for r in h.0..h.1 {
                    cover[r * size + h.2..r * size + h.3].fill(Cover::Roof(roofs.len()));
                }
                roofs.push(h);
            }
        }
    }
    if let Some(r0) = road_row {
        cover[r0 * size..(r0 + cfg.road_width) * size].fill(Cover::Road);
    }

    // truth
    let table = TransitionTable::default();
    let triple = |k: u16| if k == 0 { (0, 0, false) } else { table.source(k).expect("listed category") };
    let kind_at = |cv: Cover| match cv {
        Cover::Field(i) => cells[i].kind,
        Cover::Roof(_) => Kind::Village,
        _ => Kind::Forest,
    };
    let crop_at = |cv: Cover| match kind_at(cv) {
        Kind::Crop(k) if matches!(cv, Cover::Field(_)) => Some(k),
        _ => None,
    };
    let label = |f: &dyn Fn(u16) -> u16| Raster::new(grid, cover.iter().map(|&cv| crop_at(cv).map_or(0, f)).collect());
    let seg_t1 = label(&|k| triple(k).0)?;
    let seg_t2 = label(&|k| triple(k).1)?;
    let change = label(&|k| u16::from(triple(k).2))?;
    let semantic = label(&|k| k)?;
    let edges = Raster::new(grid, cover.iter().map(|&cv| u16::from(matches!(cv, Cover::Ridge | Cover::Road))).collect())?;
    let (assembled, invalid) = assemble(&seg_t1, &seg_t2, &change, &table)?;
    if assembled != semantic || invalid.total != 0 {
        return Err(CliError::Data("synthetic truth is inconsistent with the transition table".into()));
    }

    // imagery
    let (p1, p2) = (crop_colors(cfg.palette, T1_COLORS), crop_colors(cfg.palette, T2_COLORS));
    let mut trng = substream(seed, "texture");
    let offsets: Vec<f64> = cells.iter().map(|_| trng.gen_range(-10.0..10.0)).collect();
    let roof_colors: Vec<[u8; 3]> = roofs.iter().map(|_| ROOFS[trng.gen_range(0..ROOFS.len())]).collect();
    let noise = Normal::new(0.0, cfg.noise).expect("validated noise");
    let render = |palette: &[[f64; 3]; 5], date: u16, rng: &mut Rng64| -> Result<RgbRaster> {
        let px = cover
            .iter()
            .map(|&cv| {
                let (base, offset, scale) = match cv {
                    Cover::Ridge => (RIDGE.map(f64::from), 0.0, 1.0),
                    Cover::Road => (ROAD.map(f64::from), 0.0, 0.5),
                    Cover::Roof(h) => (roof_colors[h].map(f64::from), 0.0, 0.5),
                    Cover::Field(i) => match cells[i].kind {
                        Kind::Crop(k) => {
                            let (c1, c2, _) = triple(k);
                            (palette[if date == 1 { c1 } else { c2 } as usize], offsets[i], 1.0)
                        }
                        Kind::Forest => (FOREST.map(f64::from), offsets[i] / 2.0, 1.5),
                        Kind::Village => (YARD.map(f64::from), offsets[i], 1.0),
                        Kind::Pond => (WATER.map(f64::from), offsets[i] / 2.0, 0.5),
                    },
                };
                base.map(|v| (v + offset + scale * noise.sample(rng)).round().clamp(0.0, 255.0) as u8)
            })
            .collect();
        Ok(Raster::new(grid, px)?)
    };
    let t1 = render(&p1, 1, &mut substream(seed, "texture/t1"))?;
    let t2 = render(&p2, 2, &mut substream(seed, "texture/t2"))?;

    // ancillary layers
    let dem = dem(grid, hill);
    let fine = Raster::new(
        grid,
        cover
            .iter()
            .map(|&cv| match cv {
                Cover::Road | Cover::Roof(_) => LULC_BUILT,
                Cover::Ridge => LULC_CROP,
                Cover::Field(i) => match cells[i].kind {
                    Kind::Crop(_) => LULC_CROP,
                    Kind::Forest => LULC_TREE,
                    Kind::Village => LULC_BUILT,
                    Kind::Pond => LULC_WATER,
                },
            })
            .collect(),
    )?;
    let coarse_grid = Grid::new(size / COARSE, size / COARSE, grid.origin_x, grid.origin_y, grid.pixel_size * COARSE as f64)?;
    let coarse = Raster::from_fn(coarse_grid, |r, c| coarse_code(fine.get(r * COARSE + COARSE / 2, c * COARSE + COARSE / 2)));
    let (map_a, map_b) = lulc_class_maps();
    let lulc_a = LulcProduct::new(fine, map_a.clone())?;
    let lulc_b = LulcProduct::new(coarse, map_b.clone())?;

    let mut osm = OsmLayers {
        road_width: cfg.road_width as f64 * cfg.pixel_size,
        ..Default::default()
    };
    for (i, h) in roofs.iter().enumerate() {
        osm.buildings.polygons.push(pixel_rect(&grid, h.0, h.1, h.2, h.3, i as u32 + 1));
    }
    for c in cells.iter().filter(|c| c.kind == Kind::Pond) {
        let n = osm.water.len() as u32 + 1;
        osm.water.polygons.push(pixel_rect(&grid, c.r0, c.r1, c.c0, c.c1, n));
    }
    if let Some(r0) = road_row {
        let y = grid.origin_y - (r0 as f64 + cfg.road_width as f64 / 2.0) * cfg.pixel_size;
        osm.roads.push(vec![[grid.origin_x, y], [grid.origin_x + size as f64 * cfg.pixel_size, y]]);
    }

    let mut parcels = PolygonSet::default();
    for c in &cells {
        if let Kind::Crop(k) = c.kind {
            let id = parcels.len() as u32 + 1;
            let mut p = pixel_rect(&grid, c.r0, c.r1, c.c0, c.c1, id);
            p.props.insert("id".into(), json!(id));
            p.props.insert("area".into(), json!(p.area()));
            p.props.insert("category".into(), json!(k));
            parcels.polygons.push(p);
        }
    }

    let categories = category_report(&semantic, Some(&parcels))?;
    let manifest = Manifest {
        seed,
        grid,
        tile: cfg.tile,
        road_width: osm.road_width,
        tiles: split_tiles(cfg, seed),
        lulc_a: map_a,
        lulc_b: map_b,
        categories,
        parcel_total: parcels.len(),
    };
    Ok(SyntheticScene {
        t1,
        t2,
        seg_t1,
        seg_t2,
        change,
        semantic,
        edges,
        parcels,
        dem,
        lulc_a,
        lulc_b,
        osm,
        manifest,
    })
}

/// File names inside a scene directory.
pub mod files {
    pub const MANIFEST: &str = "manifest.json";
    pub const T1: &str = "t1.png";
    pub const T2: &str = "t2.png";
    pub const SEG_T1: &str = "seg_t1.pgr";
    pub const SEG_T2: &str = "seg_t2.pgr";
    pub const CHANGE: &str = "change.pgr";
    pub const SEMANTIC: &str = "semantic.pgr";
    pub const EDGES: &str = "edges.pgr";
    pub const PARCELS: &str = "parcels.geojson";
    pub const DEM: &str = "dem.pgr";
    pub const LULC_A: &str = "lulc_a.pgr";
    pub const LULC_B: &str = "lulc_b.pgr";
    pub const BUILDINGS: &str = "osm_buildings.geojson";
    pub const WATER: &str = "osm_water.geojson";
    pub const ROADS: &str = "osm_roads.geojson";
}

pub fn write_scene(scene: &SyntheticScene, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_png(&scene.t1, &dir.join(files::T1))?;
    write_png(&scene.t2, &dir.join(files::T2))?;
    write_pgr(&scene.seg_t1, &dir.join(files::SEG_T1))?;
    write_pgr(&scene.seg_t2, &dir.join(files::SEG_T2))?;
    write_pgr(&scene.change, &dir.join(files::CHANGE))?;
    write_pgr(&scene.semantic, &dir.join(files::SEMANTIC))?;
    write_pgr(&scene.edges, &dir.join(files::EDGES))?;
    write_pgr(&scene.dem, &dir.join(files::DEM))?;
    write_pgr(&scene.lulc_a.labels, &dir.join(files::LULC_A))?;
    write_pgr(&scene.lulc_b.labels, &dir.join(files::LULC_B))?;
    write_polygons(&scene.parcels, &dir.join(files::PARCELS))?;
    write_polygons(&scene.osm.buildings, &dir.join(files::BUILDINGS))?;
    write_polygons(&scene.osm.water, &dir.join(files::WATER))?;
    write_json(&lines_to_geojson(&scene.osm.roads), &dir.join(files::ROADS))?;
    // manifest last: its presence marks a complete scene
    write_json(&scene.manifest, &dir.join(files::MANIFEST))?;
    Ok(())
}

/// Read access to a scene directory.
#[derive(Clone, Debug)]
pub struct SceneDir {
    pub path: PathBuf,
    pub manifest: Manifest,
}

impl SceneDir {
    pub fn open(path: &Path) -> Result<Self> {
        let doc = read_json(&path.join(files::MANIFEST))?;
        let manifest: Manifest =
            serde_json::from_value(doc).map_err(|e| CliError::Data(format!("{}: {e}", path.join(files::MANIFEST).display())))?;
        Ok(Self {
            path: path.to_path_buf(),
            manifest,
        })
    }

    pub fn grid(&self) -> Grid {
        self.manifest.grid
    }

    fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn image(&self, date: u8) -> Result<RgbRaster> {
        let name = if date == 1 { files::T1 } else { files::T2 };
        Ok(read_png(&self.file(name), Some(self.grid()))?)
    }

    pub fn labels(&self, name: &str) -> Result<LabelRaster> {
        let r: LabelRaster = read_pgr(&self.file(name))?;
        if *r.grid() != self.grid() {
            return Err(CliError::Data(format!("{name} is not on the scene grid")));
        }
        Ok(r)
    }

    pub fn dem(&self) -> Result<FloatRaster> {
        Ok(read_pgr(&self.file(files::DEM))?)
    }

    pub fn lulc(&self) -> Result<(LulcProduct, LulcProduct)> {
        let a = LulcProduct::new(read_pgr(&self.file(files::LULC_A))?, self.manifest.lulc_a.clone())?;
        let b = LulcProduct::new(read_pgr(&self.file(files::LULC_B))?, self.manifest.lulc_b.clone())?;
        Ok((a, b))
    }

    pub fn osm(&self, road_width: f64) -> Result<OsmLayers> {
        let roads = agsp_core::io::geojson_to_layer(&read_json(&self.file(files::ROADS))?)?;
        Ok(OsmLayers {
            buildings: read_polygons(&self.file(files::BUILDINGS))?,
            water: read_polygons(&self.file(files::WATER))?,
            roads: roads.lines,
            road_width,
        })
    }

    pub fn parcels(&self) -> Result<PolygonSet> {
        Ok(read_polygons(&self.file(files::PARCELS))?)
    }
}
