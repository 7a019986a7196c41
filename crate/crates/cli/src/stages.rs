//! Single pipeline stages over scene directories and artifact files.

use std::path::Path;

use agsp_core::assembly::{assemble, category_report, constrain_ids, CategoryReport, InvalidReport, TransitionTable, CHANGE_CATEGORIES};
use agsp_core::io::{read_json, write_json, write_png};
use agsp_core::metrics::{build_cm, report, ConfusionMatrix, Report};
use agsp_core::parcel::{extract_parcels, fuse_parcels, ParcelParams, ParcelSet};
use agsp_core::scene::{clip, divide_scene, SceneDivision};
use agsp_core::{rasterize, FloatRaster, Grid, LabelRaster, Mask, Raster, RgbRaster};
use agsp_nets::bdcn::{bdcn_predict, bdcn_train, Bdcn, BdcnConfig, EdgeTrainConfig, EdgeTrainLog};
use agsp_nets::ccnet::{scd_infer, scd_train, ScdConfig, ScdModel, ScdTrainConfig, ScdTrainLog};
use agsp_nets::data::{image_tensor, EdgeSample, ScdSample};
use agsp_tensor::{checkpoint, ParamStore, Tensor};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{SceneConfig, TrainSection};
use crate::error::{CliError, Result};
use crate::synth::{files, SceneDir, Split, Tile};

const MODEL_CONFIG: &str = "config.json";

pub fn scene_divide(scene: &SceneDir, cfg: &SceneConfig) -> Result<SceneDivision> {
    let (a, b) = scene.lulc()?;
    let dem = scene.dem()?;
    if *dem.grid() != scene.grid() {
        return Err(CliError::Data("DEM is not on the scene grid".into()));
    }
    let osm = scene.osm(cfg.road_width)?;
    Ok(divide_scene(&a, &b, &dem, &osm, cfg.terrain)?)
}

/// Cells kept after each division step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivisionStats {
    pub cells: usize,
    pub preselected: usize,
    pub terrain: usize,
    pub scene: usize,
}

pub fn division_stats(d: &SceneDivision) -> DivisionStats {
    DivisionStats {
        cells: d.scene.cells().len(),
        preselected: d.preselected.count_nonzero(),
        terrain: d.terrain.count_nonzero(),
        scene: d.scene.count_nonzero(),
    }
}

/// Epoch imagery, blacked out off the scene mask when one is given.
pub fn scene_images(scene: &SceneDir, mask: Option<&Mask>) -> Result<[RgbRaster; 2]> {
    let imgs = [scene.image(1)?, scene.image(2)?];
    match mask {
        Some(m) => Ok([clip(&imgs[0], m, [0; 3])?, clip(&imgs[1], m, [0; 3])?]),
        None => Ok(imgs),
    }
}

fn tile_tensor(img: &RgbRaster, t: &Tile, size: usize) -> Result<Tensor<f32>> {
    let crop = img.crop(t.row, t.col, size, size)?;
    Ok(image_tensor(crop.cells(), size, size)?)
}

fn tile_cells<T: Copy>(r: &Raster<T>, t: &Tile, size: usize) -> Result<Vec<T>> {
    Ok(r.crop(t.row, t.col, size, size)?.into_cells())
}

fn save_model<C: Serialize>(dir: &Path, config: &C, store: &ParamStore<f32>) -> Result<()> {
    checkpoint::save(store, dir)?;
    write_json(config, &dir.join(MODEL_CONFIG))?;
    Ok(())
}

fn model_config<C: DeserializeOwned>(dir: &Path) -> Result<C> {
    serde_json::from_value(read_json(&dir.join(MODEL_CONFIG))?).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

pub fn edge_train(scene: &SceneDir, cfg: &TrainSection<BdcnConfig>, seed: u64, model_dir: &Path) -> Result<EdgeTrainLog> {
    let size = scene.manifest.tile;
    let edges = scene.labels(files::EDGES)?;
    let imgs = scene_images(scene, None)?;
    let mut data = Vec::new();
    for t in scene.manifest.tiles_in(Split::Train) {
        let target: Vec<f32> = tile_cells(&edges, t, size)?.into_iter().map(|v| f32::from(u8::from(v != 0))).collect();
        for img in &imgs {
            data.push(EdgeSample::new(tile_tensor(img, t, size)?, target.clone())?);
        }
    }
    let mut store = ParamStore::new();
    let net = Bdcn::new(&mut store, cfg.net.clone(), seed)?;
    let train = EdgeTrainConfig {
        epochs: cfg.epochs,
        batch: cfg.batch,
        sgd: cfg.sgd,
        seed,
    };
    let log = bdcn_train(&net, &mut store, &data, &train)?;
    save_model(model_dir, &cfg.net, &store)?;
    Ok(log)
}

/// Edge probabilities for both epochs, tile by tile.
pub fn edge_infer(scene: &SceneDir, model_dir: &Path) -> Result<[FloatRaster; 2]> {
    let config: BdcnConfig = model_config(model_dir)?;
    let mut store = ParamStore::new();
    let net = Bdcn::new(&mut store, config, 0)?;
    checkpoint::load(&mut store, model_dir)?;
    let size = scene.manifest.tile;
    let imgs = scene_images(scene, None)?;
    let mut out = [Raster::filled(scene.grid(), 0.0f32), Raster::filled(scene.grid(), 0.0f32)];
    for t in &scene.manifest.tiles {
        for (img, map) in imgs.iter().zip(out.iter_mut()) {
            let p = bdcn_predict(&net, &mut store, &tile_tensor(img, t, size)?)?;
            map.paste(&Raster::new(Grid::pixels(size, size), p)?, t.row, t.col)?;
        }
    }
    Ok(out)
}

pub fn parcel_extract(edges: &FloatRaster, params: &ParcelParams) -> Result<ParcelSet> {
    Ok(extract_parcels(edges, params)?)
}

pub fn parcel_fuse(t1: &ParcelSet, t2: &ParcelSet, grid: Grid, min_area: usize) -> ParcelSet {
    fuse_parcels(t1, t2, grid, min_area)
}

fn scd_samples(scene: &SceneDir, mask: Option<&Mask>, split: Split) -> Result<Vec<ScdSample>> {
    let size = scene.manifest.tile;
    let imgs = scene_images(scene, mask)?;
    let (y1, y2, ch) = (scene.labels(files::SEG_T1)?, scene.labels(files::SEG_T2)?, scene.labels(files::CHANGE)?);
    scene
        .manifest
        .tiles_in(split)
        .map(|t| {
            let labels = |r: &LabelRaster| -> Result<Vec<usize>> { Ok(tile_cells(r, t, size)?.into_iter().map(usize::from).collect()) };
            Ok(ScdSample::new(
                tile_tensor(&imgs[0], t, size)?,
                tile_tensor(&imgs[1], t, size)?,
                labels(&y1)?,
                labels(&y2)?,
                tile_cells(&ch, t, size)?.into_iter().map(|v| f32::from(u8::from(v != 0))).collect(),
            )?)
        })
        .collect()
}

pub fn scd_train_stage(
    scene: &SceneDir,
    mask: Option<&Mask>,
    cfg: &TrainSection<ScdConfig>,
    seed: u64,
    model_dir: &Path,
    mut on_epoch: impl FnMut(&agsp_nets::ccnet::ScdEpoch),
) -> Result<ScdTrainLog> {
    let train = scd_samples(scene, mask, Split::Train)?;
    let val = scd_samples(scene, mask, Split::Val)?;
    let mut store = ParamStore::new();
    let model = ScdModel::new(&mut store, cfg.net.clone(), seed)?;
    let tc = ScdTrainConfig {
        epochs: cfg.epochs,
        batch: cfg.batch,
        sgd: cfg.sgd,
        seed,
    };
    let log = scd_train(&model, &mut store, &train, &val, &tc, &mut on_epoch)?;
    save_model(model_dir, &cfg.net, &store)?;
    Ok(log)
}

/// Full-scene segmentations and change mask.
pub struct ScdMaps {
    pub seg_t1: LabelRaster,
    pub seg_t2: LabelRaster,
    pub change: Mask,
}

pub fn scd_infer_stage(scene: &SceneDir, mask: Option<&Mask>, model_dir: &Path) -> Result<ScdMaps> {
    let config: ScdConfig = model_config(model_dir)?;
    let mut store = ParamStore::new();
    let model = ScdModel::new(&mut store, config, 0)?;
    checkpoint::load(&mut store, model_dir)?;
    let size = scene.manifest.tile;
    let imgs = scene_images(scene, mask)?;
    let blank = Raster::filled(scene.grid(), 0u16);
    let mut maps = ScdMaps {
        seg_t1: blank.clone(),
        seg_t2: blank.clone(),
        change: blank,
    };
    let tile_grid = Grid::pixels(size, size);
    for t in &scene.manifest.tiles {
        let p = scd_infer(&model, &mut store, &tile_tensor(&imgs[0], t, size)?, &tile_tensor(&imgs[1], t, size)?)?;
        maps.seg_t1.paste(&Raster::new(tile_grid, p.seg_t1)?, t.row, t.col)?;
        maps.seg_t2.paste(&Raster::new(tile_grid, p.seg_t2)?, t.row, t.col)?;
        maps.change.paste(&Raster::new(tile_grid, p.change)?, t.row, t.col)?;
    }
    Ok(maps)
}

pub fn assemble_stage(maps: &ScdMaps) -> Result<(LabelRaster, InvalidReport)> {
    Ok(assemble(&maps.seg_t1, &maps.seg_t2, &maps.change, &TransitionTable::default())?)
}

/// Post-processing of an assembled map: cells off the scene become
/// no-change, then every parcel takes its majority category.
pub fn finalize(semantic: &LabelRaster, scene_mask: Option<&Mask>, parcels: Option<&ParcelSet>) -> Result<LabelRaster> {
    let clipped = match scene_mask {
        Some(m) => clip(semantic, m, 0)?,
        None => semantic.clone(),
    };
    match parcels {
        Some(p) => Ok(constrain_ids(&clipped, &rasterize(p, *semantic.grid()))?),
        None => Ok(clipped),
    }
}

/// Whether every parcel footprint holds a single category.
pub fn parcels_single_valued(map: &LabelRaster, parcels: &ParcelSet) -> bool {
    let ids = rasterize(parcels, *map.grid());
    let mut seen = std::collections::BTreeMap::new();
    ids.cells()
        .iter()
        .zip(map.cells())
        .all(|(&k, &v)| k == 0 || *seen.entry(k).or_insert(v) == v)
}

pub fn split_mask(scene: &SceneDir, split: Split) -> Mask {
    let size = scene.manifest.tile;
    let mut m = Raster::filled(scene.grid(), 0u16);
    for t in scene.manifest.tiles_in(split) {
        for r in t.row..t.row + size {
            for c in t.col..t.col + size {
                m.set(r, c, 1);
            }
        }
    }
    m
}

pub fn evaluate(truth: &LabelRaster, pred: &LabelRaster, mask: Option<&Mask>) -> Result<(ConfusionMatrix, Report)> {
    let cm = build_cm(truth, pred, CHANGE_CATEGORIES.len(), mask)?.with_names(&CHANGE_CATEGORIES);
    let rep = report(&cm);
    Ok((cm, rep))
}

pub fn categories(map: &LabelRaster, parcels: Option<&ParcelSet>) -> Result<CategoryReport> {
    Ok(category_report(map, parcels)?)
}

/// Colour preview of a label map with one RGB entry per label.
pub fn write_preview(map: &LabelRaster, palette: &[[u8; 3]], path: &Path) -> Result<()> {
    let rgb = map.map(|v| palette.get(v as usize).copied().unwrap_or([255, 255, 255]));
    Ok(write_png(&rgb, path)?)
}
