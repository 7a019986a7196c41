//! The staged run: scene → edges → parcels → change network → assembly →
//! constraint → evaluation, with every intermediate artifact on disk.
//!
//! A stage is skipped when its stamp records the same fingerprint and all of
//! its outputs exist. Fingerprints chain through upstream stages, so changing
//! a setting reruns exactly the stages that depend on it.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use agsp_core::assembly::{CategoryReport, InvalidReport};
use agsp_core::io::{read_json, read_pgr, read_polygons, write_json, write_pgr, write_polygons};
use agsp_core::metrics::{ClassReport, OverallReport};
use agsp_core::{Grid, LabelRaster, Mask};
use agsp_tensor::init::fnv1a64;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{fingerprint, stage_seed, Ablation, PipelineConfig};
use crate::error::{CliError, Result};
use crate::stages::{self, ScdMaps};
use crate::synth::{self, files, SceneDir, Split};

/// Evaluation of one module combination on the test tiles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub configuration: String,
    pub seed: u64,
    pub split: Split,
    pub pixels: u64,
    pub detailed: Vec<ClassReport>,
    pub overall: OverallReport,
    /// Rows are truth, columns prediction.
    pub confusion: Vec<Vec<u64>>,
    pub invalid: InvalidReport,
    pub categories: CategoryReport,
    pub parcels: Option<usize>,
    pub parcels_single_valued: Option<bool>,
}

#[derive(Clone, Debug, Default)]
pub struct RunOutcome {
    pub executed: Vec<String>,
    pub skipped: Vec<String>,
    pub reports: BTreeMap<Ablation, VariantReport>,
}

/// Artifact locations under the output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
    scene_override: Option<PathBuf>,
}

impl Layout {
    pub fn new(root: &Path, cfg: &PipelineConfig) -> Self {
        Self {
            root: root.to_path_buf(),
            scene_override: cfg.scene_dir.clone(),
        }
    }

    pub fn scene(&self) -> PathBuf {
        self.scene_override.clone().unwrap_or_else(|| self.root.join("scene"))
    }

    pub fn scene_mask(&self) -> PathBuf {
        self.root.join("ags/scene_mask.pgr")
    }

    pub fn edge_model(&self) -> PathBuf {
        self.root.join("edge/model")
    }

    pub fn edge_map(&self, date: u8) -> PathBuf {
        self.root.join(format!("edge/edges_t{date}.pgr"))
    }

    pub fn parcels(&self, date: u8) -> PathBuf {
        self.root.join(format!("parcels/t{date}.geojson"))
    }

    pub fn fused(&self) -> PathBuf {
        self.root.join("parcels/fused.geojson")
    }

    pub fn scd(&self, ags: bool) -> PathBuf {
        self.root.join(if ags { "scd_ags" } else { "scd_plain" })
    }

    pub fn variant(&self, a: Ablation) -> PathBuf {
        self.root.join("variants").join(a.slug())
    }

    fn stamp(&self, id: &str) -> PathBuf {
        self.root.join("stages").join(format!("{}.json", id.replace('/', "_")))
    }
}

struct Runner<'a> {
    layout: &'a Layout,
    dry_run: bool,
    outcome: RunOutcome,
}

impl Runner<'_> {
    fn done(&self, id: &str, fp: &str, outputs: &[PathBuf]) -> bool {
        let stamp = read_json(&self.layout.stamp(id)).ok();
        stamp.is_some_and(|s| s["fingerprint"] == fp) && outputs.iter().all(|p| p.exists())
    }

    fn stage(&mut self, id: &str, fp: &str, outputs: &[PathBuf], run: impl FnOnce() -> Result<()>) -> Result<()> {
        let done = self.done(id, fp, outputs);
        if self.dry_run {
            println!("{} {id}", if done { "skip" } else { "run " });
            for o in outputs {
                println!("       -> {}", o.display());
            }
            return Ok(());
        }
        if done {
            eprintln!("[{id}] up to date");
            self.outcome.skipped.push(id.to_string());
            return Ok(());
        }
        eprintln!("[{id}] running");
        let stamp = self.layout.stamp(id);
        if stamp.exists() {
            std::fs::remove_file(&stamp)?;
        }
        run().map_err(|e| e.in_stage(id))?;
        write_json(&json!({"stage": id, "fingerprint": fp}), &stamp)?;
        self.outcome.executed.push(id.to_string());
        Ok(())
    }
}

fn chain(parts: &[&dyn erased::Fp]) -> String {
    let joined: Vec<String> = parts.iter().map(|p| p.fp()).collect();
    format!("{:016x}", fnv1a64(joined.join("|").as_bytes()))
}

mod erased {
    use serde::Serialize;

    pub trait Fp {
        fn fp(&self) -> String;
    }

    impl<T: Serialize> Fp for T {
        fn fp(&self) -> String {
            super::fingerprint(self)
        }
    }
}

fn read_mask(path: &Path) -> Result<Mask> {
    Ok(read_pgr(path)?)
}

fn read_maps(dir: &Path) -> Result<ScdMaps> {
    Ok(ScdMaps {
        seg_t1: read_pgr(&dir.join("seg_t1.pgr"))?,
        seg_t2: read_pgr(&dir.join("seg_t2.pgr"))?,
        change: read_pgr(&dir.join("change.pgr"))?,
    })
}

fn same_grid(a: &Grid, b: &Grid, what: &str) -> Result<()> {
    if a != b {
        return Err(CliError::Data(format!("{what} is not on the scene grid")));
    }
    Ok(())
}

pub fn run_pipeline(cfg: &PipelineConfig, out: &Path, dry_run: bool) -> Result<RunOutcome> {
    cfg.validate()?;
    let seed = cfg.require_seed()?;
    let layout = Layout::new(out, cfg);
    let mut r = Runner {
        layout: &layout,
        dry_run,
        outcome: RunOutcome::default(),
    };
    let scene_path = layout.scene();
    let want_ags = cfg.ablations.iter().any(|a| a.ags());
    let want_plain = cfg.ablations.iter().any(|a| !a.ags());
    let want_bdcn = cfg.ablations.iter().any(|a| a.bdcn());

    // scene
    let scene_fp = match &cfg.scene_dir {
        Some(dir) => {
            let bytes = std::fs::read(dir.join(files::MANIFEST)).unwrap_or_default();
            chain(&[&"scene-dir", &format!("{:016x}", fnv1a64(&bytes))])
        }
        None => {
            let fp = chain(&[&"synth", &cfg.synth, &seed]);
            r.stage("synth", &fp, &[scene_path.join(files::MANIFEST)], || {
                let scene = synth::synth(&cfg.synth, seed)?;
                synth::write_scene(&scene, &scene_path)
            })?;
            fp
        }
    };
    let open_scene = || SceneDir::open(&scene_path);

    let mask_fp = chain(&[&"scene-divide", &scene_fp, &cfg.scene]);
    if want_ags {
        r.stage("scene-divide", &mask_fp, &[layout.scene_mask()], || {
            let scene = open_scene()?;
            let division = stages::scene_divide(&scene, &cfg.scene)?;
            write_pgr(&division.scene, &layout.scene_mask())?;
            write_json(&stages::division_stats(&division), &layout.root.join("ags/stats.json"))?;
            Ok(())
        })?;
    }

    let fused_fp = if want_bdcn {
        let edge_seed = stage_seed(seed, "edge");
        let train_fp = chain(&[&"edge-train", &scene_fp, &cfg.edge, &edge_seed]);
        let model = layout.edge_model();
        r.stage("edge-train", &train_fp, &[model.join(agsp_tensor::checkpoint::MANIFEST)], || {
            let log = stages::edge_train(&open_scene()?, &cfg.edge, edge_seed, &model)?;
            write_json(&log, &layout.root.join("edge/train_log.json"))?;
            Ok(())
        })?;
        let infer_fp = chain(&[&"edge-infer", &train_fp]);
        r.stage("edge-infer", &infer_fp, &[layout.edge_map(1), layout.edge_map(2)], || {
            let maps = stages::edge_infer(&open_scene()?, &model)?;
            write_pgr(&maps[0], &layout.edge_map(1))?;
            write_pgr(&maps[1], &layout.edge_map(2))?;
            Ok(())
        })?;
        let extract_fp = chain(&[&"parcel-extract", &infer_fp, &cfg.parcel]);
        for date in [1u8, 2] {
            r.stage(&format!("parcel-extract/t{date}"), &extract_fp, &[layout.parcels(date)], || {
                let edges = read_pgr(&layout.edge_map(date))?;
                let set = stages::parcel_extract(&edges, &cfg.parcel)?;
                write_polygons(&set, &layout.parcels(date))?;
                Ok(())
            })?;
        }
        let fuse_fp = chain(&[&"parcel-fuse", &extract_fp, &cfg.fuse_min_area]);
        r.stage("parcel-fuse", &fuse_fp, &[layout.fused()], || {
            let grid = open_scene()?.grid();
            let fused = stages::parcel_fuse(&read_polygons(&layout.parcels(1))?, &read_polygons(&layout.parcels(2))?, grid, cfg.fuse_min_area);
            write_polygons(&fused, &layout.fused())?;
            Ok(())
        })?;
        Some(fuse_fp)
    } else {
        None
    };

    // change network, once per input variant
    let scd_seed = stage_seed(seed, "scd");
    let mut assembled_fp = BTreeMap::new();
    for ags in [false, true] {
        if (ags && !want_ags) || (!ags && !want_plain) {
            continue;
        }
        let tag = if ags { "ags" } else { "plain" };
        let dir = layout.scd(ags);
        let upstream = if ags { mask_fp.clone() } else { scene_fp.clone() };
        let mask = || -> Result<Option<Mask>> { if ags { Ok(Some(read_mask(&layout.scene_mask())?)) } else { Ok(None) } };
        let train_fp = chain(&[&"scd-train", &upstream, &cfg.scd, &scd_seed]);
        let model = dir.join("model");
        r.stage(&format!("scd-train/{tag}"), &train_fp, &[model.join(agsp_tensor::checkpoint::MANIFEST)], || {
            let log = stages::scd_train_stage(&open_scene()?, mask()?.as_ref(), &cfg.scd, scd_seed, &model, |e| {
                let val = e.val.as_ref().map_or(String::new(), |v| format!(", val loss {:.4}, change acc {:.3}", v.loss, v.acc_change));
                eprintln!("  epoch {}: train loss {:.4}{val}", e.epoch, e.train_loss);
            })?;
            write_json(&log, &dir.join("train_log.json"))?;
            Ok(())
        })?;
        let infer_fp = chain(&[&"scd-infer", &train_fp]);
        let outputs: Vec<PathBuf> = ["seg_t1.pgr", "seg_t2.pgr", "change.pgr"].iter().map(|n| dir.join(n)).collect();
        r.stage(&format!("scd-infer/{tag}"), &infer_fp, &outputs, || {
            let scene = open_scene()?;
            let maps = stages::scd_infer_stage(&scene, mask()?.as_ref(), &model)?;
            write_pgr(&maps.seg_t1, &outputs[0])?;
            write_pgr(&maps.seg_t2, &outputs[1])?;
            write_pgr(&maps.change, &outputs[2])?;
            Ok(())
        })?;
        let asm_fp = chain(&[&"assemble", &infer_fp]);
        r.stage(&format!("assemble/{tag}"), &asm_fp, &[dir.join("semantic.pgr"), dir.join("invalid.json")], || {
            let (semantic, invalid) = stages::assemble_stage(&read_maps(&dir)?)?;
            write_pgr(&semantic, &dir.join("semantic.pgr"))?;
            write_json(&invalid, &dir.join("invalid.json"))?;
            Ok(())
        })?;
        assembled_fp.insert(ags, asm_fp);
    }

    // variants
    let mut order = cfg.ablations.clone();
    order.sort();
    order.dedup();
    for a in order {
        let dir = layout.variant(a);
        let src = layout.scd(a.ags());
        let mut parts: Vec<&dyn erased::Fp> = vec![&"constrain", &assembled_fp[&a.ags()]];
        if a.ags() {
            parts.push(&mask_fp);
        }
        if a.bdcn() {
            parts.push(fused_fp.as_ref().expect("parcels built"));
        }
        let constrain_fp = chain(&parts);
        let final_path = dir.join("final.pgr");
        r.stage(&format!("constrain/{}", a.slug()), &constrain_fp, &[final_path.clone(), dir.join("final.png")], || {
            let semantic: LabelRaster = read_pgr(&src.join("semantic.pgr"))?;
            let mask = if a.ags() { Some(read_mask(&layout.scene_mask())?) } else { None };
            let parcels = if a.bdcn() { Some(read_polygons(&layout.fused())?) } else { None };
            let map = stages::finalize(&semantic, mask.as_ref(), parcels.as_ref())?;
            write_pgr(&map, &final_path)?;
            stages::write_preview(&map, &cfg.palette, &dir.join("final.png"))
        })?;
        let eval_fp = chain(&[&"evaluate", &constrain_fp, &seed]);
        let report_path = dir.join("report.json");
        r.stage(&format!("evaluate/{}", a.slug()), &eval_fp, &[report_path.clone()], || {
            let scene = open_scene()?;
            let truth = scene.labels(files::SEMANTIC)?;
            let pred: LabelRaster = read_pgr(&final_path)?;
            same_grid(pred.grid(), &scene.grid(), "final map")?;
            let test = stages::split_mask(&scene, Split::Test);
            let (cm, rep) = stages::evaluate(&truth, &pred, Some(&test))?;
            let invalid: InvalidReport = serde_json::from_value(read_json(&src.join("invalid.json"))?)?;
            let parcels = if a.bdcn() { Some(read_polygons(&layout.fused())?) } else { None };
            let report = VariantReport {
                configuration: a.name().to_string(),
                seed,
                split: Split::Test,
                pixels: cm.total(),
                detailed: rep.detailed,
                overall: rep.overall,
                confusion: cm.counts.chunks(cm.n).map(<[u64]>::to_vec).collect(),
                invalid,
                categories: stages::categories(&pred, parcels.as_ref())?,
                parcels: parcels.as_ref().map(|p| p.len()),
                parcels_single_valued: parcels.as_ref().map(|p| stages::parcels_single_valued(&pred, p)),
            };
            Ok(write_json(&report, &report_path)?)
        })?;
        if !dry_run {
            let report: VariantReport = serde_json::from_value(read_json(&report_path)?)?;
            r.outcome.reports.insert(a, report);
        }
    }

    if !dry_run {
        let summary: BTreeMap<&str, &OverallReport> = r.outcome.reports.iter().map(|(a, rep)| (a.name(), &rep.overall)).collect();
        write_json(&summary, &layout.root.join("ablation.json"))?;
    }
    Ok(r.outcome)
}
