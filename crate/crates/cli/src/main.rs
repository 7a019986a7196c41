use std::path::PathBuf;
use std::process::ExitCode;

use agsp_cli::config::{stage_seed, PipelineConfig};
use agsp_cli::error::{CliError, Result};
use agsp_cli::stages;
use agsp_cli::synth::{self, SceneDir, Split};
use agsp_cli::run_pipeline;
use agsp_core::io::{read_pgr, read_polygons, write_json, write_pgr, write_polygons};
use agsp_core::{FloatRaster, LabelRaster, Mask};
use agsp_nets::check;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "agsp", version, about = "Crop semantic change detection on bi-temporal imagery")]
struct Cli {
    /// JSON pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Print what would run and exit.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Agricultural scene mask from land cover, DEM and OSM layers.
    SceneDivide {
        #[arg(long)]
        scene: PathBuf,
    },
    /// Train the edge network on the training tiles.
    EdgeTrain {
        #[arg(long)]
        scene: PathBuf,
    },
    /// Edge probability maps for both dates.
    EdgeInfer {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Parcels from an edge probability map.
    ParcelExtract {
        #[arg(long)]
        edges: PathBuf,
    },
    /// Overlay the parcels of two dates.
    ParcelFuse {
        #[arg(long)]
        t1: PathBuf,
        #[arg(long)]
        t2: PathBuf,
        /// Any raster on the target grid.
        #[arg(long)]
        like: PathBuf,
    },
    /// Train the change network.
    ScdTrain {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        scene_mask: Option<PathBuf>,
    },
    /// Segmentations and change mask for the whole scene.
    ScdInfer {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scene_mask: Option<PathBuf>,
    },
    /// Semantic change map from segmentations and change mask.
    Assemble {
        #[arg(long)]
        seg_t1: PathBuf,
        #[arg(long)]
        seg_t2: PathBuf,
        #[arg(long)]
        change: PathBuf,
    },
    /// Scene clipping and parcel majority labelling.
    Constrain {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        parcels: Option<PathBuf>,
        #[arg(long)]
        scene_mask: Option<PathBuf>,
    },
    /// Accuracy report of a prediction against truth.
    Evaluate {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Restrict to one split of a scene's tiles (needs --scene).
        #[arg(long, value_enum, requires = "scene")]
        split: Option<SplitArg>,
        #[arg(long)]
        scene: Option<PathBuf>,
    },
    /// Generate a synthetic scene.
    Synth,
    /// The whole pipeline, for every configured ablation.
    Run,
    /// Finite-difference gradient checks of every operation and both networks.
    Gradcheck {
        #[arg(long, default_value_t = 16)]
        size: usize,
        /// Sampled coordinates per parameter tensor.
        #[arg(long, default_value_t = 4)]
        coords: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    Ok(cfg)
}

fn plan(outputs: &[PathBuf]) {
    for o in outputs {
        println!("would write {}", o.display());
    }
}

fn read_mask(path: &Option<PathBuf>) -> Result<Option<Mask>> {
    path.as_ref().map(|p| Ok(read_pgr(p)?)).transpose()
}

/// Class-id palette for segmentation and change previews.
const CLASS_PALETTE: [[u8; 3]; 5] = [[0, 0, 0], [78, 170, 62], [46, 112, 128], [168, 212, 70], [232, 206, 48]];
const CHANGE_PREVIEW: [[u8; 3]; 2] = [[0, 0, 0], [255, 255, 255]];

fn execute(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    let out = cli.out.clone();
    let o = |name: &str| out.join(name);
    match &cli.command {
        Command::Run => {
            let outcome = run_pipeline(&cfg, &out, cli.dry_run)?;
            if !cli.dry_run {
                println!("{:<16} {:>7} {:>7} {:>7} {:>7} {:>7} {:>7}", "configuration", "Pre", "Rec", "F1", "KC", "OA", "mIoU");
                for (a, r) in &outcome.reports {
                    let m = &r.overall;
                    println!(
                        "{:<16} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4} {:>7.4}",
                        a.name(),
                        m.pre,
                        m.rec,
                        m.f1,
                        m.kc,
                        m.oa,
                        m.miou
                    );
                }
            }
        }
        Command::Synth => {
            let seed = cfg.require_seed()?;
            cfg.synth.validate()?;
            if cli.dry_run {
                plan(&[o(synth::files::MANIFEST)]);
                return Ok(());
            }
            let scene = synth::synth(&cfg.synth, seed)?;
            synth::write_scene(&scene, &out)?;
            println!("{} tiles, {} parcels", scene.manifest.tiles.len(), scene.manifest.parcel_total);
        }
        Command::SceneDivide { scene } => {
            let scene = SceneDir::open(scene)?;
            if cli.dry_run {
                plan(&[o("scene_mask.pgr"), o("stats.json")]);
                return Ok(());
            }
            let d = stages::scene_divide(&scene, &cfg.scene)?;
            write_pgr(&d.scene, &o("scene_mask.pgr"))?;
            write_json(&stages::division_stats(&d), &o("stats.json"))?;
        }
        Command::EdgeTrain { scene } => {
            let seed = cfg.require_seed()?;
            let scene = SceneDir::open(scene)?;
            if cli.dry_run {
                plan(&[o("model"), o("train_log.json")]);
                return Ok(());
            }
            let log = stages::edge_train(&scene, &cfg.edge, stage_seed(seed, "edge"), &o("model"))?;
            write_json(&log, &o("train_log.json"))?;
        }
        Command::EdgeInfer { scene, model } => {
            let scene = SceneDir::open(scene)?;
            if cli.dry_run {
                plan(&[o("edges_t1.pgr"), o("edges_t2.pgr")]);
                return Ok(());
            }
            let maps = stages::edge_infer(&scene, model)?;
            write_pgr(&maps[0], &o("edges_t1.pgr"))?;
            write_pgr(&maps[1], &o("edges_t2.pgr"))?;
        }
        Command::ParcelExtract { edges } => {
            if cli.dry_run {
                plan(&[o("parcels.geojson")]);
                return Ok(());
            }
            let edges: FloatRaster = read_pgr(edges)?;
            let set = stages::parcel_extract(&edges, &cfg.parcel)?;
            write_polygons(&set, &o("parcels.geojson"))?;
            println!("{} parcels", set.len());
        }
        Command::ParcelFuse { t1, t2, like } => {
            if cli.dry_run {
                plan(&[o("fused.geojson")]);
                return Ok(());
            }
            let grid = match read_pgr::<u16>(like) {
                Ok(r) => *r.grid(),
                Err(_) => *read_pgr::<f32>(like)?.grid(),
            };
            let fused = stages::parcel_fuse(&read_polygons(t1)?, &read_polygons(t2)?, grid, cfg.fuse_min_area);
            write_polygons(&fused, &o("fused.geojson"))?;
            println!("{} parcels", fused.len());
        }
        Command::ScdTrain { scene, scene_mask } => {
            let seed = cfg.require_seed()?;
            let scene = SceneDir::open(scene)?;
            if cli.dry_run {
                plan(&[o("model"), o("train_log.json")]);
                return Ok(());
            }
            let mask = read_mask(scene_mask)?;
            let log = stages::scd_train_stage(&scene, mask.as_ref(), &cfg.scd, stage_seed(seed, "scd"), &o("model"), |e| {
                eprintln!("epoch {}: train loss {:.4}", e.epoch, e.train_loss);
            })?;
            write_json(&log, &o("train_log.json"))?;
        }
        Command::ScdInfer { scene, model, scene_mask } => {
            let scene = SceneDir::open(scene)?;
            let names = ["seg_t1", "seg_t2", "change"];
            if cli.dry_run {
                plan(&names.map(|n| o(&format!("{n}.pgr"))));
                return Ok(());
            }
            let mask = read_mask(scene_mask)?;
            let maps = stages::scd_infer_stage(&scene, mask.as_ref(), model)?;
            for (n, m) in names.iter().zip([&maps.seg_t1, &maps.seg_t2, &maps.change]) {
                write_pgr(m, &o(&format!("{n}.pgr")))?;
                let palette: &[[u8; 3]] = if *n == "change" { &CHANGE_PREVIEW } else { &CLASS_PALETTE };
                stages::write_preview(m, palette, &o(&format!("{n}.png")))?;
            }
        }
        Command::Assemble { seg_t1, seg_t2, change } => {
            if cli.dry_run {
                plan(&[o("semantic.pgr"), o("invalid.json"), o("semantic.png")]);
                return Ok(());
            }
            let maps = stages::ScdMaps {
                seg_t1: read_pgr(seg_t1)?,
                seg_t2: read_pgr(seg_t2)?,
                change: read_pgr(change)?,
            };
            let (map, invalid) = stages::assemble_stage(&maps)?;
            write_pgr(&map, &o("semantic.pgr"))?;
            write_json(&invalid, &o("invalid.json"))?;
            stages::write_preview(&map, &cfg.palette, &o("semantic.png"))?;
            println!("{} changed pixels with an unlisted class pair", invalid.total);
        }
        Command::Constrain { map, parcels, scene_mask } => {
            if cli.dry_run {
                plan(&[o("constrained.pgr"), o("constrained.png"), o("categories.json")]);
                return Ok(());
            }
            let map: LabelRaster = read_pgr(map)?;
            let parcels = parcels.as_ref().map(|p| read_polygons(p)).transpose()?;
            let mask = read_mask(scene_mask)?;
            let out_map = stages::finalize(&map, mask.as_ref(), parcels.as_ref())?;
            write_pgr(&out_map, &o("constrained.pgr"))?;
            stages::write_preview(&out_map, &cfg.palette, &o("constrained.png"))?;
            write_json(&stages::categories(&out_map, parcels.as_ref())?, &o("categories.json"))?;
        }
        Command::Evaluate { truth, pred, mask, split, scene } => {
            if cli.dry_run {
                plan(&[o("report.json")]);
                return Ok(());
            }
            let truth: LabelRaster = read_pgr(truth)?;
            let pred: LabelRaster = read_pgr(pred)?;
            let mut mask = read_mask(mask)?;
            if let (Some(split), Some(scene)) = (split, scene) {
                let split = match split {
                    SplitArg::Train => Split::Train,
                    SplitArg::Val => Split::Val,
                    SplitArg::Test => Split::Test,
                };
                let m = stages::split_mask(&SceneDir::open(scene)?, split);
                mask = Some(match mask {
                    Some(prev) => {
                        prev.ensure_aligned(&m, "evaluate")?;
                        let cells = prev.cells().iter().zip(m.cells()).map(|(&a, &b)| u16::from(a != 0 && b != 0)).collect();
                        agsp_core::Raster::new(*m.grid(), cells)?
                    }
                    None => m,
                });
            }
            let (_, report) = stages::evaluate(&truth, &pred, mask.as_ref())?;
            write_json(&report, &o("report.json"))?;
            let m = report.overall;
            println!("Pre {:.4} Rec {:.4} F1 {:.4} KC {:.4} OA {:.4} mIoU {:.4}", m.pre, m.rec, m.f1, m.kc, m.oa, m.miou);
        }
        Command::Gradcheck { size, coords } => {
            if cli.dry_run {
                println!("would check every operation, SEM, CCAM and both networks at {size}×{size}");
                return Ok(());
            }
            let seed = cfg.seed.unwrap_or(0);
            let mut failed = 0;
            let mut show = |name: &str, r: &agsp_tensor::gradcheck::GradcheckReport| {
                println!(
                    "{} {name}: max rel error {:.2e} over {} coordinates, {} on kinks (tol {:.0e})",
                    if r.passed { "pass" } else { "FAIL" },
                    r.max_rel_error,
                    r.checked,
                    r.kinks,
                    r.tol
                );
                failed += usize::from(!r.passed);
            };
            for r in check::op_suite(seed)?.iter().chain(&check::module_suite(seed)?) {
                show(&r.name, &r.report);
            }
            show("bdcn", &check::bdcn_check(seed, *size, *coords)?);
            show("scd", &check::scd_check(seed, *size, *coords)?);
            if failed > 0 {
                return Err(CliError::Numerical(format!("{failed} gradient checks failed")));
            }
        }
    }
    Ok(())
}
