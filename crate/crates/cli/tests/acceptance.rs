//! Acceptance criteria, one line each on stdout.
//!
//! Run with `cargo test -p agsp-cli --test acceptance -- --nocapture` to see
//! the table as it is produced; it is also written to stdout directly, so it
//! shows up in plain `cargo test` output.

use std::collections::BTreeMap;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use agsp_cli::config::PipelineConfig;
use agsp_cli::{run_pipeline, Ablation};
use agsp_core::geom::{segment_distance, Point};
use agsp_core::metrics::{chance_agreement, f1_score, kappa, ConfusionMatrix};
use agsp_core::parcel::{extract_parcels, ParcelParams};
use agsp_core::scene::{divide_scene, LulcClass, LulcProduct, OsmLayers, TerrainThresholds};
use agsp_core::{polygonize, rasterize, slope_from_dem, Grid, Polygon, PolygonSet, Raster};
use agsp_nets::ccnet::{rcca, Ccam, ChangeHead};
use agsp_nets::check::{bdcn_check, module_suite, op_suite, scd_check, NETWORK_TOL, OP_TOL};
use agsp_tensor::init::{substream, uniform, Rng64};
use agsp_tensor::{ParamStore, Session, Tape, Tensor};
use rand::Rng;

const PRF_TABLE: &str = include_str!("../../core/tests/data/reported_prf.tsv");

const F1_TOL: f64 = 0.001;
const KAPPA_TOL: f64 = 1e-12;
const KAPPA_TRIALS: usize = 1000;
const GRADCHECK_SIZE: usize = 16;
const GRADCHECK_BUDGET: Duration = Duration::from_secs(300);
const ROW_SUM_TOL: f64 = 1e-6;
const LOCALITY_SEEDS: u64 = 20;
const REACH_MIN: f64 = 0.95;
const CCAM_TOL: f64 = 1e-5;
const LOSS_TOL: f64 = 1e-6;
const DIVISION_STACKS: u64 = 100;
const PARCEL_AREA_TOL: f64 = 0.10;
const ROUND_TRIPS: u64 = 100;
const MIN_F1: f64 = 0.85;
const MIN_MIOU: f64 = 0.70;
const RUN_SEED: u64 = 7;

type Outcome = (bool, String);

fn report(id: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let (ok, detail) = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
        (false, format!("panicked: {}", msg.unwrap_or_default()))
    });
    let line = format!(
        "[{}] {id:>2} {name}: {detail} ({:.1}s)\n",
        if ok { "PASS" } else { "FAIL" },
        t.elapsed().as_secs_f64()
    );
    let _ = std::io::stdout().write_all(line.as_bytes());
    ok
}

fn f1_rows() -> Outcome {
    let mut worst = 0.0f64;
    let mut rows = 0;
    for line in PRF_TABLE.lines().filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split('\t').collect();
        let (pre, rec, f1): (f64, f64, f64) = (f[4].parse().unwrap(), f[5].parse().unwrap(), f[6].parse().unwrap());
        worst = worst.max((f1_score(pre / 100.0, rec / 100.0) - f1).abs());
        rows += 1;
    }
    (worst <= F1_TOL && rows > 0, format!("{rows} rows, max |F1 - reported| {worst:.2e} (tol {F1_TOL})"))
}

fn kappa_binary(tp: f64, fp: f64, fn_: f64, tn: f64) -> f64 {
    let n = tp + fp + fn_ + tn;
    let po = (tp + tn) / n;
    let pe = ((tp + fn_) * (tp + fp) + (tn + fn_) * (tn + fp)) / (n * n);
    (po - pe) / (1.0 - pe)
}

fn kappa_forms() -> Outcome {
    let mut rng = substream(1, "kappa");
    let (mut worst, mut n) = (0.0f64, 0);
    while n < KAPPA_TRIALS {
        let c: Vec<u64> = (0..4).map(|_| rng.gen_range(0..1000)).collect();
        let cm = ConfusionMatrix::new(2, c.clone()).unwrap();
        if cm.total() == 0 || chance_agreement(&cm) == 1.0 {
            continue;
        }
        let (tp, fn_, fp, tn) = (c[0] as f64, c[1] as f64, c[2] as f64, c[3] as f64);
        worst = worst.max((kappa(&cm) - kappa_binary(tp, fp, fn_, tn)).abs());
        n += 1;
    }
    let uniform = kappa(&ConfusionMatrix::from_rows(&[&[25, 25], &[25, 25]]).unwrap());
    (
        worst <= KAPPA_TOL && uniform == 0.0,
        format!("{n} matrices, max diff {worst:.2e} (tol {KAPPA_TOL:.0e}); uniform matrix KC {uniform}"),
    )
}

fn gradchecks() -> Outcome {
    let t = Instant::now();
    let mut failed = Vec::new();
    let mut count = 0;
    for r in op_suite(11).unwrap().into_iter().chain(module_suite(12).unwrap()) {
        count += 1;
        if !(r.report.passed && r.report.tol <= OP_TOL && r.report.checked > 0) {
            failed.push(r.name);
        }
    }
    let bdcn = bdcn_check(13, GRADCHECK_SIZE, 4).unwrap();
    let scd = scd_check(14, GRADCHECK_SIZE, 4).unwrap();
    for (name, r) in [("bdcn", &bdcn), ("scd", &scd)] {
        count += 1;
        if !(r.passed && r.tol <= NETWORK_TOL) {
            failed.push(name.to_string());
        }
    }
    let elapsed = t.elapsed();
    (
        failed.is_empty() && elapsed <= GRADCHECK_BUDGET,
        format!(
            "{count} checks, failed {failed:?}; nets at {GRADCHECK_SIZE}x{GRADCHECK_SIZE}: bdcn {:.1e}, scd {:.1e} (tol {NETWORK_TOL:.0e}, ops {OP_TOL:.0e}), {} kink coordinates; {:.0}s of {}s",
            bdcn.max_rel_error,
            scd.max_rel_error,
            bdcn.kinks + scd.kinks,
            elapsed.as_secs_f64(),
            GRADCHECK_BUDGET.as_secs()
        ),
    )
}

fn pointwise(store: &ParamStore<f64>, name: &str, x: &[f64]) -> Vec<f64> {
    let find = |n: String| store.params().iter().find(|p| p.name == n).unwrap().value.data().to_vec();
    let (w, b) = (find(format!("{name}.weight")), find(format!("{name}.bias")));
    let cin = x.len();
    (0..b.len()).map(|o| b[o] + (0..cin).map(|i| w[o * cin + i] * x[i]).sum::<f64>()).collect()
}

fn ccam_oracle(store: &ParamStore<f64>, x: &Tensor<f64>) -> Vec<f64> {
    let (n, c, h, w) = x.dims4().unwrap();
    let d = x.data();
    let at = |b: usize, r: usize, s: usize| -> Vec<f64> { (0..c).map(|k| d[((b * c + k) * h + r) * w + s]).collect() };
    let mut out = vec![0.0; d.len()];
    for b in 0..n {
        for r in 0..h {
            for s in 0..w {
                let q = pointwise(store, "ccam.query", &at(b, r, s));
                let set: Vec<(usize, usize)> = (0..h).map(|j| (j, s)).chain((0..w).filter(|&i| i != s).map(|i| (r, i))).collect();
                let e: Vec<f64> = set
                    .iter()
                    .map(|&(j, i)| q.iter().zip(pointwise(store, "ccam.key", &at(b, j, i))).map(|(a, k)| a * k).sum())
                    .collect();
                let m = e.iter().cloned().fold(f64::MIN, f64::max);
                let z: f64 = e.iter().map(|v| (v - m).exp()).sum();
                let values: Vec<Vec<f64>> = set.iter().map(|&(j, i)| pointwise(store, "ccam.value", &at(b, j, i))).collect();
                let xu = at(b, r, s);
                for k in 0..c {
                    let ctx: f64 = values.iter().zip(&e).map(|(v, &ev)| (ev - m).exp() / z * v[k]).sum();
                    out[((b * c + k) * h + r) * w + s] = ctx + xu[k];
                }
            }
        }
    }
    out
}

fn ccam_store(c: usize, seed: u64) -> (ParamStore<f64>, Ccam) {
    let mut store = ParamStore::new();
    let ccam = Ccam::new(&mut store, "ccam", c, seed);
    let mut rng = substream(seed, "bias");
    for p in store.params_mut() {
        if p.name.ends_with(".bias") {
            p.value.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        }
    }
    (store, ccam)
}

/// Absolute input gradient per pixel of one weighted output pixel after `r` passes.
fn influence(store: &mut ParamStore<f64>, ccam: &Ccam, x: &Tensor<f64>, r: usize, p: usize, q: usize, rng: &mut Rng64) -> Vec<f64> {
    let (_, c, h, w) = x.dims4().unwrap();
    let tape = Tape::new();
    let mut s = Session::new(&tape, store, false);
    let xv = tape.leaf(x.clone());
    let y = rcca(&mut s, ccam, xv, r).unwrap();
    let mut weights = vec![0.0; c * h * w];
    for k in 0..c {
        weights[(k * h + p) * w + q] = rng.gen_range(0.5..1.5);
    }
    let l = tape.weighted_sum(y, weights).unwrap();
    let g = tape.backward(l).unwrap().get(xv).unwrap().to_vec();
    (0..h * w).map(|i| (0..c).map(|k| g[k * h * w + i].abs()).sum()).collect()
}

fn ccam_properties() -> Outcome {
    // (a) rows of the attention map
    let mut store = ParamStore::<f32>::new();
    let ccam = Ccam::new(&mut store, "ccam", 16, 4);
    let x = uniform::<f32>(&[2, 16, 7, 9], -3.0, 3.0, &mut substream(4, "x"));
    let tape = Tape::new();
    let mut s = Session::new(&tape, &mut store, false);
    let xv = tape.constant(x);
    let a = ccam.attention(&mut s, xv).unwrap();
    let a = tape.value(a);
    let (n, len, h, w) = a.dims4().unwrap();
    let mut row_err = 0.0f64;
    for b in 0..n {
        for p in 0..h * w {
            let sum: f64 = (0..len).map(|j| a.data()[(b * len + j) * h * w + p] as f64).sum();
            row_err = row_err.max((sum - 1.0).abs());
        }
    }
    let rows_ok = row_err <= ROW_SUM_TOL && len == h + w - 1;

    // (b) one pass reaches only the row and column
    let mut leaks = 0;
    for seed in 0..LOCALITY_SEEDS {
        let mut rng = substream(seed, "locality");
        let (h, w, c) = (rng.gen_range(3..8), rng.gen_range(3..8), 8);
        let (mut store, ccam) = ccam_store(c, seed);
        let x = uniform::<f64>(&[1, c, h, w], -1.0, 1.0, &mut rng);
        let (p, q) = (rng.gen_range(0..h), rng.gen_range(0..w));
        let g = influence(&mut store, &ccam, &x, 1, p, q, &mut rng);
        leaks += (0..h * w).filter(|&i| i / w != p && i % w != q && g[i] != 0.0).count();
    }

    // (c) two passes reach off-cross pixels
    let (mut hit, mut total) = (0usize, 0usize);
    for seed in 0..10 {
        let mut rng = substream(seed, "reach");
        let (h, w, c) = (6, 7, 8);
        let mut store = ParamStore::<f64>::new();
        let ccam = Ccam::new(&mut store, "ccam", c, seed);
        let x = uniform::<f64>(&[1, c, h, w], -1.0, 1.0, &mut rng);
        for _ in 0..4 {
            let (p, q) = (rng.gen_range(0..h), rng.gen_range(0..w));
            let g = influence(&mut store, &ccam, &x, 2, p, q, &mut rng);
            for i in (0..h * w).filter(|&i| i / w != p && i % w != q) {
                total += 1;
                hit += usize::from(g[i] > 0.0);
            }
        }
    }
    let reach = hit as f64 / total as f64;

    // (d) brute force
    let (store, ccam) = ccam_store(4, 1);
    let x = uniform::<f64>(&[1, 4, 5, 6], -1.0, 1.0, &mut substream(1, "x"));
    let want = ccam_oracle(&store, &x);
    let mut s32 = store.cast::<f32>();
    let tape = Tape::new();
    let mut s = Session::new(&tape, &mut s32, false);
    let xv = tape.constant(x.cast());
    let y = ccam.forward(&mut s, xv).unwrap();
    let brute = tape.value(y).data().iter().zip(&want).map(|(&a, b)| (a as f64 - b).abs()).fold(0.0, f64::max);

    (
        rows_ok && leaks == 0 && reach >= REACH_MIN && brute <= CCAM_TOL,
        format!(
            "(a) row sum err {row_err:.1e}; (b) {leaks} off-cross gradients over {LOCALITY_SEEDS} seeds; (c) reach {:.1}% (min {:.0}%); (d) brute force err {brute:.1e} (tol {CCAM_TOL:.0e})",
            reach * 100.0,
            REACH_MIN * 100.0
        ),
    )
}

fn change_logits(head: &ChangeHead, store: &mut ParamStore<f32>, a: &Tensor<f32>, b: &Tensor<f32>, train: bool) -> Vec<u32> {
    let tape = Tape::new();
    let mut s = Session::new(&tape, store, train);
    let (av, bv) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let z = head.forward(&mut s, av, bv).unwrap();
    let bits = tape.value(z).data().iter().map(|v| v.to_bits()).collect();
    bits
}

fn change_symmetry() -> Outcome {
    let mut differing = 0;
    let mut compared = 0;
    for seed in 0..10 {
        let mut store = ParamStore::<f32>::new();
        let head = ChangeHead::new(&mut store, "change", 8, seed);
        let mut rng = substream(seed, "features");
        let a = uniform::<f32>(&[2, 8, 5, 4], -2.0, 2.0, &mut rng);
        let b = uniform::<f32>(&[2, 8, 5, 4], -2.0, 2.0, &mut rng);
        for train in [false, true] {
            let ab = change_logits(&head, &mut store.clone(), &a, &b, train);
            let ba = change_logits(&head, &mut store.clone(), &b, &a, train);
            differing += ab.iter().zip(&ba).filter(|(x, y)| x != y).count();
            compared += ab.len();
        }
    }
    (differing == 0, format!("{differing} of {compared} logits differ bitwise after swapping dates"))
}

fn loss_decomposition(run: &Path) -> Outcome {
    let (mut worst, mut steps) = (0.0f64, 0);
    for tag in ["plain", "ags"] {
        let text = std::fs::read_to_string(run.join(format!("scd_{tag}/train_log.json"))).unwrap();
        let log: serde_json::Value = serde_json::from_str(&text).unwrap();
        for s in log["steps"].as_array().unwrap() {
            let l = &s["loss"];
            let f = |k: &str| l[k].as_f64().unwrap();
            worst = worst.max((f("total") - (f("cce_t1") + f("cce_t2") + 2.0 * f("bce"))).abs());
            steps += 1;
        }
    }
    (steps > 0 && worst <= LOSS_TOL, format!("{steps} logged steps, max |total - parts| {worst:.1e} (tol {LOSS_TOL:.0e})"))
}

fn class_map() -> BTreeMap<u16, LulcClass> {
    [
        (10, LulcClass::AgriTree),
        (20, LulcClass::AgriShrub),
        (40, LulcClass::AgriCrop),
        (50, LulcClass::Other),
        (80, LulcClass::Other),
    ]
    .into_iter()
    .collect()
}

struct Stack {
    a: LulcProduct,
    b: LulcProduct,
    dem: Raster<f32>,
    osm: OsmLayers,
}

fn random_stack(seed: u64) -> Stack {
    let mut r = substream(seed, "stack");
    let (w, h) = (r.gen_range(8..40), r.gen_range(8..40));
    let g = Grid::new(w, h, 1000.0, 2000.0, 2.0).unwrap();
    let ids = [10u16, 20, 40, 50, 80];
    let product = |r: &mut Rng64| LulcProduct::new(Raster::new(g, (0..w * h).map(|_| ids[r.gen_range(0..5)]).collect()).unwrap(), class_map()).unwrap();
    let (a, b) = (product(&mut r), product(&mut r));
    let dem = Raster::from_fn(g, |_, _| match r.gen_range(0..4) {
        0 => 93.0,
        _ => r.gen_range(60.0..110.0f32).round(),
    });
    let mut rect = || {
        let x0 = 1000.0 + r.gen_range(0.0..w as f64 * 2.0);
        let y0 = 2000.0 - r.gen_range(0.0..h as f64 * 2.0);
        let (dx, dy) = (r.gen_range(1.0..12.0), r.gen_range(1.0..12.0));
        Polygon::rect(x0, y0 - dy, x0 + dx, y0, 1)
    };
    let buildings = PolygonSet::new((0..3).map(|_| rect()).collect());
    let water = PolygonSet::new((0..2).map(|_| rect()).collect());
    let roads = (0..2)
        .map(|_| (0..3).map(|_| [1000.0 + r.gen_range(0.0..w as f64 * 2.0), 2000.0 - r.gen_range(0.0..h as f64 * 2.0)]).collect())
        .collect();
    Stack {
        a,
        b,
        dem,
        osm: OsmLayers {
            buildings,
            water,
            roads,
            road_width: 6.0,
        },
    }
}

fn winding_inside(p: &Polygon, x: f64, y: f64) -> bool {
    let mut wn = 0i32;
    for e in p.exterior.windows(2) {
        let ([x1, y1], [x2, y2]) = (e[0], e[1]);
        let cross = (x2 - x1) * (y - y1) - (x - x1) * (y2 - y1);
        if y1 <= y && y2 > y && cross > 0.0 {
            wn += 1;
        } else if y1 > y && y2 <= y && cross < 0.0 {
            wn -= 1;
        }
    }
    wn != 0
}

fn near_road(roads: &[Vec<Point>], half: f64, x: f64, y: f64) -> bool {
    roads.iter().any(|l| l.windows(2).any(|s| segment_distance([x, y], s[0], s[1]) <= half))
}

fn division_oracle(s: &Stack) -> Vec<u16> {
    let g = *s.dem.grid();
    let slope = slope_from_dem(&s.dem).unwrap();
    let cm = class_map();
    let t = TerrainThresholds::default();
    let mut out = Vec::with_capacity(g.width * g.height);
    for r in 0..g.height {
        for c in 0..g.width {
            let (ca, cb) = (cm[&s.a.labels.get(r, c)], cm[&s.b.labels.get(r, c)]);
            let agri = ca != LulcClass::Other || cb != LulcClass::Other;
            let crop = ca == LulcClass::AgriCrop || cb == LulcClass::AgriCrop;
            let steep = f64::from(s.dem.get(r, c)) > t.max_elev || f64::from(slope.get(r, c)) > t.max_slope;
            let (x, y) = g.cell_center(r, c);
            let osm = s.osm.buildings.iter().chain(s.osm.water.iter()).any(|p| winding_inside(p, x, y))
                || near_road(&s.osm.roads, s.osm.road_width / 2.0, x, y);
            out.push(u16::from(agri && !(!crop && steep) && !osm));
        }
    }
    out
}

fn scene_division() -> Outcome {
    let mut mismatched = Vec::new();
    for seed in 0..DIVISION_STACKS {
        let s = random_stack(seed);
        let d = divide_scene(&s.a, &s.b, &s.dem, &s.osm, TerrainThresholds::default()).unwrap();
        if d.scene.cells() != division_oracle(&s).as_slice() {
            mismatched.push(seed);
        }
    }
    (mismatched.is_empty(), format!("{DIVISION_STACKS} random stacks, mismatched seeds {mismatched:?}"))
}

fn nine_fields() -> Raster<f32> {
    const FIELD: usize = 30;
    const LINE: usize = 2;
    const MARGIN: usize = 6;
    let n = MARGIN * 2 + LINE + 3 * (FIELD + LINE);
    let on_line = |v: usize| v >= MARGIN && (v - MARGIN) % (FIELD + LINE) < LINE && v < n - MARGIN;
    let inside = |v: usize| v >= MARGIN && v < n - MARGIN;
    let gap_col = MARGIN + FIELD + LINE;
    let gap_row0 = MARGIN + LINE + FIELD + LINE + FIELD / 2;
    Raster::from_fn(Grid::pixels(n, n), |r, c| {
        let gap = (gap_col..gap_col + LINE).contains(&c) && (gap_row0..gap_row0 + 3).contains(&r);
        if ((on_line(r) && inside(c)) || (on_line(c) && inside(r))) && !gap {
            0.9
        } else {
            0.1
        }
    })
}

fn random_labels(w: usize, h: usize, k: u32, seed: u64) -> Raster<u32> {
    let mut r = substream(seed, "labels");
    let coarse: Vec<u32> = (0..(w / 2 + 1) * (h / 2 + 1)).map(|_| r.gen_range(0..=k)).collect();
    let mut m = Raster::from_fn(Grid::new(w, h, -30.0, 70.0, 0.5).unwrap(), |rr, cc| coarse[(rr / 2) * (w / 2 + 1) + cc / 2]);
    for _ in 0..w * h / 6 {
        let (rr, cc) = (r.gen_range(0..h), r.gen_range(0..w));
        m.set(rr, cc, r.gen_range(0..=k));
    }
    m
}

fn parcels() -> Outcome {
    let params = ParcelParams {
        extend_len: 4,
        ..Default::default()
    };
    let set = extract_parcels(&nine_fields(), &params).unwrap();
    let target = 900.0;
    let worst = set.iter().map(|p| (p.area() - target).abs() / target).fold(0.0, f64::max);
    let mut broken = Vec::new();
    for seed in 0..ROUND_TRIPS {
        let labels = random_labels(23, 17, 1 + (seed % 5) as u32, seed);
        if rasterize(&polygonize(&labels), *labels.grid()) != labels {
            broken.push(seed);
        }
    }
    (
        set.len() == 9 && worst <= PARCEL_AREA_TOL && broken.is_empty(),
        format!(
            "{} parcels, worst area error {:.1}% (tol {:.0}%); {ROUND_TRIPS} round trips, inexact {broken:?}",
            set.len(),
            worst * 100.0,
            PARCEL_AREA_TOL * 100.0
        ),
    )
}

fn end_to_end(run: &Path) -> Outcome {
    let mut cfg = PipelineConfig::default();
    cfg.seed = Some(RUN_SEED);
    cfg.ablations = Ablation::ALL.to_vec();
    let outcome = run_pipeline(&cfg, run, false).unwrap();
    let full = &outcome.reports[&Ablation::Full];
    let base = &outcome.reports[&Ablation::Base];
    let single = outcome.reports.values().filter(|r| r.parcels.is_some()).all(|r| r.parcels_single_valued == Some(true));
    let (f1, miou) = (full.overall.f1, full.overall.miou);
    (
        f1 >= MIN_F1 && miou >= MIN_MIOU && single && f1 >= base.overall.f1,
        format!(
            "full F1 {f1:.4} (min {MIN_F1}), mIoU {miou:.4} (min {MIN_MIOU}); BASE F1 {:.4}; parcels single-valued {single}",
            base.overall.f1
        ),
    )
}

fn determinism(first: &Path, second: &Path) -> Outcome {
    let mut cfg = PipelineConfig::default();
    cfg.seed = Some(RUN_SEED);
    cfg.ablations = vec![Ablation::Full];
    run_pipeline(&cfg, second, false).unwrap();
    let path = |root: &Path| root.join(format!("variants/{}/report.json", Ablation::Full.slug()));
    let (a, b) = (std::fs::read(path(first)).unwrap(), std::fs::read(path(second)).unwrap());
    (a == b, format!("report.json of two runs with seed {RUN_SEED}: {} vs {} bytes, identical {}", a.len(), b.len(), a == b))
}

#[test]
fn acceptance() {
    let runs = tempfile::tempdir().unwrap();
    let (first, second) = (runs.path().join("ablation"), runs.path().join("repeat"));
    let results = [
        report(1, "F1 reproduces reported rows", f1_rows),
        report(2, "kappa agrees with the binary form", kappa_forms),
        report(3, "gradient checks", gradchecks),
        report(4, "criss-cross attention", ccam_properties),
        report(5, "change head is symmetric", change_symmetry),
        report(9, "end-to-end synthetic run", || end_to_end(&first)),
        report(6, "total loss decomposes", || loss_decomposition(&first)),
        report(7, "scene division matches per-cell oracle", scene_division),
        report(8, "parcel extraction and round trips", parcels),
        report(10, "seeded runs are byte-identical", || determinism(&first, &second)),
    ];
    let failed = results.iter().filter(|&&ok| !ok).count();
    let _ = std::io::stdout().write_all(format!("acceptance: {} of {} criteria pass\n", results.len() - failed, results.len()).as_bytes());
    assert_eq!(failed, 0);
}
