use std::collections::BTreeMap;

use agsp_core::geom::{segment_distance, Point};
use agsp_core::scene::{
    clip, divide_scene, lulc_union, osm_cover, preselect_agriculture, remove_osm, terrain_filter, LulcClass,
    LulcProduct, OsmLayers, TerrainThresholds,
};
use agsp_core::{slope_from_dem, Grid, Polygon, PolygonSet, Raster};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

fn class_map() -> BTreeMap<u16, LulcClass> {
    // raw ids loosely follow a land-cover legend
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

fn product(grid: Grid, cells: Vec<u16>) -> LulcProduct {
    LulcProduct::new(Raster::new(grid, cells).unwrap(), class_map()).unwrap()
}

#[test]
fn crop_in_either_product_is_kept() {
    let g = Grid::pixels(2, 1);
    let a = product(g, vec![40, 50]);
    let b = product(g, vec![50, 80]);
    assert_eq!(preselect_agriculture(&a, &b).unwrap().cells(), &[1, 0]);
}

#[test]
fn unknown_raw_class_is_rejected() {
    let g = Grid::pixels(2, 1);
    assert!(LulcProduct::new(Raster::new(g, vec![40, 99]).unwrap(), class_map()).is_err());
}

#[test]
fn misaligned_products_are_rejected() {
    let a = product(Grid::pixels(2, 1), vec![40, 50]);
    let b = product(Grid::new(2, 1, 1.0, 0.0, 1.0).unwrap(), vec![40, 50]);
    assert!(preselect_agriculture(&a, &b).is_err());
}

#[test]
fn preselect_matches_per_cell_rule() {
    let mut r = Xoshiro256PlusPlus::seed_from_u64(8);
    let ids = [10u16, 20, 40, 50, 80];
    let g = Grid::pixels(30, 20);
    for _ in 0..20 {
        let a = product(g, (0..600).map(|_| ids[r.gen_range(0..5)]).collect());
        let b = product(g, (0..600).map(|_| ids[r.gen_range(0..5)]).collect());
        let m = preselect_agriculture(&a, &b).unwrap();
        for i in 0..600 {
            let agri = |v: u16| matches!(v, 10 | 20 | 40);
            assert_eq!(m.cells()[i] == 1, agri(a.labels.cells()[i]) || agri(b.labels.cells()[i]));
        }
    }
}

fn one_cell(class: LulcClass, elev: f32, slope: f32) -> u16 {
    let g = Grid::pixels(1, 1);
    terrain_filter(
        &Raster::filled(g, 1),
        &Raster::filled(g, class as u16),
        &Raster::filled(g, elev),
        &Raster::filled(g, slope),
        TerrainThresholds::default(),
    )
    .unwrap()
    .cells()[0]
}

#[test]
fn terrain_thresholds_are_strict() {
    assert_eq!(one_cell(LulcClass::AgriTree, 100.0, 0.0), 0);
    assert_eq!(one_cell(LulcClass::AgriTree, 93.0, 16.0), 1);
    assert_eq!(one_cell(LulcClass::AgriShrub, 50.0, 16.5), 0);
    assert_eq!(one_cell(LulcClass::AgriCrop, 150.0, 40.0), 1);
}

#[test]
fn terrain_filter_requires_alignment() {
    let g = Grid::pixels(2, 2);
    let other = Grid::pixels(2, 3);
    assert!(terrain_filter(
        &Raster::filled(g, 1),
        &Raster::filled(g, 2),
        &Raster::filled(other, 0.0),
        &Raster::filled(g, 0.0),
        TerrainThresholds::default()
    )
    .is_err());
}

#[test]
fn empty_osm_is_identity() {
    let m = Raster::from_fn(Grid::pixels(6, 5), |r, c| ((r + c) % 2) as u16);
    assert_eq!(remove_osm(&m, &OsmLayers::default()).unwrap(), m);
}

#[test]
fn building_block_is_removed() {
    let m = Raster::filled(Grid::pixels(6, 6), 1u16);
    let osm = OsmLayers {
        buildings: PolygonSet::new(vec![Polygon::rect(2.0, -4.0, 4.0, -2.0, 1)]),
        ..Default::default()
    };
    let out = remove_osm(&m, &osm).unwrap();
    assert_eq!(out.count_nonzero(), 32);
    for (r, c) in [(2, 2), (2, 3), (3, 2), (3, 3)] {
        assert_eq!(out.get(r, c), 0);
    }
}

#[test]
fn roads_need_positive_width() {
    let osm = OsmLayers {
        roads: vec![vec![[0.0, 0.0], [3.0, -3.0]]],
        road_width: 0.0,
        ..Default::default()
    };
    assert!(osm_cover(Grid::pixels(4, 4), &osm).is_err());
}

#[test]
fn clip_selects_per_cell() {
    let g = Grid::pixels(8, 8);
    let mut r = Xoshiro256PlusPlus::seed_from_u64(2);
    let img = Raster::from_fn(g, |_, _| [r.gen::<u8>(), r.gen(), r.gen()]);
    assert_eq!(clip(&img, &Raster::filled(g, 1), [0; 3]).unwrap(), img);
    assert!(clip(&img, &Raster::filled(g, 0), [0; 3]).unwrap().cells().iter().all(|&p| p == [0; 3]));
    let checker = Raster::from_fn(g, |r, c| ((r + c) % 2) as u16);
    let out = clip(&img, &checker, [0; 3]).unwrap();
    for i in 0..64 {
        let want = if checker.cells()[i] == 1 { img.cells()[i] } else { [0; 3] };
        assert_eq!(out.cells()[i], want);
    }
}

struct Stack {
    a: LulcProduct,
    b: LulcProduct,
    dem: Raster<f32>,
    osm: OsmLayers,
}

fn random_stack(seed: u64) -> Stack {
    let mut r = Xoshiro256PlusPlus::seed_from_u64(seed);
    let (w, h) = (r.gen_range(8..40), r.gen_range(8..40));
    let g = Grid::new(w, h, 1000.0, 2000.0, 2.0).unwrap();
    let ids = [10u16, 20, 40, 50, 80];
    let a = product(g, (0..w * h).map(|_| ids[r.gen_range(0..5)]).collect());
    let b = product(g, (0..w * h).map(|_| ids[r.gen_range(0..5)]).collect());
    // terraced DEM with a share of cells exactly at the elevation limit
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
        .map(|_| {
            (0..3)
                .map(|_| [1000.0 + r.gen_range(0.0..w as f64 * 2.0), 2000.0 - r.gen_range(0.0..h as f64 * 2.0)])
                .collect()
        })
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

fn inside_polygon(p: &Polygon, x: f64, y: f64) -> bool {
    // winding-number test, independent of the even-odd code under test
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

/// The whole division as one per-cell predicate.
fn oracle(s: &Stack) -> Vec<u16> {
    let g = *s.dem.grid();
    let slope = slope_from_dem(&s.dem).unwrap();
    let cm = class_map();
    (0..g.height)
        .flat_map(|r| (0..g.width).map(move |c| (r, c)))
        .map(|(r, c)| {
            let (ca, cb) = (cm[&s.a.labels.get(r, c)], cm[&s.b.labels.get(r, c)]);
            let agri = ca != LulcClass::Other || cb != LulcClass::Other;
            let crop = ca == LulcClass::AgriCrop || cb == LulcClass::AgriCrop;
            let woody = !crop && agri;
            let steep = s.dem.get(r, c) > 93.0 || slope.get(r, c) > 16.0;
            let (x, y) = g.cell_center(r, c);
            let osm = s.osm.buildings.iter().chain(s.osm.water.iter()).any(|p| inside_polygon(p, x, y))
                || near_road(&s.osm.roads, 3.0, x, y);
            u16::from(agri && !(woody && steep) && !osm)
        })
        .collect()
}

#[test]
fn staged_division_equals_single_pass_predicate() {
    for seed in 0..100 {
        let s = random_stack(seed);
        let d = divide_scene(&s.a, &s.b, &s.dem, &s.osm, TerrainThresholds::default()).unwrap();
        assert_eq!(d.scene.cells(), oracle(&s).as_slice(), "seed {seed}");
        // each stage only removes cells
        for i in 0..d.scene.cells().len() {
            assert!(d.preselected.cells()[i] >= d.terrain.cells()[i]);
            assert!(d.terrain.cells()[i] >= d.scene.cells()[i]);
        }
    }
}

#[test]
fn division_is_deterministic() {
    let s = random_stack(5);
    let a = divide_scene(&s.a, &s.b, &s.dem, &s.osm, TerrainThresholds::default()).unwrap();
    let b = divide_scene(&s.a, &s.b, &s.dem, &s.osm, TerrainThresholds::default()).unwrap();
    assert_eq!(a.scene, b.scene);
}

#[test]
fn osm_removal_equals_rasterize_then_subtract() {
    for seed in 0..20 {
        let s = random_stack(seed + 500);
        let g = *s.dem.grid();
        let m = Raster::filled(g, 1u16);
        let out = remove_osm(&m, &s.osm).unwrap();
        for r in 0..g.height {
            for c in 0..g.width {
                let (x, y) = g.cell_center(r, c);
                let covered = s.osm.buildings.iter().chain(s.osm.water.iter()).any(|p| inside_polygon(p, x, y))
                    || near_road(&s.osm.roads, 3.0, x, y);
                assert_eq!(out.get(r, c), u16::from(!covered));
            }
        }
    }
}

#[test]
fn coarse_land_cover_is_resampled() {
    let fine = Grid::new(8, 8, 0.0, 8.0, 1.0).unwrap();
    let coarse = Grid::new(2, 2, 0.0, 8.0, 4.0).unwrap();
    let a = product(coarse, vec![40, 50, 50, 10]);
    let b = product(coarse, vec![50, 50, 50, 50]);
    let dem = Raster::filled(fine, 10.0f32);
    let d = divide_scene(&a, &b, &dem, &OsmLayers::default(), TerrainThresholds::default()).unwrap();
    assert_eq!(d.scene.count_nonzero(), 32);
    assert_eq!(d.scene.get(0, 0), 1);
    assert_eq!(d.scene.get(7, 7), 1);
    assert_eq!(d.scene.get(0, 7), 0);
    let u = lulc_union(&a, &b).unwrap();
    assert_eq!(u.cells(), &[LulcClass::AgriCrop as u16, 0, 0, LulcClass::AgriTree as u16]);
}
