//! Edge-probability map to farmland parcels, and bi-temporal parcel fusion.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{invalid, Result};
use crate::geom::{polygonize, rasterize, simplify_polygon, Polygon, PolygonSet};
use crate::morph::{dilate, label_regions, skeletonize, Connectivity};
use crate::raster::{FloatRaster, Grid, Mask, Raster};

/// Polygons labelled with unique parcel ids, each with an `area` property.
pub type ParcelSet = PolygonSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParcelParams {
    pub threshold: f64,
    pub dilate_radius: usize,
    /// Pixels.
    pub min_area: usize,
    /// Pixels.
    pub simplify_tol: f64,
    pub extend_len: usize,
    pub dangle_len: usize,
}

impl Default for ParcelParams {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            dilate_radius: 1,
            min_area: 25,
            simplify_tol: 1.0,
            extend_len: 8,
            dangle_len: 5,
        }
    }
}

pub fn binarize(edges: &FloatRaster, threshold: f64) -> Result<Mask> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return invalid("binarize", format!("threshold must lie in (0, 1), got {threshold}"));
    }
    Ok(edges.map(|p| u16::from(p as f64 >= threshold)))
}

struct Img {
    px: Vec<u8>,
    w: usize,
    h: usize,
}

const RING: [(isize, isize); 8] = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)];

impl Img {
    fn from_mask(m: &Mask) -> Self {
        Self {
            px: m.cells().iter().map(|&v| u8::from(v != 0)).collect(),
            w: m.width(),
            h: m.height(),
        }
    }

    fn to_mask(&self, grid: Grid) -> Mask {
        Raster::new(grid, self.px.iter().map(|&v| u16::from(v)).collect()).expect("same grid")
    }

    fn inside(&self, r: isize, c: isize) -> bool {
        r >= 0 && c >= 0 && (r as usize) < self.h && (c as usize) < self.w
    }

    fn fg(&self, r: isize, c: isize) -> bool {
        self.inside(r, c) && self.px[r as usize * self.w + c as usize] != 0
    }

    fn ring(&self, r: isize, c: isize) -> [bool; 8] {
        RING.map(|(dr, dc)| self.fg(r + dr, c + dc))
    }

    fn degree(&self, r: isize, c: isize) -> usize {
        self.ring(r, c).iter().filter(|&&v| v).count()
    }

    /// Number of separate neighbour arcs around a pixel.
    fn arcs(&self, r: isize, c: isize) -> usize {
        let p = self.ring(r, c);
        (0..8).filter(|&k| !p[k] && p[(k + 1) % 8]).count()
    }

    fn is_endpoint(&self, r: isize, c: isize) -> bool {
        self.fg(r, c) && (1..=2).contains(&self.degree(r, c)) && self.arcs(r, c) == 1
    }

    /// Walk from an end pixel along its branch for at most `max` steps,
    /// stopping after a junction pixel.
    fn branch(&self, start: (isize, isize), max: usize) -> (Vec<(isize, isize)>, bool) {
        let mut path = vec![start];
        let mut cur = start;
        for _ in 0..max {
            let next = RING
                .iter()
                .map(|&(dr, dc)| (cur.0 + dr, cur.1 + dc))
                .filter(|&p| self.fg(p.0, p.1) && !path.contains(&p))
                .min_by_key(|p| (p.0 - cur.0).abs() + (p.1 - cur.1).abs());
            let Some(next) = next else {
                return (path, false);
            };
            path.push(next);
            if self.arcs(next.0, next.1) >= 3 {
                return (path, true);
            }
            cur = next;
        }
        (path, false)
    }
}

/// Extend each dangling end straight along the direction of its last five
/// pixels. An extension is kept only if it reaches other skeleton pixels or
/// leaves the raster within `extend_len` steps.
pub fn extend_endpoints(skel: &Mask, extend_len: usize) -> Mask {
    let mut img = Img::from_mask(skel);
    if extend_len == 0 {
        return skel.clone();
    }
    let ends: Vec<(isize, isize)> = (0..img.h as isize)
        .flat_map(|r| (0..img.w as isize).map(move |c| (r, c)))
        .filter(|&(r, c)| img.is_endpoint(r, c))
        .collect();
    for e in ends {
        if !img.is_endpoint(e.0, e.1) {
            continue;
        }
        let (own, _) = img.branch(e, 2 * extend_len + 5);
        if own.len() < 2 {
            continue;
        }
        let tail = own[own.len().min(6) - 1];
        let (dr, dc) = ((e.0 - tail.0) as f64, (e.1 - tail.1) as f64);
        let norm = dr.abs().max(dc.abs());
        if norm == 0.0 {
            continue;
        }
        let mut path: Vec<(isize, isize)> = Vec::new();
        let mut hit = false;
        for t in 1..=extend_len {
            let p = (
                e.0 + (t as f64 * dr / norm).round() as isize,
                e.1 + (t as f64 * dc / norm).round() as isize,
            );
            if !img.inside(p.0, p.1) {
                hit = true;
                break;
            }
            let foreign =
                |q: (isize, isize), path: &[(isize, isize)]| img.fg(q.0, q.1) && !own.contains(&q) && !path.contains(&q);
            if foreign(p, &path) {
                hit = true;
                break;
            }
            path.push(p);
            if RING.iter().any(|&(a, b)| foreign((p.0 + a, p.1 + b), &path)) {
                hit = true;
                break;
            }
        }
        if hit {
            for (r, c) in path {
                img.px[r as usize * img.w + c as usize] = 1;
            }
        }
    }
    img.to_mask(*skel.grid())
}

/// Remove branches shorter than `dangle_len` pixels that end freely.
pub fn prune_dangles(skel: &Mask, dangle_len: usize) -> Mask {
    let mut img = Img::from_mask(skel);
    let ends: Vec<(isize, isize)> = (0..img.h as isize)
        .flat_map(|r| (0..img.w as isize).map(move |c| (r, c)))
        .filter(|&(r, c)| img.is_endpoint(r, c))
        .collect();
    for e in ends {
        if !img.is_endpoint(e.0, e.1) {
            continue;
        }
        let (path, junction) = img.branch(e, dangle_len);
        let len = if junction { path.len() - 1 } else { path.len() };
        let free_end = !junction && img.is_endpoint(path[path.len() - 1].0, path[path.len() - 1].1);
        if len < dangle_len && (junction || free_end || path.len() == 1) {
            for &(r, c) in &path[..len] {
                img.px[r as usize * img.w + c as usize] = 0;
            }
        }
    }
    img.to_mask(*skel.grid())
}

/// Steps from probability map to a closed 1-pixel edge network.
pub fn edge_network(edges: &FloatRaster, p: &ParcelParams) -> Result<Mask> {
    let bin = binarize(edges, p.threshold)?;
    let thick = dilate(&bin, p.dilate_radius);
    let skel = skeletonize(&thick);
    let extended = extend_endpoints(&skel, p.extend_len);
    Ok(prune_dangles(&extended, p.dangle_len))
}

/// Parcel ids from an edge network: 4-connected non-edge regions, minus the
/// largest region touching the border and regions under `min_area` cells.
/// Enclosed gaps bordering a single parcel are absorbed into it. Ids follow
/// raster-scan order.
pub fn parcel_raster(network: &Mask, min_area: usize) -> Raster<u32> {
    let (comp, n) = label_regions(network, Connectivity::Four, |v| v == 0, |_, _| true);
    let (w, h) = (network.width(), network.height());
    let mut size = vec![0usize; n as usize + 1];
    let mut border = vec![false; n as usize + 1];
    for (i, &k) in comp.cells().iter().enumerate() {
        size[k as usize] += 1;
        let (r, c) = (i / w, i % w);
        if r == 0 || c == 0 || r + 1 == h || c + 1 == w {
            border[k as usize] = true;
        }
    }
    let background = (1..=n as usize).filter(|&k| border[k]).max_by_key(|&k| (size[k], std::cmp::Reverse(k)));
    let keep: Vec<bool> = (0..=n as usize)
        .map(|k| k != 0 && Some(k) != background && size[k] >= min_area)
        .collect();
    let mut ids = comp.map(|k| if keep[k as usize] { k } else { 0 });

    // absorb enclosed voids that touch exactly one parcel
    let (voids, nv) = label_regions(&ids, Connectivity::Four, |v| v == 0, |_, _| true);
    let mut owner: Vec<Option<u32>> = vec![None; nv as usize + 1];
    let mut shared = vec![false; nv as usize + 1];
    for r in 0..h {
        for c in 0..w {
            let v = voids.get(r, c) as usize;
            if v == 0 {
                continue;
            }
            if r == 0 || c == 0 || r + 1 == h || c + 1 == w {
                shared[v] = true;
            }
            for (dr, dc) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                    continue;
                }
                let p = ids.get(nr as usize, nc as usize);
                if p == 0 {
                    continue;
                }
                match owner[v] {
                    None => owner[v] = Some(p),
                    Some(o) if o != p => shared[v] = true,
                    _ => {}
                }
            }
        }
    }
    for (cell, &v) in ids.cells_mut().iter_mut().zip(voids.cells()) {
        if v != 0 && !shared[v as usize] {
            if let Some(o) = owner[v as usize] {
                *cell = o;
            }
        }
    }
    renumber(&ids)
}

/// Relabel nonzero 4-connected same-id regions 1..k in raster-scan order.
pub fn renumber(ids: &Raster<u32>) -> Raster<u32> {
    label_regions(ids, Connectivity::Four, |v| v != 0, |a, b| a == b).0
}

fn footprint_ok(poly: &Polygon, grid: &Grid, cells: usize) -> bool {
    // rasterize on the polygon's own window
    let ps = grid.pixel_size;
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for v in &poly.exterior {
        x0 = x0.min(v[0]);
        x1 = x1.max(v[0]);
        y0 = y0.min(v[1]);
        y1 = y1.max(v[1]);
    }
    let c0 = ((x0 - grid.origin_x) / ps).floor().max(0.0) as usize;
    let c1 = (((x1 - grid.origin_x) / ps).ceil() as usize).min(grid.width);
    let r0 = ((grid.origin_y - y1) / ps).floor().max(0.0) as usize;
    let r1 = (((grid.origin_y - y0) / ps).ceil() as usize).min(grid.height);
    if c1 <= c0 || r1 <= r0 {
        return false;
    }
    let win = grid.window(r0, c0, r1 - r0, c1 - c0);
    let mut single = PolygonSet::new(vec![poly.clone()]);
    single.polygons[0].label = 1;
    let fp = rasterize(&single, win).map(|v| u16::from(v != 0));
    let count = fp.count_nonzero();
    let (_, k) = crate::morph::connected_components(&fp, Connectivity::Four);
    k == 1 && count >= cells
}

/// Polygons for a parcel-id raster. Each boundary is simplified with
/// `simplify_tol` pixels unless that would split the parcel's footprint or
/// shrink it below `min_area` cells.
pub fn parcels_from_raster(ids: &Raster<u32>, simplify_tol: f64, min_area: usize) -> ParcelSet {
    let grid = *ids.grid();
    let mut set = polygonize(ids);
    let tol = simplify_tol * grid.pixel_size;
    let px_area = grid.pixel_size * grid.pixel_size;
    for p in &mut set.polygons {
        if tol > 0.0 {
            let s = simplify_polygon(p, tol);
            if s.validate().is_ok() && s.area() >= min_area as f64 * px_area && footprint_ok(&s, &grid, 1) {
                *p = s;
            }
        }
        p.props.insert("id".into(), json!(p.label));
        p.props.insert("area".into(), json!(p.area()));
    }
    set
}

/// Edge optimization: threshold, thicken, thin, close gaps, trim, and turn
/// the enclosed regions into parcels.
pub fn extract_parcels(edges: &FloatRaster, p: &ParcelParams) -> Result<ParcelSet> {
    let network = edge_network(edges, p)?;
    let ids = parcel_raster(&network, p.min_area);
    Ok(parcels_from_raster(&ids, p.simplify_tol, p.min_area))
}

/// Intersections of two parcel sets on `grid`: 4-connected regions of equal
/// `(t1 id, t2 id)` where both are nonzero. Labels in raster-scan order.
pub fn pair_partition(t1: &ParcelSet, t2: &ParcelSet, grid: Grid) -> Raster<u32> {
    let (a, b) = (rasterize(t1, grid), rasterize(t2, grid));
    let keys = Raster::new(
        grid,
        a.cells()
            .iter()
            .zip(b.cells())
            .map(|(&x, &y)| if x != 0 && y != 0 { (u64::from(x) << 32) | u64::from(y) } else { 0 })
            .collect(),
    )
    .expect("same grid");
    label_regions(&keys, Connectivity::Four, |k| k != 0, |x, y| x == y).0
}

/// Repeatedly fold the smallest region under `min_area` cells into the
/// neighbour with which it shares the longest boundary (lower id on ties).
/// Regions with no neighbour are dropped.
pub fn merge_slivers(ids: &Raster<u32>, min_area: usize) -> Raster<u32> {
    let (w, h) = (ids.width(), ids.height());
    let n = ids.cells().iter().copied().max().unwrap_or(0) as usize;
    let mut size = vec![0usize; n + 1];
    let mut adj: Vec<BTreeMap<u32, usize>> = vec![BTreeMap::new(); n + 1];
    for r in 0..h {
        for c in 0..w {
            let a = ids.get(r, c);
            size[a as usize] += 1;
            if a == 0 {
                continue;
            }
            for (nr, nc) in [(r + 1, c), (r, c + 1)] {
                if nr < h && nc < w {
                    let b = ids.get(nr, nc);
                    if b != 0 && b != a {
                        *adj[a as usize].entry(b).or_default() += 1;
                        *adj[b as usize].entry(a).or_default() += 1;
                    }
                }
            }
        }
    }
    let mut target: Vec<u32> = (0..=n as u32).collect();
    let mut alive: Vec<bool> = (0..=n).map(|k| k != 0 && size[k] > 0).collect();
    loop {
        let Some(s) = (1..=n).filter(|&k| alive[k] && size[k] < min_area).min_by_key(|&k| (size[k], k)) else {
            break;
        };
        alive[s] = false;
        let links = std::mem::take(&mut adj[s]);
        let best = links.iter().max_by_key(|(&k, &len)| (len, std::cmp::Reverse(k))).map(|(&k, _)| k);
        match best {
            Some(t) => {
                let t = t as usize;
                target[s] = t as u32;
                size[t] += size[s];
                for (&k, &len) in &links {
                    adj[k as usize].remove(&(s as u32));
                    if k as usize != t {
                        *adj[t].entry(k).or_default() += len;
                        *adj[k as usize].entry(t as u32).or_default() += len;
                    }
                }
            }
            None => target[s] = 0,
        }
    }
    let resolve = |mut k: u32| {
        while k != 0 && target[k as usize] != k {
            k = target[k as usize];
        }
        k
    };
    let map: Vec<u32> = (0..=n as u32).map(resolve).collect();
    ids.map(|k| map[k as usize])
}

/// Parcels of the overlay of two epochs' parcel sets.
pub fn fuse_parcels(t1: &ParcelSet, t2: &ParcelSet, grid: Grid, min_area: usize) -> ParcelSet {
    let pieces = pair_partition(t1, t2, grid);
    let merged = renumber(&merge_slivers(&pieces, min_area));
    parcels_from_raster(&merged, 0.0, 0)
}
