//! Polygons in map coordinates and raster/vector conversion.

use std::collections::HashMap;

use serde_json::{Map, Value};

use crate::error::{CoreError, Result};
use crate::morph::{label_regions, Connectivity};
use crate::raster::{Grid, Raster};

pub type Point = [f64; 2];
/// Closed ring: first vertex repeated at the end.
pub type Ring = Vec<Point>;

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Polygon {
    pub exterior: Ring,
    pub holes: Vec<Ring>,
    pub label: u32,
    pub props: Map<String, Value>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct PolygonSet {
    pub polygons: Vec<Polygon>,
}

impl PolygonSet {
    pub fn new(polygons: Vec<Polygon>) -> Self {
        Self { polygons }
    }

    pub fn len(&self) -> usize {
        self.polygons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.polygons.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Polygon> {
        self.polygons.iter()
    }
}

/// Twice the signed shoelace area; positive for counter-clockwise rings.
fn signed_area2(ring: &[Point]) -> f64 {
    ring.windows(2)
        .map(|e| e[0][0] * e[1][1] - e[1][0] * e[0][1])
        .sum()
}

pub fn ring_area(ring: &[Point]) -> f64 {
    signed_area2(ring) / 2.0
}

pub fn polygon_area(poly: &Polygon) -> f64 {
    ring_area(&poly.exterior).abs() - poly.holes.iter().map(|h| ring_area(h).abs()).sum::<f64>()
}

impl Polygon {
    pub fn new(exterior: Ring, holes: Vec<Ring>, label: u32) -> Self {
        Self {
            exterior,
            holes,
            label,
            props: Map::new(),
        }
    }

    /// Axis-aligned rectangle `[x0, x1] × [y0, y1]`, counter-clockwise.
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64, label: u32) -> Self {
        Self::new(vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]], Vec::new(), label)
    }

    pub fn area(&self) -> f64 {
        polygon_area(self)
    }

    /// Check closure, vertex count, winding and positive area.
    pub fn validate(&self) -> Result<()> {
        check_ring(&self.exterior, true)?;
        for h in &self.holes {
            check_ring(h, false)?;
        }
        if self.area() <= 0.0 {
            return Err(CoreError::Geometry("polygon area is not positive".into()));
        }
        Ok(())
    }

    /// Reverse rings as needed so the exterior is counter-clockwise and holes
    /// clockwise.
    pub fn orient(&mut self) {
        if signed_area2(&self.exterior) < 0.0 {
            self.exterior.reverse();
        }
        for h in &mut self.holes {
            if signed_area2(h) > 0.0 {
                h.reverse();
            }
        }
    }

    /// Even-odd containment over all rings.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        std::iter::once(&self.exterior)
            .chain(&self.holes)
            .fold(false, |inside, ring| inside ^ ring_crosses(ring, x, y))
    }

    fn rings(&self) -> impl Iterator<Item = &Ring> {
        std::iter::once(&self.exterior).chain(&self.holes)
    }
}

fn check_ring(ring: &[Point], exterior: bool) -> Result<()> {
    if ring.len() < 4 {
        return Err(CoreError::Geometry(format!("ring has {} vertices, need ≥ 4", ring.len())));
    }
    if ring.first() != ring.last() {
        return Err(CoreError::Geometry("ring is not closed".into()));
    }
    if ring.iter().flatten().any(|v| !v.is_finite()) {
        return Err(CoreError::Geometry("non-finite vertex".into()));
    }
    let a = signed_area2(ring);
    if a == 0.0 {
        return Err(CoreError::Geometry("degenerate ring".into()));
    }
    if (a > 0.0) != exterior {
        return Err(CoreError::Geometry(
            if exterior { "exterior ring is clockwise" } else { "hole is counter-clockwise" }.into(),
        ));
    }
    Ok(())
}

/// Odd number of ring edges crossing the ray to +x from (x, y).
fn ring_crosses(ring: &[Point], x: f64, y: f64) -> bool {
    let mut inside = false;
    for e in ring.windows(2) {
        let ([x1, y1], [x2, y2]) = (e[0], e[1]);
        if (y1 > y) != (y2 > y) {
            let xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1);
            if x < xc {
                inside = !inside;
            }
        }
    }
    inside
}

/// Euclidean distance from `p` to segment `ab`.
pub fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    };
    (p[0] - a[0] - t * dx).hypot(p[1] - a[1] - t * dy)
}

/// Burn polygons into a grid by cell centre (even-odd rule). Later polygons
/// overwrite earlier ones; uncovered cells are 0.
pub fn rasterize(polys: &PolygonSet, grid: Grid) -> Raster<u32> {
    let mut out = Raster::filled(grid, 0u32);
    let ps = grid.pixel_size;
    let mut xs = Vec::new();
    for poly in polys.iter() {
        let (mut ymin, mut ymax) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in &poly.exterior {
            ymin = ymin.min(v[1]);
            ymax = ymax.max(v[1]);
        }
        if !ymin.is_finite() {
            continue;
        }
        // rows whose centre lies in [ymin, ymax]
        let r0 = ((grid.origin_y - ymax) / ps - 0.5).ceil().max(0.0) as usize;
        let r1 = (((grid.origin_y - ymin) / ps - 0.5).floor() + 1.0).clamp(0.0, grid.height as f64) as usize;
        for r in r0..r1 {
            let y = grid.origin_y - (r as f64 + 0.5) * ps;
            xs.clear();
            for ring in poly.rings() {
                for e in ring.windows(2) {
                    let ([x1, y1], [x2, y2]) = (e[0], e[1]);
                    if (y1 > y) != (y2 > y) {
                        xs.push(x1 + (y - y1) * (x2 - x1) / (y2 - y1));
                    }
                }
            }
            xs.sort_by(f64::total_cmp);
            for span in xs.chunks_exact(2) {
                let c0 = ((span[0] - grid.origin_x) / ps - 0.5).ceil().clamp(0.0, grid.width as f64) as usize;
                let c1 = ((span[1] - grid.origin_x) / ps - 0.5).ceil().clamp(0.0, grid.width as f64) as usize;
                for c in c0..c1 {
                    out.set(r, c, poly.label);
                }
            }
        }
    }
    out
}

/// Trace every 4-connected piece of equal nonzero label as a polygon of
/// pixel squares. Pieces are emitted in raster-scan order of their first
/// cell, each carrying its cell label.
pub fn polygonize<T: Copy + Into<u32>>(labels: &Raster<T>) -> PolygonSet {
    let (regions, count) = label_regions(labels, Connectivity::Four, |v| v.into() != 0, |a, b| a.into() == b.into());
    let (w, h) = (labels.width(), labels.height());
    let grid = *labels.grid();
    let reg = regions.cells();
    let at = |r: isize, c: isize| -> u32 {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            0
        } else {
            reg[r as usize * w + c as usize]
        }
    };

    // Directed boundary edges per region, interior on the left in map frame.
    // Vertices are (row, col) grid corners.
    let mut edges: Vec<Vec<(V, V)>> = vec![Vec::new(); count as usize + 1];
    let mut first_label = vec![0u32; count as usize + 1];
    for r in 0..h as isize {
        for c in 0..w as isize {
            let k = at(r, c);
            if k == 0 {
                continue;
            }
            if first_label[k as usize] == 0 {
                first_label[k as usize] = labels.get(r as usize, c as usize).into();
            }
            let (ri, ci) = (r as i64, c as i64);
            let e = &mut edges[k as usize];
            if at(r + 1, c) != k {
                e.push(((ri + 1, ci), (ri + 1, ci + 1)));
            }
            if at(r, c + 1) != k {
                e.push(((ri + 1, ci + 1), (ri, ci + 1)));
            }
            if at(r - 1, c) != k {
                e.push(((ri, ci + 1), (ri, ci)));
            }
            if at(r, c - 1) != k {
                e.push(((ri, ci), (ri + 1, ci)));
            }
        }
    }

    let mut out = Vec::with_capacity(count as usize);
    for k in 1..=count as usize {
        let mut exterior = None;
        let mut holes = Vec::new();
        for verts in boundary_rings(&edges[k]) {
            let ring: Ring = verts
                .iter()
                .map(|&(r, c)| {
                    let (x, y) = grid.vertex(r, c);
                    [x, y]
                })
                .collect();
            if signed_area2(&ring) > 0.0 {
                debug_assert!(exterior.is_none(), "4-connected region has one outer boundary");
                exterior = Some(ring);
            } else {
                holes.push(ring);
            }
        }
        if let Some(exterior) = exterior {
            out.push(Polygon::new(exterior, holes, first_label[k]));
        }
    }
    PolygonSet::new(out)
}

type V = (i64, i64);

// direction in map frame: (dcol, -drow)
fn dir(a: V, b: V) -> (i64, i64) {
    (b.1 - a.1, a.0 - b.0)
}

/// Link boundary edges into closed rings. At a vertex with two outgoing
/// edges the left turn is taken, which keeps diagonal contacts apart.
/// Collinear vertices are dropped.
fn boundary_rings(edges: &[(V, V)]) -> Vec<Vec<V>> {
    let mut outgoing: HashMap<V, Vec<usize>> = HashMap::new();
    for (i, e) in edges.iter().enumerate() {
        outgoing.entry(e.0).or_default().push(i);
    }
    let succ: Vec<usize> = edges
        .iter()
        .map(|&(a, b)| {
            let outs = &outgoing[&b];
            if outs.len() == 1 {
                return outs[0];
            }
            let d = dir(a, b);
            [(-d.1, d.0), d]
                .iter()
                .find_map(|want| outs.iter().copied().find(|&o| dir(b, edges[o].1) == *want))
                .unwrap_or(outs[0])
        })
        .collect();

    let mut order: Vec<usize> = (0..edges.len()).collect();
    order.sort_unstable_by_key(|&i| edges[i]);
    let mut seen = vec![false; edges.len()];
    let mut rings = Vec::new();
    for start in order {
        if seen[start] {
            continue;
        }
        let mut path = Vec::new();
        let mut e = start;
        while !seen[e] {
            seen[e] = true;
            path.push(edges[e].0);
            e = succ[e];
        }
        let n = path.len();
        let mut ring: Vec<V> = (0..n)
            .filter(|&i| dir(path[(i + n - 1) % n], path[i]) != dir(path[i], path[(i + 1) % n]))
            .map(|i| path[i])
            .collect();
        ring.push(ring[0]);
        rings.push(ring);
    }
    rings
}

/// Douglas–Peucker on an open polyline; keeps both endpoints.
pub fn douglas_peucker(line: &[Point], tol: f64) -> Vec<Point> {
    if line.len() <= 2 {
        return line.to_vec();
    }
    let mut keep = vec![false; line.len()];
    keep[0] = true;
    keep[line.len() - 1] = true;
    let mut stack = vec![(0, line.len() - 1)];
    while let Some((i, j)) = stack.pop() {
        let mut best = (0.0, 0);
        for k in i + 1..j {
            let d = segment_distance(line[k], line[i], line[j]);
            if d > best.0 {
                best = (d, k);
            }
        }
        if best.0 > tol {
            keep[best.1] = true;
            stack.push((i, best.1));
            stack.push((best.1, j));
        }
    }
    line.iter().zip(keep).filter(|(_, k)| *k).map(|(p, _)| *p).collect()
}

/// Simplify a closed ring: split at the vertex farthest from the first
/// vertex and run Douglas–Peucker on both halves. Returns the input when the
/// result would be degenerate or change winding.
pub fn simplify_ring(ring: &[Point], tol: f64) -> Ring {
    if tol <= 0.0 || ring.len() <= 4 {
        return ring.to_vec();
    }
    let n = ring.len() - 1;
    let o = ring[0];
    let far = (1..n)
        .fold((0.0, 1), |best, k| {
            let d = (ring[k][0] - o[0]).hypot(ring[k][1] - o[1]);
            if d > best.0 { (d, k) } else { best }
        })
        .1;
    let mut out = douglas_peucker(&ring[..=far], tol);
    out.pop();
    out.extend(douglas_peucker(&ring[far..], tol));
    let a0 = signed_area2(ring);
    let a1 = signed_area2(&out);
    if out.len() < 4 || a1 == 0.0 || (a0 > 0.0) != (a1 > 0.0) {
        return ring.to_vec();
    }
    out
}

pub fn simplify_polygon(poly: &Polygon, tol: f64) -> Polygon {
    Polygon {
        exterior: simplify_ring(&poly.exterior, tol),
        holes: poly.holes.iter().map(|h| simplify_ring(h, tol)).collect(),
        label: poly.label,
        props: poly.props.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contains_respects_holes() {
        let mut p = Polygon::rect(0.0, 0.0, 4.0, 4.0, 1);
        p.holes.push(vec![[1.0, 1.0], [1.0, 3.0], [3.0, 3.0], [3.0, 1.0], [1.0, 1.0]]);
        p.validate().unwrap();
        assert!(p.contains(0.5, 0.5));
        assert!(!p.contains(2.0, 2.0));
        assert!(!p.contains(5.0, 2.0));
    }

    #[test]
    fn validation_rejects_bad_rings() {
        let mut p = Polygon::rect(0.0, 0.0, 1.0, 1.0, 1);
        p.exterior.reverse();
        assert!(p.validate().is_err());
        p.orient();
        p.validate().unwrap();
        p.exterior.pop();
        assert!(p.validate().is_err());
    }

    #[test]
    fn segment_distance_cases() {
        assert_eq!(segment_distance([0.0, 1.0], [-1.0, 0.0], [1.0, 0.0]), 1.0);
        assert_eq!(segment_distance([3.0, 4.0], [0.0, 0.0], [0.0, 0.0]), 5.0);
        assert_eq!(segment_distance([2.0, 0.0], [-1.0, 0.0], [1.0, 0.0]), 1.0);
    }
}
