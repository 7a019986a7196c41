//! Cell-neighbourhood operations: slope, dilation, labelling, thinning.

use std::collections::VecDeque;

use crate::error::{invalid, Result};
use crate::raster::{FloatRaster, Mask, Raster};

/// Slope in degrees from a DEM using Horn's 3×3 weighted differences.
/// Edge cells replicate their nearest neighbour.
pub fn slope_from_dem(dem: &FloatRaster) -> Result<FloatRaster> {
    let (w, h) = (dem.width(), dem.height());
    if w < 3 || h < 3 {
        return invalid("slope_from_dem", format!("DEM must be at least 3×3, got {w}×{h}"));
    }
    let ps = dem.grid().pixel_size;
    let z = |r: isize, c: isize| -> f64 {
        let r = r.clamp(0, h as isize - 1) as usize;
        let c = c.clamp(0, w as isize - 1) as usize;
        dem.get(r, c) as f64
    };
    let out = Raster::from_fn(*dem.grid(), |r, c| {
        let (r, c) = (r as isize, c as isize);
        let (a, b, cc) = (z(r - 1, c - 1), z(r - 1, c), z(r - 1, c + 1));
        let (d, f) = (z(r, c - 1), z(r, c + 1));
        let (g, hh, i) = (z(r + 1, c - 1), z(r + 1, c), z(r + 1, c + 1));
        let gx = ((cc + 2.0 * f + i) - (a + 2.0 * d + g)) / (8.0 * ps);
        let gy = ((g + 2.0 * hh + i) - (a + 2.0 * b + cc)) / (8.0 * ps);
        gx.hypot(gy).atan().to_degrees() as f32
    });
    Ok(out)
}

/// Binary dilation with a `(2r+1)²` square (Chebyshev ball).
pub fn dilate(mask: &Mask, radius: usize) -> Mask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width(), mask.height());
    let src = mask.cells();
    // separable: horizontal then vertical running max
    let mut horiz = vec![0u16; w * h];
    for r in 0..h {
        let row = &src[r * w..(r + 1) * w];
        for c in 0..w {
            let lo = c.saturating_sub(radius);
            let hi = (c + radius).min(w - 1);
            horiz[r * w + c] = u16::from(row[lo..=hi].iter().any(|&v| v != 0));
        }
    }
    let mut out = Raster::filled(*mask.grid(), 0u16);
    let cells = out.cells_mut();
    for c in 0..w {
        for r in 0..h {
            let lo = r.saturating_sub(radius);
            let hi = (r + radius).min(h - 1);
            cells[r * w + c] = u16::from((lo..=hi).any(|rr| horiz[rr * w + c] != 0));
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

const N4: [(isize, isize); 4] = [(-1, 0), (0, -1), (0, 1), (1, 0)];
const N8: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];

impl Connectivity {
    pub fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &N4,
            Connectivity::Eight => &N8,
        }
    }
}

/// Label groups of connected cells for which `same(a, b)` holds between
/// neighbours and `fg(a)` holds for the cell. Returns the labels and the
/// component count. Labels start at 1 in raster-scan order.
pub fn label_regions<T: Copy>(
    raster: &Raster<T>,
    conn: Connectivity,
    fg: impl Fn(T) -> bool,
    same: impl Fn(T, T) -> bool,
) -> (Raster<u32>, u32) {
    let (w, h) = (raster.width(), raster.height());
    let src = raster.cells();
    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if labels[start] != 0 || !fg(src[start]) {
            continue;
        }
        next += 1;
        labels[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            for &(dr, dc) in conn.offsets() {
                let (nr, nc) = (r + dr, c + dc);
                if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                    continue;
                }
                let j = nr as usize * w + nc as usize;
                if labels[j] == 0 && fg(src[j]) && same(src[i], src[j]) {
                    labels[j] = next;
                    queue.push_back(j);
                }
            }
        }
    }
    (Raster::new(*raster.grid(), labels).expect("same grid"), next)
}

/// Connected components of the nonzero cells of `mask`.
pub fn connected_components(mask: &Mask, conn: Connectivity) -> (Raster<u32>, u32) {
    label_regions(mask, conn, |v| v != 0, |_, _| true)
}

// Neighbours P2..P9 clockwise from north.
const RING: [(isize, isize); 8] = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)];

fn neighbours(img: &[u8], w: usize, h: usize, r: usize, c: usize) -> [u8; 8] {
    let mut p = [0u8; 8];
    for (k, &(dr, dc)) in RING.iter().enumerate() {
        let (nr, nc) = (r as isize + dr, c as isize + dc);
        if nr >= 0 && nc >= 0 && (nr as usize) < h && (nc as usize) < w {
            p[k] = img[nr as usize * w + nc as usize];
        }
    }
    p
}

fn zs_removable(p: &[u8; 8], first: bool) -> bool {
    let b: u8 = p.iter().sum();
    if !(2..=6).contains(&b) {
        return false;
    }
    let a = (0..8).filter(|&k| p[k] == 0 && p[(k + 1) % 8] == 1).count();
    if a != 1 {
        return false;
    }
    let [p2, _, p4, _, p6, _, p8, _] = *p;
    if first {
        p2 * p4 * p6 == 0 && p4 * p6 * p8 == 0
    } else {
        p2 * p4 * p8 == 0 && p2 * p6 * p8 == 0
    }
}

/// Yokoi connectivity number for 8-connected foreground.
fn yokoi8(p: &[u8; 8]) -> i32 {
    // x1 = E, x2 = NE, x3 = N, ... counter-clockwise from east
    let x = [p[2], p[1], p[0], p[7], p[6], p[5], p[4], p[3]];
    let inv = |k: usize| 1 - x[k % 8] as i32;
    (0..4)
        .map(|i| {
            let k = 2 * i;
            inv(k) - inv(k) * inv(k + 1) * inv(k + 2)
        })
        .sum()
}

/// Zhang–Suen thinning. Each candidate is removed only while it is still a
/// simple point, so components never split or vanish.
pub fn skeletonize(mask: &Mask) -> Mask {
    let (w, h) = (mask.width(), mask.height());
    let mut img: Vec<u8> = mask.cells().iter().map(|&v| u8::from(v != 0)).collect();
    loop {
        let mut changed = false;
        for first in [true, false] {
            let candidates: Vec<usize> = (0..w * h)
                .filter(|&i| img[i] == 1 && zs_removable(&neighbours(&img, w, h, i / w, i % w), first))
                .collect();
            for i in candidates {
                let p = neighbours(&img, w, h, i / w, i % w);
                if zs_removable(&p, first) && yokoi8(&p) == 1 {
                    img[i] = 0;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    Raster::new(*mask.grid(), img.into_iter().map(u16::from).collect()).expect("same grid")
}
