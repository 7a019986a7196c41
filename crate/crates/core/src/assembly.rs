//! From-to semantic change map and the parcel majority constraint.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geom::rasterize;
use crate::parcel::ParcelSet;
use crate::raster::{LabelRaster, Mask, Raster};

pub const T1_CLASSES: [&str; 5] = ["background", "vegetable", "nursery", "early_rice", "rapeseed"];
pub const T2_CLASSES: [&str; 5] = ["background", "vegetable", "nursery", "middle_rice", "late_rice"];

pub const CHANGE_CATEGORIES: [&str; 7] = [
    "no_change",
    "vegetable_to_vegetable",
    "nursery_to_nursery",
    "early_rice_to_middle_rice",
    "early_rice_to_late_rice",
    "rapeseed_to_middle_rice",
    "rapeseed_to_late_rice",
];

/// Preview colours per change category.
pub const CHANGE_PALETTE: [[u8; 3]; 7] = [
    [0, 0, 0],
    [60, 180, 75],
    [145, 110, 60],
    [0, 130, 200],
    [70, 240, 240],
    [255, 225, 25],
    [245, 130, 48],
];

pub const VEGETABLE: u16 = 1;
pub const NURSERY: u16 = 2;
pub const EARLY_RICE: u16 = 3;
pub const RAPESEED: u16 = 4;
pub const MIDDLE_RICE: u16 = 3;
pub const LATE_RICE: u16 = 4;

/// `(t1 class, t2 class, changed)` → change category. Anything not listed
/// maps to 0.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionTable {
    entries: BTreeMap<(u16, u16, bool), u16>,
}

impl Default for TransitionTable {
    fn default() -> Self {
        let entries = [
            ((VEGETABLE, VEGETABLE, false), 1),
            ((NURSERY, NURSERY, false), 2),
            ((EARLY_RICE, MIDDLE_RICE, true), 3),
            ((EARLY_RICE, LATE_RICE, true), 4),
            ((RAPESEED, MIDDLE_RICE, true), 5),
            ((RAPESEED, LATE_RICE, true), 6),
        ]
        .into_iter()
        .collect();
        Self { entries }
    }
}

impl TransitionTable {
    pub fn lookup(&self, c1: u16, c2: u16, changed: bool) -> Option<u16> {
        self.entries.get(&(c1, c2, changed)).copied()
    }

    /// Inverse: the `(t1, t2, changed)` triple that produces `category`.
    pub fn source(&self, category: u16) -> Option<(u16, u16, bool)> {
        self.entries.iter().find(|(_, &v)| v == category).map(|(&k, _)| k)
    }

    pub fn entries(&self) -> impl Iterator<Item = ((u16, u16, bool), u16)> + '_ {
        self.entries.iter().map(|(&k, &v)| (k, v))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvalidPair {
    pub t1: u16,
    pub t2: u16,
    pub count: u64,
}

/// Changed pixels whose class pair is not a known transition.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvalidReport {
    pub total: u64,
    pub pairs: Vec<InvalidPair>,
}

#[inline]
pub fn assemble_cell(table: &TransitionTable, c1: u16, c2: u16, changed: bool) -> (u16, bool) {
    match table.lookup(c1, c2, changed) {
        Some(v) => (v, false),
        None => (0, changed),
    }
}

pub fn assemble(
    seg_t1: &LabelRaster,
    seg_t2: &LabelRaster,
    change: &Mask,
    table: &TransitionTable,
) -> Result<(LabelRaster, InvalidReport)> {
    seg_t1.ensure_aligned(seg_t2, "assemble")?;
    seg_t1.ensure_aligned(change, "assemble")?;
    let mut invalid: BTreeMap<(u16, u16), u64> = BTreeMap::new();
    let cells = seg_t1
        .cells()
        .iter()
        .zip(seg_t2.cells())
        .zip(change.cells())
        .map(|((&a, &b), &ch)| {
            let (v, bad) = assemble_cell(table, a, b, ch != 0);
            if bad {
                *invalid.entry((a, b)).or_default() += 1;
            }
            v
        })
        .collect();
    let report = InvalidReport {
        total: invalid.values().sum(),
        pairs: invalid.into_iter().map(|((t1, t2), count)| InvalidPair { t1, t2, count }).collect(),
    };
    Ok((Raster::new(*seg_t1.grid(), cells)?, report))
}

/// Majority category per parcel id (`n_categories` classes; lowest id on
/// ties). Index 0 of the result is unused.
pub fn parcel_majority(scmap: &LabelRaster, ids: &Raster<u32>, n_categories: usize) -> Result<Vec<u16>> {
    scmap.ensure_aligned(ids, "parcel_majority")?;
    let n = ids.cells().iter().copied().max().unwrap_or(0) as usize;
    let mut hist = vec![0u64; (n + 1) * n_categories];
    for (&k, &v) in ids.cells().iter().zip(scmap.cells()) {
        if v as usize >= n_categories {
            return Err(CoreError::LabelOutOfRange {
                op: "parcel_majority",
                label: v as u32,
                n: n_categories,
            });
        }
        hist[k as usize * n_categories + v as usize] += 1;
    }
    Ok((0..=n)
        .map(|k| {
            let row = &hist[k * n_categories..(k + 1) * n_categories];
            let mut best = 0;
            for (v, &c) in row.iter().enumerate() {
                if c > row[best] {
                    best = v;
                }
            }
            best as u16
        })
        .collect())
}

/// Give every cell of a parcel the parcel's majority category. Cells outside
/// all parcels keep their own label.
pub fn parcel_constrain(scmap: &LabelRaster, parcels: &ParcelSet) -> Result<LabelRaster> {
    let ids = rasterize(parcels, *scmap.grid());
    constrain_ids(scmap, &ids)
}

pub fn constrain_ids(scmap: &LabelRaster, ids: &Raster<u32>) -> Result<LabelRaster> {
    let maj = parcel_majority(scmap, ids, CHANGE_CATEGORIES.len())?;
    let cells = scmap
        .cells()
        .iter()
        .zip(ids.cells())
        .map(|(&v, &k)| if k == 0 { v } else { maj[k as usize] })
        .collect();
    Raster::new(*scmap.grid(), cells)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryReport {
    pub categories: Vec<String>,
    pub area: Vec<f64>,
    pub area_pct: Vec<f64>,
    pub parcels: Option<Vec<u64>>,
}

/// Area share of each change category and, given parcels, how many parcels
/// take each category under the majority rule.
pub fn category_report(scmap: &LabelRaster, parcels: Option<&ParcelSet>) -> Result<CategoryReport> {
    let n = CHANGE_CATEGORIES.len();
    let mut counts = vec![0u64; n];
    for &v in scmap.cells() {
        let slot = counts.get_mut(v as usize).ok_or(CoreError::LabelOutOfRange {
            op: "category_report",
            label: v as u32,
            n,
        })?;
        *slot += 1;
    }
    let total: u64 = counts.iter().sum();
    let px = scmap.grid().pixel_size * scmap.grid().pixel_size;
    let parcels = match parcels {
        Some(set) => {
            let ids = rasterize(set, *scmap.grid());
            let maj = parcel_majority(scmap, &ids, n)?;
            let mut present = vec![false; maj.len()];
            for &k in ids.cells() {
                present[k as usize] = true;
            }
            let mut pc = vec![0u64; n];
            for k in 1..maj.len() {
                if present[k] {
                    pc[maj[k] as usize] += 1;
                }
            }
            Some(pc)
        }
        None => None,
    };
    Ok(CategoryReport {
        categories: CHANGE_CATEGORIES.iter().map(|s| s.to_string()).collect(),
        area: counts.iter().map(|&c| c as f64 * px).collect(),
        area_pct: counts
            .iter()
            .map(|&c| if total == 0 { 0.0 } else { 100.0 * c as f64 / total as f64 })
            .collect(),
        parcels,
    })
}

pub fn change_preview(scmap: &LabelRaster) -> Raster<[u8; 3]> {
    scmap.map(|v| CHANGE_PALETTE.get(v as usize).copied().unwrap_or([255, 255, 255]))
}
