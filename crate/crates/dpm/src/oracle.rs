//! Dense reference scoring: no streaming, no pruning, no quantization, no
//! projection, exhaustive deformation search.
//!
//! This module is the equivalence baseline for the optimized engine, so it
//! deliberately shares no scoring code with it: correlation is written out
//! as plain nested loops over the source model's dense weights. It is also
//! the unoptimized cost exhibit — every placement of every filter is charged
//! at 13 multiplications per cell. Speed is explicitly not a goal.

use crate::frontend::FeaturePyramid;
use crate::math::DIM;
use crate::metrics::{CostLedger, Kind, Stage};
use crate::model::{DpmModel, Filter, PART_COUNT};

/// A plain score grid over filter placements.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrid {
    pub w: usize,
    pub h: usize,
    pub scores: Vec<f64>,
}

impl DenseGrid {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.scores[y * self.w + x]
    }
}

/// Dense results for one root level.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLevel {
    pub level: usize,
    /// Pyramid level the part maps live on, when parts apply.
    pub part_level: Option<usize>,
    pub root: DenseGrid,
    /// Full response map per part over its level, when parts apply.
    pub part_maps: Vec<DenseGrid>,
    /// Root + best deformed parts + bias per root placement.
    pub totals: DenseGrid,
    /// Placements whose total contains no part responses.
    pub root_only: Vec<bool>,
}

/// Dense results for the whole pyramid; levels too small for the root are
/// `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseResult {
    pub levels: Vec<Option<DenseLevel>>,
}

impl DenseResult {
    pub fn total_at(&self, level: usize, x: usize, y: usize) -> Option<f64> {
        self.levels[level].as_ref().map(|l| l.totals.at(x, y))
    }
}

fn correlate_everywhere(
    grid: &crate::frontend::CellGrid,
    filter: &Filter,
    ledger: &mut CostLedger,
    stage: Stage,
) -> Option<DenseGrid> {
    if grid.cols < filter.w || grid.rows < filter.h {
        return None;
    }
    let w = grid.cols - filter.w + 1;
    let h = grid.rows - filter.h + 1;
    let mut scores = vec![0.0f64; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for j in 0..filter.h {
                for i in 0..filter.w {
                    let weights = filter.cell(i, j);
                    let feats = grid.cell(x + i, y + j);
                    for d in 0..DIM {
                        acc += weights[d] * feats[d];
                    }
                }
            }
            scores[y * w + x] = acc;
        }
    }
    let mults = (w * h * filter.w * filter.h * DIM) as u64;
    ledger.record(stage, Kind::Mults, mults);
    ledger.record(stage, Kind::BaselineMults, mults);
    Some(DenseGrid { w, h, scores })
}

/// Score a source model densely at every placement of every level.
pub fn dense_scores(fp: &FeaturePyramid, m: &DpmModel, ledger: &mut CostLedger) -> DenseResult {
    let mut levels = Vec::with_capacity(fp.levels.len());
    for (li, level) in fp.levels.iter().enumerate() {
        let Some(root) = correlate_everywhere(&level.grid, &m.root, ledger, Stage::RootSvm) else {
            levels.push(None);
            continue;
        };

        let part_level = li.checked_sub(fp.levels_per_octave);
        let part_maps: Vec<DenseGrid> = match part_level {
            Some(pl) => m
                .parts
                .iter()
                .filter_map(|p| {
                    correlate_everywhere(&fp.levels[pl].grid, &p.filter, ledger, Stage::PartSvm)
                })
                .collect(),
            None => Vec::new(),
        };
        let parts_available = part_maps.len() == PART_COUNT;

        let mut totals = vec![0.0f64; root.w * root.h];
        let mut root_only = vec![true; root.w * root.h];
        for y in 0..root.h {
            for x in 0..root.w {
                let mut total = root.at(x, y) + m.bias;
                if parts_available {
                    let mut part_sum = 0.0;
                    let mut all_parts_reachable = true;
                    for (p, spec) in m.parts.iter().enumerate() {
                        let map = &part_maps[p];
                        let ax = 2 * x as i32 + spec.anchor.0;
                        let ay = 2 * y as i32 + spec.anchor.1;
                        let mut best = f64::NEG_INFINITY;
                        let mut reachable = false;
                        for dy in -2i32..=2 {
                            for dx in -2i32..=2 {
                                let px = ax + dx;
                                let py = ay + dy;
                                if px < 0
                                    || py < 0
                                    || px as usize >= map.w
                                    || py as usize >= map.h
                                {
                                    continue;
                                }
                                reachable = true;
                                let fx = dx as f64;
                                let fy = dy as f64;
                                let cost = spec.deformation[0] * fx
                                    + spec.deformation[1] * fy
                                    + spec.deformation[2] * fx * fx
                                    + spec.deformation[3] * fy * fy;
                                let v = map.at(px as usize, py as usize) - cost;
                                if v > best {
                                    best = v;
                                }
                            }
                        }
                        if !reachable {
                            all_parts_reachable = false;
                            break;
                        }
                        part_sum += best;
                    }
                    if all_parts_reachable {
                        ledger.deform_calls += PART_COUNT as u64;
                        ledger.deform_evals += PART_COUNT as u64 * 25;
                        let deform_mults = PART_COUNT as u64 * 25 * 4;
                        ledger.record(Stage::Deform, Kind::Mults, deform_mults);
                        ledger.record(Stage::Deform, Kind::BaselineMults, deform_mults);
                        total += part_sum;
                        root_only[y * root.w + x] = false;
                    }
                }
                totals[y * root.w + x] = total;
            }
        }

        let totals = DenseGrid {
            w: root.w,
            h: root.h,
            scores: totals,
        };
        levels.push(Some(DenseLevel {
            level: li,
            part_level: if parts_available { part_level } else { None },
            root,
            part_maps,
            totals,
            root_only,
        }));
    }
    DenseResult { levels }
}
