//! Detection execution: streaming root classification, candidate pruning,
//! part engines, deformation search, aggregation, and non-maximum
//! suppression.
//!
//! Scoring follows a canonical summation order everywhere — a 13-term cell
//! dot product, cells accumulated left to right within a window row, row
//! sums accumulated top to bottom — so the streaming accumulator path and the
//! direct path produce bit-identical floats, and a pruned run reproduces the
//! unpruned scores exactly on every surviving window.
//!
//! Every multiplication is charged to the ledger as it happens. Alongside,
//! shadow `baseline_mults` counters record what an unoptimized run (no
//! pruning, dense weights, no projection) would have spent on the same
//! frame, computed from window geometry alone; tests verify the shadow
//! matches a real all-off run to the unit.
//!
//! Per-candidate part scoring touches only that part's search region, so the
//! eight parts of a candidate (and distinct candidates, and distinct models
//! over one pyramid) are independent units of work; the counts here do not
//! model that parallelism, only the arithmetic.

use serde::Serialize;
use thiserror::Error;

use crate::frontend::{pyramid_features, CellGrid, FeaturePyramid, FrontendError, Image, PyramidConfig};
use crate::math::{Vec13, DIM};
use crate::metrics::{CostLedger, CostReport, Kind, Stage};
use crate::model::{CompiledModel, SparseCell, SparseFilter, PART_COUNT};
use crate::vq::{quantize_cell, Codebook, LineBufferModel, QuantizedGrid, VqError};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid detector config: {0}")]
    BadConfig(String),
    #[error("prune calibration needs at least one root score")]
    EmptyScoreMap,
    #[error("vq is enabled but no codebook was provided")]
    MissingCodebook,
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error(transparent)]
    Vq(#[from] VqError),
}

/// How the prune threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PruneMode {
    /// Keep root placements scoring at or above this fixed value.
    Threshold(f64),
    /// Keep the top `1 - p` fraction of root placements (quantile threshold).
    Fraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeformMode {
    Exhaustive,
    CoarseToFine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub prune: PruneMode,
    pub parts_enabled: bool,
    pub vq_enabled: bool,
    pub projection_enabled: bool,
    pub deform_mode: DeformMode,
    pub nms_iou: f64,
    /// Root scoring consumes feature rows as they arrive when set; the dense
    /// path is equivalent bit for bit.
    pub streaming: bool,
    pub pyramid: PyramidConfig,
    pub line_buffer_cells: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            prune: PruneMode::Fraction(0.97),
            parts_enabled: true,
            vq_enabled: false,
            projection_enabled: true,
            deform_mode: DeformMode::CoarseToFine,
            nms_iou: 0.5,
            streaming: true,
            pyramid: PyramidConfig::default(),
            line_buffer_cells: crate::vq::DEFAULT_LINE_BUFFER_CELLS,
        }
    }
}

impl DetectorConfig {
    /// Everything measured, nothing optimized: the equivalence and cost
    /// baseline.
    pub fn reference() -> Self {
        DetectorConfig {
            prune: PruneMode::Fraction(0.0),
            parts_enabled: true,
            vq_enabled: false,
            projection_enabled: false,
            deform_mode: DeformMode::Exhaustive,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if let PruneMode::Fraction(p) = self.prune {
            if !(0.0..1.0).contains(&p) {
                return Err(EngineError::BadConfig(format!(
                    "prune fraction {p} outside [0, 1)"
                )));
            }
        }
        if !(self.nms_iou > 0.0 && self.nms_iou < 1.0) {
            return Err(EngineError::BadConfig(format!(
                "nms iou {} outside (0, 1)",
                self.nms_iou
            )));
        }
        if self.line_buffer_cells == 0 {
            return Err(EngineError::BadConfig("line buffer capacity is zero".into()));
        }
        Ok(())
    }
}

/// Root window scores for one level.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGrid {
    pub w: usize,
    pub h: usize,
    pub scores: Vec<f64>,
}

impl ScoreGrid {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.scores[y * self.w + x]
    }
}

/// Root window scores per pyramid level; levels too small for the root are
/// `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    pub levels: Vec<Option<ScoreGrid>>,
}

impl ScoreMap {
    pub fn placement_count(&self) -> usize {
        self.levels
            .iter()
            .flatten()
            .map(|g| g.scores.len())
            .sum()
    }

    pub fn iter_scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.levels
            .iter()
            .flatten()
            .flat_map(|g| g.scores.iter().copied())
    }
}

/// A root placement that survived pruning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub level: usize,
    pub x: usize,
    pub y: usize,
    pub root_score: f64,
}

/// Final detection in full-resolution pixel coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Detection {
    #[serde(rename = "class")]
    pub class_name: String,
    pub score: f64,
    pub level: usize,
    /// `[x, y, w, h]` in pixels, clipped to the image.
    pub bbox: [i64; 4],
    /// Displacement of each part from its anchor, in part-level cells.
    pub parts: [[i32; 2]; PART_COUNT],
    /// True when the score contains no part responses (parts disabled, level
    /// too coarse for parts, or a part search region entirely off-grid).
    pub root_only: bool,
}

// --- canonical dot products -------------------------------------------------

#[inline]
fn dot_cell(w: &[f64], f: &[f64]) -> f64 {
    let mut s = 0.0;
    for d in 0..DIM {
        s += w[d] * f[d];
    }
    s
}

/// Sparse dot product over the surviving coefficients, ascending bit order.
#[inline]
fn dot_sparse(cell: &SparseCell, projected: &[f64]) -> f64 {
    let mut s = 0.0;
    let mut coeffs = cell.coeffs.iter();
    for b in 0..DIM {
        if cell.flag & (1 << b) != 0 {
            s += coeffs.next().unwrap() * projected[b];
        }
    }
    s
}

fn sparse_cost(filter: &SparseFilter) -> u64 {
    filter.cells.iter().map(|c| c.nonzeros() as u64).sum()
}

// --- shared per-frame feature views ------------------------------------------

/// Lazily computed basis projections of the pyramid, one set per model.
struct ProjectedFeatures {
    levels: Vec<Option<Vec<f64>>>,
}

impl ProjectedFeatures {
    fn new(level_count: usize) -> Self {
        ProjectedFeatures {
            levels: (0..level_count).map(|_| None).collect(),
        }
    }

    /// Project a level once, charging 13x13 multiplies per cell.
    fn ensure(
        &mut self,
        fp: &FeaturePyramid,
        cm: &CompiledModel,
        level: usize,
        ledger: &mut CostLedger,
    ) {
        if self.levels[level].is_none() {
            let grid = &fp.levels[level].grid;
            let mut out = vec![0.0f64; grid.values.len()];
            for (cell, chunk) in grid.values.chunks_exact(DIM).zip(out.chunks_exact_mut(DIM)) {
                let mut v = [0.0f64; DIM];
                v.copy_from_slice(cell);
                chunk.copy_from_slice(&cm.basis.project(&v));
            }
            ledger.record(
                Stage::Projection,
                Kind::Mults,
                (grid.cell_count() * DIM * DIM) as u64,
            );
            self.levels[level] = Some(out);
        }
    }

    fn get(
        &mut self,
        fp: &FeaturePyramid,
        cm: &CompiledModel,
        level: usize,
        ledger: &mut CostLedger,
    ) -> &[f64] {
        self.ensure(fp, cm, level, ledger);
        self.levels[level].as_ref().unwrap()
    }
}

/// Quantize every level of the pyramid, charging `k * 13` multiplications per
/// cell to the quantization stage.
pub fn quantize_pyramid(
    fp: &FeaturePyramid,
    cb: &Codebook,
    ledger: &mut CostLedger,
) -> Vec<QuantizedGrid> {
    fp.levels
        .iter()
        .map(|level| {
            let g = &level.grid;
            let indices = (0..g.rows * g.cols)
                .map(|i| {
                    let mut v = [0.0f64; DIM];
                    v.copy_from_slice(&g.values[i * DIM..(i + 1) * DIM]);
                    quantize_cell(&v, cb, ledger)
                })
                .collect();
            QuantizedGrid {
                cols: g.cols,
                rows: g.rows,
                indices,
            }
        })
        .collect()
}

// --- root classification ------------------------------------------------------

/// Score the root filter at every placement of every level.
///
/// Streaming mode consumes feature rows in raster order and adds each row's
/// contribution to every window overlapping it; the result equals the direct
/// computation bit for bit because both accumulate per-window row sums top to
/// bottom.
pub fn root_scores(
    fp: &FeaturePyramid,
    cm: &CompiledModel,
    streaming: bool,
    projection: bool,
    ledger: &mut CostLedger,
) -> ScoreMap {
    let mut projected = ProjectedFeatures::new(fp.levels.len());
    root_scores_inner(fp, cm, streaming, projection, &mut projected, ledger)
}

fn root_scores_inner(
    fp: &FeaturePyramid,
    cm: &CompiledModel,
    streaming: bool,
    projection: bool,
    projected: &mut ProjectedFeatures,
    ledger: &mut CostLedger,
) -> ScoreMap {
    let root = &cm.root;
    let mut levels = Vec::with_capacity(fp.levels.len());
    for (li, level) in fp.levels.iter().enumerate() {
        let grid = &level.grid;
        if grid.cols < root.w || grid.rows < root.h {
            levels.push(None);
            continue;
        }
        let w = grid.cols - root.w + 1;
        let h = grid.rows - root.h + 1;

        let proj: Option<&[f64]> = if projection {
            Some(projected.get(fp, cm, li, ledger))
        } else {
            None
        };

        let placements = (w * h) as u64;
        let per_window = if projection {
            sparse_cost(root)
        } else {
            (root.cell_count() * DIM) as u64
        };
        ledger.record(Stage::RootSvm, Kind::Mults, placements * per_window);
        ledger.record(
            Stage::RootSvm,
            Kind::BaselineMults,
            placements * (root.cell_count() * DIM) as u64,
        );

        let row_contribution = |wx: usize, fy: usize, j: usize| -> f64 {
            let mut row_sum = 0.0;
            for i in 0..root.w {
                let fx = wx + i;
                row_sum += match proj {
                    Some(p) => {
                        let base = (fy * grid.cols + fx) * DIM;
                        dot_sparse(root.cell(i, j), &p[base..base + DIM])
                    }
                    None => dot_cell(root.dense_cell(i, j), grid.cell(fx, fy)),
                };
            }
            row_sum
        };

        let mut scores = vec![0.0f64; w * h];
        if streaming {
            // Feature rows arrive top to bottom; each updates the windows it
            // overlaps. Window (x, y) sees its rows in ascending j order.
            for r in 0..grid.rows {
                let y_lo = r.saturating_sub(root.h - 1);
                let y_hi = r.min(h - 1);
                for y in y_lo..=y_hi {
                    let j = r - y;
                    for x in 0..w {
                        scores[y * w + x] += row_contribution(x, r, j);
                    }
                }
            }
        } else {
            for y in 0..h {
                for x in 0..w {
                    let mut sum = 0.0;
                    for j in 0..root.h {
                        sum += row_contribution(x, y + j, j);
                    }
                    scores[y * w + x] = sum;
                }
            }
        }
        levels.push(Some(ScoreGrid { w, h, scores }));
    }
    ScoreMap { levels }
}

// --- pruning -------------------------------------------------------------------

/// Threshold that keeps the top `1 - p` fraction of root scores
/// (nearest-rank quantile over all levels). Ties at the threshold survive.
pub fn calibrate_prune_threshold(sm: &ScoreMap, p: f64) -> Result<f64, EngineError> {
    if !(0.0..1.0).contains(&p) {
        return Err(EngineError::BadConfig(format!("prune fraction {p}")));
    }
    let mut scores: Vec<f64> = sm.iter_scores().collect();
    if scores.is_empty() {
        return Err(EngineError::EmptyScoreMap);
    }
    scores.sort_unstable_by(|a, b| b.total_cmp(a));
    let n = scores.len();
    // Nearest-rank count; the epsilon keeps 1 - p from creeping past an
    // integer boundary (1.0 - 0.97 is slightly above 0.03 in floats).
    let keep = ((((1.0 - p) * n as f64) - 1e-9).ceil() as usize).clamp(1, n);
    Ok(scores[keep - 1])
}

/// Placements scoring at or above the threshold, in (level, y, x) raster
/// order. Kept/total counts go to the ledger.
pub fn prune(sm: &ScoreMap, threshold: f64, ledger: &mut CostLedger) -> Vec<Candidate> {
    let mut out = Vec::new();
    for (level, grid) in sm.levels.iter().enumerate() {
        let Some(grid) = grid else { continue };
        for y in 0..grid.h {
            for x in 0..grid.w {
                let s = grid.at(x, y);
                ledger.candidates_total += 1;
                if s >= threshold {
                    ledger.candidates_kept += 1;
                    out.push(Candidate {
                        level,
                        x,
                        y,
                        root_score: s,
                    });
                }
            }
        }
    }
    out
}

// --- part engines ----------------------------------------------------------------

pub const SEARCH_RADIUS: i32 = 2;
pub const SEARCH_SIDE: usize = 5;
const SEARCH_POINTS: u64 = 25;
/// Multiplications per deformation-cost evaluation (four weighted terms).
const DEFORM_MULTS_PER_EVAL: u64 = 4;

/// Part filter responses over the 5x5 displacement region; off-grid
/// placements are negative infinity.
pub type PartResponse = [[f64; SEARCH_SIDE]; SEARCH_SIDE];

/// Scores one model against a shared feature pyramid, caching per-level
/// projections and projected codebook centers.
pub struct ModelScorer<'a> {
    fp: &'a FeaturePyramid,
    cm: &'a CompiledModel,
    codebook: Option<&'a Codebook>,
    quantized: Option<&'a [QuantizedGrid]>,
    projection: bool,
    projected: ProjectedFeatures,
    projected_centers: Option<Vec<Vec13>>,
}

impl<'a> ModelScorer<'a> {
    pub fn new(
        fp: &'a FeaturePyramid,
        cm: &'a CompiledModel,
        codebook: Option<&'a Codebook>,
        quantized: Option<&'a [QuantizedGrid]>,
        projection: bool,
    ) -> ModelScorer<'a> {
        ModelScorer {
            fp,
            cm,
            codebook,
            quantized,
            projection,
            projected: ProjectedFeatures::new(fp.levels.len()),
            projected_centers: None,
        }
    }

    pub fn root_scores(&mut self, streaming: bool, ledger: &mut CostLedger) -> ScoreMap {
        root_scores_inner(
            self.fp,
            self.cm,
            streaming,
            self.projection,
            &mut self.projected,
            ledger,
        )
    }

    fn projected_centers(&mut self, ledger: &mut CostLedger) -> &[Vec13] {
        if self.projected_centers.is_none() {
            let cb = self.codebook.expect("projected centers need a codebook");
            ledger.record(
                Stage::Projection,
                Kind::Mults,
                (cb.k() * DIM * DIM) as u64,
            );
            self.projected_centers = Some(
                cb.centers()
                    .iter()
                    .map(|c| self.cm.basis.project(c))
                    .collect(),
            );
        }
        self.projected_centers.as_ref().unwrap()
    }

    /// Correlate one part filter at the 25 placements around its anchor for
    /// a pruned candidate.
    pub fn part_response(
        &mut self,
        part_index: usize,
        candidate: &Candidate,
        ledger: &mut CostLedger,
    ) -> PartResponse {
        let mut resp = [[f64::NEG_INFINITY; SEARCH_SIDE]; SEARCH_SIDE];
        let Some(part_level) = part_level_of(self.fp, candidate.level) else {
            return resp;
        };
        let part = &self.cm.parts[part_index];
        let pf = &part.filter;
        let grid = &self.fp.levels[part_level].grid;
        if grid.cols < pf.w || grid.rows < pf.h {
            return resp;
        }

        // The candidate doubles to part-level coordinates; the anchor offsets
        // from there.
        let cx = 2 * candidate.x as i32 + part.anchor.0;
        let cy = 2 * candidate.y as i32 + part.anchor.1;

        // Materialize projection caches up front so the scoring loop can
        // borrow them immutably.
        let use_vq = self.quantized.is_some();
        if self.projection && use_vq {
            self.projected_centers(ledger);
        }
        let projected_level: Option<&[f64]> = if self.projection && !use_vq {
            self.projected.ensure(self.fp, self.cm, part_level, ledger);
            self.projected.levels[part_level].as_deref()
        } else {
            None
        };

        let mut in_grid = 0u64;
        for dy in -SEARCH_RADIUS..=SEARCH_RADIUS {
            for dx in -SEARCH_RADIUS..=SEARCH_RADIUS {
                let px = cx + dx;
                let py = cy + dy;
                if px < 0
                    || py < 0
                    || px as usize + pf.w > grid.cols
                    || py as usize + pf.h > grid.rows
                {
                    continue;
                }
                in_grid += 1;
                let (px, py) = (px as usize, py as usize);
                let mut sum = 0.0;
                for j in 0..pf.h {
                    let mut row_sum = 0.0;
                    for i in 0..pf.w {
                        let fx = px + i;
                        let fy = py + j;
                        row_sum += self.part_cell_term(pf, i, j, part_level, fx, fy, grid, projected_level);
                    }
                    sum += row_sum;
                }
                resp[(dy + SEARCH_RADIUS) as usize][(dx + SEARCH_RADIUS) as usize] = sum;
            }
        }

        let per_placement = if self.projection {
            sparse_cost(pf)
        } else {
            (pf.cell_count() * DIM) as u64
        };
        ledger.record(Stage::PartSvm, Kind::Mults, in_grid * per_placement);
        resp
    }

    #[allow(clippy::too_many_arguments)]
    #[inline]
    fn part_cell_term(
        &self,
        pf: &SparseFilter,
        i: usize,
        j: usize,
        part_level: usize,
        fx: usize,
        fy: usize,
        grid: &CellGrid,
        projected_level: Option<&[f64]>,
    ) -> f64 {
        match (self.quantized, projected_level) {
            (Some(q), _) if self.projection => {
                let idx = q[part_level].index(fx, fy) as usize;
                let centers = self.projected_centers.as_ref().unwrap();
                dot_sparse(pf.cell(i, j), &centers[idx])
            }
            (Some(q), _) => {
                let idx = q[part_level].index(fx, fy) as usize;
                let center = &self.codebook.unwrap().centers()[idx];
                dot_cell(pf.dense_cell(i, j), center)
            }
            (None, Some(p)) => {
                let base = (fy * grid.cols + fx) * DIM;
                dot_sparse(pf.cell(i, j), &p[base..base + DIM])
            }
            (None, None) => dot_cell(pf.dense_cell(i, j), grid.cell(fx, fy)),
        }
    }
}

/// Pyramid level a part scores on for a root at `level`: one octave finer.
pub fn part_level_of(fp: &FeaturePyramid, level: usize) -> Option<usize> {
    level.checked_sub(fp.levels_per_octave)
}

// --- deformation search -----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeformResult {
    pub score: f64,
    pub dx: i32,
    pub dy: i32,
    pub evals: u32,
}

#[inline]
fn deform_value(resp: &PartResponse, d: &[f64; 4], dx: i32, dy: i32) -> f64 {
    let r = resp[(dy + SEARCH_RADIUS) as usize][(dx + SEARCH_RADIUS) as usize];
    let (fx, fy) = (dx as f64, dy as f64);
    r - (d[0] * fx + d[1] * fy + d[2] * fx * fx + d[3] * fy * fy)
}

/// Tie order: larger value, then smaller |dx|+|dy|, then raster order of
/// (dy, dx).
#[inline]
fn deform_better(value: f64, dx: i32, dy: i32, best: &DeformResult) -> bool {
    if value != best.score {
        return value > best.score;
    }
    let l1 = dx.abs() + dy.abs();
    let best_l1 = best.dx.abs() + best.dy.abs();
    if l1 != best_l1 {
        return l1 < best_l1;
    }
    (dy, dx) < (best.dy, best.dx)
}

/// Maximize part response minus deformation cost over the 5x5 region.
///
/// Exhaustive mode evaluates all 25 points. Coarse-to-fine evaluates the nine
/// even points, then the unvisited 3x3 neighborhood of the best of them
/// (clipped to the region), and returns the best point seen; it never beats
/// the exhaustive answer and spends 12 to 17 evaluations.
pub fn deform_max(
    resp: &PartResponse,
    d: &[f64; 4],
    mode: DeformMode,
    ledger: &mut CostLedger,
) -> DeformResult {
    let mut best = DeformResult {
        score: f64::NEG_INFINITY,
        dx: SEARCH_RADIUS,
        dy: SEARCH_RADIUS,
        evals: 0,
    };
    let mut evals = 0u32;
    let consider = |dx: i32, dy: i32, best: &mut DeformResult, evals: &mut u32| {
        *evals += 1;
        let v = deform_value(resp, d, dx, dy);
        if deform_better(v, dx, dy, best) {
            best.score = v;
            best.dx = dx;
            best.dy = dy;
        }
    };

    match mode {
        DeformMode::Exhaustive => {
            for dy in -SEARCH_RADIUS..=SEARCH_RADIUS {
                for dx in -SEARCH_RADIUS..=SEARCH_RADIUS {
                    consider(dx, dy, &mut best, &mut evals);
                }
            }
        }
        DeformMode::CoarseToFine => {
            for dy in [-2i32, 0, 2] {
                for dx in [-2i32, 0, 2] {
                    consider(dx, dy, &mut best, &mut evals);
                }
            }
            let (cx, cy) = (best.dx, best.dy);
            for dy in (cy - 1).max(-SEARCH_RADIUS)..=(cy + 1).min(SEARCH_RADIUS) {
                for dx in (cx - 1).max(-SEARCH_RADIUS)..=(cx + 1).min(SEARCH_RADIUS) {
                    let already_coarse = dx % 2 == 0 && dy % 2 == 0;
                    if !already_coarse {
                        consider(dx, dy, &mut best, &mut evals);
                    }
                }
            }
        }
    }

    ledger.deform_calls += 1;
    ledger.deform_evals += evals as u64;
    ledger.record(Stage::Deform, Kind::Mults, evals as u64 * DEFORM_MULTS_PER_EVAL);
    best.evals = evals;
    best
}

/// Total window score: root plus part responses plus bias, or root plus bias
/// when parts are off.
pub fn aggregate(root_score: f64, part_scores: Option<&[f64; PART_COUNT]>, bias: f64) -> f64 {
    let mut total = root_score;
    if let Some(parts) = part_scores {
        for &p in parts {
            total += p;
        }
    }
    total + bias
}

// --- full per-window scoring ---------------------------------------------------

/// Score of one surviving window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowTotal {
    pub total: f64,
    pub root_score: f64,
    pub root_only: bool,
    pub part_offsets: [[i32; 2]; PART_COUNT],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TotalGrid {
    pub w: usize,
    pub h: usize,
    /// `None` where pruning skipped the window.
    pub entries: Vec<Option<WindowTotal>>,
}

impl TotalGrid {
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> Option<&WindowTotal> {
        self.entries[y * self.w + x].as_ref()
    }
}

/// Per-window totals for one model over the whole pyramid.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelScores {
    pub root_w: usize,
    pub root_h: usize,
    pub threshold_used: f64,
    pub levels: Vec<Option<TotalGrid>>,
}

impl ModelScores {
    pub fn iter_windows(&self) -> impl Iterator<Item = (usize, usize, usize, &WindowTotal)> + '_ {
        self.levels.iter().enumerate().flat_map(|(level, grid)| {
            grid.iter().flat_map(move |g| {
                g.entries.iter().enumerate().filter_map(move |(i, e)| {
                    e.as_ref().map(|w| (level, i % g.w, i / g.w, w))
                })
            })
        })
    }
}

/// Run root scoring, pruning, parts, and aggregation for one model.
pub fn total_scores(
    fp: &FeaturePyramid,
    cm: &CompiledModel,
    codebook: Option<&Codebook>,
    quantized: Option<&[QuantizedGrid]>,
    cfg: &DetectorConfig,
    ledger: &mut CostLedger,
) -> Result<ModelScores, EngineError> {
    cfg.validate()?;
    let mut scorer = ModelScorer::new(
        fp,
        cm,
        codebook,
        if cfg.vq_enabled { quantized } else { None },
        cfg.projection_enabled,
    );
    let sm = scorer.root_scores(cfg.streaming, ledger);

    let threshold = match cfg.prune {
        PruneMode::Threshold(t) => t,
        PruneMode::Fraction(p) => {
            if sm.placement_count() == 0 {
                f64::INFINITY
            } else {
                calibrate_prune_threshold(&sm, p)?
            }
        }
    };
    charge_shadow_baselines(fp, cm, &sm, cfg.parts_enabled, ledger);
    let candidates = prune(&sm, threshold, ledger);

    let mut levels: Vec<Option<TotalGrid>> = sm
        .levels
        .iter()
        .map(|g| {
            g.as_ref().map(|g| TotalGrid {
                w: g.w,
                h: g.h,
                entries: vec![None; g.w * g.h],
            })
        })
        .collect();

    for cand in &candidates {
        let mut window = WindowTotal {
            total: aggregate(cand.root_score, None, cm.bias),
            root_score: cand.root_score,
            root_only: true,
            part_offsets: [[0, 0]; PART_COUNT],
        };
        if cfg.parts_enabled && part_level_of(fp, cand.level).is_some() {
            let responses: Vec<PartResponse> = (0..PART_COUNT)
                .map(|p| scorer.part_response(p, cand, ledger))
                .collect();
            let all_in_grid = responses
                .iter()
                .all(|r| r.iter().flatten().any(|v| v.is_finite()));
            if all_in_grid {
                let mut part_scores = [0.0f64; PART_COUNT];
                for (p, resp) in responses.iter().enumerate() {
                    let dm = deform_max(resp, &cm.parts[p].deformation, cfg.deform_mode, ledger);
                    part_scores[p] = dm.score;
                    window.part_offsets[p] = [dm.dx, dm.dy];
                }
                window.total = aggregate(cand.root_score, Some(&part_scores), cm.bias);
                window.root_only = false;
            }
        }
        let grid = levels[cand.level].as_mut().expect("candidate level has a grid");
        grid.entries[cand.y * grid.w + cand.x] = Some(window);
    }

    Ok(ModelScores {
        root_w: cm.root.w,
        root_h: cm.root.h,
        threshold_used: threshold,
        levels,
    })
}

/// Charge what the unoptimized pipeline would spend on parts and deformation
/// for every root placement of this frame. Purely geometric: per placement,
/// each part would be correlated at its in-grid subset of the 25 search
/// points with dense 13-multiply cells, and the deformation search would
/// evaluate all 25 points unless some part had no in-grid placement at all.
fn charge_shadow_baselines(
    fp: &FeaturePyramid,
    cm: &CompiledModel,
    sm: &ScoreMap,
    parts_enabled: bool,
    ledger: &mut CostLedger,
) {
    if !parts_enabled {
        return;
    }
    for (level, grid) in sm.levels.iter().enumerate() {
        let Some(grid) = grid else { continue };
        let Some(part_level) = part_level_of(fp, level) else {
            continue;
        };
        let pgrid = &fp.levels[part_level].grid;
        for y in 0..grid.h {
            for x in 0..grid.w {
                let mut part_mults = 0u64;
                let mut parts_with_coverage = 0usize;
                for part in &cm.parts {
                    let pf = &part.filter;
                    if pgrid.cols < pf.w || pgrid.rows < pf.h {
                        continue;
                    }
                    let cx = 2 * x as i32 + part.anchor.0;
                    let cy = 2 * y as i32 + part.anchor.1;
                    let in_x = in_grid_span(cx, pf.w, pgrid.cols);
                    let in_y = in_grid_span(cy, pf.h, pgrid.rows);
                    let count = (in_x * in_y) as u64;
                    if count > 0 {
                        parts_with_coverage += 1;
                    }
                    part_mults += count * (pf.cell_count() * DIM) as u64;
                }
                ledger.record(Stage::PartSvm, Kind::BaselineMults, part_mults);
                if parts_with_coverage == PART_COUNT {
                    ledger.record(
                        Stage::Deform,
                        Kind::BaselineMults,
                        PART_COUNT as u64 * SEARCH_POINTS * DEFORM_MULTS_PER_EVAL,
                    );
                }
            }
        }
    }
}

/// Number of displacements in [-2, 2] keeping a filter of extent `size`
/// inside a grid of extent `limit` when anchored at `center`.
fn in_grid_span(center: i32, size: usize, limit: usize) -> i64 {
    let lo = (-SEARCH_RADIUS).max(-center);
    let hi = SEARCH_RADIUS.min(limit as i32 - size as i32 - center);
    (hi as i64 - lo as i64 + 1).max(0)
}

// --- non-maximum suppression -----------------------------------------------------

fn iou(a: &[i64; 4], b: &[i64; 4]) -> f64 {
    let ix = (a[0] + a[2]).min(b[0] + b[2]) - a[0].max(b[0]);
    let iy = (a[1] + a[3]).min(b[1] + b[3]) - a[1].max(b[1]);
    if ix <= 0 || iy <= 0 {
        return 0.0;
    }
    let inter = (ix * iy) as f64;
    let union = (a[2] * a[3] + b[2] * b[3]) as f64 - inter;
    inter / union
}

/// Greedy suppression by descending score; a box is dropped when it overlaps
/// a kept box of the same class with IoU above the threshold.
pub fn nms(mut dets: Vec<Detection>, iou_threshold: f64) -> Vec<Detection> {
    dets.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.class_name.cmp(&b.class_name))
            .then_with(|| a.level.cmp(&b.level))
            .then_with(|| a.bbox.cmp(&b.bbox))
    });
    let mut kept: Vec<Detection> = Vec::new();
    for det in dets {
        let suppressed = kept
            .iter()
            .any(|k| k.class_name == det.class_name && iou(&k.bbox, &det.bbox) > iou_threshold);
        if !suppressed {
            kept.push(det);
        }
    }
    kept
}

// --- full-frame detection ----------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DetectOutput {
    pub detections: Vec<Detection>,
    pub ledger: CostLedger,
    pub report: CostReport,
}

/// Detect all models in one image. The feature pyramid is computed exactly
/// once regardless of how many models run over it.
pub fn detect(
    img: &Image,
    models: &[CompiledModel],
    codebook: Option<&Codebook>,
    cfg: &DetectorConfig,
) -> Result<DetectOutput, EngineError> {
    cfg.validate()?;
    let mut ledger = CostLedger::new();
    let fp = pyramid_features(img, &cfg.pyramid, &mut ledger)?;
    let detections = detect_on_pyramid(
        &fp,
        (img.width, img.height),
        models,
        codebook,
        cfg,
        &mut ledger,
    )?;
    let report = CostReport::from_run(&ledger);
    Ok(DetectOutput {
        detections,
        ledger,
        report,
    })
}

/// Detection over an already-built feature pyramid.
pub fn detect_on_pyramid(
    fp: &FeaturePyramid,
    image_size: (usize, usize),
    models: &[CompiledModel],
    codebook: Option<&Codebook>,
    cfg: &DetectorConfig,
    ledger: &mut CostLedger,
) -> Result<Vec<Detection>, EngineError> {
    cfg.validate()?;
    if models.is_empty() {
        return Err(EngineError::BadConfig("no models given".into()));
    }
    if cfg.vq_enabled && codebook.is_none() {
        return Err(EngineError::MissingCodebook);
    }

    // Every feature row passes through the line buffer once per frame,
    // whichever representation the part engines read.
    let mut lb = LineBufferModel::new(cfg.line_buffer_cells);
    for level in &fp.levels {
        for _ in 0..level.grid.rows {
            lb.write_row(level.grid.cols)?;
        }
    }
    ledger.buffer_write_bytes_raw += lb.write_bytes_raw;
    ledger.buffer_write_bytes_vq += lb.write_bytes_vq;
    ledger.storage.feature_buffer_raw = lb.raw_capacity_bytes();
    ledger.storage.feature_buffer_vq = lb.vq_capacity_bytes();
    if let Some(cb) = codebook {
        ledger.storage.codebook = cb.storage_bytes();
    }
    for cm in models {
        ledger.storage.weights_dense += cm.dense_weight_bytes();
        ledger.storage.weights_sparse += cm.sparse_weight_bytes();
        ledger.storage.basis += cm.basis_bytes();
    }

    let quantized: Option<Vec<QuantizedGrid>> = match (cfg.vq_enabled, codebook) {
        (true, Some(cb)) => Some(quantize_pyramid(fp, cb, ledger)),
        _ => None,
    };

    let mut all = Vec::new();
    for cm in models {
        let scores = total_scores(fp, cm, codebook, quantized.as_deref(), cfg, ledger)?;
        collect_detections(fp, image_size, cm, &scores, &mut all);
    }
    Ok(nms(all, cfg.nms_iou))
}

fn collect_detections(
    fp: &FeaturePyramid,
    (img_w, img_h): (usize, usize),
    cm: &CompiledModel,
    scores: &ModelScores,
    out: &mut Vec<Detection>,
) {
    let cell = fp.cell_size as f64;
    for (level, x, y, window) in scores.iter_windows() {
        if window.total < cm.detection_threshold {
            continue;
        }
        let scale = fp.levels[level].scale;
        let to_full = |cells: f64| (cells * cell / scale + 0.5).floor() as i64;
        let x0 = to_full(x as f64).clamp(0, img_w as i64);
        let y0 = to_full(y as f64).clamp(0, img_h as i64);
        let x1 = to_full((x + scores.root_w) as f64).clamp(0, img_w as i64);
        let y1 = to_full((y + scores.root_h) as f64).clamp(0, img_h as i64);
        out.push(Detection {
            class_name: cm.class_name.clone(),
            score: window.total,
            level,
            bbox: [x0, y0, (x1 - x0).max(1), (y1 - y0).max(1)],
            parts: window.part_offsets,
            root_only: window.root_only,
        });
    }
}
