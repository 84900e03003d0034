//! Detection model schema, the sparsifying basis projection, and compiled
//! model serialization.
//!
//! A source model is a root template plus exactly 8 part templates with
//! anchors and quadratic deformation costs, stored as JSON. Compiling a model
//! rotates every per-cell weight vector into an orthonormal basis chosen so
//! most coefficients can be zeroed (principal components of the model's own
//! cell weights), truncates each cell to its largest-magnitude coefficients,
//! and records which survived in a 13-bit flag per cell. Scoring then needs
//! only `popcount(flag)` multiplications per cell on basis-projected
//! features, while an orthonormal basis keeps the untruncated score exactly
//! equal to the original dot product.

use std::fs;
use std::io::{self, Read};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bytes::{self, write_file_atomic};
use crate::math::{self, Mat13, Vec13, DIM};

/// Maximum template edge in cells (128 pixels at 8 pixels per cell).
pub const MAX_FILTER_CELLS: usize = 16;
/// Number of part templates in every model.
pub const PART_COUNT: usize = 8;
/// Default minimum zero coefficients per projected cell.
pub const DEFAULT_MIN_ZEROS: usize = 7;
/// Retained coefficients below this magnitude are zeroed outright.
const COEFF_EPSILON: f64 = 1e-12;

const DPMC_MAGIC: &[u8; 4] = b"DPMC";
const DPMC_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("model io: {0}")]
    Io(#[from] io::Error),
    #[error("model json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("model schema: {0}")]
    Schema(String),
    #[error("filter is {w}x{h} cells; templates are limited to 16x16 (128x128 pixels)")]
    TemplateTooLarge { w: usize, h: usize },
    #[error("part {part}: deformation d3/d4 must be positive, got ({d3}, {d4})")]
    BadDeformation { part: usize, d3: f64, d4: f64 },
    #[error("corrupt compiled model: {0}")]
    Corrupt(String),
}

/// Dense filter weights: `h x w` cells of 13 components, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Filter {
    pub w: usize,
    pub h: usize,
    weights: Vec<f64>,
}

impl Filter {
    pub fn new(w: usize, h: usize, weights: Vec<f64>) -> Result<Filter, ModelError> {
        if w < 1 || h < 1 {
            return Err(ModelError::Schema(format!("filter dims {w}x{h}")));
        }
        if w > MAX_FILTER_CELLS || h > MAX_FILTER_CELLS {
            return Err(ModelError::TemplateTooLarge { w, h });
        }
        if weights.len() != w * h * DIM {
            return Err(ModelError::Schema(format!(
                "filter {w}x{h} expects {} weights, got {}",
                w * h * DIM,
                weights.len()
            )));
        }
        if weights.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Schema("non-finite filter weight".into()));
        }
        Ok(Filter { w, h, weights })
    }

    #[inline]
    pub fn cell(&self, x: usize, y: usize) -> &[f64] {
        let base = (y * self.w + x) * DIM;
        &self.weights[base..base + DIM]
    }

    pub fn cell_array(&self, x: usize, y: usize) -> Vec13 {
        let mut out = [0.0; DIM];
        out.copy_from_slice(self.cell(x, y));
        out
    }

    pub fn cell_count(&self) -> usize {
        self.w * self.h
    }

    /// Sum of squared weights, the self-correlation score of the template.
    pub fn energy(&self) -> f64 {
        self.weights.iter().map(|v| v * v).sum()
    }
}

/// A part template: filter at double resolution, anchor offset, and the
/// quadratic displacement cost `d1*dx + d2*dy + d3*dx^2 + d4*dy^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct PartSpec {
    pub filter: Filter,
    pub anchor: (i32, i32),
    pub deformation: [f64; 4],
}

/// A source detection model.
#[derive(Debug, Clone, PartialEq)]
pub struct DpmModel {
    pub class_name: String,
    pub bias: f64,
    pub detection_threshold: f64,
    pub root: Filter,
    pub parts: Vec<PartSpec>,
}

impl DpmModel {
    pub fn new(
        class_name: String,
        bias: f64,
        detection_threshold: f64,
        root: Filter,
        parts: Vec<PartSpec>,
    ) -> Result<DpmModel, ModelError> {
        if parts.len() != PART_COUNT {
            return Err(ModelError::Schema(format!(
                "expected {PART_COUNT} parts, got {}",
                parts.len()
            )));
        }
        for (i, p) in parts.iter().enumerate() {
            if !(p.deformation[2] > 0.0 && p.deformation[3] > 0.0) {
                return Err(ModelError::BadDeformation {
                    part: i,
                    d3: p.deformation[2],
                    d4: p.deformation[3],
                });
            }
            if !p.deformation.iter().all(|d| d.is_finite()) {
                return Err(ModelError::Schema(format!("part {i}: non-finite deformation")));
            }
            let (ax, ay) = p.anchor;
            if ax.unsigned_abs() as usize > 2 * root.w || ay.unsigned_abs() as usize > 2 * root.h {
                return Err(ModelError::Schema(format!(
                    "part {i}: anchor ({ax}, {ay}) outside twice the root extent"
                )));
            }
        }
        if !bias.is_finite() || !detection_threshold.is_finite() {
            return Err(ModelError::Schema("non-finite bias or threshold".into()));
        }
        Ok(DpmModel {
            class_name,
            bias,
            detection_threshold,
            root,
            parts,
        })
    }

    /// Every per-cell weight vector of the root and all parts.
    fn all_cell_vectors(&self) -> Vec<Vec13> {
        let mut out = Vec::new();
        let mut push = |f: &Filter| {
            for y in 0..f.h {
                for x in 0..f.w {
                    out.push(f.cell_array(x, y));
                }
            }
        };
        push(&self.root);
        for p in &self.parts {
            push(&p.filter);
        }
        out
    }

    pub fn total_weight_cells(&self) -> usize {
        self.root.cell_count() + self.parts.iter().map(|p| p.filter.cell_count()).sum::<usize>()
    }
}

// --- JSON source format ---------------------------------------------------

#[derive(Serialize, Deserialize)]
struct FilterJson {
    w: usize,
    h: usize,
    weights: Vec<Vec<Vec<f64>>>,
}

#[derive(Serialize, Deserialize)]
struct PartJson {
    w: usize,
    h: usize,
    weights: Vec<Vec<Vec<f64>>>,
    anchor: [i32; 2],
    def: [f64; 4],
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    class_name: String,
    bias: f64,
    detection_threshold: f64,
    root: FilterJson,
    parts: Vec<PartJson>,
}

fn filter_from_nested(w: usize, h: usize, nested: &[Vec<Vec<f64>>]) -> Result<Filter, ModelError> {
    if nested.len() != h {
        return Err(ModelError::Schema(format!(
            "weights rows {} != h {h}",
            nested.len()
        )));
    }
    let mut flat = Vec::with_capacity(w * h * DIM);
    for row in nested {
        if row.len() != w {
            return Err(ModelError::Schema(format!("weights cols {} != w {w}", row.len())));
        }
        for cell in row {
            if cell.len() != DIM {
                return Err(ModelError::Schema(format!(
                    "cell has {} components, expected {DIM}",
                    cell.len()
                )));
            }
            flat.extend_from_slice(cell);
        }
    }
    Filter::new(w, h, flat)
}

fn filter_to_nested(f: &Filter) -> Vec<Vec<Vec<f64>>> {
    (0..f.h)
        .map(|y| (0..f.w).map(|x| f.cell(x, y).to_vec()).collect())
        .collect()
}

/// Parse and validate a source model from JSON text.
pub fn model_from_json(text: &str) -> Result<DpmModel, ModelError> {
    let j: ModelJson = serde_json::from_str(text)?;
    let root = filter_from_nested(j.root.w, j.root.h, &j.root.weights)?;
    let parts = j
        .parts
        .iter()
        .map(|p| {
            Ok(PartSpec {
                filter: filter_from_nested(p.w, p.h, &p.weights)?,
                anchor: (p.anchor[0], p.anchor[1]),
                deformation: p.def,
            })
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    DpmModel::new(j.class_name, j.bias, j.detection_threshold, root, parts)
}

pub fn model_to_json(m: &DpmModel) -> String {
    let j = ModelJson {
        class_name: m.class_name.clone(),
        bias: m.bias,
        detection_threshold: m.detection_threshold,
        root: FilterJson {
            w: m.root.w,
            h: m.root.h,
            weights: filter_to_nested(&m.root),
        },
        parts: m
            .parts
            .iter()
            .map(|p| PartJson {
                w: p.filter.w,
                h: p.filter.h,
                weights: filter_to_nested(&p.filter),
                anchor: [p.anchor.0, p.anchor.1],
                def: p.deformation,
            })
            .collect(),
    };
    serde_json::to_string_pretty(&j).expect("model serialization cannot fail")
}

pub fn load_model(path: &Path) -> Result<DpmModel, ModelError> {
    model_from_json(&fs::read_to_string(path)?)
}

pub fn save_model(m: &DpmModel, path: &Path) -> Result<(), ModelError> {
    Ok(write_file_atomic(path, model_to_json(m).as_bytes())?)
}

// --- Basis projection ------------------------------------------------------

/// Orthonormal 13x13 change of coordinates; row `i` is the i-th basis vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Basis {
    pub matrix: Mat13,
}

impl Basis {
    pub fn identity() -> Basis {
        let mut m = [[0.0; DIM]; DIM];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        Basis { matrix: m }
    }

    /// Project a vector: `out[i] = basis_row_i . v`.
    pub fn project(&self, v: &Vec13) -> Vec13 {
        let mut out = [0.0; DIM];
        for (i, row) in self.matrix.iter().enumerate() {
            out[i] = math::dot(row, v);
        }
        out
    }

    /// Apply the transpose: maps projected coefficients back to the original
    /// coordinates.
    pub fn unproject(&self, c: &Vec13) -> Vec13 {
        let mut out = [0.0; DIM];
        for (b, row) in self.matrix.iter().enumerate() {
            for i in 0..DIM {
                out[i] += row[i] * c[b];
            }
        }
        out
    }

    /// Maximum absolute deviation of `B^T B` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..DIM {
            for j in 0..DIM {
                let mut g = 0.0;
                for row in &self.matrix {
                    g += row[i] * row[j];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - expect).abs());
            }
        }
        worst
    }
}

/// Choose the projection basis for a model: the principal components of its
/// per-cell weight vectors (mean removed), ordered by descending eigenvalue.
/// Sign convention: the largest-magnitude component of each basis vector is
/// positive (first such index on ties). A model with no weight variance gets
/// the identity basis.
pub fn compute_basis(m: &DpmModel) -> Basis {
    let vectors = m.all_cell_vectors();
    let n = vectors.len() as f64;
    let mut mean = [0.0f64; DIM];
    for v in &vectors {
        for d in 0..DIM {
            mean[d] += v[d];
        }
    }
    for d in &mut mean {
        *d /= n;
    }

    let mut cov = [[0.0f64; DIM]; DIM];
    for v in &vectors {
        for i in 0..DIM {
            let di = v[i] - mean[i];
            for j in i..DIM {
                cov[i][j] += di * (v[j] - mean[j]);
            }
        }
    }
    for i in 0..DIM {
        for j in i..DIM {
            cov[i][j] /= n;
            cov[j][i] = cov[i][j];
        }
    }

    if cov.iter().flatten().all(|&v| v == 0.0) {
        return Basis::identity();
    }

    let (_, mut vectors) = math::symmetric_eigen(&cov);
    for row in &mut vectors {
        let mut lead = 0usize;
        for (i, v) in row.iter().enumerate() {
            if v.abs() > row[lead].abs() {
                lead = i;
            }
        }
        if row[lead] < 0.0 {
            for v in row.iter_mut() {
                *v = -*v;
            }
        }
    }
    Basis { matrix: vectors }
}

// --- Compiled (sparse) models ----------------------------------------------

/// One projected cell: a 13-bit flag of surviving coefficients and their
/// values packed in ascending index order.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCell {
    pub flag: u16,
    pub coeffs: Vec<f64>,
}

impl SparseCell {
    pub fn nonzeros(&self) -> usize {
        self.flag.count_ones() as usize
    }
}

/// A filter after projection and truncation. `dense` holds the truncated
/// weights rotated back to feature coordinates, used when scoring without
/// projected features.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseFilter {
    pub w: usize,
    pub h: usize,
    pub cells: Vec<SparseCell>,
    dense: Vec<f64>,
}

impl SparseFilter {
    #[inline]
    pub fn cell(&self, x: usize, y: usize) -> &SparseCell {
        &self.cells[y * self.w + x]
    }

    /// Truncated weights in feature coordinates for one cell.
    #[inline]
    pub fn dense_cell(&self, x: usize, y: usize) -> &[f64] {
        let base = (y * self.w + x) * DIM;
        &self.dense[base..base + DIM]
    }

    pub fn cell_count(&self) -> usize {
        self.w * self.h
    }

    fn rebuild_dense(&mut self, basis: &Basis) {
        self.dense = vec![0.0; self.w * self.h * DIM];
        for (ci, cell) in self.cells.iter().enumerate() {
            let mut c = [0.0f64; DIM];
            let mut it = cell.coeffs.iter();
            for b in 0..DIM {
                if cell.flag & (1 << b) != 0 {
                    c[b] = *it.next().expect("coeff count matches popcount");
                }
            }
            let w = basis.unproject(&c);
            self.dense[ci * DIM..(ci + 1) * DIM].copy_from_slice(&w);
        }
    }

    fn total_nonzeros(&self) -> usize {
        self.cells.iter().map(|c| c.nonzeros()).sum()
    }
}

/// A compiled part: sparse filter plus the runtime placement parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledPart {
    pub filter: SparseFilter,
    pub anchor: (i32, i32),
    pub deformation: [f64; 4],
}

/// A model ready for detection: basis, sparse filters, and scoring metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct CompiledModel {
    pub class_name: String,
    pub bias: f64,
    pub detection_threshold: f64,
    pub min_zeros: usize,
    pub basis: Basis,
    pub root: SparseFilter,
    pub parts: Vec<CompiledPart>,
}

impl CompiledModel {
    pub fn total_weight_cells(&self) -> usize {
        self.root.cell_count() + self.parts.iter().map(|p| p.filter.cell_count()).sum::<usize>()
    }

    /// Fraction of projected weight coefficients that are zero.
    pub fn zero_fraction(&self) -> f64 {
        let cells = self.total_weight_cells();
        let nonzeros = self.root.total_nonzeros()
            + self.parts.iter().map(|p| p.filter.total_nonzeros()).sum::<usize>();
        1.0 - nonzeros as f64 / (cells * DIM) as f64
    }

    /// Largest surviving coefficient count over all cells.
    pub fn max_nonzeros_per_cell(&self) -> usize {
        self.root
            .cells
            .iter()
            .chain(self.parts.iter().flat_map(|p| p.filter.cells.iter()))
            .map(|c| c.nonzeros())
            .max()
            .unwrap_or(0)
    }

    /// Modeled weight bytes if stored dense: 13 f32 per cell.
    pub fn dense_weight_bytes(&self) -> f64 {
        (self.total_weight_cells() * DIM * 4) as f64
    }

    /// Modeled weight bytes as stored: a 16-bit flag word plus one f32 per
    /// surviving coefficient.
    pub fn sparse_weight_bytes(&self) -> f64 {
        let nonzeros = self.root.total_nonzeros()
            + self.parts.iter().map(|p| p.filter.total_nonzeros()).sum::<usize>();
        (self.total_weight_cells() * 2 + nonzeros * 4) as f64
    }

    pub fn basis_bytes(&self) -> f64 {
        (DIM * DIM * 4) as f64
    }
}

fn sparsify_filter(f: &Filter, basis: &Basis, min_zeros: usize) -> SparseFilter {
    let keep = DIM - min_zeros;
    let mut cells = Vec::with_capacity(f.cell_count());
    for y in 0..f.h {
        for x in 0..f.w {
            let c = basis.project(&f.cell_array(x, y));
            // Rank coefficient indices by |value| descending, index ascending
            // on ties, and keep the first `keep`.
            let mut order: Vec<usize> = (0..DIM).collect();
            order.sort_by(|&a, &b| {
                c[b].abs()
                    .partial_cmp(&c[a].abs())
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let mut flag = 0u16;
            for &idx in order.iter().take(keep) {
                if c[idx].abs() >= COEFF_EPSILON {
                    flag |= 1 << idx;
                }
            }
            let coeffs = (0..DIM).filter(|&b| flag & (1 << b) != 0).map(|b| c[b]).collect();
            cells.push(SparseCell { flag, coeffs });
        }
    }
    let mut out = SparseFilter {
        w: f.w,
        h: f.h,
        cells,
        dense: Vec::new(),
    };
    out.rebuild_dense(basis);
    out
}

/// Project a model's weights into `basis` and zero at least `min_zeros`
/// coefficients per cell, keeping the largest magnitudes.
pub fn sparsify(m: &DpmModel, basis: &Basis, min_zeros: usize) -> Result<CompiledModel, ModelError> {
    if min_zeros > DIM {
        return Err(ModelError::Schema(format!(
            "min_zeros {min_zeros} exceeds dimensionality {DIM}"
        )));
    }
    Ok(CompiledModel {
        class_name: m.class_name.clone(),
        bias: m.bias,
        detection_threshold: m.detection_threshold,
        min_zeros,
        basis: basis.clone(),
        root: sparsify_filter(&m.root, basis, min_zeros),
        parts: m
            .parts
            .iter()
            .map(|p| CompiledPart {
                filter: sparsify_filter(&p.filter, basis, min_zeros),
                anchor: p.anchor,
                deformation: p.deformation,
            })
            .collect(),
    })
}

/// Compile with the model's own principal-component basis.
pub fn compile(m: &DpmModel, min_zeros: usize) -> Result<CompiledModel, ModelError> {
    sparsify(m, &compute_basis(m), min_zeros)
}

// --- Compiled binary format ------------------------------------------------

fn write_sparse_filter(out: &mut Vec<u8>, f: &SparseFilter) {
    bytes::write_u16(out, f.w as u16).unwrap();
    bytes::write_u16(out, f.h as u16).unwrap();
    for cell in &f.cells {
        bytes::write_u16(out, cell.flag).unwrap();
        for &c in &cell.coeffs {
            bytes::write_f32(out, c as f32).unwrap();
        }
    }
}

fn read_sparse_filter<R: Read>(r: &mut R, basis: &Basis) -> Result<SparseFilter, ModelError> {
    let w = bytes::read_u16(r)? as usize;
    let h = bytes::read_u16(r)? as usize;
    if w < 1 || h < 1 || w > MAX_FILTER_CELLS || h > MAX_FILTER_CELLS {
        return Err(ModelError::Corrupt(format!("filter dims {w}x{h}")));
    }
    let mut cells = Vec::with_capacity(w * h);
    for _ in 0..w * h {
        let flag = bytes::read_u16(r)?;
        if flag >> DIM != 0 {
            return Err(ModelError::Corrupt(format!("flag {flag:#06x} uses reserved bits")));
        }
        let mut coeffs = Vec::with_capacity(flag.count_ones() as usize);
        for _ in 0..flag.count_ones() {
            coeffs.push(bytes::read_f32(r)? as f64);
        }
        cells.push(SparseCell { flag, coeffs });
    }
    let mut out = SparseFilter {
        w,
        h,
        cells,
        dense: Vec::new(),
    };
    out.rebuild_dense(basis);
    Ok(out)
}

pub fn compiled_to_bytes(cm: &CompiledModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(DPMC_MAGIC);
    out.push(DPMC_VERSION);
    let name = cm.class_name.as_bytes();
    bytes::write_u16(&mut out, name.len() as u16).unwrap();
    out.extend_from_slice(name);
    bytes::write_f64(&mut out, cm.bias).unwrap();
    bytes::write_f64(&mut out, cm.detection_threshold).unwrap();
    bytes::write_u8(&mut out, cm.min_zeros as u8).unwrap();
    for row in &cm.basis.matrix {
        for &v in row {
            bytes::write_f32(&mut out, v as f32).unwrap();
        }
    }
    write_sparse_filter(&mut out, &cm.root);
    for p in &cm.parts {
        bytes::write_i16(&mut out, p.anchor.0 as i16).unwrap();
        bytes::write_i16(&mut out, p.anchor.1 as i16).unwrap();
        for &d in &p.deformation {
            bytes::write_f64(&mut out, d).unwrap();
        }
        write_sparse_filter(&mut out, &p.filter);
    }
    out
}

pub fn compiled_from_bytes(data: &[u8]) -> Result<CompiledModel, ModelError> {
    let mut r = data;
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| ModelError::Corrupt("missing magic".into()))?;
    if &magic != DPMC_MAGIC {
        return Err(ModelError::Corrupt(format!("bad magic {magic:?}")));
    }
    let version = bytes::read_u8(&mut r)?;
    if version != DPMC_VERSION {
        return Err(ModelError::Corrupt(format!("unsupported version {version}")));
    }
    let name_len = bytes::read_u16(&mut r)? as usize;
    let mut name = vec![0u8; name_len];
    r.read_exact(&mut name)
        .map_err(|_| ModelError::Corrupt("truncated class name".into()))?;
    let class_name = String::from_utf8(name)
        .map_err(|_| ModelError::Corrupt("class name is not utf-8".into()))?;
    let bias = bytes::read_f64(&mut r)?;
    let detection_threshold = bytes::read_f64(&mut r)?;
    let min_zeros = bytes::read_u8(&mut r)? as usize;
    if min_zeros > DIM {
        return Err(ModelError::Corrupt(format!("min_zeros {min_zeros}")));
    }
    let mut matrix = [[0.0f64; DIM]; DIM];
    for row in &mut matrix {
        for v in row.iter_mut() {
            *v = bytes::read_f32(&mut r)? as f64;
        }
    }
    let basis = Basis { matrix };
    if basis.orthonormality_error() > 1e-4 {
        return Err(ModelError::Corrupt("basis is not orthonormal".into()));
    }
    let root = read_sparse_filter(&mut r, &basis)?;
    let mut parts = Vec::with_capacity(PART_COUNT);
    for _ in 0..PART_COUNT {
        let ax = bytes::read_i16(&mut r)? as i32;
        let ay = bytes::read_i16(&mut r)? as i32;
        let mut deformation = [0.0f64; 4];
        for d in &mut deformation {
            *d = bytes::read_f64(&mut r)?;
        }
        if !(deformation[2] > 0.0 && deformation[3] > 0.0) {
            return Err(ModelError::Corrupt("non-positive quadratic deformation".into()));
        }
        parts.push(CompiledPart {
            filter: read_sparse_filter(&mut r, &basis)?,
            anchor: (ax, ay),
            deformation,
        });
    }
    Ok(CompiledModel {
        class_name,
        bias,
        detection_threshold,
        min_zeros,
        basis,
        root,
        parts,
    })
}

pub fn serialize_compiled(cm: &CompiledModel, path: &Path) -> Result<(), ModelError> {
    Ok(write_file_atomic(path, &compiled_to_bytes(cm))?)
}

pub fn load_compiled(path: &Path) -> Result<CompiledModel, ModelError> {
    compiled_from_bytes(&fs::read(path)?)
}
