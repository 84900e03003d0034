//! Feature vector quantization: codebook training, nearest-center lookup,
//! and the quantized feature line buffer with byte accounting.
//!
//! A trained codebook holds up to 256 centers so a 13-D cell collapses to a
//! single byte of index. De-quantization is a table read and costs no
//! multiplications. The line buffer model tracks occupancy under a
//! row-granular ring policy and accumulates written bytes in both raw
//! (143-bit cells) and quantized (1-byte cells) modes so the storage and
//! bandwidth reductions can be reported from one pass.
//!
//! A codebook is immutable after training; quantizing distinct cells is
//! independent work and may run on any number of workers against the shared
//! center table. The line buffer is single-writer.

use std::collections::HashSet;
use std::fs;
use std::io::{self, Read};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bytes::{self, write_file_atomic};
use crate::frontend::DEFAULT_QUANTIZER_SCALE;
use crate::math::{Vec13, DIM};
use crate::metrics::{CostLedger, Stage};

/// Raw stored cell: 13 components of 11 bits.
pub const RAW_BITS_PER_CELL: f64 = 143.0;
pub const BYTES_PER_CELL_RAW: f64 = RAW_BITS_PER_CELL / 8.0;
pub const BYTES_PER_CELL_VQ: f64 = 1.0;
/// Default line buffer capacity in cells (32 KB at one byte per cell).
pub const DEFAULT_LINE_BUFFER_CELLS: usize = 32_768;

const VQCB_MAGIC: &[u8; 4] = b"VQCB";
const VQCB_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum VqError {
    #[error("codebook size {0} is out of range [2, 256]")]
    KOutOfRange(usize),
    #[error("need at least {needed} distinct samples, found {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("codeword index {index} out of range for {k} centers")]
    IndexOutOfRange { index: usize, k: usize },
    #[error("row of {row} cells exceeds line buffer capacity {capacity}")]
    RowTooLarge { row: usize, capacity: usize },
    #[error("codebook io: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt codebook file: {0}")]
    Corrupt(String),
}

/// An immutable set of quantization centers.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    centers: Vec<Vec13>,
    /// 11-bit fixed-point view of the centers.
    quantized_centers: Vec<[u16; DIM]>,
}

impl Codebook {
    pub fn from_centers(centers: Vec<Vec13>) -> Result<Codebook, VqError> {
        if centers.len() < 2 || centers.len() > 256 {
            return Err(VqError::KOutOfRange(centers.len()));
        }
        let quantized_centers = centers
            .iter()
            .map(|c| {
                let mut q = [0u16; DIM];
                for (d, &v) in c.iter().enumerate() {
                    q[d] = (v * DEFAULT_QUANTIZER_SCALE).round().clamp(0.0, 2047.0) as u16;
                }
                q
            })
            .collect();
        Ok(Codebook {
            centers,
            quantized_centers,
        })
    }

    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn centers(&self) -> &[Vec13] {
        &self.centers
    }

    pub fn quantized_centers(&self) -> &[[u16; DIM]] {
        &self.quantized_centers
    }

    /// On-chip footprint of the center store: 143 bits per center.
    pub fn storage_bytes(&self) -> f64 {
        self.k() as f64 * BYTES_PER_CELL_RAW
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(VQCB_MAGIC);
        out.push(VQCB_VERSION);
        bytes::write_u16(&mut out, self.k() as u16).unwrap();
        out.push(DIM as u8);
        for c in &self.centers {
            for &v in c {
                bytes::write_f32(&mut out, v as f32).unwrap();
            }
        }
        for q in &self.quantized_centers {
            for &v in q {
                bytes::write_u16(&mut out, v).unwrap();
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), VqError> {
        Ok(write_file_atomic(path, &self.to_bytes())?)
    }

    pub fn from_bytes(data: &[u8]) -> Result<Codebook, VqError> {
        let mut r = data;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)
            .map_err(|_| VqError::Corrupt("missing magic".into()))?;
        if &magic != VQCB_MAGIC {
            return Err(VqError::Corrupt(format!("bad magic {magic:?}")));
        }
        let version = bytes::read_u8(&mut r)?;
        if version != VQCB_VERSION {
            return Err(VqError::Corrupt(format!("unsupported version {version}")));
        }
        let k = bytes::read_u16(&mut r)? as usize;
        let dim = bytes::read_u8(&mut r)? as usize;
        if dim != DIM {
            return Err(VqError::Corrupt(format!("dimension {dim} != {DIM}")));
        }
        if !(2..=256).contains(&k) {
            return Err(VqError::KOutOfRange(k));
        }
        let mut centers = Vec::with_capacity(k);
        for _ in 0..k {
            let mut c = [0.0f64; DIM];
            for v in &mut c {
                *v = bytes::read_f32(&mut r)? as f64;
            }
            centers.push(c);
        }
        let mut quantized_centers = Vec::with_capacity(k);
        for _ in 0..k {
            let mut q = [0u16; DIM];
            for v in &mut q {
                *v = bytes::read_u16(&mut r)?;
            }
            quantized_centers.push(q);
        }
        Ok(Codebook {
            centers,
            quantized_centers,
        })
    }

    pub fn load(path: &Path) -> Result<Codebook, VqError> {
        Codebook::from_bytes(&fs::read(path)?)
    }
}

/// Cell-to-codeword indices for one pyramid level.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedGrid {
    pub cols: usize,
    pub rows: usize,
    pub indices: Vec<u8>,
}

impl QuantizedGrid {
    #[inline]
    pub fn index(&self, x: usize, y: usize) -> u8 {
        self.indices[y * self.cols + x]
    }
}

fn squared_distance(a: &Vec13, b: &Vec13) -> f64 {
    let mut s = 0.0;
    for d in 0..DIM {
        let diff = a[d] - b[d];
        s += diff * diff;
    }
    s
}

/// Nearest center index by squared Euclidean distance; ties break to the
/// lowest index. Charges `k * 13` multiplications to the quantization stage.
pub fn quantize_cell(f: &Vec13, cb: &Codebook, ledger: &mut CostLedger) -> u8 {
    ledger.charge(Stage::VqQuant, (cb.k() * DIM) as u64);
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, c) in cb.centers.iter().enumerate() {
        let d = squared_distance(f, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best as u8
}

/// Codeword lookup. A memory read: zero multiplications.
pub fn dequantize(idx: u8, cb: &Codebook) -> Result<&Vec13, VqError> {
    cb.centers
        .get(idx as usize)
        .ok_or(VqError::IndexOutOfRange {
            index: idx as usize,
            k: cb.k(),
        })
}

/// Train a codebook with seeded k-means++ initialization and Lloyd
/// iterations.
///
/// Iteration stops when the relative distortion improvement drops below
/// 1e-5 or after 100 rounds. Empty clusters (and duplicate centers) reseed to
/// the sample farthest from its assigned center. Center order is the
/// initialization pick order, so results are deterministic given the seed.
pub fn train_codebook(samples: &[Vec13], k: usize, seed: u64) -> Result<Codebook, VqError> {
    Ok(train_codebook_traced(samples, k, seed)?.0)
}

/// [`train_codebook`] variant that also returns the distortion measured at
/// each assignment pass.
pub fn train_codebook_traced(
    samples: &[Vec13],
    k: usize,
    seed: u64,
) -> Result<(Codebook, Vec<f64>), VqError> {
    if !(2..=256).contains(&k) {
        return Err(VqError::KOutOfRange(k));
    }
    let distinct: HashSet<[u64; DIM]> = samples.iter().map(|s| s.map(f64::to_bits)).collect();
    if distinct.len() < k {
        return Err(VqError::TooFewSamples {
            needed: k,
            found: distinct.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = kmeans_plus_plus_init(samples, k, &mut rng);

    let mut assignment = vec![0usize; samples.len()];
    let mut trace: Vec<f64> = Vec::new();
    for _iter in 0..100 {
        // Assignment pass; also measures distortion under the current centers.
        let mut distortion = 0.0;
        for (s, a) in samples.iter().zip(assignment.iter_mut()) {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (i, c) in centers.iter().enumerate() {
                let d = squared_distance(s, c);
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            *a = best;
            distortion += best_d;
        }
        if let Some(&prev) = trace.last() {
            debug_assert!(distortion <= prev + prev.abs() * 1e-12 + 1e-12);
        }
        let converged = match trace.last() {
            Some(&prev) => prev == 0.0 || (prev - distortion) / prev < 1e-5,
            None => false,
        };
        trace.push(distortion);
        if converged {
            break;
        }

        // Update pass: means of each cluster.
        let mut sums = vec![[0.0f64; DIM]; k];
        let mut counts = vec![0usize; k];
        for (s, &a) in samples.iter().zip(assignment.iter()) {
            counts[a] += 1;
            for d in 0..DIM {
                sums[a][d] += s[d];
            }
        }
        for i in 0..k {
            if counts[i] > 0 {
                for d in 0..DIM {
                    centers[i][d] = sums[i][d] / counts[i] as f64;
                }
            }
        }

        // Reseed empty or duplicate centers to the sample farthest from its
        // center; stealing a point never increases any sample's best distance
        // because the original centers remain available.
        let mut seen: HashSet<[u64; DIM]> = HashSet::new();
        let mut stolen: HashSet<usize> = HashSet::new();
        for i in 0..k {
            let needs_reseed = counts[i] == 0 || !seen.insert(centers[i].map(f64::to_bits));
            if !needs_reseed {
                continue;
            }
            let mut far_idx = None;
            let mut far_d = -1.0;
            for (si, (s, &a)) in samples.iter().zip(assignment.iter()).enumerate() {
                if stolen.contains(&si) {
                    continue;
                }
                let d = squared_distance(s, &centers[a]);
                if d > far_d {
                    far_d = d;
                    far_idx = Some(si);
                }
            }
            if let Some(si) = far_idx {
                stolen.insert(si);
                centers[i] = samples[si];
                seen.insert(centers[i].map(f64::to_bits));
            }
        }
    }

    Ok((Codebook::from_centers(centers)?, trace))
}

fn kmeans_plus_plus_init(samples: &[Vec13], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec13> {
    let mut centers: Vec<Vec13> = Vec::with_capacity(k);
    let first = rng.gen_range(0..samples.len());
    centers.push(samples[first]);

    // Squared distance to the nearest chosen center, updated incrementally.
    let mut d2: Vec<f64> = samples
        .iter()
        .map(|s| squared_distance(s, &centers[0]))
        .collect();

    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut chosen = samples.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                target -= w;
                if target <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // All remaining mass sits on already-chosen points; take the first
            // sample not yet used as a center.
            let used: HashSet<[u64; DIM]> = centers.iter().map(|c| c.map(f64::to_bits)).collect();
            samples
                .iter()
                .position(|s| !used.contains(&s.map(f64::to_bits)))
                .expect("distinct sample count was checked above")
        };
        let c = samples[pick];
        centers.push(c);
        for (s, d) in samples.iter().zip(d2.iter_mut()) {
            *d = d.min(squared_distance(s, &c));
        }
    }
    centers
}

/// Bounded row-ordered store for quantized feature rows, with parallel raw
/// and quantized byte accounting.
#[derive(Debug, Clone)]
pub struct LineBufferModel {
    pub capacity_cells: usize,
    rows: std::collections::VecDeque<usize>,
    occupancy: usize,
    pub write_bytes_vq: f64,
    pub write_bytes_raw: f64,
}

impl LineBufferModel {
    pub fn new(capacity_cells: usize) -> LineBufferModel {
        LineBufferModel {
            capacity_cells,
            rows: std::collections::VecDeque::new(),
            occupancy: 0,
            write_bytes_vq: 0.0,
            write_bytes_raw: 0.0,
        }
    }

    pub fn occupancy(&self) -> usize {
        self.occupancy
    }

    /// Append one feature row of `cells` entries, evicting the oldest rows
    /// until it fits.
    pub fn write_row(&mut self, cells: usize) -> Result<(), VqError> {
        if cells > self.capacity_cells {
            return Err(VqError::RowTooLarge {
                row: cells,
                capacity: self.capacity_cells,
            });
        }
        while self.occupancy + cells > self.capacity_cells {
            let evicted = self.rows.pop_front().expect("occupancy implies rows");
            self.occupancy -= evicted;
        }
        self.rows.push_back(cells);
        self.occupancy += cells;
        self.write_bytes_vq += cells as f64 * BYTES_PER_CELL_VQ;
        self.write_bytes_raw += cells as f64 * BYTES_PER_CELL_RAW;
        Ok(())
    }

    /// Append one row of quantized indices.
    pub fn write_grid_row(&mut self, grid: &QuantizedGrid, row: usize) -> Result<(), VqError> {
        debug_assert!(row < grid.rows);
        self.write_row(grid.cols)
    }

    pub fn raw_capacity_bytes(&self) -> f64 {
        self.capacity_cells as f64 * BYTES_PER_CELL_RAW
    }

    pub fn vq_capacity_bytes(&self) -> f64 {
        self.capacity_cells as f64 * BYTES_PER_CELL_VQ
    }
}

impl Default for LineBufferModel {
    fn default() -> Self {
        LineBufferModel::new(DEFAULT_LINE_BUFFER_CELLS)
    }
}
