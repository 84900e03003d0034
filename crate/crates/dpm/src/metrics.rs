//! Cost accounting: multiplications, stored bytes, and write bandwidth per
//! pipeline stage.
//!
//! The ledger is the power proxy of the whole crate: one unit is one real (or
//! fixed-point) multiply inside a dot product, a distance computation, or a
//! projection. Additions and comparisons are free. Each stage also tracks a
//! `baseline_mults` shadow counter holding the cost the same frame would have
//! incurred with every optimization disabled (no pruning, dense weights, no
//! projection); the shadow is charged from window geometry alone, so a single
//! instrumented run yields a complete reduction report. Tests cross-check the
//! shadow against a real all-off run.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

/// Pipeline stages that incur multiplications.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    /// Pyramid scaling, gradient binning, and cell normalization.
    Hog,
    /// Nearest-center search when features are vector quantized.
    VqQuant,
    /// Rotating features (or codebook centers) into a model basis.
    Projection,
    /// Root template dot products.
    RootSvm,
    /// Part template dot products.
    PartSvm,
    /// Deformation-cost evaluations in the 5x5 search.
    Deform,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Hog,
        Stage::VqQuant,
        Stage::Projection,
        Stage::RootSvm,
        Stage::PartSvm,
        Stage::Deform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Hog => "hog",
            Stage::VqQuant => "vq_quant",
            Stage::Projection => "projection",
            Stage::RootSvm => "root_svm",
            Stage::PartSvm => "part_svm",
            Stage::Deform => "deform",
        }
    }

    /// Parse a stage name as it appears in report JSON.
    pub fn from_name(name: &str) -> Result<Stage, MetricsError> {
        Stage::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| MetricsError::UnknownStage(name.to_string()))
    }
}

/// Counter kinds accepted by [`CostLedger::record`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Multiplications actually performed.
    Mults,
    /// Multiplications the unoptimized pipeline would have performed.
    BaselineMults,
}

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("unknown ledger stage: {0}")]
    UnknownStage(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StageCounters {
    pub mults: u64,
    pub baseline_mults: u64,
}

/// Modeled on-chip storage footprints in bytes.
///
/// Raw feature cells are 143 bits (13 components, 11 bits each), hence the
/// fractional byte sizes; quantized cells are one byte of codeword index.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct StorageBytes {
    pub feature_buffer_raw: f64,
    pub feature_buffer_vq: f64,
    pub codebook: f64,
    pub weights_dense: f64,
    pub weights_sparse: f64,
    pub basis: f64,
}

/// Per-frame cost ledger.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CostLedger {
    counters: [StageCounters; 6],
    pub storage: StorageBytes,
    /// Bytes written to the feature line buffer this frame, raw mode.
    pub buffer_write_bytes_raw: f64,
    /// Bytes written to the feature line buffer this frame, quantized mode.
    pub buffer_write_bytes_vq: f64,
    /// Root placements inspected by the pruning stage.
    pub candidates_total: u64,
    /// Root placements that survived pruning.
    pub candidates_kept: u64,
    /// Invovations of the 5x5 deformation search.
    pub deform_calls: u64,
    /// Points evaluated across all deformation searches.
    pub deform_evals: u64,
    /// Feature cells produced per pyramid level.
    pub cells_per_level: Vec<u64>,
}

impl CostLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, stage: Stage, kind: Kind, amount: u64) {
        let c = &mut self.counters[Self::index(stage)];
        match kind {
            Kind::Mults => c.mults += amount,
            Kind::BaselineMults => c.baseline_mults += amount,
        }
    }

    /// Charge multiplications to both the actual and the baseline counter;
    /// shorthand for work the unoptimized pipeline performs identically.
    pub fn charge(&mut self, stage: Stage, amount: u64) {
        self.record(stage, Kind::Mults, amount);
        self.record(stage, Kind::BaselineMults, amount);
    }

    pub fn stage(&self, stage: Stage) -> StageCounters {
        self.counters[Self::index(stage)]
    }

    pub fn mults(&self, stage: Stage) -> u64 {
        self.stage(stage).mults
    }

    /// Multiplications in the classification path (projection overhead plus
    /// the SVM dot products and deformation arithmetic). Feature generation
    /// and feature quantization are excluded.
    pub fn classification_mults(&self) -> u64 {
        self.mults(Stage::Projection)
            + self.mults(Stage::RootSvm)
            + self.mults(Stage::PartSvm)
            + self.mults(Stage::Deform)
    }

    pub fn classification_baseline_mults(&self) -> u64 {
        let sum = |s: Stage| self.stage(s).baseline_mults;
        sum(Stage::Projection) + sum(Stage::RootSvm) + sum(Stage::PartSvm) + sum(Stage::Deform)
    }

    pub fn total_cells(&self) -> u64 {
        self.cells_per_level.iter().sum()
    }

    /// Merge a per-worker ledger into this one. Associative and commutative in
    /// the counter fields; capacity-style storage fields take the maximum so
    /// merging workers that observed the same buffers is idempotent.
    pub fn merge(&mut self, other: &CostLedger) {
        for i in 0..self.counters.len() {
            self.counters[i].mults += other.counters[i].mults;
            self.counters[i].baseline_mults += other.counters[i].baseline_mults;
        }
        self.buffer_write_bytes_raw += other.buffer_write_bytes_raw;
        self.buffer_write_bytes_vq += other.buffer_write_bytes_vq;
        self.candidates_total += other.candidates_total;
        self.candidates_kept += other.candidates_kept;
        self.deform_calls += other.deform_calls;
        self.deform_evals += other.deform_evals;
        if self.cells_per_level.len() < other.cells_per_level.len() {
            self.cells_per_level.resize(other.cells_per_level.len(), 0);
        }
        for (i, &c) in other.cells_per_level.iter().enumerate() {
            self.cells_per_level[i] += c;
        }
        let s = &mut self.storage;
        let o = &other.storage;
        s.feature_buffer_raw = s.feature_buffer_raw.max(o.feature_buffer_raw);
        s.feature_buffer_vq = s.feature_buffer_vq.max(o.feature_buffer_vq);
        s.codebook = s.codebook.max(o.codebook);
        s.weights_dense = s.weights_dense.max(o.weights_dense);
        s.weights_sparse = s.weights_sparse.max(o.weights_sparse);
        s.basis = s.basis.max(o.basis);
    }

    fn index(stage: Stage) -> usize {
        Stage::ALL.iter().position(|&s| s == stage).unwrap()
    }
}

/// A ratio that may be infinite when the optimized denominator is zero.
/// Serialized as a plain number, or `null` with the name listed under the
/// report's `infinite` key.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ratio(pub Option<f64>);

impl Ratio {
    fn of(numerator: f64, denominator: f64) -> Ratio {
        if denominator == 0.0 {
            Ratio(None)
        } else {
            Ratio(Some(numerator / denominator))
        }
    }

    pub fn value(&self) -> Option<f64> {
        self.0
    }

    pub fn is_infinite(&self) -> bool {
        self.0.is_none()
    }
}

impl Serialize for Ratio {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self.0 {
            Some(v) => serializer.serialize_f64(v),
            None => serializer.serialize_none(),
        }
    }
}

/// Reduction ratios derived from ledgers: baseline cost over optimized cost,
/// so larger is better and 1.0 means no change.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRatios {
    /// Part classification avoided by pruning (multiplication ratio).
    pub parts_reduction: Ratio,
    /// Raw line buffer vs quantized line buffer plus codebook.
    pub feature_storage_reduction: Ratio,
    /// All classification multiplications, baseline over optimized.
    pub classification_mult_reduction: Ratio,
    /// Dense classifier weight bytes over sparse (flag + packed) bytes.
    pub weight_storage_reduction: Ratio,
    /// Deformation-search points: 25 per call over points actually evaluated.
    pub deform_eval_reduction: Ratio,
    /// Feature buffer plus weights, baseline over optimized (codebook and
    /// basis storage charged to the optimized side).
    pub total_memory_reduction: Ratio,
}

/// Modeled line-buffer write bandwidth at a given frame rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandwidthReport {
    pub fps: f64,
    /// MB/s (1 MB = 2^20 bytes) written when cells are stored raw.
    pub raw_mb_per_s: f64,
    /// MB/s written when cells are stored as codeword indices.
    pub vq_mb_per_s: f64,
}

/// Machine-readable cost report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    /// Accounting disclaimer; the report counts multiplications and bytes,
    /// not watts.
    pub note: &'static str,
    pub stages: BTreeMap<&'static str, StageCounters>,
    pub storage: StorageBytes,
    pub bandwidth: BandwidthReport,
    pub pruning: PruningCounts,
    pub ratios: ReportRatios,
    /// Names of ratios whose optimized denominator was zero.
    pub infinite: Vec<&'static str>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PruningCounts {
    pub candidates_total: u64,
    pub candidates_kept: u64,
}

const REPORT_NOTE: &str =
    "costs are multiplication and byte counts; power is not modeled directly";

pub const FRAME_RATE_FPS: f64 = 30.0;
const MB: f64 = 1024.0 * 1024.0;

impl CostReport {
    /// Build a report from a single instrumented run, using the shadow
    /// baseline counters as the unoptimized reference.
    pub fn from_run(optimized: &CostLedger) -> CostReport {
        Self::build(optimized, |stage| optimized.stage(stage).baseline_mults)
    }

    /// Build a report comparing a real baseline run against an optimized run.
    pub fn compare(baseline: &CostLedger, optimized: &CostLedger) -> CostReport {
        Self::build(optimized, |stage| baseline.stage(stage).mults)
    }

    fn build(optimized: &CostLedger, baseline_mults: impl Fn(Stage) -> u64) -> CostReport {
        let stages: BTreeMap<&'static str, StageCounters> = Stage::ALL
            .into_iter()
            .map(|s| {
                (
                    s.name(),
                    StageCounters {
                        mults: optimized.stage(s).mults,
                        baseline_mults: baseline_mults(s),
                    },
                )
            })
            .collect();

        let st = optimized.storage;
        let class_base: u64 = [Stage::Projection, Stage::RootSvm, Stage::PartSvm, Stage::Deform]
            .into_iter()
            .map(&baseline_mults)
            .sum();

        let ratios = ReportRatios {
            parts_reduction: Ratio::of(
                baseline_mults(Stage::PartSvm) as f64,
                optimized.mults(Stage::PartSvm) as f64,
            ),
            feature_storage_reduction: Ratio::of(
                st.feature_buffer_raw,
                st.feature_buffer_vq + st.codebook,
            ),
            classification_mult_reduction: Ratio::of(
                class_base as f64,
                optimized.classification_mults() as f64,
            ),
            weight_storage_reduction: Ratio::of(st.weights_dense, st.weights_sparse),
            deform_eval_reduction: Ratio::of(
                (25 * optimized.deform_calls) as f64,
                optimized.deform_evals as f64,
            ),
            total_memory_reduction: Ratio::of(
                st.feature_buffer_raw + st.weights_dense,
                st.feature_buffer_vq + st.codebook + st.weights_sparse + st.basis,
            ),
        };

        let mut infinite = Vec::new();
        for (name, r) in [
            ("parts_reduction", &ratios.parts_reduction),
            ("feature_storage_reduction", &ratios.feature_storage_reduction),
            ("classification_mult_reduction", &ratios.classification_mult_reduction),
            ("weight_storage_reduction", &ratios.weight_storage_reduction),
            ("deform_eval_reduction", &ratios.deform_eval_reduction),
            ("total_memory_reduction", &ratios.total_memory_reduction),
        ] {
            if r.is_infinite() {
                infinite.push(name);
            }
        }

        CostReport {
            note: REPORT_NOTE,
            stages,
            storage: st,
            bandwidth: BandwidthReport {
                fps: FRAME_RATE_FPS,
                raw_mb_per_s: optimized.buffer_write_bytes_raw * FRAME_RATE_FPS / MB,
                vq_mb_per_s: optimized.buffer_write_bytes_vq * FRAME_RATE_FPS / MB,
            },
            pruning: PruningCounts {
                candidates_total: optimized.candidates_total,
                candidates_kept: optimized.candidates_kept,
            },
            ratios,
            infinite,
        }
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_accumulates() {
        let mut l = CostLedger::new();
        l.record(Stage::RootSvm, Kind::Mults, 13);
        l.record(Stage::RootSvm, Kind::Mults, 13);
        assert_eq!(l.mults(Stage::RootSvm), 26);
    }

    #[test]
    fn merge_is_sum_per_stage() {
        let mut a = CostLedger::new();
        let mut b = CostLedger::new();
        a.record(Stage::Hog, Kind::Mults, 7);
        a.record(Stage::PartSvm, Kind::BaselineMults, 3);
        a.cells_per_level = vec![10, 5];
        b.record(Stage::Hog, Kind::Mults, 11);
        b.record(Stage::Deform, Kind::Mults, 2);
        b.cells_per_level = vec![1, 2, 3];
        b.candidates_total = 9;

        let mut merged = a.clone();
        merged.merge(&b);
        assert_eq!(merged.mults(Stage::Hog), 18);
        assert_eq!(merged.stage(Stage::PartSvm).baseline_mults, 3);
        assert_eq!(merged.mults(Stage::Deform), 2);
        assert_eq!(merged.cells_per_level, vec![11, 7, 3]);
        assert_eq!(merged.candidates_total, 9);

        // Commutative.
        let mut other = b.clone();
        other.merge(&a);
        assert_eq!(merged, other);
    }

    #[test]
    fn unknown_stage_name_is_an_error() {
        assert!(Stage::from_name("root_svm").is_ok());
        assert!(Stage::from_name("gpu").is_err());
    }

    #[test]
    fn zero_denominator_reports_infinite_with_flag() {
        let mut l = CostLedger::new();
        l.record(Stage::PartSvm, Kind::BaselineMults, 100);
        let report = CostReport::from_run(&l);
        assert!(report.ratios.parts_reduction.is_infinite());
        assert!(report.infinite.contains(&"parts_reduction"));
        let json = report.to_json_pretty();
        assert!(json.contains("\"parts_reduction\": null"));
    }

    #[test]
    fn ratio_serializes_as_number() {
        let r = Ratio(Some(2.5));
        assert_eq!(serde_json::to_string(&r).unwrap(), "2.5");
    }
}
