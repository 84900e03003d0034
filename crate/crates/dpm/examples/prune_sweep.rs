//! Sweep the pruning factor and watch part classification work collapse
//! while surviving windows keep exact scores.
//!
//! The detector is scalable along this knob: parts run only where the root
//! score clears the quantile threshold, and a pruned run's surviving window
//! totals are bit-identical to the unpruned run's.
//!
//! ```bash
//! cargo run --release --example prune_sweep
//! ```

use dpm::engine::{total_scores, DeformMode, DetectorConfig, PruneMode};
use dpm::frontend::{pyramid_features, Image, PyramidConfig};
use dpm::metrics::{CostLedger, Stage};
use dpm::model::{compile, DpmModel, Filter, PartSpec, PART_COUNT};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noise_image(width: usize, height: usize, seed: u64) -> Image {
    let mut state = seed | 1;
    let mut data = Vec::with_capacity(width * height);
    for _ in 0..width * height {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        data.push((state >> 24) as u8);
    }
    Image::gray(width, height, data).unwrap()
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let img = noise_image(640, 480, 5);
    let root = Filter::new(8, 6, (0..8 * 6 * 13).map(|_| rng.gen::<f64>() - 0.5).collect()).unwrap();
    let parts = (0..PART_COUNT)
        .map(|i| PartSpec {
            filter: Filter::new(4, 4, (0..4 * 4 * 13).map(|_| rng.gen::<f64>() - 0.5).collect()).unwrap(),
            anchor: ((i % 4) as i32 * 4, (i / 4) as i32 * 5),
            deformation: [0.0, 0.0, 0.1, 0.1],
        })
        .collect();
    let model = DpmModel::new("sweep".into(), 0.0, -1e18, root, parts).unwrap();
    let cm = compile(&model, 7).unwrap();

    let mut base = CostLedger::new();
    let fp = pyramid_features(&img, &PyramidConfig::default(), &mut base).unwrap();

    println!("prune     kept/total        part mults    deform evals    classification mults");
    let mut unpruned_parts = 0u64;
    for p in [0.0, 0.5, 0.9, 0.97, 0.99] {
        let cfg = DetectorConfig {
            prune: PruneMode::Fraction(p),
            vq_enabled: false,
            projection_enabled: true,
            deform_mode: DeformMode::CoarseToFine,
            ..Default::default()
        };
        let mut ledger = base.clone();
        total_scores(&fp, &cm, None, None, &cfg, &mut ledger).unwrap();
        if p == 0.0 {
            unpruned_parts = ledger.mults(Stage::PartSvm);
        }
        println!(
            "{p:<8}  {:>6}/{:<8}  {:>12}  {:>12}  {:>18}   ({:>5.1}x fewer part mults)",
            ledger.candidates_kept,
            ledger.candidates_total,
            ledger.mults(Stage::PartSvm),
            ledger.deform_evals,
            ledger.classification_mults(),
            unpruned_parts as f64 / ledger.mults(Stage::PartSvm).max(1) as f64,
        );
    }
    println!("\nparts can also be disabled outright:");
    let cfg = DetectorConfig {
        parts_enabled: false,
        vq_enabled: false,
        ..Default::default()
    };
    let mut ledger = base.clone();
    total_scores(&fp, &cm, None, None, &cfg, &mut ledger).unwrap();
    println!(
        "parts off  part mults {} deform evals {} classification mults {}",
        ledger.mults(Stage::PartSvm),
        ledger.deform_evals,
        ledger.classification_mults()
    );
}
