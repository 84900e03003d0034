//! Check the optimized engine against the dense reference and print the cost
//! reduction report.
//!
//! The reference configuration (no pruning, no quantization, lossless
//! projection, exhaustive deformation) must reproduce the independently coded
//! dense scorer at every window; the optimized configuration then shows what
//! each technique saves.
//!
//! ```bash
//! cargo run --release --example bench_equivalence
//! ```

use dpm::engine::{detect_on_pyramid, total_scores, DetectorConfig};
use dpm::frontend::{pyramid_features, Image, PyramidConfig};
use dpm::metrics::{CostLedger, CostReport};
use dpm::model::{compile, DpmModel, Filter, PartSpec, PART_COUNT};
use dpm::oracle::dense_scores;
use dpm::vq::train_codebook;
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
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let img = noise_image(320, 240, 17);
    let root = Filter::new(6, 4, (0..6 * 4 * 13).map(|_| rng.gen::<f64>() - 0.5).collect()).unwrap();
    let parts = (0..PART_COUNT)
        .map(|i| PartSpec {
            filter: Filter::new(3, 3, (0..3 * 3 * 13).map(|_| rng.gen::<f64>() - 0.5).collect()).unwrap(),
            anchor: ((i % 4) as i32 * 3, (i / 4) as i32 * 4),
            deformation: [0.02, -0.01, 0.15, 0.12],
        })
        .collect();
    let model = DpmModel::new("bench".into(), 0.2, -1e18, root, parts).unwrap();

    let mut frame_ledger = CostLedger::new();
    let fp = pyramid_features(&img, &PyramidConfig::default(), &mut frame_ledger).unwrap();

    // Dense reference scores, independently coded.
    let mut oracle_ledger = CostLedger::new();
    let dense = dense_scores(&fp, &model, &mut oracle_ledger);

    // Engine in the reference configuration.
    let reference = compile(&model, 0).unwrap();
    let mut reference_ledger = frame_ledger.clone();
    let scores = total_scores(
        &fp,
        &reference,
        None,
        None,
        &DetectorConfig::reference(),
        &mut reference_ledger,
    )
    .unwrap();

    let mut max_rel = 0.0f64;
    let mut windows = 0usize;
    for (level, x, y, w) in scores.iter_windows() {
        let expect = dense.total_at(level, x, y).unwrap();
        let rel = (w.total - expect).abs() / expect.abs().max(w.total.abs()).max(1.0);
        max_rel = max_rel.max(rel);
        windows += 1;
    }
    println!("equivalence over {windows} windows: max relative deviation {max_rel:.3e}");

    // Optimized run: pruning, quantized features, sparse projected weights,
    // coarse-to-fine deformation.
    let mut samples = Vec::new();
    for level in &fp.levels {
        for i in (0..level.grid.cell_count()).step_by(3) {
            samples.push(level.grid.cell_array(i % level.grid.cols, i / level.grid.cols));
        }
    }
    let cb = train_codebook(&samples, 256, 1).unwrap();
    let optimized = compile(&model, 7).unwrap();
    let cfg = DetectorConfig {
        vq_enabled: true,
        ..Default::default()
    };
    let mut optimized_ledger = frame_ledger;
    let detections = detect_on_pyramid(
        &fp,
        (img.width, img.height),
        std::slice::from_ref(&optimized),
        Some(&cb),
        &cfg,
        &mut optimized_ledger,
    )
    .unwrap();
    println!("optimized run: {} detection(s) above threshold", detections.len());

    let report = CostReport::compare(&reference_ledger, &optimized_ledger);
    println!("{}", report.to_json_pretty());
}
