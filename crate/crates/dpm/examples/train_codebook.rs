//! Train a feature codebook on synthetic frames and inspect what vector
//! quantization costs in fidelity and saves in storage.
//!
//! ```bash
//! cargo run --release --example train_codebook
//! ```

use dpm::frontend::{pyramid_features, Image, PyramidConfig};
use dpm::metrics::CostLedger;
use dpm::vq::{dequantize, quantize_cell, train_codebook_traced, BYTES_PER_CELL_RAW};

fn textured_frame(width: usize, height: usize, seed: u64) -> Image {
    let mut state = seed | 1;
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            let stripe = ((x / 6 + y / 9) % 2) as u32 * 90;
            data.push(((state >> 58) as u32 + stripe + 4 * (x % 17) as u32).min(255) as u8);
        }
    }
    Image::gray(width, height, data).unwrap()
}

fn main() {
    // Gather cell features from a couple of frames.
    let mut samples = Vec::new();
    for seed in [3u64, 4] {
        let img = textured_frame(320, 240, seed);
        let mut ledger = CostLedger::new();
        let fp = pyramid_features(&img, &PyramidConfig::default(), &mut ledger).unwrap();
        for level in &fp.levels {
            for i in 0..level.grid.cell_count() {
                samples.push(level.grid.cell_array(i % level.grid.cols, i / level.grid.cols));
            }
        }
    }
    println!("collected {} cell features", samples.len());

    let k = 64;
    let (cb, trace) = train_codebook_traced(&samples, k, 7).unwrap();
    println!(
        "k-means: {} centers, {} iterations, distortion {:.4e} -> {:.4e}",
        cb.k(),
        trace.len(),
        trace.first().unwrap(),
        trace.last().unwrap()
    );

    // Quantize a few cells and measure the reconstruction error.
    let mut ledger = CostLedger::new();
    let mut worst = 0.0f64;
    for f in samples.iter().take(2000) {
        let idx = quantize_cell(f, &cb, &mut ledger);
        let back = dequantize(idx, &cb).unwrap();
        let err: f64 = f
            .iter()
            .zip(back.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        worst = worst.max(err);
    }
    println!(
        "worst reconstruction error over 2000 cells: {:.4} (cells live in [0, 0.43]^13)",
        worst
    );
    println!(
        "quantization charge: {} multiplications ({} per cell)",
        ledger.mults(dpm::metrics::Stage::VqQuant),
        cb.k() * 13
    );

    // Storage story: a stored cell shrinks from 143 bits to one index byte.
    println!(
        "per-cell storage: {:.3} bytes raw -> 1 byte quantized ({}x)",
        BYTES_PER_CELL_RAW,
        BYTES_PER_CELL_RAW / 1.0
    );
    let buffer_raw = 32_768.0 * BYTES_PER_CELL_RAW;
    let buffer_vq = 32_768.0 + cb.storage_bytes();
    println!(
        "32K-cell line buffer + shared centers: {:.0} KB -> {:.1} KB ({:.1}x overall)",
        buffer_raw / 1024.0,
        buffer_vq / 1024.0,
        buffer_raw / buffer_vq
    );
}
