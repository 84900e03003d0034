//! Build the default 12-level feature pyramid for an HD frame and print the
//! per-level geometry, the total cell volume, and the modeled line-buffer
//! bandwidth at 30 fps.
//!
//! ```bash
//! cargo run --release --example pyramid_stats
//! ```

use dpm::frontend::{pyramid_features, Image, PyramidConfig};
use dpm::metrics::CostLedger;
use dpm::vq::LineBufferModel;

/// A deterministic synthetic frame: smooth gradients with a little texture.
fn synthetic_frame(width: usize, height: usize) -> Image {
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let base = (x * 255 / width + y * 128 / height) as u32;
            let texture = ((x * 7 + y * 13) % 31) as u32;
            data.push(((base + texture) % 256) as u8);
        }
    }
    Image::gray(width, height, data).unwrap()
}

fn main() {
    let img = synthetic_frame(1920, 1080);
    let cfg = PyramidConfig::default();
    let mut ledger = CostLedger::new();
    let start = std::time::Instant::now();
    let fp = pyramid_features(&img, &cfg, &mut ledger).unwrap();
    let elapsed = start.elapsed();

    println!("level  scale     grid        cells");
    for (k, level) in fp.levels.iter().enumerate() {
        println!(
            "{k:>5}  {:.5}  {:>4} x {:<4}  {:>6}",
            level.scale,
            level.grid.cols,
            level.grid.rows,
            level.grid.cell_count()
        );
    }
    let total = fp.total_cells();
    let level0 = fp.levels[0].grid.cell_count();
    println!(
        "\ntotal {total} cells ({:.2}x the {level0} level-0 cells) in {elapsed:?}",
        total as f64 / level0 as f64
    );

    // Every cell passes through the feature line buffer once per frame.
    let mut lb = LineBufferModel::default();
    for level in &fp.levels {
        for _ in 0..level.grid.rows {
            lb.write_row(level.grid.cols).unwrap();
        }
    }
    let mb = 1024.0 * 1024.0;
    println!(
        "line buffer: capacity {} cells ({:.0} KB raw / {:.0} KB quantized), occupancy {}",
        lb.capacity_cells,
        lb.raw_capacity_bytes() / 1024.0,
        lb.vq_capacity_bytes() / 1024.0,
        lb.occupancy()
    );
    println!(
        "write bandwidth at 30 fps: {:.2} MB/s raw vs {:.2} MB/s quantized ({:.3}x)",
        lb.write_bytes_raw * 30.0 / mb,
        lb.write_bytes_vq * 30.0 / mb,
        lb.write_bytes_raw / lb.write_bytes_vq
    );
    println!(
        "feature generation charge: {} multiplications",
        ledger.mults(dpm::metrics::Stage::Hog)
    );
}
