//! Compile a model: project its weights into the basis that sparsifies them,
//! truncate each cell to at most six coefficients, and compare the storage
//! and arithmetic of sparse versus dense scoring.
//!
//! ```bash
//! cargo run --release --example compile_model
//! ```

use dpm::model::{compile, compute_basis, DpmModel, Filter, PartSpec, PART_COUNT};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// A synthetic trained model: weights correlated across dimensions so the
/// principal components concentrate energy, as trained classifiers do.
fn correlated_model(rng: &mut ChaCha8Rng) -> DpmModel {
    let mut filter = |w: usize, h: usize| {
        let mut weights = Vec::with_capacity(w * h * 13);
        for _ in 0..w * h {
            let a = rng.gen::<f64>() - 0.5;
            let b = rng.gen::<f64>() - 0.5;
            for d in 0..13 {
                let mix = a * (1.0 - d as f64 / 13.0) + b * (d as f64 / 13.0);
                weights.push(mix + 0.02 * (rng.gen::<f64>() - 0.5));
            }
        }
        Filter::new(w, h, weights).unwrap()
    };
    let root = filter(10, 6);
    let parts = (0..PART_COUNT)
        .map(|i| PartSpec {
            filter: filter(5, 5),
            anchor: ((i % 4) as i32 * 5, (i / 4) as i32 * 6),
            deformation: [0.01, 0.01, 0.1, 0.1],
        })
        .collect();
    DpmModel::new("synthetic".into(), 0.3, -0.5, root, parts).unwrap()
}

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let model = correlated_model(&mut rng);

    let basis = compute_basis(&model);
    println!(
        "basis orthonormality error: {:.2e}",
        basis.orthonormality_error()
    );

    for min_zeros in [0usize, 7, 10] {
        let cm = compile(&model, min_zeros).unwrap();
        println!(
            "min_zeros {:>2}: zero fraction {:>5.1}%, max nonzero/cell {}, weights {:>6.0} B dense -> {:>6.0} B sparse ({:.2}x)",
            min_zeros,
            cm.zero_fraction() * 100.0,
            cm.max_nonzeros_per_cell(),
            cm.dense_weight_bytes(),
            cm.sparse_weight_bytes(),
            cm.dense_weight_bytes() / cm.sparse_weight_bytes()
        );
    }

    // The lossless case: scoring through the projection reproduces the plain
    // dot product.
    let cm = compile(&model, 0).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let f: [f64; 13] = core::array::from_fn(|_| rng.gen::<f64>());
        let w = model.root.cell_array(3, 2);
        let direct: f64 = w.iter().zip(f.iter()).map(|(a, b)| a * b).sum();
        let fp = cm.basis.project(&f);
        let cell = cm.root.cell(3, 2);
        let mut projected = 0.0;
        let mut coeffs = cell.coeffs.iter();
        for b in 0..13 {
            if cell.flag & (1 << b) != 0 {
                projected += coeffs.next().unwrap() * fp[b];
            }
        }
        worst = worst.max((direct - projected).abs() / direct.abs().max(1.0));
    }
    println!("lossless compile, 500 random features: max relative score deviation {worst:.2e}");

    // Scoring arithmetic per cell: projection overhead is paid once per
    // feature cell, then every filter cell touching it multiplies only the
    // surviving coefficients.
    let cm7 = compile(&model, 7).unwrap();
    let cells = cm7.total_weight_cells();
    println!(
        "per filter-cell multiplications: 13 dense vs <= 6 sparse over {} cells ({} flags stored)",
        cells, cells
    );
}
