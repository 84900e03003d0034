//! End-to-end acceptance suite. Each test checks one headline property of
//! the pipeline at its stated tolerance and prints a PASS line (visible with
//! `cargo test --test acceptance -- --nocapture`).

use std::time::Instant;

use dpm::engine::{
    deform_max, detect, detect_on_pyramid, total_scores, DeformMode, DetectorConfig, PruneMode,
};
use dpm::frontend::{pyramid_features, CellGrid, FeaturePyramid, Image, PyramidConfig, PyramidLevel};
use dpm::metrics::{CostLedger, CostReport, Stage};
use dpm::model::{compile, DpmModel, Filter, PartSpec, PART_COUNT};
use dpm::oracle::dense_scores;
use dpm::vq::{quantize_cell, train_codebook, train_codebook_traced, Codebook};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIM: usize = 13;

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

fn random_filter(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Filter {
    Filter::new(w, h, (0..w * h * DIM).map(|_| rng.gen::<f64>() - 0.5).collect()).unwrap()
}

fn random_model(rng: &mut ChaCha8Rng, name: &str, rw: usize, rh: usize, pw: usize) -> DpmModel {
    let root = random_filter(rng, rw, rh);
    let parts = (0..PART_COUNT)
        .map(|_| PartSpec {
            filter: random_filter(rng, pw, pw),
            anchor: (
                rng.gen_range(0..=(2 * rw - pw) as i32),
                rng.gen_range(0..=(2 * rh - pw) as i32),
            ),
            deformation: [
                rng.gen::<f64>() * 0.1 - 0.05,
                rng.gen::<f64>() * 0.1 - 0.05,
                0.05 + rng.gen::<f64>() * 0.2,
                0.05 + rng.gen::<f64>() * 0.2,
            ],
        })
        .collect();
    DpmModel::new(name.into(), 0.1, -1e18, root, parts).unwrap()
}

fn subsampled_cells(fp: &FeaturePyramid, max: usize) -> Vec<[f64; DIM]> {
    let mut samples = Vec::new();
    for level in &fp.levels {
        for i in 0..level.grid.cell_count() {
            samples.push(level.grid.cell_array(i % level.grid.cols, i / level.grid.cols));
        }
    }
    if samples.len() > max {
        let stride = samples.len() as f64 / max as f64;
        samples = (0..max).map(|i| samples[(i as f64 * stride) as usize]).collect();
    }
    samples
}

fn rel_dev(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

#[test]
fn c01_pyramid_volume_and_runtime() {
    let img = noise_image(1920, 1080, 1);
    let mut ledger = CostLedger::new();
    let start = Instant::now();
    let fp = pyramid_features(&img, &PyramidConfig::default(), &mut ledger).unwrap();
    let elapsed = start.elapsed();

    let total = fp.total_cells();
    assert!(
        (84_390..=89_610).contains(&total),
        "total cells {total} outside 87K +/- 3%"
    );
    assert!(
        elapsed.as_secs_f64() < 5.0,
        "pyramid took {elapsed:?}, limit 5 s"
    );
    println!("ACCEPTANCE 01 pyramid-volume: PASS ({total} cells in {elapsed:?})");
}

#[test]
fn c02_feature_sharing_across_models() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let img = noise_image(320, 240, 2);
    let m1 = compile(&random_model(&mut rng, "a", 4, 3, 3), 7).unwrap();
    let m2 = compile(&random_model(&mut rng, "b", 3, 4, 3), 7).unwrap();
    let cfg = DetectorConfig {
        vq_enabled: false,
        ..Default::default()
    };

    let one = detect(&img, std::slice::from_ref(&m1), None, &cfg).unwrap();
    let two = detect(&img, &[m1, m2], None, &cfg).unwrap();

    assert_eq!(
        one.ledger.stage(Stage::Hog),
        two.ledger.stage(Stage::Hog),
        "feature generation must be charged once regardless of model count"
    );
    assert_eq!(one.ledger.cells_per_level, two.ledger.cells_per_level);
    println!(
        "ACCEPTANCE 02 feature-sharing: PASS (hog mults {} with 1 and 2 models)",
        one.ledger.mults(Stage::Hog)
    );
}

#[test]
fn c03_pruning_ratio_and_soundness() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let img = noise_image(800, 600, 7);
    let cm = compile(&random_model(&mut rng, "c3", 4, 3, 3), 7).unwrap();
    let mut frame = CostLedger::new();
    let fp = pyramid_features(&img, &PyramidConfig::default(), &mut frame).unwrap();

    let unpruned_cfg = DetectorConfig::reference();
    let pruned_cfg = DetectorConfig {
        prune: PruneMode::Fraction(0.97),
        ..DetectorConfig::reference()
    };

    let mut unpruned_ledger = CostLedger::new();
    let mut pruned_ledger = CostLedger::new();
    let full = total_scores(&fp, &cm, None, None, &unpruned_cfg, &mut unpruned_ledger).unwrap();
    let pruned = total_scores(&fp, &cm, None, None, &pruned_cfg, &mut pruned_ledger).unwrap();

    assert!(
        pruned_ledger.candidates_total >= 10_000,
        "fixture has only {} placements",
        pruned_ledger.candidates_total
    );

    let ratio = unpruned_ledger.mults(Stage::PartSvm) as f64
        / pruned_ledger.mults(Stage::PartSvm) as f64;
    assert!(
        (30.0..=36.0).contains(&ratio),
        "part multiplication reduction {ratio:.2} outside [30, 36]"
    );
    // Shadow baseline accounting agrees with the measured all-off run.
    assert_eq!(
        pruned_ledger.stage(Stage::PartSvm).baseline_mults,
        unpruned_ledger.mults(Stage::PartSvm)
    );

    // Soundness: every surviving window scores bit-identically to the
    // unpruned run, and survivors are a subset of the unpruned windows.
    let mut survivors = 0usize;
    for (level, x, y, w) in pruned.iter_windows() {
        let reference = full.levels[level]
            .as_ref()
            .and_then(|g| g.at(x, y))
            .expect("pruned survivor missing from the unpruned run");
        assert_eq!(w.total.to_bits(), reference.total.to_bits());
        assert_eq!(w.part_offsets, reference.part_offsets);
        survivors += 1;
    }
    assert_eq!(survivors as u64, pruned_ledger.candidates_kept);
    println!(
        "ACCEPTANCE 03 pruning: PASS (ratio {ratio:.2} over {} placements, {survivors} survivors bit-identical)",
        pruned_ledger.candidates_total
    );
}

#[test]
fn c04_vq_storage_and_bandwidth() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let img = noise_image(1920, 1080, 4);
    let mut frame = CostLedger::new();
    let fp = pyramid_features(&img, &PyramidConfig::default(), &mut frame).unwrap();
    let cb = train_codebook(&subsampled_cells(&fp, 4096), 256, 4).unwrap();
    let cm = compile(&random_model(&mut rng, "c4", 4, 3, 3), 7).unwrap();

    let cfg = DetectorConfig {
        vq_enabled: true,
        ..Default::default()
    };
    let out = detect(&img, std::slice::from_ref(&cm), Some(&cb), &cfg).unwrap();
    let report = &out.report;

    assert_eq!(dpm::vq::BYTES_PER_CELL_RAW / dpm::vq::BYTES_PER_CELL_VQ, 17.875);
    assert_eq!(
        out.ledger.storage.feature_buffer_raw / out.ledger.storage.feature_buffer_vq,
        17.875
    );
    let storage = report.ratios.feature_storage_reduction.value().unwrap();
    assert!(
        (14.0..=18.0).contains(&storage),
        "feature storage reduction {storage:.2} outside [14, 18]"
    );
    let raw = report.bandwidth.raw_mb_per_s;
    let vq = report.bandwidth.vq_mb_per_s;
    assert!((42.0..=48.0).contains(&raw), "raw bandwidth {raw:.2} MB/s");
    assert!((2.3..=2.8).contains(&vq), "vq bandwidth {vq:.2} MB/s");
    println!(
        "ACCEPTANCE 04 vq-storage: PASS (per-cell 17.875x, overall {storage:.2}x, {raw:.2} -> {vq:.2} MB/s at 30 fps)"
    );
}

#[test]
fn c05_sparsity_guarantee_and_lossless_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let m = random_model(&mut rng, "c5", 8, 6, 4);
    let sparse = compile(&m, 7).unwrap();
    assert!(sparse.max_nonzeros_per_cell() <= 6);
    assert!(sparse.zero_fraction() >= 7.0 / 13.0);

    let lossless = compile(&m, 0).unwrap();
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        // One random window under the root filter.
        let mut direct = 0.0;
        let mut projected = 0.0;
        for ci in 0..m.root.cell_count() {
            let (x, y) = (ci % m.root.w, ci / m.root.w);
            let f: [f64; DIM] = core::array::from_fn(|_| rng.gen::<f64>());
            let w = m.root.cell_array(x, y);
            direct += w.iter().zip(f.iter()).map(|(a, b)| a * b).sum::<f64>();
            let fproj = lossless.basis.project(&f);
            let cell = lossless.root.cell(x, y);
            let mut coeffs = cell.coeffs.iter();
            for b in 0..DIM {
                if cell.flag & (1 << b) != 0 {
                    projected += coeffs.next().unwrap() * fproj[b];
                }
            }
        }
        worst = worst.max(rel_dev(direct, projected));
    }
    assert!(worst < 1e-9, "lossless projection deviated by {worst:.3e}");
    println!(
        "ACCEPTANCE 05 sparsity: PASS (max {} nonzeros/cell, lossless deviation {worst:.2e} over 1000 windows)",
        sparse.max_nonzeros_per_cell()
    );
}

#[test]
fn c06_projection_multiply_reduction() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let img = noise_image(800, 600, 21);
    let cm = compile(&random_model(&mut rng, "c6", 16, 8, 6), 7).unwrap();
    let mut frame = CostLedger::new();
    let fp = pyramid_features(&img, &PyramidConfig::default(), &mut frame).unwrap();

    // Pruning off so both runs score identical candidates.
    let off_cfg = DetectorConfig {
        deform_mode: DeformMode::CoarseToFine,
        ..DetectorConfig::reference()
    };
    let on_cfg = DetectorConfig {
        projection_enabled: true,
        ..off_cfg.clone()
    };

    let mut l_off = CostLedger::new();
    let mut l_on = CostLedger::new();
    let s_off = total_scores(&fp, &cm, None, None, &off_cfg, &mut l_off).unwrap();
    let s_on = total_scores(&fp, &cm, None, None, &on_cfg, &mut l_on).unwrap();

    assert_eq!(l_off.candidates_kept, l_on.candidates_kept);
    let ratio = l_off.classification_mults() as f64 / l_on.classification_mults() as f64;
    assert!(
        (1.8..=2.3).contains(&ratio),
        "projection multiply reduction {ratio:.3} outside [1.8, 2.3]"
    );
    // Same candidates, same scores (up to float noise of the projected path).
    for ((la, xa, ya, wa), (lb, xb, yb, wb)) in s_off.iter_windows().zip(s_on.iter_windows()) {
        assert_eq!((la, xa, ya), (lb, xb, yb));
        assert!(rel_dev(wa.total, wb.total) < 1e-9);
    }
    println!("ACCEPTANCE 06 projection-reduction: PASS (ratio {ratio:.3} incl. projection overhead)");
}

#[test]
fn c07_combined_reductions() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let img = noise_image(512, 384, 31);
    let models: Vec<_> = (0..4)
        .map(|i| compile(&random_model(&mut rng, &format!("c7-{i}"), 16, 16, 16), 7).unwrap())
        .collect();
    let mut frame = CostLedger::new();
    let fp = pyramid_features(&img, &PyramidConfig::default(), &mut frame).unwrap();
    let cb = train_codebook(&subsampled_cells(&fp, 4096), 256, 5).unwrap();

    let mut l_base = frame.clone();
    detect_on_pyramid(
        &fp,
        (img.width, img.height),
        &models,
        Some(&cb),
        &DetectorConfig::reference(),
        &mut l_base,
    )
    .unwrap();

    let mut l_opt = frame.clone();
    let opt_cfg = DetectorConfig {
        vq_enabled: true,
        ..Default::default()
    };
    detect_on_pyramid(&fp, (img.width, img.height), &models, Some(&cb), &opt_cfg, &mut l_opt)
        .unwrap();

    let report = CostReport::compare(&l_base, &l_opt);
    let class = report.ratios.classification_mult_reduction.value().unwrap();
    let memory = report.ratios.total_memory_reduction.value().unwrap();
    assert!(class >= 8.0, "classification reduction {class:.2} below 8");
    assert!(
        (3.0..=4.2).contains(&memory),
        "memory reduction {memory:.3} outside [3.0, 4.2]"
    );
    println!(
        "ACCEPTANCE 07 combined-reductions: PASS (classification {class:.2}x, memory {memory:.2}x)"
    );
}

#[test]
fn c08_oracle_equivalence() {
    let fixtures = [(96usize, 80usize), (128, 96), (160, 128), (200, 144), (256, 192)];
    let mut worst = 0.0f64;
    for (i, (w, h)) in fixtures.into_iter().enumerate() {
        let seed = 40 + i as u64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = noise_image(w, h, seed);
        let m = random_model(&mut rng, "eq", 3 + i % 4, 3 + i % 3, 3);
        let mut frame = CostLedger::new();
        let fp = pyramid_features(&img, &PyramidConfig::default(), &mut frame).unwrap();
        assert!(fp.total_cells() <= 128 * 128);

        let mut oracle_ledger = CostLedger::new();
        let dense = dense_scores(&fp, &m, &mut oracle_ledger);

        let reference = compile(&m, 0).unwrap();
        let mut ledger = CostLedger::new();
        let scores = total_scores(
            &fp,
            &reference,
            None,
            None,
            &DetectorConfig::reference(),
            &mut ledger,
        )
        .unwrap();

        let mut windows = 0usize;
        for (level, x, y, window) in scores.iter_windows() {
            let expect = dense.total_at(level, x, y).unwrap();
            let dev = rel_dev(window.total, expect);
            assert!(
                dev <= 1e-9,
                "fixture {i}: window ({level}, {x}, {y}) deviates by {dev:.3e}"
            );
            worst = worst.max(dev);
            let dl = dense.levels[level].as_ref().unwrap();
            assert_eq!(window.root_only, dl.root_only[y * dl.totals.w + x]);
            windows += 1;
        }
        assert!(windows > 0);
    }
    println!("ACCEPTANCE 08 oracle-equivalence: PASS (5 fixtures, max deviation {worst:.2e})");
}

#[test]
fn c09_deformation_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut ledger = CostLedger::new();
    let mut min_evals = u32::MAX;
    let mut max_evals = 0u32;
    for _ in 0..500 {
        let mut resp = [[0.0f64; 5]; 5];
        for row in resp.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.gen::<f64>() * 4.0 - 2.0;
            }
        }
        let d = [
            rng.gen::<f64>() - 0.5,
            rng.gen::<f64>() - 0.5,
            0.01 + rng.gen::<f64>(),
            0.01 + rng.gen::<f64>(),
        ];
        let ex = deform_max(&resp, &d, DeformMode::Exhaustive, &mut ledger);
        let c2f = deform_max(&resp, &d, DeformMode::CoarseToFine, &mut ledger);
        assert_eq!(ex.evals, 25);
        assert!(c2f.score <= ex.score + 1e-12);
        assert!((12..=17).contains(&c2f.evals));
        min_evals = min_evals.min(c2f.evals);
        max_evals = max_evals.max(c2f.evals);
    }

    // Concave separable value surfaces: both modes find the same maximum.
    for _ in 0..200 {
        let d3 = 0.05 + rng.gen::<f64>();
        let d4 = 0.05 + rng.gen::<f64>();
        let d = [
            (rng.gen::<f64>() * 2.0 - 1.0) * 2.0 * d3,
            (rng.gen::<f64>() * 2.0 - 1.0) * 2.0 * d4,
            d3,
            d4,
        ];
        let flat = [[rng.gen::<f64>(); 5]; 5];
        let ex = deform_max(&flat, &d, DeformMode::Exhaustive, &mut ledger);
        let c2f = deform_max(&flat, &d, DeformMode::CoarseToFine, &mut ledger);
        assert_eq!(ex.score, c2f.score);

        let (px, py) = (rng.gen::<f64>(), rng.gen::<f64>());
        let (x0, y0) = (rng.gen::<f64>() * 4.0 - 2.0, rng.gen::<f64>() * 4.0 - 2.0);
        let mut bowl = [[0.0f64; 5]; 5];
        for dy in -2i32..=2 {
            for dx in -2i32..=2 {
                bowl[(dy + 2) as usize][(dx + 2) as usize] =
                    -(px * (dx as f64 - x0).powi(2) + py * (dy as f64 - y0).powi(2));
            }
        }
        let ex = deform_max(&bowl, &d, DeformMode::Exhaustive, &mut ledger);
        let c2f = deform_max(&bowl, &d, DeformMode::CoarseToFine, &mut ledger);
        assert_eq!(ex.score, c2f.score);
    }
    println!(
        "ACCEPTANCE 09 deformation: PASS (coarse-to-fine evals in [{min_evals}, {max_evals}], never above exhaustive)"
    );
}

#[test]
fn c10_planted_object_recall() {
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let mut hits = 0usize;
    for trial in 0..20u64 {
        let m = random_model(&mut rng, "plant", 4, 3, 3);
        let cm = compile(&m, 0).unwrap();
        let (cols, rows) = (30usize, 22usize);
        let (px, py) = ((trial % 10) as usize + 3, (trial % 7) as usize + 2);

        let mut levels = Vec::new();
        for k in 0..6usize {
            let s = 2f64.powf(-(k as f64) / 3.0);
            levels.push(PyramidLevel {
                grid: CellGrid::zeroed(
                    (cols as f64 * s).round() as usize,
                    (rows as f64 * s).round() as usize,
                ),
                scale: s,
            });
        }
        for j in 0..m.root.h {
            for i in 0..m.root.w {
                let cell = m.root.cell(i, j).to_vec();
                levels[0].grid.cell_mut(px + i, py + j).copy_from_slice(&cell);
            }
        }
        let fp = FeaturePyramid {
            levels,
            levels_per_octave: 3,
            cell_size: 8,
        };

        let cfg = DetectorConfig {
            vq_enabled: false,
            ..Default::default()
        };
        let mut ledger = CostLedger::new();
        let dets =
            detect_on_pyramid(&fp, (cols * 8, rows * 8), std::slice::from_ref(&cm), None, &cfg, &mut ledger)
                .unwrap();
        let expect = m.root.energy() + m.bias;
        let top = dets.first().expect("at least one detection");
        assert_eq!(top.level, 0, "trial {trial}");
        assert_eq!(
            top.bbox,
            [px as i64 * 8, py as i64 * 8, m.root.w as i64 * 8, m.root.h as i64 * 8],
            "trial {trial}"
        );
        assert!(
            (top.score - expect).abs() < 1e-6,
            "trial {trial}: score {} expected {expect}",
            top.score
        );
        hits += 1;
    }
    println!("ACCEPTANCE 10 planted-recall: PASS ({hits}/20 frames, score = template energy + bias)");
}

#[test]
fn c11_kmeans_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    // Lloyd iterations never increase distortion, 100 random instances.
    for case in 0..100u64 {
        let n = 30 + (case % 7) as usize * 15;
        let samples: Vec<[f64; DIM]> = (0..n)
            .map(|_| core::array::from_fn(|_| rng.gen::<f64>()))
            .collect();
        let k = 2 + (case % 7) as usize;
        let (_, trace) = train_codebook_traced(&samples, k, case).unwrap();
        for w in trace.windows(2) {
            assert!(
                w[1] <= w[0] + w[0].abs() * 1e-12 + 1e-12,
                "case {case}: distortion rose {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    // Nearest-center lookup matches an independent exhaustive scan.
    let centers: Vec<[f64; DIM]> = (0..256)
        .map(|_| core::array::from_fn(|_| rng.gen::<f64>()))
        .collect();
    let cb = Codebook::from_centers(centers.clone()).unwrap();
    let mut ledger = CostLedger::new();
    for _ in 0..10_000 {
        let f: [f64; DIM] = core::array::from_fn(|_| rng.gen::<f64>());
        let got = quantize_cell(&f, &cb, &mut ledger) as usize;
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, c) in centers.iter().enumerate() {
            let d: f64 = (0..DIM).map(|j| (f[j] - c[j]) * (f[j] - c[j])).sum();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        assert_eq!(got, best);
    }
    println!("ACCEPTANCE 11 kmeans: PASS (100 monotone traces, 10000 lookups match the scan oracle)");
}

#[test]
fn c12_cli_determinism() {
    use std::process::Command;

    let bin = env!("CARGO_BIN_EXE_dpm");
    let dir = tempfile::tempdir().unwrap();
    let path = |name: &str| dir.path().join(name).display().to_string();

    // Fixture files.
    let img = noise_image(96, 80, 3);
    img.save_pnm(&dir.path().join("frame.pgm")).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = random_model(&mut rng, "cls", 3, 3, 2);
    dpm::model::save_model(&model, &dir.path().join("model.json")).unwrap();

    let run = |args: &[String]| {
        let out = Command::new(bin).args(args).output().unwrap();
        assert!(
            out.status.success(),
            "dpm {:?} failed: {}",
            args,
            String::from_utf8_lossy(&out.stderr)
        );
        out.stdout
    };
    let read = |name: &str| std::fs::read(dir.path().join(name)).unwrap();

    let commands: Vec<(&str, Vec<String>, Vec<&str>)> = vec![
        (
            "train-codebook",
            vec![
                "train-codebook".into(),
                "--image".into(),
                path("frame.pgm"),
                "-k".into(),
                "16".into(),
                "--seed".into(),
                "9".into(),
                "--out".into(),
                path("cb.vqcb"),
            ],
            vec!["cb.vqcb"],
        ),
        (
            "compile",
            vec![
                "compile".into(),
                "--model".into(),
                path("model.json"),
                "--out".into(),
                path("model.dpmc"),
            ],
            vec!["model.dpmc"],
        ),
        (
            "detect",
            vec![
                "detect".into(),
                "--image".into(),
                path("frame.pgm"),
                "--model".into(),
                path("model.dpmc"),
                "--codebook".into(),
                path("cb.vqcb"),
                "--vq".into(),
                "on".into(),
                "--out".into(),
                path("dets.json"),
                "--annotate".into(),
                path("boxes.ppm"),
                "--metrics".into(),
                path("metrics.json"),
            ],
            vec!["dets.json", "boxes.ppm", "metrics.json"],
        ),
        (
            "calibrate-prune",
            vec![
                "calibrate-prune".into(),
                "--image".into(),
                path("frame.pgm"),
                "--model".into(),
                path("model.dpmc"),
                "--out".into(),
                path("threshold.json"),
            ],
            vec!["threshold.json"],
        ),
        (
            "bench",
            vec![
                "bench".into(),
                "--image".into(),
                path("frame.pgm"),
                "--model".into(),
                path("model.json"),
                "--metrics".into(),
                path("bench.json"),
            ],
            vec!["bench.json"],
        ),
    ];

    for (name, args, outputs) in &commands {
        let stdout1 = run(args);
        let files1: Vec<Vec<u8>> = outputs.iter().map(|f| read(f)).collect();
        let stdout2 = run(args);
        let files2: Vec<Vec<u8>> = outputs.iter().map(|f| read(f)).collect();
        assert_eq!(stdout1, stdout2, "{name}: stdout differs between runs");
        for (f, (a, b)) in outputs.iter().zip(files1.iter().zip(files2.iter())) {
            assert!(!a.is_empty(), "{name}: {f} is empty");
            assert_eq!(a, b, "{name}: {f} differs between runs");
        }
    }
    println!("ACCEPTANCE 12 cli-determinism: PASS (5 commands, byte-identical outputs)");
}
