//! Property tests for the crate's structural invariants.

use dpm::engine::{deform_max, nms, DeformMode, Detection};
use dpm::frontend::{decode_pnm, quantize_features, CellGrid, Image};
use dpm::metrics::CostLedger;
use dpm::model::{compute_basis, DpmModel, Filter, PartSpec, PART_COUNT};
use proptest::prelude::*;

const DIM: usize = 13;

fn arb_image() -> impl Strategy<Value = Image> {
    (1usize..40, 1usize..40, any::<bool>()).prop_flat_map(|(w, h, rgb)| {
        let channels = if rgb { 3 } else { 1 };
        prop::collection::vec(any::<u8>(), w * h * channels)
            .prop_map(move |data| Image::new(w, h, channels, data).unwrap())
    })
}

fn arb_vec13() -> impl Strategy<Value = [f64; DIM]> {
    prop::array::uniform13(-10.0f64..10.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pnm_encode_decode_round_trips(img in arb_image()) {
        let decoded = decode_pnm(&img.to_pnm_bytes()).unwrap();
        prop_assert_eq!(img, decoded);
    }

    #[test]
    fn feature_quantization_error_is_bounded(
        values in prop::collection::vec(0.0f64..0.45, DIM),
        scale in 100.0f64..10000.0,
    ) {
        let mut grid = CellGrid::zeroed(1, 1);
        grid.values.copy_from_slice(&values);
        let q = quantize_features(&grid, scale).unwrap();
        let qv = q.quantized_values.as_ref().unwrap();
        for (&v, &qi) in values.iter().zip(qv.iter()) {
            prop_assert!(qi <= 2047);
            if v * scale <= 2047.0 {
                prop_assert!((qi as f64 / scale - v).abs() <= 0.5 / scale + 1e-12);
            }
        }
    }

    #[test]
    fn basis_projection_preserves_dot_products(
        w in arb_vec13(),
        f in arb_vec13(),
        seed in 0u64..1000,
    ) {
        // A basis from an arbitrary (but valid) model; any orthonormal basis
        // must preserve scores.
        let model = seeded_model(seed);
        let basis = compute_basis(&model);
        prop_assert!(basis.orthonormality_error() < 1e-9);
        let direct: f64 = w.iter().zip(f.iter()).map(|(a, b)| a * b).sum();
        let projected: f64 = basis
            .project(&w)
            .iter()
            .zip(basis.project(&f).iter())
            .map(|(a, b)| a * b)
            .sum();
        let scale = direct.abs().max(projected.abs()).max(1.0);
        prop_assert!((direct - projected).abs() / scale < 1e-9);
    }

    #[test]
    fn coarse_to_fine_never_beats_exhaustive(
        resp_flat in prop::collection::vec(-100.0f64..100.0, 25),
        d1 in -2.0f64..2.0,
        d2 in -2.0f64..2.0,
        d3 in 0.01f64..3.0,
        d4 in 0.01f64..3.0,
    ) {
        let mut resp = [[0.0f64; 5]; 5];
        for (i, v) in resp_flat.iter().enumerate() {
            resp[i / 5][i % 5] = *v;
        }
        let d = [d1, d2, d3, d4];
        let mut ledger = CostLedger::new();
        let ex = deform_max(&resp, &d, DeformMode::Exhaustive, &mut ledger);
        let c2f = deform_max(&resp, &d, DeformMode::CoarseToFine, &mut ledger);
        prop_assert_eq!(ex.evals, 25);
        prop_assert!((12..=17).contains(&c2f.evals));
        prop_assert!(c2f.score <= ex.score);
    }

    #[test]
    fn nms_keeps_a_non_overlapping_subset(
        boxes in prop::collection::vec((0i64..60, 0i64..60, 1i64..30, 1i64..30, 0u8..3, -5.0f64..5.0), 1..25),
        iou in 0.05f64..0.95,
    ) {
        let dets: Vec<Detection> = boxes
            .iter()
            .map(|&(x, y, w, h, class, score)| Detection {
                class_name: format!("c{class}"),
                score,
                level: 0,
                bbox: [x, y, w, h],
                parts: [[0, 0]; PART_COUNT],
                root_only: false,
            })
            .collect();
        let kept = nms(dets.clone(), iou);
        // Subset of the input.
        prop_assert!(kept.len() <= dets.len());
        for k in &kept {
            prop_assert!(dets.iter().any(|d| d == k));
        }
        // No pair of kept same-class boxes overlaps beyond the threshold.
        for (i, a) in kept.iter().enumerate() {
            for b in kept.iter().skip(i + 1) {
                if a.class_name != b.class_name {
                    continue;
                }
                let ix = (a.bbox[0] + a.bbox[2]).min(b.bbox[0] + b.bbox[2])
                    - a.bbox[0].max(b.bbox[0]);
                let iy = (a.bbox[1] + a.bbox[3]).min(b.bbox[1] + b.bbox[3])
                    - a.bbox[1].max(b.bbox[1]);
                if ix <= 0 || iy <= 0 {
                    continue;
                }
                let inter = (ix * iy) as f64;
                let union = (a.bbox[2] * a.bbox[3] + b.bbox[2] * b.bbox[3]) as f64 - inter;
                prop_assert!(inter / union <= iou);
            }
        }
        // Scores are sorted descending.
        for w in kept.windows(2) {
            prop_assert!(w[0].score >= w[1].score);
        }
    }
}

fn seeded_model(seed: u64) -> DpmModel {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut filter = |w: usize, h: usize| {
        Filter::new(w, h, (0..w * h * DIM).map(|_| rng.gen::<f64>() - 0.5).collect()).unwrap()
    };
    let root = filter(3, 3);
    let parts = (0..PART_COUNT)
        .map(|_| PartSpec {
            filter: filter(2, 2),
            anchor: (0, 0),
            deformation: [0.0, 0.0, 0.1, 0.1],
        })
        .collect();
    DpmModel::new("p".into(), 0.0, 0.0, root, parts).unwrap()
}
