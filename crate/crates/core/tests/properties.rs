//! Randomised invariants across the library.

use proptest::collection::vec;
use proptest::prelude::*;

use texbank::annosim::{self, CooccurrenceModel, Strategy as Query};
use texbank::corpus::{BinaryMask, GrayImage};
use texbank::descriptors::{extract_lbp, LbpParams, LbpSampling};
use texbank::encoders::{self, postprocess, spp_encode, Encoder, Orderless};
use texbank::learn::{compute_kernel, hellinger_embed, KernelKind, KernelSpec};
use texbank::metrics::{self, ApVariant, PixelLabelMap};
use texbank::segment::{greedy_paste, ScoredProposal};
use texbank::vocab::{kmeans, KmeansParams};
use texbank::{Codebook, DescriptorSample, GmmModel, Matrix, Position, PostProcessSpec};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    vec(-3.0f64..3.0, rows * cols).prop_map(move |d| Matrix::from_vec(rows, cols, d).unwrap())
}

/// (sample, codebook) with distinct codebook rows.
fn sample_and_codebook() -> impl Strategy<Value = (Matrix, Matrix)> {
    (1usize..5, 1usize..5, 1usize..25).prop_flat_map(|(d, k, n)| {
        (matrix(n, d), matrix(k, d)).prop_filter("distinct centres", |(_, c)| {
            Codebook::new(c.clone()).is_ok()
        })
    })
}

fn gmm_from(centers: &Matrix, vars: &[f64]) -> GmmModel {
    let k = centers.rows();
    let v = Matrix::from_vec(
        k,
        centers.cols(),
        vars.iter()
            .cycle()
            .take(k * centers.cols())
            .copied()
            .collect(),
    )
    .unwrap();
    GmmModel::new(vec![1.0 / k as f64; k], centers.clone(), v).unwrap()
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn orderless_encoders_ignore_order(
        (x, c) in sample_and_codebook(),
        vars in vec(0.2f64..3.0, 1..8),
        seed in any::<u64>(),
        which in 0usize..5,
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let cb = Codebook::new(c.clone()).unwrap();
        let g = gmm_from(&c, &vars);
        let enc = match which {
            0 => Orderless::Bovw(&cb),
            1 => Orderless::Kcb { codebook: &cb, lambda: 0.7 },
            2 => Orderless::Llc { codebook: &cb, neighbors: cb.len().min(3) },
            3 => Orderless::Vlad(&cb),
            _ => Orderless::Fv(&g),
        };
        let s = DescriptorSample::unpositioned(x.clone());
        let mut perm: Vec<usize> = (0..x.rows()).collect();
        perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let shuffled = s.subset(&perm);
        let a = enc.encode(&s).unwrap();
        let b = enc.encode(&shuffled).unwrap();
        prop_assert_eq!(bits(&a.values), bits(&b.values));
        prop_assert_eq!(a.dim(), enc.dim());
    }

    #[test]
    fn postprocessed_vectors_are_unit_or_zero(v in vec(-5.0f64..5.0, 1..40), sqrt in any::<bool>()) {
        let e = texbank::EncodedVector {
            values: v,
            kind: texbank::EncoderKind::Bovw,
            subvector_len: None,
            post: PostProcessSpec::NONE,
        };
        let spec = PostProcessSpec { signed_sqrt: sqrt, intra_norm: false, global_l2: true };
        let out = postprocess(&e, &spec).unwrap();
        let n = out.norm();
        prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-12);
        // signs survive every step
        for (a, b) in e.values.iter().zip(&out.values) {
            prop_assert!(a.signum() == b.signum() || *a == 0.0);
        }
    }

    #[test]
    fn single_cell_pyramid_is_the_base_encoding((x, c) in sample_and_codebook()) {
        let cb = Codebook::new(c).unwrap();
        let base = Orderless::Vlad(&cb);
        let pos = (0..x.rows()).map(|i| Position { x: i as f64 % 7.0, y: 1.0, scale: 1.0 }).collect();
        let s = DescriptorSample::new(x, pos).unwrap();
        let spp = spp_encode(&s, (1, 1), (7, 3), &base).unwrap();
        prop_assert_eq!(spp.values, base.encode(&s).unwrap().values);
    }

    #[test]
    fn hellinger_is_linear_on_square_roots(a in vec(0.0f64..10.0, 1..20), seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f64> = a.iter().map(|_| rng.gen_range(0.0..10.0)).collect();
        let x = Matrix::from_rows(std::slice::from_ref(&a)).unwrap();
        let y = Matrix::from_rows(std::slice::from_ref(&b)).unwrap();
        let h = compute_kernel(&x, &y, &KernelSpec { kind: KernelKind::Hellinger, normalize: false }).unwrap();
        let sx = Matrix::from_rows(&[hellinger_embed(&a)]).unwrap();
        let sy = Matrix::from_rows(&[hellinger_embed(&b)]).unwrap();
        let l = compute_kernel(&sx, &sy, &KernelSpec { kind: KernelKind::Linear, normalize: false }).unwrap();
        prop_assert!((h[(0, 0)] - l[(0, 0)]).abs() < 1e-9);
    }

    #[test]
    fn exp_chi2_is_a_similarity(x in matrix(4, 5).prop_map(|m| {
        let d: Vec<f64> = m.as_slice().iter().map(|v| v.abs() + 0.01).collect();
        Matrix::from_vec(4, 5, d).unwrap()
    }), lambda in 0.01f64..10.0) {
        let k = compute_kernel(&x, &x, &KernelSpec { kind: KernelKind::ExpChi2 { lambda }, normalize: false }).unwrap();
        for i in 0..4 {
            prop_assert_eq!(k[(i, i)], 1.0);
            for j in 0..4 {
                prop_assert!(k[(i, j)] > 0.0 && k[(i, j)] <= 1.0);
            }
        }
    }

    #[test]
    fn normalized_self_kernel_has_unit_diagonal(x in matrix(5, 3), kind in 0usize..2) {
        let kind = [KernelKind::Linear, KernelKind::Hellinger][kind];
        prop_assume!(x.iter_rows().all(|r| r.iter().any(|v| *v != 0.0)));
        let k = compute_kernel(&x, &x, &KernelSpec { kind, normalize: true }).unwrap();
        for i in 0..5 {
            prop_assert_eq!(k[(i, i)], 1.0);
        }
    }

    #[test]
    fn lbp_ignores_monotone_intensity_changes(levels in vec(0u8..=255, 12 * 12)) {
        let img = GrayImage::new(12, 12, levels.iter().map(|&v| v as f64 / 255.0).collect()).unwrap();
        // nearest sampling: any strictly increasing map
        let warped = GrayImage::new(12, 12, img.data().iter().map(|v| v.sqrt()).collect()).unwrap();
        let nearest = LbpParams { sampling: LbpSampling::Nearest, cell: 4, ..LbpParams::default() };
        prop_assert_eq!(extract_lbp(&img, &nearest).unwrap(), extract_lbp(&warped, &nearest).unwrap());
        // bilinear sampling: positive scaling
        let halved = GrayImage::new(12, 12, img.data().iter().map(|v| v * 0.5).collect()).unwrap();
        let bilinear = LbpParams { cell: 4, ..LbpParams::default() };
        prop_assert_eq!(extract_lbp(&img, &bilinear).unwrap(), extract_lbp(&halved, &bilinear).unwrap());
    }

    #[test]
    fn kmeans_objective_never_increases(x in matrix(40, 2), k in 1usize..6, seed in any::<u64>()) {
        let fit = kmeans(&x, &KmeansParams { k, max_iters: 50, seed }).unwrap();
        for w in fit.objective_history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0));
        }
    }

    #[test]
    fn class_accuracy_ignores_duplicated_class(truth in vec(0usize..3, 3..30), pred in vec(0usize..3, 33), dup in 0usize..3) {
        let mut truth = truth;
        truth.extend([0, 1, 2]);
        let pred = &pred[..truth.len()];
        let a = metrics::per_class_accuracy(&truth, pred, 3).unwrap();
        let (mut t2, mut p2) = (truth.clone(), pred.to_vec());
        for (t, p) in truth.iter().zip(pred) {
            if *t == dup {
                t2.push(*t);
                p2.push(*p);
            }
        }
        let b = metrics::per_class_accuracy(&t2, &p2, 3).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn ap_is_one_iff_positives_lead(scores in vec(0.0f64..1.0, 2..15), flags in vec(any::<bool>(), 15)) {
        let flags = &flags[..scores.len()];
        prop_assume!(flags.iter().any(|&f| f));
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        let ranked: Vec<bool> = order.iter().map(|&i| flags[i]).collect();
        let leading = ranked.windows(2).all(|w| w[0] || !w[1]);
        for v in [ApVariant::Pascal08, ApVariant::ElevenPoint] {
            let ap = metrics::average_precision(&scores, flags, v).unwrap();
            prop_assert!((0.0..=1.0).contains(&ap));
            prop_assert_eq!(ap == 1.0, leading);
        }
    }

    #[test]
    fn single_class_pixel_accuracy_is_plain_fraction(pred in vec(0u16..3, 16)) {
        let gt = PixelLabelMap::filled(4, 4, 1);
        let p = PixelLabelMap::new(4, 4, pred.clone()).unwrap();
        let frac = pred.iter().filter(|&&l| l == 1).count() as f64 / 16.0;
        prop_assert_eq!(metrics::pixel_accuracy(&p, &gt, false).unwrap(), frac);
        prop_assert_eq!(metrics::pixel_accuracy(&p, &gt, true).unwrap(), frac);
    }

    #[test]
    fn mutual_information_is_symmetric(a in vec(0usize..3, 20), b in vec(0usize..4, 20)) {
        let ab = metrics::mutual_information(&a, &b).unwrap();
        let ba = metrics::mutual_information(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn pasting_ignores_order_when_scores_differ(
        cells in vec(any::<bool>(), 4 * 36),
        scores in vec(0.0f64..1.0, 4),
        classes in vec(0usize..5, 4),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut distinct = scores.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        prop_assume!(distinct.len() == 4);
        let list: Vec<ScoredProposal> = (0..4)
            .map(|i| ScoredProposal {
                index: i,
                mask: BinaryMask::new(6, 6, cells[i * 36..(i + 1) * 36].to_vec()).unwrap(),
                class: classes[i],
                score: scores[i],
            })
            .collect();
        let mut shuffled = list.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(greedy_paste(&list, 6, 6).unwrap(), greedy_paste(&shuffled, 6, 6).unwrap());
    }

    #[test]
    fn recall_grows_with_budget(probs in vec(0.05f64..0.95, 36), seed in any::<u64>(), scores in vec(-3.0f64..3.0, 6 * 6 * 3)) {
        use rand::SeedableRng;
        let mut p = Matrix::from_vec(6, 6, probs).unwrap();
        for i in 0..6 {
            p[(i, i)] = 1.0;
        }
        let m = CooccurrenceModel { p_cond: p, p0: 1.0 / 6.0 };
        let gt = annosim::sample_ground_truth(&m, 3, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let s = Matrix::from_vec(18, 6, scores).unwrap();
        for strategy in [Query::Prior, Query::Posterior(&s)] {
            let curve = annosim::budget_curve(&gt, &m, &[0, 1, 2, 3, 4, 5], strategy).unwrap();
            for w in curve.windows(2) {
                prop_assert!(w[1].mean_recall >= w[0].mean_recall);
                prop_assert!(w[1].fully_recovered >= w[0].fully_recovered);
            }
            prop_assert_eq!(curve[5].mean_recall, 1.0);
        }
    }
}

#[test]
fn intra_normalisation_needs_blocks() {
    let e = texbank::EncodedVector {
        values: vec![1.0, 2.0, 3.0],
        kind: texbank::EncoderKind::Vlad,
        subvector_len: Some(2),
        post: PostProcessSpec::NONE,
    };
    assert!(encoders::postprocess(
        &e,
        &PostProcessSpec::default_for(texbank::EncoderKind::Vlad)
    )
    .is_err());
}
