use nalgebra::{Cholesky, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stssad::detector::{
    bce_from_logits, bce_train_loss, encode, encode_pixels, fit_gde, load_checkpoint,
    sample_covariance, save_checkpoint, score_variance, train_step, EncoderParams, INPUT_SHIFT,
};
use stssad::tensor::{finite_diff_check, NdArray, Tensor};
use stssad::Error;

fn rand_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> NdArray {
    NdArray::matrix(n, d, (0..n * d).map(|_| rng.gen()).collect()).unwrap()
}

fn logits(v: &[f64]) -> Tensor {
    Tensor::constant(NdArray::matrix(v.len(), 1, v.to_vec()).unwrap())
}

#[test]
fn zero_weights_embed_everything_at_the_origin() {
    let p = EncoderParams::zeros(&[12, 8, 4]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let z = p.embed(&rand_rows(&mut rng, 5, 12)).unwrap();
    assert!(z.data().iter().all(|&v| v == 0.0));
}

#[test]
fn identity_layer_passes_the_input_through() {
    let d = 9;
    let p = EncoderParams::from_tensors(
        &[d, d],
        vec![NdArray::eye(d), NdArray::zeros(&[d]), NdArray::zeros(&[d, 1]), NdArray::zeros(&[1])],
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = rand_rows(&mut rng, 3, d);
    let z = encode(&p.constants(), &Tensor::constant(x.clone())).unwrap();
    assert_eq!(z.data(), x.data());
    // image inputs are shifted before the first layer
    let zp = encode_pixels(&p.constants(), &Tensor::constant(x.clone())).unwrap();
    for (a, b) in zp.data().iter().zip(x.data()) {
        assert_eq!(*a, b + INPUT_SHIFT);
    }
}

#[test]
fn seeded_init_is_reproducible() {
    let mk = || EncoderParams::desk(64, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    let x = rand_rows(&mut ChaCha8Rng::seed_from_u64(8), 4, 64);
    let (a, b) = (mk(), mk());
    assert_eq!(a, b);
    assert_eq!(a.embed(&x).unwrap().data(), b.embed(&x).unwrap().data());
    assert_eq!(a.embed_dim(), 16);
}

#[test]
fn wrong_input_width_is_a_shape_error() {
    let p = EncoderParams::desk(64, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let x = NdArray::zeros(&[2, 32]);
    assert!(matches!(p.embed(&x), Err(Error::Shape { .. })));
}

#[test]
fn cross_entropy_values() {
    let l = bce_from_logits(&logits(&[0.0, 0.0]), &logits(&[0.0])).unwrap();
    assert!((l.item() - 2f64.ln()).abs() < 1e-15);

    // p = 0.25 on the inlier, p = 0.75 on the augmented sample
    let l = bce_from_logits(&logits(&[(1.0f64 / 3.0).ln()]), &logits(&[3f64.ln()])).unwrap();
    let want = (-(0.75f64).ln() - (0.75f64).ln()) / 2.0;
    assert!((l.item() - want).abs() < 1e-12);
    assert!((l.item() - 0.2877).abs() < 1e-4);

    let l = bce_from_logits(&logits(&[-40.0, -50.0]), &logits(&[45.0])).unwrap();
    assert!(l.item() < 1e-17);
    assert!(matches!(
        bce_from_logits(&logits(&[]), &logits(&[1.0])),
        Err(Error::EmptyPartition(_))
    ));
}

#[test]
fn training_loss_gradient_matches_differences_per_layer() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dims = [10, 6, 5, 3];
    let p = EncoderParams::init(&dims, &mut rng).unwrap();
    let x_in = Tensor::constant(rand_rows(&mut rng, 2, 10));
    let x_aug = Tensor::constant(rand_rows(&mut rng, 2, 10));
    for k in 0..p.tensors().len() {
        let f = |w: &Tensor| {
            let mut th = p.constants();
            th[k] = w.clone();
            bce_train_loss(&th, &x_in, &x_aug)
        };
        let r = finite_diff_check(f, &p.tensors()[k], 1e-5).unwrap();
        assert!(r.max_rel_err < 1e-3, "tensor {k}: {:e}", r.max_rel_err);
    }
}

#[test]
fn zero_step_returns_identical_params() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = EncoderParams::desk(16, &mut rng).unwrap();
    let (x, y) = (rand_rows(&mut rng, 4, 16), rand_rows(&mut rng, 4, 16));
    let (q, _) = train_step(&p, &x, &y, 0.0).unwrap();
    assert_eq!(p, q);
    assert!(train_step(&p, &x, &y, -1.0).is_err());
}

#[test]
fn small_steps_decrease_the_training_loss() {
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = EncoderParams::desk(16, &mut rng).unwrap();
        let (x, y) = (rand_rows(&mut rng, 4, 16), rand_rows(&mut rng, 4, 16));
        let (q, before) = train_step(&p, &x, &y, 1e-3).unwrap();
        let (_, after) = train_step(&q, &x, &y, 0.0).unwrap();
        assert!(after < before, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn training_is_bitwise_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut p = EncoderParams::desk(16, &mut rng).unwrap();
        let (x, y) = (rand_rows(&mut rng, 4, 16), rand_rows(&mut rng, 4, 16));
        for _ in 0..5 {
            p = train_step(&p, &x, &y, 0.1).unwrap().0;
        }
        p
    };
    assert_eq!(run(), run());
}

#[test]
fn checkpoint_roundtrip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("theta.bin");
    let p = EncoderParams::desk(20, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    save_checkpoint(&p, &path).unwrap();
    assert_eq!(load_checkpoint(&path).unwrap(), p);

    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(load_checkpoint(&path).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Format { .. })));
}

#[test]
fn covariance_examples() {
    let z = NdArray::matrix(4, 2, vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
    let (mean, cov) = sample_covariance(&z).unwrap();
    assert_eq!(mean, vec![0.5, 0.5]);
    for (a, b) in cov.iter().zip([1.0 / 3.0, 0.0, 0.0, 1.0 / 3.0]) {
        assert!((a - b).abs() < 1e-15);
    }
    let (mean, cov) = sample_covariance(&NdArray::matrix(2, 1, vec![0.0, 2.0]).unwrap()).unwrap();
    assert_eq!((mean[0], cov[0]), (1.0, 2.0));

    // isotropic covariance is a fixed point of the shrinkage
    let g = fit_gde(&z).unwrap();
    let want = (2.0 * std::f64::consts::PI).ln() - 3f64.ln();
    assert!((g.score(&[0.5, 0.5]) - want).abs() < 1e-12);
    assert!((g.score(&[0.5, 0.5]) - 0.7393).abs() < 1e-4);
}

#[test]
fn standard_normal_fit_scores_log_two_pi_at_the_origin() {
    // (±a, 0), (0, ±a) with a² = 3/2 has covariance I
    let a = 1.5f64.sqrt();
    let z = NdArray::matrix(4, 2, vec![a, 0.0, -a, 0.0, 0.0, a, 0.0, -a]).unwrap();
    let g = fit_gde(&z).unwrap();
    assert!((g.score(&[0.0, 0.0]) - (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
}

#[test]
fn degenerate_embeddings_are_floored() {
    let z = NdArray::full(&[6, 3], 0.25);
    let g = fit_gde(&z).unwrap();
    assert!(g.score(&[0.25; 3]).is_finite());
    assert!(g.score(&[1.0, 0.0, 0.0]) > g.score(&[0.25; 3]));
}

#[test]
fn fitted_models_are_proper_and_minimized_at_the_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..20 {
        let (n, h) = (rng.gen_range(2..12), rng.gen_range(1..6));
        let z = NdArray::matrix(n, h, (0..n * h).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
        let g = fit_gde(&z).unwrap();
        let cov = DMatrix::from_row_slice(h, h, &g.covariance());
        assert!((&cov - cov.transpose()).amax() < 1e-12, "trial {trial}");
        assert!(Cholesky::new(cov).is_some(), "trial {trial}");
        let at_mean = g.score(g.mean());
        for _ in 0..100 {
            let probe: Vec<f64> = (0..h).map(|_| rng.gen_range(-5.0..5.0)).collect();
            assert!(g.score(&probe) >= at_mean);
        }
    }
}

#[test]
fn score_variance_examples() {
    assert!((score_variance(&[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
    assert_eq!(score_variance(&[0.0, 2.0]).unwrap(), 2.0);
    assert_eq!(score_variance(&[4.0; 5]).unwrap(), 0.0);
    assert!(score_variance(&[1.0]).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let c: Vec<f64> = (0..30).map(|_| rng.gen_range(-10.0..10.0)).collect();
    let shifted: Vec<f64> = c.iter().map(|v| v + 123.4).collect();
    let (a, b) = (score_variance(&c).unwrap(), score_variance(&shifted).unwrap());
    assert!((a - b).abs() < 1e-10 * a.max(1.0));
}
