use dive_core::data::{sample_dataset, DatasetConfig};
use dive_core::engine::{
    estimate_fisher, fisher_chunk_masks, generate_explanations, interpolate_target, loss_div, objective_and_grad,
    random_masks, spectral_masks, write_bundle, BundleMeta, BundleSummary, ChunkMode, EngineConfig, FisherBudget, FisherEstimate, Method,
};
use dive_core::models::{
    train_classifier, Classifier, ReconMode, TrainConfig, Vae,
};
use dive_core::tensor::{SeededRng, Tensor};
use proptest::prelude::*;

mod common;

use common::stubs::{logistic_fisher_quadrature, IdentityDecoder, IdentityEncoder, LinearLogit, StdNormalEncoder};

fn toy_fisher(budget: FisherBudget, seed: u64) -> FisherEstimate {
    let images = Tensor::zeros(&[budget.n_images, 2]);
    let clf = LinearLogit {
        w: vec![2.0, 0.0],
        b: 0.0,
    };
    estimate_fisher(&StdNormalEncoder(2), &IdentityDecoder, &clf, &images, &budget, &mut SeededRng::new(seed)).unwrap()
}

#[test]
fn fisher_matches_logistic_quadrature() {
    let oracle = logistic_fisher_quadrature();
    let f = toy_fisher(FisherBudget::default(), 1);
    assert_eq!(f.n_z, 256 * 16);
    let rel = (f.get(0, 0) - oracle).abs() / oracle;
    assert!(rel < 0.03, "F11 {} vs quadrature {oracle}", f.get(0, 0));
    assert_eq!(f.get(1, 1), 0.0);
    assert_eq!(f.get(0, 1), 0.0);
    assert!(f.is_valid());

    let big = toy_fisher(
        FisherBudget {
            n_images: 1000,
            n_z_per_image: 100,
            n_y_samples: 0,
        },
        2,
    );
    assert!((big.get(0, 0) - oracle).abs() / oracle < 0.03);
}

#[test]
fn fisher_sampled_labels_agree_with_exact_expectation() {
    let oracle = logistic_fisher_quadrature();
    let f = toy_fisher(
        FisherBudget {
            n_images: 256,
            n_z_per_image: 64,
            n_y_samples: 4,
        },
        3,
    );
    assert!((f.get(0, 0) - oracle).abs() / oracle < 0.05);
}

#[test]
fn fisher_of_constant_classifier_is_zero() {
    let clf = LinearLogit {
        w: vec![0.0; 3],
        b: 0.7,
    };
    let images = Tensor::zeros(&[10, 3]);
    let f = estimate_fisher(
        &StdNormalEncoder(3),
        &IdentityDecoder,
        &clf,
        &images,
        &FisherBudget::default(),
        &mut SeededRng::new(0),
    )
    .unwrap();
    assert!(f.matrix.iter().all(|&v| v == 0.0));
}

#[test]
fn fisher_on_vae_is_symmetric_psd_and_cached() {
    let mut rng = SeededRng::new(4);
    let vae = Vae::new(6, ReconMode::Pixel, &mut rng);
    let clf = Classifier::new(&mut rng);
    let images = Tensor::new(vec![8, 1024], rng.normals(8 * 1024, 0.5)).unwrap();
    let budget = FisherBudget {
        n_images: 8,
        n_z_per_image: 4,
        n_y_samples: 0,
    };
    let f = estimate_fisher(&vae, &vae, &clf, &images, &budget, &mut rng).unwrap();
    assert!(f.max_asymmetry() <= 1e-9);
    assert!(f.is_valid());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fisher.divf");
    f.save(&path).unwrap();
    let back = FisherEstimate::load(&path).unwrap();
    assert_eq!(back.matrix, f.matrix);
    assert_eq!(std::fs::read(&path).unwrap(), back.to_bytes());
}

/// Minimum normalized cut over all two-way partitions of `|F|` off the diagonal.
fn brute_force_ncut(f: &FisherEstimate) -> Vec<Vec<usize>> {
    let d = f.d;
    let a = |i: usize, j: usize| if i == j { 0.0 } else { f.get(i, j).abs() };
    let mut best = (f64::INFINITY, 0u32);
    for bits in 1..(1u32 << (d - 1)) {
        let inside = |i: usize| bits >> i & 1 == 1;
        let (mut cut, mut vol_s, mut vol_t) = (0.0, 0.0, 0.0);
        for i in 0..d {
            for j in 0..d {
                if inside(i) {
                    vol_s += a(i, j);
                } else {
                    vol_t += a(i, j);
                }
                if inside(i) && !inside(j) {
                    cut += a(i, j);
                }
            }
        }
        let ncut = cut / vol_s + cut / vol_t;
        if ncut < best.0 {
            best = (ncut, bits);
        }
    }
    let s: Vec<usize> = (0..d).filter(|&i| best.1 >> i & 1 == 1).collect();
    let t: Vec<usize> = (0..d).filter(|&i| best.1 >> i & 1 == 0).collect();
    let mut groups = vec![s, t];
    groups.sort_by_key(|g| g[0]);
    groups
}

fn supports(m: &dive_core::engine::MaskSet) -> Vec<Vec<usize>> {
    (0..m.n()).map(|i| m.support(i)).collect()
}

#[test]
fn spectral_masks_recover_block_structure() {
    let f = FisherEstimate::from_matrix(
        4,
        vec![
            2.0, 0.7, 0.0, 0.0, //
            0.7, 1.0, 0.0, 0.0, //
            0.0, 0.0, 3.0, -1.2, //
            0.0, 0.0, -1.2, 0.5,
        ],
    )
    .unwrap();
    let m = spectral_masks(&f, 2, 7).unwrap();
    assert_eq!(supports(&m), vec![vec![0, 1], vec![2, 3]]);
    assert_eq!(supports(&m), brute_force_ncut(&f));
}

#[test]
fn spectral_masks_match_brute_force_cut_on_noisy_communities() {
    for seed in 0..10u64 {
        let mut rng = SeededRng::new(seed);
        let d = 7;
        let mut perm: Vec<usize> = (0..d).collect();
        rng.shuffle(&mut perm);
        let group: Vec<usize> = (0..d).map(|i| usize::from(perm[i] < 3)).collect();
        let mut m = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..i {
                let v = if group[i] == group[j] {
                    rng.uniform_range(0.5, 1.5)
                } else {
                    rng.uniform_range(0.0, 0.05)
                };
                m[i * d + j] = v;
                m[j * d + i] = v;
            }
            m[i * d + i] = 3.0;
        }
        let f = FisherEstimate::from_matrix(d, m).unwrap();
        let s = spectral_masks(&f, 2, seed).unwrap();
        assert!(s.is_partition());
        assert_eq!(supports(&s), brute_force_ncut(&f), "seed {seed}");
    }
}

#[test]
fn interpolation_reproduces_a_quadratic_trajectory() {
    let knots: Vec<(f64, Vec<f64>)> = [0.9, 0.1, 0.5, 0.3, 0.7].iter().map(|&f| (f, vec![f * f])).collect();
    let v = interpolate_target(&knots, 0.35)[0];
    assert!((v - 0.1225).abs() < 1e-3, "{v}");
    // dense grid: the interpolant of a quadratic is the quadratic
    for i in 0..=800 {
        let q = 0.1 + 0.8 * i as f64 / 800.0;
        assert!((interpolate_target(&knots, q)[0] - q * q).abs() < 1e-3);
    }
}

fn toy_setup(d: usize, seed: u64) -> (Vec<f64>, LinearLogit) {
    let mut rng = SeededRng::new(seed);
    let w: Vec<f64> = (0..d).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
    let x: Vec<f64> = (0..d).map(|_| rng.uniform_range(-0.05, 0.05)).collect();
    (x, LinearLogit { w, b: 0.0 })
}

fn toy_fisher_for(clf: &LinearLogit, d: usize) -> FisherEstimate {
    let images = Tensor::zeros(&[16, d]);
    let budget = FisherBudget {
        n_images: 16,
        n_z_per_image: 8,
        n_y_samples: 0,
    };
    estimate_fisher(&StdNormalEncoder(d), &IdentityDecoder, clf, &images, &budget, &mut SeededRng::new(1)).unwrap()
}

#[test]
fn first_adam_step_follows_logit_weights() {
    let d = 6;
    for method in [Method::Dive, Method::RandomMasks, Method::FisherChunks] {
        let (x, clf) = toy_setup(d, 11);
        let fisher = toy_fisher_for(&clf, d);
        let cfg = EngineConfig {
            n: 2,
            lambda: 0.0,
            alpha: 0.0,
            gamma: 0.0,
            tau: 1,
            method,
            target: Some(1.0),
            chunk_mode: ChunkMode::KeepChunk,
            ..EngineConfig::default()
        };
        let ex = generate_explanations(&x, &IdentityEncoder(d), &IdentityDecoder, &clf, Some(&fisher), &cfg, &mut SeededRng::new(5))
            .unwrap();
        let t = &ex.set.trajectory;
        assert_eq!(t.len(), 2);
        for i in 0..2 {
            for j in 0..d {
                let step = t[1].eps[i * d + j] - t[0].eps[i * d + j];
                if ex.set.masks.masks[i][j] {
                    assert_eq!(step.signum(), clf.w[j].signum(), "{method} ({i},{j})");
                    assert!((step.abs() - cfg.lr).abs() < 1e-3 * cfg.lr);
                } else {
                    assert_eq!(step, 0.0);
                }
            }
        }
    }
}

#[test]
fn perturbations_never_leave_their_masks() {
    let d = 8;
    let methods = [Method::RandomMasks, Method::FisherChunks, Method::FisherSpectral];
    for run in 0..20u64 {
        let method = methods[run as usize % 3];
        let (x, clf) = toy_setup(d, 100 + run);
        let fisher = toy_fisher_for(&clf, d);
        let cfg = EngineConfig {
            n: 2 + (run as usize % 3),
            method,
            chunk_mode: if run % 2 == 0 { ChunkMode::FreezeChunk } else { ChunkMode::KeepChunk },
            delta: 0.0,
            ..EngineConfig::default()
        };
        let ex = generate_explanations(&x, &IdentityEncoder(d), &IdentityDecoder, &clf, Some(&fisher), &cfg, &mut SeededRng::new(run))
            .unwrap();
        assert_eq!(ex.set.trajectory.len(), cfg.tau + 1);
        for s in &ex.set.trajectory {
            for i in 0..cfg.n {
                for j in 0..d {
                    if !ex.set.masks.masks[i][j] {
                        assert_eq!(s.eps[i * d + j], 0.0, "run {run} step {}", s.step);
                    }
                }
            }
        }
    }
}

#[test]
fn early_stop_and_validity() {
    let d = 4;
    let clf = LinearLogit {
        w: vec![3.0, -2.0, 1.0, 0.5],
        b: 0.0,
    };
    let x = vec![-0.3, 0.2, 0.0, 0.0];
    let cfg = EngineConfig {
        n: 3,
        lr: 0.2,
        tau: 200,
        ..EngineConfig::default()
    };
    let ex = generate_explanations(&x, &IdentityEncoder(d), &IdentityDecoder, &clf, None, &cfg, &mut SeededRng::new(2)).unwrap();
    assert_eq!(ex.set.target, 1.0);
    assert!(ex.set.converged);
    assert!(ex.set.trajectory.len() < 201);
    assert!(ex.set.final_step().f.iter().all(|&p| p >= 0.95));
    assert_eq!(ex.set.valid, vec![true; 3]);
}

#[test]
fn single_explanation_ignores_diversity_weight() {
    let d = 5;
    let (x, clf) = toy_setup(d, 3);
    let run = |alpha| {
        let cfg = EngineConfig {
            n: 1,
            alpha,
            ..EngineConfig::default()
        };
        generate_explanations(&x, &IdentityEncoder(d), &IdentityDecoder, &clf, None, &cfg, &mut SeededRng::new(9))
            .unwrap()
            .set
    };
    assert_eq!(run(0.0), run(1.0));
}

#[test]
fn spectral_objective_ignores_alpha_and_xgem_drops_gamma() {
    let d = 4;
    let (x, clf) = toy_setup(d, 4);
    let eps = Tensor::new(vec![2, 4], vec![0.1, 0.2, -0.3, 0.05, 0.4, -0.1, 0.2, 0.3]).unwrap();
    let value = |method, alpha, gamma| {
        let cfg = EngineConfig {
            method,
            alpha,
            gamma,
            ..EngineConfig::default()
        };
        objective_and_grad(&x, &x, &eps, 1.0, &cfg, &IdentityDecoder, &clf).unwrap().0
    };
    assert_eq!(value(Method::FisherSpectral, 0.0, 0.1), value(Method::FisherSpectral, 5.0, 0.1));
    assert_ne!(value(Method::Dive, 0.0, 0.1), value(Method::Dive, 5.0, 0.1));
    assert_eq!(value(Method::XgemPlus, 0.0, 0.0), value(Method::XgemPlus, 5.0, 3.0));
}

#[test]
fn objective_gradient_matches_finite_differences() {
    let ds = sample_dataset(
        &DatasetConfig {
            n_samples: 600,
            ..DatasetConfig::default()
        },
        &mut SeededRng::new(3),
    )
    .unwrap();
    let tcfg = TrainConfig {
        classifier_epochs: 2,
        ..TrainConfig::default()
    };
    let (clf, _, _) = train_classifier(&ds, &ds.train, &ds.val, &tcfg, &mut SeededRng::new(1)).unwrap();
    let mut rng = SeededRng::new(8);
    let vae = Vae::new(8, ReconMode::Pixel, &mut rng);
    let x = ds.records[ds.val[0]].image.clone();
    let z = vae.encode_mean(&Tensor::new(vec![1, 1024], x.clone()).unwrap()).unwrap().into_vec();
    let eps = Tensor::new(vec![3, 8], rng.normals(24, 0.3)).unwrap();
    let cfg = EngineConfig {
        n: 3,
        lambda: 0.01,
        alpha: 0.5,
        gamma: 0.2,
        ..EngineConfig::default()
    };
    let (_, grad) = objective_and_grad(&x, &z, &eps, 1.0, &cfg, &vae, &clf).unwrap();
    let h = 1e-5;
    let mut err = 0.0f64;
    let mut scale = 0.0f64;
    for k in 0..eps.len() {
        let mut plus = eps.clone();
        plus.data_mut()[k] += h;
        let mut minus = eps.clone();
        minus.data_mut()[k] -= h;
        let fp = objective_and_grad(&x, &z, &plus, 1.0, &cfg, &vae, &clf).unwrap().0;
        let fm = objective_and_grad(&x, &z, &minus, 1.0, &cfg, &vae, &clf).unwrap().0;
        let fd = (fp - fm) / (2.0 * h);
        err = err.max((fd - grad[k]).abs());
        scale = scale.max(fd.abs());
    }
    assert!(err / scale < 1e-3, "relative error {}", err / scale);
}

#[test]
fn explanations_are_deterministic_and_bundle_is_written() {
    let mut rng = SeededRng::new(6);
    let vae = Vae::new(6, ReconMode::Perceptual, &mut rng);
    let clf = Classifier::new(&mut rng);
    let x = rng.normals(1024, 0.3);
    let cfg = EngineConfig {
        n: 3,
        tau: 4,
        ..EngineConfig::default()
    };
    let a = generate_explanations(&x, &vae, &vae, &clf, None, &cfg, &mut SeededRng::new(1)).unwrap();
    let b = generate_explanations(&x, &vae, &vae, &clf, None, &cfg, &mut SeededRng::new(1)).unwrap();
    assert_eq!(a.set, b.set);
    assert_eq!(a.counterfactuals, b.counterfactuals);

    let dir = tempfile::tempdir().unwrap();
    let meta = BundleMeta {
        method: "dive".into(),
        generator: "vae".into(),
        input_index: Some(3),
    };
    write_bundle(dir.path(), &x, &meta, &a, &[]).unwrap();
    for f in ["original.pgm", "reconstruction.pgm", "cf_0.pgm", "cf_2.pgm", "summary.toml"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3 * a.set.trajectory.len());
    let pgm = std::fs::read(dir.path().join("cf_1.pgm")).unwrap();
    assert!(pgm.starts_with(b"P5\n32 32\n255\n"));
    let summary = BundleSummary::load(&dir.path().join("summary.toml")).unwrap();
    assert_eq!(summary.input_index, Some(3));
    assert_eq!(summary.eps.len(), 3);
    assert_eq!(summary.z, a.set.z);
}

#[test]
fn fisher_methods_require_an_estimate() {
    let d = 4;
    let (x, clf) = toy_setup(d, 1);
    let cfg = EngineConfig {
        n: 2,
        method: Method::FisherSpectral,
        ..EngineConfig::default()
    };
    assert!(generate_explanations(&x, &IdentityEncoder(d), &IdentityDecoder, &clf, None, &cfg, &mut SeededRng::new(0)).is_err());
    let bad = EngineConfig {
        tau: 0,
        ..EngineConfig::default()
    };
    assert_eq!(bad.validate().unwrap_err().exit_code(), 2);
}

fn random_psd(d: usize, seed: u64) -> FisherEstimate {
    let mut rng = SeededRng::new(seed);
    let vs: Vec<Vec<f64>> = (0..d).map(|_| rng.normals(d, 1.0)).collect();
    let mut m = vec![0.0; d * d];
    for v in &vs {
        for i in 0..d {
            for j in 0..d {
                m[i * d + j] += v[i] * v[j];
            }
        }
    }
    FisherEstimate::from_matrix(d, m).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn diversity_is_scale_invariant(v in prop::collection::vec(-2.0f64..2.0, 6), s in 0.1f64..10.0) {
        prop_assume!(v[..3].iter().any(|x| x.abs() > 1e-3) && v[3..].iter().any(|x| x.abs() > 1e-3));
        let a = vec![v[..3].to_vec(), v[3..].to_vec()];
        let b = vec![v[..3].iter().map(|x| x * s).collect(), v[3..].to_vec()];
        prop_assert!((loss_div(&a) - loss_div(&b)).abs() < 1e-9);
    }

    #[test]
    fn chunk_masks_partition_and_complement(d in 1usize..20, n in 1usize..20, seed in 0u64..1000) {
        prop_assume!(n <= d);
        let f = random_psd(d, seed);
        let keep = fisher_chunk_masks(&f, n, ChunkMode::KeepChunk).unwrap();
        let freeze = fisher_chunk_masks(&f, n, ChunkMode::FreezeChunk).unwrap();
        prop_assert!(keep.is_partition());
        for i in 0..n {
            for j in 0..d {
                prop_assert_ne!(keep.masks[i][j], freeze.masks[i][j]);
            }
        }
    }

    #[test]
    fn spectral_and_random_masks_partition(d in 2usize..12, n in 1usize..6, seed in 0u64..1000) {
        prop_assume!(n <= d);
        let f = random_psd(d, seed);
        let s = spectral_masks(&f, n, seed).unwrap();
        prop_assert_eq!(s.n(), n);
        prop_assert!(s.is_partition());
        let r = random_masks(n, d, &mut SeededRng::new(seed)).unwrap();
        prop_assert!(r.is_partition());
        let sizes: Vec<usize> = (0..n).map(|i| r.support(i).len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn fisher_estimate_is_psd(seed in 0u64..50) {
        let d = 3;
        let mut rng = SeededRng::new(seed);
        let clf = LinearLogit { w: rng.normals(d, 1.0), b: rng.normal() };
        let images = Tensor::zeros(&[4, d]);
        let budget = FisherBudget { n_images: 4, n_z_per_image: 8, n_y_samples: 0 };
        let f = estimate_fisher(&StdNormalEncoder(d), &IdentityDecoder, &clf, &images, &budget, &mut rng).unwrap();
        prop_assert!(f.is_valid());
    }
}
