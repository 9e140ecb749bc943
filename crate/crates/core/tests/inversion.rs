use nalgebra::{DMatrix, DVector};
use petal_core::diffcore::grad_check;
use petal_core::inversion::*;
use petal_core::linearize::{RefTag, ReferenceLinearization};
use petal_core::surrogate::{Ensemble, ModelVariant, NormStats, NormalizedReference, Petal};
use petal_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0))
}

fn random_vector(r: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| r.random_range(-1.0..1.0))
}

fn col(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

/// Two cells, three straight paths: `T = L (1/c)`.
fn slowness_toy() -> (DMatrix<f64>, DVector<f64>) {
    let l = DMatrix::from_row_slice(3, 2, &[1000.0, 500.0, 300.0, 1200.0, 800.0, 800.0]);
    let truth = DVector::from_vec(vec![1490.0, 1515.0]);
    let mut y = &l * truth.map(|c| 1.0 / c);
    y[0] += 2e-5;
    y[2] -= 1e-5;
    (l, y)
}

fn toy_forward(
    l: &DMatrix<f64>,
) -> impl Fn(&DVector<f64>) -> petal_core::Result<DVector<f64>> + '_ {
    move |c| Ok(l * c.map(|v| 1.0 / v))
}

fn toy_jacobian(
    l: &DMatrix<f64>,
) -> impl Fn(&DVector<f64>) -> petal_core::Result<DMatrix<f64>> + '_ {
    move |c| {
        Ok(DMatrix::from_fn(l.nrows(), l.ncols(), |i, j| {
            -l[(i, j)] / (c[j] * c[j])
        }))
    }
}

#[test]
fn gauss_newton_is_exact_on_linear_problems() {
    let mut r = rng(0);
    let a = random_matrix(&mut r, 8, 4);
    let truth = random_vector(&mut r, 4);
    let y = &a * &truth;
    let res = gauss_newton(|x| Ok(&a * x), |_| Ok(a.clone()), &y, &DVector::zeros(4), 1).unwrap();
    assert!(res.residual_norms[1] < 1e-10);
    assert!((res.x - &truth).amax() < 1e-10);

    let fixed = gauss_newton(|x| Ok(&a * x), |_| Ok(a.clone()), &y, &truth, 3).unwrap();
    assert!((fixed.x - truth).amax() < 1e-12);
}

#[test]
fn gauss_newton_matches_grid_search_on_slowness_toy() {
    let (l, y) = slowness_toy();
    let f = toy_forward(&l);
    let res = gauss_newton(
        &f,
        toy_jacobian(&l),
        &y,
        &DVector::from_vec(vec![1500.0, 1500.0]),
        20,
    )
    .unwrap();

    let obj = |a: f64, b: f64| (f(&DVector::from_vec(vec![a, b])).unwrap() - &y).norm_squared();
    let (mut ca, mut cb, mut half) = (1500.0, 1500.0, 50.0);
    for _ in 0..40 {
        let mut best = (f64::INFINITY, ca, cb);
        for i in 0..=40 {
            for j in 0..=40 {
                let a = ca - half + 2.0 * half * i as f64 / 40.0;
                let b = cb - half + 2.0 * half * j as f64 / 40.0;
                let v = obj(a, b);
                if v < best.0 {
                    best = (v, a, b);
                }
            }
        }
        (ca, cb) = (best.1, best.2);
        half *= 0.25;
    }
    assert!(
        (res.x[0] - ca).abs() < 1e-6 && (res.x[1] - cb).abs() < 1e-6,
        "{} {} vs {ca} {cb}",
        res.x[0],
        res.x[1]
    );
}

#[test]
fn lm_reduces_to_gauss_newton_and_to_gradient_descent() {
    let mut r = rng(1);
    let j = random_matrix(&mut r, 7, 4);
    let res = random_vector(&mut r, 7);
    let gn = gauss_newton_step(&j, &res).unwrap();
    let lm = lm_step(&j, &res, 0.0).unwrap();
    assert!((gn - lm).amax() < 1e-10);

    let big = 1e8 * j.tr_mul(&j).norm();
    let step = lm_step(&j, &res, big).unwrap();
    let grad = j.tr_mul(&res);
    let cos = step.dot(&grad) / (step.norm() * grad.norm());
    assert!(cos.clamp(-1.0, 1.0).acos() < 1e-3);
    assert!(lm_step(&j, &res, -1.0).is_err());
}

#[test]
fn lm_survives_rank_deficiency_where_gauss_newton_fails() {
    // both cells see identical path lengths, so their columns are parallel
    let l = DMatrix::from_row_slice(3, 2, &[700.0, 700.0, 400.0, 400.0, 1000.0, 1000.0]);
    let y = &l * DVector::from_vec(vec![1.0 / 1480.0, 1.0 / 1520.0]);
    let x0 = DVector::from_vec(vec![1500.0, 1500.0]);
    let gn = gauss_newton(toy_forward(&l), toy_jacobian(&l), &y, &x0, 5);
    match gn {
        Err(Error::Singular(msg)) => assert!(Error::Singular(msg)
            .to_string()
            .contains("levenberg_marquardt")),
        other => panic!("expected singular error, got {other:?}"),
    }
    let lm = levenberg_marquardt(toy_forward(&l), toy_jacobian(&l), &y, &x0, 1e-9, 30).unwrap();
    assert!(
        lm.residual_norms.last().unwrap() < &1e-10,
        "{:?}",
        lm.residual_norms
    );
}

#[test]
fn regularized_gd_properties() {
    let mut r = rng(2);
    let a = random_matrix(&mut r, 6, 4) * 0.5;
    let truth = random_vector(&mut r, 4);
    let y = &a * &truth;
    let none = RegularizerConfig::NONE;
    let fixed = regularized_gd(
        |x| Ok(&a * x),
        |_| Ok(a.clone()),
        &y,
        &truth,
        0.1,
        &none,
        (2, 2),
        5,
    )
    .unwrap();
    assert_eq!(fixed.x, truth);

    let reg = RegularizerConfig {
        l2: 1e-2,
        sobolev: 1e-2,
    };
    let mut x = DVector::zeros(4);
    let objective = |x: &DVector<f64>| {
        0.5 * (&y - &a * x).norm_squared() + regularizer_value_grad(x, &reg, 2, 2).unwrap().0
    };
    let mut prev = objective(&x);
    for _ in 0..50 {
        x = regularized_gd(
            |x| Ok(&a * x),
            |_| Ok(a.clone()),
            &y,
            &x,
            0.05,
            &reg,
            (2, 2),
            1,
        )
        .unwrap()
        .x;
        let now = objective(&x);
        assert!(now <= prev + 1e-15);
        prev = now;
    }

    let blow = regularized_gd(
        |x| Ok(&a * x),
        |_| Ok(a.clone()),
        &y,
        &DVector::zeros(4),
        1e3,
        &none,
        (2, 2),
        50,
    );
    assert!(matches!(blow, Err(Error::Diverged(_))));
}

#[test]
fn regularized_gd_matches_neural_adjoint_on_linear_model() {
    let mut r = rng(3);
    let (n, m) = (5, 6);
    let a = random_matrix(&mut r, n, m) * 0.4;
    let truth = random_vector(&mut r, m);
    let y = &a * &truth;
    let reg = RegularizerConfig {
        l2: 1e-3,
        sobolev: 1e-3,
    };
    let lr = 0.2;
    let iters = 25;
    let stats = NormStats::identity(m, n);
    let lfm = NormalizedReference {
        x_ref: DVector::zeros(m),
        y_ref: DVector::zeros(n),
        a: a.clone(),
    };
    let na = neural_adjoint(
        &LfmSurrogate::single(lfm, 1),
        &stats,
        GridShape {
            n_range: 2,
            n_depth: 3,
        },
        &col(&y),
        &DMatrix::zeros(m, 1),
        &NaConfig {
            lr,
            iters,
            cutoff: 0.0,
            ..NaConfig::default()
        },
        &reg,
    )
    .unwrap();
    // NA minimizes ½·mean misfit, so rescale the model by 1/sqrt(n)
    let s = 1.0 / (n as f64).sqrt();
    let gd = regularized_gd(
        |x| Ok(&a * x * s),
        |_| Ok(&a * s),
        &(&y * s),
        &DVector::zeros(m),
        lr,
        &reg,
        (2, 3),
        iters,
    )
    .unwrap();
    assert!((na.x_hat.column(0) - gd.x).amax() < 1e-12);
}

#[test]
fn pca_properties() {
    let mut r = rng(4);
    let basis = random_matrix(&mut r, 10, 3);
    let coeffs = random_matrix(&mut r, 3, 20);
    let offset = random_vector(&mut r, 10);
    let mut samples = &basis * &coeffs;
    for mut c in samples.column_iter_mut() {
        c += &offset;
    }
    let pca = pca_fit(&samples, 3).unwrap();
    assert!((pca.components.tr_mul(&pca.components) - DMatrix::identity(3, 3)).amax() < 1e-10);
    for c in samples.column_iter() {
        let c = c.into_owned();
        assert!((pca.reconstruct(&c).unwrap() - &c).amax() < 1e-10);
    }
    let zero = pca_fit(&samples, 0).unwrap();
    assert_eq!(
        zero.reconstruct(&samples.column(0).into_owned()).unwrap(),
        zero.mean
    );
    assert!(pca_fit(&samples, 11).is_err());
    assert!(pca_fit(&DMatrix::<f64>::zeros(4, 3), 3).is_err());
}

#[test]
fn pca_matches_covariance_eigenvectors() {
    let mut r = rng(5);
    let samples = random_matrix(&mut r, 6, 40);
    let pca = pca_fit(&samples, 4).unwrap();
    let mut centered = samples.clone();
    for mut c in centered.column_iter_mut() {
        c -= &pca.mean;
    }
    let cov = &centered * centered.transpose() / 40.0;
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..6).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    for (k, &i) in order.iter().take(4).enumerate() {
        let e = eig.eigenvectors.column(i);
        let c = pca.components.column(k);
        let diff = (c - e).amax().min((c + e).amax());
        assert!(diff < 1e-8, "component {k}: {diff}");
        let lead = c
            .iter()
            .copied()
            .fold(0.0f64, |b, v| if v.abs() > b.abs() { v } else { b });
        assert!(lead > 0.0);
    }
    let err = |p: usize| {
        let b = pca_fit(&samples, p).unwrap();
        samples
            .column_iter()
            .map(|c| (b.reconstruct(&c.into_owned()).unwrap() - c).norm_squared())
            .sum::<f64>()
    };
    for p in 0..6 {
        assert!(err(p + 1) <= err(p) + 1e-12);
    }
}

fn random_reference(r: &mut ChaCha8Rng, n: usize, m: usize) -> ReferenceLinearization<f64> {
    ReferenceLinearization {
        x_ref: random_vector(r, m),
        y_ref: random_vector(r, n),
        a: random_matrix(r, n, m),
        tag: RefTag {
            slice_id: 0,
            time_index: 0,
        },
    }
}

#[test]
fn tikhonov_limits() {
    let mut r = rng(6);
    let (n, m) = (8, 10);
    let lin = random_reference(&mut r, n, m);
    let samples = random_matrix(&mut r, m, 30);
    let basis = pca_fit(&samples, 3).unwrap();
    let x_in = &basis.mean + &basis.components * DVector::from_vec(vec![0.4, -1.2, 0.7]);
    let y = lin.predict(&x_in).unwrap();
    let exact = tik_solve(&lin, &basis, &y, 0.0).unwrap();
    assert!((exact - &x_in).amax() < 1e-8);
    let damped = tik_solve(&lin, &basis, &y, 1e14).unwrap();
    assert!((damped - &basis.mean).amax() < 1e-8);

    // identity basis, α = 0: plain least squares
    let (n, m) = (9, 4);
    let lin = random_reference(&mut r, n, m);
    let ident = PcaBasis {
        mean: DVector::zeros(m),
        components: DMatrix::identity(m, m),
        singular_values: DVector::from_element(m, 1.0),
    };
    let y = random_vector(&mut r, n);
    let x = tik_solve(&lin, &ident, &y, 0.0).unwrap();
    let rhs = &y - &lin.y_ref + &lin.a * &lin.x_ref;
    let ls = lin.a.clone().svd(true, true).solve(&rhs, 1e-14).unwrap();
    assert!((x - ls).amax() < 1e-8);
}

#[test]
fn weighted_tikhonov_is_exact_on_consistent_data() {
    let mut r = rng(7);
    let lin = random_reference(&mut r, 8, 10);
    let basis = pca_fit(&random_matrix(&mut r, 10, 30), 3).unwrap();
    let x_in = &basis.mean + &basis.components * DVector::from_vec(vec![0.1, 0.5, -0.3]);
    let y = col(&lin.predict(&x_in).unwrap());
    let w = DVector::from_fn(8, |i, _| 1.0 + i as f64);
    let x = tik_solve_batch(&lin, &basis, &y, 0.0, Some(&w)).unwrap();
    assert!((x.column(0) - x_in).amax() < 1e-8);
}

fn lfm_setup(seed: u64, n: usize, m: usize) -> (NormalizedReference<f64>, DMatrix<f64>) {
    let mut r = rng(seed);
    let a = random_matrix(&mut r, n, m) + DMatrix::identity(n, m) * 2.0;
    let lfm = NormalizedReference {
        x_ref: random_vector(&mut r, m),
        y_ref: random_vector(&mut r, n),
        a,
    };
    let truth = random_matrix(&mut r, m, 3);
    (lfm, truth)
}

#[test]
fn cutoff_at_start_applies_no_iterations() {
    let (lfm, truth) = lfm_setup(8, 5, 5);
    let y = lfm.predict(&truth).unwrap();
    let res = neural_adjoint(
        &LfmSurrogate::single(lfm, 3),
        &NormStats::identity(5, 5),
        GridShape {
            n_range: 1,
            n_depth: 5,
        },
        &y,
        &truth,
        &NaConfig::default(),
        &RegularizerConfig::default(),
    )
    .unwrap();
    assert_eq!(res.iterations, vec![0, 0, 0]);
    assert!(res.cutoff_hit.iter().all(|&c| c));
    assert_eq!(res.x_hat, truth);
}

#[test]
fn single_lfm_converges_to_least_squares() {
    let (lfm, truth) = lfm_setup(9, 5, 5);
    let y = lfm.predict(&truth).unwrap();
    let cfg = NaConfig {
        lr: 0.5,
        iters: 3000,
        cutoff: 0.0,
        ..NaConfig::default()
    };
    let res = neural_adjoint(
        &LfmSurrogate::single(lfm.clone(), 3),
        &NormStats::identity(5, 5),
        GridShape {
            n_range: 1,
            n_depth: 5,
        },
        &y,
        &DMatrix::zeros(5, 3),
        &cfg,
        &RegularizerConfig::NONE,
    )
    .unwrap();
    let mut rhs = y.clone();
    for mut c in rhs.column_iter_mut() {
        c -= &lfm.y_ref - &lfm.a * &lfm.x_ref;
    }
    let pinv = lfm.a.clone().pseudo_inverse(1e-14).unwrap() * rhs;
    assert!(res.final_misfit.iter().all(|&m| m < 1e-6));
    assert!((res.x_hat - pinv).amax() < 1e-4);
}

#[test]
fn trace_is_monotone_for_small_steps() {
    let (lfm, truth) = lfm_setup(10, 4, 6);
    let y = lfm.predict(&truth).unwrap();
    let cfg = NaConfig {
        lr: 1e-2,
        iters: 200,
        cutoff: 0.0,
        ..NaConfig::default()
    };
    let res = neural_adjoint(
        &LfmSurrogate::single(lfm, 3),
        &NormStats::identity(6, 4),
        GridShape {
            n_range: 2,
            n_depth: 3,
        },
        &y,
        &DMatrix::zeros(6, 3),
        &cfg,
        &RegularizerConfig::NONE,
    )
    .unwrap();
    assert_eq!(res.trace.len(), 200);
    assert!(res.trace.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn frozen_samples_stay_bit_identical() {
    let (lfm, truth) = lfm_setup(11, 5, 5);
    let mut y = lfm.predict(&truth).unwrap();
    y.column_mut(2).add_scalar_mut(3.0);
    let run = |iters| {
        neural_adjoint(
            &LfmSurrogate::single(lfm.clone(), 3),
            &NormStats::identity(5, 5),
            GridShape {
                n_range: 1,
                n_depth: 5,
            },
            &y,
            &DMatrix::zeros(5, 3),
            &NaConfig {
                lr: 0.3,
                iters,
                cutoff: 1e-2,
                ..NaConfig::default()
            },
            &RegularizerConfig::NONE,
        )
        .unwrap()
    };
    let short = run(60);
    let long = run(400);
    for j in 0..3 {
        if short.cutoff_hit[j] {
            assert_eq!(short.x_hat.column(j), long.x_hat.column(j));
            assert_eq!(short.iterations[j], long.iterations[j]);
        }
    }
    assert!(short.cutoff_hit.iter().any(|&c| c));
}

fn small_petal(seed: u64) -> Petal<f64> {
    let mut r = rng(seed);
    let refs: Vec<_> = (0..3)
        .map(|_| NormalizedReference {
            x_ref: random_vector(&mut r, 6),
            y_ref: random_vector(&mut r, 4),
            a: random_matrix(&mut r, 4, 6),
        })
        .collect();
    Petal::init(Ensemble::new(&refs).unwrap(), 3, &mut r).unwrap()
}

#[test]
fn subspace_step_follows_the_chain_rule() {
    let petal = small_petal(12);
    let mut r = rng(13);
    let stats = NormStats {
        x_mean: DVector::from_element(6, 1500.0),
        x_std: DVector::from_fn(6, |_, _| r.random_range(1.0..5.0)),
        y_mean: DVector::from_element(4, 3.0),
        y_std: DVector::from_element(4, 0.01),
    };
    let grid = GridShape {
        n_range: 2,
        n_depth: 3,
    };
    let reg = RegularizerConfig {
        l2: 1e-7,
        sobolev: 1e-3,
    };
    let x0 = stats.denormalize_x(&random_matrix(&mut r, 6, 1)).unwrap();
    let y = stats.denormalize_y(&random_matrix(&mut r, 4, 1)).unwrap();
    let lr = 1e-3;
    let cfg = NaConfig {
        lr,
        iters: 1,
        cutoff: 0.0,
        optimize_in_subspace: true,
        ..NaConfig::default()
    };
    let sur = VariantSurrogate::new(&petal, ModelVariant::PETAL).unwrap();
    let res = neural_adjoint(&sur, &stats, grid, &y, &x0, &cfg, &reg).unwrap();
    let z0 = petal.encode(&stats.normalize_x(&x0).unwrap()).unwrap();
    let step = (res.z_hat.unwrap() - &z0) / -lr;

    let yt = stats.normalize_y(&y).unwrap();
    let objective = |z: &DVector<f64>| {
        let xt = petal.decode(&col(z)).unwrap();
        let r = petal.variant_forward(ModelVariant::PETAL, &xt).unwrap() - &yt;
        let raw = stats.denormalize_x(&xt).unwrap().column(0).into_owned();
        0.5 * r.norm_squared() / 4.0 + regularizer_value_grad(&raw, &reg, 2, 3).unwrap().0
    };
    let z0v = z0.column(0).into_owned();
    assert!(grad_check(objective, &z0v, &step.column(0).into_owned()) < 1e-6);

    let plain = NaConfig {
        optimize_in_subspace: true,
        ..cfg
    };
    let wan = VariantSurrogate::new(&petal, ModelVariant::WAN).unwrap();
    assert!(neural_adjoint(&wan, &stats, grid, &y, &x0, &plain, &reg).is_err());
}

#[test]
fn decoded_estimate_matches_latent() {
    let petal = small_petal(14);
    let mut r = rng(15);
    let stats = NormStats::identity(6, 4);
    let x0 = random_matrix(&mut r, 6, 4);
    let y = random_matrix(&mut r, 4, 4);
    let cfg = NaConfig {
        lr: 0.1,
        iters: 20,
        cutoff: 0.0,
        optimize_in_subspace: true,
        ..NaConfig::default()
    };
    let res = neural_adjoint(
        &petal,
        &stats,
        GridShape {
            n_range: 2,
            n_depth: 3,
        },
        &y,
        &x0,
        &cfg,
        &RegularizerConfig::NONE,
    )
    .unwrap();
    let decoded = petal.decode(res.z_hat.as_ref().unwrap()).unwrap();
    assert!((decoded - res.x_hat).amax() < 1e-10);
}

#[test]
fn lfm_surrogate_routes_samples_to_their_reference() {
    let mut r = rng(16);
    let refs: Vec<_> = (0..3)
        .map(|_| NormalizedReference {
            x_ref: random_vector(&mut r, 5),
            y_ref: random_vector(&mut r, 3),
            a: random_matrix(&mut r, 3, 5),
        })
        .collect();
    let assignment = vec![2, 0, 1, 2];
    let sur = LfmSurrogate::new(refs.clone(), assignment.clone()).unwrap();
    let x = random_matrix(&mut r, 5, 3);
    let ids = [3, 1, 2];
    let y = sur.predict(&x, &ids).unwrap();
    for (k, &id) in ids.iter().enumerate() {
        let own = refs[assignment[id]]
            .predict(&x.columns(k, 1).into_owned())
            .unwrap();
        assert!((y.column(k) - own.column(0)).amax() < 1e-14);
    }
    let c = random_matrix(&mut r, 3, 3);
    let g = sur.input_vjp(&x, &c, &ids).unwrap();
    let f = |xv: &DVector<f64>| {
        sur.predict(&DMatrix::from_column_slice(5, 3, xv.as_slice()), &ids)
            .unwrap()
            .dot(&c)
    };
    assert!(
        grad_check(
            f,
            &DVector::from_column_slice(x.as_slice()),
            &DVector::from_column_slice(g.as_slice())
        ) < 1e-8
    );
    assert!(LfmSurrogate::new(refs, vec![5]).is_err());
}
