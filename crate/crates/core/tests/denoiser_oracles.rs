mod common;

use common::*;
use efddpm::denoiser::{Component, FieldKernel, IsotropicGaussian, StationaryField};
use efddpm::edits::flip_tensor;
use efddpm::numerics::randn;
use efddpm::{DenoiserModel, RngStream};

#[test]
fn score_identity_for_every_family() {
    let s = schedule(100, 1.0);
    let mut rng = RngStream::new(11);
    for (name, model, conds) in families() {
        for cond in conds {
            let err = score_identity_error(&model, cond, &s, 10, &mut rng);
            assert!(err <= 1e-5, "{name} {cond:?}: relative error {err:e}");
        }
    }
}

#[test]
fn score_identity_on_tilted_field() {
    let s = schedule(40, 1.0);
    let m = field(8, 12, FieldKernel { variance: 2.0, length_rows: 1.0, length_cols: 1.2, rho: 0.5, nugget: 1e-2 });
    let err = score_identity_error(&m, None, &s, 10, &mut RngStream::new(3));
    assert!(err <= 1e-5, "{err:e}");
}

#[test]
fn mmse_regression_checks() {
    let s = schedule(100, 1.0);
    let mut rng = RngStream::new(5);
    let cases: Vec<(&str, DenoiserModel, Option<&str>, bool)> = vec![
        ("isotropic", isotropic(), None, true),
        ("full", full_gaussian(), None, true),
        ("field", small_field(), None, true),
        ("gmm", gmm3(), None, false),
        ("conditional b", conditional(), Some("b"), true),
        ("conditional mixture", conditional(), None, false),
    ];
    for (name, model, cond, gaussian) in cases {
        for t in [10, 50] {
            let c = mmse_regression(&model, cond, &s, t, 100_000, &mut rng);
            assert!(c.optimal(), "{name} t={t}: {c:?}");
            if gaussian {
                assert!(c.matches(), "{name} t={t}: {c:?}");
            } else {
                // curved posterior mean: the linear fit leaves residual on the table
                assert!(c.analytic < c.linear, "{name} t={t}: {c:?}");
            }
        }
    }
}

#[test]
fn isotropic_standard_normal_matches_closed_form() {
    let s = schedule(100, 1.0);
    let m = DenoiserModel::isotropic(vector(&[0.0, 0.0, 0.0]), 1.0).unwrap();
    let mut rng = RngStream::new(2);
    for t in [1, 17, 60, 100] {
        let x = randn(&[3], &mut rng).unwrap();
        let k = (1.0 - s.alpha_bar(t)).sqrt();
        let eps = m.predict_eps(&x, t, &s, None).unwrap();
        assert!(eps.max_abs_diff(&x.scale(k)).unwrap() < 1e-14);
        let x0 = m.posterior_x0(&x, t, &s, None).unwrap();
        assert!(x0.max_abs_diff(&x.scale(s.alpha_bar(t).sqrt())).unwrap() < 1e-14);
    }
    let lp = m.log_marginal(&vector(&[0.0, 0.0, 0.0]), 30, &s, None).unwrap();
    assert!((lp + 1.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
}

/// Composite Simpson's rule over `[-40, 40]`.
fn integrate_density(m: &DenoiserModel, t: usize, s: &efddpm::Schedule) -> f64 {
    let n = 80_000;
    let h = 80.0 / n as f64;
    let f = |i: usize| {
        let x = -40.0 + i as f64 * h;
        m.log_marginal(&vector(&[x]), t, s, None).unwrap().exp()
    };
    let mut acc = f(0) + f(n);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i);
    }
    acc * h / 3.0
}

#[test]
fn one_dimensional_densities_integrate_to_one() {
    let s = schedule(100, 1.0);
    let iso = |m: f64, v: f64| Component::Isotropic(IsotropicGaussian::new(vector(&[m]), v).unwrap());
    let models = [
        DenoiserModel::isotropic(vector(&[1.5]), 2.0).unwrap(),
        DenoiserModel::full(vector(&[-0.5]), efddpm::Tensor::from_rows(&[vec![0.7]]).unwrap()).unwrap(),
        DenoiserModel::gmm(vec![0.2, 0.5, 0.3], vec![iso(-6.0, 0.3), iso(0.0, 1.0), iso(5.0, 0.5)]).unwrap(),
    ];
    for m in &models {
        for t in [1, 10, 50, 100] {
            let z = integrate_density(m, t, &s);
            assert!((z - 1.0).abs() <= 1e-6, "t={t}: {z}");
        }
    }
}

#[test]
fn field_is_shift_equivariant() {
    let s = schedule(100, 1.0);
    let m = canonical_field();
    let mut rng = RngStream::new(8);
    for t in [1, 30, 100] {
        let x = randn(&[32, 32], &mut rng).unwrap();
        let eps = m.predict_eps(&x, t, &s, None).unwrap();
        for (dr, dc) in [(1, 0), (0, 5), (7, 13)] {
            let shifted = m.predict_eps(&roll(&x, dr, dc), t, &s, None).unwrap();
            assert!(shifted.max_abs_diff(&roll(&eps, dr, dc)).unwrap() <= 1e-10);
        }
    }
}

#[test]
fn symmetric_field_is_flip_equivariant() {
    let s = schedule(100, 1.0);
    let m = canonical_field();
    let mut rng = RngStream::new(9);
    for t in [2, 45, 99] {
        let x = randn(&[32, 32], &mut rng).unwrap();
        let eps = m.predict_eps(&x, t, &s, None).unwrap();
        for axis in [0, 1] {
            let flipped = m.predict_eps(&flip_tensor(&x, axis).unwrap(), t, &s, None).unwrap();
            assert!(flipped.max_abs_diff(&flip_tensor(&eps, axis).unwrap()).unwrap() <= 1e-10);
        }
    }
}

#[test]
fn field_matches_dense_gaussian() {
    let s = schedule(100, 1.0);
    let kernel = FieldKernel { variance: 1.3, length_rows: 1.2, length_cols: 0.9, rho: 0.3, nugget: 5e-3 };
    let f = StationaryField::new(5, 7, 0.4, kernel.clone()).unwrap();
    let dense = DenoiserModel::full(efddpm::Tensor::full(&[35], 0.4).unwrap(), f.covariance_matrix().unwrap()).unwrap();
    let m = DenoiserModel::field(5, 7, 0.4, kernel).unwrap();
    let mut rng = RngStream::new(12);
    for t in [1, 25, 100] {
        let x = randn(&[5, 7], &mut rng).unwrap();
        let a = m.predict_eps(&x, t, &s, None).unwrap();
        let b = dense.predict_eps(&x.reshape(&[35]).unwrap(), t, &s, None).unwrap();
        assert!(a.reshape(&[35]).unwrap().max_abs_diff(&b).unwrap() < 1e-10);
        let la = m.log_marginal(&x, t, &s, None).unwrap();
        let lb = dense.log_marginal(&x.reshape(&[35]).unwrap(), t, &s, None).unwrap();
        assert!((la - lb).abs() < 1e-9 * la.abs().max(1.0), "{la} vs {lb}");
    }
}

#[test]
fn field_covariance_is_circulant() {
    let f = StationaryField::new(9, 6, 0.0, FieldKernel { variance: 1.0, length_rows: 2.0, length_cols: 1.0, rho: -0.4, nugget: 0.1 }).unwrap();
    let mut rng = RngStream::new(4);
    let mut pick = |n: u64| (rng.next_u64() % n) as usize;
    for _ in 0..200 {
        let a = (pick(9), pick(6));
        let b = (pick(9), pick(6));
        let (dr, dc) = (pick(9), pick(6));
        let a2 = ((a.0 + dr) % 9, (a.1 + dc) % 6);
        let b2 = ((b.0 + dr) % 9, (b.1 + dc) % 6);
        let k = f.covariance_entry(a, b);
        assert!((k - f.covariance_entry(a2, b2)).abs() < 1e-14);
        assert!((k - f.covariance_entry(b, a)).abs() < 1e-14);
    }
    assert!(f.eigenvalues().iter().all(|&l| l > 0.0));
}

#[test]
fn mu_hat_is_the_ddpm_posterior_mean() {
    for steps in [40, 100] {
        let s = schedule(steps, 1.0);
        let mut rng = RngStream::new(steps as u64);
        for (name, model, conds) in families() {
            for cond in conds {
                let gap = posterior_mean_gap(&model, cond, &s, 10, &mut rng);
                assert!(gap <= 1e-12, "{name} {cond:?} T={steps}: {gap:e}");
            }
        }
    }
}
