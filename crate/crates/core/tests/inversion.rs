mod common;

use common::*;
use efddpm::inversion::{
    build_aux_chain, cyclediffusion_invert, ddim_invert, edit_friendly_invert, edit_friendly_invert_with,
    InversionOptions,
};
use efddpm::sampler::generate_from_latent;
use efddpm::{Condition, DenoiserModel, Error, Method, RngStream, Tensor};

fn reconstruct_error(model: &DenoiserModel, steps: usize, cond: &Condition, seed: u64) -> f64 {
    let s = schedule(steps, 1.0);
    let mut rng = RngStream::new(seed);
    let x0 = model.sample(&mut rng, cond.as_label()).unwrap();
    let code = edit_friendly_invert(&x0, model, &s, &mut rng, cond).unwrap();
    generate_from_latent(model, &s, &code, cond, 0).unwrap().max_abs_diff(&x0).unwrap()
}

#[test]
fn edit_friendly_reconstructs_every_family() {
    for steps in [40, 100] {
        for (name, model, conds) in families() {
            for cond in conds {
                let c = Condition { label: cond.map(str::to_string), strength: None };
                let err = reconstruct_error(&model, steps, &c, 1);
                assert!(err <= 1e-8, "{name} {cond:?} T={steps}: {err:e}");
            }
        }
        let guided = Condition::guided("b", 2.5);
        assert!(reconstruct_error(&conditional(), steps, &guided, 2) <= 1e-8);
    }
}

#[test]
fn different_seeds_give_different_exact_codes() {
    let s = schedule(100, 1.0);
    let m = canonical_field();
    let x0 = m.sample(&mut RngStream::new(0), None).unwrap();
    let none = Condition::none();
    let a = edit_friendly_invert(&x0, &m, &s, &mut RngStream::new(1), &none).unwrap();
    let b = edit_friendly_invert(&x0, &m, &s, &mut RngStream::new(2), &none).unwrap();
    let gap = (1..=100).map(|t| a.z(t).max_abs_diff(b.z(t)).unwrap()).fold(0.0, f64::max);
    assert!(gap > 0.1);
    for code in [&a, &b] {
        assert!(generate_from_latent(&m, &s, code, &none, 0).unwrap().max_abs_diff(&x0).unwrap() <= 1e-8);
    }
}

#[test]
fn reprojection_limits_error_growth() {
    let s = schedule(100, 1.0);
    let none = Condition::none();
    for (name, m) in [("field", canonical_field()), ("gmm", gmm3())] {
        let x0 = m.sample(&mut RngStream::new(3), None).unwrap();
        let run = |reproject: bool| {
            let opts = InversionOptions { reproject, ..Default::default() };
            let code = edit_friendly_invert_with(&x0, &m, &s, &mut RngStream::new(4), &none, opts).unwrap();
            generate_from_latent(&m, &s, &code, &none, 0).unwrap().max_abs_diff(&x0).unwrap()
        };
        let (with, without) = (run(true), run(false));
        assert!(without > with, "{name}: {without:e} vs {with:e}");
    }
}

#[test]
fn z1_convention_is_only_approximate() {
    let s = schedule(100, 1.0);
    let m = gmm3();
    let x0 = m.sample(&mut RngStream::new(5), None).unwrap();
    let opts = InversionOptions { z1_convention: true, ..Default::default() };
    let none = Condition::none();
    let code = edit_friendly_invert_with(&x0, &m, &s, &mut RngStream::new(6), &none, opts).unwrap();
    assert!(code.z1_convention());
    assert_eq!(code.z(1).max_abs(), 0.0);
    let err = generate_from_latent(&m, &s, &code, &none, 0).unwrap().max_abs_diff(&x0).unwrap();
    assert!(err > 1e-8 && err < 0.1, "{err:e}");
}

#[test]
fn aux_chain_statistics() {
    let s = schedule(40, 1.0);
    let x0 = vector(&[2.0, -1.0]);
    let zero = vector(&[0.0, 0.0]);
    let n = 10_000;
    let root = RngStream::new(9);
    let chains: Vec<Vec<Tensor>> = (0..n).map(|i| build_aux_chain(&x0, &s, &mut root.child(&format!("c{i}"))).unwrap()).collect();
    let eps = |c: &[Tensor], t: usize| {
        let ab = s.alpha_bar(t);
        (c[t].data()[0] - ab.sqrt() * x0.data()[0]) / (1.0 - ab).sqrt()
    };
    for t in [1, 10, 25, 40] {
        let v: Vec<f64> = chains.iter().map(|c| c[t].data()[1]).collect();
        let (m, se) = mean_se(&v);
        assert!((m - s.alpha_bar(t).sqrt() * x0.data()[1]).abs() <= 3.0 * se, "t={t}");
    }
    for t in [2, 20, 40] {
        let a: Vec<f64> = chains.iter().map(|c| eps(c, t)).collect();
        let b: Vec<f64> = chains.iter().map(|c| eps(c, t - 1)).collect();
        assert!(pearson(&a, &b).abs() <= 0.03, "t={t}");
    }
    // zero signal: x_T is almost pure noise
    let top: Vec<f64> = (0..n)
        .flat_map(|i| build_aux_chain(&zero, &s, &mut root.child(&format!("z{i}"))).unwrap()[40].data().to_vec())
        .collect();
    let (m, _) = mean_se(&top);
    let sd = (top.iter().map(|v| (v - m).powi(2)).sum::<f64>() / top.len() as f64).sqrt();
    assert!((sd - 1.0).abs() < 0.02, "{sd}");
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

#[test]
fn cyclediffusion_is_consistent() {
    for steps in [40, 100] {
        let s = schedule(steps, 1.0);
        for (name, model, _) in families() {
            let mut rng = RngStream::new(10);
            let x0 = model.sample(&mut rng, None).unwrap();
            let none = Condition::none();
            let code = cyclediffusion_invert(&x0, &model, &s, &mut rng, &none).unwrap();
            assert_eq!(code.method(), Method::CycleDiffusion);
            assert_eq!(&code.aux_chain().unwrap()[0], &x0);
            let err = generate_from_latent(&model, &s, &code, &none, 0).unwrap().max_abs_diff(&x0).unwrap();
            assert!(err <= 1e-8, "{name} T={steps}: {err:e}");
        }
    }
}

#[test]
fn ddim_inverts_a_point_mass() {
    let c = vector(&[3.0, -1.5, 0.25]);
    let m = DenoiserModel::isotropic(c.clone(), 0.0).unwrap();
    for steps in [10, 50, 100] {
        let s = schedule(steps, 1.0);
        let code = ddim_invert(&c, &m, &s, &Condition::none()).unwrap();
        assert_eq!(code.method(), Method::Ddim);
        assert!(code.noise().iter().all(|z| z.max_abs() == 0.0));
        let det = s.with_eta(0.0).unwrap();
        let x = generate_from_latent(&m, &det, &code, &Condition::none(), 0).unwrap();
        assert!(x.max_abs_diff(&c).unwrap() <= 1e-6, "T={steps}");
        // the stochastic schedule has a different fingerprint
        assert!(matches!(
            generate_from_latent(&m, &s, &code, &Condition::none(), 0),
            Err(Error::IncompatibleLatent(_))
        ));
    }
}

#[test]
fn ddim_error_shrinks_with_more_steps() {
    let m = gmm3();
    let x0 = vector(&[1.2, 0.4]);
    let none = Condition::none();
    let errors: Vec<f64> = [50, 200, 1000]
        .iter()
        .map(|&k| {
            let det = schedule(k, 0.0);
            let code = ddim_invert(&x0, &m, &det, &none).unwrap();
            generate_from_latent(&m, &det, &code, &none, 0).unwrap().max_abs_diff(&x0).unwrap()
        })
        .collect();
    assert!(errors[0] > 1e-8, "{errors:?}");
    assert!(errors[0] >= errors[1] && errors[1] >= errors[2], "{errors:?}");
}

#[test]
fn eta_zero_refuses_noise_extraction() {
    let s = schedule(20, 0.0);
    let m = gmm3();
    let x0 = vector(&[0.0, 1.0]);
    let none = Condition::none();
    assert!(matches!(edit_friendly_invert(&x0, &m, &s, &mut RngStream::new(0), &none), Err(Error::DivisionByZero(_))));
    assert!(matches!(cyclediffusion_invert(&x0, &m, &s, &mut RngStream::new(0), &none), Err(Error::DivisionByZero(_))));
}
