use ttwopt::eval::{gen_cp_problem, gen_mask, psnr, psnr_missing, rse};
use ttwopt::wopt::{self, init_cores, optimize, optimize_from};
use ttwopt::{
    DenseTensor, InitScheme, Method, ObservedProblem, OptimizerConfig, RankChain, Shape, TTCores,
};

fn gaussian_tt(dims: &[usize], ranks: &[usize], seed: u64) -> TTCores {
    let config = OptimizerConfig {
        init: InitScheme::Gaussian { sigma: 0.7 },
        seed,
        ..OptimizerConfig::default()
    };
    init_cores(
        &Shape::new(dims.to_vec()).unwrap(),
        &RankChain::new(ranks.to_vec()).unwrap(),
        &config,
    )
    .unwrap()
}

fn problem(dims: &[usize], rate: f64, seed: u64) -> ObservedProblem {
    let x = gen_cp_problem(dims, 3, seed).unwrap();
    let w = gen_mask(dims, rate, seed + 100).unwrap();
    ObservedProblem::new(x, w).unwrap()
}

#[test]
fn reversing_modes_gives_the_reversed_trajectory() {
    let dims = [4, 3, 5, 2];
    let p = problem(&dims, 0.4, 3);
    let init = gaussian_tt(&dims, &[1, 2, 3, 2, 1], 9);
    for method in [Method::GradientDescent, Method::NonlinearCg] {
        let config = OptimizerConfig {
            method,
            max_iters: 15,
            ..OptimizerConfig::default()
        };
        let (fwd, tf) = optimize_from(&p, init.clone(), &config).unwrap();
        let (bwd, tb) = optimize_from(&p.reversed(), init.reversed(), &config).unwrap();
        assert_eq!(tf.records.len(), tb.records.len());
        for (a, b) in tf.records.iter().zip(&tb.records) {
            assert!(
                (a.f - b.f).abs() <= 1e-8 * a.f.abs().max(1e-12),
                "{} vs {}",
                a.f,
                b.f
            );
        }
        let back = bwd.reversed().full().unwrap();
        assert!(rse(&fwd.full().unwrap(), &back).unwrap() < 1e-8);
    }
}

#[test]
fn reversed_problem_has_reversed_gradients() {
    let dims = [3, 4, 2];
    let p = problem(&dims, 0.5, 1);
    let tt = gaussian_tt(&dims, &[1, 2, 3, 1], 4);
    let g = wopt::gradient(&p, &tt).unwrap();
    let gr = wopt::gradient(&p.reversed(), &tt.reversed()).unwrap();
    for n in 1..=3 {
        let expect = g.grad(n).permute(&[3, 2, 1]).unwrap();
        let got = gr.grad(4 - n);
        let scale = expect.norm().max(1e-12);
        assert!(expect.sub(got).unwrap().norm() / scale < 1e-12);
    }
    let f = wopt::objective(&p, &tt).unwrap();
    let fr = wopt::objective(&p.reversed(), &tt.reversed()).unwrap();
    assert!((f - fr).abs() <= 1e-12 * f);
}

#[test]
fn gradient_descent_trace_never_increases() {
    for rate in [0.0, 0.5, 0.9] {
        let p = problem(&[6, 5, 4], rate, 7);
        let config = OptimizerConfig {
            method: Method::GradientDescent,
            max_iters: 150,
            seed: 5,
            ..OptimizerConfig::default()
        };
        let (_, trace) = optimize(&p, &RankChain::uniform(3, 3).unwrap(), &config).unwrap();
        let mut prev = trace.initial_f;
        for r in &trace.records {
            assert!(r.f <= prev, "f rose from {prev} to {}", r.f);
            assert!(r.step > 0.0);
            prev = r.f;
        }
    }
}

#[test]
fn ncg_trace_never_increases() {
    let p = problem(&[6, 5, 4, 3], 0.5, 2);
    let config = OptimizerConfig {
        max_iters: 300,
        seed: 1,
        ..OptimizerConfig::default()
    };
    let (_, trace) = optimize(&p, &RankChain::uniform(4, 3).unwrap(), &config).unwrap();
    let mut prev = trace.initial_f;
    for r in &trace.records {
        assert!(r.f <= prev);
        prev = r.f;
    }
}

#[test]
fn runs_are_deterministic() {
    let p = problem(&[5, 5, 5], 0.3, 4);
    let config = OptimizerConfig {
        max_iters: 60,
        seed: 17,
        ..OptimizerConfig::default()
    };
    let ranks = RankChain::uniform(3, 4).unwrap();
    let (a, ta) = optimize(&p, &ranks, &config).unwrap();
    let (b, tb) = optimize(&p, &ranks, &config).unwrap();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    assert_eq!(ta.to_csv(), tb.to_csv());
}

#[test]
fn recovers_low_rank_tensor_from_half_the_entries() {
    let dims = [8, 8, 8];
    let truth = gen_cp_problem(&dims, 2, 11).unwrap();
    let w = gen_mask(&dims, 0.5, 12).unwrap();
    let p = ObservedProblem::new(truth.clone(), w).unwrap();
    let config = OptimizerConfig {
        seed: 3,
        ..OptimizerConfig::default()
    };
    let (tt, _) = optimize(&p, &RankChain::uniform(3, 4).unwrap(), &config).unwrap();
    assert!(rse(&truth, &tt.full().unwrap()).unwrap() < 1e-4);
    let completed = wopt::complete(&p, &tt).unwrap();
    assert!(rse(&truth, &completed).unwrap() < 1e-4);
}

#[test]
fn metric_closed_forms() {
    let x = gen_cp_problem(&[4, 5, 3], 2, 1).unwrap();
    let zeros = DenseTensor::zeros(x.shape().clone());
    assert!((rse(&x, &zeros).unwrap() - 1.0).abs() < 1e-12);
    assert!((rse(&x, &x.scaled(2.0)).unwrap() - 1.0).abs() < 1e-12);
    assert!(rse(&zeros, &x).is_err());

    let off = DenseTensor::from_fn(x.shape().clone(), |i| {
        x.get(&[i[0] + 1, i[1] + 1, i[2] + 1]).unwrap() + 0.5
    });
    let off2 = DenseTensor::from_fn(x.shape().clone(), |i| {
        x.get(&[i[0] + 1, i[1] + 1, i[2] + 1]).unwrap() + 0.5 * 2f64.sqrt()
    });
    let drop = psnr(&x, &off, 255.0).unwrap() - psnr(&x, &off2, 255.0).unwrap();
    assert!((drop - 10.0 * 2f64.log10()).abs() < 1e-12);
    assert!((psnr(&x, &off, 1.0).unwrap() - 10.0 * 4f64.log10()).abs() < 1e-12);
    assert_eq!(psnr(&x, &x, 255.0).unwrap(), f64::INFINITY);

    let w = gen_mask(x.dims(), 0.5, 2).unwrap();
    let mut partial = x.clone();
    for (v, &m) in partial.data_mut().iter_mut().zip(w.data()) {
        if m == 0.0 {
            *v += 1.0;
        }
    }
    assert!((psnr_missing(&x, &partial, &w, 1.0).unwrap()).abs() < 1e-12);
}
