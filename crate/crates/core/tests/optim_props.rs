use lcnlab_core::harness::{experiment_rrmp_table, ExperimentConfig, LossNorm};
use lcnlab_core::optim::{lcn_gradient, matrix_loss, mu, run_rng, Dataset, QuadLoss};
use lcnlab_core::{Architecture, Filter};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn random_filters(k: &[usize], rng: &mut ChaCha8Rng) -> Vec<Filter> {
    k.iter()
        .map(|&ki| Filter((0..ki).map(|_| normal(rng)).collect()))
        .collect()
}

fn spd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| normal(rng));
    &a * a.transpose() + DMatrix::identity(n, n) * 0.5
}

fn total_loss(loss: &QuadLoss, arch: &Architecture, theta: &[Filter]) -> f64 {
    loss.value(&mu(arch, theta))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn filter_gradient_matches_differences(seed in any::<u64>(), k in prop::collection::vec(1usize..=4, 1..=4)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = Architecture::stride_one(&k).unwrap();
        let n = arch.end_to_end_size();
        let u = Filter((0..n).map(|_| normal(&mut rng)).collect());
        let loss = QuadLoss::new(spd(n, &mut rng), u).unwrap();
        let theta = random_filters(&k, &mut rng);
        let w = mu(&arch, &theta);
        let grad_w = loss.gradient(&w);
        let grads = lcn_gradient(&theta, &grad_w, &arch).unwrap();
        let h = 1e-6;
        for l in 0..theta.len() {
            for a in 0..theta[l].len() {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[l].0[a] += h;
                tm[l].0[a] -= h;
                let fd = (total_loss(&loss, &arch, &tp) - total_loss(&loss, &arch, &tm)) / (2.0 * h);
                let g = grads[l][a];
                prop_assert!((fd - g).abs() <= 1e-5 * (1.0 + g.abs()), "layer {} entry {}: {} vs {}", l, a, fd, g);
            }
        }
    }

    #[test]
    fn matrix_loss_is_filter_loss_plus_offset(
        seed in any::<u64>(),
        ks in prop::collection::vec((1usize..=3, 1usize..=2), 1..=3),
        d_last in 1usize..=2,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (k, s): (Vec<usize>, Vec<usize>) = ks.into_iter().unzip();
        let arch = Architecture::from_filters(&k, &s, d_last).unwrap();
        let n_samples = arch.d[0] + 4;
        let data = Dataset::sample_normal(arch.d[0], d_last, n_samples, &mut rng);
        let (loss, offset) = QuadLoss::from_data(&data, &arch).unwrap();
        let theta = random_filters(&k, &mut rng);
        let direct = matrix_loss(&data, &arch, &theta).unwrap();
        let via = loss.value(&mu(&arch, &theta)) + offset;
        prop_assert!((direct - via).abs() <= 1e-9 * (1.0 + direct.abs()), "{} vs {}", direct, via);
    }
}

#[test]
fn quadratic_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for n in 1..=6 {
        let u = Filter((0..n).map(|_| normal(&mut rng)).collect());
        let loss = QuadLoss::new(spd(n, &mut rng), u).unwrap();
        let w: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let g = loss.gradient(&w);
        for i in 0..n {
            let mut wp = w.clone();
            let mut wm = w.clone();
            wp[i] += 1e-6;
            wm[i] -= 1e-6;
            let fd = (loss.value(&wp) - loss.value(&wm)) / 2e-6;
            assert!((fd - g[i]).abs() <= 1e-6 * (1.0 + g[i].abs()));
        }
    }
}

/// Target shares recomputed from the raw data stream with a plain normal-equation solve.
#[test]
fn target_shares_match_independent_solve() {
    let cfg = ExperimentConfig {
        n_datasets: 300,
        norm: LossNorm::Data,
        ..ExperimentConfig::default()
    };
    let table = experiment_rrmp_table(&cfg).unwrap();
    let (d0, n) = (3, cfg.n_samples);
    let mut real = 0usize;
    for i in 0..cfg.n_datasets as u64 {
        let mut rng = run_rng(cfg.seed, i);
        let mut x = DMatrix::<f64>::zeros(d0, n);
        for j in 0..n {
            for r in 0..d0 {
                x[(r, j)] = normal(&mut rng);
            }
        }
        let y = DMatrix::from_fn(1, n, |_, _| normal(&mut rng));
        let xxt = &x * x.transpose();
        let u = &y * x.transpose() * xxt.try_inverse().unwrap();
        if u[1] * u[1] - 4.0 * u[0] * u[2] > 0.0 {
            real += 1;
        }
    }
    let n_real = (table.target_share("11|0") * cfg.n_datasets as f64 / 100.0).round() as usize;
    let n_complex = (table.target_share("0|1") * cfg.n_datasets as f64 / 100.0).round() as usize;
    assert_eq!(n_real, real);
    assert_eq!(n_complex, cfg.n_datasets - real);
}
