use lcnlab_core::poly::{
    circulant, compose_tensors, end_to_end, pi_s, toeplitz, Architecture, ConvTensorD, Filter,
};
use ndarray::{ArrayD, IxDyn};
use proptest::prelude::*;

fn coeffs(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, k)
}

fn layers() -> impl Strategy<Value = (Vec<usize>, Vec<usize>)> {
    prop::collection::vec((1usize..=4, 1usize..=3), 1..=4).prop_map(|v| v.into_iter().unzip())
}

fn filters_for(k: &[usize]) -> impl Strategy<Value = Vec<Filter>> {
    k.iter()
        .map(|&ki| coeffs(ki).prop_map(Filter))
        .collect::<Vec<_>>()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = b.iter().fold(1e-300f64, |m, x| m.max(x.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

/// Homogeneous evaluation with coefficients highest x-power first.
fn eval(c: &[f64], x: f64, y: f64) -> f64 {
    let n = c.len() - 1;
    c.iter()
        .enumerate()
        .map(|(i, a)| a * x.powi((n - i) as i32) * y.powi(i as i32))
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn end_to_end_polynomial_is_product_of_spread_layers(
        (k, s, theta) in layers().prop_flat_map(|(k, s)| {
            let f = filters_for(&k);
            (Just(k), Just(s), f)
        }),
        x in -1.5f64..1.5,
        y in -1.5f64..1.5,
    ) {
        let arch = Architecture::from_filters(&k, &s, 2).unwrap();
        let (w, _) = end_to_end(&arch, &theta).unwrap();
        let mut acc = 1.0;
        let mut stride = 1;
        for (f, &sl) in theta.iter().zip(&s) {
            acc *= eval(&pi_s(f, stride), x, y);
            stride *= sl;
        }
        let direct = eval(&w, x, y);
        prop_assert!((direct - acc).abs() <= 1e-10 * (1.0 + acc.abs()));
    }

    #[test]
    fn toeplitz_product_is_end_to_end_toeplitz(
        (k, s, theta) in layers().prop_flat_map(|(k, s)| {
            let f = filters_for(&k);
            (Just(k), Just(s), f)
        }),
        d_last in 1usize..=3,
    ) {
        let arch = Architecture::from_filters(&k, &s, d_last).unwrap();
        let (w, stride) = end_to_end(&arch, &theta).unwrap();
        let mut prod = nalgebra::DMatrix::<f64>::identity(arch.d[0], arch.d[0]);
        for (l, f) in theta.iter().enumerate() {
            prod = toeplitz(f, s[l], arch.d[l]).unwrap().to_dense() * prod;
        }
        let direct = toeplitz(&w, stride, arch.d[0]).unwrap().to_dense();
        prop_assert_eq!(direct.shape(), prod.shape());
        prop_assert!(rel_err(direct.as_slice(), prod.as_slice()) <= 1e-12);
    }

    #[test]
    fn stride_one_product_ignores_layer_order(
        theta in prop::collection::vec((1usize..=4).prop_flat_map(coeffs), 2..=4),
        seed in any::<u64>(),
    ) {
        let theta: Vec<Filter> = theta.into_iter().map(Filter).collect();
        let k: Vec<usize> = theta.iter().map(|f| f.len()).collect();
        let mut perm: Vec<usize> = (0..theta.len()).collect();
        perm.rotate_left((seed % theta.len() as u64) as usize);
        perm.swap(0, theta.len() - 1);
        let pk: Vec<usize> = perm.iter().map(|&i| k[i]).collect();
        let pt: Vec<Filter> = perm.iter().map(|&i| theta[i].clone()).collect();
        let a = end_to_end(&Architecture::stride_one(&k).unwrap(), &theta).unwrap().0;
        let b = end_to_end(&Architecture::stride_one(&pk).unwrap(), &pt).unwrap().0;
        prop_assert!(rel_err(&a, &b) <= 1e-12);
    }

    #[test]
    fn circulant_composition_wraps_convolution(
        a in (1usize..=4).prop_flat_map(coeffs),
        b in (1usize..=4).prop_flat_map(coeffs),
        extra in 0usize..3,
    ) {
        let d0 = a.len() + b.len() - 1 + extra;
        let ca = circulant(&Filter(a.clone()), 1, d0).unwrap();
        let cb = circulant(&Filter(b.clone()), 1, d0).unwrap();
        let mut full = vec![0.0; a.len() + b.len() - 1];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                full[i + j] += x * y;
            }
        }
        let direct = circulant(&Filter(full), 1, d0).unwrap();
        let prod = &cb * &ca;
        prop_assert!(rel_err(prod.as_slice(), direct.as_slice()) <= 1e-12);
    }

    #[test]
    fn circulant_rows_are_shifted_first_row(f in (1usize..=5).prop_flat_map(coeffs), d_extra in 0usize..4) {
        let d0 = f.len() + d_extra;
        let c = circulant(&Filter(f.clone()), 1, d0).unwrap();
        for r in 1..d0 {
            for j in 0..d0 {
                prop_assert_eq!(c[(r, (j + r) % d0)], c[(0, j)]);
            }
        }
    }

    #[test]
    fn two_dimensional_composition(
        k1 in (1usize..=3, 1usize..=3),
        k2 in (1usize..=3, 1usize..=3),
        vals in prop::collection::vec(-2.0f64..2.0, 18),
        pts in prop::collection::vec(-1.2f64..1.2, 4),
    ) {
        let f1 = ArrayD::from_shape_fn(IxDyn(&[k1.0, k1.1]), |i| vals[i[0] * 3 + i[1]]);
        let f2 = ArrayD::from_shape_fn(IxDyn(&[k2.0, k2.1]), |i| vals[9 + i[0] * 3 + i[1]]);
        let shape = vec![k1.0 + k2.0 + 1, k1.1 + k2.1 + 1];
        let t1 = ConvTensorD::new(f1.clone(), shape.clone()).unwrap();
        let t2 = ConvTensorD::new(f2.clone(), t1.output_shape()).unwrap();
        let c = compose_tensors(&t2, &t1).unwrap();

        // composed operator equals sequential application
        let x = ArrayD::from_shape_fn(IxDyn(&shape), |i| ((i[0] * 7 + i[1] * 3) % 5) as f64 - 2.0);
        let seq = t2.apply(&t1.apply(&x).unwrap()).unwrap();
        let one = c.apply(&x).unwrap();
        for (a, b) in seq.iter().zip(one.iter()) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }

        // the bihomogeneous polynomial of the composition is the product
        let ev = |w: &ArrayD<f64>| {
            let (n0, n1) = (w.shape()[0] - 1, w.shape()[1] - 1);
            w.indexed_iter()
                .map(|(i, v)| {
                    v * pts[0].powi((n0 - i[0]) as i32) * pts[1].powi(i[0] as i32)
                        * pts[2].powi((n1 - i[1]) as i32) * pts[3].powi(i[1] as i32)
                })
                .sum::<f64>()
        };
        let lhs = ev(&c.filter);
        let rhs = ev(&f1) * ev(&f2);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
    }
}
