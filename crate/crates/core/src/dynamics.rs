//! Gradient-flow invariants, fiber scales, the Jacobian of `μ` and the NTK.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{LcnError, Result};
use crate::linalg::numerical_rank;
use crate::optim::{gradient_stride_one, leave_one_out_products, QuadLoss};
use crate::poly::{check_filters, convolve, product, Architecture, Filter};
use crate::rootlab::{find_roots, single_linkage, RootTolerance, RootValue};

/// Antisymmetric matrix `δ_ij = ‖w_i‖² - ‖w_j‖²`.
pub fn invariants(theta: &[Filter]) -> DMatrix<f64> {
    let n: Vec<f64> = theta.iter().map(Filter::norm_sq).collect();
    DMatrix::from_fn(n.len(), n.len(), |i, j| n[i] - n[j])
}

/// Rescaling `w_i = κ_i q_i` of a reference factorization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiberScales {
    pub beta: Vec<f64>,
    pub kappa: Vec<f64>,
}

impl FiberScales {
    pub fn apply(&self, q: &[Filter]) -> Vec<Filter> {
        q.iter().zip(&self.kappa).map(|(f, k)| f.scaled(*k)).collect()
    }
}

/// All scalings `κ` with `Π κ_i = 1` whose layer norms `β_i = κ_i²‖q_i‖²`
/// satisfy `β_{i+1} - β_i = δ_i`.
pub fn recover_scales(q: &[Filter], deltas: &[f64]) -> Result<Vec<FiberScales>> {
    let l = q.len();
    if l == 0 || deltas.len() + 1 != l {
        return Err(LcnError::SizeMismatch {
            expected: l.saturating_sub(1),
            got: deltas.len(),
        });
    }
    let norms: Vec<f64> = q.iter().map(Filter::norm_sq).collect();
    if let Some(i) = norms.iter().position(|&n| n == 0.0) {
        return Err(LcnError::ZeroFilter(i + 1));
    }
    let h: f64 = norms.iter().product();
    let mut offsets = vec![0.0];
    for d in deltas {
        offsets.push(offsets.last().unwrap() + d);
    }
    // Π (β + c_i) - H, highest power first
    let mut poly = vec![1.0];
    for &c in &offsets {
        poly = convolve(&poly, &[1.0, c]);
    }
    *poly.last_mut().unwrap() -= h;
    let eval = |b: f64| -> (f64, f64) {
        let (mut p, mut dp) = (0.0, 0.0);
        for &c in &poly {
            dp = dp * b + p;
            p = p * b + c;
        }
        (p, dp)
    };

    let scale = poly.iter().fold(1.0_f64, |m, c| m.max(c.abs()));
    let mut betas: Vec<f64> = Vec::new();
    for r in find_roots(&Filter(poly.clone()))? {
        let RootValue::Finite(z) = r.value else { continue };
        if z.im.abs() > 1e-6 * z.norm().max(1.0) {
            continue;
        }
        let mut b = z.re;
        for _ in 0..8 {
            let (p, dp) = eval(b);
            if dp == 0.0 {
                break;
            }
            b -= p / dp;
        }
        let res = eval(b).0.abs() / (scale * b.abs().max(1.0).powi(l as i32));
        if res > 1e-8 {
            continue;
        }
        if betas.iter().any(|&o| (o - b).abs() <= 1e-10 * b.abs().max(1.0)) {
            continue;
        }
        betas.push(b);
    }
    betas.sort_by(f64::total_cmp);

    let mut out = Vec::new();
    for b1 in betas {
        let beta: Vec<f64> = offsets.iter().map(|c| b1 + c).collect();
        if beta.iter().any(|&b| b <= 1e-12) {
            continue;
        }
        let mag: Vec<f64> = beta.iter().zip(&norms).map(|(b, n)| (b / n).sqrt()).collect();
        for mask in 0u32..(1 << l) {
            if mask.count_ones() % 2 == 1 {
                continue;
            }
            let kappa = mag
                .iter()
                .enumerate()
                .map(|(i, m)| if mask >> i & 1 == 1 { -m } else { *m })
                .collect();
            out.push(FiberScales {
                beta: beta.clone(),
                kappa,
            });
        }
    }
    if out.is_empty() {
        return Err(LcnError::NoAdmissibleSolution(
            "no positive real solution for the layer norms".into(),
        ));
    }
    Ok(out)
}

/// `k × Σk_i` Jacobian of the stride-one parameterization, columns by layer.
pub fn jacobian_mu(theta: &[Filter], arch: &Architecture) -> Result<DMatrix<f64>> {
    check_filters(arch, theta)?;
    arch.require_stride_one()?;
    let k = arch.end_to_end_size();
    let mut j = DMatrix::zeros(k, arch.n_params());
    let mut col = 0;
    for (w, c) in theta.iter().zip(leave_one_out_products(theta)) {
        for a in 0..w.len() {
            for (b, &cb) in c.iter().enumerate() {
                j[(a + b, col)] = cb;
            }
            col += 1;
        }
    }
    Ok(j)
}

pub fn ntk(theta: &[Filter], arch: &Architecture) -> Result<DMatrix<f64>> {
    let j = jacobian_mu(theta, arch)?;
    Ok(&j * j.transpose())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankReport {
    pub numerical: usize,
    pub predicted: usize,
}

pub const RANK_REL_TOL: f64 = 1e-8;

/// Degree of `gcd(w̄/w_1, …, w̄/w_L)` from jointly clustered roots.
pub fn cofactor_gcd_degree(theta: &[Filter], tol: RootTolerance) -> Result<usize> {
    let l = theta.len();
    let mut pts = Vec::new();
    let mut owner = Vec::new();
    let mut inf = vec![0usize; l];
    for (i, w) in theta.iter().enumerate() {
        for r in find_roots(w)? {
            match r.value {
                RootValue::Infinity => inf[i] += 1,
                RootValue::Finite(z) => {
                    pts.push(z);
                    owner.push(i);
                }
            }
        }
    }
    let gcd_mult = |m: &[usize]| -> usize {
        let total: usize = m.iter().sum();
        m.iter().map(|mi| total - mi).min().unwrap_or(0)
    };
    let mut deg = gcd_mult(&inf);
    for g in single_linkage(&pts, tol.tol) {
        let mut m = vec![0usize; l];
        for idx in g {
            m[owner[idx]] += 1;
        }
        deg += gcd_mult(&m);
    }
    Ok(deg)
}

pub fn mu_rank(theta: &[Filter], arch: &Architecture) -> Result<RankReport> {
    for (i, w) in theta.iter().enumerate() {
        if w.is_zero() {
            return Err(LcnError::ZeroFilter(i + 1));
        }
    }
    let j = jacobian_mu(theta, arch)?;
    let g = cofactor_gcd_degree(theta, RootTolerance::default())?;
    Ok(RankReport {
        numerical: numerical_rank(&j, RANK_REL_TOL),
        predicted: arch.end_to_end_size() - g,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Integrator {
    Euler,
    Rk4,
}

fn flow_field(theta: &[Filter], loss: &QuadLoss) -> Vec<Filter> {
    let w = product(theta);
    let g = loss.gradient(&w);
    gradient_stride_one(theta, &g)
}

fn axpy(theta: &[Filter], a: f64, d: &[Filter]) -> Vec<Filter> {
    theta
        .iter()
        .zip(d)
        .map(|(w, g)| Filter(w.iter().zip(g.iter()).map(|(x, y)| x - a * y).collect()))
        .collect()
}

/// Integrates `θ̇ = -∇L(θ)` with a fixed step.
pub fn integrate_flow(
    arch: &Architecture,
    loss: &QuadLoss,
    theta0: &[Filter],
    h: f64,
    steps: usize,
    method: Integrator,
) -> Result<Vec<Filter>> {
    check_filters(arch, theta0)?;
    arch.require_stride_one()?;
    let mut theta = theta0.to_vec();
    for _ in 0..steps {
        theta = match method {
            Integrator::Euler => axpy(&theta, h, &flow_field(&theta, loss)),
            Integrator::Rk4 => {
                let k1 = flow_field(&theta, loss);
                let k2 = flow_field(&axpy(&theta, h / 2.0, &k1), loss);
                let k3 = flow_field(&axpy(&theta, h / 2.0, &k2), loss);
                let k4 = flow_field(&axpy(&theta, h, &k3), loss);
                let comb: Vec<Filter> = (0..theta.len())
                    .map(|l| {
                        Filter(
                            (0..theta[l].len())
                                .map(|a| (k1[l][a] + 2.0 * k2[l][a] + 2.0 * k3[l][a] + k4[l][a]) / 6.0)
                                .collect(),
                        )
                    })
                    .collect();
                axpy(&theta, h, &comb)
            }
        };
    }
    Ok(theta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f(v: &[f64]) -> Filter {
        Filter::from_slice(v)
    }

    #[test]
    fn invariant_examples() {
        let d = invariants(&[f(&[1.0, 0.0]), f(&[0.0, 1.0]), f(&[0.6, 0.8])]);
        assert!(d.iter().all(|v| v.abs() < 1e-15));
        let d = invariants(&[f(&[1.0, 6.0, 11.0, 6.0]), f(&[4.0, 1.0])]);
        assert_eq!(d[(0, 1)], 177.0);
        assert_eq!(d[(1, 0)], -177.0);
    }

    #[test]
    fn recover_two_layer_closed_form() {
        let q = [f(&[1.0, 2.0]), f(&[3.0, -1.0, 0.5])];
        let delta = 4.0;
        let sols = recover_scales(&q, &[delta]).unwrap();
        let h = q[0].norm_sq() * q[1].norm_sq();
        let b = (-delta + (delta * delta + 4.0 * h).sqrt()) / 2.0;
        assert_eq!(sols.len(), 2);
        for s in &sols {
            assert!((s.beta[0] - b).abs() < 1e-12 * b);
            assert!((s.kappa[0] * s.kappa[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn recover_published_kappa() {
        let q = [f(&[2.0, 0.0, 5.0, 0.0]), f(&[1.0, 0.0])];
        let delta = 17.0 - 194.0;
        let sols = recover_scales(&q, &[delta]).unwrap();
        let expect = (0.5 * (31445f64.sqrt() - 177.0)).sqrt();
        assert!(sols.iter().any(|s| (s.kappa[1] - expect).abs() < 1e-12 && s.kappa[0] > 0.0));
        assert!((expect - 0.4045867).abs() < 1e-7);
    }

    #[test]
    fn recover_balanced_units() {
        let q = [f(&[1.0, 0.0]), f(&[0.0, 1.0]), f(&[0.6, 0.8])];
        let sols = recover_scales(&q, &[0.0, 0.0]).unwrap();
        assert_eq!(sols.len(), 4);
        for s in sols {
            assert!(s.beta.iter().all(|b| (b - 1.0).abs() < 1e-12));
            assert!(s.kappa.iter().all(|k| (k.abs() - 1.0).abs() < 1e-12));
            assert!((s.kappa.iter().product::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn recover_rejects_inconsistent() {
        assert!(recover_scales(&[f(&[1.0])], &[1.0]).is_err());
        assert!(recover_scales(&[f(&[0.0]), f(&[1.0])], &[1.0]).is_err());
    }

    #[test]
    fn jacobian_quadratic_times_linear() {
        let arch = Architecture::stride_one(&[3, 2]).unwrap();
        let (a2, a1, a0, b1, b0) = (1.5, -0.5, 2.0, 0.7, 3.0);
        let theta = [f(&[a2, a1, a0]), f(&[b1, b0])];
        let j = jacobian_mu(&theta, &arch).unwrap();
        let expect = DMatrix::from_row_slice(
            4,
            5,
            &[
                b1, 0., 0., a2, 0., //
                b0, b1, 0., a1, a2, //
                0., b0, b1, a0, a1, //
                0., 0., b0, 0., a0,
            ],
        );
        assert_eq!(j, expect);
        let kb = DMatrix::from_row_slice(
            4,
            4,
            &[
                b1 * b1, b0 * b1, 0., 0., //
                b0 * b1, b0 * b0 + b1 * b1, b0 * b1, 0., //
                0., b0 * b1, b0 * b0 + b1 * b1, b0 * b1, //
                0., 0., b0 * b1, b0 * b0,
            ],
        );
        let ka = DMatrix::from_row_slice(
            4,
            4,
            &[
                a2 * a2, a1 * a2, a0 * a2, 0., //
                a1 * a2, a1 * a1 + a2 * a2, a0 * a1 + a1 * a2, a0 * a2, //
                a0 * a2, a0 * a1 + a1 * a2, a0 * a0 + a1 * a1, a0 * a1, //
                0., a0 * a2, a0 * a1, a0 * a0,
            ],
        );
        let k = ntk(&theta, &arch).unwrap();
        assert!((k - kb - ka).amax() < 1e-14);
    }

    #[test]
    fn single_layer_jacobian_is_identity() {
        let arch = Architecture::stride_one(&[3]).unwrap();
        let j = jacobian_mu(&[f(&[1.0, 2.0, 3.0])], &arch).unwrap();
        assert_eq!(j, DMatrix::identity(3, 3));
    }

    #[test]
    fn rank_law_examples() {
        let arch = Architecture::stride_one(&[2, 2]).unwrap();
        let r = mu_rank(&[f(&[1.0, 1.0]), f(&[1.0, 1.0])], &arch).unwrap();
        assert_eq!(r, RankReport { numerical: 2, predicted: 2 });
        let r = mu_rank(&[f(&[1.0, 1.0]), f(&[1.0, -2.0])], &arch).unwrap();
        assert_eq!(r, RankReport { numerical: 3, predicted: 3 });
        let arch = Architecture::stride_one(&[3, 2]).unwrap();
        let r = mu_rank(&[f(&[1.0, 2.0, 1.0]), f(&[1.0, 1.0])], &arch).unwrap();
        assert_eq!(r, RankReport { numerical: 3, predicted: 3 });
        assert!(mu_rank(&[f(&[0.0, 0.0, 0.0]), f(&[1.0, 1.0])], &arch).is_err());
    }

    #[test]
    fn rk4_conserves_invariants() {
        let arch = Architecture::stride_one(&[2, 2]).unwrap();
        let loss = QuadLoss::identity(f(&[1.0, 0.2, 1.0]));
        let theta0 = [f(&[0.5, -1.0]), f(&[1.5, 0.3])];
        let d0 = invariants(&theta0)[(0, 1)];
        let t = integrate_flow(&arch, &loss, &theta0, 1e-3, 2000, Integrator::Rk4).unwrap();
        assert!((invariants(&t)[(0, 1)] - d0).abs() < 1e-10);
    }
}
