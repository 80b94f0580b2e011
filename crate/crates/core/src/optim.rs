//! Square losses in filter coordinates and gradient-descent training.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{LcnError, Result};
use crate::poly::{check_filters, compose_filters, convolve, toeplitz, Architecture, Filter};
use crate::rootlab::{classify_roots, find_roots, ProjRoot, RootTolerance, Rrmp};

pub const DIVERGENCE_LOSS: f64 = 1e12;

/// Per-run random stream derived from a master seed.
pub fn run_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        if x.ncols() != y.ncols() || x.ncols() == 0 {
            return Err(LcnError::SizeMismatch {
                expected: x.ncols(),
                got: y.ncols(),
            });
        }
        Ok(Dataset { x, y })
    }

    /// I.i.d. standard normal inputs and outputs.
    pub fn sample_normal<R: Rng>(d0: usize, d_out: usize, n: usize, rng: &mut R) -> Self {
        let x = DMatrix::from_fn(d0, n, |_, _| rng.sample(StandardNormal));
        let y = DMatrix::from_fn(d_out, n, |_, _| rng.sample(StandardNormal));
        Dataset { x, y }
    }

    pub fn gram(&self) -> DMatrix<f64> {
        &self.x * self.x.transpose()
    }
}

/// `U = Y Xᵀ (X Xᵀ)⁻¹`.
pub fn unconstrained_opt(data: &Dataset) -> Result<DMatrix<f64>> {
    let chol = data
        .gram()
        .cholesky()
        .ok_or_else(|| LcnError::Singular("X Xᵀ".into()))?;
    let xyt = &data.x * data.y.transpose();
    Ok(chol.solve(&xyt).transpose())
}

/// Shift-sum `τ(M)_{ij} = Σ_m M_{i+sm, j+sm}`; cyclic over `d_0` shifts in circulant mode.
pub fn tau(m: &DMatrix<f64>, k: usize, s: usize, d_out: usize, circulant: bool) -> Result<DMatrix<f64>> {
    let d0 = m.nrows();
    if m.ncols() != d0 || k == 0 || s == 0 || k > d0 {
        return Err(LcnError::InvalidArchitecture(format!(
            "τ with k={k}, s={s} on a {}×{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if circulant {
        return Ok(DMatrix::from_fn(k, k, |i, j| {
            (0..d0).map(|r| m[((i + r * s) % d0, (j + r * s) % d0)]).sum()
        }));
    }
    if d_out == 0 || k - 1 + s * (d_out - 1) > d0 - 1 {
        return Err(LcnError::InvalidArchitecture(format!(
            "τ shifts exceed d0={d0} with k={k}, s={s}, d_L={d_out}"
        )));
    }
    Ok(DMatrix::from_fn(k, k, |i, j| {
        (0..d_out).map(|r| m[(i + s * r, j + s * r)]).sum()
    }))
}

/// Weights `i!(n-i)!/n!` of the Bombieri inner product on forms of degree `n`.
pub fn bombieri_weights(n: usize) -> Vec<f64> {
    let mut binom = vec![1.0_f64; n + 1];
    for i in 1..=n {
        binom[i] = binom[i - 1] * (n + 1 - i) as f64 / i as f64;
    }
    binom.iter().map(|b| 1.0 / b).collect()
}

pub fn bombieri(p: &Filter, q: &Filter) -> Result<f64> {
    if p.len() != q.len() {
        return Err(LcnError::DegreeMismatch {
            expected: p.degree(),
            got: q.degree(),
        });
    }
    let w = bombieri_weights(p.degree());
    Ok(p.iter().zip(q.iter()).zip(&w).map(|((a, b), c)| a * b * c).sum())
}

/// `(w̄ - u)ᵀ Σ (w̄ - u)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadLoss {
    pub sigma: DMatrix<f64>,
    pub u: Filter,
}

impl QuadLoss {
    pub fn new(sigma: DMatrix<f64>, u: Filter) -> Result<Self> {
        let k = u.len();
        if sigma.nrows() != k || sigma.ncols() != k {
            return Err(LcnError::SizeMismatch {
                expected: k,
                got: sigma.nrows(),
            });
        }
        let asym = (&sigma - sigma.transpose()).amax();
        if asym > 1e-10 * sigma.amax().max(1.0) {
            return Err(LcnError::NotPositiveDefinite("not symmetric".into()));
        }
        if sigma.clone().cholesky().is_none() {
            return Err(LcnError::NotPositiveDefinite("Cholesky failed".into()));
        }
        Ok(QuadLoss { sigma, u })
    }

    pub fn identity(u: Filter) -> Self {
        QuadLoss {
            sigma: DMatrix::identity(u.len(), u.len()),
            u,
        }
    }

    pub fn bombieri(u: Filter) -> Self {
        let w = bombieri_weights(u.degree());
        QuadLoss {
            sigma: DMatrix::from_diagonal(&DVector::from_vec(w)),
            u,
        }
    }

    /// Filter-space loss of `‖W̄X - Y‖²` and its additive constant.
    pub fn from_data(data: &Dataset, arch: &Architecture) -> Result<(QuadLoss, f64)> {
        let k = arch.end_to_end_size();
        let s = arch.end_to_end_stride();
        let d_out = *arch.d.last().unwrap();
        if data.x.nrows() != arch.d[0] || data.y.nrows() != d_out {
            return Err(LcnError::SizeMismatch {
                expected: arch.d[0],
                got: data.x.nrows(),
            });
        }
        let gram = data.gram();
        let sigma = tau(&gram, k, s, d_out, false)?;
        let yxt = &data.y * data.x.transpose();
        let b = DVector::from_fn(k, |i, _| (0..d_out).map(|m| yxt[(m, i + s * m)]).sum());
        let chol = sigma
            .clone()
            .cholesky()
            .ok_or_else(|| LcnError::NotPositiveDefinite("τ(X Xᵀ)".into()))?;
        let u = chol.solve(&b);
        let offset = data.y.norm_squared() - u.dot(&(&sigma * &u));
        Ok((
            QuadLoss {
                sigma,
                u: Filter(u.iter().copied().collect()),
            },
            offset,
        ))
    }

    pub fn dim(&self) -> usize {
        self.u.len()
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        let k = self.dim();
        let mut acc = 0.0;
        for i in 0..k {
            let ri = w[i] - self.u[i];
            let mut row = 0.0;
            for j in 0..k {
                row += self.sigma[(i, j)] * (w[j] - self.u[j]);
            }
            acc += ri * row;
        }
        acc
    }

    /// Writes `2 Σ (w̄ - u)` into `g` and returns the loss.
    pub fn value_and_grad(&self, w: &[f64], g: &mut [f64]) -> f64 {
        let k = self.dim();
        let mut acc = 0.0;
        for i in 0..k {
            let mut row = 0.0;
            for j in 0..k {
                row += self.sigma[(i, j)] * (w[j] - self.u[j]);
            }
            g[i] = 2.0 * row;
            acc += (w[i] - self.u[i]) * row;
        }
        acc
    }

    pub fn gradient(&self, w: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.dim()];
        self.value_and_grad(w, &mut g);
        g
    }
}

/// `‖W̄X - Y‖²` evaluated with materialized convolutional matrices.
pub fn matrix_loss(data: &Dataset, arch: &Architecture, theta: &[Filter]) -> Result<f64> {
    let w = end_to_end_matrix(arch, theta)?;
    Ok((w * &data.x - &data.y).norm_squared())
}

pub fn end_to_end_matrix(arch: &Architecture, theta: &[Filter]) -> Result<DMatrix<f64>> {
    check_filters(arch, theta)?;
    let mut acc = DMatrix::identity(arch.d[0], arch.d[0]);
    for l in 0..arch.layers() {
        acc = toeplitz(&theta[l], arch.s[l], arch.d[l])?.to_dense() * acc;
    }
    Ok(acc)
}

/// Per-layer gradients for a cotangent `grad_l` at the end-to-end filter.
///
/// Stride one uses correlation with the product of the other filters (the
/// adjoint-filter form); other strides go through convolutional matrices.
pub fn lcn_gradient(theta: &[Filter], grad_l: &[f64], arch: &Architecture) -> Result<Vec<Filter>> {
    check_filters(arch, theta)?;
    if grad_l.len() != arch.end_to_end_size() {
        return Err(LcnError::SizeMismatch {
            expected: arch.end_to_end_size(),
            got: grad_l.len(),
        });
    }
    if arch.all_stride_one() {
        Ok(gradient_stride_one(theta, grad_l))
    } else {
        lcn_gradient_matrix(theta, grad_l, arch)
    }
}

/// Products of all filters except layer `i`, for every `i` (stride one).
pub fn leave_one_out_products(theta: &[Filter]) -> Vec<Vec<f64>> {
    let l = theta.len();
    let mut prefix = vec![vec![1.0]];
    for i in 0..l - 1 {
        let next = convolve(&prefix[i], &theta[i]);
        prefix.push(next);
    }
    let mut out = vec![Vec::new(); l];
    let mut suffix = vec![1.0];
    for i in (0..l).rev() {
        out[i] = convolve(&prefix[i], &suffix);
        suffix = convolve(&theta[i], &suffix);
    }
    out
}

fn correlate_into(g: &[f64], c: &[f64], out: &mut [f64]) {
    for (a, o) in out.iter_mut().enumerate() {
        *o = c.iter().enumerate().map(|(b, cb)| g[a + b] * cb).sum();
    }
}

pub(crate) fn gradient_stride_one(theta: &[Filter], g: &[f64]) -> Vec<Filter> {
    leave_one_out_products(theta)
        .iter()
        .zip(theta)
        .map(|(c, w)| {
            let mut out = vec![0.0; w.len()];
            correlate_into(g, c, &mut out);
            Filter(out)
        })
        .collect()
}

/// Gradient via `∂/∂W_l = Aᵀ E Bᵀ` with `E = e_0 gᵀ` and `A`, `B` the
/// products of the layers after and before `l`.
pub fn lcn_gradient_matrix(theta: &[Filter], grad_l: &[f64], arch: &Architecture) -> Result<Vec<Filter>> {
    check_filters(arch, theta)?;
    let n = arch.layers();
    let mats: Vec<DMatrix<f64>> = (0..n)
        .map(|l| toeplitz(&theta[l], arch.s[l], arch.d[l]).map(|m| m.to_dense()))
        .collect::<Result<_>>()?;
    let d_out = *arch.d.last().unwrap();
    let mut e = DMatrix::zeros(d_out, arch.d[0]);
    for (j, &gj) in grad_l.iter().enumerate() {
        e[(0, j)] = gj;
    }
    let mut grads = Vec::with_capacity(n);
    for l in 0..n {
        let mut after = DMatrix::identity(arch.d[l + 1], arch.d[l + 1]);
        for m in mats.iter().skip(l + 1) {
            after = m * after;
        }
        let mut before = DMatrix::identity(arch.d[0], arch.d[0]);
        for m in mats.iter().take(l) {
            before = m * before;
        }
        let gw = after.transpose() * &e * before.transpose();
        let sl = arch.s[l];
        let grad: Vec<f64> = (0..arch.k[l])
            .map(|a| (0..arch.d[l + 1]).map(|b| gw[(b, a + b * sl)]).sum())
            .collect();
        grads.push(Filter(grad));
    }
    Ok(grads)
}

/// End-to-end filter of arbitrary strides.
pub fn mu(arch: &Architecture, theta: &[Filter]) -> Filter {
    let mut acc = theta[0].clone();
    let mut stride = arch.s[0];
    for l in 1..theta.len() {
        acc = compose_filters(&theta[l], stride, &acc);
        stride *= arch.s[l];
    }
    acc
}

/// Loss and per-layer gradient of `ℓ ∘ μ`.
pub fn loss_and_grad(arch: &Architecture, loss: &QuadLoss, theta: &[Filter]) -> Result<(f64, Vec<Filter>)> {
    let w = mu(arch, theta);
    let mut g = vec![0.0; w.len()];
    let v = loss.value_and_grad(&w, &mut g);
    Ok((v, lcn_gradient(theta, &g, arch)?))
}

pub fn grad_norm_sq(grads: &[Filter]) -> f64 {
    grads.iter().map(|g| g.norm_sq()).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitDist {
    StandardNormal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub step: f64,
    pub grad_tol: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub init: InitDist,
    pub trace_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            step: 0.01,
            grad_tol: 1e-14,
            max_iters: 15_000,
            seed: 0,
            init: InitDist::StandardNormal,
            trace_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0) || !(self.grad_tol > 0.0) || self.max_iters == 0 {
            return Err(LcnError::Parse(
                "step, grad_tol and max_iters must be positive".into(),
            ));
        }
        Ok(())
    }
}

pub fn init_filters<R: Rng>(arch: &Architecture, init: InitDist, rng: &mut R) -> Vec<Filter> {
    match init {
        InitDist::StandardNormal => arch
            .k
            .iter()
            .map(|&k| Filter((0..k).map(|_| rng.sample(StandardNormal)).collect()))
            .collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIters,
    Diverged,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iter: usize,
    pub loss: f64,
    pub grad_norm_sq: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub config: TrainConfig,
    pub theta_init: Vec<Filter>,
    pub theta: Vec<Filter>,
    pub end_to_end: Filter,
    pub iterations: usize,
    pub converged: bool,
    pub stop: StopReason,
    pub final_loss: f64,
    pub final_grad_norm_sq: f64,
    pub loss_trace: Vec<TracePoint>,
    pub invariants_start: Vec<f64>,
    pub invariants_end: Vec<f64>,
    pub rrmp: Option<Rrmp>,
    pub filter_rrmps: Vec<Option<Rrmp>>,
}

/// `δ_{i,i+1} = ‖w_i‖² - ‖w_{i+1}‖²`.
pub fn consecutive_invariants(theta: &[Filter]) -> Vec<f64> {
    theta.windows(2).map(|w| w[0].norm_sq() - w[1].norm_sq()).collect()
}

/// Rrmp of `Π w_i` computed from the union of the factors' roots.
pub fn product_rrmp(theta: &[Filter], tol: RootTolerance) -> Option<Rrmp> {
    let mut roots: Vec<ProjRoot> = Vec::new();
    for w in theta {
        roots.extend(find_roots(w).ok()?);
    }
    Some(classify_roots(&roots, tol))
}

pub fn gd_train(arch: &Architecture, loss: &QuadLoss, cfg: &TrainConfig) -> Result<TrainRun> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let theta0 = init_filters(arch, cfg.init, &mut rng);
    gd_train_from(arch, loss, cfg, theta0)
}

pub fn gd_train_from(
    arch: &Architecture,
    loss: &QuadLoss,
    cfg: &TrainConfig,
    theta0: Vec<Filter>,
) -> Result<TrainRun> {
    cfg.validate()?;
    arch.require_stride_one()?;
    check_filters(arch, &theta0)?;
    if loss.dim() != arch.end_to_end_size() {
        return Err(LcnError::SizeMismatch {
            expected: arch.end_to_end_size(),
            got: loss.dim(),
        });
    }
    let k = loss.dim();
    let mut theta = theta0.clone();
    let mut g = vec![0.0; k];
    let mut trace = Vec::new();
    let mut stop = StopReason::MaxIters;
    let mut iters = cfg.max_iters;
    let mut last = (f64::NAN, f64::NAN);
    let every = cfg.trace_every.max(1);

    for it in 0..=cfg.max_iters {
        let w = crate::poly::product(&theta);
        let value = loss.value_and_grad(&w, &mut g);
        let grads = gradient_stride_one(&theta, &g);
        let gn = grad_norm_sq(&grads);
        last = (value, gn);
        if it % every == 0 {
            trace.push(TracePoint {
                iter: it,
                loss: value,
                grad_norm_sq: gn,
            });
        }
        if !value.is_finite() || !gn.is_finite() || value > DIVERGENCE_LOSS {
            stop = StopReason::Diverged;
            iters = it;
            break;
        }
        if gn <= cfg.grad_tol {
            stop = StopReason::Converged;
            iters = it;
            break;
        }
        if it == cfg.max_iters {
            break;
        }
        for (w, gw) in theta.iter_mut().zip(&grads) {
            for (a, b) in w.0.iter_mut().zip(gw.iter()) {
                *a -= cfg.step * b;
            }
        }
    }
    if trace.last().map(|t| t.iter) != Some(iters) {
        trace.push(TracePoint {
            iter: iters,
            loss: last.0,
            grad_norm_sq: last.1,
        });
    }

    let tol = RootTolerance::default();
    let finite = theta.iter().all(|w| w.iter().all(|c| c.is_finite()));
    let (rrmp, filter_rrmps) = if finite {
        (
            product_rrmp(&theta, tol),
            theta
                .iter()
                .map(|w| find_roots(w).ok().map(|r| classify_roots(&r, tol)))
                .collect(),
        )
    } else {
        (None, vec![None; theta.len()])
    };
    Ok(TrainRun {
        config: cfg.clone(),
        invariants_start: consecutive_invariants(&theta0),
        invariants_end: consecutive_invariants(&theta),
        end_to_end: crate::poly::product(&theta),
        theta_init: theta0,
        theta,
        iterations: iters,
        converged: stop == StopReason::Converged,
        stop,
        final_loss: last.0,
        final_grad_norm_sq: last.1,
        loss_trace: trace,
        rrmp,
        filter_rrmps,
    })
}

/// Loss trace as CSV with columns `iteration,loss,grad_norm_sq`.
pub fn trace_csv(run: &TrainRun) -> String {
    let mut s = String::from("iteration,loss,grad_norm_sq\n");
    for t in &run.loss_trace {
        s.push_str(&format!(
            "{},{},{}\n",
            t.iter,
            crate::format::fmt_f64(t.loss),
            crate::format::fmt_f64(t.grad_norm_sq)
        ));
    }
    s
}
