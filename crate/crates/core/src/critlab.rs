//! Critical points of quadratic losses on multiple root loci.
//!
//! A locus `Δ_λ` is searched one real type at a time: each part of `λ` is
//! either a power of a real linear form `cos φ·x + sin φ·y` or, for a pair of
//! equal parts, a power of a conjugate quadratic `(x + a·y)² + b²·y²`. A single
//! scale multiplies the product. Critical points of the pulled-back loss are
//! found with a damped Newton solve on the gradient, so saddles and maxima are
//! found as well as minima.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LcnError, Result};
use crate::linalg::{numerical_rank, sym_eigenvalues};
use crate::optim::{
    gd_train, grad_norm_sq, loss_and_grad, mu, product_rrmp, run_rng, QuadLoss, TrainConfig,
};
use crate::poly::{convolve, Architecture, Filter};
use crate::rootlab::{
    classify_rrmp, find_roots, is_compatible, Partition, RootTolerance, RootValue, Rrmp,
};

pub const DEFAULT_STARTS: usize = 200;
pub const DEDUP_TOL: f64 = 1e-4;
pub const CRITICAL_GRAD_SQ: f64 = 1e-10;
const FIRST_ORDER_TOL: f64 = 1e-8;
const DEGENERATE_REL: f64 = 1e-6;
const RANK_REL: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CritKind {
    Min,
    Saddle,
    Max,
    Degenerate,
}

impl fmt::Display for CritKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CritKind::Min => "MIN",
            CritKind::Saddle => "SADDLE",
            CritKind::Max => "MAX",
            CritKind::Degenerate => "DEGENERATE",
        };
        f.write_str(s)
    }
}

/// Signature of a symmetric matrix with a relative zero band.
pub fn hessian_kind(h: &DMatrix<f64>) -> CritKind {
    let e = sym_eigenvalues(h);
    let scale = e.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let zero = DEGENERATE_REL * scale;
    if e.iter().any(|v| v.abs() <= zero) {
        CritKind::Degenerate
    } else if e.iter().all(|&v| v > 0.0) {
        CritKind::Min
    } else if e.iter().all(|&v| v < 0.0) {
        CritKind::Max
    } else {
        CritKind::Saddle
    }
}

/// Sign branch of a point on the cone `B² = 4AC`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConeBranch {
    NonNegative,
    NonPositive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CritPoint {
    pub w: Filter,
    pub loss: f64,
    pub rrmp: Option<Rrmp>,
    pub kind: CritKind,
    pub hits: usize,
    /// First-order residual at the stored point.
    pub residual: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multiplier: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub branch: Option<ConeBranch>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CritReport {
    pub points: Vec<CritPoint>,
    pub starts: usize,
    pub converged: usize,
    pub notes: Vec<String>,
}

impl CritReport {
    pub fn count(&self, kind: CritKind) -> usize {
        self.points.iter().filter(|p| p.kind == kind).count()
    }

    /// Index of a point matching `w` componentwise within `tol`.
    pub fn find(&self, w: &[f64], tol: f64) -> Option<usize> {
        self.points.iter().position(|p| {
            p.w.len() == w.len() && p.w.iter().zip(w).all(|(a, b)| (a - b).abs() <= tol)
        })
    }
}

// ---------------------------------------------------------------------------
// dedup

/// Groups filters that agree entrywise within `tol·max(max_j |w_jk|, 1)`.
///
/// Returns one representative index per group (the first member) and the
/// group sizes, in order of first appearance.
pub fn dedup_filters(ws: &[Filter], tol: f64) -> Vec<(usize, usize)> {
    if ws.is_empty() {
        return Vec::new();
    }
    let k = ws[0].len();
    let scale: Vec<f64> = (0..k)
        .map(|c| ws.iter().fold(1.0f64, |m, w| m.max(w[c].abs())))
        .collect();
    let mut groups: Vec<(usize, usize)> = Vec::new();
    for (i, w) in ws.iter().enumerate() {
        let hit = groups.iter_mut().find(|(r, _)| {
            (0..k).all(|c| (ws[*r][c] - w[c]).abs() <= tol * scale[c])
        });
        match hit {
            Some(g) => g.1 += 1,
            None => groups.push((i, 1)),
        }
    }
    groups
}

// ---------------------------------------------------------------------------
// solution classification

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionReport {
    pub rrmp: Rrmp,
    pub partition: Partition,
    pub compatible: bool,
    pub filter_repeated: Vec<bool>,
    pub any_filter_repeated: bool,
    pub loss: f64,
    pub grad_norm_sq: f64,
    pub is_global_candidate: bool,
}

/// Classifies an approximately critical parameter.
pub fn classify_solution(
    arch: &Architecture,
    loss: &QuadLoss,
    theta: &[Filter],
    tol: RootTolerance,
) -> Result<SolutionReport> {
    let (value, grads) = loss_and_grad(arch, loss, theta)?;
    let g2 = grad_norm_sq(&grads);
    if !(g2 <= CRITICAL_GRAD_SQ) {
        return Err(LcnError::NotCritical(g2));
    }
    let w = mu(arch, theta);
    let rrmp = if arch.all_stride_one() {
        product_rrmp(theta, tol).ok_or(LcnError::ZeroPolynomial)?
    } else {
        classify_rrmp(&w, tol)?
    };
    let compatible = arch.all_stride_one() && is_compatible(&rrmp, arch)?;
    let mut filter_repeated = Vec::with_capacity(theta.len());
    for f in theta {
        let repeated = if f.len() <= 2 {
            false
        } else {
            !classify_rrmp(f, tol)?.is_simple()
        };
        filter_repeated.push(repeated);
    }
    let u = &loss.u;
    let scale = loss.value(&vec![0.0; u.len()]).max(1.0);
    Ok(SolutionReport {
        partition: rrmp.partition(),
        rrmp,
        compatible,
        any_filter_repeated: filter_repeated.iter().any(|&b| b),
        filter_repeated,
        loss: value,
        grad_norm_sq: g2,
        is_global_candidate: value <= 1e-8 * scale,
    })
}

// ---------------------------------------------------------------------------
// ED degrees

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdNorm {
    #[serde(alias = "euclidean")]
    Generic,
    Bombieri,
}

impl std::str::FromStr for EdNorm {
    type Err = LcnError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "generic" | "euclidean" => Ok(EdNorm::Generic),
            "bombieri" => Ok(EdNorm::Bombieri),
            _ => Err(LcnError::Parse(format!("unknown norm {s:?}"))),
        }
    }
}

/// ED degrees of multiple root loci.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdDegreeTable {
    entries: BTreeMap<(usize, Vec<usize>, EdNorm), usize>,
}

impl Default for EdDegreeTable {
    fn default() -> Self {
        let mut entries = BTreeMap::new();
        let quartic: [(&[usize], usize, usize); 5] = [
            (&[1, 1, 1, 1], 1, 1),
            (&[2, 1, 1], 10, 4),
            (&[2, 2], 13, 7),
            (&[3, 1], 12, 4),
            (&[4], 10, 4),
        ];
        for (parts, g, b) in quartic {
            entries.insert((4, parts.to_vec(), EdNorm::Generic), g);
            entries.insert((4, parts.to_vec(), EdNorm::Bombieri), b);
        }
        EdDegreeTable { entries }
    }
}

impl EdDegreeTable {
    /// Table lookup, falling back to the closed forms for `(α,1,…,1)`.
    pub fn get(&self, lambda: &Partition, norm: EdNorm) -> Result<usize> {
        let n = lambda.degree();
        if let Some(&v) = self.entries.get(&(n, lambda.0.clone(), norm)) {
            return Ok(v);
        }
        if lambda.is_trivial() {
            return Ok(1);
        }
        let alpha = lambda.0[0];
        if lambda.0[1..].iter().all(|&p| p == 1) {
            return Ok(match norm {
                EdNorm::Generic => (2 * alpha - 1) * n - 2 * (alpha - 1) * (alpha - 1),
                EdNorm::Bombieri => n,
            });
        }
        Err(LcnError::UncoveredEdDegree {
            degree: n,
            partition: lambda.to_string(),
        })
    }
}

/// All partitions of `n`, parts descending.
pub fn partitions(n: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if n == 0 {
            out.push(cur.clone());
            return;
        }
        for p in (1..=n.min(max)).rev() {
            cur.push(p);
            rec(n - p, p, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, n, &mut Vec::new(), &mut out);
    out
}

/// Every rrmp of degree `n`.
pub fn all_rrmps(n: usize) -> Vec<Rrmp> {
    let mut out = Vec::new();
    for real in (0..=n).rev() {
        if (n - real) % 2 != 0 {
            continue;
        }
        for rho in partitions(real) {
            for gamma in partitions((n - real) / 2) {
                out.push(Rrmp::new(rho.clone(), gamma));
            }
        }
    }
    out
}

/// `1 +` the ED degrees of the non-trivial loci reachable by compatible rrmps.
pub fn ed_bound(arch: &Architecture, norm: EdNorm) -> Result<usize> {
    arch.require_stride_one()?;
    let table = EdDegreeTable::default();
    let mut lambdas: Vec<Partition> = Vec::new();
    for r in all_rrmps(arch.degree()) {
        let lam = r.partition();
        if !lam.is_trivial() && is_compatible(&r, arch)? && !lambdas.contains(&lam) {
            lambdas.push(lam);
        }
    }
    let mut total = 1;
    for lam in &lambdas {
        total += table.get(lam, norm)?;
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// stratum parameterization

/// A real type of a locus: powers of real linear forms and of conjugate
/// quadratics.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RealType {
    pub linear: Vec<usize>,
    pub quadratic: Vec<usize>,
}

impl RealType {
    pub fn n_params(&self) -> usize {
        1 + self.linear.len() + 2 * self.quadratic.len()
    }

    pub fn rrmp(&self) -> Rrmp {
        Rrmp::new(self.linear.clone(), self.quadratic.clone())
    }
}

/// Ways of pairing equal parts of `λ` into conjugate quadratics.
pub fn real_types(lambda: &Partition) -> Vec<RealType> {
    let mut counts: Vec<(usize, usize)> = Vec::new();
    for &p in &lambda.0 {
        match counts.iter_mut().find(|(v, _)| *v == p) {
            Some(c) => c.1 += 1,
            None => counts.push((p, 1)),
        }
    }
    let mut out = vec![RealType {
        linear: Vec::new(),
        quadratic: Vec::new(),
    }];
    for &(v, c) in &counts {
        let mut next = Vec::new();
        for t in &out {
            for pairs in 0..=c / 2 {
                let mut t2 = t.clone();
                t2.linear.extend(std::iter::repeat_n(v, c - 2 * pairs));
                t2.quadratic.extend(std::iter::repeat_n(v, pairs));
                next.push(t2);
            }
        }
        out = next;
    }
    out
}

fn poly_pow(base: &[f64], m: usize) -> Vec<f64> {
    let mut out = vec![1.0];
    for _ in 0..m {
        out = convolve(&out, base);
    }
    out
}

/// Factor bases and their parameter derivatives at `p`.
fn factor_bases(t: &RealType, p: &[f64]) -> Vec<(Vec<f64>, usize, Vec<Vec<f64>>)> {
    let mut out = Vec::new();
    let mut i = 1;
    for &m in &t.linear {
        let (s, c) = p[i].sin_cos();
        out.push((vec![c, s], m, vec![vec![-s, c]]));
        i += 1;
    }
    for &m in &t.quadratic {
        let (a, b) = (p[i], p[i + 1]);
        out.push((
            vec![1.0, 2.0 * a, a * a + b * b],
            m,
            vec![vec![0.0, 2.0, 2.0 * a], vec![0.0, 0.0, 2.0 * b]],
        ));
        i += 2;
    }
    out
}

/// `w̄(p)` and its Jacobian (one column per parameter).
fn stratum_map(t: &RealType, p: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let bases = factor_bases(t, p);
    let pows: Vec<Vec<f64>> = bases.iter().map(|(b, m, _)| poly_pow(b, *m)).collect();
    let shape = pows.iter().fold(vec![1.0], |acc, q| convolve(&acc, q));
    let n = shape.len();
    let s = p[0];
    let w: Vec<f64> = shape.iter().map(|v| s * v).collect();
    let mut jac = DMatrix::zeros(n, t.n_params());
    for (r, v) in shape.iter().enumerate() {
        jac[(r, 0)] = *v;
    }
    let mut col = 1;
    for (i, (b, m, db)) in bases.iter().enumerate() {
        let others = pows
            .iter()
            .enumerate()
            .filter(|(l, _)| *l != i)
            .fold(vec![1.0], |acc, (_, q)| convolve(&acc, q));
        let lower = convolve(&poly_pow(b, m - 1), &others);
        for d in db {
            let c = convolve(&lower, d);
            for (r, v) in c.iter().enumerate() {
                jac[(r, col)] = s * (*m as f64) * v;
            }
            col += 1;
        }
    }
    (w, jac)
}

fn sigma_residual(loss: &QuadLoss, w: &[f64]) -> DVector<f64> {
    let d = DVector::from_iterator(w.len(), w.iter().zip(loss.u.iter()).map(|(a, b)| a - b));
    &loss.sigma * d
}

fn stratum_grad(t: &RealType, loss: &QuadLoss, p: &[f64]) -> DVector<f64> {
    let (w, jac) = stratum_map(t, p);
    jac.transpose() * sigma_residual(loss, &w) * 2.0
}

fn stratum_hessian(t: &RealType, loss: &QuadLoss, p: &[f64]) -> DMatrix<f64> {
    let n = p.len();
    let mut h = DMatrix::zeros(n, n);
    for j in 0..n {
        let step = 1e-6 * p[j].abs().max(1.0);
        let mut a = p.to_vec();
        let mut b = p.to_vec();
        a[j] += step;
        b[j] -= step;
        let col = (stratum_grad(t, loss, &a) - stratum_grad(t, loss, &b)) / (2.0 * step);
        h.set_column(j, &col);
    }
    (&h + h.transpose()) * 0.5
}

/// Largest column-normalized first-order residual `|J_jᵀ Σ (w̄ - u)| / ‖J_j‖`.
fn first_order_residual(jac: &DMatrix<f64>, sr: &DVector<f64>) -> f64 {
    (0..jac.ncols())
        .map(|j| {
            let c = jac.column(j);
            let n = c.norm();
            if n == 0.0 {
                0.0
            } else {
                c.dot(sr).abs() / n
            }
        })
        .fold(0.0, f64::max)
}

fn random_params<R: Rng>(t: &RealType, loss: &QuadLoss, rng: &mut R) -> Vec<f64> {
    let mut p = vec![1.0];
    for _ in &t.linear {
        p.push(rng.random::<f64>() * std::f64::consts::PI);
    }
    for _ in &t.quadratic {
        let a: f64 = rng.sample(StandardNormal);
        let lb: f64 = rng.sample(StandardNormal);
        p.push(a);
        p.push((0.7 * lb).exp());
    }
    // least-squares scale
    let (shape, _) = stratum_map(t, &p);
    let sv = DVector::from_column_slice(&shape);
    let uv = DVector::from_column_slice(&loss.u);
    let den = (sv.transpose() * &loss.sigma * &sv)[(0, 0)];
    let num = (sv.transpose() * &loss.sigma * &uv)[(0, 0)];
    p[0] = if den > 0.0 { num / den } else { 1.0 };
    if p[0] == 0.0 {
        p[0] = 1.0;
    }
    p
}

/// Levenberg-Marquardt on `∇f = 0`.
fn newton_solve(t: &RealType, loss: &QuadLoss, mut p: Vec<f64>) -> Option<Vec<f64>> {
    let n = p.len();
    let mut g = stratum_grad(t, loss, &p);
    let mut merit = g.norm_squared();
    let mut damp = 1e-6;
    for _ in 0..300 {
        if !merit.is_finite() {
            return None;
        }
        let h = stratum_hessian(t, loss, &p);
        let hth = h.transpose() * &h;
        let rhs = -(h.transpose() * &g);
        let mut accepted = false;
        for _ in 0..30 {
            let mut a = hth.clone();
            let diag_scale = (0..n).map(|i| hth[(i, i)]).fold(1e-300, f64::max);
            for i in 0..n {
                a[(i, i)] += damp * diag_scale;
            }
            let Some(step) = a.lu().solve(&rhs) else {
                damp *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(step.iter()).map(|(x, d)| x + d).collect();
            let gt = stratum_grad(t, loss, &trial);
            let mt = gt.norm_squared();
            if mt.is_finite() && mt < merit {
                let small = step.norm() <= 1e-15 * (1.0 + DVector::from_column_slice(&p).norm());
                p = trial;
                g = gt;
                merit = mt;
                damp = (damp / 5.0).max(1e-14);
                accepted = true;
                if small {
                    return Some(p);
                }
                break;
            }
            damp *= 8.0;
        }
        if !accepted || merit < 1e-30 {
            break;
        }
        if p.iter().any(|v| v.abs() > 1e8) {
            return None;
        }
    }
    Some(p)
}

struct Candidate {
    w: Filter,
    params: Vec<f64>,
    type_index: usize,
    residual: f64,
}

fn checked_candidate(t: &RealType, loss: &QuadLoss, p: &[f64]) -> Option<(Filter, f64)> {
    let (w, jac) = stratum_map(t, p);
    if w.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let sr = sigma_residual(loss, &w);
    let res = first_order_residual(&jac, &sr);
    let scale = loss.u.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    if !(res <= FIRST_ORDER_TOL * scale) {
        return None;
    }
    let mut jn = jac.clone();
    for j in 0..jn.ncols() {
        let c = jn.column(j).norm();
        if c == 0.0 {
            return None;
        }
        jn.column_mut(j).scale_mut(1.0 / c);
    }
    if numerical_rank(&jn, RANK_REL) < jn.ncols() {
        return None;
    }
    Some((Filter(w), res))
}

/// Real critical points of `loss` restricted to `Δ_λ`.
pub fn crit_on_stratum(
    loss: &QuadLoss,
    lambda: &Partition,
    n_starts: usize,
    seed: u64,
) -> Result<CritReport> {
    let deg = loss.u.degree();
    if lambda.degree() != deg {
        return Err(LcnError::DegreeMismatch {
            expected: deg,
            got: lambda.degree(),
        });
    }
    QuadLoss::new(loss.sigma.clone(), loss.u.clone())?;
    let types = real_types(lambda);
    let mut report = CritReport::default();
    let mut cands: Vec<Candidate> = Vec::new();
    for (ti, t) in types.iter().enumerate() {
        let stream = ((ti as u64) << 32) | 0xC417;
        let found: Vec<Option<Candidate>> = (0..n_starts)
            .into_par_iter()
            .map(|i| {
                let mut rng = run_rng(seed ^ stream, i as u64);
                let p0 = random_params(t, loss, &mut rng);
                let p = newton_solve(t, loss, p0)?;
                let (w, residual) = checked_candidate(t, loss, &p)?;
                Some(Candidate {
                    w,
                    params: p,
                    type_index: ti,
                    residual,
                })
            })
            .collect();
        report.starts += n_starts;
        cands.extend(found.into_iter().flatten());
    }
    report.converged = cands.len();
    if cands.is_empty() {
        report.notes.push(format!("no converged starts for {lambda}"));
        return Ok(report);
    }
    let ws: Vec<Filter> = cands.iter().map(|c| c.w.clone()).collect();
    for (rep, hits) in dedup_filters(&ws, DEDUP_TOL) {
        // keep the member with the smallest residual
        let best = (0..cands.len())
            .filter(|&i| same_point(&ws, rep, i))
            .min_by(|&a, &b| cands[a].residual.total_cmp(&cands[b].residual))
            .unwrap_or(rep);
        let c = &cands[best];
        let t = &types[c.type_index];
        let h = stratum_hessian(t, loss, &c.params);
        report.points.push(CritPoint {
            loss: loss.value(&c.w),
            rrmp: Some(t.rrmp()),
            kind: hessian_kind(&h),
            hits,
            residual: c.residual,
            multiplier: None,
            branch: None,
            w: c.w.clone(),
        });
    }
    report.points.sort_by(|a, b| {
        a.w.iter()
            .zip(b.w.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(report)
}

fn same_point(ws: &[Filter], a: usize, b: usize) -> bool {
    let k = ws[a].len();
    (0..k).all(|c| {
        let scale = ws.iter().fold(1.0f64, |m, w| m.max(w[c].abs()));
        (ws[a][c] - ws[b][c]).abs() <= DEDUP_TOL * scale
    })
}

// ---------------------------------------------------------------------------
// the cone B² = 4AC

fn cone_j() -> Matrix3<f64> {
    Matrix3::new(0.0, 0.0, 1.0, 0.0, -0.5, 0.0, 1.0, 0.0, 0.0)
}

// ascending-power polynomial helpers
fn pmul(a: &[f64], b: &[f64]) -> Vec<f64> {
    convolve(a, b)
}

fn padd(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|i| a.get(i).copied().unwrap_or(0.0) + b.get(i).copied().unwrap_or(0.0))
        .collect()
}

fn pscale(a: &[f64], s: f64) -> Vec<f64> {
    a.iter().map(|v| v * s).collect()
}

/// Adjugate of `M - λJ` as ascending polynomials in `λ`.
fn adjugate_poly(m: &Matrix3<f64>) -> [[Vec<f64>; 3]; 3] {
    let j = cone_j();
    let e = |r: usize, c: usize| vec![m[(r, c)], -j[(r, c)]];
    let minor = |r: usize, c: usize| {
        let rows: Vec<usize> = (0..3).filter(|&i| i != r).collect();
        let cols: Vec<usize> = (0..3).filter(|&i| i != c).collect();
        padd(
            &pmul(&e(rows[0], cols[0]), &e(rows[1], cols[1])),
            &pscale(&pmul(&e(rows[0], cols[1]), &e(rows[1], cols[0])), -1.0),
        )
    };
    let mut adj: [[Vec<f64>; 3]; 3] = Default::default();
    for (r, row) in adj.iter_mut().enumerate() {
        for (c, entry) in row.iter_mut().enumerate() {
            let sign = if (r + c) % 2 == 0 { 1.0 } else { -1.0 };
            // adj = cofactorᵀ
            *entry = pscale(&minor(c, r), sign);
        }
    }
    adj
}

/// The quartic in `λ` whose real roots give critical points on the cone,
/// highest power first.
pub fn lambda_polynomial(xxt: &Matrix3<f64>, yxt: &Vector3<f64>) -> [f64; 5] {
    let adj = adjugate_poly(xxt);
    let col = |c: usize| {
        (0..3).fold(vec![0.0], |acc, i| padd(&acc, &pscale(&adj[i][c], yxt[i])))
    };
    let (a, b, c) = (col(0), col(1), col(2));
    let p = padd(&pmul(&b, &b), &pscale(&pmul(&a, &c), -4.0));
    let mut out = [0.0; 5];
    for (i, v) in p.iter().enumerate().take(5) {
        out[4 - i] = *v;
    }
    out
}

fn polish_real_root(c: &[f64; 5], mut x: f64) -> f64 {
    for _ in 0..8 {
        let (mut p, mut dp) = (0.0, 0.0);
        for &ci in c {
            dp = dp * x + p;
            p = p * x + ci;
        }
        if dp == 0.0 {
            break;
        }
        let nx = x - p / dp;
        if !nx.is_finite() {
            break;
        }
        x = nx;
    }
    x
}

/// Loss `(W - U) XXᵀ (W - U)ᵀ` with `U = YXᵀ (XXᵀ)⁻¹`.
fn cone_loss(xxt: &Matrix3<f64>, u: &Vector3<f64>, w: &Vector3<f64>) -> f64 {
    let d = w - u;
    (d.transpose() * xxt * d)[(0, 0)]
}

fn cone_branch(w: &Vector3<f64>) -> ConeBranch {
    if w[0] + w[2] >= 0.0 {
        ConeBranch::NonNegative
    } else {
        ConeBranch::NonPositive
    }
}

/// Critical points of `‖WX - Y‖²` on `B² = 4AC` from the real roots of the
/// `λ`-quartic, typed by the Lagrangian Hessian on the tangent plane.
pub fn example61_solver(xxt: &Matrix3<f64>, yxt: &Vector3<f64>) -> Result<CritReport> {
    let sym = (xxt - xxt.transpose()).amax();
    if sym > 1e-10 * xxt.amax().max(1.0) || xxt.cholesky().is_none() {
        return Err(LcnError::NotPositiveDefinite("XXᵀ".into()));
    }
    let u = xxt
        .try_inverse()
        .ok_or_else(|| LcnError::Singular("XXᵀ".into()))?
        * yxt;
    let coeffs = lambda_polynomial(xxt, yxt);
    let mut report = CritReport::default();
    let cmax = coeffs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if cmax == 0.0 {
        report.notes.push("λ-polynomial vanishes identically".into());
        return Ok(report);
    }
    let roots = find_roots(&Filter(coeffs.to_vec()))?;
    let j = cone_j();
    let mut ws: Vec<Filter> = Vec::new();
    let mut meta: Vec<(f64, Vector3<f64>)> = Vec::new();
    for r in roots {
        let RootValue::Finite(z) = r.value else { continue };
        if z.im.abs() > 1e-6 * z.norm().max(1.0) {
            continue;
        }
        let lam = polish_real_root(&coeffs, z.re);
        let m = xxt - j * lam;
        let mut w = None;
        for attempt in 0..3 {
            let l = lam * (1.0 + 1e-12 * attempt as f64);
            let m2 = xxt - j * l;
            if m2.determinant().abs() > 1e-13 * m.norm().powi(3).max(1e-300) {
                if let Some(inv) = m2.try_inverse() {
                    w = Some((inv.transpose() * yxt, l));
                    break;
                }
            }
        }
        let Some((w, lam)) = w else {
            report
                .notes
                .push(format!("singular XXᵀ - λJ at λ = {lam:.6e}; root skipped"));
            continue;
        };
        let on_cone = (w[1] * w[1] - 4.0 * w[0] * w[2]).abs()
            <= 1e-8 * (w[1] * w[1]).max((4.0 * w[0] * w[2]).abs()).max(1e-300);
        if !on_cone || w.norm() == 0.0 {
            report
                .notes
                .push(format!("λ = {lam:.6e} maps off the cone; root skipped"));
            continue;
        }
        ws.push(Filter(vec![w[0], w[1], w[2]]));
        meta.push((lam, w));
    }
    report.starts = meta.len();
    report.converged = meta.len();
    let tol = RootTolerance::default();
    for (rep, hits) in dedup_filters(&ws, DEDUP_TOL) {
        let (lam, w) = meta[rep];
        let lag = (xxt - j * lam) * 2.0;
        let grad_g = Vector3::new(-4.0 * w[2], 2.0 * w[1], -4.0 * w[0]);
        let n = grad_g.normalize();
        let kind = if grad_g.norm() == 0.0 {
            report.notes.push("cone vertex".into());
            CritKind::Degenerate
        } else {
            let p = Matrix3::identity() - n * n.transpose();
            let svd = p.svd(true, false);
            let uu = svd.u.expect("requested U");
            // the two columns with unit singular value span the tangent plane
            let mut idx: Vec<usize> = (0..3).collect();
            idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
            let basis = DMatrix::from_fn(3, 2, |r, c| uu[(r, idx[c])]);
            let lag_d = DMatrix::from_fn(3, 3, |r, c| lag[(r, c)]);
            hessian_kind(&(basis.transpose() * lag_d * &basis))
        };
        let sr = (w - u).transpose() * xxt;
        let grad_l = sr.transpose() * 2.0;
        let tangent_part = grad_l - n * n.dot(&grad_l);
        let wf = Filter(vec![w[0], w[1], w[2]]);
        report.points.push(CritPoint {
            loss: cone_loss(xxt, &u, &w),
            rrmp: classify_rrmp(&wf, tol).ok(),
            kind,
            hits,
            residual: tangent_part.norm(),
            multiplier: Some(lam),
            branch: Some(cone_branch(&w)),
            w: wf,
        });
    }
    Ok(report)
}

/// Converged limits of gradient descent on `(a, c) ↦ ±(a², 2ac, c²)`, which
/// covers both branches of the cone.
pub fn cone_descent(
    xxt: &Matrix3<f64>,
    yxt: &Vector3<f64>,
    n_starts: usize,
    seed: u64,
) -> Result<Vec<(Filter, f64)>> {
    let u = xxt
        .try_inverse()
        .ok_or_else(|| LcnError::Singular("XXᵀ".into()))?
        * yxt;
    let f = |sg: f64, a: f64, c: f64| {
        let w = Vector3::new(sg * a * a, sg * 2.0 * a * c, sg * c * c);
        let d = w - u;
        let g = xxt * d * 2.0;
        let ga = sg * (g[0] * 2.0 * a + g[1] * 2.0 * c);
        let gc = sg * (g[1] * 2.0 * a + g[2] * 2.0 * c);
        ((d.transpose() * xxt * d)[(0, 0)], ga, gc, w)
    };
    let runs: Vec<Option<(Filter, f64)>> = (0..n_starts)
        .into_par_iter()
        .map(|i| {
            let mut rng = run_rng(seed, i as u64);
            let sg = if i % 2 == 0 { 1.0 } else { -1.0 };
            let mut a: f64 = rng.sample(StandardNormal);
            let mut c: f64 = rng.sample(StandardNormal);
            let mut step = 0.1;
            for _ in 0..100_000 {
                let (v, ga, gc, w) = f(sg, a, c);
                let g2 = ga * ga + gc * gc;
                if g2 <= 1e-22 {
                    return (w.norm() > 1e-6).then(|| (Filter(vec![w[0], w[1], w[2]]), v));
                }
                loop {
                    let (na, nc) = (a - step * ga, c - step * gc);
                    let (nv, ..) = f(sg, na, nc);
                    if nv <= v - 0.5 * step * g2 {
                        a = na;
                        c = nc;
                        step *= 1.5;
                        break;
                    }
                    step *= 0.5;
                    if step < 1e-18 {
                        return None;
                    }
                }
            }
            None
        })
        .collect();
    let found: Vec<(Filter, f64)> = runs.into_iter().flatten().collect();
    let ws: Vec<Filter> = found.iter().map(|p| p.0.clone()).collect();
    Ok(dedup_filters(&ws, 1e-6)
        .into_iter()
        .map(|(r, _)| found[r].clone())
        .collect())
}

/// The sextic separating the 4-root and 2-root regions of the `λ`-quartic
/// when `XXᵀ = I`.
pub fn caustic(u1: f64, u2: f64, u3: f64) -> f64 {
    let (a, b, c) = (u1, u2, u3);
    32.0 * a.powi(6) + 435.0 * a.powi(4) * b * b + 384.0 * a * a * b.powi(4) + 256.0 * b.powi(6)
        - 240.0 * a.powi(5) * c
        - 960.0 * a.powi(3) * b * b * c
        - 960.0 * a * b.powi(4) * c
        + 696.0 * a.powi(4) * c * c
        + 1098.0 * a * a * b * b * c * c
        + 384.0 * b.powi(4) * c * c
        - 980.0 * a.powi(3) * c.powi(3)
        - 960.0 * a * b * b * c.powi(3)
        + 696.0 * a * a * c.powi(4)
        + 435.0 * b * b * c.powi(4)
        - 240.0 * a * c.powi(5)
        + 32.0 * c.powi(6)
}

// ---------------------------------------------------------------------------
// two-layer (1, a) · (v) local minima

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedMinimum {
    /// `(a, v_0, …, v_{m-1})` with the first filter normalized to `(1, a)`.
    pub coords: Vec<f64>,
    pub loss: f64,
    pub grad_norm: f64,
    pub hessian_eigenvalues: Vec<f64>,
    pub hits: usize,
}

fn reduced_parts(u: &[f64], x: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let a = x[0];
    let v = &x[1..];
    let m = v.len();
    let w = convolve(&[1.0, a], v);
    let r: Vec<f64> = w.iter().zip(u).map(|(p, q)| p - q).collect();
    let mut jr = DMatrix::zeros(m + 1, m + 1);
    for (j, &vj) in v.iter().enumerate() {
        jr[(j + 1, 0)] = vj;
        jr[(j, j + 1)] = 1.0;
        jr[(j + 1, j + 1)] = a;
    }
    (r, jr)
}

fn reduced_grad_hess(u: &[f64], x: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
    let (r, jr) = reduced_parts(u, x);
    let rv = DVector::from_column_slice(&r);
    let g = jr.transpose() * &rv * 2.0;
    let mut h = jr.transpose() * &jr * 2.0;
    let m = x.len() - 1;
    for j in 0..m {
        h[(0, j + 1)] += 2.0 * r[j + 1];
        h[(j + 1, 0)] += 2.0 * r[j + 1];
    }
    (rv.norm_squared(), g, h)
}

/// Newton polish of `‖(1, a) · v - u‖²` in reduced coordinates.
pub fn polish_reduced(u: &Filter, x0: &[f64]) -> Option<ReducedMinimum> {
    let mut x = x0.to_vec();
    for _ in 0..50 {
        let (_, g, h) = reduced_grad_hess(u, &x);
        let step = h.lu().solve(&(-&g))?;
        x.iter_mut().zip(step.iter()).for_each(|(xi, d)| *xi += d);
        if step.norm() <= 1e-15 * (1.0 + DVector::from_column_slice(&x).norm()) {
            break;
        }
    }
    let (loss, g, h) = reduced_grad_hess(u, &x);
    Some(ReducedMinimum {
        coords: x,
        loss,
        grad_norm: g.norm(),
        hessian_eigenvalues: sym_eigenvalues(&h),
        hits: 1,
    })
}

/// Distinct local minima with positive loss reached by gradient descent for
/// the architecture `k = (2, m)` and the Euclidean loss to `u`.
pub fn two_layer_local_minima(
    u: &Filter,
    n_starts: usize,
    seed: u64,
) -> Result<Vec<ReducedMinimum>> {
    if u.len() < 3 {
        return Err(LcnError::InvalidFilter("target needs degree ≥ 2".into()));
    }
    let m = u.len() - 1;
    let arch = Architecture::stride_one(&[2, m])?;
    let loss = QuadLoss::identity(u.clone());
    let runs: Vec<Option<ReducedMinimum>> = (0..n_starts)
        .into_par_iter()
        .map(|i| {
            let cfg = TrainConfig {
                seed: seed.wrapping_add(i as u64),
                ..TrainConfig::default()
            };
            let run = gd_train(&arch, &loss, &cfg).ok()?;
            if !run.converged || run.final_loss <= 1e-8 {
                return None;
            }
            let w1 = &run.theta[0];
            if w1[0].abs() < 1e-8 {
                return None;
            }
            let mut x = vec![w1[1] / w1[0]];
            x.extend(run.theta[1].iter().map(|v| v * w1[0]));
            let p = polish_reduced(u, &x)?;
            (p.grad_norm <= 1e-10 && p.hessian_eigenvalues[0] > 0.0).then_some(p)
        })
        .collect();
    let found: Vec<ReducedMinimum> = runs.into_iter().flatten().collect();
    let ws: Vec<Filter> = found.iter().map(|p| Filter(p.coords.clone())).collect();
    Ok(dedup_filters(&ws, 1e-6)
        .into_iter()
        .map(|(r, hits)| ReducedMinimum {
            hits,
            ..found[r].clone()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ed_bounds() {
        let a = Architecture::stride_one(&[3, 2, 2]).unwrap();
        assert_eq!(ed_bound(&a, EdNorm::Generic).unwrap(), 36);
        let b = Architecture::stride_one(&[4, 2]).unwrap();
        assert_eq!(ed_bound(&b, EdNorm::Generic).unwrap(), 11);
        let t = EdDegreeTable::default();
        let disc = Partition::new(vec![2, 1, 1]).unwrap();
        assert_eq!(t.get(&disc, EdNorm::Generic).unwrap(), 10);
        assert_eq!(t.get(&disc, EdNorm::Bombieri).unwrap(), 4);
        assert!(t.get(&Partition::new(vec![3, 3]).unwrap(), EdNorm::Generic).is_err());
        let filling = Architecture::stride_one(&[3, 3]).unwrap();
        assert_eq!(ed_bound(&filling, EdNorm::Generic).unwrap(), 1 + 10 + 13);
    }

    #[test]
    fn closed_forms_match_quartic_table() {
        let t = EdDegreeTable::default();
        for alpha in 2..=4 {
            let mut parts = vec![alpha];
            parts.extend(std::iter::repeat_n(1, 4 - alpha));
            let lam = Partition::new(parts).unwrap();
            let stored = t.get(&lam, EdNorm::Generic).unwrap();
            assert_eq!(stored, (2 * alpha - 1) * 4 - 2 * (alpha - 1) * (alpha - 1));
        }
        let cubic_disc = Partition::new(vec![2, 1, 1, 1]).unwrap();
        assert_eq!(t.get(&cubic_disc, EdNorm::Generic).unwrap(), 3 * 5 - 2);
    }

    #[test]
    fn rrmp_enumeration() {
        assert_eq!(partitions(4).len(), 5);
        assert_eq!(all_rrmps(4).len(), 9);
        assert_eq!(all_rrmps(2).len(), 3);
    }

    #[test]
    fn real_type_splits() {
        let t = real_types(&Partition::new(vec![2, 1, 1]).unwrap());
        assert_eq!(t.len(), 2);
        let t = real_types(&Partition::new(vec![2, 2]).unwrap());
        assert_eq!(t.len(), 2);
        assert_eq!(real_types(&Partition::new(vec![4]).unwrap()).len(), 1);
    }

    #[test]
    fn stratum_jacobian_matches_differences() {
        let t = RealType {
            linear: vec![2],
            quadratic: vec![1],
        };
        let p = [1.3, 0.4, -0.2, 0.9];
        let (_, jac) = stratum_map(&t, &p);
        for j in 0..p.len() {
            let mut a = p.to_vec();
            let mut b = p.to_vec();
            a[j] += 1e-6;
            b[j] -= 1e-6;
            let (wa, _) = stratum_map(&t, &a);
            let (wb, _) = stratum_map(&t, &b);
            for r in 0..wa.len() {
                let fd = (wa[r] - wb[r]) / 2e-6;
                assert!((fd - jac[(r, j)]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn lambda_polynomial_identity_gram() {
        let (u1, u2, u3) = (0.7, -0.3, 1.9);
        let p = lambda_polynomial(&Matrix3::identity(), &Vector3::new(u1, u2, u3));
        let expect = [
            u2 * u2 - u1 * u3,
            -u1 * u1 - 4.0 * u1 * u3 - u3 * u3,
            -4.0 * u1 * u1 - 2.0 * u2 * u2 - 5.0 * u1 * u3 - 4.0 * u3 * u3,
            -4.0 * u1 * u1 - 4.0 * u1 * u3 - 4.0 * u3 * u3,
            u2 * u2 - 4.0 * u1 * u3,
        ];
        for (a, b) in p.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn target_on_cone_is_returned() {
        let rep = example61_solver(&Matrix3::identity(), &Vector3::new(1.0, 2.0, 1.0)).unwrap();
        let i = rep.find(&[1.0, 2.0, 1.0], 1e-10).expect("target among points");
        assert!(rep.points[i].loss < 1e-20);
        assert_eq!(rep.points[i].kind, CritKind::Min);
    }

    #[test]
    fn dedup_rule() {
        let ws = vec![
            Filter(vec![1.0, 2.0]),
            Filter(vec![1.00005, 2.0]),
            Filter(vec![1.0, 2.01]),
        ];
        let g = dedup_filters(&ws, 1e-4);
        assert_eq!(g, vec![(0, 2), (2, 1)]);
    }

    #[test]
    fn exterior_quadratic_solution() {
        let arch = Architecture::stride_one(&[2, 2]).unwrap();
        let loss = QuadLoss::identity(Filter(vec![1.0, 0.3, 2.0]));
        let run = gd_train(&arch, &loss, &TrainConfig::default()).unwrap();
        assert!(run.converged);
        let rep = classify_solution(&arch, &loss, &run.theta, RootTolerance::default()).unwrap();
        assert_eq!(rep.rrmp.to_string(), "2|0");
        assert!(rep.compatible);
        assert!(!rep.any_filter_repeated);
        assert!(!rep.is_global_candidate);
    }

    #[test]
    fn non_critical_rejected() {
        let arch = Architecture::stride_one(&[2, 2]).unwrap();
        let loss = QuadLoss::identity(Filter(vec![1.0, 0.0, 1.0]));
        let theta = vec![Filter(vec![1.0, 0.5]), Filter(vec![0.3, 2.0])];
        assert!(matches!(
            classify_solution(&arch, &loss, &theta, RootTolerance::default()),
            Err(LcnError::NotCritical(_))
        ));
    }

    #[test]
    fn global_interpolation_is_generic() {
        let arch = Architecture::stride_one(&[2, 2]).unwrap();
        let loss = QuadLoss::identity(Filter(vec![1.0, 1.0, -2.0]));
        let theta = vec![Filter(vec![1.0, 2.0]), Filter(vec![1.0, -1.0])];
        let rep = classify_solution(&arch, &loss, &theta, RootTolerance::default()).unwrap();
        assert!(rep.is_global_candidate);
        assert!(rep.partition.is_trivial());
    }

    #[test]
    fn region_counts_on_slice() {
        let cases = [((0.45, 0.05), (2, 2)), ((0.4, 0.2), (1, 1)), ((0.15, 0.5), (2, 0))];
        for ((u1, u2), (mins, saddles)) in cases {
            let rep = example61_solver(&Matrix3::identity(), &Vector3::new(u1, u2, 1.0 - u1)).unwrap();
            assert_eq!((rep.count(CritKind::Min), rep.count(CritKind::Saddle)), (mins, saddles));
        }
    }

    #[test]
    fn bombieri_gram_double_root() {
        let xxt = Matrix3::from_diagonal(&Vector3::new(1.0, 0.5, 1.0));
        let p = lambda_polynomial(&xxt, &Vector3::new(0.3, -0.8, 1.7));
        // synthetic division by λ + 1 twice
        let mut q = p.to_vec();
        for _ in 0..2 {
            let n = q.len();
            let mut out = vec![q[0]];
            for i in 1..n {
                let v = q[i] - out[i - 1];
                out.push(v);
            }
            let rem = out.pop().unwrap();
            assert!(rem.abs() < 1e-10 * p.iter().fold(1.0f64, |m, v| m.max(v.abs())));
            q = out;
        }
    }

    #[test]
    fn descent_limits_are_solver_points() {
        let u = Vector3::new(0.45, 0.05, 0.55);
        let rep = example61_solver(&Matrix3::identity(), &u).unwrap();
        let limits = cone_descent(&Matrix3::identity(), &u, 40, 5).unwrap();
        assert!(!limits.is_empty());
        for (w, _) in limits {
            let i = rep.find(&w, 1e-6).expect("descent limit among solver points");
            assert_eq!(rep.points[i].kind, CritKind::Min);
        }
    }

    #[test]
    fn reduced_polish_finds_spurious_minimum() {
        let u = Filter(vec![1.0, 1.0, 0.1, 0.1]);
        let m = polish_reduced(&u, &[0.06, 1.0, 0.94, 0.05]).unwrap();
        // 40-digit Newton solve of the same gradient system
        let reference = [0.0578445443253357, 1.00001878225936, 0.941829666875409, 0.0511336537590084];
        for (a, b) in m.coords.iter().zip(reference) {
            assert!((a - b).abs() < 1e-13);
        }
        assert!(m.hessian_eigenvalues[0] > 0.0);
        assert!(m.loss > 1e-3);
    }
}
