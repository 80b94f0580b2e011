//! Projective roots of real binary forms and real root multiplicity patterns.
//!
//! Roots are found with Aberth–Ehrlich simultaneous iteration on the
//! dehomogenization `p(x, 1)`. Polynomial values inside the iteration are
//! accumulated in double-double arithmetic, which keeps exact multiple roots
//! well inside the default clustering tolerance.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LcnError, Result};
use crate::poly::{Architecture, PolyR};

pub const DEFAULT_ROOT_SEED: u64 = 0x5eed_0f_a11_2007;
const MAX_ITERS: usize = 200;
const POLISH_STEPS: usize = 5;
const TIE_REL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum RootValue {
    Finite(Complex64),
    Infinity,
}

/// Root of a binary form in `CP^1`; `Infinity` is the point `(1:0)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjRoot {
    pub value: RootValue,
    pub multiplicity: usize,
}

impl ProjRoot {
    pub const INFINITY: ProjRoot = ProjRoot {
        value: RootValue::Infinity,
        multiplicity: 1,
    };

    pub fn finite(z: Complex64) -> Self {
        ProjRoot {
            value: RootValue::Finite(z),
            multiplicity: 1,
        }
    }

    pub fn as_finite(&self) -> Option<Complex64> {
        match self.value {
            RootValue::Finite(z) => Some(z),
            RootValue::Infinity => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RootTolerance {
    pub tol: f64,
}

impl RootTolerance {
    pub fn new(tol: f64) -> Result<Self> {
        if !(tol > 0.0 && tol < 1.0) {
            return Err(LcnError::Parse(format!("tolerance {tol} outside (0, 1)")));
        }
        Ok(RootTolerance { tol })
    }
}

impl Default for RootTolerance {
    fn default() -> Self {
        RootTolerance { tol: 1e-4 }
    }
}

// ---------------------------------------------------------------------------
// double-double helpers

#[derive(Clone, Copy, Debug)]
struct Dd {
    hi: f64,
    lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd {
        hi: s,
        lo: b - (s - a),
    }
}

impl Dd {
    #[inline]
    fn from(a: f64) -> Dd {
        Dd { hi: a, lo: 0.0 }
    }

    #[inline]
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        quick_two_sum(s, e + self.lo + o.lo)
    }

    #[inline]
    fn mul_f(self, b: f64) -> Dd {
        let p = self.hi * b;
        let e = self.hi.mul_add(b, -p);
        quick_two_sum(p, e + self.lo * b)
    }
}

#[derive(Clone, Copy, Debug)]
struct CDd {
    re: Dd,
    im: Dd,
}

impl CDd {
    fn from_real(c: f64) -> Self {
        CDd {
            re: Dd::from(c),
            im: Dd::from(0.0),
        }
    }

    #[inline]
    fn mul_c(self, z: Complex64) -> CDd {
        CDd {
            re: self.re.mul_f(z.re).add(self.im.mul_f(-z.im)),
            im: self.re.mul_f(z.im).add(self.im.mul_f(z.re)),
        }
    }

    #[inline]
    fn add(self, o: CDd) -> CDd {
        CDd {
            re: self.re.add(o.re),
            im: self.im.add(o.im),
        }
    }

    fn add_real(self, c: f64) -> CDd {
        CDd {
            re: self.re.add(Dd::from(c)),
            im: self.im,
        }
    }

    fn to_c64(self) -> Complex64 {
        Complex64::new(self.re.hi + self.re.lo, self.im.hi + self.im.lo)
    }
}

/// Value and derivative of `Σ c_i z^{n-i}` with compensated accumulation.
fn eval_with_derivative(c: &[f64], z: Complex64) -> (Complex64, Complex64) {
    let mut p = CDd::from_real(c[0]);
    let mut dp = CDd::from_real(0.0);
    for &ci in &c[1..] {
        dp = dp.mul_c(z).add(p);
        p = p.mul_c(z).add_real(ci);
    }
    (p.to_c64(), dp.to_c64())
}

/// Plain Horner evaluation of the dehomogenized form.
pub fn eval_dehomogenized(c: &[f64], z: Complex64) -> Complex64 {
    c.iter()
        .fold(Complex64::new(0.0, 0.0), |acc, &ci| acc * z + ci)
}

// ---------------------------------------------------------------------------
// root finding

pub fn find_roots(p: &PolyR) -> Result<Vec<ProjRoot>> {
    find_roots_seeded(p, DEFAULT_ROOT_SEED)
}

pub fn find_roots_seeded(p: &PolyR, seed: u64) -> Result<Vec<ProjRoot>> {
    let c = p.coeffs();
    let lead = c.iter().take_while(|&&v| v == 0.0).count();
    if lead == c.len() {
        return Err(LcnError::ZeroPolynomial);
    }
    let core = &c[lead..];
    let trail = core.iter().rev().take_while(|&&v| v == 0.0).count();
    let core = &core[..core.len() - trail];

    let mut out = Vec::with_capacity(c.len() - 1);
    out.extend(std::iter::repeat_n(ProjRoot::INFINITY, lead));
    out.extend(std::iter::repeat_n(
        ProjRoot::finite(Complex64::new(0.0, 0.0)),
        trail,
    ));
    out.extend(aberth(core, seed).into_iter().map(ProjRoot::finite));
    Ok(out)
}

/// Roots of `Σ c_i z^{n-i}` with `c_0 ≠ 0`, `c_n ≠ 0`.
fn aberth(c: &[f64], seed: u64) -> Vec<Complex64> {
    let n = c.len() - 1;
    match n {
        0 => return vec![],
        1 => return vec![Complex64::new(-c[1] / c[0], 0.0)],
        _ => {}
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (n as u64).wrapping_mul(0x9e37_79b9));
    let radius = (c[n].abs() / c[0].abs()).powf(1.0 / n as f64);
    let radius = if radius.is_finite() && radius > 0.0 {
        radius
    } else {
        1.0
    };
    let mut z: Vec<Complex64> = (0..n)
        .map(|j| {
            let ang = std::f64::consts::TAU * j as f64 / n as f64
                + 0.4
                + 0.2 * rng.random::<f64>();
            let rad = radius * (1.0 + 0.1 * rng.random::<f64>());
            Complex64::from_polar(rad, ang)
        })
        .collect();

    for _ in 0..MAX_ITERS {
        let mut max_rel = 0.0_f64;
        for i in 0..n {
            let (pv, dpv) = eval_with_derivative(c, z[i]);
            if pv.norm() == 0.0 {
                continue;
            }
            let ratio = pv / dpv;
            let mut s = Complex64::new(0.0, 0.0);
            for j in 0..n {
                if j != i {
                    s += 1.0 / (z[i] - z[j]);
                }
            }
            let w = ratio / (1.0 - ratio * s);
            if !w.re.is_finite() || !w.im.is_finite() {
                z[i] += Complex64::new(1e-8 * radius, 1e-8 * radius);
                max_rel = f64::INFINITY;
                continue;
            }
            z[i] -= w;
            max_rel = max_rel.max(w.norm() / z[i].norm().max(f64::MIN_POSITIVE));
        }
        if max_rel <= 1e-16 {
            break;
        }
    }

    for zi in z.iter_mut() {
        for _ in 0..POLISH_STEPS {
            let (pv, dpv) = eval_with_derivative(c, *zi);
            let step = pv / dpv;
            if !step.re.is_finite() || !step.im.is_finite() {
                break;
            }
            let cand = *zi - step;
            let (pc, _) = eval_with_derivative(c, cand);
            if pc.norm() <= pv.norm() {
                *zi = cand;
            } else {
                break;
            }
        }
    }
    z
}

/// Residual `|p(r,1)|` scaled by the size of the coefficients and the root.
pub fn scaled_residual(p: &PolyR, r: Complex64) -> f64 {
    let m = p.max_abs();
    let deg = p.degree() as i32;
    eval_dehomogenized(p.coeffs(), r).norm() / (m * r.norm().max(1.0).powi(deg))
}

// ---------------------------------------------------------------------------
// clustering and classification

/// Single-linkage groups under `|a - b| ≤ tol·max(|a|, |b|)`.
pub fn single_linkage(points: &[Complex64], tol: f64) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while parent[r] != r {
            r = parent[r];
        }
        let mut j = i;
        while parent[j] != r {
            let next = parent[j];
            parent[j] = r;
            j = next;
        }
        r
    }
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (points[i], points[j]);
            if (a - b).norm() <= tol * a.norm().max(b.norm()) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_to_group = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if root_to_group[r] == usize::MAX {
            root_to_group[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[root_to_group[r]].push(i);
    }
    groups
}

pub fn is_real_root(z: Complex64, tol: f64) -> bool {
    z.im.abs() <= tol * z.norm()
}

/// Clustered roots, each with its multiplicity; finite centers are cluster means.
pub fn cluster_roots(roots: &[ProjRoot], tol: f64) -> Vec<ProjRoot> {
    let inf: usize = roots
        .iter()
        .filter(|r| r.value == RootValue::Infinity)
        .map(|r| r.multiplicity)
        .sum();
    let mut out = Vec::new();
    if inf > 0 {
        out.push(ProjRoot {
            value: RootValue::Infinity,
            multiplicity: inf,
        });
    }
    let mut pts = Vec::new();
    let mut mult = Vec::new();
    for r in roots {
        if let Some(z) = r.as_finite() {
            pts.push(z);
            mult.push(r.multiplicity);
        }
    }
    for g in single_linkage(&pts, tol) {
        let m: usize = g.iter().map(|&i| mult[i]).sum();
        let center = g.iter().map(|&i| pts[i] * mult[i] as f64).sum::<Complex64>() / m as f64;
        out.push(ProjRoot {
            value: RootValue::Finite(center),
            multiplicity: m,
        });
    }
    out
}

/// Real root multiplicity pattern `(ρ | γ)`, both sides sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct Rrmp {
    pub rho: Vec<usize>,
    pub gamma: Vec<usize>,
}

/// Integer partition, sorted descending.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct Partition(pub Vec<usize>);

impl From<Partition> for String {
    fn from(p: Partition) -> String {
        p.to_string()
    }
}

impl TryFrom<String> for Partition {
    type Error = LcnError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl Partition {
    pub fn new(mut parts: Vec<usize>) -> Result<Self> {
        if parts.is_empty() || parts.contains(&0) {
            return Err(LcnError::InvalidPartition(format!("{parts:?}")));
        }
        parts.sort_unstable_by(|a, b| b.cmp(a));
        Ok(Partition(parts))
    }

    pub fn degree(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn is_trivial(&self) -> bool {
        self.0.iter().all(|&p| p == 1)
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|p| p.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

impl FromStr for Partition {
    type Err = LcnError;
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().trim_start_matches('(').trim_end_matches(')');
        let parts: std::result::Result<Vec<usize>, _> =
            t.split(',').map(|p| p.trim().parse::<usize>()).collect();
        Partition::new(parts.map_err(|e| LcnError::Parse(format!("partition {s:?}: {e}")))?)
    }
}

impl Rrmp {
    pub fn new(mut rho: Vec<usize>, mut gamma: Vec<usize>) -> Self {
        rho.sort_unstable();
        gamma.sort_unstable();
        Rrmp { rho, gamma }
    }

    pub fn degree(&self) -> usize {
        self.rho.iter().sum::<usize>() + 2 * self.gamma.iter().sum::<usize>()
    }

    pub fn real_count(&self) -> usize {
        self.rho.iter().sum()
    }

    pub fn odd_real_count(&self) -> usize {
        self.rho.iter().filter(|&&r| r % 2 == 1).count()
    }

    /// True when no root is repeated.
    pub fn is_simple(&self) -> bool {
        self.rho.iter().chain(&self.gamma).all(|&m| m == 1)
    }

    pub fn partition(&self) -> Partition {
        partition_of(self)
    }
}

pub fn partition_of(r: &Rrmp) -> Partition {
    let mut parts = r.rho.clone();
    for &g in &r.gamma {
        parts.push(g);
        parts.push(g);
    }
    parts.sort_unstable_by(|a, b| b.cmp(a));
    Partition(parts)
}

fn render_side(v: &[usize]) -> String {
    if v.is_empty() {
        "0".into()
    } else if v.iter().any(|&m| m >= 10) {
        v.iter().map(|m| m.to_string()).collect::<Vec<_>>().join(",")
    } else {
        v.iter().map(|m| m.to_string()).collect()
    }
}

impl fmt::Display for Rrmp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", render_side(&self.rho), render_side(&self.gamma))
    }
}

impl From<Rrmp> for String {
    fn from(r: Rrmp) -> String {
        r.to_string()
    }
}

impl TryFrom<String> for Rrmp {
    type Error = LcnError;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl FromStr for Rrmp {
    type Err = LcnError;
    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .trim()
            .split_once('|')
            .ok_or_else(|| LcnError::Parse(format!("rrmp {s:?} lacks '|'")))?;
        let side = |t: &str| -> Result<Vec<usize>> {
            let t = t.trim();
            if t == "0" || t.is_empty() {
                return Ok(vec![]);
            }
            let items: Vec<&str> = if t.contains(',') {
                t.split(',').map(str::trim).collect()
            } else {
                t.split("").filter(|c| !c.is_empty()).collect()
            };
            items
                .iter()
                .map(|c| match c.parse::<usize>() {
                    Ok(0) | Err(_) => Err(LcnError::Parse(format!("rrmp {s:?}"))),
                    Ok(v) => Ok(v),
                })
                .collect()
        };
        Ok(Rrmp::new(side(a)?, side(b)?))
    }
}

/// Rrmp of a multiset of roots belonging to one real form.
pub fn classify_roots(roots: &[ProjRoot], tol: RootTolerance) -> Rrmp {
    let t = tol.tol;
    let mut real = Vec::new();
    let mut upper = Vec::new();
    let mut lower = Vec::new();
    let mut inf = 0usize;
    for r in roots {
        match r.value {
            RootValue::Infinity => inf += r.multiplicity,
            RootValue::Finite(z) => {
                let bucket = if is_real_root(z, t) {
                    &mut real
                } else if z.im > 0.0 {
                    &mut upper
                } else {
                    &mut lower
                };
                bucket.extend(std::iter::repeat_n(z, r.multiplicity));
            }
        }
    }
    let mut rho: Vec<usize> = single_linkage(&real, t).iter().map(Vec::len).collect();
    if inf > 0 {
        rho.push(inf);
    }
    let up: Vec<usize> = single_linkage(&upper, t).iter().map(Vec::len).collect();
    let gamma = if upper.len() == lower.len() {
        up
    } else {
        // unbalanced halves only arise from a broken root set; pair by count
        let lo: Vec<usize> = single_linkage(&lower, t).iter().map(Vec::len).collect();
        if lo.len() > up.len() {
            lo
        } else {
            up
        }
    };
    Rrmp::new(rho, gamma)
}

pub fn classify_rrmp(p: &PolyR, tol: RootTolerance) -> Result<Rrmp> {
    Ok(classify_roots(&find_roots(p)?, tol))
}

// ---------------------------------------------------------------------------
// closed-form discriminants

fn require_degree(p: &PolyR, deg: usize) -> Result<()> {
    if p.degree() != deg {
        return Err(LcnError::DegreeMismatch {
            expected: deg,
            got: p.degree(),
        });
    }
    Ok(())
}

pub fn disc2(p: &PolyR) -> Result<f64> {
    require_degree(p, 2)?;
    let (a, b, c) = (p[0], p[1], p[2]);
    Ok(b * b - 4.0 * a * c)
}

fn disc2_scale(p: &PolyR) -> f64 {
    (p[1] * p[1]).max((4.0 * p[0] * p[2]).abs())
}

fn sylvester_det(p: &[f64], q: &[f64]) -> f64 {
    let (m, l) = (p.len() - 1, q.len() - 1);
    let n = m + l;
    let mut s = nalgebra::DMatrix::zeros(n, n);
    for r in 0..l {
        for (j, &c) in p.iter().enumerate() {
            s[(r, r + j)] = c;
        }
    }
    for r in 0..m {
        for (j, &c) in q.iter().enumerate() {
            s[(l + r, r + j)] = c;
        }
    }
    s.determinant()
}

/// Discriminant of a binary form of any degree, from the resultant of its
/// two partial derivatives. Agrees with the closed forms for degree ≤ 4.
pub fn discriminant(p: &PolyR) -> Result<f64> {
    let n = p.degree();
    if p.is_zero() {
        return Err(LcnError::ZeroPolynomial);
    }
    match n {
        0 | 1 => return Ok(1.0),
        2 => return disc2(p),
        _ => {}
    }
    let c = p.coeffs();
    let fx: Vec<f64> = (0..n).map(|i| (n - i) as f64 * c[i]).collect();
    let fy: Vec<f64> = (1..=n).map(|i| i as f64 * c[i]).collect();
    let sign = if (n * (n - 1) / 2) % 2 == 0 { 1.0 } else { -1.0 };
    Ok(sign * sylvester_det(&fx, &fy) / (n as f64).powi(n as i32 - 2))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CubicInvariants {
    pub disc: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

pub fn disc3(p: &PolyR) -> Result<CubicInvariants> {
    require_degree(p, 3)?;
    let (a, b, c, d) = (p[0], p[1], p[2], p[3]);
    Ok(CubicInvariants {
        disc: b * b * c * c - 4.0 * a * c * c * c - 4.0 * b * b * b * d - 27.0 * a * a * d * d
            + 18.0 * a * b * c * d,
        delta1: 3.0 * a * c - b * b,
        delta2: 9.0 * a * d - b * c,
        delta3: 3.0 * b * d - c * c,
    })
}

fn disc3_scales(p: &PolyR) -> [f64; 4] {
    let (a, b, c, d) = (p[0].abs(), p[1].abs(), p[2].abs(), p[3].abs());
    [
        [
            b * b * c * c,
            4.0 * a * c * c * c,
            4.0 * b * b * b * d,
            27.0 * a * a * d * d,
            18.0 * a * b * c * d,
        ]
        .iter()
        .fold(0.0_f64, |m, v| m.max(*v)),
        (3.0 * a * c).max(b * b),
        (9.0 * a * d).max(b * c),
        (3.0 * b * d).max(c * c),
    ]
}

/// Coefficients `(p, q, r)` of the translate `f(x - a_1/4·y, y)` of a monic quartic.
pub fn depress_quartic(f: &PolyR) -> Result<(f64, f64, f64)> {
    require_degree(f, 4)?;
    if f[0] != 1.0 {
        return Err(LcnError::NotMonic(f[0]));
    }
    let (a1, a2, a3, a4) = (f[1], f[2], f[3], f[4]);
    let p = a2 - 3.0 * a1 * a1 / 8.0;
    let q = a3 - a1 * a2 / 2.0 + a1 * a1 * a1 / 8.0;
    let r = a4 - a1 * a3 / 4.0 + a1 * a1 * a2 / 16.0 - 3.0 * a1.powi(4) / 256.0;
    Ok((p, q, r))
}

fn depress_scales(f: &PolyR) -> (f64, f64) {
    let (a1, a2, a3) = (f[1].abs(), f[2].abs(), f[3].abs());
    (
        a2.max(3.0 * a1 * a1 / 8.0),
        a3.max(a1 * a2 / 2.0).max(a1 * a1 * a1 / 8.0),
    )
}

pub fn disc4_depressed(p: f64, q: f64, r: f64) -> (f64, f64) {
    let delta = 256.0 * r * r * r - 128.0 * p * p * r * r + 144.0 * p * q * q * r
        + 16.0 * p.powi(4) * r
        - 27.0 * q.powi(4)
        - 4.0 * p * p * p * q * q;
    let delta_prime = 8.0 * p * r - 9.0 * q * q - 2.0 * p * p * p;
    (delta, delta_prime)
}

/// Monomial scales of `(δ, δ′)` used for the tie band.
pub fn disc4_scales(p: f64, q: f64, r: f64) -> (f64, f64) {
    let (p, q, r) = (p.abs(), q.abs(), r.abs());
    let s1 = [
        256.0 * r * r * r,
        128.0 * p * p * r * r,
        144.0 * p * q * q * r,
        16.0 * p.powi(4) * r,
        27.0 * q.powi(4),
        4.0 * p * p * p * q * q,
    ]
    .iter()
    .fold(0.0_f64, |m, v| m.max(*v));
    let s2 = (8.0 * p * r).max(9.0 * q * q).max(2.0 * p * p * p);
    (s1, s2)
}

/// Sign with values inside `TIE_REL·scale` mapped to zero.
fn tie_sign(v: f64, scale: f64) -> i8 {
    if v.abs() <= TIE_REL * scale {
        0
    } else if v > 0.0 {
        1
    } else {
        -1
    }
}

fn rr(rho: &[usize], gamma: &[usize]) -> Rrmp {
    Rrmp::new(rho.to_vec(), gamma.to_vec())
}

/// Classification from the closed-form sign charts (degrees 1 to 4).
pub fn rrmp_classify_by_signs(p: &PolyR) -> Result<Rrmp> {
    if p.degree() > 4 {
        return Err(LcnError::UnsupportedDegree(p.degree()));
    }
    if p[0] == 0.0 {
        return Err(LcnError::NotMonic(0.0));
    }
    match p.degree() {
        0 => Ok(rr(&[], &[])),
        1 => Ok(rr(&[1], &[])),
        2 => Ok(match tie_sign(disc2(p)?, disc2_scale(p)) {
            1 => rr(&[1, 1], &[]),
            0 => rr(&[2], &[]),
            _ => rr(&[], &[1]),
        }),
        3 => {
            let inv = disc3(p)?;
            let sc = disc3_scales(p);
            Ok(match tie_sign(inv.disc, sc[0]) {
                1 => rr(&[1, 1, 1], &[]),
                -1 => rr(&[1], &[1]),
                _ => {
                    let triple = tie_sign(inv.delta1, sc[1]) == 0
                        && tie_sign(inv.delta2, sc[2]) == 0
                        && tie_sign(inv.delta3, sc[3]) == 0;
                    if triple {
                        rr(&[3], &[])
                    } else {
                        rr(&[1, 2], &[])
                    }
                }
            })
        }
        _ => {
            let monic = p.scaled(1.0 / p[0]);
            let mut monic = monic;
            monic.0[0] = 1.0;
            let (pp, q, r) = depress_quartic(&monic)?;
            let (ps, qs) = depress_scales(&monic);
            let (d, dp) = disc4_depressed(pp, q, r);
            let (ds, dps) = disc4_scales(pp, q, r);
            let (sd, sdp, sp, sq) = (
                tie_sign(d, ds),
                tie_sign(dp, dps),
                tie_sign(pp, ps),
                tie_sign(q, qs),
            );
            Ok(match sd {
                1 => {
                    if sdp > 0 && sp < 0 {
                        rr(&[1, 1, 1, 1], &[])
                    } else {
                        rr(&[], &[1, 1])
                    }
                }
                -1 => rr(&[1, 1], &[1]),
                _ => match sdp {
                    1 => rr(&[1, 1, 2], &[]),
                    -1 => rr(&[2], &[1]),
                    _ => match sp {
                        -1 => {
                            if sq == 0 {
                                rr(&[2, 2], &[])
                            } else {
                                rr(&[1, 3], &[])
                            }
                        }
                        0 => rr(&[4], &[]),
                        _ => rr(&[], &[2]),
                    },
                },
            })
        }
    }
}

/// Relative size of the discriminant-type invariant closest to its tie band.
///
/// Used to decide whether a disagreement between the numerical and the
/// closed-form classification lies in the boundary band.
pub fn boundary_margin(p: &PolyR) -> Result<f64> {
    if p[0] == 0.0 {
        return Ok(0.0);
    }
    match p.degree() {
        2 => Ok(disc2(p)?.abs() / disc2_scale(p).max(f64::MIN_POSITIVE)),
        3 => {
            let inv = disc3(p)?;
            let sc = disc3_scales(p);
            Ok(inv.disc.abs() / sc[0].max(f64::MIN_POSITIVE))
        }
        4 => {
            let mut monic = p.scaled(1.0 / p[0]);
            monic.0[0] = 1.0;
            let (pp, q, r) = depress_quartic(&monic)?;
            let (ps, _) = depress_scales(&monic);
            let (d, dp) = disc4_depressed(pp, q, r);
            let (ds, dps) = disc4_scales(pp, q, r);
            let m = (d.abs() / ds.max(f64::MIN_POSITIVE))
                .min(dp.abs() / dps.max(f64::MIN_POSITIVE))
                .min(pp.abs() / ps.max(f64::MIN_POSITIVE));
            Ok(m)
        }
        d => Err(LcnError::UnsupportedDegree(d)),
    }
}

// ---------------------------------------------------------------------------
// compatibility with an architecture

/// Whether the rrmp splits into the architecture's bins without any bin
/// holding a repeated root.
pub fn is_compatible(r: &Rrmp, arch: &Architecture) -> Result<bool> {
    let bins: Vec<usize> = arch.k.iter().map(|k| k - 1).collect();
    is_compatible_bins(r, &bins)
}

pub fn is_compatible_bins(r: &Rrmp, bins: &[usize]) -> Result<bool> {
    let total: usize = bins.iter().sum();
    if r.degree() != total {
        return Err(LcnError::DegreeMismatch {
            expected: total,
            got: r.degree(),
        });
    }
    // (size, color), largest first
    let mut balls: Vec<(usize, usize)> = Vec::new();
    for (i, &m) in r.rho.iter().enumerate() {
        balls.extend(std::iter::repeat_n((1, i), m));
    }
    for (j, &m) in r.gamma.iter().enumerate() {
        balls.extend(std::iter::repeat_n((2, r.rho.len() + j), m));
    }
    balls.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut cap = bins.to_vec();
    let mut used: Vec<Vec<usize>> = vec![Vec::new(); bins.len()];
    Ok(place(&balls, 0, &mut cap, &mut used))
}

fn place(balls: &[(usize, usize)], idx: usize, cap: &mut [usize], used: &mut [Vec<usize>]) -> bool {
    if idx == balls.len() {
        return true;
    }
    let (size, color) = balls[idx];
    let mut tried: Vec<(usize, bool)> = Vec::new();
    for b in 0..cap.len() {
        if cap[b] < size || used[b].contains(&color) {
            continue;
        }
        // bins in the same state are interchangeable
        let sig = (cap[b], used[b].is_empty());
        if used[b].is_empty() && tried.contains(&sig) {
            continue;
        }
        tried.push(sig);
        cap[b] -= size;
        used[b].push(color);
        if place(balls, idx + 1, cap, used) {
            return true;
        }
        used[b].pop();
        cap[b] += size;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::Filter;

    fn p(v: &[f64]) -> PolyR {
        Filter::from_slice(v)
    }

    fn sorted_finite(roots: &[ProjRoot]) -> Vec<Complex64> {
        let mut v: Vec<Complex64> = roots.iter().filter_map(|r| r.as_finite()).collect();
        v.sort_by(|a, b| (a.re, a.im).partial_cmp(&(b.re, b.im)).unwrap());
        v
    }

    #[test]
    fn roots_difference_of_squares() {
        let r = sorted_finite(&find_roots(&p(&[1.0, 0.0, -1.0])).unwrap());
        assert!((r[0] - Complex64::new(-1.0, 0.0)).norm() < 1e-14);
        assert!((r[1] - Complex64::new(1.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn roots_of_biquadratic() {
        let r = sorted_finite(&find_roots(&p(&[2.0, 0.0, 5.0, 0.0, 2.0])).unwrap());
        let s2 = 2f64.sqrt();
        let mut expect = [s2, -s2, 1.0 / s2, -1.0 / s2].map(|t| Complex64::new(0.0, t));
        expect.sort_by(|a, b| (a.re, a.im).partial_cmp(&(b.re, b.im)).unwrap());
        for (a, b) in r.iter().zip(&expect) {
            assert!((a - b).norm() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn roots_with_leading_zero() {
        let r = find_roots(&p(&[0.0, 1.0, 1.0])).unwrap();
        assert_eq!(r.iter().filter(|x| x.value == RootValue::Infinity).count(), 1);
        let f = sorted_finite(&r);
        assert_eq!(f.len(), 1);
        assert!((f[0] + 1.0).norm() < 1e-15);
        assert_eq!(find_roots(&p(&[0.0, 0.0])), Err(LcnError::ZeroPolynomial));
    }

    #[test]
    fn exact_multiple_roots_cluster() {
        let tol = RootTolerance::default();
        // (x+y)^6
        let q = p(&[1.0, 6.0, 15.0, 20.0, 15.0, 6.0, 1.0]);
        assert_eq!(classify_rrmp(&q, tol).unwrap().to_string(), "6|0");
        // (x^2+y^2)^2 (x-2y)
        let q = p(&[1.0, 0.0, 2.0, 0.0, 1.0]).mul(&p(&[1.0, -2.0]));
        assert_eq!(classify_rrmp(&q, tol).unwrap().to_string(), "1|2");
    }

    #[test]
    fn classify_examples() {
        let tol = RootTolerance::default();
        assert_eq!(classify_rrmp(&p(&[1.0, 0.0, -1.0]), tol).unwrap(), Rrmp::new(vec![1, 1], vec![]));
        assert_eq!(
            classify_rrmp(&p(&[2.0, 0.0, 5.0, 0.0, 2.0]), tol).unwrap(),
            Rrmp::new(vec![], vec![1, 1])
        );
        assert_eq!(classify_rrmp(&p(&[1.0, 2.0, 1.0]), tol).unwrap(), Rrmp::new(vec![2], vec![]));
        // y^2 (5x^2 + 2y^2): a double root at infinity
        assert_eq!(
            classify_rrmp(&p(&[0.0, 0.0, 5.0, 0.0, 2.0]), tol).unwrap().to_string(),
            "2|1"
        );
    }

    #[test]
    fn partitions() {
        assert_eq!(partition_of(&"13|0".parse().unwrap()).0, vec![3, 1]);
        assert_eq!(partition_of(&"0|2".parse().unwrap()).0, vec![2, 2]);
        assert_eq!(partition_of(&"11|1".parse().unwrap()).0, vec![1, 1, 1, 1]);
        assert_eq!(Partition::new(vec![1, 2, 1]).unwrap().to_string(), "(2,1,1)");
        assert_eq!("(2, 1,1)".parse::<Partition>().unwrap().0, vec![2, 1, 1]);
    }

    #[test]
    fn rrmp_render_and_parse() {
        let r = Rrmp::new(vec![2, 1, 1], vec![]);
        assert_eq!(r.to_string(), "112|0");
        assert_eq!("112|0".parse::<Rrmp>().unwrap(), r);
        assert_eq!("0|11".parse::<Rrmp>().unwrap(), Rrmp::new(vec![], vec![1, 1]));
        let big = Rrmp::new(vec![12, 1], vec![]);
        assert_eq!(big.to_string(), "1,12|0");
        assert_eq!(big.to_string().parse::<Rrmp>().unwrap(), big);
        assert!("12".parse::<Rrmp>().is_err());
    }

    #[test]
    fn discriminant_values() {
        assert_eq!(disc2(&p(&[1.0, 0.0, -1.0])).unwrap(), 4.0);
        assert_eq!(disc3(&p(&[1.0, 0.0, -1.0, 0.0])).unwrap().disc, 4.0);
        assert_eq!(disc4_depressed(0.0, 0.0, 0.0), (0.0, 0.0));
        assert!(disc2(&p(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn depress_examples() {
        assert_eq!(depress_quartic(&p(&[1.0, 0.0, 0.0, 0.0, 0.0])).unwrap(), (0.0, 0.0, 0.0));
        assert_eq!(depress_quartic(&p(&[1.0, 4.0, 6.0, 4.0, 1.0])).unwrap(), (0.0, 0.0, 0.0));
        assert!(depress_quartic(&p(&[2.0, 0.0, 0.0, 0.0, 0.0])).is_err());
    }

    #[test]
    fn sign_chart_examples() {
        // x^3 + x y^2 + y^3 has negative discriminant
        assert_eq!(rrmp_classify_by_signs(&p(&[1.0, 0.0, 1.0, 1.0])).unwrap().to_string(), "1|1");
        // (x+y)^2 (x^2+y^2)
        let q = p(&[1.0, 2.0, 1.0]).mul(&p(&[1.0, 0.0, 1.0]));
        assert_eq!(rrmp_classify_by_signs(&q).unwrap().to_string(), "2|1");
        assert_eq!(rrmp_classify_by_signs(&p(&[1.0, -2.0, 1.0])).unwrap().to_string(), "2|0");
        // (x-y)^3 (x+2y)
        let q = p(&[1.0, -3.0, 3.0, -1.0]).mul(&p(&[1.0, 2.0]));
        assert_eq!(rrmp_classify_by_signs(&q).unwrap().to_string(), "13|0");
        let q = p(&[1.0, 0.0, -1.0]).mul(&p(&[1.0, 0.0, -1.0]));
        assert_eq!(rrmp_classify_by_signs(&q).unwrap().to_string(), "22|0");
        let q = p(&[1.0, 0.0, 1.0]).mul(&p(&[1.0, 0.0, 1.0]));
        assert_eq!(rrmp_classify_by_signs(&q).unwrap().to_string(), "0|2");
        assert!(rrmp_classify_by_signs(&p(&[1.0; 6])).is_err());
    }

    #[test]
    fn compatibility_examples() {
        let a322 = Architecture::stride_one(&[3, 2, 2]).unwrap();
        let a42 = Architecture::stride_one(&[4, 2]).unwrap();
        let r13: Rrmp = "13|0".parse().unwrap();
        assert!(is_compatible(&r13, &a322).unwrap());
        assert!(!is_compatible(&r13, &a42).unwrap());
        assert!(!is_compatible(&"4|0".parse().unwrap(), &a322).unwrap());
        assert!(is_compatible(&"1111|0".parse().unwrap(), &a42).unwrap());
        assert!(is_compatible(&"0|2".parse().unwrap(), &Architecture::stride_one(&[3, 3]).unwrap()).unwrap());
        assert!(is_compatible(&"1|1".parse().unwrap(), &a322).is_err());
    }

    #[test]
    fn compatibility_with_unit_bins() {
        assert!(is_compatible_bins(&"2|0".parse().unwrap(), &[1, 1, 0]).unwrap());
        assert!(!is_compatible_bins(&"0|1".parse().unwrap(), &[1, 1]).unwrap());
    }

    #[test]
    fn tolerance_bounds() {
        assert!(RootTolerance::new(0.0).is_err());
        assert!(RootTolerance::new(1.0).is_err());
        assert_eq!(RootTolerance::default().tol, 1e-4);
    }
    #[test]
    fn general_discriminant_agrees() {
        let q = p(&[2.0, -3.0, 0.5]);
        assert!((discriminant(&q).unwrap() - disc2(&q).unwrap()).abs() < 1e-12);
        let c = p(&[1.5, -2.0, 0.3, 0.7]);
        let d3 = disc3(&c).unwrap().disc;
        assert!((discriminant(&c).unwrap() - d3).abs() < 1e-10 * d3.abs().max(1.0));
        // a^(2n-2) Π_{i<j} (r_i - r_j)² for known roots
        for roots in [vec![1.0f64, -2.0, 0.5, 3.0], vec![0.25, -1.0, 2.0, 4.0, -3.0]] {
            let mut coeffs = vec![2.0];
            for r in &roots {
                let mut next = coeffs.clone();
                next.push(0.0);
                for i in 1..next.len() {
                    next[i] -= r * coeffs[i - 1];
                }
                coeffs = next;
            }
            let n = roots.len() as i32;
            let mut expect = 2.0f64.powi(2 * n - 2);
            for i in 0..roots.len() {
                for j in i + 1..roots.len() {
                    expect *= (roots[i] - roots[j]).powi(2);
                }
            }
            let got = discriminant(&p(&coeffs)).unwrap();
            assert!((got - expect).abs() < 1e-9 * expect.abs(), "{got} vs {expect}");
        }
        // root at infinity
        let lead0 = p(&[0.0, 1.0, -3.0, 2.0]);
        let d = discriminant(&lead0).unwrap();
        assert!((d - 1.0).abs() < 1e-12, "{d}");
    }

}
