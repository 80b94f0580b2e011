//! Function-space queries: filling test, membership, boundary and factorization.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{LcnError, Result};
use crate::poly::{product, Architecture, Filter, PolyR};
use crate::rootlab::{classify_rrmp, find_roots, is_real_root, RootTolerance, RootValue, Rrmp};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpaceRegion {
    Interior,
    Boundary,
    Exterior,
}

impl std::fmt::Display for SpaceRegion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SpaceRegion::Interior => "interior",
            SpaceRegion::Boundary => "boundary",
            SpaceRegion::Exterior => "exterior",
        })
    }
}

/// Filter sizes and strides after removing layers that do not affect the
/// image under `π`: the last stride is irrelevant, and a trailing size-one
/// layer is a scalar.
pub fn reduce(arch: &Architecture) -> (Vec<usize>, Vec<usize>) {
    let mut k = arch.k.clone();
    let mut s = arch.s.clone();
    *s.last_mut().unwrap() = 1;
    while k.len() > 1 && *k.last().unwrap() == 1 {
        k.pop();
        s.pop();
        *s.last_mut().unwrap() = 1;
    }
    (k, s)
}

pub fn is_filling(arch: &Architecture) -> bool {
    let (k, s) = reduce(arch);
    if s.iter().all(|&v| v == 1) {
        k.iter().filter(|&&v| v % 2 == 0).count() <= 1
    } else {
        false
    }
}

/// The reduced architecture has unit strides, so stride-one theory applies.
fn stride_one_sizes(arch: &Architecture) -> Result<Vec<usize>> {
    let (k, s) = reduce(arch);
    if s.iter().any(|&v| v != 1) {
        return Err(LcnError::StrideNotOne);
    }
    Ok(k)
}

fn check_degree(p: &PolyR, arch: &Architecture) -> Result<()> {
    if p.degree() != arch.degree() {
        return Err(LcnError::DegreeMismatch {
            expected: arch.degree(),
            got: p.degree(),
        });
    }
    Ok(())
}

fn even_count(k: &[usize]) -> usize {
    k.iter().filter(|&&v| v % 2 == 0).count()
}

pub fn membership(p: &PolyR, arch: &Architecture, tol: RootTolerance) -> Result<bool> {
    check_degree(p, arch)?;
    let k = stride_one_sizes(arch)?;
    let r = classify_rrmp(p, tol)?;
    Ok(r.real_count() >= even_count(&k))
}

/// Region of an rrmp for stride-one filter sizes `k`.
pub fn region_of_rrmp(r: &Rrmp, k: &[usize]) -> SpaceRegion {
    let e = even_count(k);
    if e < 2 {
        return SpaceRegion::Interior;
    }
    if r.real_count() < e {
        SpaceRegion::Exterior
    } else if r.odd_real_count() <= e - 2 {
        SpaceRegion::Boundary
    } else {
        SpaceRegion::Interior
    }
}

pub fn region(p: &PolyR, arch: &Architecture, tol: RootTolerance) -> Result<SpaceRegion> {
    check_degree(p, arch)?;
    let k = stride_one_sizes(arch)?;
    Ok(region_of_rrmp(&classify_rrmp(p, tol)?, &k))
}

/// Real filters of the architecture whose product is `p`, if one exists.
pub fn factor_into(p: &PolyR, arch: &Architecture, tol: RootTolerance) -> Result<Option<Vec<Filter>>> {
    check_degree(p, arch)?;
    arch.require_stride_one()?;
    let roots = find_roots(p)?;
    let lead_zeros = p.iter().take_while(|&&c| c == 0.0).count();
    let scale = p[lead_zeros];

    let mut linear: Vec<Filter> = Vec::new();
    let mut quadratic: Vec<Filter> = Vec::new();
    for r in &roots {
        match r.value {
            RootValue::Infinity => linear.push(Filter(vec![0.0, 1.0])),
            RootValue::Finite(z) if is_real_root(z, tol.tol) => linear.push(Filter(vec![1.0, -z.re])),
            RootValue::Finite(z) if z.im > 0.0 => quadratic.push(quad_factor(z)),
            RootValue::Finite(_) => {}
        }
    }
    let bins: Vec<usize> = arch.k.iter().map(|k| k - 1).collect();
    let n_odd = bins.iter().filter(|&&b| b % 2 == 1).count();
    if linear.len() < n_odd || linear.len() + 2 * quadratic.len() != arch.degree() {
        return Ok(None);
    }

    let mut contents: Vec<Vec<Filter>> = vec![Vec::new(); bins.len()];
    let mut cap = bins.clone();
    for (b, c) in cap.iter_mut().enumerate() {
        if *c % 2 == 1 {
            contents[b].push(linear.pop().unwrap());
            *c -= 1;
        }
    }
    // remaining capacities are even, so any order of placement fills them
    let mut items: Vec<Filter> = quadratic;
    items.extend(linear);
    for item in items {
        let size = item.len() - 1;
        let b = (0..cap.len())
            .filter(|&b| cap[b] >= size)
            .max_by_key(|&b| (cap[b], std::cmp::Reverse(b)))
            .expect("capacity accounting");
        cap[b] -= size;
        contents[b].push(item);
    }

    let mut filters: Vec<Filter> = contents
        .into_iter()
        .map(|fs| {
            if fs.is_empty() {
                Filter(vec![1.0])
            } else {
                product(&fs)
            }
        })
        .collect();
    filters[0] = filters[0].scaled(scale);
    Ok(Some(filters))
}

fn quad_factor(z: Complex64) -> Filter {
    Filter(vec![1.0, -2.0 * z.re, z.norm_sqr()])
}

/// Membership in the image of `k = (3, 2)`, `s = (2, 1)`: the coefficients
/// `(A, B, C, D, E)` must satisfy `AD² + B²E = BCD` and `C² ≥ 4AE`.
pub fn stride2_member(c: &[f64; 5], tol: f64) -> bool {
    let [a, b, cc, d, e] = *c;
    let scale = c.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let eq = a * d * d + b * b * e - b * cc * d;
    (eq.abs() <= tol * scale) && (cc * cc >= 4.0 * a * e - tol * scale)
}

/// Filters `((a, b, c), (d, e))` with `(d x² + e y²)(a x² + b xy + c y²)`
/// equal to the given quartic, or `None` outside the stride-two space.
pub fn stride2_factor(c: &[f64; 5], tol: f64) -> Option<([f64; 3], [f64; 2])> {
    if !stride2_member(c, tol) {
        return None;
    }
    let [a0, b0, c0, d0, e0] = *c;
    let ztol = tol * c.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    let is_zero = |v: f64| v.abs() <= ztol;

    if is_zero(e0) && is_zero(d0) {
        return Some(([a0, b0, c0], [1.0, 0.0]));
    }
    if is_zero(e0) {
        return Some(([c0 / d0, 1.0, 0.0], [b0, d0]));
    }
    let (a, b, cc, d) = (a0 / e0, b0 / e0, c0 / e0, d0 / e0);
    let (fa, fd) = if !is_zero(d) && !is_zero(b) {
        (a * d / b, b / d)
    } else if !is_zero(d) {
        (cc, 0.0)
    } else if !is_zero(a) {
        let disc = (cc * cc / 4.0 - a).max(0.0).sqrt();
        let mut root = cc / 2.0 + disc;
        if root.abs() < (cc / 2.0 - disc).abs() {
            root = cc / 2.0 - disc;
        }
        (a / root, root)
    } else {
        (cc, 0.0)
    };
    // quadratic factor (fa, d, 1), even factor (fd, 1), rescaled by E
    Some(([fa, d, 1.0], [fd * e0, e0]))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FuncSpaceReport {
    pub filling: bool,
    pub e: usize,
    pub rrmp: String,
    pub region: SpaceRegion,
}

pub fn analyze(p: &PolyR, arch: &Architecture, tol: RootTolerance) -> Result<FuncSpaceReport> {
    check_degree(p, arch)?;
    let k = stride_one_sizes(arch)?;
    let r = classify_rrmp(p, tol)?;
    Ok(FuncSpaceReport {
        filling: is_filling(arch),
        e: even_count(&k),
        rrmp: r.to_string(),
        region: region_of_rrmp(&r, &k),
    })
}
