//! Filters, architectures and their polynomial identification.
//!
//! A filter `w` of width `k` is stored highest-x-power first and read as the
//! binary form `w_0 x^{k-1} + w_1 x^{k-2} y + ... + w_{k-1} y^{k-1}`. With that
//! ordering, `π` is the identity on coefficient vectors and composing stride-one
//! layers is plain coefficient convolution.

use std::ops::Deref;

use nalgebra::DMatrix;
use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{LcnError, Result};

/// Layer dimensions `d_0..d_L`, filter sizes `k_1..k_L` and strides `s_1..s_L`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Architecture {
    pub d: Vec<usize>,
    pub k: Vec<usize>,
    pub s: Vec<usize>,
}

impl Architecture {
    pub fn new(d: Vec<usize>, k: Vec<usize>, s: Vec<usize>) -> Result<Self> {
        let arch = Architecture { d, k, s };
        arch.validate()?;
        Ok(arch)
    }

    /// Builds the dimensions backwards from the output width `d_last`.
    pub fn from_filters(k: &[usize], s: &[usize], d_last: usize) -> Result<Self> {
        if k.len() != s.len() {
            return Err(LcnError::InvalidArchitecture(format!(
                "{} filter sizes but {} strides",
                k.len(),
                s.len()
            )));
        }
        if k.is_empty() || d_last == 0 {
            return Err(LcnError::InvalidArchitecture(
                "need at least one layer and a positive output width".into(),
            ));
        }
        let mut d = vec![d_last];
        for l in (0..k.len()).rev() {
            let last = *d.last().unwrap();
            d.push((last - 1) * s[l] + k[l]);
        }
        d.reverse();
        Architecture::new(d, k.to_vec(), s.to_vec())
    }

    /// Stride-one architecture with a single output neuron.
    pub fn stride_one(k: &[usize]) -> Result<Self> {
        Architecture::from_filters(k, &vec![1; k.len()], 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(LcnError::InvalidArchitecture(m));
        if self.k.is_empty() {
            return bad("no layers".into());
        }
        if self.k.len() != self.s.len() || self.d.len() != self.k.len() + 1 {
            return bad(format!(
                "lengths d={}, k={}, s={} are inconsistent",
                self.d.len(),
                self.k.len(),
                self.s.len()
            ));
        }
        if self.k.iter().chain(&self.s).chain(&self.d).any(|&v| v == 0) {
            return bad("all dimensions, filter sizes and strides must be positive".into());
        }
        for l in 0..self.k.len() {
            let (din, kl, sl) = (self.d[l], self.k[l], self.s[l]);
            if din < kl || (din - kl) % sl != 0 || (din - kl) / sl + 1 != self.d[l + 1] {
                return bad(format!(
                    "layer {}: d_in={din}, k={kl}, s={sl} does not give d_out={}",
                    l + 1,
                    self.d[l + 1]
                ));
            }
        }
        Ok(())
    }

    pub fn layers(&self) -> usize {
        self.k.len()
    }

    pub fn all_stride_one(&self) -> bool {
        self.s.iter().all(|&s| s == 1)
    }

    /// Size of the end-to-end filter.
    pub fn end_to_end_size(&self) -> usize {
        let mut size = self.k[0];
        let mut stride = self.s[0];
        for l in 1..self.k.len() {
            size += (self.k[l] - 1) * stride;
            stride *= self.s[l];
        }
        size
    }

    pub fn end_to_end_stride(&self) -> usize {
        self.s.iter().product()
    }

    /// Degree of the end-to-end polynomial.
    pub fn degree(&self) -> usize {
        self.end_to_end_size() - 1
    }

    /// Number of even filter sizes.
    pub fn even_count(&self) -> usize {
        self.k.iter().filter(|&&k| k % 2 == 0).count()
    }

    pub fn n_params(&self) -> usize {
        self.k.iter().sum()
    }

    pub fn require_stride_one(&self) -> Result<()> {
        if self.all_stride_one() {
            Ok(())
        } else {
            Err(LcnError::StrideNotOne)
        }
    }
}

/// Coefficient vector of one convolutional layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Filter(pub Vec<f64>);

/// A binary form stored with the same layout as [`Filter`].
pub type PolyR = Filter;

impl Filter {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(LcnError::InvalidFilter("empty filter".into()));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(LcnError::InvalidFilter("non-finite coefficient".into()));
        }
        Ok(Filter(coeffs))
    }

    pub fn from_slice(c: &[f64]) -> Self {
        Filter(c.to_vec())
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.0
    }

    pub fn degree(&self) -> usize {
        self.0.len() - 1
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, c| m.max(c.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&c| c == 0.0)
    }

    pub fn scaled(&self, a: f64) -> Filter {
        Filter(self.0.iter().map(|c| a * c).collect())
    }

    /// Product of binary forms (stride-one composition).
    pub fn mul(&self, other: &Filter) -> Filter {
        Filter(convolve(&self.0, &other.0))
    }

    /// Evaluates the form at `(x, y)`.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let n = self.degree() as i32;
        self.0
            .iter()
            .enumerate()
            .map(|(i, c)| c * x.powi(n - i as i32) * y.powi(i as i32))
            .sum()
    }
}

impl Deref for Filter {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for Filter {
    fn from(v: Vec<f64>) -> Self {
        Filter(v)
    }
}

/// Full linear convolution of coefficient sequences.
pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

/// Filter of the composition `W_2 ∘ W_1` where `W_1` has stride `s1`.
pub fn compose_filters(w2: &Filter, s1: usize, w1: &Filter) -> Filter {
    let mut u = vec![0.0; (w2.len() - 1) * s1 + w1.len()];
    for (j, &a) in w2.iter().enumerate() {
        for (l, &b) in w1.iter().enumerate() {
            u[j * s1 + l] += a * b;
        }
    }
    Filter(u)
}

pub fn check_filters(arch: &Architecture, filters: &[Filter]) -> Result<()> {
    if filters.len() != arch.layers() {
        return Err(LcnError::SizeMismatch {
            expected: arch.layers(),
            got: filters.len(),
        });
    }
    for (f, &k) in filters.iter().zip(&arch.k) {
        if f.len() != k {
            return Err(LcnError::SizeMismatch {
                expected: k,
                got: f.len(),
            });
        }
    }
    Ok(())
}

/// End-to-end filter and stride of the network.
pub fn end_to_end(arch: &Architecture, filters: &[Filter]) -> Result<(Filter, usize)> {
    check_filters(arch, filters)?;
    Ok(end_to_end_unchecked(&arch.s, filters))
}

pub(crate) fn end_to_end_unchecked(strides: &[usize], filters: &[Filter]) -> (Filter, usize) {
    let mut acc = filters[0].clone();
    let mut stride = strides[0];
    for l in 1..filters.len() {
        acc = compose_filters(&filters[l], stride, &acc);
        stride *= strides[l];
    }
    (acc, stride)
}

/// Product of stride-one filters.
pub fn product(filters: &[Filter]) -> Filter {
    let mut acc = filters[0].clone();
    for f in &filters[1..] {
        acc = acc.mul(f);
    }
    acc
}

/// Convolutional (generalized Toeplitz) matrix of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvMatrix {
    pub rows: usize,
    pub cols: usize,
    pub filter: Filter,
    pub stride: usize,
}

impl ConvMatrix {
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let off = i * self.stride;
        if j >= off && j - off < self.filter.len() {
            self.filter[j - off]
        } else {
            0.0
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |i, j| self.entry(i, j))
    }
}

pub fn toeplitz(f: &Filter, stride: usize, d_in: usize) -> Result<ConvMatrix> {
    let k = f.len();
    if stride == 0 || d_in < k || (d_in - k) % stride != 0 {
        return Err(LcnError::IndivisibleDimension { d_in, k, stride });
    }
    Ok(ConvMatrix {
        rows: (d_in - k) / stride + 1,
        cols: d_in,
        filter: f.clone(),
        stride,
    })
}

/// Circulant `d0 × d0` matrix; row `r` starts at column `r·stride mod d0`.
pub fn circulant(f: &Filter, stride: usize, d0: usize) -> Result<DMatrix<f64>> {
    if f.len() > d0 {
        return Err(LcnError::FilterTooLong { k: f.len(), d0 });
    }
    let mut m = DMatrix::zeros(d0, d0);
    for r in 0..d0 {
        let start = (r * stride) % d0;
        for (i, &c) in f.iter().enumerate() {
            m[(r, (start + i) % d0)] += c;
        }
    }
    Ok(m)
}

/// `π_s`: coefficient `f_i` sits at `x^{(k-1-i)s} y^{is}`.
pub fn pi_s(f: &Filter, s: usize) -> PolyR {
    let s = s.max(1);
    let mut out = vec![0.0; (f.len() - 1) * s + 1];
    for (i, &c) in f.iter().enumerate() {
        out[i * s] = c;
    }
    Filter(out)
}

/// Stride-one convolution over a `D`-dimensional input.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvTensorD {
    pub filter: ArrayD<f64>,
    pub input_shape: Vec<usize>,
}

impl ConvTensorD {
    pub fn new(filter: ArrayD<f64>, input_shape: Vec<usize>) -> Result<Self> {
        let dim = filter.ndim();
        if dim == 0 || dim > 3 {
            return Err(LcnError::UnsupportedDegree(dim));
        }
        if input_shape.len() != dim {
            return Err(LcnError::SizeMismatch {
                expected: dim,
                got: input_shape.len(),
            });
        }
        for (&k, &d) in filter.shape().iter().zip(&input_shape) {
            if k == 0 || k > d {
                return Err(LcnError::FilterTooLong { k, d0: d });
            }
        }
        Ok(ConvTensorD {
            filter,
            input_shape,
        })
    }

    pub fn dim(&self) -> usize {
        self.filter.ndim()
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.input_shape
            .iter()
            .zip(self.filter.shape())
            .map(|(d, k)| d - k + 1)
            .collect()
    }

    /// Dense tensor with index `[i, j]` (output then input) equal to `w[j - i]`.
    pub fn materialize(&self) -> ArrayD<f64> {
        let out = self.output_shape();
        let dim = self.dim();
        let shape: Vec<usize> = out.iter().chain(&self.input_shape).copied().collect();
        let mut t = ArrayD::zeros(IxDyn(&shape));
        let kshape = self.filter.shape().to_vec();
        for (idx, v) in t.indexed_iter_mut() {
            let mut widx = Vec::with_capacity(dim);
            let mut inside = true;
            for h in 0..dim {
                let (i, j) = (idx[h], idx[dim + h]);
                if j < i || j - i >= kshape[h] {
                    inside = false;
                    break;
                }
                widx.push(j - i);
            }
            if inside {
                *v = self.filter[IxDyn(&widx)];
            }
        }
        t
    }

    /// Applies the convolution to an input array.
    pub fn apply(&self, x: &ArrayD<f64>) -> Result<ArrayD<f64>> {
        if x.shape() != self.input_shape.as_slice() {
            return Err(LcnError::SizeMismatch {
                expected: self.input_shape.iter().product(),
                got: x.len(),
            });
        }
        let out_shape = self.output_shape();
        let mut y = ArrayD::zeros(IxDyn(&out_shape));
        for (i, v) in y.indexed_iter_mut() {
            let mut acc = 0.0;
            for (j, &w) in self.filter.indexed_iter() {
                let src: Vec<usize> = (0..self.dim()).map(|h| i[h] + j[h]).collect();
                acc += w * x[IxDyn(&src)];
            }
            *v = acc;
        }
        Ok(y)
    }
}

/// D-dimensional full convolution of coefficient arrays.
pub fn convolve_nd(a: &ArrayD<f64>, b: &ArrayD<f64>) -> ArrayD<f64> {
    let shape: Vec<usize> = a
        .shape()
        .iter()
        .zip(b.shape())
        .map(|(x, y)| x + y - 1)
        .collect();
    let mut out = ArrayD::zeros(IxDyn(&shape));
    for (i, &ai) in a.indexed_iter() {
        for (j, &bj) in b.indexed_iter() {
            let m: Vec<usize> = (0..a.ndim()).map(|h| i[h] + j[h]).collect();
            out[IxDyn(&m)] += ai * bj;
        }
    }
    out
}

/// `t2 ∘ t1`.
pub fn compose_tensors(t2: &ConvTensorD, t1: &ConvTensorD) -> Result<ConvTensorD> {
    if t2.dim() != t1.dim() {
        return Err(LcnError::SizeMismatch {
            expected: t1.dim(),
            got: t2.dim(),
        });
    }
    if t1.output_shape() != t2.input_shape {
        return Err(LcnError::SizeMismatch {
            expected: t1.output_shape().iter().product(),
            got: t2.input_shape.iter().product(),
        });
    }
    ConvTensorD::new(
        convolve_nd(&t2.filter, &t1.filter),
        t1.input_shape.clone(),
    )
}

/// Multi-homogeneous polynomial of a tensor: entry `w_α` is the coefficient of
/// the monomial with exponent `α` in the first variable of each factor.
pub fn pi_tensor(t: &ConvTensorD) -> ArrayD<f64> {
    t.filter.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn f(v: &[f64]) -> Filter {
        Filter::from_slice(v)
    }

    #[test]
    fn compose_two_linear() {
        let (a, b, c, d) = (2.0, 3.0, 5.0, 7.0);
        let u = compose_filters(&f(&[c, d]), 1, &f(&[a, b]));
        assert_eq!(u.0, vec![a * c, a * d + b * c, b * d]);
    }

    #[test]
    fn compose_identity_filter() {
        let u = compose_filters(&f(&[1.0]), 7, &f(&[1.0, 2.0, 3.0]));
        assert_eq!(u.0, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn compose_stride_two() {
        let (a, b, c, d, e) = (2.0, 3.0, 5.0, 7.0, 11.0);
        let u = compose_filters(&f(&[d, e]), 2, &f(&[a, b, c]));
        assert_eq!(u.0, vec![a * d, b * d, a * e + c * d, b * e, c * e]);
    }

    #[test]
    fn end_to_end_shapes() {
        let arch = Architecture::stride_one(&[2, 2]).unwrap();
        let (u, s) = end_to_end(&arch, &[f(&[1.0, 2.0]), f(&[3.0, 4.0])]).unwrap();
        assert_eq!((u.len(), s), (3, 1));

        let arch = Architecture::from_filters(&[3, 2], &[2, 1], 1).unwrap();
        assert_eq!(arch.d, vec![5, 2, 1]);
        let (u, s) = end_to_end(&arch, &[f(&[1.0, 2.0, 3.0]), f(&[4.0, 5.0])]).unwrap();
        assert_eq!((u.len(), s), (5, 2));
        assert_eq!(arch.end_to_end_size(), 5);

        let arch = Architecture::stride_one(&[4]).unwrap();
        let (u, _) = end_to_end(&arch, &[f(&[1.0, -1.0, 2.0, 0.5])]).unwrap();
        assert_eq!(u.0, vec![1.0, -1.0, 2.0, 0.5]);
    }

    #[test]
    fn end_to_end_rejects_wrong_sizes() {
        let arch = Architecture::stride_one(&[2, 3]).unwrap();
        assert!(end_to_end(&arch, &[f(&[1.0, 2.0]), f(&[1.0, 2.0])]).is_err());
        assert!(end_to_end(&arch, &[f(&[1.0, 2.0])]).is_err());
    }

    #[test]
    fn architecture_validation() {
        assert!(Architecture::new(vec![7, 3], vec![3], vec![2]).is_ok());
        assert!(Architecture::new(vec![6, 3], vec![3], vec![2]).is_err());
        assert!(Architecture::new(vec![7, 3], vec![3, 1], vec![2]).is_err());
        assert!(Architecture::new(vec![7, 3], vec![0], vec![2]).is_err());
        let a = Architecture::stride_one(&[3, 2, 2]).unwrap();
        assert_eq!(a.d, vec![5, 3, 2, 1]);
        assert_eq!(a.even_count(), 2);
    }

    #[test]
    fn toeplitz_stride_two() {
        let m = toeplitz(&f(&[1.0, 2.0, 3.0]), 2, 7).unwrap().to_dense();
        let expect = DMatrix::from_row_slice(
            3,
            7,
            &[
                1., 2., 3., 0., 0., 0., 0., //
                0., 0., 1., 2., 3., 0., 0., //
                0., 0., 0., 0., 1., 2., 3.,
            ],
        );
        assert_eq!(m, expect);
    }

    #[test]
    fn toeplitz_small_cases() {
        let m = toeplitz(&f(&[1.0]), 1, 1).unwrap().to_dense();
        assert_eq!(m, DMatrix::from_element(1, 1, 1.0));
        let m = toeplitz(&f(&[2.0, 3.0]), 1, 3).unwrap().to_dense();
        assert_eq!(m, DMatrix::from_row_slice(2, 3, &[2., 3., 0., 0., 2., 3.]));
        assert!(matches!(
            toeplitz(&f(&[1.0, 2.0]), 2, 5),
            Err(LcnError::IndivisibleDimension { .. })
        ));
    }

    #[test]
    fn circulant_examples() {
        let (a, b, c, d) = (2.0, 3.0, 5.0, 7.0);
        let m1 = circulant(&f(&[a, b]), 1, 3).unwrap();
        assert_eq!(
            m1,
            DMatrix::from_row_slice(3, 3, &[a, b, 0., 0., a, b, b, 0., a])
        );
        let m2 = circulant(&f(&[c, d]), 1, 3).unwrap();
        let (p, q, r) = (a * c, a * d + b * c, b * d);
        assert_eq!(
            &m2 * &m1,
            DMatrix::from_row_slice(3, 3, &[p, q, r, r, p, q, q, r, p])
        );
        assert_eq!(circulant(&f(&[1.0]), 1, 4).unwrap(), DMatrix::identity(4, 4));
        assert!(circulant(&f(&[1.0, 2.0, 3.0]), 1, 2).is_err());
    }

    #[test]
    fn pi_s_examples() {
        assert_eq!(pi_s(&f(&[2.0, 3.0]), 2).0, vec![2.0, 0.0, 3.0]);
        assert_eq!(pi_s(&f(&[1.0, 1.0]), 3).0, vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(pi_s(&f(&[4.0, 5.0, 6.0]), 1).0, vec![4.0, 5.0, 6.0]);
    }

    #[test]
    fn tensor_slices() {
        let w = array![[1.0, 2.0], [3.0, 4.0]].into_dyn();
        let t = ConvTensorD::new(w, vec![3, 2]).unwrap();
        assert_eq!(t.output_shape(), vec![2, 1]);
        let m = t.materialize();
        assert_eq!(m.shape(), &[2, 1, 3, 2]);
        let s00 = m.slice(ndarray::s![0, 0, .., ..]).to_owned();
        assert_eq!(s00, array![[1.0, 2.0], [3.0, 4.0], [0.0, 0.0]]);
        let s10 = m.slice(ndarray::s![1, 0, .., ..]).to_owned();
        assert_eq!(s10, array![[0.0, 0.0], [1.0, 2.0], [3.0, 4.0]]);
    }

    #[test]
    fn tensor_identity_composition() {
        let w = array![[1.0, -2.0], [0.5, 4.0]].into_dyn();
        let t1 = ConvTensorD::new(w.clone(), vec![4, 4]).unwrap();
        let one = ConvTensorD::new(array![[1.0]].into_dyn(), vec![3, 3]).unwrap();
        let c = compose_tensors(&one, &t1).unwrap();
        assert_eq!(c.filter, w);
        let bad = ConvTensorD::new(array![[1.0]].into_dyn(), vec![2, 3]).unwrap();
        assert!(compose_tensors(&bad, &t1).is_err());
    }

    #[test]
    fn tensor_apply_matches_composition() {
        let t1 = ConvTensorD::new(array![[1.0, 2.0], [3.0, -1.0]].into_dyn(), vec![4, 3]).unwrap();
        let t2 = ConvTensorD::new(array![[0.5, -2.0]].into_dyn(), vec![3, 2]).unwrap();
        let x = ArrayD::from_shape_fn(IxDyn(&[4, 3]), |i| (i[0] * 3 + i[1]) as f64 - 4.0);
        let direct = t2.apply(&t1.apply(&x).unwrap()).unwrap();
        let comp = compose_tensors(&t2, &t1).unwrap();
        assert_eq!(direct, comp.apply(&x).unwrap());
    }

    #[test]
    fn filter_eval() {
        let p = f(&[1.0, 2.0, 1.0]);
        assert_eq!(p.eval(1.0, 1.0), 4.0);
        assert_eq!(p.eval(1.0, -1.0), 0.0);
    }
}
