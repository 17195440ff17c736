//! Dense row-major tensors of rank 0 to 4.
//!
//! Two element precisions exist: `f32` for weights and training, `f64` for
//! gradient checking and analysis. Both implement [`Real`].

use std::fmt::{self, Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::Float;

use crate::error::{Error, Result};
use crate::rng::Rng;

pub const MAX_RANK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Single,
    Double,
}

/// Element type of a [`Tensor`].
pub trait Real:
    Float
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + Sum
    + AddAssign
    + SubAssign
    + MulAssign
    + 'static
{
    const PRECISION: Precision;

    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Raw strided GEMM: `C = alpha * A * B + beta * C`.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-aliasing matrices of
    /// the given sizes (see `matrixmultiply::sgemm`).
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    const PRECISION: Precision = Precision::Single;

    fn of(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    const PRECISION: Precision = Precision::Double;

    fn of(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// `C = op(A) * op(B) + beta * C` on contiguous row-major buffers.
///
/// `op(A)` is `m x k`; when `a_t` is set, `a` holds the `k x m` matrix whose
/// transpose is used. Same for `b` (`k x n`, stored `n x k` when `b_t`).
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    beta: T,
    c: &mut [T],
) {
    assert_eq!(a.len(), m * k, "gemm: A has wrong length");
    assert_eq!(b.len(), k * n, "gemm: B has wrong length");
    assert_eq!(c.len(), m * n, "gemm: C has wrong length");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: lengths checked above; `c` is a unique borrow distinct from a, b.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

/// Named elementwise functions accepted by [`Tensor::map`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryFn {
    Identity,
    Neg,
    Abs,
    Relu,
    Tanh,
    Sigmoid,
}

impl UnaryFn {
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            UnaryFn::Identity => x,
            UnaryFn::Neg => -x,
            UnaryFn::Abs => x.abs(),
            UnaryFn::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            UnaryFn::Tanh => x.tanh(),
            UnaryFn::Sigmoid => {
                // Split by sign so exp never overflows.
                if x >= T::zero() {
                    T::one() / (T::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (T::one() + e)
                }
            }
        }
    }
}

#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Debug> Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.dims)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

fn check_dims(dims: &[usize]) -> Result<usize> {
    if dims.len() > MAX_RANK {
        return Err(Error::shape(format!(
            "rank {} exceeds maximum {MAX_RANK}",
            dims.len()
        )));
    }
    if let Some(pos) = dims.iter().position(|&d| d == 0) {
        return Err(Error::shape(format!("dimension {pos} of {dims:?} is zero")));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::shape(format!("element count of {dims:?} overflows")))
}

impl<T: Real> Tensor<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let len = check_dims(&dims)?;
        if len != data.len() {
            return Err(Error::shape(format!(
                "dims {dims:?} need {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn full(dims: &[usize], value: T) -> Result<Self> {
        let len = check_dims(dims)?;
        Ok(Self {
            dims: dims.to_vec(),
            data: vec![value; len],
        })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::full(dims, T::zero())
    }

    pub fn scalar(value: T) -> Self {
        Self {
            dims: Vec::new(),
            data: vec![value],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Size of the leading axis; 1 for scalars.
    pub fn batch(&self) -> usize {
        self.dims.first().copied().unwrap_or(1)
    }

    /// Elements per leading-axis slice.
    pub fn sample_len(&self) -> usize {
        self.data.len() / self.batch()
    }

    /// The `i`-th slice along the leading axis.
    pub fn sample(&self, i: usize) -> &[T] {
        let s = self.sample_len();
        &self.data[i * s..(i + 1) * s]
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Self> {
        self.clone().into_reshape(dims)
    }

    pub fn into_reshape(self, dims: &[usize]) -> Result<Self> {
        let len = check_dims(dims)?;
        if len != self.data.len() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} ({} elements) to {dims:?} ({len} elements)",
                self.dims,
                self.data.len()
            )));
        }
        Ok(Self {
            dims: dims.to_vec(),
            data: self.data,
        })
    }

    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, k) = match self.dims[..] {
            [m, k] => (m, k),
            _ => return Err(Error::shape(format!("matmul lhs {:?} not rank 2", self.dims))),
        };
        let (k2, n) = match rhs.dims[..] {
            [k2, n] => (k2, n),
            _ => return Err(Error::shape(format!("matmul rhs {:?} not rank 2", rhs.dims))),
        };
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul inner dims differ: {:?} x {:?}",
                self.dims, rhs.dims
            )));
        }
        let mut out = vec![T::zero(); m * n];
        gemm(m, k, n, &self.data, false, &rhs.data, false, T::zero(), &mut out);
        Ok(Tensor {
            dims: vec![m, n],
            data: out,
        })
    }

    pub fn map(&self, f: UnaryFn) -> Tensor<T> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&x| f.apply(x)).collect(),
        }
    }

    /// Sum over `axis`, or over everything when `axis` is `None`.
    pub fn reduce_sum(&self, axis: Option<usize>) -> Result<Tensor<T>> {
        self.reduce(axis, T::zero(), |a, b| a + b)
    }

    /// Max over `axis`, or over everything when `axis` is `None`.
    pub fn reduce_max(&self, axis: Option<usize>) -> Result<Tensor<T>> {
        self.reduce(axis, T::neg_infinity(), |a, b| if b > a { b } else { a })
    }

    fn reduce(&self, axis: Option<usize>, init: T, op: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        let Some(axis) = axis else {
            return Ok(Tensor::scalar(self.data.iter().fold(init, |a, &b| op(a, b))));
        };
        if axis >= self.rank() {
            return Err(Error::shape(format!(
                "axis {axis} out of range for {:?}",
                self.dims
            )));
        }
        let outer: usize = self.dims[..axis].iter().product();
        let len = self.dims[axis];
        let inner: usize = self.dims[axis + 1..].iter().product();
        let mut out = vec![init; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let src = &self.data[(o * len + a) * inner..(o * len + a + 1) * inner];
                let dst = &mut out[o * inner..(o + 1) * inner];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = op(*d, s);
                }
            }
        }
        let mut dims = self.dims.clone();
        dims.remove(axis);
        Ok(Tensor { dims, data: out })
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self.data.iter().map(|&x| U::of(x.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Stack equally shaped per-sample buffers along a new leading axis.
    pub fn stack(sample_dims: &[usize], samples: &[Vec<T>]) -> Result<Tensor<T>> {
        if samples.is_empty() {
            return Err(Error::Empty("cannot stack zero samples".into()));
        }
        let per = check_dims(sample_dims)?;
        let mut data = Vec::with_capacity(per * samples.len());
        for (i, s) in samples.iter().enumerate() {
            if s.len() != per {
                return Err(Error::shape(format!(
                    "sample {i} has {} elements, expected {per}",
                    s.len()
                )));
            }
            data.extend_from_slice(s);
        }
        let mut dims = vec![samples.len()];
        dims.extend_from_slice(sample_dims);
        Tensor::new(dims, data)
    }

    /// Leading-axis slices `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> Result<Tensor<T>> {
        if indices.is_empty() {
            return Err(Error::Empty("cannot gather zero samples".into()));
        }
        let s = self.sample_len();
        let mut data = Vec::with_capacity(s * indices.len());
        for &i in indices {
            if i >= self.batch() {
                return Err(Error::shape(format!(
                    "index {i} out of range for leading axis {}",
                    self.batch()
                )));
            }
            data.extend_from_slice(self.sample(i));
        }
        let mut dims = self.dims.clone();
        dims[0] = indices.len();
        Ok(Tensor { dims, data })
    }
}

/// Tensor of seeded normal samples.
pub fn rng_normal<T: Real>(rng: &mut Rng, dims: &[usize], mean: f64, std: f64) -> Result<Tensor<T>> {
    if !(std >= 0.0) {
        return Err(Error::InvalidParam(format!("normal std must be >= 0, got {std}")));
    }
    let len = check_dims(dims)?;
    let data = (0..len).map(|_| T::of(rng.normal(mean, std))).collect();
    Tensor::new(dims.to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::rng::Rng;

    fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    #[test]
    fn full_and_scalar() {
        let t = Tensor::<f32>::full(&[2, 2], 0.0).unwrap();
        assert_eq!(t.data(), &[0.0; 4]);
        let s = Tensor::<f32>::full(&[], 3.5).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.data()[0], 3.5);
        let img = Tensor::<f32>::full(&[224, 224, 3], 1.0).unwrap();
        assert_eq!(img.len(), 150_528);
        assert!(img.data().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn zero_dim_is_shape_error() {
        assert!(matches!(Tensor::<f32>::full(&[2, 0], 1.0), Err(Error::Shape(_))));
        assert!(matches!(Tensor::<f32>::zeros(&[1, 1, 1, 1, 1]), Err(Error::Shape(_))));
    }

    #[test]
    fn matmul_small_cases() {
        let id = Tensor::new(vec![2, 2], vec![1.0f64, 0.0, 0.0, 1.0]).unwrap();
        let m = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(id.matmul(&m).unwrap(), m);
        let a = Tensor::new(vec![1, 2], vec![1.0f64, 2.0]).unwrap();
        let b = Tensor::new(vec![2, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[11.0]);
        assert!(matches!(a.matmul(&a), Err(Error::Shape(_))));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = Rng::new(11);
        let a: Tensor<f64> = rng_normal(&mut rng, &[5, 7], 0.0, 1.0).unwrap();
        let b: Tensor<f64> = rng_normal(&mut rng, &[7, 3], 0.0, 1.0).unwrap();
        let c = a.matmul(&b).unwrap();
        let want = naive_matmul(a.data(), b.data(), 5, 7, 3);
        for (x, y) in c.data().iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn gemm_transposed_operands() {
        let mut rng = Rng::new(3);
        let a: Tensor<f64> = rng_normal(&mut rng, &[4, 6], 0.0, 1.0).unwrap();
        let b: Tensor<f64> = rng_normal(&mut rng, &[4, 5], 0.0, 1.0).unwrap();
        // aᵀ (6x4) * b (4x5)
        let mut c = vec![0.0; 30];
        gemm(6, 4, 5, a.data(), true, b.data(), false, 0.0, &mut c);
        let mut at = vec![0.0; 24];
        for i in 0..4 {
            for j in 0..6 {
                at[j * 4 + i] = a.data()[i * 6 + j];
            }
        }
        let want = naive_matmul(&at, b.data(), 6, 4, 5);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn matmul_associative_on_chains() {
        let mut rng = Rng::new(5);
        for _ in 0..10 {
            let a: Tensor<f64> = rng_normal(&mut rng, &[8, 8], 0.0, 1.0).unwrap();
            let b: Tensor<f64> = rng_normal(&mut rng, &[8, 8], 0.0, 1.0).unwrap();
            let c: Tensor<f64> = rng_normal(&mut rng, &[8, 8], 0.0, 1.0).unwrap();
            let l = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let r = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            for (x, y) in l.data().iter().zip(r.data()) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn reductions_and_reshape() {
        let ones = Tensor::<f32>::full(&[4, 4], 1.0).unwrap();
        assert_eq!(ones.reduce_sum(None).unwrap().data(), &[16.0]);
        let t = Tensor::new(vec![2, 3], vec![1.0f32, 5.0, 2.0, 7.0, 0.0, 3.0]).unwrap();
        assert_eq!(t.reduce_sum(Some(0)).unwrap().data(), &[8.0, 5.0, 5.0]);
        assert_eq!(t.reduce_max(Some(1)).unwrap().data(), &[5.0, 7.0]);
        assert_eq!(t.reduce_max(None).unwrap().data(), &[7.0]);
        let r = t.reshape(&[3, 2]).unwrap();
        assert_eq!(r.data(), t.data());
        assert_eq!(r.reshape(&[2, 3]).unwrap(), t);
        assert!(matches!(t.reshape(&[4, 2]), Err(Error::Shape(_))));
    }

    #[test]
    fn flatten_bottleneck_keeps_order() {
        let data: Vec<f32> = (0..7 * 7 * 512).map(|i| i as f32).collect();
        let t = Tensor::new(vec![7, 7, 512], data.clone()).unwrap();
        let flat = t.reshape(&[25_088]).unwrap();
        assert_eq!(flat.dims(), &[25_088]);
        assert_eq!(flat.data(), &data[..]);
    }

    #[test]
    fn map_named_functions() {
        let t = Tensor::new(vec![3], vec![-1.0f64, 0.0, 2.0]).unwrap();
        assert_eq!(t.map(UnaryFn::Relu).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(t.map(UnaryFn::Abs).data(), &[1.0, 0.0, 2.0]);
        let big = Tensor::new(vec![2], vec![-1e4f64, 1e4]).unwrap();
        assert!(big.map(UnaryFn::Sigmoid).all_finite());
        assert!(big.map(UnaryFn::Tanh).all_finite());
    }

    #[test]
    fn normal_degenerate_and_deterministic() {
        let t: Tensor<f64> = rng_normal(&mut Rng::new(1), &[10], 2.5, 0.0).unwrap();
        assert!(t.data().iter().all(|&x| x == 2.5));
        let a: Tensor<f32> = rng_normal(&mut Rng::new(9), &[100], 0.0, 1.0).unwrap();
        let b: Tensor<f32> = rng_normal(&mut Rng::new(9), &[100], 0.0, 1.0).unwrap();
        assert_eq!(a, b);
        assert!(rng_normal::<f32>(&mut Rng::new(9), &[1], 0.0, -1.0).is_err());
    }

    #[test]
    fn normal_mean_within_bound() {
        let t: Tensor<f64> = rng_normal(&mut Rng::new(42), &[100_000], 0.0, 1.0).unwrap();
        let mean = t.data().iter().sum::<f64>() / t.len() as f64;
        // 5 standard errors at n = 1e5.
        assert!(mean.abs() < 5.0 / (100_000f64).sqrt(), "mean {mean}");
    }

    proptest! {
        #[test]
        fn reshape_roundtrip(dims in proptest::collection::vec(1usize..5, 1..=4), seed in any::<u64>()) {
            let len: usize = dims.iter().product();
            let mut rng = Rng::new(seed);
            let data: Vec<f64> = (0..len).map(|_| rng.uniform()).collect();
            let t = Tensor::new(dims.clone(), data).unwrap();
            let flat = t.reshape(&[len]).unwrap();
            let mut rev = dims.clone();
            rev.reverse();
            let back = flat.reshape(&rev).unwrap().reshape(&dims).unwrap();
            prop_assert_eq!(back, t);
        }

        #[test]
        fn finite_in_finite_out(xs in proptest::collection::vec(-1e6f64..1e6, 1..64)) {
            let t = Tensor::new(vec![xs.len()], xs).unwrap();
            for f in [UnaryFn::Identity, UnaryFn::Neg, UnaryFn::Abs, UnaryFn::Relu, UnaryFn::Tanh, UnaryFn::Sigmoid] {
                prop_assert!(t.map(f).all_finite());
            }
            prop_assert!(t.reduce_sum(None).unwrap().all_finite());
            prop_assert!(t.reduce_max(Some(0)).unwrap().all_finite());
        }
    }
}
