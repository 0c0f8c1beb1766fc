//! Dense NCHW tensors and the matrix product the layers are built on.

use std::fmt::Debug;

use crate::error::{NetError, Result};

/// Scalar type of tensors: `f32` for training, `f64` for gradient checks.
pub trait Real: num_traits::Float + num_traits::FromPrimitive + Default + Debug + Send + Sync + 'static {
    /// `c ← alpha·a·b + beta·c` for row/column strided `m×k` and `k×n` operands.
    #[allow(clippy::too_many_arguments)]
    fn gemm(m: usize, k: usize, n: usize, alpha: Self, a: Mat<'_, Self>, b: Mat<'_, Self>, beta: Self, c: MatMut<'_, Self>);

    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("representable")
    }
}

/// Read-only strided matrix view.
#[derive(Clone, Copy)]
pub struct Mat<'a, T> {
    pub data: &'a [T],
    pub row_stride: usize,
    pub col_stride: usize,
}

pub struct MatMut<'a, T> {
    pub data: &'a mut [T],
    pub row_stride: usize,
    pub col_stride: usize,
}

impl<'a, T> Mat<'a, T> {
    /// Row-major `rows × cols`.
    pub fn rows(data: &'a [T], cols: usize) -> Self {
        Mat {
            data,
            row_stride: cols,
            col_stride: 1,
        }
    }

    /// Transpose of a row-major `rows × cols` buffer.
    pub fn transposed(data: &'a [T], cols: usize) -> Self {
        Mat {
            data,
            row_stride: 1,
            col_stride: cols,
        }
    }
}

impl<'a, T> MatMut<'a, T> {
    pub fn rows(data: &'a mut [T], cols: usize) -> Self {
        MatMut {
            data,
            row_stride: cols,
            col_stride: 1,
        }
    }
}

fn last_index(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

fn check(m: usize, k: usize, n: usize, a_len: usize, a: (usize, usize), b_len: usize, b: (usize, usize), c_len: usize, c: (usize, usize)) {
    assert!(last_index(m, k, a.0, a.1) <= a_len, "gemm: A out of bounds");
    assert!(last_index(k, n, b.0, b.1) <= b_len, "gemm: B out of bounds");
    assert!(last_index(m, n, c.0, c.1) <= c_len, "gemm: C out of bounds");
}

macro_rules! impl_real {
    ($t:ty, $f:path) => {
        impl Real for $t {
            fn gemm(m: usize, k: usize, n: usize, alpha: Self, a: Mat<'_, Self>, b: Mat<'_, Self>, beta: Self, c: MatMut<'_, Self>) {
                check(
                    m,
                    k,
                    n,
                    a.data.len(),
                    (a.row_stride, a.col_stride),
                    b.data.len(),
                    (b.row_stride, b.col_stride),
                    c.data.len(),
                    (c.row_stride, c.col_stride),
                );
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: the bounds of all three strided views were checked
                // above and `c` is uniquely borrowed.
                unsafe {
                    $f(
                        m,
                        k,
                        n,
                        alpha,
                        a.data.as_ptr(),
                        a.row_stride as isize,
                        a.col_stride as isize,
                        b.data.as_ptr(),
                        b.row_stride as isize,
                        b.col_stride as isize,
                        beta,
                        c.data.as_mut_ptr(),
                        c.row_stride as isize,
                        c.col_stride as isize,
                    )
                }
            }
        }
    };
}

impl_real!(f32, matrixmultiply::sgemm);
impl_real!(f64, matrixmultiply::dgemm);

/// Batch × channels × height × width, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Real> Tensor4<T> {
    pub fn new(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(NetError::Shape(format!("{shape:?} needs {} values, got {}", shape.iter().product::<usize>(), data.len())));
        }
        Ok(Tensor4 { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor4 {
            shape,
            data: vec![T::zero(); shape.iter().product()],
        }
    }

    pub fn from_f64(shape: [usize; 4], data: &[f64]) -> Result<Self> {
        Tensor4::new(shape, data.iter().map(|&x| T::lit(x)).collect())
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    /// Values per batch item.
    pub fn item_len(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    pub fn plane_len(&self) -> usize {
        self.shape[2] * self.shape[3]
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

    pub fn item(&self, b: usize) -> &[T] {
        let n = self.item_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn item_mut(&mut self, b: usize) -> &mut [T] {
        let n = self.item_len();
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor4<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(NetError::Shape(format!("add {:?} and {:?}", self.shape, other.shape)));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    /// Joins tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor4<T>]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| NetError::Shape("concat of nothing".into()))?;
        let [n, _, h, w] = first.shape;
        if parts.iter().any(|p| p.shape[0] != n || p.shape[2] != h || p.shape[3] != w) {
            return Err(NetError::Shape("concat: batch or spatial size differs".into()));
        }
        let c: usize = parts.iter().map(|p| p.shape[1]).sum();
        let mut data = Vec::with_capacity(n * c * h * w);
        for b in 0..n {
            for p in parts {
                data.extend_from_slice(p.item(b));
            }
        }
        Ok(Tensor4 { shape: [n, c, h, w], data })
    }

    /// Inverse of [`Tensor4::concat_channels`].
    pub fn split_channels(&self, sizes: &[usize]) -> Result<Vec<Self>> {
        if sizes.iter().sum::<usize>() != self.shape[1] {
            return Err(NetError::Shape(format!("split {sizes:?} of {} channels", self.shape[1])));
        }
        let [n, _, h, w] = self.shape;
        let plane = h * w;
        let mut out: Vec<Tensor4<T>> = sizes.iter().map(|&c| Tensor4::zeros([n, c, h, w])).collect();
        for b in 0..n {
            let item = self.item(b);
            let mut offset = 0;
            for (t, &c) in out.iter_mut().zip(sizes) {
                t.item_mut(b).copy_from_slice(&item[offset..offset + c * plane]);
                offset += c * plane;
            }
        }
        Ok(out)
    }

    /// Stacks single-item tensors along the batch axis.
    pub fn stack(items: &[&Tensor4<T>]) -> Result<Self> {
        let first = items.first().ok_or_else(|| NetError::Shape("stack of nothing".into()))?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::with_capacity(items.len() * first.data.len());
        let mut n = 0;
        for t in items {
            if t.shape[1..] != first.shape[1..] {
                return Err(NetError::Shape(format!("stack {:?} with {:?}", first.shape, t.shape)));
            }
            data.extend_from_slice(&t.data);
            n += t.shape[0];
        }
        Ok(Tensor4 { shape: [n, c, h, w], data })
    }

    pub fn slice_batch(&self, b: usize) -> Self {
        let [_, c, h, w] = self.shape;
        Tensor4 {
            shape: [1, c, h, w],
            data: self.item(b).to_vec(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor4<U> {
        Tensor4 {
            shape: self.shape,
            data: self.data.iter().map(|x| U::from(*x).expect("castable")).collect(),
        }
    }
}
