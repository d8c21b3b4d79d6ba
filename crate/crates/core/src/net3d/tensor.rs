use num_traits::Float;

use super::NetError;

/// Floating-point element usable by the layer kernels.
///
/// The pipeline runs in `f32`; gradient checks instantiate the same kernels in `f64`.
pub trait Real: Float + Default + Send + Sync + std::fmt::Debug + std::iter::Sum + 'static {
    fn from_f64(x: f64) -> Self;

    /// `c = alpha * a * b + beta * c` with arbitrary row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    /// `c = a * b`, or `c += a * b` when `accumulate`, where row `i` of `a`
    /// is `a[a_rows[i]..][..k]`, row `p` of `b` is `b[b_rows[p]..][..n]` and
    /// row `i` of `c` is `c[i * rsc..][..n]`.
    #[allow(clippy::too_many_arguments)]
    fn gemm_rows(
        k: usize,
        n: usize,
        a: &[Self],
        a_rows: &[usize],
        b: &[Self],
        b_rows: &[usize],
        c: &mut [Self],
        rsc: usize,
        accumulate: bool,
    );
}

/// Reference [`Real::gemm_rows`]: gathers both operands and calls [`Real::gemm`].
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_rows_gathered<T: Real>(
    k: usize,
    n: usize,
    a: &[T],
    a_rows: &[usize],
    b: &[T],
    b_rows: &[usize],
    c: &mut [T],
    rsc: usize,
    accumulate: bool,
) {
    let m = a_rows.len();
    assert_eq!(b_rows.len(), k, "gemm_rows: b needs one row per inner index");
    let mut ag = Vec::with_capacity(m * k);
    for &r in a_rows {
        ag.extend_from_slice(&a[r..r + k]);
    }
    let mut bg = Vec::with_capacity(k * n);
    for &r in b_rows {
        bg.extend_from_slice(&b[r..r + n]);
    }
    let beta = if accumulate { T::one() } else { T::zero() };
    T::gemm(m, k, n, T::one(), &ag, k as isize, 1, &bg, n as isize, 1, beta, c, rsc as isize, 1);
}

fn span(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs as usize + (cols - 1) * cs as usize + 1
    }
}

macro_rules! impl_real {
    ($t:ty, $gemm:path, $rows:path) => {
        impl Real for $t {
            #[inline]
            fn from_f64(x: f64) -> Self {
                x as $t
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                assert!(rsa >= 0 && csa >= 0 && rsb >= 0 && csb >= 0 && rsc >= 0 && csc >= 0);
                assert!(a.len() >= span(m, k, rsa, csa), "gemm: lhs too short");
                assert!(b.len() >= span(k, n, rsb, csb), "gemm: rhs too short");
                assert!(c.len() >= span(m, n, rsc, csc), "gemm: output too short");
                // SAFETY: the asserts above keep every strided access inside the slices.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    )
                }
            }

            fn gemm_rows(
                k: usize,
                n: usize,
                a: &[Self],
                a_rows: &[usize],
                b: &[Self],
                b_rows: &[usize],
                c: &mut [Self],
                rsc: usize,
                accumulate: bool,
            ) {
                $rows(k, n, a, a_rows, b, b_rows, c, rsc, accumulate)
            }
        }
    };
}

impl_real!(f32, super::simd::sgemm, super::simd::sgemm_rows);
impl_real!(f64, matrixmultiply::dgemm, gemm_rows_gathered);

/// Dense 5-D tensor laid out as (batch, channels, dx, dy, dz), x fastest within a channel.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor5<T> {
    shape: [usize; 5],
    data: Vec<T>,
}

impl<T: Real> Tensor5<T> {
    pub fn zeros(shape: [usize; 5]) -> Self {
        Self { shape, data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn from_vec(shape: [usize; 5], data: Vec<T>) -> Result<Self, NetError> {
        if shape.contains(&0) {
            return Err(NetError::ShapeMismatch(format!("tensor shape {shape:?} has a zero entry")));
        }
        let want: usize = shape.iter().product();
        if data.len() != want {
            return Err(NetError::ShapeMismatch(format!(
                "tensor shape {shape:?} needs {want} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> [usize; 5] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn spatial(&self) -> [usize; 3] {
        [self.shape[2], self.shape[3], self.shape[4]]
    }

    pub fn spatial_len(&self) -> usize {
        self.shape[2] * self.shape[3] * self.shape[4]
    }

    /// Values of one batch item (all channels).
    pub fn item(&self, b: usize) -> &[T] {
        let n = self.shape[1] * self.spatial_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn item_mut(&mut self, b: usize) -> &mut [T] {
        let n = self.shape[1] * self.spatial_len();
        &mut self.data[b * n..(b + 1) * n]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, x: usize, y: usize, z: usize) -> T {
        let [_, ch, dx, dy, dz] = self.shape;
        self.data[(((b * ch + c) * dz + z) * dy + y) * dx + x]
    }
}

/// Row-major matrix; rows are batch items for the dense layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, NetError> {
        if data.len() != rows * cols {
            return Err(NetError::ShapeMismatch(format!(
                "matrix {rows}x{cols} needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }
}
