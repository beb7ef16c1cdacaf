//! Reverse-mode differentiation restricted to the operators CldNet needs.
//!
//! A [`Tape`] records operations on [`Var`]s while `record` is on; calling
//! [`Tape::backward`] replays the record in reverse. With recording off
//! the same calls evaluate eagerly and intermediates are freed as soon as
//! their `Var`s drop, which keeps large-scene inference within memory.
//!
//! Values are generic over [`Real`]: `f32` for training, `f64` for
//! gradient verification.

mod checkpoint;
mod conv;
mod exact;
mod loss;
mod norm;
mod optim;
mod pool;
mod tape;
mod tensor;

#[cfg(test)]
pub(crate) mod gradcheck;

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, NumCast};
use thiserror::Error;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointFile, CheckpointHeader};
pub use conv::{conv_output_size, ConvParams};
pub use exact::ExactSum;
pub use loss::{argmax_classes, softmax_max_probability, LossInfo};
pub use norm::{BatchNormMode, RunningStats, BN_EPS, BN_MOMENTUM};
pub use optim::{AdamState, LrSchedule};
pub use pool::plane_sums;
pub use tape::{Gradients, Tape, Var};
pub use tensor::{BitRepr, Tensor};

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid label {code} at position {index}")]
    Label { index: usize, code: u8 },
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub(crate) fn shape_err(msg: impl Into<String>) -> TensorError {
    TensorError::Shape(msg.into())
}

/// Floating-point element type of a tensor.
pub trait Real: Float + Send + Sync + Default + Debug + Sum + 'static {
    fn of(v: f64) -> Self {
        <Self as NumCast>::from(v).expect("representable constant")
    }

    fn to_f64_lossless(self) -> f64 {
        self.to_f64().expect("float to f64")
    }

    /// `C = A·B + beta·C` with explicit (row, column) strides.
    ///
    /// # Safety
    /// Every index reachable through the dimensions and strides must lie
    /// inside the corresponding slice; see [`gemm`].
    #[doc(hidden)]
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
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
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

impl Real for f64 {
    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
    }
}

/// Row-major-or-transposed matrix view: `(data, row_stride, col_stride)`.
pub(crate) type MatView<'a, T> = (&'a [T], usize, usize);

fn reach(rows: usize, cols: usize, rs: usize, cs: usize) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * rs + (cols - 1) * cs + 1
    }
}

/// Safe `C[m×n] = A[m×k]·B[k×n] (+ C when accumulate)`; `c` is row-major with row stride `ldc`.
pub(crate) fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: MatView<T>,
    b: MatView<T>,
    c: &mut [T],
    ldc: usize,
    accumulate: bool,
) {
    assert!(reach(m, k, a.1, a.2) <= a.0.len(), "gemm: A out of bounds");
    assert!(reach(k, n, b.1, b.2) <= b.0.len(), "gemm: B out of bounds");
    assert!(reach(m, n, ldc, 1) <= c.len(), "gemm: C out of bounds");
    if m == 0 || n == 0 {
        return;
    }
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.0.as_ptr(),
            a.1 as isize,
            a.2 as isize,
            b.0.as_ptr(),
            b.1 as isize,
            b.2 as isize,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}
