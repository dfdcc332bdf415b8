//! Float intrinsics that work both with `std` and with `libm` under `no_std`.

#[cfg(feature = "std")]
mod imp {
    #[inline]
    pub fn sqrt(x: f64) -> f64 {
        x.sqrt()
    }
    #[inline]
    pub fn abs(x: f64) -> f64 {
        x.abs()
    }
    #[inline]
    pub fn floor(x: f64) -> f64 {
        x.floor()
    }
    #[inline]
    pub fn log2(x: f64) -> f64 {
        x.log2()
    }
    #[inline]
    pub fn sin(x: f64) -> f64 {
        x.sin()
    }
    #[inline]
    pub fn pow(x: f64, y: f64) -> f64 {
        x.powf(y)
    }
}

#[cfg(all(not(feature = "std"), feature = "libm"))]
mod imp {
    #[inline]
    pub fn sqrt(x: f64) -> f64 {
        libm::sqrt(x)
    }
    #[inline]
    pub fn abs(x: f64) -> f64 {
        libm::fabs(x)
    }
    #[inline]
    pub fn floor(x: f64) -> f64 {
        libm::floor(x)
    }
    #[inline]
    pub fn log2(x: f64) -> f64 {
        libm::log2(x)
    }
    #[inline]
    pub fn sin(x: f64) -> f64 {
        libm::sin(x)
    }
    #[inline]
    pub fn pow(x: f64, y: f64) -> f64 {
        libm::pow(x, y)
    }
}

pub(crate) use imp::*;

/// Dot product.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Squared Euclidean norm.
#[inline]
pub(crate) fn norm2sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Euclidean norm.
#[inline]
pub(crate) fn norm(a: &[f64]) -> f64 {
    sqrt(norm2sq(a))
}

/// `|x|^q` computed as a power of the squared norm so that integer exponents
/// stay exact (`q = 2` returns the squared norm without roundtripping through
/// a square root).
#[inline]
pub(crate) fn norm_pow(a: &[f64], q: f64) -> f64 {
    let s = norm2sq(a);
    if q == 2.0 {
        s
    } else {
        pow(s, 0.5 * q)
    }
}

/// `out += alpha * a`, all slices of equal length.
#[inline]
pub(crate) fn axpy(alpha: f64, a: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.len(), out.len());
    for (o, x) in out.iter_mut().zip(a) {
        *o += alpha * x;
    }
}

/// `out += alpha * A x` for a row-major `n x n` matrix `A`.
#[inline]
pub(crate) fn matvec_acc(alpha: f64, a: &[f64], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(out.len(), n);
    for i in 0..n {
        out[i] += alpha * dot(&a[i * n..(i + 1) * n], x);
    }
}

/// Solves the dense system `A x = b` in place with partial pivoting;
/// `a` is row-major `n x n` and is destroyed, `b` becomes the solution.
pub(crate) fn solve_in_place(a: &mut [f64], b: &mut [f64]) -> Result<(), ()> {
    let n = b.len();
    debug_assert_eq!(a.len(), n * n);
    for col in 0..n {
        let mut pivot = col;
        let mut best = abs(a[col * n + col]);
        for row in col + 1..n {
            let v = abs(a[row * n + col]);
            if v > best {
                best = v;
                pivot = row;
            }
        }
        if !(best > 0.0) || !best.is_finite() {
            return Err(());
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * n + col];
        for row in col + 1..n {
            let factor = a[row * n + col] / diag;
            if factor != 0.0 {
                for k in col..n {
                    a[row * n + k] -= factor * a[col * n + k];
                }
                b[row] -= factor * b[col];
            }
        }
    }
    for col in (0..n).rev() {
        let mut v = b[col];
        for k in col + 1..n {
            v -= a[col * n + k] * b[k];
        }
        b[col] = v / a[col * n + col];
    }
    Ok(())
}

/// Exact `p`-th absolute moment of a standard normal:
/// `gamma_p = 2^(p/2) Γ((p+1)/2) / sqrt(pi)`, which is `(p-1)!!` for even `p`
/// and `(p-1)!! sqrt(2/pi)` for odd `p`.
pub fn gaussian_abs_moment(p: u32) -> f64 {
    let mut double_fact = 1.0;
    let mut k = p as i64 - 1;
    while k >= 2 {
        double_fact *= k as f64;
        k -= 2;
    }
    if p % 2 == 0 {
        double_fact
    } else {
        double_fact * sqrt(2.0 / core::f64::consts::PI)
    }
}
