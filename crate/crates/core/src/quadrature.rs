//! Adaptive Gauss–Kronrod (7/15) quadrature for vector-valued integrands.
//!
//! The whole vector shares one subdivision: an interval is split while the
//! L1 norm of its Kronrod–Gauss difference dominates the global error budget.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

/// Gauss weights for the odd-indexed Kronrod nodes.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub rel: f64,
    pub abs: f64,
    pub max_intervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            rel: 1e-9,
            abs: 1e-15,
            max_intervals: 2000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Quadrature {
    pub values: Vec<f64>,
    /// Estimated L1 error across components.
    pub error: f64,
    pub intervals: usize,
}

struct Segment {
    a: f64,
    b: f64,
    values: Vec<f64>,
    error: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}

impl Eq for Segment {}

impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn gk15<F>(f: &mut F, a: f64, b: f64, dim: usize, buf: &mut [f64]) -> Segment
where
    F: FnMut(f64, &mut [f64]),
{
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut kronrod = vec![0.0; dim];
    let mut gauss = vec![0.0; dim];

    f(center, buf);
    for i in 0..dim {
        kronrod[i] = WGK[7] * buf[i];
        gauss[i] = WG[3] * buf[i];
    }
    for (j, &x) in XGK[..7].iter().enumerate() {
        let dx = half * x;
        for sign in [-1.0, 1.0] {
            f(center + sign * dx, buf);
            for i in 0..dim {
                kronrod[i] += WGK[j] * buf[i];
                if j % 2 == 1 {
                    gauss[i] += WG[j / 2] * buf[i];
                }
            }
        }
    }
    let mut error = 0.0;
    for i in 0..dim {
        kronrod[i] *= half;
        gauss[i] *= half;
        error += (kronrod[i] - gauss[i]).abs();
    }
    Segment {
        a,
        b,
        values: kronrod,
        error,
    }
}

/// Integrate `f` over `[a, b]`, where `f(x, out)` fills `out` (length `dim`).
pub fn integrate_vec<F>(mut f: F, a: f64, b: f64, dim: usize, tol: Tolerance) -> Result<Quadrature>
where
    F: FnMut(f64, &mut [f64]),
{
    if a == b || dim == 0 {
        return Ok(Quadrature {
            values: vec![0.0; dim],
            error: 0.0,
            intervals: 0,
        });
    }
    let mut buf = vec![0.0; dim];
    let first = gk15(&mut f, a, b, dim, &mut buf);
    let mut total = first.values.clone();
    let mut total_error = first.error;
    let mut heap = BinaryHeap::new();
    heap.push(first);

    loop {
        let magnitude: f64 = total.iter().map(|v| v.abs()).sum();
        let budget = tol.abs.max(tol.rel * magnitude);
        if total_error <= budget {
            break;
        }
        if heap.len() >= tol.max_intervals {
            return Err(Error::Numerical(format!(
                "quadrature on [{a}, {b}] did not converge: error {total_error:.3e} > \
                 budget {budget:.3e} after {} intervals",
                heap.len()
            )));
        }
        let worst = heap.pop().expect("heap is never empty");
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a || mid >= worst.b {
            return Err(Error::Numerical(format!(
                "quadrature interval [{}, {}] cannot be split further (error {:.3e})",
                worst.a, worst.b, worst.error
            )));
        }
        let left = gk15(&mut f, worst.a, mid, dim, &mut buf);
        let right = gk15(&mut f, mid, worst.b, dim, &mut buf);
        for (i, t) in total.iter_mut().enumerate() {
            *t += left.values[i] + right.values[i] - worst.values[i];
        }
        total_error += left.error + right.error - worst.error;
        heap.push(left);
        heap.push(right);
    }

    // Re-sum from the leaves to shed the drift of the running updates.
    let intervals = heap.len();
    let mut values = vec![0.0; dim];
    let mut error = 0.0;
    let mut leaves = heap.into_vec();
    leaves.sort_by(|x, y| x.a.total_cmp(&y.a));
    for seg in &leaves {
        for (v, s) in values.iter_mut().zip(&seg.values) {
            *v += s;
        }
        error += seg.error;
    }
    Ok(Quadrature {
        values,
        error,
        intervals,
    })
}

/// Scalar convenience wrapper around [`integrate_vec`].
pub fn integrate<F>(mut f: F, a: f64, b: f64, tol: Tolerance) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> f64,
{
    let q = integrate_vec(|x, out| out[0] = f(x), a, b, 1, tol)?;
    Ok((q.values[0], q.error))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_are_exact() {
        let (v, _) = integrate(
            |x| x.powi(5) - 3.0 * x * x + 1.0,
            -1.0,
            2.0,
            Tolerance::default(),
        )
        .unwrap();
        let exact = (64.0 - 1.0) / 6.0 - (8.0 + 1.0) + 3.0;
        assert!((v - exact).abs() < 1e-12);
    }

    #[test]
    fn sharp_exponential() {
        let k = 200.0;
        let (v, _) = integrate(|x| k * (-k * x).exp(), 0.0, 1.0, Tolerance::default()).unwrap();
        assert!((v + (-k).exp_m1()).abs() < 1e-12, "{v}");
    }

    #[test]
    fn vector_components() {
        let q = integrate_vec(
            |x, out| {
                out[0] = x.sin();
                out[1] = x.cos();
                out[2] = (-x * x).exp();
            },
            0.0,
            std::f64::consts::PI,
            3,
            Tolerance::default(),
        )
        .unwrap();
        assert!((q.values[0] - 2.0).abs() < 1e-12);
        assert!(q.values[1].abs() < 1e-12);
        assert!((q.values[2] - 0.886_219_059_172_852_7).abs() < 1e-10);
    }

    #[test]
    fn empty_interval() {
        let (v, e) = integrate(|x| x, 1.0, 1.0, Tolerance::default()).unwrap();
        assert_eq!((v, e), (0.0, 0.0));
    }

    #[test]
    fn reports_non_convergence() {
        let tol = Tolerance {
            rel: 1e-15,
            abs: 0.0,
            max_intervals: 4,
        };
        let err = integrate(|x| (1.0 / (x + 1e-9)).sin(), 0.0, 1.0, tol).unwrap_err();
        assert!(matches!(err, Error::Numerical(_)));
    }
}
