use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kernels shared by SVR: `exp(-γ‖a-b‖²)` and `(γ a·b + 1)^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum KernelSpec {
    Rbf { gamma: f64 },
    Poly { gamma: f64, degree: u32 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Rbf { gamma } if gamma > 0.0 && gamma.is_finite() => Ok(()),
            KernelSpec::Poly { gamma, degree } if gamma > 0.0 && gamma.is_finite() && degree >= 2 => Ok(()),
            _ => Err(Error::Config(format!("invalid kernel {self:?}"))),
        }
    }

    /// Kernel value without the dimension check.
    #[inline]
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            KernelSpec::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
            KernelSpec::Poly { gamma, degree } => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                (gamma * dot + 1.0).powi(degree as i32)
            }
        }
    }
}

/// Evaluates `spec` on two vectors of equal length.
///
/// ```
/// use hrcal::models::{kernel_eval, KernelSpec};
/// let k = kernel_eval(&KernelSpec::Rbf { gamma: 0.1 }, &[0.0, 0.0], &[2.0, 0.0]).unwrap();
/// assert!((k - (-0.4f64).exp()).abs() < 1e-12);
/// let p = kernel_eval(&KernelSpec::Poly { gamma: 1.0, degree: 2 }, &[1.0, 1.0], &[1.0, 1.0]).unwrap();
/// assert_eq!(p, 9.0);
/// ```
pub fn kernel_eval(spec: &KernelSpec, a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("kernel arguments have {} and {} dimensions", a.len(), b.len())));
    }
    Ok(spec.eval(a, b))
}
