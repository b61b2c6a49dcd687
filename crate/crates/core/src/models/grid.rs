use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{KernelSpec, ModelSpec, Penalty};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Algorithm {
    Svr,
    Rf,
    Gp,
    Mlp,
    SigmoidLr,
    Knn,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Svr,
        Algorithm::Rf,
        Algorithm::Gp,
        Algorithm::Mlp,
        Algorithm::SigmoidLr,
        Algorithm::Knn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Svr => "svr",
            Algorithm::Rf => "rf",
            Algorithm::Gp => "gp",
            Algorithm::Mlp => "mlp",
            Algorithm::SigmoidLr => "sigmoid_lr",
            Algorithm::Knn => "knn",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm {s:?}")))
    }
}

const DECADES: [f64; 6] = [0.001, 0.01, 0.1, 1.0, 10.0, 100.0];

pub(crate) const MLP_ARCHITECTURES: [&[usize]; 7] = [
    &[16, 8, 2],
    &[16, 8, 4],
    &[8, 4, 2],
    &[16, 8, 4, 2],
    &[8, 4, 4, 2],
    &[16, 8, 4, 4, 2],
    &[32, 16, 8, 4, 2],
];

/// The full tuning grid of one algorithm, in a fixed order.
///
/// The forest grid is large (n_estimators runs 200..=2000 in steps of 4);
/// pipelines normally configure a subset.
pub fn default_grid(algo: Algorithm) -> Vec<ModelSpec> {
    let mut out = Vec::new();
    match algo {
        Algorithm::Svr => {
            let mut kernels: Vec<KernelSpec> = DECADES.iter().map(|&gamma| KernelSpec::Rbf { gamma }).collect();
            for degree in 2..=5 {
                kernels.extend(DECADES.iter().map(|&gamma| KernelSpec::Poly { gamma, degree }));
            }
            for kernel in kernels {
                for c in DECADES {
                    for epsilon in DECADES {
                        out.push(ModelSpec::Svr { c, epsilon, kernel });
                    }
                }
            }
        }
        Algorithm::Rf => {
            for max_features in 1..=3 {
                for n_estimators in (200..=2000).step_by(4) {
                    for max_depth in (10..=49).step_by(3) {
                        for min_samples_split in (2..=14).step_by(3) {
                            for min_samples_leaf in (2..=14).step_by(3) {
                                out.push(ModelSpec::Rf {
                                    max_features,
                                    n_estimators,
                                    max_depth,
                                    min_samples_split,
                                    min_samples_leaf,
                                });
                            }
                        }
                    }
                }
            }
        }
        Algorithm::Gp => {
            for alpha in [1e-10, 1e-7, 1e-5, 1e-3, 1e-1, 1.0] {
                out.push(ModelSpec::Gp { alpha });
            }
        }
        Algorithm::Mlp => {
            for hidden in MLP_ARCHITECTURES {
                for learning_rate in [0.01, 0.001, 0.0001] {
                    out.push(ModelSpec::Mlp {
                        hidden: hidden.to_vec(),
                        learning_rate,
                    });
                }
            }
        }
        Algorithm::SigmoidLr => {
            for c in DECADES {
                for penalty in Penalty::ALL {
                    out.push(ModelSpec::SigmoidLr { c, penalty });
                }
            }
        }
        Algorithm::Knn => {
            for n_neighbors in [10, 20, 30, 40, 50, 100, 150, 200, 500, 1000] {
                for p in 1..=3 {
                    out.push(ModelSpec::Knn { n_neighbors, p });
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_sizes() {
        assert_eq!(default_grid(Algorithm::Svr).len(), 5 * 6 * 6 * 6);
        assert_eq!(default_grid(Algorithm::Rf).len(), 3 * 451 * 14 * 5 * 5);
        assert_eq!(default_grid(Algorithm::Gp).len(), 6);
        assert_eq!(default_grid(Algorithm::Mlp).len(), 21);
        assert_eq!(default_grid(Algorithm::SigmoidLr).len(), 18);
        assert_eq!(default_grid(Algorithm::Knn).len(), 30);
        for a in Algorithm::ALL {
            assert!(default_grid(a).iter().all(|s| s.validate().is_ok()));
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
    }
}
