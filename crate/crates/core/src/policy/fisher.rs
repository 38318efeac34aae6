use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sym_eigenvalues;

use super::{DiscretePolicy, GaussianLinear, Policy};

/// Fisher information `F = E_nu[score score^T]` and its curvature floor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FisherMatrix {
    pub f: DMatrix<f64>,
    /// Damping added to the diagonal whenever `F` is inverted.
    pub damping: f64,
    /// Smallest eigenvalue of the undamped `F`, restricted to the complement
    /// of the family's known null space when it has one.
    pub mu_f_estimate: f64,
    /// Smallest eigenvalue of the undamped `F` on the full space.
    pub lambda_min: f64,
}

impl FisherMatrix {
    pub fn from_matrix(f: DMatrix<f64>, complement: Option<&DMatrix<f64>>) -> Self {
        let ev = sym_eigenvalues(&f);
        let lambda_min = ev.first().copied().unwrap_or(0.0);
        let mu_f_estimate = match complement {
            Some(b) if b.ncols() > 0 => {
                let restricted = b.transpose() * &f * b;
                sym_eigenvalues(&restricted)[0]
            }
            Some(_) => 0.0,
            None => lambda_min,
        };
        Self { f, damping: 0.0, mu_f_estimate, lambda_min }
    }

    pub fn with_damping(mut self, damping: f64) -> Self {
        self.damping = damping;
        self
    }

    pub fn dim(&self) -> usize {
        self.f.nrows()
    }

    /// `F + damping * I`.
    pub fn damped(&self) -> DMatrix<f64> {
        let d = self.dim();
        &self.f + DMatrix::<f64>::identity(d, d) * self.damping
    }
}

/// `F = sum_{s,a} nu(s,a) score(s,a) score(s,a)^T` for a discrete family.
pub fn fisher_exact<P: DiscretePolicy>(policy: &P, theta: &[f64], nu: &[f64]) -> Result<FisherMatrix> {
    policy.check_theta(theta)?;
    let (ns, na) = (policy.n_states(), policy.n_actions());
    if nu.len() != ns * na {
        return Err(Error::DimensionMismatch { expected: ns * na, got: nu.len() });
    }
    let d = policy.dim();
    let mut f = DMatrix::zeros(d, d);
    for s in 0..ns {
        for a in 0..na {
            let w = nu[s * na + a];
            if w == 0.0 {
                continue;
            }
            let sc = policy.score(theta, s, &a);
            for i in 0..d {
                if sc[i] == 0.0 {
                    continue;
                }
                for j in 0..d {
                    f[(i, j)] += w * sc[i] * sc[j];
                }
            }
        }
    }
    let f = (&f + f.transpose()) * 0.5;
    Ok(FisherMatrix::from_matrix(f, policy.fisher_complement_basis().as_ref()))
}

/// Gaussian-linear Fisher `sum_s d(s) phi(s) Sigma^{-1} phi(s)^T`; independent of `theta`.
pub fn fisher_gaussian(policy: &GaussianLinear, state_weights: &[f64]) -> Result<FisherMatrix> {
    if state_weights.len() != policy.n_states() {
        return Err(Error::DimensionMismatch { expected: policy.n_states(), got: state_weights.len() });
    }
    let d = policy.dim();
    let mut f = DMatrix::zeros(d, d);
    for (s, &w) in state_weights.iter().enumerate() {
        f += policy.state_fisher(s) * w;
    }
    Ok(FisherMatrix::from_matrix(f, None))
}
