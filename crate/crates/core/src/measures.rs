//! Discrete measures appearing in the limit functional: a measure on the
//! unit sphere for the local term and an atomic measure on `R^N \ {0}` for
//! the nonlocal term.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad::AngularRule;

/// Weighted atoms on `S^{N−1}` (for `N = 1` the two points `±1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SphericalMeasure {
    pub dim: usize,
    pub nodes: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Short-range radius the measure was built from, if any.
    pub delta: Option<f64>,
    pub eps: Option<f64>,
}

impl SphericalMeasure {
    pub fn new(dim: usize, nodes: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if nodes.len() != weights.len() {
            return Err(Error::Parameter("spherical measure needs one weight per node".into()));
        }
        for (node, &w) in nodes.iter().zip(&weights) {
            if node.len() != dim {
                return Err(Error::Parameter(format!("node {node:?} is not in R^{dim}")));
            }
            let norm = node.iter().map(|x| x * x).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > 1e-12 {
                return Err(Error::Domain(format!("node {node:?} is not on the unit sphere")));
            }
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Parameter(format!("weight {w} must be finite and nonnegative")));
            }
        }
        Ok(Self { dim, nodes, weights, delta: None, eps: None })
    }

    /// `mass` spread over the nodes of `rule` in proportion to its weights.
    pub fn uniform(dim: usize, mass: f64, rule: &AngularRule) -> Result<Self> {
        let total = rule.total_weight();
        let nodes = rule.iter().map(|(s, _)| s.to_vec()).collect();
        let weights = rule.iter().map(|(_, w)| mass * w / total).collect();
        Self::new(dim, nodes, weights)
    }

    pub fn zero(dim: usize) -> Self {
        Self { dim, nodes: Vec::new(), weights: Vec::new(), delta: None, eps: None }
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// `A = Σ w_j σ_j ⊗ σ_j`.
    pub fn anisotropy(&self) -> AnisotropyMatrix {
        let n = self.dim;
        let mut a = vec![vec![0.0; n]; n];
        for (s, &w) in self.nodes.iter().zip(&self.weights) {
            for i in 0..n {
                for j in 0..=i {
                    a[i][j] += w * s[i] * s[j];
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                a[j][i] = a[i][j];
            }
        }
        AnisotropyMatrix { a }
    }

    /// `∫ (v·σ)² dμ(σ)`.
    pub fn quadratic_form(&self, v: &[f64]) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(s, w)| w * s.iter().zip(v).map(|(a, b)| a * b).sum::<f64>().powi(2))
            .sum()
    }
}

/// Second-moment matrix of a spherical measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnisotropyMatrix {
    pub a: Vec<Vec<f64>>,
}

impl AnisotropyMatrix {
    pub fn dim(&self) -> usize {
        self.a.len()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|i| self.a[i][i]).sum()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| (self.a[i][j] - self.a[j][i]).abs() <= tol))
    }

    /// Eigenvalues in ascending order (cyclic Jacobi rotations).
    pub fn eigenvalues(&self) -> Vec<f64> {
        let n = self.dim();
        let mut m = self.a.clone();
        for _ in 0..100 {
            let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| m[i][j] * m[i][j])
                .sum();
            if off <= 1e-30 * (1.0 + self.trace().powi(2)) {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    if m[p][q] == 0.0 {
                        continue;
                    }
                    let theta = 0.5 * (m[q][q] - m[p][p]) / m[p][q];
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let (mkp, mkq) = (m[k][p], m[k][q]);
                        m[k][p] = c * mkp - s * mkq;
                        m[k][q] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let (mpk, mqk) = (m[p][k], m[q][k]);
                        m[p][k] = c * mpk - s * mqk;
                        m[q][k] = s * mpk + c * mqk;
                    }
                }
            }
        }
        let mut ev: Vec<f64> = (0..n).map(|i| m[i][i]).collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ev
    }

    /// PSD up to `−tol · trace`.
    pub fn is_psd(&self, tol: f64) -> bool {
        let floor = -tol * self.trace().abs();
        self.eigenvalues().iter().all(|&e| e >= floor)
    }

    /// `Σ_ij A_ij G_ij`, the quadratic form integrated against a Gram matrix.
    pub fn contract(&self, gram: &[Vec<f64>]) -> f64 {
        let n = self.dim();
        (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| self.a[i][j] * gram[i][j]).sum()
    }
}

/// Finite atomic measure `Σ w_i δ_{z_i}` on `R^N \ {0}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicMeasure {
    pub dim: usize,
    pub atoms: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl AtomicMeasure {
    pub fn new(dim: usize, atoms: Vec<Vec<f64>>, weights: Vec<f64>) -> Result<Self> {
        if atoms.len() != weights.len() {
            return Err(Error::Parameter("atomic measure needs one weight per atom".into()));
        }
        for (z, &w) in atoms.iter().zip(&weights) {
            if z.len() != dim {
                return Err(Error::Parameter(format!("atom {z:?} is not in R^{dim}")));
            }
            if z.iter().all(|&c| c == 0.0) {
                return Err(Error::Domain("atoms at the origin are not allowed".into()));
            }
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::Parameter(format!("weight {w} must be finite and nonnegative")));
            }
        }
        Ok(Self { dim, atoms, weights })
    }

    pub fn zero(dim: usize) -> Self {
        Self { dim, atoms: Vec::new(), weights: Vec::new() }
    }

    /// `mass` spread over the sphere of radius `radius` with the nodes and
    /// relative weights of `rule`.
    pub fn sphere(dim: usize, radius: f64, mass: f64, rule: &AngularRule) -> Result<Self> {
        let total = rule.total_weight();
        let atoms = rule.iter().map(|(s, _)| s.iter().map(|c| radius * c).collect()).collect();
        let weights = rule.iter().map(|(_, w)| mass * w / total).collect();
        Self::new(dim, atoms, weights)
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self { weights: self.weights.iter().map(|w| c * w).collect(), ..self.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_atom_gives_projector() {
        let mu = SphericalMeasure::new(2, vec![vec![1.0, 0.0]], vec![1.0]).unwrap();
        assert_eq!(mu.anisotropy().a, vec![vec![1.0, 0.0], vec![0.0, 0.0]]);
    }

    #[test]
    fn uniform_circle_is_isotropic() {
        let mu = SphericalMeasure::uniform(2, 3.0, &AngularRule::circle(64)).unwrap();
        let a = mu.anisotropy();
        assert!((a.a[0][0] - 1.5).abs() < 1e-14 && (a.a[1][1] - 1.5).abs() < 1e-14 && a.a[0][1].abs() < 1e-14);
    }

    #[test]
    fn validation() {
        assert!(matches!(SphericalMeasure::new(2, vec![vec![2.0, 0.0]], vec![1.0]), Err(Error::Domain(_))));
        assert!(SphericalMeasure::new(1, vec![vec![1.0]], vec![-1.0]).is_err());
        assert!(matches!(AtomicMeasure::new(1, vec![vec![0.0]], vec![1.0]), Err(Error::Domain(_))));
    }

    #[test]
    fn jacobi_eigenvalues() {
        let m = AnisotropyMatrix { a: vec![vec![2.0, 1.0, 0.0], vec![1.0, 2.0, 0.0], vec![0.0, 0.0, 5.0]] };
        let ev = m.eigenvalues();
        for (got, want) in ev.iter().zip([1.0, 3.0, 5.0]) {
            assert!((got - want).abs() < 1e-13);
        }
    }

    fn unit(v: Vec<f64>) -> Vec<f64> {
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.into_iter().map(|x| x / n).collect()
    }

    proptest! {
        #[test]
        fn random_measures_are_psd_and_trace_correct(
            raw in prop::collection::vec((prop::collection::vec(-1.0f64..1.0, 3), 0.0f64..5.0), 1..30)
        ) {
            let raw: Vec<_> = raw.into_iter().filter(|(v, _)| v.iter().map(|x| x * x).sum::<f64>() > 1e-6).collect();
            prop_assume!(!raw.is_empty());
            let nodes: Vec<Vec<f64>> = raw.iter().map(|(v, _)| unit(v.clone())).collect();
            let weights: Vec<f64> = raw.iter().map(|(_, w)| *w).collect();
            let mu = SphericalMeasure::new(3, nodes, weights).unwrap();
            let a = mu.anisotropy();
            prop_assert!(a.is_symmetric(0.0));
            prop_assert!(a.is_psd(1e-12));
            prop_assert!((a.trace() - mu.total_mass()).abs() <= 1e-12 * mu.total_mass().max(1.0));
        }
    }
}
