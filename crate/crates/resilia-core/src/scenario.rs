//! Finite scenario representation of the disturbance distribution.
//!
//! A [`ScenarioSet`] carries the quadrature used everywhere in the crate:
//! scenario points `xi_j` with probability weights `w_j` (summing to one) and
//! the density values `f_j > 0` of the underlying distribution at those
//! points. Expectations are weighted sums `E[phi(Xi)] = sum_j w_j phi(xi_j)`,
//! while integrals against dual densities use the cell volumes `w_j / f_j`.
//!
//! For a distribution that is atomic to begin with (a finite table of
//! disruption magnitudes, say) the density values equal the weights, so each
//! cell has unit volume and per-scenario dual values coincide with masses.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One disturbance realization together with its probability weight.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub xi: Vec<f64>,
    pub weight: f64,
}

/// Weighted scenario quadrature with pointwise density values.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSet {
    scenarios: Vec<Scenario>,
    density_values: Vec<f64>,
}

const WEIGHT_SUM_TOL: f64 = 1e-12;

impl ScenarioSet {
    /// Builds a scenario set, validating weights, dimensions, and densities.
    pub fn new(
        points: Vec<DVector<f64>>,
        weights: Vec<f64>,
        densities: Vec<f64>,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("scenario set must contain at least one point"));
        }
        if weights.len() != points.len() {
            return Err(Error::DimensionMismatch {
                context: "scenario weights",
                expected: points.len(),
                got: weights.len(),
            });
        }
        if densities.len() != points.len() {
            return Err(Error::DimensionMismatch {
                context: "scenario density values",
                expected: points.len(),
                got: densities.len(),
            });
        }
        let dim = points[0].len();
        if points.iter().any(|p| p.len() != dim) {
            return Err(Error::invalid("all scenario points must share one dimension"));
        }
        if weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::invalid("scenario weights must be positive and finite"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::invalid(format!(
                "scenario weights must sum to 1 (got {total:.17})"
            )));
        }
        if densities.iter().any(|&f| !(f > 0.0) || !f.is_finite()) {
            return Err(Error::invalid("density values must be positive and finite"));
        }
        let scenarios = points
            .into_iter()
            .zip(&weights)
            .map(|(p, &w)| Scenario {
                xi: p.as_slice().to_vec(),
                weight: w,
            })
            .collect();
        Ok(Self {
            scenarios,
            density_values: densities,
        })
    }

    /// Atomic distribution given by a probability table: densities are the
    /// weights themselves (unit cell volumes).
    pub fn from_masses(points: Vec<DVector<f64>>, weights: Vec<f64>) -> Result<Self> {
        let densities = weights.clone();
        Self::new(points, weights, densities)
    }

    /// Single deterministic scenario with unit weight and unit density.
    pub fn singleton(point: DVector<f64>) -> Self {
        Self {
            scenarios: vec![Scenario {
                xi: point.as_slice().to_vec(),
                weight: 1.0,
            }],
            density_values: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    /// Dimension of the disturbance vector.
    pub fn dim(&self) -> usize {
        self.scenarios[0].xi.len()
    }

    pub fn point(&self, j: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.scenarios[j].xi)
    }

    pub fn weight(&self, j: usize) -> f64 {
        self.scenarios[j].weight
    }

    pub fn density(&self, j: usize) -> f64 {
        self.density_values[j]
    }

    /// Quadrature cell volume `w_j / f_j`.
    pub fn volume(&self, j: usize) -> f64 {
        self.scenarios[j].weight / self.density_values[j]
    }

    pub fn weights(&self) -> Vec<f64> {
        self.scenarios.iter().map(|s| s.weight).collect()
    }

    pub fn densities(&self) -> &[f64] {
        &self.density_values
    }

    /// Mean disturbance `sum_j w_j xi_j`.
    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim());
        for s in &self.scenarios {
            for (k, &v) in s.xi.iter().enumerate() {
                m[k] += s.weight * v;
            }
        }
        m
    }

    /// Restriction to a subset of scenario indices with renormalized weights.
    /// Density values are kept as-is; only the quadrature weights rescale.
    pub fn restrict(&self, keep: &[usize]) -> Result<Self> {
        if keep.is_empty() {
            return Err(Error::invalid("scenario restriction must keep at least one index"));
        }
        let mut points = Vec::with_capacity(keep.len());
        let mut weights = Vec::with_capacity(keep.len());
        let mut densities = Vec::with_capacity(keep.len());
        for &j in keep {
            if j >= self.len() {
                return Err(Error::invalid(format!("scenario index {j} out of range")));
            }
            points.push(self.point(j));
            weights.push(self.weight(j));
            densities.push(self.density(j));
        }
        let total: f64 = weights.iter().sum();
        for w in &mut weights {
            *w /= total;
        }
        Self::new(points, weights, densities)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unnormalized_weights() {
        let pts = vec![DVector::from_vec(vec![0.0]), DVector::from_vec(vec![1.0])];
        let err = ScenarioSet::new(pts, vec![0.5, 0.6], vec![1.0, 1.0]);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_mixed_dimensions() {
        let pts = vec![
            DVector::from_vec(vec![0.0]),
            DVector::from_vec(vec![1.0, 2.0]),
        ];
        assert!(ScenarioSet::new(pts, vec![0.5, 0.5], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn atomic_table_has_unit_volumes() {
        let pts = vec![
            DVector::from_vec(vec![0.0]),
            DVector::from_vec(vec![0.1]),
            DVector::from_vec(vec![1.0]),
            DVector::from_vec(vec![10.0]),
        ];
        let set = ScenarioSet::from_masses(pts, vec![0.5, 0.4, 0.05, 0.05]).unwrap();
        for j in 0..set.len() {
            assert!((set.volume(j) - 1.0).abs() < 1e-15);
        }
        assert!((set.mean()[0] - (0.04 + 0.05 + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn restriction_renormalizes() {
        let pts = vec![
            DVector::from_vec(vec![0.0]),
            DVector::from_vec(vec![0.1]),
            DVector::from_vec(vec![1.0]),
        ];
        let set = ScenarioSet::from_masses(pts, vec![0.5, 0.4, 0.1]).unwrap();
        let sub = set.restrict(&[0, 1]).unwrap();
        assert_eq!(sub.len(), 2);
        assert!((sub.weight(0) - 5.0 / 9.0).abs() < 1e-15);
        // densities untouched by the reweighting
        assert!((sub.density(0) - 0.5).abs() < 1e-15);
    }
}
