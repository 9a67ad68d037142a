//! Link delay inference from end-to-end measurements.

mod pso;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::flowplan::FlowPlan;
use crate::probesim::{Campaign, LinkDelayVector};
use crate::topology::{LinkId, Topology};

pub use pso::{mutate_population, pso_solve, Particle, SolveResult, SwarmConfig};

/// Relative singular-value cutoff for the pseudo-inverse.
pub const SVD_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum SolveError {
    #[error("plan has {plan} flows but the campaign has {campaign} measurements")]
    Cardinality { plan: usize, campaign: usize },
    #[error("campaign row {row} is for flow {found}, expected flow {expected}")]
    FlowMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("measurement system has no rows or no columns")]
    Empty,
    #[error("invalid swarm config: {0}")]
    Config(String),
    #[error("position has {got} entries, system has {want} columns")]
    Dimension { want: usize, got: usize },
}

/// Binary flows x links matrix with the measured delay of each flow.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSystem {
    pub matrix: Vec<Vec<u8>>,
    pub rhs: Vec<f64>,
    pub links: Vec<LinkId>,
}

impl MeasurementSystem {
    pub fn new(matrix: Vec<Vec<u8>>, rhs: Vec<f64>, links: Vec<LinkId>) -> Result<Self, SolveError> {
        if matrix.len() != rhs.len() {
            return Err(SolveError::Cardinality {
                plan: matrix.len(),
                campaign: rhs.len(),
            });
        }
        if let Some(bad) = matrix.iter().find(|r| r.len() != links.len()) {
            return Err(SolveError::Dimension {
                want: links.len(),
                got: bad.len(),
            });
        }
        Ok(Self { matrix, rhs, links })
    }

    pub fn rows(&self) -> usize {
        self.matrix.len()
    }

    pub fn cols(&self) -> usize {
        self.links.len()
    }

    pub fn dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows(), self.cols(), |r, c| f64::from(self.matrix[r][c]))
    }

    pub fn rank(&self) -> usize {
        let rows: Vec<Vec<f64>> = self
            .matrix
            .iter()
            .map(|r| r.iter().map(|&v| f64::from(v)).collect())
            .collect();
        crate::linalg::rank(&rows)
    }

    /// `M x - rhs`.
    pub fn residuals(&self, x: &[f64]) -> Vec<f64> {
        self.matrix
            .iter()
            .zip(&self.rhs)
            .map(|(row, b)| {
                row.iter()
                    .zip(x)
                    .filter(|(&m, _)| m != 0)
                    .map(|(_, v)| v)
                    .sum::<f64>()
                    - b
            })
            .collect()
    }
}

/// Rows in flow-id order; matrix copied from the plan.
pub fn build_system(plan: &FlowPlan, campaign: &Campaign) -> Result<MeasurementSystem, SolveError> {
    if plan.flows().len() != campaign.rows.len() {
        return Err(SolveError::Cardinality {
            plan: plan.flows().len(),
            campaign: campaign.rows.len(),
        });
    }
    let mut order: Vec<usize> = (0..plan.flows().len()).collect();
    order.sort_by_key(|&k| plan.flows()[k].id);
    let mut rows = Vec::with_capacity(order.len());
    let mut rhs = Vec::with_capacity(order.len());
    for (r, &k) in order.iter().enumerate() {
        let expected = plan.flows()[k].id;
        let found = campaign.rows[r].flow_id;
        if expected != found {
            return Err(SolveError::FlowMismatch { row: r, expected, found });
        }
        rows.push(plan.measurement_matrix()[k].clone());
        rhs.push(campaign.rows[r].eed_ms);
    }
    MeasurementSystem::new(rows, rhs, plan.link_index().links().to_vec())
}

/// Minimum-norm minimizer of `|M x - rhs|` via the SVD pseudo-inverse.
pub fn least_squares(sys: &MeasurementSystem) -> Result<Vec<f64>, SolveError> {
    if sys.rows() == 0 || sys.cols() == 0 {
        return Err(SolveError::Empty);
    }
    let svd = sys.dense().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = (smax * SVD_TOLERANCE).max(f64::MIN_POSITIVE);
    let b = DVector::from_column_slice(&sys.rhs);
    let x = svd
        .solve(&b, eps)
        .map_err(|e| SolveError::Config(e.to_string()))?;
    Ok(x.iter().copied().collect())
}

/// `-|M x - rhs|_2`; zero is the best possible value.
pub fn fitness(position: &[f64], sys: &MeasurementSystem) -> f64 {
    -sys.residuals(position)
        .iter()
        .map(|r| r * r)
        .sum::<f64>()
        .sqrt()
}

/// Per-link line of a solve result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkEstimate {
    pub link: String,
    pub estimated_delay_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abs_error_ms: Option<f64>,
}

/// Labels the estimate and, when ground truth is known, attaches errors.
pub fn link_estimates(
    result: &SolveResult,
    topo: &Topology,
    truth: Option<&LinkDelayVector>,
) -> Vec<LinkEstimate> {
    result
        .estimate
        .links
        .iter()
        .zip(&result.estimate.delays_ms)
        .map(|(&l, &d)| LinkEstimate {
            link: topo.link_label(l),
            estimated_delay_ms: d,
            abs_error_ms: truth.and_then(|t| t.get(l)).map(|t| (d - t).abs()),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sys(m: Vec<Vec<u8>>, b: Vec<f64>) -> MeasurementSystem {
        let cols = m.first().map_or(0, |r| r.len());
        let links = (0..cols).map(|k| LinkId::new(k, k + 1)).collect();
        MeasurementSystem::new(m, b, links).unwrap()
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn identity_returns_rhs() {
        let s = sys(vec![vec![1, 0], vec![0, 1]], vec![0.7, 1.3]);
        assert!(close(&least_squares(&s).unwrap(), &[0.7, 1.3]));
    }

    #[test]
    fn overdetermined_consistent() {
        let s = sys(vec![vec![1, 1], vec![1, 0], vec![0, 1]], vec![2.0, 1.2, 0.8]);
        let x = least_squares(&s).unwrap();
        assert!(close(&x, &[1.2, 0.8]));
        assert!(fitness(&x, &s).abs() < 1e-12);
    }

    #[test]
    fn inconsistent_takes_mean() {
        let s = sys(vec![vec![1], vec![1]], vec![1.0, 2.0]);
        assert!(close(&least_squares(&s).unwrap(), &[1.5]));
    }

    #[test]
    fn underdetermined_is_minimum_norm() {
        let s = sys(vec![vec![1, 1]], vec![2.0]);
        assert!(close(&least_squares(&s).unwrap(), &[1.0, 1.0]));
        assert_eq!(s.rank(), 1);
    }

    #[test]
    fn fitness_values() {
        let s = sys(vec![vec![1]], vec![1.0]);
        assert_eq!(fitness(&[0.0], &s), -1.0);
        assert_eq!(fitness(&[1.0], &s), 0.0);
        // ten-link vector recovered from a system that generates it
        let truth = [1.2, 1.0, 0.5, 0.8, 2.0, 1.5, 0.4, 0.3, 0.8, 1.1];
        let mut m = Vec::new();
        for k in 0..10 {
            let mut row = vec![0u8; 10];
            row[k] = 1;
            row[(k + 1) % 10] = 1;
            m.push(row);
        }
        let b = m
            .iter()
            .map(|r| r.iter().zip(&truth).filter(|(&v, _)| v == 1).map(|(_, t)| t).sum())
            .collect();
        let s = sys(m, b);
        assert!(fitness(&truth, &s).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        assert!(matches!(
            MeasurementSystem::new(vec![vec![1]], vec![], vec![LinkId::new(0, 1)]),
            Err(SolveError::Cardinality { .. })
        ));
        assert!(matches!(
            MeasurementSystem::new(vec![vec![1, 0]], vec![1.0], vec![LinkId::new(0, 1)]),
            Err(SolveError::Dimension { .. })
        ));
        let empty = MeasurementSystem::new(vec![], vec![], vec![LinkId::new(0, 1)]).unwrap();
        assert_eq!(least_squares(&empty), Err(SolveError::Empty));
    }
}
