//! Network cost functionals over link-current vectors: the convex flow
//! functional, its sharp-threshold limit, path costs, and the linear-case
//! dissipated energy.

use nalgebra::DVector;
use thiserror::Error;

use crate::network::NetworkGraph;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FunctionalError {
    #[error("current vector has length {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("operation requires all-linear characteristics, link {0} is nonlinear")]
    NonLinearLink(usize),
    #[error("expected {expected} per-link thresholds, got {got}")]
    ThresholdMismatch { expected: usize, got: usize },
}

/// Value of a separable per-link functional with its breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalValue {
    /// Sum of all per-link contributions.
    pub value: f64,
    pub per_link: Vec<(usize, f64)>,
}

/// Convex flow functional: sum over links of the primitive of the inverse
/// characteristic, evaluated at the link current.
pub fn functional_value(
    graph: &NetworkGraph,
    u: &DVector<f64>,
) -> Result<FunctionalValue, FunctionalError> {
    if u.len() != graph.link_count() {
        return Err(FunctionalError::DimensionMismatch {
            expected: graph.link_count(),
            got: u.len(),
        });
    }
    let per_link: Vec<(usize, f64)> = graph
        .characteristics()
        .iter()
        .enumerate()
        .map(|(k, c)| (k, c.primitive(u[k])))
        .collect();
    let value = per_link.iter().map(|(_, f)| f).sum();
    Ok(FunctionalValue { value, per_link })
}

/// Total dissipated power `sum R_k u_k^2` of an all-linear network.
pub fn dissipated_energy(graph: &NetworkGraph, u: &DVector<f64>) -> Result<f64, FunctionalError> {
    if u.len() != graph.link_count() {
        return Err(FunctionalError::DimensionMismatch {
            expected: graph.link_count(),
            got: u.len(),
        });
    }
    graph
        .characteristics()
        .iter()
        .enumerate()
        .map(|(k, c)| {
            c.resistance()
                .map(|r| r * u[k] * u[k])
                .ok_or(FunctionalError::NonLinearLink(k))
        })
        .sum()
}

/// Sharp-threshold limit functional `sum V_k |u_k|`.
pub fn threshold_functional(thresholds: &[f64], u: &DVector<f64>) -> Result<f64, FunctionalError> {
    if u.len() != thresholds.len() {
        return Err(FunctionalError::ThresholdMismatch {
            expected: thresholds.len(),
            got: u.len(),
        });
    }
    Ok(thresholds
        .iter()
        .zip(u.iter())
        .map(|(v, u)| v * u.abs())
        .sum())
}

/// Cost of routing the full injection along one path: `|d| * sum V_k`.
pub fn path_cost(d: f64, thresholds: &[f64], path_links: &[usize]) -> f64 {
    d.abs() * path_links.iter().map(|&k| thresholds[k]).sum::<f64>()
}
