use crate::error::{QError, Result};
use serde::{Deserialize, Serialize};

/// Support of a single parameter coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constraint {
    Unbounded,
    StrictlyPositive,
}

impl Constraint {
    #[inline]
    pub fn admits(self, v: f64) -> bool {
        match self {
            Constraint::Unbounded => v.is_finite(),
            Constraint::StrictlyPositive => v.is_finite() && v > 0.0,
        }
    }
}

/// A point in parameter space together with its per-coordinate support.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    values: Vec<f64>,
    constraints: Vec<Constraint>,
}

impl ParameterVector {
    /// Builds a parameter vector; fails when a coordinate lies outside its
    /// support.
    pub fn new(values: Vec<f64>, constraints: Vec<Constraint>) -> Result<Self> {
        if values.len() != constraints.len() {
            return Err(QError::DimensionMismatch { expected: constraints.len(), got: values.len() });
        }
        if let Some(i) = first_violation(&values, &constraints) {
            return Err(QError::Constraint(i));
        }
        Ok(Self { values, constraints })
    }

    pub fn unbounded(values: Vec<f64>) -> Self {
        let constraints = vec![Constraint::Unbounded; values.len()];
        Self { values, constraints }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Index of the first coordinate outside its support.
pub fn first_violation(values: &[f64], constraints: &[Constraint]) -> Option<usize> {
    values.iter().zip(constraints).position(|(v, c)| !c.admits(*v))
}
