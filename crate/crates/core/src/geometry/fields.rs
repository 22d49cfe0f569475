use nalgebra::{DMatrix, DVector};

use crate::error::Result;

/// A Riemannian metric on an open subset of ℝⁿ.
pub trait MetricField: Send + Sync {
    fn dim(&self) -> usize;
    fn metric(&self, p: &[f64]) -> Result<DMatrix<f64>>;
    /// `[∂₀g, …, ∂_{n−1}g]` in closed form, when available.
    fn metric_derivatives(&self, _p: &[f64]) -> Option<Result<Vec<DMatrix<f64>>>> {
        None
    }
    fn contains(&self, p: &[f64]) -> bool;
    /// Largest finite-difference step along `axis` whose 4th-order stencil
    /// stays well inside the domain.
    fn step_limit(&self, _p: &[f64], _axis: usize) -> f64 {
        f64::INFINITY
    }
}

pub trait ScalarField: Send + Sync {
    fn value(&self, p: &[f64]) -> Result<f64>;
    fn gradient(&self, _p: &[f64]) -> Option<Result<DVector<f64>>> {
        None
    }
    fn hessian(&self, _p: &[f64]) -> Option<Result<DMatrix<f64>>> {
        None
    }
}

pub trait VectorField: Send + Sync {
    fn value(&self, p: &[f64]) -> Result<DVector<f64>>;
    /// `J[(k, i)] = ∂_i X^k`.
    fn jacobian(&self, _p: &[f64]) -> Option<Result<DMatrix<f64>>> {
        None
    }
}

/// Endomorphism field `J` with `J² = −Id`; columns are images.
pub trait AlmostComplexField: Send + Sync {
    fn value(&self, p: &[f64]) -> Result<DMatrix<f64>>;
    /// `[∂₀J, …]`, when available.
    fn derivatives(&self, _p: &[f64]) -> Option<Result<Vec<DMatrix<f64>>>> {
        None
    }
}

/// Scalar field from a closure.
pub struct FnScalar<F>(pub F);

impl<F> ScalarField for FnScalar<F>
where
    F: Fn(&[f64]) -> Result<f64> + Send + Sync,
{
    fn value(&self, p: &[f64]) -> Result<f64> {
        (self.0)(p)
    }
}

/// Vector field from a closure.
pub struct FnVector<F>(pub F);

impl<F> VectorField for FnVector<F>
where
    F: Fn(&[f64]) -> Result<DVector<f64>> + Send + Sync,
{
    fn value(&self, p: &[f64]) -> Result<DVector<f64>> {
        (self.0)(p)
    }
}

/// Endomorphism field from a closure.
pub struct FnComplex<F>(pub F);

impl<F> AlmostComplexField for FnComplex<F>
where
    F: Fn(&[f64]) -> Result<DMatrix<f64>> + Send + Sync,
{
    fn value(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        (self.0)(p)
    }
}

/// Metric from a closure, on a predicate domain.
pub struct FnMetric<F, D> {
    pub dim: usize,
    pub g: F,
    pub domain: D,
}

impl<F, D> MetricField for FnMetric<F, D>
where
    F: Fn(&[f64]) -> DMatrix<f64> + Send + Sync,
    D: Fn(&[f64]) -> bool + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn metric(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        Ok((self.g)(p))
    }
    fn contains(&self, p: &[f64]) -> bool {
        (self.domain)(p)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Euclidean(pub usize);

impl MetricField for Euclidean {
    fn dim(&self) -> usize {
        self.0
    }
    fn metric(&self, _p: &[f64]) -> Result<DMatrix<f64>> {
        Ok(DMatrix::identity(self.0, self.0))
    }
    fn metric_derivatives(&self, _p: &[f64]) -> Option<Result<Vec<DMatrix<f64>>>> {
        Some(Ok(vec![DMatrix::zeros(self.0, self.0); self.0]))
    }
    fn contains(&self, _p: &[f64]) -> bool {
        true
    }
}

/// Round sphere of radius `√r2` in a stereographic chart.
#[derive(Debug, Clone, Copy)]
pub struct RoundSphere {
    pub r2: f64,
}

impl MetricField for RoundSphere {
    fn dim(&self) -> usize {
        2
    }
    fn metric(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        let u = p[0] * p[0] + p[1] * p[1];
        Ok(DMatrix::identity(2, 2) * (4.0 * self.r2 / ((1.0 + u) * (1.0 + u))))
    }
    fn contains(&self, p: &[f64]) -> bool {
        p[0] * p[0] + p[1] * p[1] < 100.0
    }
}
