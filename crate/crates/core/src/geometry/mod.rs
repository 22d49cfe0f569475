//! Chart-local Riemannian calculus over any [`MetricField`].
//!
//! Derivatives of the metric come from the field when it supplies them and
//! from 4th-order central differences otherwise. Curvature differentiates the
//! Christoffel symbols once more, with one Richardson step.
//!
//! Conventions: `Γ[k][(i, j)] = Γ^k_{ij}`;
//! `R^l_{ijk} = ∂_iΓ^l_{jk} − ∂_jΓ^l_{ik} + Γ^l_{im}Γ^m_{jk} − Γ^l_{jm}Γ^m_{ik}`;
//! `Ric_{jk} = R^i_{ijk}`.

mod fields;
mod integrate;

pub use fields::*;
pub use integrate::{integrate_geodesic, integrate_gradient_flow, FlowStop, Path, Termination};

use std::ops::{Mul, Sub};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct FdOptions {
    /// Default step for 4th-order central differences.
    pub h0: f64,
    /// Use closed-form `∂g` when the metric offers it.
    pub use_analytic: bool,
}

impl Default for FdOptions {
    fn default() -> Self {
        Self {
            h0: 1e-3,
            use_analytic: true,
        }
    }
}

/// Christoffel symbols of the second kind.
#[derive(Debug, Clone, PartialEq)]
pub struct Christoffel(pub Vec<DMatrix<f64>>);

impl Christoffel {
    pub fn get(&self, k: usize, i: usize, j: usize) -> f64 {
        self.0[k][(i, j)]
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// `Γ^k_{ij} X^i Y^j`.
    pub fn contract(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.dim(), |k, _| (x.transpose() * &self.0[k] * y)[(0, 0)])
    }

    /// Matrix `M[(k, j)] = Γ^k_{ij} X^i`.
    pub fn along(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |k, j| (0..n).map(|i| self.0[k][(i, j)] * x[i]).sum())
    }

    pub fn max_abs_diff(&self, other: &Christoffel) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0, f64::max)
    }
}

/// Central 4th-order first derivative of `f` along `axis`.
pub fn fd_partial<T, F>(f: F, p: &[f64], axis: usize, h: f64) -> Result<T>
where
    F: Fn(&[f64]) -> Result<T>,
    T: Clone + Sub<Output = T> + Mul<f64, Output = T>,
{
    let mut q = p.to_vec();
    let mut at = |off: f64| {
        q[axis] = p[axis] + off;
        f(&q)
    };
    let f1 = at(h)?;
    let fm1 = at(-h)?;
    let f2 = at(2.0 * h)?;
    let fm2 = at(-2.0 * h)?;
    Ok((f1 - fm1) * (8.0 / (12.0 * h)) - (f2 - fm2) * (1.0 / (12.0 * h)))
}

pub struct Calculus<'a> {
    pub metric: &'a dyn MetricField,
    pub opts: FdOptions,
}

impl<'a> Calculus<'a> {
    pub fn new(metric: &'a dyn MetricField) -> Self {
        Self {
            metric,
            opts: FdOptions::default(),
        }
    }

    pub fn with_options(metric: &'a dyn MetricField, opts: FdOptions) -> Self {
        Self { metric, opts }
    }

    pub fn dim(&self) -> usize {
        self.metric.dim()
    }

    /// Step along `axis` at `p`, after checking the stencil fits.
    pub fn step(&self, p: &[f64], axis: usize) -> Result<f64> {
        let h = self.opts.h0.min(self.metric.step_limit(p, axis));
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::Boundary { axis });
        }
        let mut q = p.to_vec();
        for off in [-2.0 * h, 2.0 * h] {
            q[axis] = p[axis] + off;
            if !self.metric.contains(&q) {
                return Err(Error::Boundary { axis });
            }
        }
        Ok(h)
    }

    pub fn partial<T, F>(&self, f: F, p: &[f64], axis: usize) -> Result<T>
    where
        F: Fn(&[f64]) -> Result<T>,
        T: Clone + Sub<Output = T> + Mul<f64, Output = T>,
    {
        let h = self.step(p, axis)?;
        fd_partial(f, p, axis, h)
    }

    pub fn metric_at(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        if !self.metric.contains(p) {
            return Err(Error::Domain(format!("{p:?} outside the metric domain")));
        }
        self.metric.metric(p)
    }

    pub fn inverse_metric(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        invert_spd(&self.metric_at(p)?)
    }

    pub fn metric_derivatives(&self, p: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        if self.opts.use_analytic {
            if let Some(d) = self.metric.metric_derivatives(p) {
                return d;
            }
        }
        self.metric_derivatives_fd(p)
    }

    pub fn metric_derivatives_fd(&self, p: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        (0..self.dim())
            .map(|k| self.partial(|q| self.metric.metric(q), p, k))
            .collect()
    }

    pub fn christoffel(&self, p: &[f64]) -> Result<Christoffel> {
        let ginv = self.inverse_metric(p)?;
        let dg = self.metric_derivatives(p)?;
        Ok(christoffel_from(&ginv, &dg))
    }

    /// Christoffels from finite differences of `g` only.
    pub fn christoffel_fd(&self, p: &[f64]) -> Result<Christoffel> {
        let ginv = self.inverse_metric(p)?;
        let dg = self.metric_derivatives_fd(p)?;
        Ok(christoffel_from(&ginv, &dg))
    }

    /// `[∂₀Γ, …]` with one Richardson step on the 4th-order stencil.
    pub fn christoffel_derivatives(&self, p: &[f64]) -> Result<Vec<Christoffel>> {
        let n = self.dim();
        let mut out = Vec::with_capacity(n);
        for axis in 0..n {
            let h = self.step(p, axis)?;
            let f = |q: &[f64]| self.christoffel(q).map(|c| c.0);
            let coarse = fd_partial(|q| f(q).map(GammaVec), p, axis, h)?;
            let fine = fd_partial(|q| f(q).map(GammaVec), p, axis, 0.5 * h)?;
            let rich = fine.clone() * (16.0 / 15.0) - coarse * (1.0 / 15.0);
            out.push(Christoffel(rich.0));
        }
        Ok(out)
    }

    /// `R^l_{ijk}` as `r[l][i][(j, k)]`.
    pub fn riemann(&self, p: &[f64]) -> Result<Vec<Vec<DMatrix<f64>>>> {
        let n = self.dim();
        let g = self.christoffel(p)?;
        let dg = self.christoffel_derivatives(p)?;
        let mut r = vec![vec![DMatrix::zeros(n, n); n]; n];
        for l in 0..n {
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let mut v = dg[i].get(l, j, k) - dg[j].get(l, i, k);
                        for m in 0..n {
                            v += g.get(l, i, m) * g.get(m, j, k) - g.get(l, j, m) * g.get(m, i, k);
                        }
                        r[l][i][(j, k)] = v;
                    }
                }
            }
        }
        Ok(r)
    }

    pub fn ricci(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.dim();
        let r = self.riemann(p)?;
        let ric = DMatrix::from_fn(n, n, |j, k| (0..n).map(|i| r[i][i][(j, k)]).sum());
        Ok((&ric + ric.transpose()) * 0.5)
    }

    pub fn scalar_gradient_coords(&self, f: &dyn ScalarField, p: &[f64]) -> Result<DVector<f64>> {
        if let Some(g) = f.gradient(p) {
            return g;
        }
        let n = self.dim();
        let mut d = DVector::zeros(n);
        for k in 0..n {
            d[k] = self.partial(|q| f.value(q), p, k)?;
        }
        Ok(d)
    }

    fn scalar_hessian_coords(&self, f: &dyn ScalarField, p: &[f64]) -> Result<DMatrix<f64>> {
        if let Some(h) = f.hessian(p) {
            return h;
        }
        let n = self.dim();
        let mut hm = DMatrix::zeros(n, n);
        for k in 0..n {
            let col: DVector<f64> = self.partial(
                |q| self.scalar_gradient_coords(f, q).map(Dv),
                p,
                k,
            )?
            .0;
            hm.set_column(k, &col);
        }
        Ok((&hm + hm.transpose()) * 0.5)
    }

    /// `∇f = g^{ij}∂_j f`.
    pub fn gradient(&self, f: &dyn ScalarField, p: &[f64]) -> Result<DVector<f64>> {
        Ok(self.inverse_metric(p)? * self.scalar_gradient_coords(f, p)?)
    }

    /// `(∇df)_{ij} = ∂_i∂_j f − Γ^k_{ij}∂_k f`.
    pub fn hessian(&self, f: &dyn ScalarField, p: &[f64]) -> Result<DMatrix<f64>> {
        let gam = self.christoffel(p)?;
        let d = self.scalar_gradient_coords(f, p)?;
        let mut h = self.scalar_hessian_coords(f, p)?;
        for (k, gk) in gam.0.iter().enumerate() {
            h -= gk * d[k];
        }
        Ok(h)
    }

    /// Hessian as an endomorphism `g^{-1}∇df` (columns are images).
    pub fn hessian_endomorphism(&self, f: &dyn ScalarField, p: &[f64]) -> Result<DMatrix<f64>> {
        Ok(self.inverse_metric(p)? * self.hessian(f, p)?)
    }

    pub fn laplacian(&self, f: &dyn ScalarField, p: &[f64]) -> Result<f64> {
        Ok(self.hessian_endomorphism(f, p)?.trace())
    }

    pub fn vector_jacobian(&self, x: &dyn VectorField, p: &[f64]) -> Result<DMatrix<f64>> {
        if let Some(j) = x.jacobian(p) {
            return j;
        }
        let n = self.dim();
        let mut jm = DMatrix::zeros(n, n);
        for i in 0..n {
            let col = self.partial(|q| x.value(q).map(Dv), p, i)?.0;
            jm.set_column(i, &col);
        }
        Ok(jm)
    }

    /// `∇X` as the endomorphism `Y ↦ ∇_Y X`: `M[(k, i)] = ∂_i X^k + Γ^k_{ij}X^j`.
    pub fn covariant_jacobian(&self, x: &dyn VectorField, p: &[f64]) -> Result<DMatrix<f64>> {
        let gam = self.christoffel(p)?;
        let xv = x.value(p)?;
        let n = self.dim();
        let mut m = self.vector_jacobian(x, p)?;
        for k in 0..n {
            for i in 0..n {
                m[(k, i)] += (0..n).map(|j| gam.get(k, i, j) * xv[j]).sum::<f64>();
            }
        }
        Ok(m)
    }

    /// `∇_Y X`.
    pub fn covariant_derivative(&self, x: &dyn VectorField, y: &DVector<f64>, p: &[f64]) -> Result<DVector<f64>> {
        Ok(self.covariant_jacobian(x, p)? * y)
    }

    pub fn divergence(&self, x: &dyn VectorField, p: &[f64]) -> Result<f64> {
        Ok(self.covariant_jacobian(x, p)?.trace())
    }

    /// `(£_u g)_{ij} = g(∇_i u, ∂_j) + g(∂_i, ∇_j u)`.
    pub fn lie_derivative_metric(&self, u: &dyn VectorField, p: &[f64]) -> Result<DMatrix<f64>> {
        let g = self.metric_at(p)?;
        let m = self.covariant_jacobian(u, p)?;
        let gm = &g * m;
        Ok(&gm + gm.transpose())
    }

    /// `(∇_i J)^k_j` as `out[i][(k, j)]`.
    pub fn nabla_j(&self, j: &dyn AlmostComplexField, p: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        let n = self.dim();
        let gam = self.christoffel(p)?;
        let jm = j.value(p)?;
        let dj = match j.derivatives(p) {
            Some(d) => d?,
            None => (0..n)
                .map(|i| self.partial(|q| j.value(q), p, i))
                .collect::<Result<Vec<_>>>()?,
        };
        Ok((0..n)
            .map(|i| {
                let gi = DMatrix::from_fn(n, n, |k, m| gam.get(k, i, m));
                &dj[i] + &gi * &jm - &jm * &gi
            })
            .collect())
    }

    pub fn norm_vector(&self, v: &DVector<f64>, p: &[f64]) -> Result<f64> {
        let g = self.metric_at(p)?;
        Ok((v.transpose() * g * v)[(0, 0)].max(0.0).sqrt())
    }
}

/// `Γ^k_{ij} = ½ g^{kl}(∂_i g_{jl} + ∂_j g_{il} − ∂_l g_{ij})`.
pub fn christoffel_from(ginv: &DMatrix<f64>, dg: &[DMatrix<f64>]) -> Christoffel {
    let n = ginv.nrows();
    // lowered[l][(i, j)] = Γ_{l, ij}
    let lowered: Vec<DMatrix<f64>> = (0..n)
        .map(|l| DMatrix::from_fn(n, n, |i, j| 0.5 * (dg[i][(j, l)] + dg[j][(i, l)] - dg[l][(i, j)])))
        .collect();
    Christoffel(
        (0..n)
            .map(|k| {
                let mut m = DMatrix::zeros(n, n);
                for (l, low) in lowered.iter().enumerate() {
                    m += low * ginv[(k, l)];
                }
                m
            })
            .collect(),
    )
}

/// Inverse of a symmetric positive-definite matrix, with a conditioning guard.
pub fn invert_spd(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let chol = g
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Conditioning(f64::INFINITY))?;
    let diag = chol.l_dirty().diagonal();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d.abs()), hi.max(d.abs())));
    let cond = (hi / lo).powi(2);
    if !(cond < 1e14) {
        return Err(Error::Conditioning(cond));
    }
    Ok(chol.inverse())
}

/// Norm of a (0,2)-tensor: `√(g^{ik}g^{jl}S_{ij}S_{kl})`.
pub fn norm_02(s: &DMatrix<f64>, ginv: &DMatrix<f64>) -> f64 {
    (ginv * s * ginv * s.transpose()).trace().max(0.0).sqrt()
}

/// Norm of a (1,1)-tensor `T^k_j`: `√(g_{kl} g^{jm} T^k_j T^l_m)`.
pub fn norm_11(t: &DMatrix<f64>, g: &DMatrix<f64>, ginv: &DMatrix<f64>) -> f64 {
    (g * t * ginv * t.transpose()).trace().max(0.0).sqrt()
}

/// Norm of a (1,2)-tensor given as `[T_i]` with `T_i` a (1,1)-tensor.
pub fn norm_12(t: &[DMatrix<f64>], g: &DMatrix<f64>, ginv: &DMatrix<f64>) -> f64 {
    let n = t.len();
    let mut s = 0.0;
    for i in 0..n {
        for ip in 0..n {
            s += ginv[(i, ip)] * (g * &t[i] * ginv * t[ip].transpose()).trace();
        }
    }
    s.max(0.0).sqrt()
}

/// Newtype so `DVector` results go through `fd_partial`.
#[derive(Clone)]
struct Dv(DVector<f64>);

impl Sub for Dv {
    type Output = Dv;
    fn sub(self, o: Dv) -> Dv {
        Dv(self.0 - o.0)
    }
}

impl Mul<f64> for Dv {
    type Output = Dv;
    fn mul(self, s: f64) -> Dv {
        Dv(self.0 * s)
    }
}

#[derive(Clone)]
struct GammaVec(Vec<DMatrix<f64>>);

impl Sub for GammaVec {
    type Output = GammaVec;
    fn sub(self, o: GammaVec) -> GammaVec {
        GammaVec(self.0.into_iter().zip(o.0).map(|(a, b)| a - b).collect())
    }
}

impl Mul<f64> for GammaVec {
    type Output = GammaVec;
    fn mul(self, s: f64) -> GammaVec {
        GammaVec(self.0.into_iter().map(|a| a * s).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sphere_christoffel(p: &[f64]) -> Christoffel {
        // h = e^{2φ}δ with φ = ln(2) − ln(1+u): Γ^k_{ij} = δ_ik φ_j + δ_jk φ_i − δ_ij φ_k.
        let u = p[0] * p[0] + p[1] * p[1];
        let dphi = [-2.0 * p[0] / (1.0 + u), -2.0 * p[1] / (1.0 + u)];
        let d = |a: usize, b: usize| if a == b { 1.0 } else { 0.0 };
        Christoffel(
            (0..2)
                .map(|k| DMatrix::from_fn(2, 2, |i, j| d(i, k) * dphi[j] + d(j, k) * dphi[i] - d(i, j) * dphi[k]))
                .collect(),
        )
    }

    #[test]
    fn flat_metric_has_no_connection() {
        let e = Euclidean(3);
        let c = Calculus::new(&e);
        let p = [0.3, -1.0, 2.0];
        assert_eq!(c.christoffel(&p).unwrap().0.iter().map(|m| m.amax()).fold(0.0, f64::max), 0.0);
        assert!(c.ricci(&p).unwrap().amax() < 1e-12);
        let half_sq = FnScalar(|q: &[f64]| Ok(0.5 * q.iter().map(|x| x * x).sum::<f64>()));
        let h = c.hessian(&half_sq, &p).unwrap();
        assert!((h - DMatrix::identity(3, 3)).amax() < 1e-8);
        assert!((c.laplacian(&half_sq, &p).unwrap() - 3.0).abs() < 1e-8);
        let constant = FnVector(|_q: &[f64]| Ok(DVector::from_vec(vec![1.0, 2.0, 3.0])));
        let y = DVector::from_vec(vec![0.2, 0.1, -0.4]);
        assert!(c.covariant_derivative(&constant, &y, &p).unwrap().amax() < 1e-12);
        let lin = FnVector(|q: &[f64]| Ok(DVector::from_vec(vec![q[1] * q[1], 0.0, 0.0])));
        let d = c.covariant_derivative(&lin, &y, &p).unwrap();
        assert!((d[0] - 2.0 * p[1] * y[1]).abs() < 1e-9);
    }

    #[test]
    fn sphere_christoffels_and_curvature() {
        let s = RoundSphere { r2: 1.0 };
        let c = Calculus::new(&s);
        for p in [[0.2, 0.1], [-0.7, 0.4], [1.3, -0.9]] {
            let fd = c.christoffel(&p).unwrap();
            assert!(fd.max_abs_diff(&sphere_christoffel(&p)) < 1e-8);
            let ric = c.ricci(&p).unwrap();
            let g = c.metric_at(&p).unwrap();
            assert!((ric - g).amax() < 1e-4);
        }
    }

    #[test]
    fn killing_and_non_killing_fields() {
        let e = Euclidean(2);
        let c = Calculus::new(&e);
        let rot = FnVector(|q: &[f64]| Ok(DVector::from_vec(vec![-q[1], q[0]])));
        assert!(c.lie_derivative_metric(&rot, &[0.4, 0.9]).unwrap().amax() < 1e-10);
        let s = RoundSphere { r2: 1.0 };
        let cs = Calculus::new(&s);
        let rot_s = FnVector(|q: &[f64]| Ok(DVector::from_vec(vec![-q[1], q[0]])));
        assert!(cs.lie_derivative_metric(&rot_s, &[0.4, 0.9]).unwrap().amax() < 1e-9);
        let trans = FnVector(|_q: &[f64]| Ok(DVector::from_vec(vec![1.0, 0.0])));
        assert!(cs.lie_derivative_metric(&trans, &[0.4, 0.9]).unwrap().amax() > 0.1);
    }

    #[test]
    fn complex_structure_residuals() {
        let e = Euclidean(2);
        let c = Calculus::new(&e);
        let j0 = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let jj = j0.clone();
        let flat = FnComplex(move |_q: &[f64]| Ok(jj.clone()));
        let g = DMatrix::identity(2, 2);
        let nj = c.nabla_j(&flat, &[0.1, 0.2]).unwrap();
        assert!(norm_12(&nj, &g, &g) < 1e-12);
        // residual scales with the perturbation size
        for eps in [1e-2, 1e-3] {
            let jp = j0.clone();
            let pert = FnComplex(move |q: &[f64]| {
                let s = DMatrix::from_row_slice(2, 2, &[q[0], q[1], q[1], -q[0]]);
                Ok(&jp + s * eps)
            });
            let r = norm_12(&c.nabla_j(&pert, &[0.1, 0.2]).unwrap(), &g, &g);
            assert!(r > 0.5 * eps && r < 4.0 * eps);
        }
    }

    #[test]
    fn analytic_and_fd_christoffels_agree() {
        struct Warped;
        impl MetricField for Warped {
            fn dim(&self) -> usize {
                2
            }
            fn metric(&self, p: &[f64]) -> Result<DMatrix<f64>> {
                Ok(DMatrix::from_row_slice(2, 2, &[1.0 + p[1] * p[1], 0.0, 0.0, p[0].exp()]))
            }
            fn metric_derivatives(&self, p: &[f64]) -> Option<Result<Vec<DMatrix<f64>>>> {
                Some(Ok(vec![
                    DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, p[0].exp()]),
                    DMatrix::from_row_slice(2, 2, &[2.0 * p[1], 0.0, 0.0, 0.0]),
                ]))
            }
            fn contains(&self, _p: &[f64]) -> bool {
                true
            }
        }
        let c = Calculus::new(&Warped);
        let p = [0.3, 0.7];
        assert!(c.christoffel(&p).unwrap().max_abs_diff(&c.christoffel_fd(&p).unwrap()) < 1e-8);
        // metric compatibility: ∂_k g_ij = Γ_{i,kj} + Γ_{j,ki}
        let g = c.metric_at(&p).unwrap();
        let gam = c.christoffel(&p).unwrap();
        let dg = c.metric_derivatives(&p).unwrap();
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let mut v = dg[k][(i, j)];
                    for m in 0..2 {
                        v -= g[(m, j)] * gam.get(m, k, i) + g[(i, m)] * gam.get(m, k, j);
                    }
                    assert!(v.abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn stencil_refuses_to_cross_the_boundary() {
        let m = FnMetric {
            dim: 1,
            g: |_p: &[f64]| DMatrix::identity(1, 1),
            domain: |p: &[f64]| p[0] > 0.0,
        };
        let c = Calculus::new(&m);
        assert!(matches!(c.christoffel_fd(&[1e-4]), Err(Error::Boundary { axis: 0 })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn christoffels_are_symmetric(x in -1.5f64..1.5, y in -1.5f64..1.5) {
            let s = RoundSphere { r2: 2.0 };
            let gam = Calculus::new(&s).christoffel(&[x, y]).unwrap();
            for k in 0..2 {
                prop_assert!((&gam.0[k] - gam.0[k].transpose()).amax() < 1e-14);
            }
        }
    }
}
