//! Residual suite for a Kähler metric with a Killing potential.
//!
//! Every check evaluates one identity on a sample grid and reports scale-free
//! residual statistics. Pointwise quantities (`∇τ`, `Q`, `∇v`, `ψ`, `φ`, `Δτ`)
//! are computed numerically by [`Probe`]; the construction's closed forms only
//! enter as the right-hand sides being tested.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::construction::{ConstructionData, Perturbation, TotalChart, TAU, THETA};
use crate::error::{Error, Result};
use crate::geometry::{
    integrate_gradient_flow, invert_spd, norm_02, norm_11, norm_12, AlmostComplexField, Calculus, Christoffel,
    FdOptions, FlowStop, FnVector, MetricField, ScalarField, Termination, VectorField,
};
use crate::numerics::richardson_even;
use crate::profiles::{ReparamMaps, ReparamOptions};
use crate::rp1::{rp1_div, Rp1};
use crate::surfaces::curvature_density;

/// Base points `bx × by`, `nt` levels of `τ`, `nth` fibre angles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub bx: usize,
    pub by: usize,
    pub nt: usize,
    pub nth: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            bx: 8,
            by: 8,
            nt: 16,
            nth: 4,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("bx", self.bx), ("by", self.by), ("nt", self.nt), ("nth", self.nth)] {
            if v == 0 || v > 4096 {
                return Err(Error::config(format!("grid.{name}"), format!("must be in 1..=4096, got {v}")));
            }
        }
        Ok(())
    }
}

impl FromStr for GridSpec {
    type Err = Error;

    /// `"bx,by,nt,nth"`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(Error::config("grid", format!("expected \"bx,by,nt,nth\", got {s:?}")));
        }
        let mut v = [0usize; 4];
        for (slot, part) in v.iter_mut().zip(&parts) {
            *slot = part
                .parse()
                .map_err(|_| Error::config("grid", format!("{part:?} is not a non-negative integer")))?;
        }
        let g = Self {
            bx: v[0],
            by: v[1],
            nt: v[2],
            nth: v[3],
        };
        g.validate()?;
        Ok(g)
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.bx, self.by, self.nt, self.nth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub first_derivative: f64,
    pub second_derivative: f64,
    pub ricci: f64,
    pub boundary: f64,
    pub flow: f64,
    pub route_agreement: f64,
    pub drift: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            first_derivative: 1e-6,
            second_derivative: 1e-5,
            ricci: 1e-3,
            boundary: 1e-3,
            flow: 1e-4,
            route_agreement: 1e-8,
            drift: 1e-8,
        }
    }
}

impl Tolerances {
    fn validate(&self) -> Result<()> {
        let all = [
            ("first_derivative", self.first_derivative),
            ("second_derivative", self.second_derivative),
            ("ricci", self.ricci),
            ("boundary", self.boundary),
            ("flow", self.flow),
            ("route_agreement", self.route_agreement),
            ("drift", self.drift),
        ];
        for (name, v) in all {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(format!("tolerances.{name}"), format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Tolerance for a check id, by family.
    pub fn for_check(&self, id: &str) -> f64 {
        match id {
            "killing.route_agreement" => self.route_agreement,
            "flow.base_drift" => self.drift,
            "gamma_recovery.fibre_spread" => self.first_derivative,
            _ => match id.split('.').next().unwrap_or("") {
                "kaehler" | "killing" | "geodesic_gradient" | "oracle" | "fs" => self.first_derivative,
                "bochner" => self.ricci,
                "boundary" => self.boundary,
                "flow" => self.flow,
                _ => self.second_derivative,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    pub grid: GridSpec,
    pub tolerances: Tolerances,
    pub tol_scale: f64,
    pub seed: u64,
    /// Grid collar at each end of the fibre, as a fraction of `λ`.
    pub collar: f64,
    /// Smallest `s` of the boundary extrapolation, as a fraction of `λ`.
    pub boundary_delta: f64,
    /// Start and stop offset in `s` of the flow-length check.
    pub flow_delta: f64,
    /// Random points for the closed-form Christoffel comparison.
    pub oracle_samples: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            tolerances: Tolerances::default(),
            tol_scale: 1.0,
            seed: 0,
            collar: 0.02,
            boundary_delta: 0.005,
            flow_delta: 0.01,
            oracle_samples: 100,
        }
    }
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.tolerances.validate()?;
        if !(self.tol_scale.is_finite() && self.tol_scale > 0.0) {
            return Err(Error::config("tol_scale", format!("must be positive, got {}", self.tol_scale)));
        }
        if !(self.collar > 0.0 && self.collar < 0.25) {
            return Err(Error::config("collar", "must lie in (0, 0.25)"));
        }
        if !(self.boundary_delta > 0.0 && self.boundary_delta < 0.05) {
            return Err(Error::config("boundary_delta", "must lie in (0, 0.05)"));
        }
        if !(self.flow_delta > 0.0 && self.flow_delta.is_finite()) {
            return Err(Error::config("flow_delta", "must be positive"));
        }
        Ok(())
    }

    pub fn tol(&self, id: &str) -> f64 {
        self.tolerances.for_check(id) * self.tol_scale
    }
}

/// One residual at one grid point.
#[derive(Debug, Clone)]
pub struct Sample {
    pub index: Vec<usize>,
    pub point: Vec<f64>,
    pub value: std::result::Result<f64, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Offender {
    pub index: Vec<usize>,
    pub point: Vec<f64>,
    pub residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub check: String,
    pub grid: String,
    pub samples: usize,
    /// `∞` (written as `"inf"`) when any sample failed to evaluate.
    #[serde(serialize_with = "finite_or_inf")]
    pub max: f64,
    #[serde(serialize_with = "finite_or_inf")]
    pub mean: f64,
    #[serde(serialize_with = "finite_or_inf")]
    pub p99: f64,
    pub tol: f64,
    pub pass: bool,
    pub errors: usize,
    pub offenders: Vec<Offender>,
}

fn finite_or_inf<S: serde::Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str("inf")
    }
}

const MAX_OFFENDERS: usize = 10;

impl CheckReport {
    pub fn from_samples(check: &str, grid: &str, tol: f64, samples: Vec<Sample>) -> Self {
        let mut finite: Vec<f64> = samples
            .iter()
            .filter_map(|s| s.value.as_ref().ok().copied().filter(|v| v.is_finite()))
            .collect();
        let errors = samples.len() - finite.len();
        finite.sort_by(f64::total_cmp);
        let mean = if finite.is_empty() {
            0.0
        } else {
            finite.iter().sum::<f64>() / finite.len() as f64
        };
        let p99 = if finite.is_empty() {
            0.0
        } else {
            let k = ((0.99 * finite.len() as f64).ceil() as usize).clamp(1, finite.len()) - 1;
            finite[k]
        };
        let max = if errors > 0 {
            f64::INFINITY
        } else {
            finite.last().copied().unwrap_or(0.0)
        };
        let key = |s: &Sample| match &s.value {
            Ok(v) if v.is_finite() => *v,
            _ => f64::INFINITY,
        };
        let mut ranked: Vec<&Sample> = samples.iter().collect();
        ranked.sort_by(|a, b| key(b).total_cmp(&key(a)).then_with(|| a.index.cmp(&b.index)));
        let offenders = ranked
            .into_iter()
            .take(MAX_OFFENDERS)
            .map(|s| Offender {
                index: s.index.clone(),
                point: s.point.clone(),
                residual: s.value.as_ref().ok().copied().filter(|v| v.is_finite()),
                error: match &s.value {
                    Err(e) => Some(e.clone()),
                    Ok(v) if !v.is_finite() => Some("non-finite residual".into()),
                    Ok(_) => None,
                },
            })
            .collect();
        Self {
            check: check.to_string(),
            grid: grid.to_string(),
            samples: samples.len(),
            max,
            mean,
            p99,
            tol,
            pass: !samples.is_empty() && errors == 0 && max <= tol,
            errors,
            offenders,
        }
    }
}

pub fn all_pass(reports: &[CheckReport]) -> bool {
    reports.iter().all(|r| r.pass)
}

/// Human-readable table, one line per check.
pub fn summary_table(reports: &[CheckReport]) -> String {
    let mut out = format!("{:<36} {:>6} {:>11} {:>11} {:>9}\n", "check", "status", "max", "p99", "tol");
    for r in reports {
        out.push_str(&format!(
            "{:<36} {:>6} {:>11.3e} {:>11.3e} {:>9.1e}\n",
            r.check,
            if r.pass { "pass" } else { "FAIL" },
            r.max,
            r.p99,
            r.tol
        ));
    }
    out
}

/// Pointwise first-order data of `(g, J, τ)` at one point.
#[derive(Debug, Clone)]
pub struct Jet {
    pub g: DMatrix<f64>,
    pub ginv: DMatrix<f64>,
    pub gamma: Christoffel,
    pub dtau: DVector<f64>,
    /// `v = ∇τ`.
    pub v: DVector<f64>,
    /// `u = Jv`.
    pub u: DVector<f64>,
    pub q: f64,
    /// `∇v` as an endomorphism, `M[(k, i)] = ∇_i v^k`.
    pub nabla_v: DMatrix<f64>,
    /// Eigenvalue of `∇v` on `v`.
    pub psi: f64,
    /// Mean eigenvalue of `∇v` on `𝓗 = span(v, u)^⊥`.
    pub phi: f64,
    pub laplacian: f64,
    pub nabla_v_sq: f64,
    /// `g`-orthonormal basis of `𝓗`.
    pub horizontal: Vec<DVector<f64>>,
}

/// `∇f` as a vector field.
pub struct GradientOf<'p, 'a> {
    pub calc: &'p Calculus<'a>,
    pub f: &'p dyn ScalarField,
}

impl VectorField for GradientOf<'_, '_> {
    fn value(&self, p: &[f64]) -> Result<DVector<f64>> {
        self.calc.gradient(self.f, p)
    }
}

/// `J∇f` as a vector field.
pub struct JGradientOf<'p, 'a> {
    pub calc: &'p Calculus<'a>,
    pub f: &'p dyn ScalarField,
    pub j: &'p dyn AlmostComplexField,
}

impl VectorField for JGradientOf<'_, '_> {
    fn value(&self, p: &[f64]) -> Result<DVector<f64>> {
        Ok(self.j.value(p)? * self.calc.gradient(self.f, p)?)
    }
}

fn inner(g: &DMatrix<f64>, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    (x.transpose() * g * y)[(0, 0)]
}

fn form_norm(ginv: &DMatrix<f64>, w: &DVector<f64>) -> f64 {
    inner(ginv, w, w).max(0.0).sqrt()
}

/// Folds an angle difference on ℝP¹ into `(−π/2, π/2]`.
fn wrap_angle(d: f64) -> f64 {
    let d = d.rem_euclid(PI);
    if d > 0.5 * PI {
        d - PI
    } else {
        d
    }
}

/// Numerical evaluator of `(g, J, τ)`.
pub struct Probe<'a> {
    pub calc: Calculus<'a>,
    pub j: &'a dyn AlmostComplexField,
    pub tau: &'a dyn ScalarField,
}

impl<'a> Probe<'a> {
    pub fn new(metric: &'a dyn MetricField, j: &'a dyn AlmostComplexField, tau: &'a dyn ScalarField) -> Self {
        Self {
            calc: Calculus::new(metric),
            j,
            tau,
        }
    }

    pub fn gradient_field(&self) -> GradientOf<'_, 'a> {
        GradientOf {
            calc: &self.calc,
            f: self.tau,
        }
    }

    /// `Q = g(∇τ, ∇τ)`.
    pub fn q(&self, p: &[f64]) -> Result<f64> {
        let d = self.calc.scalar_gradient_coords(self.tau, p)?;
        Ok(inner(&self.calc.inverse_metric(p)?, &d, &d))
    }

    pub fn nabla_v(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        self.calc.covariant_jacobian(&self.gradient_field(), p)
    }

    pub fn jet(&self, p: &[f64]) -> Result<Jet> {
        let g = self.calc.metric_at(p)?;
        let ginv = invert_spd(&g)?;
        let gamma = self.calc.christoffel(p)?;
        let dtau = self.calc.scalar_gradient_coords(self.tau, p)?;
        let v = &ginv * &dtau;
        let q = dtau.dot(&v);
        if !(q > 0.0) {
            return Err(Error::UndefinedGradient(format!("|dτ|² = {q} at {p:?}")));
        }
        let u = self.j.value(p)? * &v;
        let m = self.nabla_v(p)?;
        let psi = inner(&g, &(&m * &v), &v) / q;
        let horizontal = horizontal_basis(&g, &v, &u);
        let phi = horizontal.iter().map(|e| inner(&g, &(&m * e), e)).sum::<f64>() / horizontal.len().max(1) as f64;
        let laplacian = m.trace();
        let nabla_v_sq = norm_11(&m, &g, &ginv).powi(2);
        Ok(Jet {
            g,
            ginv,
            gamma,
            dtau,
            v,
            u,
            q,
            nabla_v: m,
            psi,
            phi,
            laplacian,
            nabla_v_sq,
            horizontal,
        })
    }

    fn direction_step(&self, p: &[f64], dir: &DVector<f64>) -> Result<f64> {
        let dmax = dir.amax();
        let mut h = self.calc.opts.h0 / dmax;
        for (k, d) in dir.iter().enumerate() {
            if *d != 0.0 {
                h = h.min(self.calc.metric.step_limit(p, k) / d.abs());
            }
        }
        let reach = |t: f64| -> Vec<f64> { p.iter().zip(dir.iter()).map(|(a, d)| a + t * d).collect() };
        if !(h > 0.0 && h.is_finite())
            || !self.calc.metric.contains(&reach(2.0 * h))
            || !self.calc.metric.contains(&reach(-2.0 * h))
        {
            return Err(Error::Domain(format!("directional stencil at {p:?} leaves the domain")));
        }
        Ok(h)
    }

    /// `d_X f` for several scalar functions at once (4th-order stencil).
    pub fn directional_vec(
        &self,
        f: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
        p: &[f64],
        dir: &DVector<f64>,
    ) -> Result<Vec<f64>> {
        if dir.amax() == 0.0 {
            return Ok(vec![0.0; f(p)?.len()]);
        }
        let h = self.direction_step(p, dir)?;
        let at = |t: f64| -> Result<Vec<f64>> {
            let q: Vec<f64> = p.iter().zip(dir.iter()).map(|(a, d)| a + t * d).collect();
            f(&q)
        };
        let (f1, fm1, f2, fm2) = (at(h)?, at(-h)?, at(2.0 * h)?, at(-2.0 * h)?);
        Ok((0..f1.len())
            .map(|i| (8.0 * (f1[i] - fm1[i]) - (f2[i] - fm2[i])) / (12.0 * h))
            .collect())
    }

    pub fn directional(&self, f: &dyn Fn(&[f64]) -> Result<f64>, p: &[f64], dir: &DVector<f64>) -> Result<f64> {
        self.directional_vec(&|x| f(x).map(|v| vec![v]), p, dir).map(|v| v[0])
    }

    /// Derivative of an ℝP¹-valued function, in the angle chart.
    pub fn directional_angle(
        &self,
        f: &dyn Fn(&[f64]) -> Result<Rp1>,
        p: &[f64],
        dir: &DVector<f64>,
    ) -> Result<f64> {
        let c = f(p)?.angle();
        self.directional(&|x| Ok(wrap_angle(f(x)?.angle() - c)), p, dir)
    }

    /// `|∇J|` relative to the connection part of `∇J`, and `|[J, ∇v]|`
    /// relative to `|∇v|`.
    pub fn kaehler_residuals(&self, p: &[f64], jet: &Jet) -> Result<(f64, f64)> {
        let n = self.calc.dim();
        let nj = self.calc.nabla_j(self.j, p)?;
        let jm = self.j.value(p)?;
        let conn: Vec<DMatrix<f64>> = (0..n)
            .map(|i| {
                let gi = DMatrix::from_fn(n, n, |k, m| jet.gamma.get(k, i, m));
                &gi * &jm - &jm * &gi
            })
            .collect();
        let r1 = norm_12(&nj, &jet.g, &jet.ginv) / (1.0 + norm_12(&conn, &jet.g, &jet.ginv));
        let m = &jet.nabla_v;
        let comm = &jm * m - m * &jm;
        let r2 = norm_11(&comm, &jet.g, &jet.ginv) / (1.0 + norm_11(m, &jet.g, &jet.ginv));
        Ok((r1, r2))
    }

    /// `|£_X g| / (1 + 2|∇X|)`.
    pub fn killing_residual(&self, x: &dyn VectorField, p: &[f64]) -> Result<f64> {
        let g = self.calc.metric_at(p)?;
        let ginv = invert_spd(&g)?;
        let lie = self.calc.lie_derivative_metric(x, p)?;
        let m = self.calc.covariant_jacobian(x, p)?;
        Ok(norm_02(&lie, &ginv) / (1.0 + 2.0 * norm_11(&m, &g, &ginv)))
    }

    /// Component of `dQ` off `dτ`, relative to `1 + |dQ|`.
    pub fn dq_wedge_dtau(&self, p: &[f64], jet: &Jet) -> Result<f64> {
        let n = self.calc.dim();
        let mut dq = DVector::zeros(n);
        for k in 0..n {
            dq[k] = self.calc.partial(|x| self.q(x), p, k)?;
        }
        let along = dq.dot(&jet.v) / jet.q;
        let perp = &dq - &jet.dtau * along;
        Ok(form_norm(&jet.ginv, &perp) / (1.0 + form_norm(&jet.ginv, &dq)))
    }

    /// `|∇_v v − ψv| / ((1 + |ψ|)|v|)`.
    pub fn nabla_v_v(&self, jet: &Jet, psi: f64) -> f64 {
        let r = &jet.nabla_v * &jet.v - &jet.v * psi;
        inner(&jet.g, &r, &r).max(0.0).sqrt() / ((1.0 + psi.abs()) * jet.q.sqrt())
    }

    /// `(tps.c)`, `(dvp)`, `(dps.i)`, `(dps.ii)` with `ψ`, `φ` read off `∇v`.
    pub fn ode_residuals(&self, p: &[f64], jet: &Jet) -> Result<[f64; 4]> {
        let (q, psi, phi) = (jet.q, jet.psi, jet.phi);
        let dvq = self.directional(&|x| self.q(x), p, &jet.v)?;
        let tps_c = (dvq - 2.0 * psi * q).abs() / (1.0 + (2.0 * psi * q).abs());
        let dvphi = self.directional(&|x| self.jet(x).map(|j| j.phi), p, &jet.v)?;
        let rhs = 2.0 * (psi - phi) * phi;
        let dvp = (dvphi - rhs).abs() / (1.0 + rhs.abs());
        let dps_i = (jet.laplacian - 2.0 * (psi + phi)).abs() / (1.0 + jet.laplacian.abs());
        let dps_ii = (jet.nabla_v_sq - 2.0 * (psi * psi + phi * phi)).abs() / (1.0 + jet.nabla_v_sq);
        Ok([tps_c, dvp, dps_i, dps_ii])
    }

    pub fn laplacian_gradient(&self, p: &[f64]) -> Result<DVector<f64>> {
        let n = self.calc.dim();
        let mut d = DVector::zeros(n);
        for k in 0..n {
            d[k] = self.calc.partial(|x| self.calc.laplacian(self.tau, x), p, k)?;
        }
        Ok(d)
    }

    /// `(ddt)` only: `|dΔτ + 2Ric(·, v)|`, relative.
    pub fn ddt_residual(&self, p: &[f64], jet: &Jet) -> Result<f64> {
        let dlap = self.laplacian_gradient(p)?;
        let ricv = self.calc.ricci(p)? * &jet.v;
        let r = &dlap + &ricv * 2.0;
        Ok(form_norm(&jet.ginv, &r) / (1.0 + form_norm(&jet.ginv, &dlap) + 2.0 * form_norm(&jet.ginv, &ricv)))
    }

    /// `(bch)`, `(ddt)` and `(dvd)` for `v = ∇τ`, relative residuals.
    pub fn bochner_residuals(&self, p: &[f64], jet: &Jet) -> Result<[f64; 3]> {
        let n = self.calc.dim();
        let dlap = self.laplacian_gradient(p)?;
        let ricv = self.calc.ricci(p)? * &jet.v;
        let m = &jet.nabla_v;
        let dm: Vec<DMatrix<f64>> = (0..n)
            .map(|k| self.calc.partial(|x| self.nabla_v(x), p, k))
            .collect::<Result<_>>()?;
        let div_t = DVector::from_fn(n, |j, _| {
            let mut s = 0.0;
            for k in 0..n {
                s += dm[k][(k, j)];
                for l in 0..n {
                    s += jet.gamma.get(k, k, l) * m[(l, j)] - jet.gamma.get(l, k, j) * m[(k, l)];
                }
            }
            s
        });
        let nd = form_norm(&jet.ginv, &dlap);
        let nr = form_norm(&jet.ginv, &ricv);
        let bch = form_norm(&jet.ginv, &(&dlap - (&div_t - &ricv))) / (1.0 + nd + nr);
        let ddt = form_norm(&jet.ginv, &(&dlap + &ricv * 2.0)) / (1.0 + nd + 2.0 * nr);
        let w = FnVector(|x: &[f64]| Ok(self.nabla_v(x)? * self.calc.gradient(self.tau, x)?));
        let div_w = self.calc.divergence(&w, p)?;
        let dv_lap = dlap.dot(&jet.v);
        let dvd = (dv_lap - 2.0 * div_w + 2.0 * jet.nabla_v_sq).abs() / (1.0 + dv_lap.abs() + 2.0 * jet.nabla_v_sq);
        Ok([bch, ddt, dvd])
    }

    /// Eigenvalues of the Hessian of `τ` as a `g`-self-adjoint endomorphism,
    /// ascending.
    pub fn hessian_eigenvalues(&self, p: &[f64]) -> Result<Vec<f64>> {
        let h = self.calc.hessian(self.tau, p)?;
        let g = self.calc.metric_at(p)?;
        let l = g.cholesky().ok_or(Error::Conditioning(f64::INFINITY))?.l();
        let linv = l.try_inverse().ok_or(Error::Conditioning(f64::INFINITY))?;
        let a = &linv * h * linv.transpose();
        let a = (&a + a.transpose()) * 0.5;
        let mut ev: Vec<f64> = a.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        Ok(ev)
    }
}

/// `g`-orthonormal basis of the complement of `span(v, u)`.
pub fn horizontal_basis(g: &DMatrix<f64>, v: &DVector<f64>, u: &DVector<f64>) -> Vec<DVector<f64>> {
    let n = g.nrows();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(n);
    let push = |basis: &mut Vec<DVector<f64>>, x: &DVector<f64>, floor: f64| {
        let mut y = x.clone();
        for _ in 0..2 {
            for b in basis.iter() {
                let c = inner(g, &y, b);
                y -= b * c;
            }
        }
        let norm = inner(g, &y, &y).max(0.0).sqrt();
        if norm > floor {
            basis.push(y / norm);
        }
    };
    push(&mut basis, v, 0.0);
    push(&mut basis, u, 0.0);
    for k in 0..n {
        if basis.len() == n {
            break;
        }
        let mut e = DVector::zeros(n);
        e[k] = 1.0;
        push(&mut basis, &e, 1e-6 * g[(k, k)].sqrt());
    }
    basis.split_off(2.min(basis.len()))
}

/// `γ_rec = τ − Q/(Δτ − 2ψ)` with `Q`, `Δτ` numeric and `ψ` supplied.
pub fn recover_gamma(tau: f64, q: f64, laplacian: f64, psi: f64) -> Result<Rp1> {
    Ok(match rp1_div(q, Rp1::Finite(laplacian - 2.0 * psi))? {
        Rp1::Infinity => Rp1::Infinity,
        Rp1::Finite(r) => Rp1::Finite(tau - r),
    })
}

/// Ids of the per-point checks, in report order.
pub const POINT_CHECKS: [&str; 21] = [
    "bochner.bch",
    "bochner.ddt",
    "bochner.dvd",
    "bracket.curvature",
    "bracket.dvq",
    "bracket.wwv",
    "gamma_recovery.distance",
    "gamma_recovery.fibre_derivative",
    "geodesic_gradient.dq_wedge_dtau",
    "geodesic_gradient.nabla_v_v",
    "kaehler.j_nabla_v",
    "kaehler.nabla_j",
    "killing.a_dtheta",
    "killing.j_grad_tau",
    "killing.route_agreement",
    "laplacian_identity",
    "ode.dps_i",
    "ode.dps_ii",
    "ode.dvp",
    "ode.tps_b",
    "ode.tps_c",
];

fn slot(id: &str) -> usize {
    POINT_CHECKS.iter().position(|c| *c == id).expect("known check id")
}

type Res = std::result::Result<f64, String>;

struct PointOut {
    residuals: Vec<Res>,
    gamma_rec: Option<Rp1>,
}

fn evaluate_point(chart: &TotalChart, p: &[f64]) -> PointOut {
    let j = chart.complex_structure();
    let tau = chart.tau();
    let probe = Probe::new(chart, &j, &tau);
    let jet = match probe.jet(p) {
        Ok(j) => j,
        Err(e) => {
            return PointOut {
                residuals: vec![Err(e.to_string()); POINT_CHECKS.len()],
                gamma_rec: None,
            }
        }
    };
    let mut out: Vec<Res> = vec![Err("not evaluated".into()); POINT_CHECKS.len()];
    let mut put = |id: &str, r: Result<f64>| out[slot(id)] = r.map_err(|e| e.to_string());
    let a = chart.a();
    let tau_v = p[TAU];
    let q_profile = chart.q(p);
    let psi_profile = chart.psi(p);

    match probe.kaehler_residuals(p, &jet) {
        Ok((r1, r2)) => {
            put("kaehler.nabla_j", Ok(r1));
            put("kaehler.j_nabla_v", Ok(r2));
        }
        Err(e) => {
            let msg = e.to_string();
            put("kaehler.nabla_j", Err(Error::NumericalFailure(msg.clone())));
            put("kaehler.j_nabla_v", Err(Error::NumericalFailure(msg)));
        }
    }

    put("killing.a_dtheta", probe.killing_residual(&chart.u(), p));
    let jgrad = JGradientOf {
        calc: &probe.calc,
        f: &tau,
        j: &j,
    };
    put("killing.j_grad_tau", probe.killing_residual(&jgrad, p));
    put(
        "killing.route_agreement",
        (|| {
            let ua = chart.u().value(p)?;
            let un = jgrad.value(p)?;
            let d = &ua - &un;
            Ok((inner(&jet.g, &d, &d) / inner(&jet.g, &ua, &ua)).max(0.0).sqrt())
        })(),
    );

    put("geodesic_gradient.dq_wedge_dtau", probe.dq_wedge_dtau(p, &jet));
    put("geodesic_gradient.nabla_v_v", Ok(probe.nabla_v_v(&jet, psi_profile)));

    let gamma = chart.gamma_at(p);
    let target = match gamma {
        Rp1::Infinity => q_profile_slope(chart, p),
        Rp1::Finite(g) => q_profile / (tau_v - g) + q_profile_slope(chart, p),
    };
    put(
        "laplacian_identity",
        Ok((jet.laplacian - target).abs() / (1.0 + jet.laplacian.abs())),
    );

    let gamma_at = |x: &[f64]| -> Result<Rp1> {
        let q = probe.q(x)?;
        let lap = probe.calc.laplacian(&tau, x)?;
        recover_gamma(x[TAU], q, lap, chart.psi(x))
    };
    let gamma_rec = recover_gamma(tau_v, jet.q, jet.laplacian, psi_profile).ok();
    put(
        "gamma_recovery.distance",
        gamma_rec
            .map(|g| g.chordal_distance(&gamma))
            .ok_or(Error::UndefinedOperation("0/0 in gamma recovery")),
    );
    put(
        "gamma_recovery.fibre_derivative",
        (|| {
            let dv = probe.directional_angle(&gamma_at, p, &jet.v)?;
            let du = probe.directional_angle(&gamma_at, p, &jet.u)?;
            Ok(dv.abs() + du.abs())
        })(),
    );

    put("ode.tps_b", Ok((jet.q - q_profile).abs() / (1.0 + q_profile)));
    match probe.ode_residuals(p, &jet) {
        Ok([c, dvp, di, dii]) => {
            put("ode.tps_c", Ok(c));
            put("ode.dvp", Ok(dvp));
            put("ode.dps_i", Ok(di));
            put("ode.dps_ii", Ok(dii));
        }
        Err(e) => {
            for id in ["ode.tps_c", "ode.dvp", "ode.dps_i", "ode.dps_ii"] {
                put(id, Err(Error::NumericalFailure(e.to_string())));
            }
        }
    }

    match bracket_residuals(chart, &probe, p, &jet) {
        Ok([wwv, curv, dvq]) => {
            put("bracket.wwv", Ok(wwv));
            put("bracket.curvature", Ok(curv));
            put("bracket.dvq", Ok(dvq));
        }
        Err(e) => {
            for id in ["bracket.wwv", "bracket.curvature", "bracket.dvq"] {
                put(id, Err(Error::NumericalFailure(e.to_string())));
            }
        }
    }

    match probe.bochner_residuals(p, &jet) {
        Ok([bch, ddt, dvd]) => {
            put("bochner.bch", Ok(bch));
            put("bochner.ddt", Ok(ddt));
            put("bochner.dvd", Ok(dvd));
        }
        Err(e) => {
            for id in ["bochner.bch", "bochner.ddt", "bochner.dvd"] {
                put(id, Err(Error::NumericalFailure(e.to_string())));
            }
        }
    }
    let _ = a;
    PointOut {
        residuals: out,
        gamma_rec,
    }
}

fn q_profile_slope(chart: &TotalChart, p: &[f64]) -> f64 {
    chart.profile.dq(p[TAU])
}

/// `(wwv)`, the curvature form of the vertical bracket, and `(dvq)`.
fn bracket_residuals(chart: &TotalChart, probe: &Probe, p: &[f64], jet: &Jet) -> Result<[f64; 3]> {
    let calc = &probe.calc;
    let lift = |i: usize| FnVector(move |x: &[f64]| chart.lift(i).value(x));
    let (l0, l1) = (lift(0), lift(1));
    let w0 = l0.value(p)?;
    let w1 = l1.value(p)?;
    let bracket = calc.vector_jacobian(&l1, p)? * &w0 - calc.vector_jacobian(&l0, p)? * &w1;
    let g = &jet.g;
    let vert = &jet.v * (inner(g, &bracket, &jet.v) / jet.q) + &jet.u * (inner(g, &bracket, &jet.u) / jet.q);
    let jm = probe.j.value(p)?;
    let gjw = inner(g, &(&jm * &w0), &w1);
    let rhs = &jet.u * (-2.0 * jet.phi * gjw);
    let lhs = &vert * jet.q;
    let d = &lhs - &rhs;
    let norm = |x: &DVector<f64>| inner(g, x, x).max(0.0).sqrt();
    let wwv = norm(&d) / (1.0 + norm(&rhs));

    let (om, _) = curvature_density(
        chart.a(),
        chart.tau_star(),
        chart.base.chart.as_ref(),
        &chart.base.gamma,
        [p[0], p[1]],
    )?;
    let expect = &jet.u * (om / chart.a());
    let curv = norm(&(&vert - &expect)) / (1.0 + norm(&expect));

    let f = |x: &[f64]| -> Result<Vec<f64>> {
        let jx = probe.jet(x)?;
        let a0 = chart.lift(0).value(x)?;
        let a1 = chart.lift(1).value(x)?;
        let s = jx.phi / jx.q;
        Ok(vec![
            s * inner(&jx.g, &a0, &a0),
            s * inner(&jx.g, &a0, &a1),
            s * inner(&jx.g, &a1, &a1),
        ])
    };
    let base = f(p)?;
    let dv = probe.directional_vec(&f, p, &jet.v)?;
    let du = probe.directional_vec(&f, p, &jet.u)?;
    let dvq = (0..3)
        .map(|i| (dv[i].abs() + du[i].abs()) / (1.0 + base[i].abs()))
        .fold(0.0, f64::max);
    Ok([wwv, curv, dvq])
}

/// Nodes in `s` over `[δ, λ−δ]`, ascending.
pub fn chebyshev_s(lambda: f64, collar: f64, n: usize) -> Vec<f64> {
    let lo = collar * lambda;
    let hi = lambda - lo;
    let mut s: Vec<f64> = (0..n)
        .map(|j| 0.5 * (lo + hi) + 0.5 * (hi - lo) * (PI * (j as f64 + 0.5) / n as f64).cos())
        .collect();
    s.reverse();
    s
}

fn base_nodes(chart: &TotalChart, bx: usize, by: usize) -> Vec<(usize, usize, [f64; 2])> {
    let (lo, hi) = chart.base.chart.sample_box();
    let mut out = Vec::with_capacity(bx * by);
    for ix in 0..bx {
        for iy in 0..by {
            let x = lo[0] + (ix as f64 + 0.5) / bx as f64 * (hi[0] - lo[0]);
            let y = lo[1] + (iy as f64 + 0.5) / by as f64 * (hi[1] - lo[1]);
            out.push((ix, iy, [x, y]));
        }
    }
    out
}

fn thetas(n: usize) -> Vec<f64> {
    (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect()
}

/// Runs every check applicable to the construction. Individual failures are
/// reported, not returned as errors.
pub fn run_suite(data: &ConstructionData, cfg: &VerifyConfig) -> Result<Vec<CheckReport>> {
    cfg.validate()?;
    let maps = ReparamMaps::build(&data.profile, ReparamOptions::default())?;
    let charts = data.charts();
    let grid = format!("{}x{}", charts.len(), cfg.grid);
    let taus: Vec<f64> = chebyshev_s(maps.lambda, cfg.collar, cfg.grid.nt)
        .into_iter()
        .map(|s| maps.tau_of_s(s))
        .collect::<Result<_>>()?;
    let ths = thetas(cfg.grid.nth);

    let mut points: Vec<(Vec<usize>, Vec<f64>)> = Vec::new();
    for (ci, c) in charts.iter().enumerate() {
        for (ix, iy, xy) in base_nodes(c, cfg.grid.bx, cfg.grid.by) {
            for (it, t) in taus.iter().enumerate() {
                for (ith, th) in ths.iter().enumerate() {
                    points.push((vec![ci, ix, iy, it, ith], vec![xy[0], xy[1], *t, *th]));
                }
            }
        }
    }
    let outs: Vec<PointOut> = points
        .par_iter()
        .map(|(idx, p)| evaluate_point(&charts[idx[0]], p))
        .collect();

    let mut reports = Vec::new();
    for (k, id) in POINT_CHECKS.iter().enumerate() {
        let samples = points
            .iter()
            .zip(&outs)
            .map(|((idx, p), o)| Sample {
                index: idx.clone(),
                point: p.clone(),
                value: o.residuals[k].clone(),
            })
            .collect();
        reports.push(CheckReport::from_samples(id, &grid, cfg.tol(id), samples));
    }
    reports.push(fibre_spread(&points, &outs, &grid, cfg));
    reports.extend(boundary_checks(&charts, &maps, cfg, &grid));
    reports.extend(flow_checks(&charts, &maps, cfg, &grid));
    if data.perturbation == Perturbation::None {
        reports.push(oracle_check(&charts, &maps, cfg));
    }
    reports.sort_by(|a, b| a.check.cmp(&b.check));
    Ok(reports)
}

/// Only the gradient-flow checks of [`run_suite`].
pub fn flow_suite(data: &ConstructionData, cfg: &VerifyConfig) -> Result<Vec<CheckReport>> {
    cfg.validate()?;
    let maps = ReparamMaps::build(&data.profile, ReparamOptions::default())?;
    let charts = data.charts();
    let grid = format!("{}x{}", charts.len(), cfg.grid);
    Ok(flow_checks(&charts, &maps, cfg, &grid))
}

/// Spread of `γ_rec` over each fibre (all `τ`, `θ` at one base point).
fn fibre_spread(points: &[(Vec<usize>, Vec<f64>)], outs: &[PointOut], grid: &str, cfg: &VerifyConfig) -> CheckReport {
    let id = "gamma_recovery.fibre_spread";
    let mut samples: Vec<Sample> = Vec::new();
    let mut i = 0;
    while i < points.len() {
        let key = &points[i].0[..3];
        let mut jdx = i;
        let mut first: Option<Rp1> = None;
        let mut worst: Res = Ok(0.0);
        while jdx < points.len() && &points[jdx].0[..3] == key {
            match (outs[jdx].gamma_rec, first) {
                (None, _) => worst = Err("gamma recovery undefined".into()),
                (Some(g), None) => first = Some(g),
                (Some(g), Some(f)) => {
                    if let Ok(w) = worst.as_mut() {
                        *w = w.max(g.chordal_distance(&f));
                    }
                }
            }
            jdx += 1;
        }
        samples.push(Sample {
            index: key.to_vec(),
            point: points[i].1[..2].to_vec(),
            value: worst,
        });
        i = jdx;
    }
    CheckReport::from_samples(id, grid, cfg.tol(id), samples)
}

/// Limits at the critical levels by Richardson extrapolation in `s`.
fn boundary_checks(charts: &[TotalChart], maps: &ReparamMaps, cfg: &VerifyConfig, grid: &str) -> Vec<CheckReport> {
    let ids = ["boundary.dq_dtau", "boundary.e_squared", "boundary.hessian_eigenvalues"];
    let delta = cfg.boundary_delta * maps.lambda;
    let ss = [4.0 * delta, 2.0 * delta, delta];
    let mut fibres = Vec::new();
    for (ci, c) in charts.iter().enumerate() {
        for (ix, iy, xy) in base_nodes(c, cfg.grid.bx, cfg.grid.by) {
            for (ith, th) in thetas(cfg.grid.nth).into_iter().enumerate() {
                for end in 0..2usize {
                    fibres.push((vec![ci, ix, iy, ith, end], xy, th));
                }
            }
        }
    }
    let results: Vec<(Vec<f64>, [Res; 3])> = fibres
        .par_iter()
        .map(|(idx, xy, th)| {
            let chart = &charts[idx[0]];
            let end = idx[4];
            let r = boundary_fibre(chart, maps, *xy, *th, end, &ss);
            let point = vec![xy[0], xy[1], *th];
            match r {
                Ok(v) => (point, v.map(Ok)),
                Err(e) => {
                    let m = e.to_string();
                    (point, [Err(m.clone()), Err(m.clone()), Err(m)])
                }
            }
        })
        .collect();
    ids.iter()
        .enumerate()
        .map(|(k, id)| {
            let samples = fibres
                .iter()
                .zip(&results)
                .map(|((idx, _, _), (pt, r))| Sample {
                    index: idx.clone(),
                    point: pt.clone(),
                    value: r[k].clone(),
                })
                .collect();
            CheckReport::from_samples(id, grid, cfg.tol(id), samples)
        })
        .collect()
}

/// `[|dQ/dτ ∓ 2a|, |E² ∓ aE|, max |λᵢ − targetᵢ|]` at one fibre end.
fn boundary_fibre(
    chart: &TotalChart,
    maps: &ReparamMaps,
    xy: [f64; 2],
    th: f64,
    end: usize,
    ss: &[f64; 3],
) -> Result<[f64; 3]> {
    let a = chart.a();
    let sign = if end == 0 { 1.0 } else { -1.0 };
    let j = chart.complex_structure();
    let tau = chart.tau();
    let probe = Probe::new(chart, &j, &tau);
    let mut eig: Vec<Vec<f64>> = Vec::new();
    let mut slope = Vec::new();
    for &s in ss {
        let t = maps.tau_of_s(if end == 0 { s } else { maps.lambda - s })?;
        let p = [xy[0], xy[1], t, th];
        eig.push(probe.hessian_eigenvalues(&p)?);
        let v = probe.calc.gradient(&tau, &p)?;
        let q = probe.q(&p)?;
        slope.push(probe.directional(&|x| probe.q(x), &p, &v)? / q);
    }
    let n = eig[0].len();
    let lim: Vec<f64> = (0..n)
        .map(|i| richardson_even(ss, &[eig[0][i], eig[1][i], eig[2][i]]))
        .collect();
    let dq = richardson_even(ss, &slope);
    let target: Vec<f64> = if end == 0 {
        vec![0.0, 0.0, a, a]
    } else {
        vec![-a, -a, 0.0, 0.0]
    };
    let hess = lim.iter().zip(&target).map(|(l, t)| (l - t).abs()).fold(0.0, f64::max);
    let e2 = lim.iter().map(|l| (l * l - sign * a * l).powi(2)).sum::<f64>().sqrt();
    Ok([(dq - sign * 2.0 * a).abs(), e2, hess])
}

/// Gradient-flow arclength against `s`, and fibre confinement.
fn flow_checks(charts: &[TotalChart], maps: &ReparamMaps, cfg: &VerifyConfig, grid: &str) -> Vec<CheckReport> {
    let ids = ["flow.arclength_vs_s", "flow.base_drift", "flow.total_length"];
    let mut starts = Vec::new();
    for (ci, c) in charts.iter().enumerate() {
        for (ix, iy, xy) in base_nodes(c, cfg.grid.bx, cfg.grid.by) {
            starts.push((vec![ci, ix, iy], xy));
        }
    }
    let results: Vec<[Res; 3]> = starts
        .par_iter()
        .map(|(idx, xy)| match flow_fibre(&charts[idx[0]], maps, *xy, cfg.flow_delta) {
            Ok(v) => v.map(Ok),
            Err(e) => {
                let m = e.to_string();
                [Err(m.clone()), Err(m.clone()), Err(m)]
            }
        })
        .collect();
    ids.iter()
        .enumerate()
        .map(|(k, id)| {
            let samples = starts
                .iter()
                .zip(&results)
                .map(|((idx, xy), r)| Sample {
                    index: idx.clone(),
                    point: xy.to_vec(),
                    value: r[k].clone(),
                })
                .collect();
            CheckReport::from_samples(id, grid, cfg.tol(id), samples)
        })
        .collect()
}

fn flow_fibre(chart: &TotalChart, maps: &ReparamMaps, xy: [f64; 2], delta: f64) -> Result<[f64; 3]> {
    let lambda = maps.lambda;
    if 2.0 * delta >= lambda {
        return Err(Error::Domain(format!("flow offset {delta} too large for lambda = {lambda}")));
    }
    let t0 = maps.tau_of_s(delta)?;
    let t1 = maps.tau_of_s(lambda - delta)?;
    let calc = Calculus::new(chart);
    let tau = chart.tau();
    let p0 = [xy[0], xy[1], t0, 0.0];
    let stop = FlowStop {
        level: Some(t1),
        direction: 1.0,
        max_length: lambda,
        ds: lambda / 512.0,
    };
    let path = integrate_gradient_flow(&calc, &tau, &p0, stop)?;
    if path.termination != Termination::ReachedLevel {
        return Err(Error::NumericalFailure(format!("flow ended with {:?}", path.termination)));
    }
    let mut pointwise: f64 = 0.0;
    let mut drift: f64 = 0.0;
    for (x, s) in path.points.iter().zip(&path.arclength) {
        pointwise = pointwise.max((maps.s_of_tau(x[TAU])? - (s + delta)).abs());
        drift = drift
            .max((x[0] - p0[0]).abs())
            .max((x[1] - p0[1]).abs())
            .max((x[THETA] - p0[THETA]).abs());
    }
    let total = (path.length() - (lambda - 2.0 * delta)).abs();
    Ok([pointwise, drift, total])
}

/// Closed-form Christoffels against pure finite differences of `g`.
fn oracle_check(charts: &[TotalChart], maps: &ReparamMaps, cfg: &VerifyConfig) -> CheckReport {
    let id = "oracle.christoffel";
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let lo_s = cfg.collar * maps.lambda;
    let pts: Vec<(Vec<usize>, Vec<f64>)> = (0..cfg.oracle_samples)
        .map(|k| {
            let ci = k % charts.len();
            let (lo, hi) = charts[ci].base.chart.sample_box();
            let x = rng.gen_range(lo[0]..hi[0]);
            let y = rng.gen_range(lo[1]..hi[1]);
            let s = rng.gen_range(lo_s..maps.lambda - lo_s);
            let th = rng.gen_range(0.0..2.0 * PI);
            (vec![ci, k], vec![x, y, s, th])
        })
        .collect();
    let samples = pts
        .par_iter()
        .map(|(idx, raw)| {
            let chart = &charts[idx[0]];
            let r = maps.tau_of_s(raw[2]).and_then(|t| {
                let p = [raw[0], raw[1], t, raw[3]];
                let calc = Calculus::with_options(
                    chart,
                    FdOptions {
                        use_analytic: false,
                        ..Default::default()
                    },
                );
                Ok((p, calc.christoffel_fd(&p)?.max_abs_diff(&chart.christoffel_closed_form(&p)?)))
            });
            match r {
                Ok((p, v)) => Sample {
                    index: idx.clone(),
                    point: p.to_vec(),
                    value: Ok(v),
                },
                Err(e) => Sample {
                    index: idx.clone(),
                    point: raw.clone(),
                    value: Err(e.to_string()),
                },
            }
        })
        .collect();
    CheckReport::from_samples(id, &format!("{} random", cfg.oracle_samples), cfg.tol(id), samples)
}
