//! The metric, complex structure and distinguished fields on the total space
//! `M′` over one surface chart, in coordinates `(x¹, x², τ, θ)`:
//!
//! `g = β h + Q⁻¹dτ² + a⁻²Q η²`, `η = dθ − A`, `β = (τ−γ)/(τ*−γ)`,
//!
//! with `dA = Ω`. Horizontal lifts are `w̃ = w + A(w)∂θ`, so `η(w̃) = 0`.
//! The fibre coordinate `τ` replaces the norm `r` through `dr/dτ = ar/Q`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AlmostComplexField, Christoffel, MetricField, ScalarField, VectorField};
use crate::profiles::MomentumProfile;
use crate::rp1::{beta_factor, beta_partials, Rp1};
use crate::surfaces::{BaseChart, ConnectionValue, Surface};

pub const TAU: usize = 2;
pub const THETA: usize = 3;

/// Deliberate breakages used as negative controls.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Perturbation {
    #[default]
    None,
    /// `β ↦ β^power` in the horizontal block.
    BetaPower { power: f64 },
    /// Surface complex structure replaced by its opposite.
    ReversedJ,
    /// `g_ττ = (1 + eps·cos 2πx¹)/Q`.
    FibreWarp { eps: f64 },
}

/// Every ingredient of the construction over a whole surface.
#[derive(Debug, Clone)]
pub struct ConstructionData {
    pub profile: Arc<MomentumProfile>,
    pub surface: Surface,
    pub perturbation: Perturbation,
}

impl ConstructionData {
    pub fn new(profile: MomentumProfile, surface: Surface) -> Result<Self> {
        let iv = profile.interval;
        for c in &surface.charts {
            if let Some((lo, hi)) = c.gamma.range() {
                if hi >= iv.tau_min && lo <= iv.tau_max {
                    return Err(Error::config(
                        "surface.gamma",
                        format!("gamma range [{lo}, {hi}] meets I = [{}, {}]", iv.tau_min, iv.tau_max),
                    ));
                }
            }
        }
        Ok(Self {
            profile: Arc::new(profile),
            surface,
            perturbation: Perturbation::None,
        })
    }

    pub fn with_perturbation(mut self, p: Perturbation) -> Self {
        self.perturbation = p;
        self
    }

    pub fn a(&self) -> f64 {
        self.profile.a
    }

    pub fn charts(&self) -> Vec<TotalChart> {
        self.surface
            .charts
            .iter()
            .map(|b| TotalChart {
                profile: Arc::clone(&self.profile),
                base: b.clone(),
                perturbation: self.perturbation,
            })
            .collect()
    }
}

/// `(x¹, x², τ, θ)` over one surface chart.
#[derive(Debug, Clone)]
pub struct TotalChart {
    pub profile: Arc<MomentumProfile>,
    pub base: BaseChart,
    pub perturbation: Perturbation,
}

/// Pointwise ingredients shared by the metric, `J` and their derivatives.
struct Local {
    q: f64,
    dq: f64,
    h: Matrix2<f64>,
    dh: [Matrix2<f64>; 2],
    conn: ConnectionValue,
    /// `β` after perturbation, and its partials along `x¹, x², τ`.
    beta: f64,
    dbeta: [f64; 3],
    /// Fibre factor `w` of `g_ττ = w/Q` and its `x¹` derivative.
    warp: f64,
    dwarp: f64,
}

impl TotalChart {
    pub fn a(&self) -> f64 {
        self.profile.a
    }

    pub fn tau_star(&self) -> f64 {
        self.profile.interval.tau_star
    }

    fn xy(p: &[f64]) -> [f64; 2] {
        [p[0], p[1]]
    }

    pub fn gamma_at(&self, p: &[f64]) -> Rp1 {
        self.base.gamma.eval(Self::xy(p))
    }

    fn check(&self, p: &[f64]) -> Result<()> {
        if p.len() != 4 || !self.contains(p) {
            return Err(Error::Domain(format!(
                "{p:?} is outside the chart or off the open interval I"
            )));
        }
        Ok(())
    }

    fn local(&self, p: &[f64]) -> Result<Local> {
        self.check(p)?;
        let xy = Self::xy(p);
        let tau = p[TAU];
        let jet = self.profile.q_jet(tau);
        let chart = self.base.chart.as_ref();
        let gamma = self.base.gamma.eval(xy);
        let ts = self.tau_star();
        let b = beta_factor(tau, ts, gamma)?;
        let (db_dtau, db_dgamma) = beta_partials(tau, ts, gamma);
        let dg = self.base.gamma.partials(xy);
        let mut beta = b;
        let mut dbeta = [db_dgamma * dg[0], db_dgamma * dg[1], db_dtau];
        if let Perturbation::BetaPower { power } = self.perturbation {
            beta = b.powf(power);
            let f = power * b.powf(power - 1.0);
            dbeta = dbeta.map(|d| f * d);
        }
        let (warp, dwarp) = match self.perturbation {
            Perturbation::FibreWarp { eps } => (
                1.0 + eps * (2.0 * PI * p[0]).cos(),
                -2.0 * PI * eps * (2.0 * PI * p[0]).sin(),
            ),
            _ => (1.0, 0.0),
        };
        Ok(Local {
            q: jet.value,
            dq: jet.d1,
            h: chart.h(xy),
            dh: chart.dh(xy),
            conn: self.base.connection.eval(xy)?,
            beta,
            dbeta,
            warp,
            dwarp,
        })
    }

    /// Surface complex structure as used by `J` (reversed for the control).
    fn j_sigma(&self, xy: [f64; 2]) -> (Matrix2<f64>, [Matrix2<f64>; 2]) {
        let chart = self.base.chart.as_ref();
        let j = chart.complex_structure(xy);
        let dj = chart.complex_structure_derivative(xy);
        if self.perturbation == Perturbation::ReversedJ {
            (-j, dj.map(|m| -m))
        } else {
            (j, dj)
        }
    }

    pub fn assemble_metric(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        let l = self.local(p)?;
        let a2 = self.a() * self.a();
        let c = l.q / a2;
        let am = l.conn.a;
        let mut g = DMatrix::zeros(4, 4);
        for i in 0..2 {
            for j in 0..2 {
                g[(i, j)] = l.beta * l.h[(i, j)] + c * am[i] * am[j];
            }
            g[(i, THETA)] = -c * am[i];
            g[(THETA, i)] = -c * am[i];
        }
        g[(TAU, TAU)] = l.warp / l.q;
        g[(THETA, THETA)] = c;
        Ok(g)
    }

    pub fn metric_partials(&self, p: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        let l = self.local(p)?;
        let a2 = self.a() * self.a();
        let c = l.q / a2;
        let dc = l.dq / a2;
        let am = l.conn.a;
        let da = l.conn.da;
        let mut out = vec![DMatrix::zeros(4, 4); 4];
        for k in 0..2 {
            let d = &mut out[k];
            for i in 0..2 {
                for j in 0..2 {
                    d[(i, j)] = l.dbeta[k] * l.h[(i, j)]
                        + l.beta * l.dh[k][(i, j)]
                        + c * (da[k][i] * am[j] + am[i] * da[k][j]);
                }
                d[(i, THETA)] = -c * da[k][i];
                d[(THETA, i)] = -c * da[k][i];
            }
        }
        out[0][(TAU, TAU)] = l.dwarp / l.q;
        let d = &mut out[TAU];
        for i in 0..2 {
            for j in 0..2 {
                d[(i, j)] = l.dbeta[2] * l.h[(i, j)] + dc * am[i] * am[j];
            }
            d[(i, THETA)] = -dc * am[i];
            d[(THETA, i)] = -dc * am[i];
        }
        d[(TAU, TAU)] = -l.warp * l.dq / (l.q * l.q);
        d[(THETA, THETA)] = dc;
        Ok(out)
    }

    /// Columns are images: `J∂_i = (J_Σ∂_i)~ − …`, `J∂τ = (a/Q)∂θ`,
    /// `J∂θ = −(Q/a)∂τ`.
    pub fn assemble_j(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        let l = self.local(p)?;
        let a = self.a();
        let (js, _) = self.j_sigma(Self::xy(p));
        let am = Vector2::new(l.conn.a[0], l.conn.a[1]);
        let ja = js.transpose() * am;
        let mut j = DMatrix::zeros(4, 4);
        for i in 0..2 {
            for k in 0..2 {
                j[(k, i)] = js[(k, i)];
            }
            j[(TAU, i)] = am[i] * l.q / a;
            j[(THETA, i)] = ja[i];
        }
        j[(THETA, TAU)] = a / l.q;
        j[(TAU, THETA)] = -l.q / a;
        Ok(j)
    }

    pub fn j_partials(&self, p: &[f64]) -> Result<Vec<DMatrix<f64>>> {
        let l = self.local(p)?;
        let a = self.a();
        let (js, djs) = self.j_sigma(Self::xy(p));
        let am = Vector2::new(l.conn.a[0], l.conn.a[1]);
        let mut out = vec![DMatrix::zeros(4, 4); 4];
        for m in 0..2 {
            let dam = Vector2::new(l.conn.da[m][0], l.conn.da[m][1]);
            let dja = djs[m].transpose() * am + js.transpose() * dam;
            let d = &mut out[m];
            for i in 0..2 {
                for k in 0..2 {
                    d[(k, i)] = djs[m][(k, i)];
                }
                d[(TAU, i)] = dam[i] * l.q / a;
                d[(THETA, i)] = dja[i];
            }
        }
        let d = &mut out[TAU];
        for i in 0..2 {
            d[(TAU, i)] = am[i] * l.dq / a;
        }
        d[(THETA, TAU)] = -a * l.dq / (l.q * l.q);
        d[(TAU, THETA)] = -l.dq / a;
        Ok(out)
    }

    pub fn q(&self, p: &[f64]) -> f64 {
        self.profile.q(p[TAU])
    }

    pub fn psi(&self, p: &[f64]) -> f64 {
        0.5 * self.profile.dq(p[TAU])
    }

    /// `φ = Q/(2(τ−γ))`, zero where `γ = ∞`.
    pub fn phi(&self, p: &[f64]) -> Result<f64> {
        let q = self.q(p);
        Ok(match self.gamma_at(p) {
            Rp1::Infinity => 0.0,
            Rp1::Finite(g) => {
                let d = p[TAU] - g;
                if d == 0.0 {
                    return Err(Error::SingularFactor {
                        tau: p[TAU],
                        tau_star: self.tau_star(),
                        gamma: g,
                    });
                }
                0.5 * q / d
            }
        })
    }

    pub fn v(&self) -> VField {
        VField(self.clone())
    }

    pub fn u(&self) -> UField {
        UField(self.clone())
    }

    pub fn tau(&self) -> TauField {
        TauField(self.clone())
    }

    pub fn complex_structure(&self) -> JField {
        JField(self.clone())
    }

    /// Horizontal lift of the coordinate field `∂_i` (`i ∈ {0, 1}`).
    pub fn lift(&self, i: usize) -> LiftField {
        LiftField(self.clone(), i)
    }

    /// Christoffel symbols from the covariant-derivative table of the
    /// frame `(w̃₁, w̃₂, v, u)`, without differentiating `g`.
    pub fn christoffel_closed_form(&self, p: &[f64]) -> Result<Christoffel> {
        if self.perturbation != Perturbation::None {
            return Err(Error::UndefinedOperation("closed form needs the unperturbed construction"));
        }
        let l = self.local(p)?;
        let a = self.a();
        let q = l.q;
        if q < 1e-300 {
            return Err(Error::Domain("frame degenerates at Q = 0".into()));
        }
        let xy = Self::xy(p);
        let chart = self.base.chart.as_ref();
        let psi = 0.5 * l.dq;
        let phi = self.phi(p)?;
        let (js, _) = self.j_sigma(xy);
        let hinv = l.h.try_inverse().ok_or(Error::Conditioning(f64::INFINITY))?;
        let beta = l.beta;
        let am = l.conn.a;

        // frame vectors in coordinates
        let mut e = DMatrix::zeros(4, 4);
        for i in 0..2 {
            e[(i, i)] = 1.0;
            e[(THETA, i)] = am[i];
        }
        e[(TAU, 2)] = q;
        e[(THETA, 3)] = a;
        let col = |b: usize| -> DVector<f64> { e.column(b).into_owned() };
        let lift = |w: Vector2<f64>| -> DVector<f64> { col(0) * w[0] + col(1) * w[1] };

        // Levi-Civita of h (surface Christoffels)
        let mut gh = [[[0.0; 2]; 2]; 2];
        for k in 0..2 {
            for i in 0..2 {
                for j in 0..2 {
                    let mut s = 0.0;
                    for m in 0..2 {
                        s += 0.5 * hinv[(k, m)] * (l.dh[i][(j, m)] + l.dh[j][(i, m)] - l.dh[m][(i, j)]);
                    }
                    gh[k][i][j] = s;
                }
            }
        }
        let dgam = self.base.gamma.partials(xy);
        let dgam_vec = hinv * Vector2::new(dgam[0], dgam[1]);
        let conf = match self.gamma_at(p) {
            Rp1::Infinity => 0.0,
            Rp1::Finite(g) => (p[TAU] - self.tau_star()) / (self.tau_star() - g) * phi / q,
        };
        let unit = |i: usize| {
            let mut w = Vector2::zeros();
            w[i] = 1.0;
            w
        };

        // nab[a][b] = ∇_{e_a} e_b
        let mut nab = vec![vec![DVector::zeros(4); 4]; 4];
        nab[2][2] = col(2) * psi;
        nab[3][3] = col(2) * (-psi);
        nab[2][3] = col(3) * psi;
        nab[3][2] = col(3) * psi;
        for i in 0..2 {
            nab[2][i] = col(i) * phi;
            nab[i][2] = col(i) * phi;
            let jw = lift(js * unit(i));
            nab[3][i] = &jw * phi;
            nab[i][3] = jw * phi;
            for j in 0..2 {
                let dww = lift(Vector2::new(gh[0][i][j], gh[1][i][j]));
                let gww = beta * l.h[(i, j)];
                let gjww = beta * (js * unit(i)).dot(&(l.h * unit(j)));
                let vert = col(2) * gww + col(3) * gjww;
                let hor = lift(unit(j) * dgam[i] + unit(i) * dgam[j] - dgam_vec * l.h[(i, j)]);
                nab[i][j] = dww - vert * (phi / q) + hor * conf;
            }
        }

        // ∂_μ = Σ_a C[a][μ] e_a and the frame derivatives of C
        let mut c = DMatrix::zeros(4, 4);
        for i in 0..2 {
            c[(i, i)] = 1.0;
            c[(3, i)] = -am[i] / a;
        }
        c[(2, TAU)] = 1.0 / q;
        c[(3, THETA)] = 1.0 / a;
        // dc[a][(b, ν)] = e_a(C[b][ν])
        let mut dc = vec![DMatrix::zeros(4, 4); 4];
        for j in 0..2 {
            for i in 0..2 {
                dc[j][(3, i)] = -l.conn.da[j][i] / a;
            }
        }
        dc[2][(2, TAU)] = -2.0 * psi / q;
        let _ = chart;

        let mut gam = vec![DMatrix::zeros(4, 4); 4];
        for mu in 0..4 {
            for nu in 0..4 {
                let mut acc = DVector::zeros(4);
                for fa in 0..4 {
                    let cam = c[(fa, mu)];
                    if cam == 0.0 {
                        continue;
                    }
                    for fb in 0..4 {
                        acc += (col(fb) * dc[fa][(fb, nu)] + &nab[fa][fb] * c[(fb, nu)]) * cam;
                    }
                }
                for k in 0..4 {
                    gam[k][(mu, nu)] = acc[k];
                }
            }
        }
        Ok(Christoffel(gam))
    }
}

impl MetricField for TotalChart {
    fn dim(&self) -> usize {
        4
    }
    fn metric(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        self.assemble_metric(p)
    }
    fn metric_derivatives(&self, p: &[f64]) -> Option<Result<Vec<DMatrix<f64>>>> {
        Some(self.metric_partials(p))
    }
    fn contains(&self, p: &[f64]) -> bool {
        p.len() == 4
            && p.iter().all(|c| c.is_finite())
            && self.profile.interval.contains_open(p[TAU])
            && self.base.chart.contains(Self::xy(p))
    }
    fn step_limit(&self, p: &[f64], axis: usize) -> f64 {
        match axis {
            0 | 1 => self.base.chart.boundary_distance(Self::xy(p)) / 8.0,
            TAU => {
                let iv = self.profile.interval;
                (p[TAU] - iv.tau_min).min(iv.tau_max - p[TAU]) / 256.0
            }
            _ => f64::INFINITY,
        }
    }
}

/// `v = Q∂τ = ∇τ`.
pub struct VField(pub TotalChart);
/// `u = a∂θ = Jv`.
pub struct UField(pub TotalChart);
/// The coordinate function `τ`.
pub struct TauField(pub TotalChart);
pub struct JField(pub TotalChart);
pub struct LiftField(pub TotalChart, pub usize);

impl VectorField for VField {
    fn value(&self, p: &[f64]) -> Result<DVector<f64>> {
        let mut v = DVector::zeros(4);
        v[TAU] = self.0.q(p);
        Ok(v)
    }
    fn jacobian(&self, p: &[f64]) -> Option<Result<DMatrix<f64>>> {
        let mut j = DMatrix::zeros(4, 4);
        j[(TAU, TAU)] = self.0.profile.dq(p[TAU]);
        Some(Ok(j))
    }
}

impl VectorField for UField {
    fn value(&self, _p: &[f64]) -> Result<DVector<f64>> {
        let mut u = DVector::zeros(4);
        u[THETA] = self.0.a();
        Ok(u)
    }
    fn jacobian(&self, _p: &[f64]) -> Option<Result<DMatrix<f64>>> {
        Some(Ok(DMatrix::zeros(4, 4)))
    }
}

impl VectorField for LiftField {
    fn value(&self, p: &[f64]) -> Result<DVector<f64>> {
        let c = self.0.base.connection.eval([p[0], p[1]])?;
        let mut w = DVector::zeros(4);
        w[self.1] = 1.0;
        w[THETA] = c.a[self.1];
        Ok(w)
    }
    fn jacobian(&self, p: &[f64]) -> Option<Result<DMatrix<f64>>> {
        Some(self.0.base.connection.eval([p[0], p[1]]).map(|c| {
            let mut j = DMatrix::zeros(4, 4);
            j[(THETA, 0)] = c.da[0][self.1];
            j[(THETA, 1)] = c.da[1][self.1];
            j
        }))
    }
}

impl ScalarField for TauField {
    fn value(&self, p: &[f64]) -> Result<f64> {
        Ok(p[TAU])
    }
    fn gradient(&self, _p: &[f64]) -> Option<Result<DVector<f64>>> {
        let mut d = DVector::zeros(4);
        d[TAU] = 1.0;
        Some(Ok(d))
    }
    fn hessian(&self, _p: &[f64]) -> Option<Result<DMatrix<f64>>> {
        Some(Ok(DMatrix::zeros(4, 4)))
    }
}

impl AlmostComplexField for JField {
    fn value(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        self.0.assemble_j(p)
    }
    fn derivatives(&self, p: &[f64]) -> Option<Result<Vec<DMatrix<f64>>>> {
        Some(self.0.j_partials(p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{fd_partial, Calculus, FdOptions};
    use crate::profiles::Interval;
    use crate::surfaces::GammaField;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn torus_data() -> ConstructionData {
        let profile = MomentumProfile::canonical(Interval::new(0.0, 1.0).unwrap(), 2.0).unwrap();
        let surface = Surface::torus(PI * 6f64.sqrt(), GammaField::TorusCos { c0: 3.0, c1: 0.5 }, 2.0, 0.5).unwrap();
        ConstructionData::new(profile, surface).unwrap()
    }

    fn random_points(n: usize, seed: u64) -> Vec<[f64; 4]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| [rng.gen(), rng.gen(), rng.gen_range(0.05..0.95), rng.gen_range(0.0..2.0 * PI)])
            .collect()
    }

    #[test]
    fn metric_at_the_reference_point() {
        let c = &torus_data().charts()[0];
        let g = c.assemble_metric(&[0.25, 0.0, 0.5, 0.0]).unwrap();
        assert!((g[(TAU, TAU)] - 1.0).abs() < 1e-15);
        assert!((g[(THETA, THETA)] - 0.25).abs() < 1e-15);
        assert!((c.phi(&[0.25, 0.0, 0.5, 0.0]).unwrap() + 0.2).abs() < 1e-15);
        // β = 1 at τ* so the horizontal block is h on lifts
        let p = [0.25, 0.0, 0.5, 0.0];
        let w = c.lift(0).value(&p).unwrap();
        let gw = (w.transpose() * &g * &w)[(0, 0)];
        assert!((gw - PI * 6f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn infinite_gamma_gives_product_like_metric() {
        let profile = MomentumProfile::canonical(Interval::new(0.0, 1.0).unwrap(), 2.0).unwrap();
        let surface = Surface::torus(2.0, GammaField::Infinity, 2.0, 0.5).unwrap();
        let c = &ConstructionData::new(profile, surface).unwrap().charts()[0];
        let g = c.assemble_metric(&[0.3, 0.6, 0.2, 1.0]).unwrap();
        let q = 4.0 * 0.2 * 0.8;
        let mut want = DMatrix::zeros(4, 4);
        want[(0, 0)] = 2.0;
        want[(1, 1)] = 2.0;
        want[(TAU, TAU)] = 1.0 / q;
        want[(THETA, THETA)] = q / 4.0;
        assert!((g - want).amax() < 1e-14);
    }

    #[test]
    fn block_structure_and_fields() {
        let c = &torus_data().charts()[0];
        for p in random_points(50, 7) {
            let g = c.assemble_metric(&p).unwrap();
            let v = c.v().value(&p).unwrap();
            let u = c.u().value(&p).unwrap();
            let q = c.q(&p);
            assert!(((v.transpose() * &g * &v)[(0, 0)] - q).abs() < 1e-12 * (1.0 + q));
            assert!(((u.transpose() * &g * &u)[(0, 0)] - q).abs() < 1e-12 * (1.0 + q));
            for i in 0..2 {
                let w = c.lift(i).value(&p).unwrap();
                assert!((w.transpose() * &g * &u)[(0, 0)].abs() < 1e-12);
                assert!((w.transpose() * &g * &v)[(0, 0)].abs() < 1e-12);
                // η(w̃) = 0 and dτ(w̃) = 0
                let conn = c.base.connection.eval([p[0], p[1]]).unwrap();
                assert!((w[THETA] - conn.a[i]).abs() < 1e-15 && w[TAU] == 0.0);
            }
            let j = c.assemble_j(&p).unwrap();
            assert!((&j * &j + DMatrix::identity(4, 4)).amax() < 1e-12);
            assert!((j.transpose() * &g * &j - &g).amax() < 1e-10 * g.amax());
            assert!((&j * &v - &u).amax() < 1e-12);
            let gam = p[0];
            let phi = c.phi(&p).unwrap();
            let gval = 3.0 + 0.5 * (2.0 * PI * gam).cos();
            assert!((2.0 * phi * (p[TAU] - gval) - q).abs() < 1e-13);
        }
    }

    #[test]
    fn analytic_partials_match_differences() {
        for pert in [Perturbation::None, Perturbation::BetaPower { power: 1.01 }, Perturbation::FibreWarp { eps: 0.1 }] {
            let c = &torus_data().with_perturbation(pert).charts()[0];
            for p in random_points(20, 11) {
                let an = c.metric_partials(&p).unwrap();
                let jn = c.j_partials(&p).unwrap();
                for k in 0..4 {
                    let fd: DMatrix<f64> = fd_partial(|q| c.assemble_metric(q), &p, k, 1e-4).unwrap();
                    assert!((&fd - &an[k]).amax() < 1e-8 * (1.0 + an[k].amax()), "dg axis {k} {pert:?}");
                    let fj: DMatrix<f64> = fd_partial(|q| c.assemble_j(q), &p, k, 1e-4).unwrap();
                    assert!((&fj - &jn[k]).amax() < 1e-8 * (1.0 + jn[k].amax()), "dJ axis {k}");
                }
            }
        }
    }

    #[test]
    fn closed_form_matches_frozen_symbolic_values() {
        // Symbolic Christoffels of the metric at (0.2, 1/3, 0.3, 0), indexed (k, i, j).
        let frozen: [((usize, usize, usize), f64); 16] = [
            ((0, 0, 0), 0.03943126756684098),
            ((0, 0, 2), -0.17516150345765175),
            ((0, 1, 1), -0.1969897012409242),
            ((0, 1, 3), 0.07356783145221374),
            ((1, 0, 1), 0.1182104844038826),
            ((1, 0, 3), -0.07356783145221374),
            ((1, 1, 2), -0.17516150345765175),
            ((2, 0, 0), 1.2175608311038821),
            ((2, 1, 1), 1.0249162972816936),
            ((2, 1, 3), 0.1799007550904878),
            ((2, 2, 2), -0.9523809523809523),
            ((2, 3, 3), -0.168),
            ((3, 0, 1), -2.772370101414774),
            ((3, 0, 3), -0.0787792168370416),
            ((3, 1, 2), -1.2074151142973089),
            ((3, 2, 3), 0.9523809523809523),
        ];
        let c = &torus_data().charts()[0];
        let p = [0.2, 1.0 / 3.0, 0.3, 0.0];
        let closed = c.christoffel_closed_form(&p).unwrap();
        let from_g = Calculus::new(c).christoffel(&p).unwrap();
        for k in 0..4 {
            for i in 0..4 {
                for j in i..4 {
                    let want = frozen
                        .iter()
                        .find(|(idx, _)| *idx == (k, i, j))
                        .map_or(0.0, |(_, v)| *v);
                    assert!((closed.get(k, i, j) - want).abs() < 1e-12, "closed ({k},{i},{j})");
                    assert!((from_g.get(k, i, j) - want).abs() < 1e-12, "metric ({k},{i},{j})");
                }
            }
        }
    }

    #[test]
    fn closed_form_agrees_with_finite_differences() {
        let c = &torus_data().charts()[0];
        let calc = Calculus::with_options(c, FdOptions { use_analytic: false, ..Default::default() });
        for p in random_points(30, 3) {
            let fd = calc.christoffel_fd(&p).unwrap();
            let closed = c.christoffel_closed_form(&p).unwrap();
            assert!(fd.max_abs_diff(&closed) < 1e-6, "{p:?} {}", fd.max_abs_diff(&closed));
            // ∇_v v = ψ v holds in closed form
            let v = c.v().value(&p).unwrap();
            let jac = c.v().jacobian(&p).unwrap().unwrap();
            let nvv = &jac * &v + closed.contract(&v, &v);
            assert!((nvv - &v * c.psi(&p)).amax() < 1e-12);
        }
    }

    #[test]
    fn flat_limit_vertical_block() {
        let profile = MomentumProfile::new(Interval::new(0.0, 1.0).unwrap(), 2.0, vec![0.4]).unwrap();
        let surface = Surface::torus(1.0, GammaField::Infinity, 2.0, 0.5).unwrap();
        let c = &ConstructionData::new(profile.clone(), surface).unwrap().charts()[0];
        let p = [0.1, 0.2, 0.35, 0.0];
        let g = c.christoffel_closed_form(&p).unwrap();
        // surface of revolution Q⁻¹dτ² + a⁻²Q dθ²
        let (q, dq) = (profile.q(0.35), profile.dq(0.35));
        assert!((g.get(TAU, TAU, TAU) + 0.5 * dq / q).abs() < 1e-13);
        assert!((g.get(TAU, THETA, THETA) + 0.5 * q * dq / 4.0).abs() < 1e-13);
        assert!((g.get(THETA, TAU, THETA) - 0.5 * dq / q).abs() < 1e-13);
    }

    #[test]
    fn gamma_meeting_interval_is_rejected() {
        let profile = MomentumProfile::canonical(Interval::new(0.0, 1.0).unwrap(), 2.0).unwrap();
        let surface = Surface::torus(1.0, GammaField::TorusCos { c0: 0.7, c1: 0.5 }, 2.0, 0.5);
        // the surface itself may still build; the construction refuses it
        if let Ok(s) = surface {
            assert!(ConstructionData::new(profile, s).is_err());
        }
    }

    #[test]
    fn endpoints_are_outside_the_chart() {
        let c = &torus_data().charts()[0];
        assert!(matches!(c.assemble_metric(&[0.1, 0.1, 0.0, 0.0]), Err(Error::Domain(_))));
        assert!(matches!(c.assemble_metric(&[0.1, 0.1, 1.0, 0.0]), Err(Error::Domain(_))));
    }
}
