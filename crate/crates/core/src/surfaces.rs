//! The base surface: charts with a Riemannian metric `h`, the ℝP¹-valued
//! function `γ`, the curvature form `Ω = −a (τ*−γ)^{-1} ω^{(h)}` and a
//! connection form `A` with `dA = Ω`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{integrate, Chebyshev2};
use crate::profiles::Interval;
use crate::rp1::{rp1_div, Rp1};

pub type P2 = [f64; 2];

/// `εᵀ`: columns are the images of `∂₁, ∂₂` under a +90° Euclidean rotation.
fn rot90() -> Matrix2<f64> {
    Matrix2::new(0.0, -1.0, 1.0, 0.0)
}

pub trait SurfaceChart: Send + Sync + fmt::Debug {
    fn id(&self) -> String;
    fn h(&self, p: P2) -> Matrix2<f64>;
    /// `[∂₁h, ∂₂h]`.
    fn dh(&self, p: P2) -> [Matrix2<f64>; 2];
    fn contains(&self, p: P2) -> bool;
    /// Coordinate distance to the chart boundary; `∞` for periodic charts.
    fn boundary_distance(&self, p: P2) -> f64;
    /// Box sampled by verification grids.
    fn sample_box(&self) -> (P2, P2);

    /// Density of `ω^{(h)} = √det h dx¹∧dx²` (charts are positively oriented).
    fn area_density(&self, p: P2) -> f64 {
        self.h(p).determinant().sqrt()
    }

    /// Complex structure of `(Σ, h)`: `√det h · h⁻¹ εᵀ`, the +90° rotation
    /// for `h`. Columns are images.
    fn complex_structure(&self, p: P2) -> Matrix2<f64> {
        let h = self.h(p);
        let hinv = h.try_inverse().expect("h is positive definite");
        hinv * rot90() * h.determinant().sqrt()
    }

    fn complex_structure_derivative(&self, p: P2) -> [Matrix2<f64>; 2] {
        let h = self.h(p);
        let hinv = h.try_inverse().expect("h is positive definite");
        let sd = h.determinant().sqrt();
        let dh = self.dh(p);
        let e = rot90();
        dh.map(|d| {
            let dsd = 0.5 * sd * (hinv * d).trace();
            hinv * e * dsd - hinv * d * hinv * e * sd
        })
    }
}

/// `ℝ²/ℤ²` with `h = scale · δ`.
#[derive(Debug, Clone, Copy)]
pub struct FlatTorusChart {
    pub scale: f64,
}

impl SurfaceChart for FlatTorusChart {
    fn id(&self) -> String {
        "torus".into()
    }
    fn h(&self, _p: P2) -> Matrix2<f64> {
        Matrix2::identity() * self.scale
    }
    fn dh(&self, _p: P2) -> [Matrix2<f64>; 2] {
        [Matrix2::zeros(); 2]
    }
    fn contains(&self, p: P2) -> bool {
        p.iter().all(|c| c.is_finite())
    }
    fn boundary_distance(&self, _p: P2) -> f64 {
        f64::INFINITY
    }
    fn sample_box(&self) -> (P2, P2) {
        ([0.0, 0.0], [1.0, 1.0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Pole {
    North,
    South,
}

impl Pole {
    /// Sign of the height function in this chart: `z = sign · (u−1)/(u+1)`.
    pub fn height_sign(self) -> f64 {
        match self {
            Pole::North => 1.0,
            Pole::South => -1.0,
        }
    }
}

/// Stereographic chart of the round sphere of radius `√r2`:
/// `h = 4 r2 (1+|x|²)^{-2} δ`. The two charts are related by `w ↦ 1/w`.
#[derive(Debug, Clone, Copy)]
pub struct SphereChart {
    pub r2: f64,
    pub pole: Pole,
    pub rho_max: f64,
}

impl SphereChart {
    pub fn new(r2: f64, pole: Pole) -> Self {
        Self {
            r2,
            pole,
            rho_max: 2.0,
        }
    }

    /// Height `z ∈ (−1, 1)` and its coordinate gradient.
    pub fn height(&self, p: P2) -> (f64, P2) {
        let u = p[0] * p[0] + p[1] * p[1];
        let s = self.pole.height_sign();
        let dz = s * 4.0 / ((u + 1.0) * (u + 1.0));
        (s * (u - 1.0) / (u + 1.0), [dz * p[0], dz * p[1]])
    }

    /// Transition to the other stereographic chart.
    pub fn transition(p: P2) -> P2 {
        let u = p[0] * p[0] + p[1] * p[1];
        [p[0] / u, -p[1] / u]
    }
}

impl SurfaceChart for SphereChart {
    fn id(&self) -> String {
        match self.pole {
            Pole::North => "sphere-north".into(),
            Pole::South => "sphere-south".into(),
        }
    }
    fn h(&self, p: P2) -> Matrix2<f64> {
        let u = p[0] * p[0] + p[1] * p[1];
        Matrix2::identity() * (4.0 * self.r2 / ((1.0 + u) * (1.0 + u)))
    }
    fn dh(&self, p: P2) -> [Matrix2<f64>; 2] {
        let u = p[0] * p[0] + p[1] * p[1];
        let c = -16.0 * self.r2 / (1.0 + u).powi(3);
        [Matrix2::identity() * (c * p[0]), Matrix2::identity() * (c * p[1])]
    }
    fn contains(&self, p: P2) -> bool {
        (p[0] * p[0] + p[1] * p[1]).sqrt() < self.rho_max
    }
    fn boundary_distance(&self, p: P2) -> f64 {
        self.rho_max - (p[0] * p[0] + p[1] * p[1]).sqrt()
    }
    fn sample_box(&self) -> (P2, P2) {
        ([-1.0, -1.0], [1.0, 1.0])
    }
}

/// Chart whose metric comes from tabulated samples (used by the round trip).
#[derive(Debug, Clone)]
pub struct SampledChart {
    pub name: String,
    pub lo: P2,
    pub hi: P2,
    pub h11: Chebyshev2,
    pub h12: Chebyshev2,
    pub h22: Chebyshev2,
}

impl SurfaceChart for SampledChart {
    fn id(&self) -> String {
        self.name.clone()
    }
    fn h(&self, p: P2) -> Matrix2<f64> {
        let o = self.h12.eval(p);
        Matrix2::new(self.h11.eval(p), o, o, self.h22.eval(p))
    }
    fn dh(&self, p: P2) -> [Matrix2<f64>; 2] {
        let a = self.h11.gradient(p);
        let b = self.h12.gradient(p);
        let c = self.h22.gradient(p);
        [0, 1].map(|k| Matrix2::new(a[k], b[k], b[k], c[k]))
    }
    fn contains(&self, p: P2) -> bool {
        (0..2).all(|k| self.lo[k] <= p[k] && p[k] <= self.hi[k])
    }
    fn boundary_distance(&self, p: P2) -> f64 {
        (0..2)
            .map(|k| (p[k] - self.lo[k]).min(self.hi[k] - p[k]))
            .fold(f64::INFINITY, f64::min)
    }
    fn sample_box(&self) -> (P2, P2) {
        (self.lo, self.hi)
    }
}

#[derive(Debug, Clone)]
pub enum GammaField {
    Infinity,
    Constant(f64),
    /// `c0 + c1 cos(2πx¹)` on the torus.
    TorusCos { c0: f64, c1: f64 },
    /// `c0 + c1 z` with `z` the sphere height in the given chart.
    SphereHeight { c0: f64, c1: f64, chart: SphereChart },
    Sampled(Chebyshev2),
}

impl GammaField {
    pub fn eval(&self, p: P2) -> Rp1 {
        match self {
            GammaField::Infinity => Rp1::Infinity,
            GammaField::Constant(c) => Rp1::Finite(*c),
            GammaField::TorusCos { c0, c1 } => Rp1::Finite(c0 + c1 * (2.0 * PI * p[0]).cos()),
            GammaField::SphereHeight { c0, c1, chart } => Rp1::Finite(c0 + c1 * chart.height(p).0),
            GammaField::Sampled(c) => Rp1::Finite(c.eval(p)),
        }
    }

    /// Coordinate partials `(∂₁γ, ∂₂γ)`; zero where `γ = ∞`.
    pub fn partials(&self, p: P2) -> P2 {
        match self {
            GammaField::Infinity | GammaField::Constant(_) => [0.0, 0.0],
            GammaField::TorusCos { c1, .. } => [-2.0 * PI * c1 * (2.0 * PI * p[0]).sin(), 0.0],
            GammaField::SphereHeight { c1, chart, .. } => {
                let (_, dz) = chart.height(p);
                [c1 * dz[0], c1 * dz[1]]
            }
            GammaField::Sampled(c) => c.gradient(p),
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, GammaField::Infinity)
    }

    /// Closed range of the finite built-ins.
    pub fn range(&self) -> Option<(f64, f64)> {
        match self {
            GammaField::Infinity | GammaField::Sampled(_) => None,
            GammaField::Constant(c) => Some((*c, *c)),
            GammaField::TorusCos { c0, c1 } | GammaField::SphereHeight { c0, c1, .. } => {
                Some((c0 - c1.abs(), c0 + c1.abs()))
            }
        }
    }
}

/// `h`-gradient of `γ`, i.e. `Dγ`; zero where `γ = ∞`.
pub fn gamma_gradient(chart: &dyn SurfaceChart, gamma: &GammaField, p: P2) -> Result<Vector2<f64>> {
    if !chart.contains(p) {
        return Err(Error::Domain(format!("{p:?} outside chart {}", chart.id())));
    }
    if gamma.is_infinite() {
        return Ok(Vector2::zeros());
    }
    let d = gamma.partials(p);
    let hinv = chart
        .h(p)
        .try_inverse()
        .ok_or_else(|| Error::Conditioning(f64::INFINITY))?;
    Ok(hinv * Vector2::new(d[0], d[1]))
}

/// `1/(τ*−γ)` with the ℝP¹ conventions.
pub fn inverse_gap(tau_star: f64, gamma: Rp1) -> Result<f64> {
    let gap = match gamma {
        Rp1::Finite(g) => Rp1::Finite(tau_star - g),
        Rp1::Infinity => Rp1::Infinity,
    };
    Ok(rp1_div(1.0, gap)?.finite().expect("1/gap is finite for a nonzero gap"))
}

/// The coefficient `Ω₁₂` of `Ω = Ω₁₂ dx¹∧dx²` and its coordinate gradient.
pub fn curvature_density(
    a: f64,
    tau_star: f64,
    chart: &dyn SurfaceChart,
    gamma: &GammaField,
    p: P2,
) -> Result<(f64, P2)> {
    let inv = inverse_gap(tau_star, gamma.eval(p))?;
    if inv == 0.0 {
        return Ok((0.0, [0.0, 0.0]));
    }
    let h = chart.h(p);
    let hinv = h.try_inverse().ok_or_else(|| Error::Conditioning(f64::INFINITY))?;
    let sd = h.determinant().sqrt();
    let dh = chart.dh(p);
    let dg = gamma.partials(p);
    let mut grad = [0.0; 2];
    for k in 0..2 {
        let dsd = 0.5 * sd * (hinv * dh[k]).trace();
        grad[k] = -a * (dsd * inv + sd * dg[k] * inv * inv);
    }
    Ok((-a * inv * sd, grad))
}

/// Value of `A = A₁dx¹ + A₂dx²` and `da[i][j] = ∂_i A_j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConnectionValue {
    pub a: P2,
    pub da: [P2; 2],
}

impl ConnectionValue {
    pub fn curl(&self) -> f64 {
        self.da[0][1] - self.da[1][0]
    }
}

type DensityFn = Arc<dyn Fn(P2) -> (f64, P2) + Send + Sync>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gauge {
    /// `A = (∫₀^{x¹} Ω₁₂(t, x²) dt) dx²`.
    Strip,
    /// `A = (∫₀¹ t Ω₁₂(tx) dt)(x¹dx² − x²dx¹)`.
    Radial,
}

#[derive(Clone)]
enum ConnectionKind {
    Flat,
    /// `A = F(x¹) dx²`, `F′ = K/(α + β cos 2πx¹)`, `F(0) = 0`.
    TorusStrip { k: f64, alpha: f64, beta: f64 },
    /// `A = F(u)(x dy − y dx)`, `u = |x|²`, for `γ = c0 + c1 z`.
    SphereRadial { k: f64, alpha: f64, c1: f64 },
    Numeric { density: DensityFn, gauge: Gauge, tol: f64 },
}

impl fmt::Debug for ConnectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConnectionKind::Flat => f.write_str("Flat"),
            ConnectionKind::TorusStrip { k, alpha, beta } => {
                write!(f, "TorusStrip {{ k: {k}, alpha: {alpha}, beta: {beta} }}")
            }
            ConnectionKind::SphereRadial { k, alpha, c1 } => {
                write!(f, "SphereRadial {{ k: {k}, alpha: {alpha}, c1: {c1} }}")
            }
            ConnectionKind::Numeric { gauge, .. } => write!(f, "Numeric {{ gauge: {gauge:?} }}"),
        }
    }
}

/// A chart-local connection form. `shift` adds the exact form
/// `shift · d(sin 2πx¹)`, a gauge transformation.
#[derive(Debug, Clone)]
pub struct ConnectionForm {
    kind: ConnectionKind,
    pub shift: f64,
    /// `∫Ω` over the fundamental cycle pairing (torus: `F(1) − F(0)`).
    pub gauge_jump: Option<f64>,
}

impl ConnectionForm {
    pub fn flat() -> Self {
        Self {
            kind: ConnectionKind::Flat,
            shift: 0.0,
            gauge_jump: Some(0.0),
        }
    }

    /// Numeric antiderivative of an arbitrary curvature density.
    pub fn numeric(density: DensityFn, gauge: Gauge) -> Self {
        Self {
            kind: ConnectionKind::Numeric {
                density,
                gauge,
                tol: 1e-13,
            },
            shift: 0.0,
            gauge_jump: None,
        }
    }

    pub fn with_gauge_shift(mut self, shift: f64) -> Self {
        self.shift = shift;
        self
    }

    pub fn eval(&self, p: P2) -> Result<ConnectionValue> {
        let mut v = match &self.kind {
            ConnectionKind::Flat => ConnectionValue {
                a: [0.0; 2],
                da: [[0.0; 2]; 2],
            },
            ConnectionKind::TorusStrip { k, alpha, beta } => {
                let f = k / (alpha + beta * (2.0 * PI * p[0]).cos());
                ConnectionValue {
                    a: [0.0, k * cos_integral(*alpha, *beta, p[0])],
                    da: [[0.0, f], [0.0, 0.0]],
                }
            }
            ConnectionKind::SphereRadial { k, alpha, c1 } => {
                let u = p[0] * p[0] + p[1] * p[1];
                let (f, fu) = sphere_potential(*k, *alpha, *c1, u);
                let (x, y) = (p[0], p[1]);
                ConnectionValue {
                    a: [-y * f, x * f],
                    da: [
                        [-2.0 * x * y * fu, f + 2.0 * x * x * fu],
                        [-f - 2.0 * y * y * fu, 2.0 * x * y * fu],
                    ],
                }
            }
            ConnectionKind::Numeric { density, gauge, tol } => numeric_connection(density, *gauge, *tol, p)?,
        };
        if self.shift != 0.0 {
            let w = 2.0 * PI;
            v.a[0] += self.shift * w * (w * p[0]).cos();
            v.da[0][0] -= self.shift * w * w * (w * p[0]).sin();
        }
        Ok(v)
    }
}

/// `∫₀^x dt/(α + β cos 2πt)` for `|α| > |β|`, continued across the poles of
/// `tan`.
fn cos_integral(alpha: f64, beta: f64, x: f64) -> f64 {
    if alpha < 0.0 {
        return -cos_integral(-alpha, -beta, x);
    }
    if beta == 0.0 {
        return x / alpha;
    }
    let root = (alpha * alpha - beta * beta).sqrt();
    let k = ((alpha - beta) / (alpha + beta)).sqrt();
    let n = x.round();
    ((k * (PI * (x - n)).tan()).atan() + PI * n) / (PI * root)
}

/// `ln(1−y)/y`.
fn log_ratio(y: f64) -> f64 {
    if y.abs() < 1e-8 {
        -1.0 - 0.5 * y
    } else {
        (-y).ln_1p() / y
    }
}

/// `F(u)` and `dF/du` for the radial gauge on a sphere chart, where
/// `Ω₁₂ = −4k/((1+u)((α−c1)u + α + c1))`, `k = a r2`, `α = τ*−c0`.
fn sphere_potential(k: f64, alpha: f64, c1: f64, u: f64) -> (f64, f64) {
    let kappa = c1 / (alpha + c1);
    let t = 2.0 * u / (u + 1.0);
    let f = k / (alpha + c1) * (2.0 / (u + 1.0)) * log_ratio(kappa * t);
    let omega = -4.0 * k / ((1.0 + u) * ((alpha - c1) * u + alpha + c1));
    let fu = if u > 0.0 { (0.5 * omega - f) / u } else { 0.0 };
    (f, fu)
}

fn numeric_connection(density: &DensityFn, gauge: Gauge, tol: f64, p: P2) -> Result<ConnectionValue> {
    match gauge {
        Gauge::Strip => {
            let (x, y) = (p[0], p[1]);
            let a2 = integrate(|t| density([t, y]).0, 0.0, x, tol)?;
            let d2a2 = integrate(|t| density([t, y]).1[1], 0.0, x, tol)?;
            Ok(ConnectionValue {
                a: [0.0, a2],
                da: [[0.0, density(p).0], [0.0, d2a2]],
            })
        }
        Gauge::Radial => {
            let (x, y) = (p[0], p[1]);
            let f = integrate(|t| t * density([t * x, t * y]).0, 0.0, 1.0, tol)?;
            let fx = integrate(|t| t * t * density([t * x, t * y]).1[0], 0.0, 1.0, tol)?;
            let fy = integrate(|t| t * t * density([t * x, t * y]).1[1], 0.0, 1.0, tol)?;
            Ok(ConnectionValue {
                a: [-y * f, x * f],
                da: [[-y * fx, f + x * fx], [-f - y * fy, x * fy]],
            })
        }
    }
}

/// `A` with `dA = Ω` for a built-in `(chart, γ)` pair, in the canonical
/// gauge. Falls back to numeric quadrature for other combinations.
pub fn solve_connection_form(
    a: f64,
    tau_star: f64,
    chart: &Arc<dyn SurfaceChart>,
    gamma: &GammaField,
    builtin: Option<BuiltinChart>,
) -> Result<ConnectionForm> {
    if gamma.is_infinite() {
        return Ok(ConnectionForm::flat());
    }
    match (builtin, gamma) {
        (Some(BuiltinChart::Torus { scale }), GammaField::Constant(c0)) => {
            Ok(torus_strip(a * scale, c0 - tau_star, 0.0))
        }
        (Some(BuiltinChart::Torus { scale }), GammaField::TorusCos { c0, c1 }) => {
            Ok(torus_strip(a * scale, c0 - tau_star, *c1))
        }
        (Some(BuiltinChart::Sphere { r2, pole }), GammaField::Constant(c0)) => {
            Ok(sphere_radial(a * r2, tau_star - c0, 0.0, pole))
        }
        (Some(BuiltinChart::Sphere { r2, pole }), GammaField::SphereHeight { c0, c1, .. }) => {
            Ok(sphere_radial(a * r2, tau_star - c0, *c1, pole))
        }
        _ => {
            let chart = Arc::clone(chart);
            let gamma = gamma.clone();
            let gauge = match builtin {
                Some(BuiltinChart::Sphere { .. }) => Gauge::Radial,
                _ => Gauge::Strip,
            };
            let density: DensityFn = Arc::new(move |p| {
                curvature_density(a, tau_star, chart.as_ref(), &gamma, p).unwrap_or((f64::NAN, [f64::NAN; 2]))
            });
            Ok(ConnectionForm::numeric(density, gauge))
        }
    }
}

fn torus_strip(k: f64, alpha: f64, beta: f64) -> ConnectionForm {
    ConnectionForm {
        kind: ConnectionKind::TorusStrip { k, alpha, beta },
        shift: 0.0,
        gauge_jump: Some(k * cos_integral(alpha, beta, 1.0)),
    }
}

fn sphere_radial(k: f64, alpha: f64, c1: f64, pole: Pole) -> ConnectionForm {
    ConnectionForm {
        kind: ConnectionKind::SphereRadial {
            k,
            alpha,
            c1: c1 * pole.height_sign(),
        },
        shift: 0.0,
        gauge_jump: None,
    }
}

/// Which closed-form family a chart belongs to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BuiltinChart {
    Torus { scale: f64 },
    Sphere { r2: f64, pole: Pole },
}

/// One chart of the base with everything the total-space construction needs.
#[derive(Debug, Clone)]
pub struct BaseChart {
    pub chart: Arc<dyn SurfaceChart>,
    pub gamma: GammaField,
    pub connection: ConnectionForm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChernReport {
    pub value: f64,
    pub nearest: i64,
    pub deviation: f64,
}

impl ChernReport {
    fn from_value(value: f64) -> Self {
        let nearest = value.round() as i64;
        Self {
            value,
            nearest,
            deviation: (value - nearest as f64).abs(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurfaceKind {
    Torus,
    Sphere,
}

/// The base datum: surface, `γ` and connection on every chart.
#[derive(Debug, Clone)]
pub struct Surface {
    pub kind: SurfaceKind,
    pub scale: f64,
    pub charts: Vec<BaseChart>,
}

impl Surface {
    pub fn torus(scale: f64, gamma: GammaField, a: f64, tau_star: f64) -> Result<Self> {
        let chart: Arc<dyn SurfaceChart> = Arc::new(FlatTorusChart { scale });
        let connection = solve_connection_form(a, tau_star, &chart, &gamma, Some(BuiltinChart::Torus { scale }))?;
        Ok(Self {
            kind: SurfaceKind::Torus,
            scale,
            charts: vec![BaseChart {
                chart,
                gamma,
                connection,
            }],
        })
    }

    /// `gamma` is `None` for `∞`, otherwise `(c0, c1)` of `c0 + c1 z`.
    pub fn sphere(r2: f64, gamma: Option<(f64, f64)>, a: f64, tau_star: f64) -> Result<Self> {
        let mut charts = Vec::new();
        for pole in [Pole::North, Pole::South] {
            let sc = SphereChart::new(r2, pole);
            let g = match gamma {
                None => GammaField::Infinity,
                Some((c0, c1)) if c1 == 0.0 => GammaField::Constant(c0),
                Some((c0, c1)) => GammaField::SphereHeight { c0, c1, chart: sc },
            };
            let chart: Arc<dyn SurfaceChart> = Arc::new(sc);
            let connection = solve_connection_form(a, tau_star, &chart, &g, Some(BuiltinChart::Sphere { r2, pole }))?;
            charts.push(BaseChart {
                chart,
                gamma: g,
                connection,
            });
        }
        Ok(Self {
            kind: SurfaceKind::Sphere,
            scale: r2,
            charts,
        })
    }

    /// `(1/2π)∫_Σ Ω` by quadrature of the curvature density.
    pub fn chern_integral(&self, a: f64, tau_star: f64) -> Result<ChernReport> {
        let tol = 1e-12;
        let total = match self.kind {
            SurfaceKind::Torus => {
                let c = &self.charts[0];
                let inner = |y: f64| {
                    integrate(
                        |x| {
                            curvature_density(a, tau_star, c.chart.as_ref(), &c.gamma, [x, y])
                                .map(|v| v.0)
                                .unwrap_or(f64::NAN)
                        },
                        0.0,
                        1.0,
                        tol,
                    )
                    .unwrap_or(f64::NAN)
                };
                integrate(inner, 0.0, 1.0, tol)?
            }
            SurfaceKind::Sphere => {
                // Each chart's unit disk is one hemisphere.
                let mut sum = 0.0;
                for c in &self.charts {
                    let inner = |rho: f64| {
                        rho * integrate(
                            |phi| {
                                let p = [rho * phi.cos(), rho * phi.sin()];
                                curvature_density(a, tau_star, c.chart.as_ref(), &c.gamma, p)
                                    .map(|v| v.0)
                                    .unwrap_or(f64::NAN)
                            },
                            0.0,
                            2.0 * PI,
                            tol,
                        )
                        .unwrap_or(f64::NAN)
                    };
                    sum += integrate(inner, 0.0, 1.0, tol)?;
                }
                sum
            }
        };
        if !total.is_finite() {
            return Err(Error::NumericalFailure("curvature quadrature failed".into()));
        }
        Ok(ChernReport::from_value(total / (2.0 * PI)))
    }

    pub fn with_gauge_shift(mut self, shift: f64) -> Self {
        for c in &mut self.charts {
            c.connection = c.connection.clone().with_gauge_shift(shift);
        }
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum GammaExpr {
    Constant { c0: f64 },
    Cos { c0: f64, c1: f64 },
    Height { c0: f64, c1: f64 },
}

/// `γ` in configuration files: an expression or the literal `"inf"`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum GammaSpec {
    Inf(Rp1),
    Expr(GammaExpr),
}

impl<'de> Deserialize<'de> for GammaSpec {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let v = serde_json::Value::deserialize(d)?;
        match v {
            serde_json::Value::String(s) if s == "inf" => Ok(GammaSpec::Inf(Rp1::Infinity)),
            serde_json::Value::String(s) => Err(D::Error::custom(format!(
                "expected \"inf\" or an object, got {s:?}"
            ))),
            other => serde_json::from_value(other).map(GammaSpec::Expr).map_err(D::Error::custom),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalize {
    A,
    HScale,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HSpec {
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceSpec {
    #[serde(rename = "type")]
    pub kind: SurfaceKind,
    #[serde(default)]
    pub h: Option<HSpec>,
    pub gamma: GammaSpec,
    #[serde(default)]
    pub normalize: Option<Normalize>,
}

/// The base after validation and Chern normalization.
#[derive(Debug, Clone)]
pub struct ResolvedSurface {
    pub surface: Surface,
    pub a: f64,
    pub chern: ChernReport,
}

impl SurfaceSpec {
    pub fn default_scale(&self) -> f64 {
        match self.kind {
            SurfaceKind::Torus => PI * 6f64.sqrt(),
            SurfaceKind::Sphere => 1.0,
        }
    }

    pub fn scale(&self) -> f64 {
        self.h.as_ref().map_or_else(|| self.default_scale(), |h| h.scale)
    }

    /// Checks the spec against `I`: `γ` must avoid `[τmin, τmax]`, and the
    /// expression family must belong to the surface type.
    pub fn validate(&self, interval: &Interval) -> Result<()> {
        let s = self.scale();
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::config("surface.h.scale", format!("must be positive, got {s}")));
        }
        let (lo, hi) = match &self.gamma {
            GammaSpec::Inf(_) => return Ok(()),
            GammaSpec::Expr(GammaExpr::Constant { c0 }) => (*c0, *c0),
            GammaSpec::Expr(GammaExpr::Cos { c0, c1 }) => {
                if self.kind != SurfaceKind::Torus {
                    return Err(Error::config("surface.gamma.type", "\"cos\" is only defined on the torus"));
                }
                (c0 - c1.abs(), c0 + c1.abs())
            }
            GammaSpec::Expr(GammaExpr::Height { c0, c1 }) => {
                if self.kind != SurfaceKind::Sphere {
                    return Err(Error::config("surface.gamma.type", "\"height\" is only defined on the sphere"));
                }
                (c0 - c1.abs(), c0 + c1.abs())
            }
        };
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::config("surface.gamma", "coefficients must be finite"));
        }
        if hi >= interval.tau_min && lo <= interval.tau_max {
            return Err(Error::config(
                "surface.gamma",
                format!(
                    "gamma range [{lo}, {hi}] intersects I = [{}, {}]",
                    interval.tau_min, interval.tau_max
                ),
            ));
        }
        Ok(())
    }

    fn build_with(&self, scale: f64, a: f64, tau_star: f64) -> Result<Surface> {
        match self.kind {
            SurfaceKind::Torus => {
                let gamma = match &self.gamma {
                    GammaSpec::Inf(_) => GammaField::Infinity,
                    GammaSpec::Expr(GammaExpr::Constant { c0 }) => GammaField::Constant(*c0),
                    GammaSpec::Expr(GammaExpr::Cos { c0, c1 }) => GammaField::TorusCos { c0: *c0, c1: *c1 },
                    GammaSpec::Expr(GammaExpr::Height { .. }) => {
                        return Err(Error::config("surface.gamma.type", "\"height\" is only defined on the sphere"))
                    }
                };
                Surface::torus(scale, gamma, a, tau_star)
            }
            SurfaceKind::Sphere => {
                let g = match &self.gamma {
                    GammaSpec::Inf(_) => None,
                    GammaSpec::Expr(GammaExpr::Constant { c0 }) => Some((*c0, 0.0)),
                    GammaSpec::Expr(GammaExpr::Height { c0, c1 }) => Some((*c0, *c1)),
                    GammaSpec::Expr(GammaExpr::Cos { .. }) => {
                        return Err(Error::config("surface.gamma.type", "\"cos\" is only defined on the torus"))
                    }
                };
                Surface::sphere(scale, g, a, tau_star)
            }
        }
    }

    /// Builds the surface for endpoint constant `a`, applying the requested
    /// normalization. `∫Ω` is linear in both `a` and the `h` scale, so one
    /// rescale lands on the nearest nonzero integer.
    pub fn resolve(&self, interval: &Interval, a: f64) -> Result<ResolvedSurface> {
        self.validate(interval)?;
        let tau_star = interval.tau_star;
        let scale = self.scale();
        let surface = self.build_with(scale, a, tau_star)?;
        let chern = surface.chern_integral(a, tau_star)?;
        let target = match self.normalize {
            Some(_) if chern.value != 0.0 => {
                let n = chern.value.round();
                if n == 0.0 {
                    chern.value.signum()
                } else {
                    n
                }
            }
            _ => return Ok(ResolvedSurface { surface, a, chern }),
        };
        let factor = target / chern.value;
        let (scale, a) = match self.normalize {
            Some(Normalize::A) => (scale, a * factor),
            _ => (scale * factor, a),
        };
        let surface = self.build_with(scale, a, tau_star)?;
        let chern = surface.chern_integral(a, tau_star)?;
        Ok(ResolvedSurface { surface, a, chern })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c2() -> f64 {
        PI * 6f64.sqrt()
    }

    fn torus() -> Surface {
        Surface::torus(c2(), GammaField::TorusCos { c0: 3.0, c1: 0.5 }, 2.0, 0.5).unwrap()
    }

    #[test]
    fn torus_gamma_gradient() {
        let s = torus();
        let c = &s.charts[0];
        let d = gamma_gradient(c.chart.as_ref(), &c.gamma, [0.25, 0.0]).unwrap();
        assert!((d[0] + PI / c2()).abs() < 1e-14);
        assert_eq!(d[1], 0.0);
        let inf = gamma_gradient(c.chart.as_ref(), &GammaField::Infinity, [0.3, 0.1]).unwrap();
        assert_eq!(inf, Vector2::zeros());
        let cst = gamma_gradient(c.chart.as_ref(), &GammaField::Constant(4.0), [0.3, 0.1]).unwrap();
        assert_eq!(cst, Vector2::zeros());
    }

    #[test]
    fn curvature_examples() {
        let s = torus();
        let c = &s.charts[0];
        let (om, _) = curvature_density(2.0, 0.5, c.chart.as_ref(), &c.gamma, [0.25, 0.0]).unwrap();
        assert!((om - 0.8 * c2()).abs() < 1e-13);
        let (zero, _) = curvature_density(2.0, 0.5, c.chart.as_ref(), &GammaField::Infinity, [0.25, 0.0]).unwrap();
        assert_eq!(zero, 0.0);
        let (k1, _) = curvature_density(2.0, 0.5, c.chart.as_ref(), &GammaField::Constant(5.0), [0.1, 0.2]).unwrap();
        let (k2, _) = curvature_density(2.0, 0.5, c.chart.as_ref(), &GammaField::Constant(5.0), [0.7, 0.9]).unwrap();
        assert_eq!(k1, k2);
    }

    #[test]
    fn torus_chern_number_is_one() {
        let r = torus().chern_integral(2.0, 0.5).unwrap();
        assert!((r.value - 1.0).abs() < 1e-6, "{r:?}");
        assert_eq!(r.nearest, 1);
        let flat = Surface::torus(c2(), GammaField::Infinity, 2.0, 0.5).unwrap();
        assert_eq!(flat.chern_integral(2.0, 0.5).unwrap().value, 0.0);
        let odd = Surface::torus(1.0, GammaField::Constant(3.0), 2.0, 0.5).unwrap();
        assert!(odd.chern_integral(2.0, 0.5).unwrap().deviation > 0.1);
    }

    #[test]
    fn torus_gauge_jump_is_two_pi() {
        let s = torus();
        let jump = s.charts[0].connection.gauge_jump.unwrap();
        assert!((jump - 2.0 * PI).abs() < 1e-6);
        // F(0.2) against high-precision quadrature.
        let a2 = s.charts[0].connection.eval([0.2, 0.0]).unwrap().a[1];
        assert!((a2 - 1.0708378279195703).abs() < 1e-12);
    }

    fn assert_da_equals_omega(surface: &Surface, a: f64, tau_star: f64, pts: &[P2]) {
        let h = 1e-5;
        for c in &surface.charts {
            for &p in pts {
                let (om, _) = curvature_density(a, tau_star, c.chart.as_ref(), &c.gamma, p).unwrap();
                let v = c.connection.eval(p).unwrap();
                assert!((v.curl() - om).abs() < 1e-8 * (1.0 + om.abs()), "analytic curl at {p:?}");
                let fd = |i: usize, j: usize| {
                    let mut pp = p;
                    let mut pm = p;
                    pp[i] += h;
                    pm[i] -= h;
                    (c.connection.eval(pp).unwrap().a[j] - c.connection.eval(pm).unwrap().a[j]) / (2.0 * h)
                };
                for i in 0..2 {
                    for j in 0..2 {
                        assert!((fd(i, j) - v.da[i][j]).abs() < 1e-6, "da[{i}][{j}] at {p:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn connection_curvature_matches_builtins() {
        let pts = [[0.1, 0.2], [0.45, -0.3], [0.8, 0.9], [-0.6, 0.05]];
        assert_da_equals_omega(&torus(), 2.0, 0.5, &pts);
        assert_da_equals_omega(&torus().with_gauge_shift(1.0), 2.0, 0.5, &pts);
        let sc = Surface::sphere(1.3, Some((3.0, 0.0)), 2.0, 0.5).unwrap();
        assert_da_equals_omega(&sc, 2.0, 0.5, &pts);
        let sh = Surface::sphere(1.3, Some((-2.0, 0.7)), 2.0, 0.5).unwrap();
        assert_da_equals_omega(&sh, 2.0, 0.5, &pts);
    }

    #[test]
    fn numeric_gauges_match_analytic_ones() {
        let t = torus();
        let c = &t.charts[0];
        let strip = solve_connection_form(2.0, 0.5, &c.chart, &c.gamma, None).unwrap();
        for p in [[0.2, 0.0], [0.73, 0.4]] {
            let want = c.connection.eval(p).unwrap();
            let got = strip.eval(p).unwrap();
            for j in 0..2 {
                assert!((want.a[j] - got.a[j]).abs() < 1e-11);
            }
        }
        let s = Surface::sphere(1.3, Some((-2.0, 0.7)), 2.0, 0.5).unwrap();
        let c = &s.charts[0];
        let chart = Arc::clone(&c.chart);
        let g = c.gamma.clone();
        let density: DensityFn = Arc::new(move |p| curvature_density(2.0, 0.5, chart.as_ref(), &g, p).unwrap());
        let radial = ConnectionForm::numeric(density, Gauge::Radial);
        for p in [[0.3, -0.4], [1.1, 0.2]] {
            let want = c.connection.eval(p).unwrap();
            let got = radial.eval(p).unwrap();
            for i in 0..2 {
                assert!((want.a[i] - got.a[i]).abs() < 1e-11);
                for j in 0..2 {
                    assert!((want.da[i][j] - got.da[i][j]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn sphere_chern_matches_closed_form() {
        let (a, ts, r2) = (2.0, 0.5, 1.3);
        let (c0, c1) = (-2.0, 0.7);
        let s = Surface::sphere(r2, Some((c0, c1)), a, ts).unwrap();
        let alpha = ts - c0;
        let want = a * r2 / c1 * ((alpha - c1) / (alpha + c1)).ln();
        assert!((s.chern_integral(a, ts).unwrap().value - want).abs() < 1e-8);
        let k = Surface::sphere(r2, Some((3.0, 0.0)), a, ts).unwrap();
        assert!((k.chern_integral(a, ts).unwrap().value - 2.0 * (-a / (ts - 3.0)) * r2).abs() < 1e-8);
    }

    #[test]
    fn sphere_charts_agree_on_overlap() {
        let (c0, c1) = (-2.0, 0.7);
        let s = Surface::sphere(1.0, Some((c0, c1)), 2.0, 0.5).unwrap();
        let p = [0.6, -0.3];
        let q = SphereChart::transition(p);
        let gn = s.charts[0].gamma.eval(p).finite().unwrap();
        let gs = s.charts[1].gamma.eval(q).finite().unwrap();
        assert!((gn - gs).abs() < 1e-14);
        // area densities transform by the Jacobian determinant 1/u².
        let u = p[0] * p[0] + p[1] * p[1];
        let an = s.charts[0].chart.area_density(p);
        let as_ = s.charts[1].chart.area_density(q);
        assert!((an - as_ / (u * u)).abs() < 1e-13);
    }

    #[test]
    fn complex_structure_is_h_orthogonal() {
        let sc = SphereChart::new(1.0, Pole::North);
        for p in [[0.2, 0.3], [-1.0, 0.5]] {
            let j = sc.complex_structure(p);
            let h = sc.h(p);
            assert!((j * j + Matrix2::identity()).norm() < 1e-14);
            assert!((j.transpose() * h * j - h).norm() < 1e-14);
            // oriented orthonormal frame e1, Je1 has ω(e1, Je1) = 1
            let e1 = Vector2::new(1.0, 0.0) / h[(0, 0)].sqrt();
            let e2 = j * e1;
            let w = sc.area_density(p) * (e1[0] * e2[1] - e1[1] * e2[0]);
            assert!((w - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn spec_parsing_and_validation() {
        let iv = Interval::new(0.0, 1.0).unwrap();
        let ok: SurfaceSpec = serde_json::from_str(r#"{"type":"torus","gamma":{"type":"cos","c0":3,"c1":0.5}}"#).unwrap();
        ok.validate(&iv).unwrap();
        let bad: SurfaceSpec = serde_json::from_str(r#"{"type":"torus","gamma":{"type":"cos","c0":0.7,"c1":0.5}}"#).unwrap();
        assert!(matches!(bad.validate(&iv), Err(Error::Config { .. })));
        let inf: SurfaceSpec = serde_json::from_str(r#"{"type":"sphere","gamma":"inf"}"#).unwrap();
        assert_eq!(inf.gamma, GammaSpec::Inf(Rp1::Infinity));
        assert!(serde_json::from_str::<SurfaceSpec>(r#"{"type":"sphere","gamma":"infinity"}"#).is_err());
        assert!(serde_json::from_str::<SurfaceSpec>(r#"{"type":"klein","gamma":"inf"}"#).is_err());
    }

    #[test]
    fn normalization_hits_integers() {
        let iv = Interval::new(0.0, 1.0).unwrap();
        let spec: SurfaceSpec = serde_json::from_str(
            r#"{"type":"sphere","h":{"scale":1.0},"gamma":{"type":"constant","c0":3},"normalize":"h-scale"}"#,
        )
        .unwrap();
        let r = spec.resolve(&iv, 2.0).unwrap();
        assert!(r.chern.deviation < 1e-9);
        assert_eq!(r.chern.nearest, 2);
        assert!((r.surface.scale - 1.25).abs() < 1e-9);
        let spec_a: SurfaceSpec = serde_json::from_str(
            r#"{"type":"torus","h":{"scale":1.0},"gamma":{"type":"constant","c0":3},"normalize":"a"}"#,
        )
        .unwrap();
        let r = spec_a.resolve(&iv, 2.0).unwrap();
        assert!(r.chern.deviation < 1e-9);
        assert!(r.chern.nearest != 0);
    }
}
