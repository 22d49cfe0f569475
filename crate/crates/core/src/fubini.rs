//! Fubini–Study metric on `ℂP^m` in an affine chart, with the Killing
//! potential `τ = |y|²/(|x|² + |y|²)` for the split `ℂ^{m+1} = ℂ^{k+1} ⊕ ℂ^{l+1}`.
//!
//! Normalization: `g = Re Σ ∂_j∂̄_k log(1+|w|²) dw_j dw̄_k`, the metric of
//! holomorphic sectional curvature 4, for which `|∇τ|² = 4τ(1−τ)` and
//! `Ric = 2(m+1) g`. Real coordinates are ordered `(Re w₁, Im w₁, Re w₂, …)`.

use std::f64::consts::PI;

use nalgebra::{Complex, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::extract::{extract_profile, sweep, ExtractOptions, Oracle};
use crate::geometry::{
    integrate_gradient_flow, AlmostComplexField, FlowStop, MetricField, ScalarField, Termination,
};
use crate::numerics::richardson_even;
use crate::profiles::{Interval, MomentumProfile};
use crate::rp1::{rp1_div, Rp1};
use crate::verify::{recover_gamma, CheckReport, JGradientOf, Probe, Sample, VerifyConfig};

type C64 = Complex<f64>;

const MAX_CHART_RADIUS2: f64 = 1e4;

/// Which homogeneous coordinate is set to 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalized {
    /// `x₀ = 1`: the chart misses `{x = 0}`, where `τ = 1`.
    X,
    /// `y₀ = 1`: the chart misses `{y = 0}`, where `τ = 0`.
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FsChart {
    pub k: usize,
    pub l: usize,
    pub normalized: Normalized,
}

impl FsChart {
    pub fn new(k: usize, l: usize, normalized: Normalized) -> Result<Self> {
        if k + l + 1 < 2 {
            return Err(Error::Domain(format!("m = k+l+1 = {} must be at least 2", k + l + 1)));
        }
        Ok(Self { k, l, normalized })
    }

    pub fn m(&self) -> usize {
        self.k + self.l + 1
    }

    pub fn real_dim(&self) -> usize {
        2 * self.m()
    }

    fn complex_coords(&self, p: &[f64]) -> Vec<C64> {
        p.chunks(2).map(|c| C64::new(c[0], c[1])).collect()
    }

    /// Homogeneous coordinates `[x, y]` of a chart point.
    pub fn homogeneous(&self, p: &[f64]) -> Vec<C64> {
        let w = self.complex_coords(p);
        let one = C64::new(1.0, 0.0);
        match self.normalized {
            Normalized::X => std::iter::once(one).chain(w).collect(),
            Normalized::Y => {
                let (x, y) = w.split_at(self.k + 1);
                x.iter().copied().chain(std::iter::once(one)).chain(y.iter().copied()).collect()
            }
        }
    }

    /// Chart coordinates of a homogeneous point (its normalized entry must
    /// be nonzero).
    pub fn chart_of(&self, z: &[C64]) -> Vec<f64> {
        let idx = match self.normalized {
            Normalized::X => 0,
            Normalized::Y => self.k + 1,
        };
        let d = z[idx];
        z.iter()
            .enumerate()
            .filter(|(i, _)| *i != idx)
            .flat_map(|(_, c)| {
                let q = c / d;
                [q.re, q.im]
            })
            .collect()
    }

    /// Hermitian matrix `g_{jk̄} = ∂_j∂̄_k log(1+|w|²)`.
    pub fn hermitian(&self, p: &[f64]) -> DMatrix<C64> {
        let w = self.complex_coords(p);
        let m = w.len();
        let s = 1.0 + w.iter().map(|c| c.norm_sqr()).sum::<f64>();
        DMatrix::from_fn(m, m, |j, k| {
            let delta = if j == k { s } else { 0.0 };
            (C64::new(delta, 0.0) - w[j].conj() * w[k]) / (s * s)
        })
    }

    pub fn metric(&self, p: &[f64]) -> DMatrix<f64> {
        let h = self.hermitian(p);
        let m = h.nrows();
        let mut g = DMatrix::zeros(2 * m, 2 * m);
        for j in 0..m {
            for k in 0..m {
                let (pr, ri) = (h[(j, k)].re, h[(j, k)].im);
                g[(2 * j, 2 * k)] = pr;
                g[(2 * j + 1, 2 * k + 1)] = pr;
                g[(2 * j, 2 * k + 1)] = ri;
                g[(2 * j + 1, 2 * k)] = -ri;
            }
        }
        g
    }

    pub fn tau(&self, p: &[f64]) -> f64 {
        let z = self.homogeneous(p);
        let (x, y) = z.split_at(self.k + 1);
        let nx: f64 = x.iter().map(|c| c.norm_sqr()).sum();
        let ny: f64 = y.iter().map(|c| c.norm_sqr()).sum();
        ny / (nx + ny)
    }

    /// A chart point with `τ = sin² s`, direction drawn from `rng`.
    pub fn sample<R: Rng>(&self, rng: &mut R, s: f64) -> Vec<f64> {
        let mut unit = |n: usize| -> Vec<C64> {
            loop {
                let v: Vec<C64> = (0..n)
                    .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                    .collect();
                let norm = v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
                if norm > 0.2 && norm <= 1.0 {
                    return v.into_iter().map(|c| c / norm).collect();
                }
            }
        };
        let mut x = unit(self.k + 1);
        let mut y = unit(self.l + 1);
        // keep the normalized entry away from zero
        match self.normalized {
            Normalized::X => x[0] = C64::new(x[0].norm().max(0.3), 0.0),
            Normalized::Y => y[0] = C64::new(y[0].norm().max(0.3), 0.0),
        }
        let nx = x.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let ny = y.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let z: Vec<C64> = x
            .iter()
            .map(|c| c * (s.cos() / nx))
            .chain(y.iter().map(|c| c * (s.sin() / ny)))
            .collect();
        self.chart_of(&z)
    }
}

impl MetricField for FsChart {
    fn dim(&self) -> usize {
        self.real_dim()
    }
    fn metric(&self, p: &[f64]) -> Result<DMatrix<f64>> {
        Ok(FsChart::metric(self, p))
    }
    /// Far out in the chart the metric decays like `|w|⁻⁴`; points with
    /// `|w|² > MAX_CHART_RADIUS2` are treated as outside.
    fn contains(&self, p: &[f64]) -> bool {
        p.len() == self.real_dim()
            && p.iter().all(|c| c.is_finite())
            && p.iter().map(|c| c * c).sum::<f64>() <= MAX_CHART_RADIUS2
    }
}

/// `τ` as a scalar field on the chart (values only; derivatives are numeric).
#[derive(Debug, Clone, Copy)]
pub struct FsTau(pub FsChart);

impl ScalarField for FsTau {
    fn value(&self, p: &[f64]) -> Result<f64> {
        Ok(self.0.tau(p))
    }
}

/// The standard complex structure of the chart.
#[derive(Debug, Clone, Copy)]
pub struct FsJ(pub FsChart);

impl AlmostComplexField for FsJ {
    fn value(&self, _p: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.0.real_dim();
        let mut j = DMatrix::zeros(n, n);
        for b in 0..n / 2 {
            j[(2 * b + 1, 2 * b)] = 1.0;
            j[(2 * b, 2 * b + 1)] = -1.0;
        }
        Ok(j)
    }
    fn derivatives(&self, _p: &[f64]) -> Option<Result<Vec<DMatrix<f64>>>> {
        let n = self.0.real_dim();
        Some(Ok(vec![DMatrix::zeros(n, n); n]))
    }
}

/// `ℂP^m ∋ [Z] ↦ [UZ]` in chart coordinates.
pub fn unitary_map(chart: &FsChart, u: &DMatrix<C64>, p: &[f64]) -> Vec<f64> {
    let z = DVector::from_vec(chart.homogeneous(p));
    let uz = u * z;
    chart.chart_of(uz.as_slice())
}

/// A unitary matrix from the QR factorization of a random complex matrix.
pub fn random_unitary<R: Rng>(rng: &mut R, n: usize) -> DMatrix<C64> {
    let a = DMatrix::from_fn(n, n, |_, _| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
    a.qr().q()
}

/// `Q = 4τ(1−τ)` of this normalization.
pub fn fs_profile() -> Result<MomentumProfile> {
    MomentumProfile::canonical(Interval::new(0.0, 1.0)?, 2.0)
}

/// `τ = sin² s`: distance from the minimum level is `s = arcsin √τ`.
pub fn fs_distance(tau: f64) -> f64 {
    tau.clamp(0.0, 1.0).sqrt().asin()
}

/// The chart as an extraction oracle, seeded on the middle level.
pub struct FsOracle {
    pub chart: FsChart,
    tau: FsTau,
    j: FsJ,
    seeds: Vec<Vec<f64>>,
}

impl FsOracle {
    pub fn new(chart: FsChart, seed: u64, n: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let seeds = (0..n).map(|_| chart.sample(&mut rng, 0.25 * PI)).collect();
        Self {
            chart,
            tau: FsTau(chart),
            j: FsJ(chart),
            seeds,
        }
    }
}

impl Oracle for FsOracle {
    fn metric(&self) -> &dyn MetricField {
        &self.chart
    }
    fn potential(&self) -> &dyn ScalarField {
        &self.tau
    }
    fn complex_structure(&self) -> &dyn AlmostComplexField {
        &self.j
    }
    fn seeds(&self) -> Vec<Vec<f64>> {
        self.seeds.clone()
    }
}

const FS_Q_TOL: f64 = 1e-8;
const FS_GAMMA_STDDEV_TOL: f64 = 1e-5;
const FS_BOCHNER_POINTS: usize = 20;
const FS_POINTS: usize = 200;

/// The two affine charts `x₀ = 1` and `y₀ = 1`, covering `τ < 1` and `τ > 0`.
struct Atlas {
    charts: [FsChart; 2],
    taus: [FsTau; 2],
    js: [FsJ; 2],
}

impl Atlas {
    fn new(k: usize, l: usize) -> Result<Self> {
        let charts = [FsChart::new(k, l, Normalized::X)?, FsChart::new(k, l, Normalized::Y)?];
        Ok(Self {
            charts,
            taus: charts.map(FsTau),
            js: charts.map(FsJ),
        })
    }

    fn probe(&self, c: usize) -> Probe<'_> {
        Probe::new(&self.charts[c], &self.js[c], &self.taus[c])
    }

    /// A point at distance `s` from the minimum level, in the chart that
    /// keeps it within `|w|² ≲ 20`.
    fn sample<R: Rng>(&self, rng: &mut R, s: f64) -> (usize, Vec<f64>) {
        let c = if s <= 0.25 * PI { 0 } else { 1 };
        (c, self.charts[c].sample(rng, s))
    }

    fn jgrad_killing(&self, c: usize, p: &[f64]) -> Result<f64> {
        let probe = self.probe(c);
        let jgrad = JGradientOf {
            calc: &probe.calc,
            f: &self.taus[c],
            j: &self.js[c],
        };
        probe.killing_residual(&jgrad, p)
    }
}

fn per_point(
    id: &str,
    grid: &str,
    tol: f64,
    pts: &[(usize, Vec<f64>)],
    f: impl Fn(usize, &[f64]) -> Result<f64> + Sync,
) -> CheckReport {
    let samples = pts
        .par_iter()
        .enumerate()
        .map(|(i, (c, p))| Sample {
            index: vec![*c, i],
            point: p.clone(),
            value: f(*c, p).map_err(|e| e.to_string()),
        })
        .collect();
    CheckReport::from_samples(id, grid, tol, samples)
}

fn failed_report(id: &str, grid: &str, tol: f64, e: &Error) -> CheckReport {
    CheckReport::from_samples(
        id,
        grid,
        tol,
        vec![Sample {
            index: vec![0],
            point: vec![],
            value: Err(e.to_string()),
        }],
    )
}

/// Residual suite for `ℂP^{k+l+1}` with the Fubini–Study metric on 200
/// random points with `s` away from both ends. `oracle_samples` and the grid
/// are not used.
pub fn fs_verify(k: usize, l: usize, cfg: &VerifyConfig) -> Result<Vec<CheckReport>> {
    cfg.validate()?;
    let atlas = Atlas::new(k, l)?;
    let grid = format!("{FS_POINTS} random");
    let profile = fs_profile()?;
    let lambda = 0.5 * PI;
    let delta = cfg.collar * lambda;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pts: Vec<(usize, Vec<f64>)> = (0..FS_POINTS)
        .map(|_| {
            let s = rng.gen_range(delta..lambda - delta);
            atlas.sample(&mut rng, s)
        })
        .collect();
    let tau = |c: usize, p: &[f64]| atlas.charts[c].tau(p);
    let scaled = |x: f64| x * cfg.tol_scale;
    let mut reports = vec![
        per_point("fs.q_profile", &grid, scaled(FS_Q_TOL), &pts, |c, p| {
            Ok((atlas.probe(c).q(p)? - profile.q(tau(c, p))).abs())
        }),
        per_point("kaehler.nabla_j", &grid, cfg.tol("kaehler.nabla_j"), &pts, |c, p| {
            let probe = atlas.probe(c);
            Ok(probe.kaehler_residuals(p, &probe.jet(p)?)?.0)
        }),
        per_point("killing.j_grad_tau", &grid, cfg.tol("killing.j_grad_tau"), &pts, |c, p| {
            atlas.jgrad_killing(c, p)
        }),
        per_point(
            "geodesic_gradient.dq_wedge_dtau",
            &grid,
            cfg.tol("geodesic_gradient.dq_wedge_dtau"),
            &pts,
            |c, p| {
                let probe = atlas.probe(c);
                probe.dq_wedge_dtau(p, &probe.jet(p)?)
            },
        ),
        per_point(
            "geodesic_gradient.nabla_v_v",
            &grid,
            cfg.tol("geodesic_gradient.nabla_v_v"),
            &pts,
            |c, p| Ok(atlas.probe(c).nabla_v_v(&atlas.probe(c).jet(p)?, profile.psi(tau(c, p))?)),
        ),
        per_point(
            "bochner.ddt",
            &format!("{FS_BOCHNER_POINTS} random"),
            cfg.tol("bochner.ddt"),
            &pts[..FS_BOCHNER_POINTS],
            |c, p| {
                let probe = atlas.probe(c);
                probe.ddt_residual(p, &probe.jet(p)?)
            },
        ),
    ];

    // γ with the profile read off the metric, not the known one
    let oracle = FsOracle::new(atlas.charts[0], cfg.seed, 4);
    let opts = ExtractOptions::default();
    let fitted = oracle
        .seeds()
        .par_iter()
        .map(|s| sweep(&oracle, s, &opts))
        .collect::<Result<Vec<_>>>()
        .and_then(|sw| {
            let pooled: Vec<(f64, f64)> = sw.iter().flatten().map(|s| (s.tau, s.q)).collect();
            extract_profile(&pooled, &opts)
        });
    match fitted {
        Ok(est) => {
            let fp = est.profile;
            let values: Vec<Result<f64>> = pts
                .par_iter()
                .map(|(c, p)| {
                    let probe = atlas.probe(*c);
                    let t = tau(*c, p);
                    let lap = probe.calc.laplacian(&atlas.taus[*c], p)?;
                    let g = recover_gamma(t, probe.q(p)?, lap, fp.psi(t)?)?;
                    g.finite().ok_or(Error::UndefinedOperation("gamma recovered as infinity"))
                })
                .collect();
            let ok: Vec<f64> = values.iter().filter_map(|v| v.as_ref().ok().copied()).collect();
            let n = ok.len().max(1) as f64;
            let mean = ok.iter().sum::<f64>() / n;
            let sd = (ok.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / n).sqrt();
            let stat = if ok.len() == values.len() {
                Ok(sd)
            } else {
                Err("gamma recovery failed at some points".to_string())
            };
            reports.push(CheckReport::from_samples(
                "fs.gamma_stddev",
                &grid,
                scaled(FS_GAMMA_STDDEV_TOL),
                vec![Sample {
                    index: vec![0],
                    point: vec![mean],
                    value: stat,
                }],
            ));
            reports.push(per_point(
                "laplacian_identity",
                &grid,
                cfg.tol("laplacian_identity"),
                &pts,
                |c, p| {
                    let t = tau(c, p);
                    let lap = atlas.probe(c).calc.laplacian(&atlas.taus[c], p)?;
                    let want = match rp1_div(fp.q(t), Rp1::Finite(t - mean))? {
                        Rp1::Finite(x) => x + fp.dq(t),
                        Rp1::Infinity => return Err(Error::SingularFactor {
                            tau: t,
                            tau_star: fp.interval.tau_star,
                            gamma: mean,
                        }),
                    };
                    Ok((lap - want).abs() / (1.0 + lap.abs()))
                },
            ));
        }
        Err(e) => {
            reports.push(failed_report("fs.gamma_stddev", &grid, scaled(FS_GAMMA_STDDEV_TOL), &e));
            reports.push(failed_report("laplacian_identity", &grid, cfg.tol("laplacian_identity"), &e));
        }
    }
    reports.push(fs_boundary(&atlas, cfg, lambda));
    reports.extend(fs_flow(&atlas, cfg, lambda));
    reports.sort_by(|a, b| a.check.cmp(&b.check));
    Ok(reports)
}

/// Hessian eigenvalues at the minimum level, approached along random rays.
fn fs_boundary(atlas: &Atlas, cfg: &VerifyConfig, lambda: f64) -> CheckReport {
    let id = "boundary.hessian_eigenvalues";
    let chart = atlas.charts[0];
    let a = 2.0;
    let d = cfg.boundary_delta * lambda;
    let ss = [4.0 * d, 2.0 * d, d];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xb0);
    let rays: Vec<u64> = (0..16).map(|_| rng.gen()).collect();
    // the minimum set is ℂP^k: a zero block of size 2k
    let zeros = 2 * chart.k;
    let samples = rays
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            // one direction per ray: every level is sampled from the same rng state
            let rr = ChaCha8Rng::seed_from_u64(*r);
            let p_far = chart.sample(&mut rr.clone(), ss[0]);
            let probe = atlas.probe(0);
            let value = (|| -> Result<f64> {
                let eig: Vec<Vec<f64>> = ss
                    .iter()
                    .map(|s| probe.hessian_eigenvalues(&chart.sample(&mut rr.clone(), *s)))
                    .collect::<Result<_>>()?;
                let lim: Vec<f64> = (0..eig[0].len())
                    .map(|k| richardson_even(&ss, &[eig[0][k], eig[1][k], eig[2][k]]))
                    .collect();
                Ok(lim
                    .iter()
                    .enumerate()
                    .map(|(k, l)| (l - if k < zeros { 0.0 } else { a }).abs())
                    .fold(0.0, f64::max))
            })();
            Sample {
                index: vec![i],
                point: p_far,
                value: value.map_err(|e| e.to_string()),
            }
        })
        .collect();
    CheckReport::from_samples(id, "16 rays", cfg.tol(id), samples)
}

/// Gradient flow from `s = δ` to `s = λ − δ`, `λ = π/2`: up to the middle
/// level in the `x₀ = 1` chart, then on in the `y₀ = 1` chart.
fn fs_flow(atlas: &Atlas, cfg: &VerifyConfig, lambda: f64) -> Vec<CheckReport> {
    let delta = cfg.flow_delta;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xf1);
    let starts: Vec<Vec<f64>> = (0..8).map(|_| atlas.charts[0].sample(&mut rng, delta)).collect();
    let levels = [0.5, (lambda - delta).sin().powi(2)];
    let results: Vec<std::result::Result<[f64; 2], String>> = starts
        .par_iter()
        .map(|p0| {
            let mut x = p0.clone();
            let mut offset = delta;
            let mut pointwise: f64 = 0.0;
            for (c, level) in levels.iter().enumerate() {
                let chart = atlas.charts[c];
                if c == 1 {
                    x = chart.chart_of(&atlas.charts[0].homogeneous(&x));
                }
                let stop = FlowStop {
                    level: Some(*level),
                    direction: 1.0,
                    max_length: lambda,
                    ds: lambda / 512.0,
                };
                let probe = atlas.probe(c);
                let path =
                    integrate_gradient_flow(&probe.calc, &atlas.taus[c], &x, stop).map_err(|e| e.to_string())?;
                if path.termination != Termination::ReachedLevel {
                    return Err(format!("flow ended with {:?}", path.termination));
                }
                for (y, s) in path.points.iter().zip(&path.arclength) {
                    pointwise = pointwise.max((fs_distance(chart.tau(y)) - (s + offset)).abs());
                }
                offset += path.length();
                x = path.end().to_vec();
            }
            Ok([pointwise, (offset - delta - (lambda - 2.0 * delta)).abs()])
        })
        .collect();
    ["flow.arclength_vs_s", "flow.total_length"]
        .iter()
        .enumerate()
        .map(|(k, id)| {
            let samples = starts
                .iter()
                .zip(&results)
                .enumerate()
                .map(|(i, (p, r))| Sample {
                    index: vec![i],
                    point: p.clone(),
                    value: r.as_ref().map(|v| v[k]).map_err(Clone::clone),
                })
                .collect();
            CheckReport::from_samples(id, "8 flows", cfg.tol(id), samples)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{fd_partial, Calculus};

    fn chart() -> FsChart {
        FsChart::new(0, 1, Normalized::X).unwrap()
    }

    #[test]
    fn frozen_values_at_a_reference_point() {
        // symbolic oracle at w = (0.3 − 0.2i, 0.5 + i/7)
        let p = [0.3, -0.2, 0.5, 1.0 / 7.0];
        let c = chart();
        assert!((c.tau(&p) - 0.28592247158262896).abs() < 1e-15);
        let g = c.metric(&p);
        let want = [
            [0.6477896552605851, 0.0, -0.06191724415743745, -0.07284381665580876],
            [0.0, 0.6477896552605851, 0.07284381665580876, -0.06191724415743745],
            [-0.06191724415743745, 0.07284381665580876, 0.5761945897474473, 0.0],
            [-0.07284381665580876, -0.06191724415743745, 0.0, 0.5761945897474473],
        ];
        for i in 0..4 {
            for j in 0..4 {
                assert!((g[(i, j)] - want[i][j]).abs() < 1e-15);
            }
        }
        let calc = Calculus::new(&c);
        let grad = calc.gradient(&FsTau(c), &p).unwrap();
        let q = calc.norm_vector(&grad, &p).unwrap().powi(2);
        assert!((q - 0.8166832473068388).abs() < 1e-10);
        assert!((calc.laplacian(&FsTau(c), &p).unwrap() - 4.5689303410084525).abs() < 1e-7);
    }

    #[test]
    fn tau_special_values() {
        let c = chart();
        assert_eq!(c.tau(&[0.0, 0.0, 0.0, 0.0]), 0.0);
        assert!((c.tau(&[0.6, 0.0, 0.0, 0.8]) - 0.5).abs() < 1e-15);
        assert!(c.tau(&[1e6, 0.0, 0.0, 0.0]) > 1.0 - 1e-11);
        let cy = FsChart::new(0, 1, Normalized::Y).unwrap();
        assert_eq!(cy.tau(&[0.0, 0.0, 0.0, 0.0]), 1.0);
    }

    #[test]
    fn positive_definite_and_einstein() {
        let c = chart();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let s = rng.gen_range(0.05..1.5);
            let p = c.sample(&mut rng, s);
            assert!((c.tau(&p) - s.sin().powi(2)).abs() < 1e-12);
            assert!(c.metric(&p).cholesky().is_some());
        }
        let calc = Calculus::new(&c);
        for _ in 0..3 {
            let s = rng.gen_range(0.2..1.2);
            let p = c.sample(&mut rng, s);
            let ric = calc.ricci(&p).unwrap();
            assert!((ric - c.metric(&p) * 6.0).amax() < 1e-3);
        }
    }

    #[test]
    fn fs_suite_passes() {
        let r = fs_verify(0, 1, &VerifyConfig::default()).unwrap();
        assert!(crate::verify::all_pass(&r), "{}", crate::verify::summary_table(&r));
        assert!(r.iter().any(|c| c.check == "fs.gamma_stddev"));
    }

    #[test]
    fn unitary_invariance() {
        let c = chart();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_unitary(&mut rng, 3);
        for _ in 0..10 {
            let s = rng.gen_range(0.2..1.2);
            let p = c.sample(&mut rng, s);
            let fp = unitary_map(&c, &u, &p);
            if fp.iter().any(|x| x.abs() > 20.0) {
                continue;
            }
            let n = 4;
            let mut df = DMatrix::zeros(n, n);
            for k in 0..n {
                let col: DMatrix<f64> = fd_partial(
                    |q| Ok(DMatrix::from_column_slice(n, 1, &unitary_map(&c, &u, q))),
                    &p,
                    k,
                    1e-3,
                )
                .unwrap();
                df.set_column(k, &col.column(0));
            }
            let pulled = df.transpose() * c.metric(&fp) * &df;
            assert!((pulled - c.metric(&p)).amax() < 1e-8);
        }
    }
}
