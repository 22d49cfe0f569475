//! Recovery of the construction data `(I, a, Q, γ, h)` from a black-box
//! Kähler metric with a Killing potential.
//!
//! Fibres are swept by unit-speed gradient flow of `τ` from a mid-level seed
//! towards both critical levels. `(τ, Q)` samples give the interval, `a` and
//! the profile; `γ` comes from `Δτ`; `h` from the horizontal block of `g`
//! extrapolated to the minimum level.

use std::f64::consts::{FRAC_PI_2, PI};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::construction::{ConstructionData, JField, TauField, TotalChart, TAU, THETA};
use crate::error::{Error, Result};
use crate::geometry::{
    integrate_gradient_flow, AlmostComplexField, Calculus, FlowStop, MetricField, ScalarField, Termination,
};
use crate::numerics::{least_squares, poly_eval, poly_fit, richardson_even, Chebyshev2};
use crate::profiles::{Interval, MomentumProfile, ReparamMaps, ReparamOptions};
use crate::rp1::Rp1;
use crate::surfaces::{
    solve_connection_form, BaseChart, BuiltinChart, GammaField, Pole, SampledChart, Surface, SurfaceChart,
    SurfaceKind,
};
use crate::verify::{chebyshev_s, recover_gamma, Probe};

/// A Kähler manifold with Killing potential, seen only through evaluations.
pub trait Oracle: Sync {
    fn metric(&self) -> &dyn MetricField;
    fn potential(&self) -> &dyn ScalarField;
    fn complex_structure(&self) -> &dyn AlmostComplexField;
    /// Starting points of the fibre sweeps, away from the critical levels.
    fn seeds(&self) -> Vec<Vec<f64>>;
    /// Base coordinates of a point when the first two coordinates are
    /// coordinates on the base surface.
    fn base_point(&self, _p: &[f64]) -> Option<[f64; 2]> {
        None
    }
}

/// One chart of the construction, seeded at `τ*` over the given base points.
pub struct ConstructionOracle {
    pub chart: TotalChart,
    j: JField,
    tau: TauField,
    bases: Vec<[f64; 2]>,
}

impl ConstructionOracle {
    pub fn new(chart: TotalChart, bases: Vec<[f64; 2]>) -> Self {
        let j = chart.complex_structure();
        let tau = chart.tau();
        Self { chart, j, tau, bases }
    }
}

impl Oracle for ConstructionOracle {
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
        let t = self.chart.tau_star();
        self.bases.iter().map(|b| vec![b[0], b[1], t, 0.0]).collect()
    }
    fn base_point(&self, p: &[f64]) -> Option<[f64; 2]> {
        Some([p[0], p[1]])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExtractOptions {
    /// Largest sweep step in arclength.
    pub sweep_ds: f64,
    /// Sweeps stop this far (estimated) from a critical level.
    pub stop_distance: f64,
    pub max_degree: usize,
    /// Relative residual at which the profile fit stops raising the degree.
    pub fit_tol: f64,
    /// Relative residual above which `Q` is declared not a function of `τ`.
    pub function_tol: f64,
    /// Largest chordal deviation of `γ` along one fibre.
    pub gamma_tol: f64,
    /// Smallest `s` of the `h` extrapolation, as a fraction of `λ`.
    pub boundary_delta: f64,
    /// Fail when a recovered `γ` lies in the closed interval.
    pub require_gamma_outside: bool,
}

impl Default for ExtractOptions {
    fn default() -> Self {
        Self {
            sweep_ds: 0.02,
            stop_distance: 1e-4,
            max_degree: 8,
            fit_tol: 1e-9,
            function_tol: 1e-6,
            gamma_tol: 1e-6,
            boundary_delta: 0.005,
            require_gamma_outside: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSample {
    pub point: Vec<f64>,
    pub tau: f64,
    pub q: f64,
}

fn probe(o: &dyn Oracle) -> Probe<'_> {
    Probe::new(o.metric(), o.complex_structure(), o.potential())
}

fn rk4_unit_gradient(calc: &Calculus, f: &dyn ScalarField, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let rhs = |y: &[f64]| -> Result<DVector<f64>> {
        let g = calc.gradient(f, y)?;
        let n = calc.norm_vector(&g, y)?;
        if !(n > 0.0) {
            return Err(Error::UndefinedGradient(format!("at {y:?}")));
        }
        Ok(g / n)
    };
    let at = |k: &DVector<f64>, t: f64| -> Vec<f64> { x.iter().zip(k.iter()).map(|(a, b)| a + t * b).collect() };
    let k1 = rhs(x)?;
    let k2 = rhs(&at(&k1, 0.5 * h))?;
    let k3 = rhs(&at(&k2, 0.5 * h))?;
    let k4 = rhs(&at(&k3, h))?;
    let k = (k1 + k2 * 2.0 + k3 * 2.0 + k4) / 6.0;
    Ok(at(&k, h))
}

/// `(τ, Q)` along the gradient line through `seed`, both directions, sorted
/// by `τ`. Steps shrink geometrically near the critical levels.
pub fn sweep(oracle: &dyn Oracle, seed: &[f64], opts: &ExtractOptions) -> Result<Vec<SweepSample>> {
    let pr = probe(oracle);
    let tau = oracle.potential();
    let mut out = vec![SweepSample {
        point: seed.to_vec(),
        tau: tau.value(seed)?,
        q: pr.q(seed)?,
    }];
    for dir in [-1.0, 1.0] {
        let mut x = seed.to_vec();
        let (mut t, mut q) = (out[0].tau, out[0].q);
        let mut a_est: Option<f64> = None;
        for _ in 0..10_000 {
            let ds = match a_est {
                Some(a) if a > 0.0 => {
                    let d = q.max(0.0).sqrt() / a;
                    if d < opts.stop_distance {
                        break;
                    }
                    opts.sweep_ds.min(0.2 * d)
                }
                _ => opts.sweep_ds,
            };
            let next = match rk4_unit_gradient(&pr.calc, tau, &x, dir * ds) {
                Ok(n) if oracle.metric().contains(&n) => n,
                _ => break,
            };
            let (tn, qn) = match (tau.value(&next), pr.q(&next)) {
                (Ok(tn), Ok(qn)) => (tn, qn),
                _ => break,
            };
            if (tn - t) * dir <= 0.0 || !(qn > 0.0) {
                break;
            }
            a_est = Some(0.5 * ((qn - q) / (tn - t)).abs());
            out.push(SweepSample {
                point: next.clone(),
                tau: tn,
                q: qn,
            });
            x = next;
            t = tn;
            q = qn;
        }
    }
    out.sort_by(|a, b| a.tau.total_cmp(&b.tau));
    Ok(out)
}

/// Newton root of a polynomial in `t` from `t0`, with the slope there.
fn poly_root(c: &[f64], t0: f64) -> (f64, f64) {
    let mut t = t0;
    for _ in 0..60 {
        let (v, d) = poly_eval(c, t);
        if d == 0.0 {
            break;
        }
        let step = v / d;
        t -= step;
        if step.abs() < 1e-16 {
            break;
        }
    }
    (t, poly_eval(c, t).1)
}

/// Interval and `a` from a polynomial fit of `Q(τ)` continued to its zeros
/// beyond the extreme samples, plus the two one-sided estimates of `a`.
pub fn estimate_interval_and_a(samples: &[(f64, f64)], opts: &ExtractOptions) -> Result<(Interval, f64, [f64; 2])> {
    if samples.len() < 8 {
        return Err(Error::InconsistentOracle(format!("only {} samples", samples.len())));
    }
    let qmax = samples.iter().map(|s| s.1).fold(0.0, f64::max);
    let lo = samples.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let hi = samples.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
    let (c, hw) = (0.5 * (lo + hi), 0.5 * (hi - lo));
    let ts: Vec<f64> = samples.iter().map(|s| (s.0 - c) / hw).collect();
    let qs: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for deg in 2..=opts.max_degree + 6 {
        if deg + 2 > samples.len() {
            break;
        }
        let coeffs = poly_fit(&ts, &qs, deg, 0.0)?;
        let res = ts
            .iter()
            .zip(&qs)
            .map(|(t, q)| (poly_eval(&coeffs, *t).0 - q).abs())
            .fold(0.0, f64::max)
            / qmax;
        if best.as_ref().map_or(true, |b| res < b.0) {
            best = Some((res, coeffs));
        }
        if res <= opts.fit_tol {
            break;
        }
    }
    let (_, coeffs) = best.ok_or_else(|| Error::InconsistentOracle("no polynomial fit".into()))?;
    let (t_lo, d_lo) = poly_root(&coeffs, -1.0);
    let (t_hi, d_hi) = poly_root(&coeffs, 1.0);
    let a_lo = 0.5 * d_lo / hw;
    let a_hi = -0.5 * d_hi / hw;
    let near = |t: f64, end: f64| (t - end).abs() < 0.1;
    if !(near(t_lo, -1.0) && near(t_hi, 1.0)) {
        return Err(Error::InconsistentOracle(format!(
            "Q has no zero next to the sampled range [{lo}, {hi}]"
        )));
    }
    if !(a_lo > 0.0 && a_hi > 0.0) || (a_lo - a_hi).abs() > 1e-3 * a_lo.max(a_hi) {
        return Err(Error::InconsistentOracle(format!(
            "endpoint slopes give a = {a_lo:.6e} and {a_hi:.6e}"
        )));
    }
    Ok((
        Interval::new(c + hw * t_lo, c + hw * t_hi)?,
        0.5 * (a_lo + a_hi),
        [a_lo, a_hi],
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct ProfileEstimate {
    pub profile: MomentumProfile,
    /// `a` from the lower and upper end separately.
    pub a_ends: [f64; 2],
    /// `max |Q − Q_fit| / max Q` over all samples.
    pub fit_residual: f64,
    pub samples: usize,
}

/// Least-squares profile through pooled `(τ, Q)` samples.
pub fn extract_profile(samples: &[(f64, f64)], opts: &ExtractOptions) -> Result<ProfileEstimate> {
    let (iv, a, a_ends) = estimate_interval_and_a(samples, opts)?;
    let qmax = samples.iter().map(|s| s.1).fold(0.0, f64::max);
    let inner: Vec<(f64, f64)> = samples.iter().copied().filter(|s| iv.contains_open(s.0)).collect();
    let l = iv.length();
    let half = 0.5 * l;
    let bump = |t: f64| (t - iv.tau_min) * (iv.tau_max - t);
    let residual = |p: &MomentumProfile| {
        inner
            .iter()
            .map(|s| (s.1 - p.q(s.0)).abs())
            .fold(0.0, f64::max)
            / qmax
    };
    let mut best = MomentumProfile::canonical(iv, a)?;
    let mut best_res = residual(&best);
    if best_res > opts.fit_tol {
        let rhs = DVector::from_iterator(inner.len(), inner.iter().map(|s| s.1 - bump(s.0) * 2.0 * a / l));
        for deg in 0..=opts.max_degree {
            let m = DMatrix::from_fn(inner.len(), deg + 1, |i, k| {
                let t = inner[i].0;
                bump(t).powi(2) * ((t - iv.tau_star) / half).powi(k as i32)
            });
            let c = least_squares(m, rhs.clone())?;
            let Ok(p) = MomentumProfile::new(iv, a, c.iter().copied().collect()) else {
                continue;
            };
            let r = residual(&p);
            if r < best_res {
                best = p;
                best_res = r;
            }
            if best_res <= opts.fit_tol {
                break;
            }
        }
    }
    if best_res > opts.function_tol {
        return Err(Error::NotFunctionOfTau {
            spread: best_res,
            tol: opts.function_tol,
        });
    }
    Ok(ProfileEstimate {
        profile: best,
        a_ends,
        fit_residual: best_res,
        samples: samples.len(),
    })
}

fn rp1_from_angle(phi: f64) -> Rp1 {
    if (phi.abs() - FRAC_PI_2).abs() < 1e-15 {
        Rp1::Infinity
    } else {
        Rp1::Finite(phi.tan())
    }
}

/// Mean on ℝP¹ through doubled angles.
pub fn rp1_mean(values: &[Rp1]) -> Rp1 {
    let (s, c) = values.iter().fold((0.0, 0.0), |(s, c), v| {
        let t = 2.0 * v.angle();
        (s + t.sin(), c + t.cos())
    });
    let phi = 0.5 * s.atan2(c);
    let phi = if phi <= -FRAC_PI_2 { phi + PI } else { phi };
    rp1_from_angle(phi)
}

#[derive(Debug, Clone, Serialize)]
pub struct GammaEstimate {
    pub seed: usize,
    pub base: Option<[f64; 2]>,
    pub gamma: Rp1,
    /// Largest chordal distance of a pointwise value from `gamma`.
    pub deviation: f64,
    pub samples: usize,
}

/// `γ` on one fibre from `τ − Q/(Δτ − 2ψ)` at the sweep points in the middle
/// half of the fibre.
pub fn extract_gamma(
    oracle: &dyn Oracle,
    seed: usize,
    sweep: &[SweepSample],
    maps: &ReparamMaps,
    opts: &ExtractOptions,
) -> Result<GammaEstimate> {
    let pr = probe(oracle);
    let lo = maps.tau_of_s(0.25 * maps.lambda)?;
    let hi = maps.tau_of_s(0.75 * maps.lambda)?;
    let values: Vec<Rp1> = sweep
        .iter()
        .filter(|s| lo <= s.tau && s.tau <= hi)
        .map(|s| {
            let lap = pr.calc.laplacian(oracle.potential(), &s.point)?;
            recover_gamma(s.tau, s.q, lap, maps.profile.psi(s.tau)?)
        })
        .collect::<Result<_>>()?;
    if values.is_empty() {
        return Err(Error::InconsistentOracle(format!("no sweep samples in the middle of fibre {seed}")));
    }
    let gamma = rp1_mean(&values);
    let deviation = values.iter().map(|v| v.chordal_distance(&gamma)).fold(0.0, f64::max);
    if deviation > opts.gamma_tol {
        return Err(Error::FiberInconsistency {
            deviation,
            tol: opts.gamma_tol,
        });
    }
    let iv = maps.profile.interval;
    if opts.require_gamma_outside && gamma.in_closed_interval(iv.tau_min, iv.tau_max) {
        return Err(Error::InconsistentOracle(format!(
            "recovered gamma {gamma:?} lies in [{}, {}]",
            iv.tau_min, iv.tau_max
        )));
    }
    Ok(GammaEstimate {
        seed,
        base: sweep.first().and_then(|s| oracle.base_point(&s.point)),
        gamma,
        deviation,
        samples: values.len(),
    })
}

/// `(h₁₁, h₁₂, h₂₂)` at the base point of `seed`.
pub fn extract_h(
    oracle: &dyn Oracle,
    seed: &[f64],
    maps: &ReparamMaps,
    gamma: Rp1,
    opts: &ExtractOptions,
) -> Result<[f64; 3]> {
    if oracle.base_point(seed).is_none() {
        return Err(Error::UndefinedOperation("h needs base coordinates"));
    }
    let pr = probe(oracle);
    let iv = maps.profile.interval;
    let delta = opts.boundary_delta * maps.lambda;
    let ss = [4.0 * delta, 2.0 * delta, delta];
    let mut blocks = Vec::with_capacity(3);
    for &s in &ss {
        let level = maps.tau_of_s(s)?;
        let stop = FlowStop {
            level: Some(level),
            direction: -1.0,
            max_length: maps.lambda,
            ds: maps.lambda / 512.0,
        };
        let path = integrate_gradient_flow(&pr.calc, oracle.potential(), seed, stop)?;
        if path.termination != Termination::ReachedLevel {
            return Err(Error::NumericalFailure(format!(
                "flow to tau = {level} ended with {:?}",
                path.termination
            )));
        }
        let x = path.end();
        let jet = pr.jet(x)?;
        let n = jet.g.nrows();
        let lift = |i: usize| {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            let gv = (e.transpose() * &jet.g * &jet.v)[(0, 0)];
            let gu = (e.transpose() * &jet.g * &jet.u)[(0, 0)];
            &e - &jet.v * (gv / jet.q) - &jet.u * (gu / jet.q)
        };
        let (w0, w1) = (lift(0), lift(1));
        let ip = |a: &DVector<f64>, b: &DVector<f64>| (a.transpose() * &jet.g * b)[(0, 0)];
        blocks.push([ip(&w0, &w0), ip(&w0, &w1), ip(&w1, &w1)]);
    }
    let scale = match gamma {
        Rp1::Infinity => 1.0,
        Rp1::Finite(g) => (iv.tau_star - g) / (iv.tau_min - g),
    };
    Ok([0, 1, 2].map(|k| scale * richardson_even(&ss, &[blocks[0][k], blocks[1][k], blocks[2][k]])))
}

#[derive(Debug, Clone, Serialize)]
pub struct HEstimate {
    pub seed: usize,
    pub base: [f64; 2],
    pub h: [f64; 3],
}

#[derive(Debug, Clone, Serialize)]
pub struct Extraction {
    pub profile: ProfileEstimate,
    pub gamma: Vec<GammaEstimate>,
    pub h: Vec<HEstimate>,
}

/// Full extraction over several oracles sharing one profile (the charts of
/// one manifold).
pub fn extract_all(oracles: &[&dyn Oracle], opts: &ExtractOptions) -> Result<Vec<Extraction>> {
    let seeds: Vec<Vec<Vec<f64>>> = oracles.iter().map(|o| o.seeds()).collect();
    let jobs: Vec<(usize, usize)> = seeds
        .iter()
        .enumerate()
        .flat_map(|(c, s)| (0..s.len()).map(move |k| (c, k)))
        .collect();
    let sweeps: Vec<Vec<SweepSample>> = jobs
        .par_iter()
        .map(|&(c, k)| sweep(oracles[c], &seeds[c][k], opts))
        .collect::<Result<_>>()?;
    let pooled: Vec<(f64, f64)> = sweeps.iter().flatten().map(|s| (s.tau, s.q)).collect();
    let profile = extract_profile(&pooled, opts)?;
    let maps = ReparamMaps::build(&profile.profile, ReparamOptions::default())?;
    let per_seed: Vec<(GammaEstimate, Option<HEstimate>)> = jobs
        .par_iter()
        .zip(&sweeps)
        .map(|(&(c, k), sw)| {
            let o = oracles[c];
            let g = extract_gamma(o, k, sw, &maps, opts)?;
            let h = match o.base_point(&seeds[c][k]) {
                Some(base) => Some(HEstimate {
                    seed: k,
                    base,
                    h: extract_h(o, &seeds[c][k], &maps, g.gamma, opts)?,
                }),
                None => None,
            };
            Ok((g, h))
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<Extraction> = oracles
        .iter()
        .map(|_| Extraction {
            profile: profile.clone(),
            gamma: Vec::new(),
            h: Vec::new(),
        })
        .collect();
    for (&(c, _), (g, h)) in jobs.iter().zip(per_seed) {
        out[c].gamma.push(g);
        out[c].h.extend(h);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct RoundTripReport {
    pub profile: MomentumProfile,
    pub a_ends: [f64; 2],
    /// Per chart: `max ‖g − g′‖_F / ‖g‖_F` over interior test points.
    pub metric_deviation: Vec<f64>,
    pub max_metric_deviation: f64,
    /// Range of the finite recovered `γ` values, if any.
    pub gamma_range: Option<[f64; 2]>,
    pub gamma_outside_interval: bool,
    pub max_gamma_deviation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RoundTripOptions {
    /// Chebyshev nodes per axis for the base fits.
    pub nodes: usize,
    /// Test base points per axis (cell centres of the shrunk sample box).
    pub test_points: usize,
    pub test_levels: usize,
}

impl Default for RoundTripOptions {
    fn default() -> Self {
        Self {
            nodes: 16,
            test_points: 6,
            test_levels: 6,
        }
    }
}

/// Extracts `(I, a, Q, γ, h)` from the metric of `data`, rebuilds the
/// construction from the extracted data and compares the two metrics.
pub fn round_trip(data: &ConstructionData, opts: &ExtractOptions, rt: &RoundTripOptions) -> Result<RoundTripReport> {
    let charts = data.charts();
    let n = rt.nodes;
    let node_grid = |c: &TotalChart| -> Vec<[f64; 2]> {
        let (lo, hi) = c.base.chart.sample_box();
        let xs = Chebyshev2::nodes(lo[0], hi[0], n);
        let ys = Chebyshev2::nodes(lo[1], hi[1], n);
        xs.iter().flat_map(|x| ys.iter().map(move |y| [*x, *y])).collect()
    };
    let oracles: Vec<ConstructionOracle> = charts
        .iter()
        .map(|c| ConstructionOracle::new(c.clone(), node_grid(c)))
        .collect();
    let refs: Vec<&dyn Oracle> = oracles.iter().map(|o| o as &dyn Oracle).collect();
    let ex = extract_all(&refs, opts)?;
    let profile = ex[0].profile.profile.clone();
    let iv = profile.interval;

    let mut new_charts = Vec::with_capacity(charts.len());
    for (c, e) in charts.iter().zip(&ex) {
        let (lo, hi) = c.base.chart.sample_box();
        let grid = |f: &dyn Fn(usize) -> f64| DMatrix::from_fn(n, n, |i, j| f(i * n + j));
        let fit = |k: usize| Chebyshev2::fit(lo, hi, &grid(&|m| e.h[m].h[k]));
        let sampled: Arc<dyn SurfaceChart> = Arc::new(SampledChart {
            name: format!("sampled-{}", c.base.chart.id()),
            lo,
            hi,
            h11: fit(0),
            h12: fit(1),
            h22: fit(2),
        });
        let finite: Vec<f64> = e
            .gamma
            .iter()
            .filter_map(|g| match g.gamma {
                Rp1::Finite(x) => Some(x),
                Rp1::Infinity => None,
            })
            .collect();
        let gamma = if finite.is_empty() {
            GammaField::Infinity
        } else if finite.len() == e.gamma.len() {
            GammaField::Sampled(Chebyshev2::fit(lo, hi, &grid(&|m| finite[m])))
        } else {
            return Err(Error::InconsistentOracle("gamma is infinite on part of the base only".into()));
        };
        let builtin = match data.surface.kind {
            SurfaceKind::Torus => None,
            SurfaceKind::Sphere => Some(BuiltinChart::Sphere {
                r2: data.surface.scale,
                pole: Pole::North,
            }),
        };
        let connection = solve_connection_form(profile.a, iv.tau_star, &sampled, &gamma, builtin)?;
        new_charts.push(BaseChart {
            chart: sampled,
            gamma,
            connection,
        });
    }
    let rebuilt = ConstructionData::new(
        profile.clone(),
        Surface {
            kind: data.surface.kind,
            scale: data.surface.scale,
            charts: new_charts,
        },
    )?;
    let rebuilt_charts = rebuilt.charts();

    let maps = ReparamMaps::build(&data.profile, ReparamOptions::default())?;
    let taus: Vec<f64> = chebyshev_s(maps.lambda, 0.05, rt.test_levels)
        .into_iter()
        .map(|s| maps.tau_of_s(s))
        .collect::<Result<_>>()?;
    let mut metric_deviation = Vec::with_capacity(charts.len());
    for (old, new) in charts.iter().zip(&rebuilt_charts) {
        let (lo, hi) = old.base.chart.sample_box();
        let m = rt.test_points;
        let mut worst: f64 = 0.0;
        for i in 0..m {
            for j in 0..m {
                // cell centres of the box shrunk by 10% on each side
                let x = lo[0] + (0.1 + 0.8 * (i as f64 + 0.5) / m as f64) * (hi[0] - lo[0]);
                let y = lo[1] + (0.1 + 0.8 * (j as f64 + 0.5) / m as f64) * (hi[1] - lo[1]);
                for t in &taus {
                    for th in [0.0, 1.0] {
                        let mut p = [0.0; 4];
                        p[0] = x;
                        p[1] = y;
                        p[TAU] = *t;
                        p[THETA] = th;
                        let g = old.assemble_metric(&p)?;
                        let g2 = new.assemble_metric(&p)?;
                        worst = worst.max((&g - &g2).norm() / g.norm());
                    }
                }
            }
        }
        metric_deviation.push(worst);
    }
    let finite: Vec<f64> = ex
        .iter()
        .flat_map(|e| e.gamma.iter())
        .filter_map(|g| match g.gamma {
            Rp1::Finite(x) => Some(x),
            Rp1::Infinity => None,
        })
        .collect();
    let gamma_range = (!finite.is_empty()).then(|| {
        [
            finite.iter().copied().fold(f64::INFINITY, f64::min),
            finite.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        ]
    });
    let gamma_outside_interval = ex
        .iter()
        .flat_map(|e| e.gamma.iter())
        .all(|g| !g.gamma.in_closed_interval(iv.tau_min, iv.tau_max));
    Ok(RoundTripReport {
        profile,
        a_ends: ex[0].profile.a_ends,
        max_metric_deviation: metric_deviation.iter().copied().fold(0.0, f64::max),
        metric_deviation,
        gamma_range,
        gamma_outside_interval,
        max_gamma_deviation: ex
            .iter()
            .flat_map(|e| e.gamma.iter())
            .map(|g| g.deviation)
            .fold(0.0, f64::max),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profiles::Interval;

    fn torus_data(gamma: GammaField) -> ConstructionData {
        let profile = MomentumProfile::canonical(Interval::new(0.0, 1.0).unwrap(), 2.0).unwrap();
        let surface = Surface::torus(PI * 6f64.sqrt(), gamma, 2.0, 0.5).unwrap();
        ConstructionData::new(profile, surface).unwrap()
    }

    #[test]
    fn rp1_mean_handles_infinity() {
        let m = rp1_mean(&[Rp1::Finite(1e9), Rp1::Infinity, Rp1::Finite(-1e9)]);
        assert_eq!(m, Rp1::Infinity);
        let m = rp1_mean(&[Rp1::Finite(3.0), Rp1::Finite(3.0)]);
        assert!(m.chordal_distance(&Rp1::Finite(3.0)) < 1e-15);
    }

    #[test]
    fn canonical_torus_profile_and_gamma() {
        let data = torus_data(GammaField::TorusCos { c0: 3.0, c1: 0.5 });
        let chart = data.charts().remove(0);
        let o = ConstructionOracle::new(chart, vec![[0.25, 0.0], [0.6, 0.3]]);
        let ex = extract_all(&[&o], &ExtractOptions::default()).unwrap().remove(0);
        let p = &ex.profile.profile;
        assert!(p.interval.tau_min.abs() < 1e-8 && (p.interval.tau_max - 1.0).abs() < 1e-8);
        assert!((p.a - 2.0).abs() < 1e-6);
        let want = [3.0, 3.0 + 0.5 * (2.0 * PI * 0.6).cos()];
        for (g, w) in ex.gamma.iter().zip(want) {
            assert!(g.gamma.chordal_distance(&Rp1::Finite(w)) < 1e-7, "{:?} vs {w}", g.gamma);
        }
        for h in &ex.h {
            let s = PI * 6f64.sqrt();
            assert!((h.h[0] - s).abs() < 1e-6 * s && h.h[1].abs() < 1e-6 * s && (h.h[2] - s).abs() < 1e-6 * s);
        }
    }
}
