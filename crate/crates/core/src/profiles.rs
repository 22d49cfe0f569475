//! The momentum interval, the profile `Q(τ)` and the reparametrizations of
//! the fibre coordinate: `τ ↔ r` with `dr/dτ = a r / Q` and `τ ↔ s` with
//! `ds/dτ = Q^{-1/2}` (geodesic distance from the minimum level).
//!
//! `Q` is stored as `(τ−τmin)(τmax−τ)·q(τ)` with
//! `q(τ) = 2a/L + (τ−τmin)(τmax−τ)·P(t)`, `L = τmax−τmin`,
//! `t = (τ−τ*)/(L/2)`, so `Q` vanishes at both ends and `Q′ = ±2a` there
//! without any tolerance involved.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{integrate, poly_eval, poly_second_derivative, Pchip};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub tau_min: f64,
    pub tau_max: f64,
    pub tau_star: f64,
}

impl Interval {
    pub fn new(tau_min: f64, tau_max: f64) -> Result<Self> {
        if !(tau_min.is_finite() && tau_max.is_finite() && tau_min < tau_max) {
            return Err(Error::InvalidProfile {
                reason: format!("interval [{tau_min}, {tau_max}] is empty or non-finite"),
                tau: tau_min,
            });
        }
        Ok(Self {
            tau_min,
            tau_max,
            tau_star: 0.5 * (tau_min + tau_max),
        })
    }

    pub fn length(&self) -> f64 {
        self.tau_max - self.tau_min
    }

    pub fn contains(&self, tau: f64) -> bool {
        self.tau_min <= tau && tau <= self.tau_max
    }

    pub fn contains_open(&self, tau: f64) -> bool {
        self.tau_min < tau && tau < self.tau_max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentumProfile {
    pub interval: Interval,
    pub a: f64,
    /// Coefficients of `P(t)`; empty for the canonical profile.
    pub shape: Vec<f64>,
}

/// Value and first two `τ`-derivatives of a function of `τ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet2 {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

const POSITIVITY_SAMPLES: usize = 4096;

impl MomentumProfile {
    /// Validates `a > 0` and positivity of the factor `q` on `I` (dense
    /// sampling plus a derivative bound between samples).
    pub fn new(interval: Interval, a: f64, shape: Vec<f64>) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::InvalidProfile {
                reason: format!("endpoint constant a = {a} must be positive"),
                tau: interval.tau_min,
            });
        }
        if shape.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidProfile {
                reason: "non-finite shape coefficient".into(),
                tau: interval.tau_min,
            });
        }
        let p = Self { interval, a, shape };
        p.check_positivity()?;
        Ok(p)
    }

    pub fn canonical(interval: Interval, a: f64) -> Result<Self> {
        Self::new(interval, a, Vec::new())
    }

    fn check_positivity(&self) -> Result<()> {
        let n = POSITIVITY_SAMPLES;
        let step = self.interval.length() / n as f64;
        let mut worst = (f64::INFINITY, self.interval.tau_min);
        let mut max_slope: f64 = 0.0;
        for i in 0..=n {
            let tau = self.interval.tau_min + step * i as f64;
            let q = self.q_factor(tau);
            if !q.value.is_finite() {
                return Err(Error::InvalidProfile {
                    reason: "q factor is not finite".into(),
                    tau,
                });
            }
            if q.value < worst.0 {
                worst = (q.value, tau);
            }
            max_slope = max_slope.max(q.d1.abs());
        }
        if worst.0 - 0.5 * step * max_slope <= 0.0 {
            return Err(Error::InvalidProfile {
                reason: format!("Q is not positive on the open interval (q factor min {:.3e})", worst.0),
                tau: worst.1,
            });
        }
        Ok(())
    }

    fn bump(&self, tau: f64) -> Jet2 {
        let lo = self.interval.tau_min;
        let hi = self.interval.tau_max;
        Jet2 {
            value: (tau - lo) * (hi - tau),
            d1: hi + lo - 2.0 * tau,
            d2: -2.0,
        }
    }

    /// The positive factor `q` with `Q = (τ−τmin)(τmax−τ) q`.
    pub fn q_factor(&self, tau: f64) -> Jet2 {
        let half = 0.5 * self.interval.length();
        let t = (tau - self.interval.tau_star) / half;
        let (pv, pd) = poly_eval(&self.shape, t);
        let pdd = poly_second_derivative(&self.shape, t);
        let (pd, pdd) = (pd / half, pdd / (half * half));
        let b = self.bump(tau);
        Jet2 {
            value: 2.0 * self.a / self.interval.length() + b.value * pv,
            d1: b.d1 * pv + b.value * pd,
            d2: b.d2 * pv + 2.0 * b.d1 * pd + b.value * pdd,
        }
    }

    pub fn q_jet(&self, tau: f64) -> Jet2 {
        let b = self.bump(tau);
        let q = self.q_factor(tau);
        Jet2 {
            value: b.value * q.value,
            d1: b.d1 * q.value + b.value * q.d1,
            d2: b.d2 * q.value + 2.0 * b.d1 * q.d1 + b.value * q.d2,
        }
    }

    pub fn q(&self, tau: f64) -> f64 {
        self.q_jet(tau).value
    }

    pub fn dq(&self, tau: f64) -> f64 {
        self.q_jet(tau).d1
    }

    /// `ψ = ½ dQ/dτ`, defined on the closed interval.
    pub fn psi(&self, tau: f64) -> Result<f64> {
        if !self.interval.contains(tau) {
            return Err(Error::Domain(format!(
                "tau = {tau} outside [{}, {}]",
                self.interval.tau_min, self.interval.tau_max
            )));
        }
        Ok(0.5 * self.dq(tau))
    }
}

/// Shape of the factor `q` in configuration files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum QFactorSpec {
    Constant,
    Poly { coeffs: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    pub tau_min: f64,
    pub tau_max: f64,
    pub a: f64,
    #[serde(default = "default_q_factor")]
    pub q_factor: QFactorSpec,
}

fn default_q_factor() -> QFactorSpec {
    QFactorSpec::Constant
}

impl ProfileSpec {
    pub fn build(&self) -> Result<MomentumProfile> {
        self.build_with_a(self.a)
    }

    pub fn build_with_a(&self, a: f64) -> Result<MomentumProfile> {
        let interval = Interval::new(self.tau_min, self.tau_max)?;
        let shape = match &self.q_factor {
            QFactorSpec::Constant => Vec::new(),
            QFactorSpec::Poly { coeffs } => coeffs.clone(),
        };
        if shape.len() > 32 {
            return Err(Error::config("profile.q_factor.coeffs", "at most 32 coefficients"));
        }
        MomentumProfile::new(interval, a, shape)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ReparamOptions {
    pub quad_tol: f64,
    pub solve_tol: f64,
    pub grid: usize,
}

impl Default for ReparamOptions {
    fn default() -> Self {
        Self {
            quad_tol: 1e-14,
            solve_tol: 1e-14,
            grid: 2048,
        }
    }
}

/// Monotone maps between `τ`, `r` and `s` on one profile. Exact queries go
/// through quadrature and safeguarded Newton; the tables seed the solves and
/// back the CSV export.
#[derive(Debug, Clone)]
pub struct ReparamMaps {
    pub profile: MomentumProfile,
    pub lambda: f64,
    s_star: f64,
    opts: ReparamOptions,
    tau_table: Vec<f64>,
    s_table: Vec<f64>,
    log_r_table: Vec<f64>,
    s_to_tau: Pchip,
    log_r_to_tau: Pchip,
}

impl ReparamMaps {
    pub fn build(profile: &MomentumProfile, opts: ReparamOptions) -> Result<Self> {
        let profile = profile.clone();
        let iv = profile.interval;
        let s_star = lower_half_integral(&profile, (iv.tau_star - iv.tau_min).sqrt(), opts.quad_tol)?;
        let upper = upper_half_integral(&profile, (iv.tau_max - iv.tau_star).sqrt(), opts.quad_tol)?;
        let lambda = s_star + upper;
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::NumericalFailure(format!("length lambda = {lambda} is not finite")));
        }
        let mut maps = Self {
            profile,
            lambda,
            s_star,
            opts,
            tau_table: Vec::new(),
            s_table: Vec::new(),
            log_r_table: Vec::new(),
            s_to_tau: Pchip::new(vec![0.0, lambda], vec![iv.tau_min, iv.tau_max])?,
            log_r_to_tau: Pchip::new(vec![-1.0, 1.0], vec![iv.tau_min, iv.tau_max])?,
        };
        // Interior nodes uniform in s; the end nodes (r = 0, ∞) are not tabulated.
        let n = opts.grid.max(8);
        let mut taus = Vec::with_capacity(n);
        let mut ss = Vec::with_capacity(n);
        let mut logr = Vec::with_capacity(n);
        for i in 1..n {
            let s = lambda * i as f64 / n as f64;
            let tau = maps.solve_tau_of_s(s, None)?;
            taus.push(tau);
            ss.push(s);
            logr.push(maps.log_r_of_tau(tau)?);
        }
        maps.s_to_tau = Pchip::new(ss.clone(), taus.clone())?;
        maps.log_r_to_tau = Pchip::new(logr.clone(), taus.clone())?;
        maps.tau_table = taus;
        maps.s_table = ss;
        maps.log_r_table = logr;
        Ok(maps)
    }

    fn interval(&self) -> Interval {
        self.profile.interval
    }

    /// Distance `s(τ)` from the minimum level along a gradient line.
    pub fn s_of_tau(&self, tau: f64) -> Result<f64> {
        let iv = self.interval();
        if !iv.contains(tau) {
            return Err(Error::Domain(format!("tau = {tau} outside I")));
        }
        if tau <= iv.tau_star {
            lower_half_integral(&self.profile, (tau - iv.tau_min).sqrt(), self.opts.quad_tol)
        } else {
            Ok(self.lambda
                - upper_half_integral(&self.profile, (iv.tau_max - tau).sqrt(), self.opts.quad_tol)?)
        }
    }

    pub fn tau_of_s(&self, s: f64) -> Result<f64> {
        if !(0.0..=self.lambda).contains(&s) {
            return Err(Error::Domain(format!("s = {s} outside [0, {}]", self.lambda)));
        }
        let guess = self.s_to_tau.eval(s).clamp(self.interval().tau_min, self.interval().tau_max);
        self.solve_tau_of_s(s, Some(guess))
    }

    fn solve_tau_of_s(&self, s: f64, guess: Option<f64>) -> Result<f64> {
        let iv = self.interval();
        let tol = self.opts.quad_tol;
        let p = &self.profile;
        if s <= self.s_star {
            // Newton in ξ = √(τ−τmin), where s(ξ) is smooth.
            let hi = (iv.tau_star - iv.tau_min).sqrt();
            let g = guess.map(|t| (t - iv.tau_min).max(0.0).sqrt());
            let xi = safeguarded_newton(
                |xi| Ok(lower_half_integral(p, xi, tol)? - s),
                |xi| lower_integrand(p, xi),
                0.0,
                hi,
                g,
                self.opts.solve_tol,
            )?;
            Ok(iv.tau_min + xi * xi)
        } else {
            let hi = (iv.tau_max - iv.tau_star).sqrt();
            let target = self.lambda - s;
            let g = guess.map(|t| (iv.tau_max - t).max(0.0).sqrt());
            let eta = safeguarded_newton(
                |eta| Ok(upper_half_integral(p, eta, tol)? - target),
                |eta| upper_integrand(p, eta),
                0.0,
                hi,
                g,
                self.opts.solve_tol,
            )?;
            Ok(iv.tau_max - eta * eta)
        }
    }

    /// `log r(τ) = ∫_{τ*}^{τ} a/Q`, normalized by `r(τ*) = 1`.
    pub fn log_r_of_tau(&self, tau: f64) -> Result<f64> {
        let iv = self.interval();
        if !iv.contains_open(tau) {
            return Err(Error::Domain(format!("tau = {tau} outside the open interval")));
        }
        let a = self.profile.a;
        integrate(|t| a / self.profile.q(t), iv.tau_star, tau, self.opts.quad_tol)
    }

    pub fn r_of_tau(&self, tau: f64) -> Result<f64> {
        Ok(self.log_r_of_tau(tau)?.exp())
    }

    pub fn tau_of_r(&self, r: f64) -> Result<f64> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::Domain(format!("r = {r} must be positive and finite")));
        }
        let target = r.ln();
        let iv = self.interval();
        let (lo_tab, hi_tab) = self.log_r_to_tau.domain();
        let guess = if (lo_tab..=hi_tab).contains(&target) {
            Some(self.log_r_to_tau.eval(target))
        } else {
            None
        };
        let a = self.profile.a;
        safeguarded_newton(
            |t| Ok(self.log_r_of_tau(t)? - target),
            |t| a / self.profile.q(t),
            iv.tau_min,
            iv.tau_max,
            guess,
            self.opts.solve_tol,
        )
    }

    /// `σ(r) = s(τ(r))`.
    pub fn sigma(&self, r: f64) -> Result<f64> {
        self.s_of_tau(self.tau_of_r(r)?)
    }

    /// `dσ/dr = (a r)^{-1} Q^{1/2}`, the closed form.
    pub fn dsigma_dr(&self, r: f64) -> Result<f64> {
        let tau = self.tau_of_r(r)?;
        Ok(self.profile.q(tau).sqrt() / (self.profile.a * r))
    }

    /// Tabulated rows `(τ, Q, ψ, r, s)` at the interior grid nodes.
    pub fn table(&self) -> Vec<[f64; 5]> {
        self.tau_table
            .iter()
            .zip(&self.s_table)
            .zip(&self.log_r_table)
            .map(|((&tau, &s), &lr)| [tau, self.profile.q(tau), 0.5 * self.profile.dq(tau), lr.exp(), s])
            .collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["tau", "Q", "psi", "r", "s"])
            .map_err(|e| Error::Io(e.to_string()))?;
        for row in self.table() {
            wr.write_record(row.iter().map(|v| format!("{v:.17e}")))
                .map_err(|e| Error::Io(e.to_string()))?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn lower_integrand(p: &MomentumProfile, xi: f64) -> f64 {
    let iv = p.interval;
    let tau = iv.tau_min + xi * xi;
    2.0 / ((iv.tau_max - tau) * p.q_factor(tau).value).sqrt()
}

fn upper_integrand(p: &MomentumProfile, eta: f64) -> f64 {
    let iv = p.interval;
    let tau = iv.tau_max - eta * eta;
    2.0 / ((tau - iv.tau_min) * p.q_factor(tau).value).sqrt()
}

/// `∫_{τmin}^{τmin+ξ²} Q^{-1/2} dτ` after `τ = τmin + u²`.
fn lower_half_integral(p: &MomentumProfile, xi: f64, tol: f64) -> Result<f64> {
    integrate(|u| lower_integrand(p, u), 0.0, xi, tol)
}

/// `∫_{τmax−η²}^{τmax} Q^{-1/2} dτ` after `τ = τmax − u²`.
fn upper_half_integral(p: &MomentumProfile, eta: f64, tol: f64) -> Result<f64> {
    integrate(|u| upper_integrand(p, u), 0.0, eta, tol)
}

/// Newton iteration for an increasing function on `[lo, hi]`, falling back to
/// bisection whenever a step leaves the current bracket.
fn safeguarded_newton<F, D>(f: F, df: D, lo: f64, hi: f64, guess: Option<f64>, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
    D: Fn(f64) -> f64,
{
    let (mut a, mut b) = (lo, hi);
    let mut x = guess.filter(|g| *g > lo && *g < hi).unwrap_or(0.5 * (lo + hi));
    for _ in 0..200 {
        let fx = f(x)?;
        if fx == 0.0 {
            return Ok(x);
        }
        if fx > 0.0 {
            b = x;
        } else {
            a = x;
        }
        let d = df(x);
        let mut next = x - fx / d;
        if !(next > a && next < b) || !next.is_finite() {
            next = 0.5 * (a + b);
        }
        if (next - x).abs() <= tol * (1.0 + x.abs()) || (b - a) <= tol * (1.0 + x.abs()) {
            return Ok(next);
        }
        x = next;
    }
    Err(Error::NumericalFailure(format!(
        "monotone solve did not converge in [{lo}, {hi}]"
    )))
}
