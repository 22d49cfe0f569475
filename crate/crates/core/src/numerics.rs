//! Small numerical kernels shared by the reparametrization, surface and
//! extraction code.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for (j, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let f1 = f(c - h * x);
        let f2 = f(c + h * x);
        kronrod += w * (f1 + f2);
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Adaptive Gauss–Kronrod (7/15) quadrature on `[a, b]` with a global
/// absolute/relative tolerance.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let (v0, e0) = gk15(&f, a, b);
    let mut panels = vec![(a, b, v0, e0)];
    for _ in 0..2000 {
        let total: f64 = panels.iter().map(|p| p.2).sum();
        let err: f64 = panels.iter().map(|p| p.3).sum();
        if !total.is_finite() {
            return Err(Error::NumericalFailure(format!(
                "non-finite integrand on [{a}, {b}]"
            )));
        }
        if err <= tol.max(tol * total.abs()) {
            return Ok(total);
        }
        let (idx, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("nonempty");
        let (lo, hi, _, _) = panels.swap_remove(idx);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&f, lo, mid);
        let (v2, e2) = gk15(&f, mid, hi);
        panels.push((lo, mid, v1, e1));
        panels.push((mid, hi, v2, e2));
    }
    let err: f64 = panels.iter().map(|p| p.3).sum();
    Err(Error::NumericalFailure(format!(
        "quadrature on [{a}, {b}] did not converge: error estimate {err:.3e}, tolerance {tol:.1e}"
    )))
}

/// Value at 0 of the interpolating polynomial through `(x_i, y_i)`.
pub fn neville_at_zero(xs: &[f64], ys: &[f64]) -> f64 {
    let mut p = ys.to_vec();
    let n = xs.len();
    for m in 1..n {
        for i in 0..n - m {
            p[i] = (xs[i + m] * p[i] - xs[i] * p[i + 1]) / (xs[i + m] - xs[i]);
        }
    }
    p[0]
}

/// Limit as `s → 0` of a function with an expansion in even powers of `s`,
/// from samples at the given `s` values.
pub fn richardson_even(ss: &[f64], ys: &[f64]) -> f64 {
    let u: Vec<f64> = ss.iter().map(|s| s * s).collect();
    neville_at_zero(&u, ys)
}

/// Monotone piecewise-cubic Hermite interpolant (Fritsch–Carlson slopes).
#[derive(Debug, Clone)]
pub struct Pchip {
    xs: Vec<f64>,
    ys: Vec<f64>,
    ds: Vec<f64>,
}

impl Pchip {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        let n = xs.len();
        if n < 2 || ys.len() != n {
            return Err(Error::NumericalFailure("pchip needs >= 2 matching nodes".into()));
        }
        if xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::NumericalFailure("pchip nodes not increasing".into()));
        }
        let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
        let mut ds = vec![0.0; n];
        for i in 1..n - 1 {
            if delta[i - 1] * delta[i] > 0.0 {
                let w1 = 2.0 * h[i] + h[i - 1];
                let w2 = h[i] + 2.0 * h[i - 1];
                ds[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
            }
        }
        ds[0] = end_slope(h[0], *h.get(1).unwrap_or(&h[0]), delta[0], *delta.get(1).unwrap_or(&delta[0]));
        ds[n - 1] = end_slope(
            h[n - 2],
            if n > 2 { h[n - 3] } else { h[n - 2] },
            delta[n - 2],
            if n > 2 { delta[n - 3] } else { delta[n - 2] },
        );
        Ok(Self { xs, ys, ds })
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.xs[0], *self.xs.last().expect("nonempty"))
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.xs.len();
        let i = match self.xs.partition_point(|&v| v <= x) {
            0 => 0,
            k if k >= n => n - 2,
            k => k - 1,
        };
        let h = self.xs[i + 1] - self.xs[i];
        let t = (x - self.xs[i]) / h;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.ys[i] + h10 * h * self.ds[i] + h01 * self.ys[i + 1] + h11 * h * self.ds[i + 1]
    }
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if d.signum() != d0.signum() {
        0.0
    } else if d0.signum() != d1.signum() && d.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        d
    }
}

/// Tensor-product Chebyshev interpolant on a box in ℝ², built from values at
/// first-kind Chebyshev nodes.
#[derive(Debug, Clone)]
pub struct Chebyshev2 {
    lo: [f64; 2],
    hi: [f64; 2],
    coeffs: DMatrix<f64>,
}

impl Chebyshev2 {
    /// Node coordinates along one axis of `[lo, hi]`, `n` of them.
    pub fn nodes(lo: f64, hi: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|j| {
                let t = (std::f64::consts::PI * (j as f64 + 0.5) / n as f64).cos();
                0.5 * (lo + hi) + 0.5 * (hi - lo) * t
            })
            .collect()
    }

    /// `values[(i, j)]` is the function at `(nodes_x[i], nodes_y[j])`.
    pub fn fit(lo: [f64; 2], hi: [f64; 2], values: &DMatrix<f64>) -> Self {
        let (nx, ny) = values.shape();
        let cx = dct_matrix(nx);
        let cy = dct_matrix(ny);
        let coeffs = &cx * values * cy.transpose();
        Self { lo, hi, coeffs }
    }

    fn local(&self, p: [f64; 2]) -> [f64; 2] {
        [
            (2.0 * p[0] - self.lo[0] - self.hi[0]) / (self.hi[0] - self.lo[0]),
            (2.0 * p[1] - self.lo[1] - self.hi[1]) / (self.hi[1] - self.lo[1]),
        ]
    }

    pub fn eval(&self, p: [f64; 2]) -> f64 {
        let [u, v] = self.local(p);
        let tx = cheb_values(u, self.coeffs.nrows());
        let ty = cheb_values(v, self.coeffs.ncols());
        (tx.transpose() * &self.coeffs * ty)[(0, 0)]
    }

    pub fn gradient(&self, p: [f64; 2]) -> [f64; 2] {
        let [u, v] = self.local(p);
        let (tx, dtx) = cheb_values_and_derivs(u, self.coeffs.nrows());
        let (ty, dty) = cheb_values_and_derivs(v, self.coeffs.ncols());
        let gx = (dtx.transpose() * &self.coeffs * &ty)[(0, 0)] * 2.0 / (self.hi[0] - self.lo[0]);
        let gy = (tx.transpose() * &self.coeffs * dty)[(0, 0)] * 2.0 / (self.hi[1] - self.lo[1]);
        [gx, gy]
    }
}

fn dct_matrix(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |k, j| {
        let theta = std::f64::consts::PI * (j as f64 + 0.5) / n as f64;
        let scale = if k == 0 { 1.0 } else { 2.0 };
        scale / n as f64 * (k as f64 * theta).cos()
    })
}

fn cheb_values(x: f64, n: usize) -> DVector<f64> {
    let mut t = DVector::zeros(n);
    if n > 0 {
        t[0] = 1.0;
    }
    if n > 1 {
        t[1] = x;
    }
    for k in 2..n {
        t[k] = 2.0 * x * t[k - 1] - t[k - 2];
    }
    t
}

fn cheb_values_and_derivs(x: f64, n: usize) -> (DVector<f64>, DVector<f64>) {
    let t = cheb_values(x, n);
    let mut d = DVector::zeros(n);
    if n > 1 {
        d[1] = 1.0;
    }
    for k in 2..n {
        d[k] = 2.0 * t[k - 1] + 2.0 * x * d[k - 1] - d[k - 2];
    }
    (t, d)
}

/// Least-squares solve `A c ≈ b` via SVD.
pub fn least_squares(a: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>> {
    let svd = a.svd(true, true);
    svd.solve(&b, 1e-14)
        .map_err(|e| Error::NumericalFailure(format!("least squares: {e}")))
}

/// Evaluates `Σ c_k x^k` and its derivative.
pub fn poly_eval(coeffs: &[f64], x: f64) -> (f64, f64) {
    let mut v = 0.0;
    let mut d = 0.0;
    for &c in coeffs.iter().rev() {
        d = d * x + v;
        v = v * x + c;
    }
    (v, d)
}

/// Second derivative of `Σ c_k x^k`.
pub fn poly_second_derivative(coeffs: &[f64], x: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .skip(2)
        .rev()
        .fold(0.0, |acc, (k, &c)| acc * x + c * (k * (k - 1)) as f64)
}

/// Least-squares polynomial fit of degree `deg` in the variable `x − x0`.
pub fn poly_fit(xs: &[f64], ys: &[f64], deg: usize, x0: f64) -> Result<Vec<f64>> {
    let a = DMatrix::from_fn(xs.len(), deg + 1, |i, k| (xs[i] - x0).powi(k as i32));
    let b = DVector::from_column_slice(ys);
    Ok(least_squares(a, b)?.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_kronrod_matches_closed_forms() {
        let v = integrate(|x| x.sin(), 0.0, std::f64::consts::PI, 1e-13).unwrap();
        assert!((v - 2.0).abs() < 1e-13);
        let w = integrate(|x| 1.0 / (2.5 + 0.5 * (2.0 * std::f64::consts::PI * x).cos()), 0.0, 1.0, 1e-14)
            .unwrap();
        assert!((w - 1.0 / 6f64.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn gauss_kronrod_reports_divergence() {
        let r = integrate(|x| 1.0 / x, 0.0, 1.0, 1e-12);
        assert!(matches!(r, Err(Error::NumericalFailure(_))));
    }

    #[test]
    fn richardson_removes_even_terms() {
        let f = |s: f64| 2.0 * (2.0 * s).cos();
        let ss = [0.2, 0.1, 0.05];
        let ys: Vec<f64> = ss.iter().map(|&s| f(s)).collect();
        // residual is the s⁶ term: (64/360)·s₁²s₂²s₃² ≈ 1.8e-7
        assert!((richardson_even(&ss, &ys) - 2.0).abs() < 3e-7);
    }

    #[test]
    fn pchip_is_monotone_and_interpolates() {
        let xs: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x.powi(3)).collect();
        let p = Pchip::new(xs.clone(), ys.clone()).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            assert!((p.eval(*x) - y).abs() < 1e-15);
        }
        let mut prev = p.eval(0.0);
        for i in 1..1000 {
            let v = p.eval(i as f64 / 999.0);
            assert!(v >= prev - 1e-15);
            prev = v;
        }
    }

    #[test]
    fn chebyshev_reproduces_smooth_functions() {
        let n = 16;
        let lo = [-1.0, 0.0];
        let hi = [1.0, 2.0];
        let xs = Chebyshev2::nodes(lo[0], hi[0], n);
        let ys = Chebyshev2::nodes(lo[1], hi[1], n);
        let f = |x: f64, y: f64| 4.0 / (1.0 + x * x + y * y).powi(2);
        let vals = DMatrix::from_fn(n, n, |i, j| f(xs[i], ys[j]));
        let c = Chebyshev2::fit(lo, hi, &vals);
        let p = [0.3, 1.1];
        assert!((c.eval(p) - f(p[0], p[1])).abs() < 1e-5);
        let h = 1e-6;
        let fd = (f(p[0] + h, p[1]) - f(p[0] - h, p[1])) / (2.0 * h);
        assert!((c.gradient(p)[0] - fd).abs() < 1e-3);
    }

    #[test]
    fn polynomial_helpers() {
        let c = [1.0, -2.0, 3.0, 0.5];
        let (v, d) = poly_eval(&c, 2.0);
        assert_eq!(v, 1.0 - 4.0 + 12.0 + 4.0);
        assert_eq!(d, -2.0 + 12.0 + 6.0);
        assert_eq!(poly_second_derivative(&c, 2.0), 6.0 + 6.0);
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| poly_eval(&c, x - 1.0).0).collect();
        let fit = poly_fit(&xs, &ys, 3, 1.0).unwrap();
        for (a, b) in fit.iter().zip(c) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
