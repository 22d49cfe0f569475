use nalgebra::DVector;
use serde::Serialize;

use super::{Calculus, ScalarField};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Completed,
    ReachedLevel,
    LeftDomain,
}

#[derive(Debug, Clone, Serialize)]
pub struct Path {
    pub points: Vec<Vec<f64>>,
    pub arclength: Vec<f64>,
    /// Velocities along geodesics; empty for gradient flows.
    pub velocities: Vec<Vec<f64>>,
    pub termination: Termination,
}

impl Path {
    pub fn length(&self) -> f64 {
        *self.arclength.last().unwrap_or(&0.0)
    }

    pub fn end(&self) -> &[f64] {
        self.points.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

fn axpy(x: &[f64], h: f64, d: &[f64]) -> Vec<f64> {
    x.iter().zip(d).map(|(a, b)| a + h * b).collect()
}

fn rk4<F>(rhs: &F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let k1 = rhs(x)?;
    let k2 = rhs(&axpy(x, 0.5 * h, &k1))?;
    let k3 = rhs(&axpy(x, 0.5 * h, &k2))?;
    let k4 = rhs(&axpy(x, h, &k3))?;
    Ok((0..x.len())
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Geodesic from `p0` with initial velocity `v0`, integrated over parameter
/// length `length` in `steps` RK4 steps. Arclength is accumulated as
/// `|v0|_g · t`.
pub fn integrate_geodesic(calc: &Calculus, p0: &[f64], v0: &[f64], length: f64, steps: usize) -> Result<Path> {
    let n = calc.dim();
    let rhs = |y: &[f64]| -> Result<Vec<f64>> {
        let (x, v) = y.split_at(n);
        let gam = calc.christoffel(x)?;
        let vv = DVector::from_column_slice(v);
        let acc = gam.contract(&vv, &vv);
        let mut out = v.to_vec();
        out.extend(acc.iter().map(|a| -a));
        Ok(out)
    };
    let speed = calc.norm_vector(&DVector::from_column_slice(v0), p0)?;
    let h = length / steps as f64;
    let mut y: Vec<f64> = p0.iter().chain(v0).copied().collect();
    let mut points = vec![p0.to_vec()];
    let mut velocities = vec![v0.to_vec()];
    let mut arclength = vec![0.0];
    for s in 1..=steps {
        match rk4(&rhs, &y, h) {
            Ok(next) if calc.metric.contains(&next[..n]) => y = next,
            Ok(_) | Err(Error::Boundary { .. }) | Err(Error::Domain(_)) => {
                return Ok(Path {
                    points,
                    arclength,
                    velocities,
                    termination: Termination::LeftDomain,
                })
            }
            Err(e) => return Err(e),
        }
        points.push(y[..n].to_vec());
        velocities.push(y[n..].to_vec());
        arclength.push(speed * h * s as f64);
    }
    Ok(Path {
        points,
        arclength,
        velocities,
        termination: Termination::Completed,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct FlowStop {
    /// Stop when `f` reaches this value.
    pub level: Option<f64>,
    /// `+1` follows `∇f`, `−1` follows `−∇f`.
    pub direction: f64,
    pub max_length: f64,
    pub ds: f64,
}

/// Integral curve of `±∇f/|∇f|` (unit speed, so the parameter is arclength).
pub fn integrate_gradient_flow(calc: &Calculus, f: &dyn ScalarField, p0: &[f64], stop: FlowStop) -> Result<Path> {
    let rhs = |x: &[f64]| -> Result<Vec<f64>> {
        let grad = calc.gradient(f, x)?;
        let norm = calc.norm_vector(&grad, x)?;
        if !(norm > 0.0) {
            return Err(Error::NumericalFailure("gradient vanishes along the flow".into()));
        }
        Ok(grad.iter().map(|c| stop.direction * c / norm).collect())
    };
    let mut x = p0.to_vec();
    let mut s = 0.0;
    let mut points = vec![x.clone()];
    let mut arclength = vec![0.0];
    let mut fx = f.value(&x)?;
    let crossed = |a: f64, b: f64, level: f64| (a - level) * (b - level) <= 0.0 && a != level;
    while s < stop.max_length {
        let h = stop.ds.min(stop.max_length - s);
        let next = match rk4(&rhs, &x, h) {
            Ok(nx) if calc.metric.contains(&nx) => nx,
            Ok(_) | Err(Error::Boundary { .. }) | Err(Error::Domain(_)) => {
                return Ok(Path {
                    points,
                    arclength,
                    velocities: Vec::new(),
                    termination: Termination::LeftDomain,
                })
            }
            Err(e) => return Err(e),
        };
        let fn_ = f.value(&next)?;
        if let Some(level) = stop.level {
            if crossed(fx, fn_, level) {
                // secant on the step length, each trial a fresh RK4 step
                let (mut t0, mut f0, mut t1, mut f1) = (0.0, fx - level, h, fn_ - level);
                let mut best = (h, next);
                for _ in 0..60 {
                    let t = if f1 != f0 { t1 - f1 * (t1 - t0) / (f1 - f0) } else { 0.5 * (t0 + t1) };
                    let t = if t > t0.min(t1) && t < t0.max(t1) { t } else { 0.5 * (t0 + t1) };
                    let y = rk4(&rhs, &x, t)?;
                    let ft = f.value(&y)? - level;
                    best = (t, y);
                    if ft.abs() < 1e-14 * (1.0 + level.abs()) {
                        break;
                    }
                    if ft * f0 < 0.0 {
                        t1 = t;
                        f1 = ft;
                    } else {
                        t0 = t;
                        f0 = ft;
                    }
                    if (t1 - t0).abs() < 1e-15 {
                        break;
                    }
                }
                points.push(best.1);
                arclength.push(s + best.0);
                return Ok(Path {
                    points,
                    arclength,
                    velocities: Vec::new(),
                    termination: Termination::ReachedLevel,
                });
            }
        }
        x = next;
        fx = fn_;
        s += h;
        points.push(x.clone());
        arclength.push(s);
    }
    Ok(Path {
        points,
        arclength,
        velocities: Vec::new(),
        termination: Termination::Completed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Euclidean, FnScalar, RoundSphere};

    #[test]
    fn flat_geodesics_are_lines() {
        let e = Euclidean(2);
        let c = Calculus::new(&e);
        let path = integrate_geodesic(&c, &[0.0, 1.0], &[0.6, 0.8], 2.0, 20).unwrap();
        assert_eq!(path.termination, Termination::Completed);
        let end = path.end();
        assert!((end[0] - 1.2).abs() < 1e-14 && (end[1] - 2.6).abs() < 1e-14);
        assert!((path.length() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn sphere_geodesic_conserves_speed() {
        let s = RoundSphere { r2: 1.0 };
        let c = Calculus::new(&s);
        let path = integrate_geodesic(&c, &[0.1, 0.0], &[0.0, 1.0], 1.0, 200).unwrap();
        let y0 = c.norm_vector(&DVector::from_vec(vec![0.0, 1.0]), &[0.1, 0.0]).unwrap();
        for (x, v) in path.points.iter().zip(&path.velocities) {
            let y = c.norm_vector(&DVector::from_column_slice(v), x).unwrap();
            assert!((y - y0).abs() / y0 < 1e-8);
        }
    }

    #[test]
    fn gradient_flow_stops_at_level() {
        let e = Euclidean(2);
        let c = Calculus::new(&e);
        let f = FnScalar(|q: &[f64]| Ok(q[0] + q[1]));
        let stop = FlowStop {
            level: Some(1.0),
            direction: 1.0,
            max_length: 10.0,
            ds: 0.05,
        };
        let path = integrate_gradient_flow(&c, &f, &[0.0, 0.0], stop).unwrap();
        assert_eq!(path.termination, Termination::ReachedLevel);
        assert!((path.length() - 1.0 / 2f64.sqrt()).abs() < 1e-12);
    }
}
