//! Fourier tools on uniform periodic grids: derivatives, antiderivatives, trigonometric
//! interpolation and periodic cubic splines.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub struct Plan {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Plan {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Plan { n, forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n) }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Coefficients c_m with u_j = sum_m c_m e^{2 pi i m j / n}.
    pub fn forward(&self, data: &mut [Complex64]) {
        self.forward.process(data);
        let s = 1.0 / self.n as f64;
        data.iter_mut().for_each(|c| *c *= s);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.inverse.process(data);
    }
}

/// Signed mode number of FFT slot j.
pub fn mode(j: usize, n: usize) -> i64 {
    if j <= n / 2 {
        j as i64
    } else {
        j as i64 - n as i64
    }
}

/// Spectral derivative of order `order` of periodic complex samples over `period`.
/// The Nyquist mode of an even grid is dropped for odd orders.
pub fn derivative(plan: &Plan, values: &[Complex64], period: f64, order: u32) -> Vec<Complex64> {
    let n = values.len();
    let mut c = values.to_vec();
    plan.forward(&mut c);
    let k0 = 2.0 * PI / period;
    for (j, cj) in c.iter_mut().enumerate() {
        let m = mode(j, n);
        if n % 2 == 0 && j == n / 2 && order % 2 == 1 {
            *cj = Complex64::new(0.0, 0.0);
            continue;
        }
        let ik = Complex64::new(0.0, k0 * m as f64);
        *cj *= ik.powu(order);
    }
    plan.inverse(&mut c);
    c
}

/// Split periodic samples f into mean and the periodic antiderivative P of f - mean (zero mean).
pub fn antiderivative(values: &[f64], period: f64) -> (f64, Vec<f64>) {
    let n = values.len();
    let plan = Plan::new(n);
    let mut c: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    plan.forward(&mut c);
    let mean = c[0].re;
    let k0 = 2.0 * PI / period;
    for (j, cj) in c.iter_mut().enumerate() {
        let m = mode(j, n);
        if m == 0 || (n % 2 == 0 && j == n / 2) {
            *cj = Complex64::new(0.0, 0.0);
        } else {
            *cj /= Complex64::new(0.0, k0 * m as f64);
        }
    }
    plan.inverse(&mut c);
    (mean, c.iter().map(|c| c.re).collect())
}

/// Trigonometric interpolant of periodic samples, evaluable anywhere.
#[derive(Clone, Debug)]
pub struct TrigInterpolant {
    period: f64,
    /// (mode, coefficient) pairs; the Nyquist mode is split evenly between +-n/2.
    coeffs: Vec<(i64, Complex64)>,
}

impl TrigInterpolant {
    pub fn new(values: &[Complex64], period: f64) -> Self {
        let n = values.len();
        let plan = Plan::new(n);
        let mut c = values.to_vec();
        plan.forward(&mut c);
        let mut coeffs = Vec::with_capacity(n + 1);
        for (j, cj) in c.iter().enumerate() {
            if n % 2 == 0 && j == n / 2 {
                coeffs.push((j as i64, cj * 0.5));
                coeffs.push((-(j as i64), cj * 0.5));
            } else {
                coeffs.push((mode(j, n), *cj));
            }
        }
        TrigInterpolant { period, coeffs }
    }

    /// Drop coefficients below `rel` times the largest one; cheap evaluation of smooth data.
    pub fn truncated(mut self, rel: f64) -> Self {
        let big = self.coeffs.iter().map(|(_, c)| c.norm()).fold(0.0, f64::max);
        self.coeffs.retain(|(_, c)| c.norm() > rel * big);
        self
    }

    pub fn from_real(values: &[f64], period: f64) -> Self {
        let c: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        Self::new(&c, period)
    }

    pub fn eval(&self, x: f64) -> Complex64 {
        let w = 2.0 * PI * x / self.period;
        self.coeffs.iter().map(|(m, c)| c * Complex64::from_polar(1.0, w * *m as f64)).sum()
    }

    pub fn eval_re(&self, x: f64) -> f64 {
        self.eval(x).re
    }

    /// Derivative of the interpolant.
    pub fn eval_derivative(&self, x: f64) -> Complex64 {
        let k0 = 2.0 * PI / self.period;
        let w = k0 * x;
        self.coeffs
            .iter()
            .map(|(m, c)| c * Complex64::new(0.0, k0 * *m as f64) * Complex64::from_polar(1.0, w * *m as f64))
            .sum()
    }
}

/// Periodic cubic spline through (x_i, y_i) with x_i increasing inside one period.
#[derive(Clone, Debug)]
pub struct PeriodicCubic {
    period: f64,
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl PeriodicCubic {
    pub fn new(x: &[f64], y: &[f64], period: f64) -> Self {
        let n = x.len();
        assert!(n >= 3 && y.len() == n, "periodic cubic needs at least 3 points");
        let h: Vec<f64> = (0..n).map(|i| if i + 1 < n { x[i + 1] - x[i] } else { x[0] + period - x[n - 1] }).collect();
        // cyclic tridiagonal system for the second derivatives m_i
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        let mut c = vec![0.0; n];
        let mut r = vec![0.0; n];
        for i in 0..n {
            let hp = h[(i + n - 1) % n];
            let hi = h[i];
            a[i] = hp / 6.0;
            b[i] = (hp + hi) / 3.0;
            c[i] = hi / 6.0;
            r[i] = (y[(i + 1) % n] - y[i]) / hi - (y[i] - y[(i + n - 1) % n]) / hp;
        }
        let m = solve_cyclic(&a, &b, &c, &r);
        PeriodicCubic { period, x: x.to_vec(), y: y.to_vec(), m }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let x0 = self.x[0];
        let u = x0 + (t - x0).rem_euclid(self.period);
        let i = match self.x.partition_point(|&v| v <= u) {
            0 => n - 1,
            k => k - 1,
        };
        let (xl, xr) = if i + 1 < n { (self.x[i], self.x[i + 1]) } else { (self.x[n - 1], x0 + self.period) };
        let (yl, yr) = (self.y[i], self.y[(i + 1) % n]);
        let (ml, mr) = (self.m[i], self.m[(i + 1) % n]);
        let h = xr - xl;
        let a = (xr - u) / h;
        let b = (u - xl) / h;
        a * yl + b * yr + ((a * a * a - a) * ml + (b * b * b - b) * mr) * h * h / 6.0
    }
}

/// Sherman-Morrison solution of a cyclic tridiagonal system.
fn solve_cyclic(a: &[f64], b: &[f64], c: &[f64], r: &[f64]) -> Vec<f64> {
    let n = b.len();
    let alpha = c[n - 1];
    let beta = a[0];
    let gamma = -b[0];
    let mut bb = b.to_vec();
    bb[0] = b[0] - gamma;
    bb[n - 1] = b[n - 1] - alpha * beta / gamma;
    let x = solve_tridiagonal(a, &bb, c, r);
    let mut u = vec![0.0; n];
    u[0] = gamma;
    u[n - 1] = alpha;
    let z = solve_tridiagonal(a, &bb, c, &u);
    let fact = (x[0] + beta * x[n - 1] / gamma) / (1.0 + z[0] + beta * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect()
}

fn solve_tridiagonal(a: &[f64], b: &[f64], c: &[f64], r: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut dp = vec![0.0; n];
    cp[0] = c[0] / b[0];
    dp[0] = r[0] / b[0];
    for i in 1..n {
        let den = b[i] - a[i] * cp[i - 1];
        cp[i] = c[i] / den;
        dp[i] = (r[i] - a[i] * dp[i - 1]) / den;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = dp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = dp[i] - cp[i] * x[i + 1];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, l: f64) -> Vec<f64> {
        (0..n).map(|i| l * i as f64 / n as f64).collect()
    }

    #[test]
    fn derivatives_of_trig_functions() {
        let l = 3.0;
        let k = 2.0 * PI / l;
        let xs = grid(32, l);
        let plan = Plan::new(32);
        let u: Vec<Complex64> = xs.iter().map(|x| Complex64::new((2.0 * k * x).sin(), 0.0)).collect();
        let d1 = derivative(&plan, &u, l, 1);
        let d2 = derivative(&plan, &u, l, 2);
        for (i, x) in xs.iter().enumerate() {
            assert!((d1[i].re - 2.0 * k * (2.0 * k * x).cos()).abs() < 1e-12);
            assert!((d2[i].re + 4.0 * k * k * (2.0 * k * x).sin()).abs() < 1e-11);
        }
    }

    #[test]
    fn antiderivative_recovers_primitive() {
        let l = 2.0 * PI;
        let xs = grid(64, l);
        let f: Vec<f64> = xs.iter().map(|x| 1.5 + x.cos() + 0.2 * (3.0 * x).sin()).collect();
        let (mean, p) = antiderivative(&f, l);
        assert!((mean - 1.5).abs() < 1e-14);
        for (i, x) in xs.iter().enumerate() {
            let want = x.sin() - 0.2 / 3.0 * (3.0 * x).cos();
            assert!((p[i] - want).abs() < 1e-13);
        }
    }

    #[test]
    fn trig_interpolant_is_exact_for_band_limited() {
        let l = 5.0;
        let k = 2.0 * PI / l;
        let xs = grid(16, l);
        let f: Vec<f64> = xs.iter().map(|x| (k * x).cos() + 0.3 * (3.0 * k * x).sin()).collect();
        let t = TrigInterpolant::from_real(&f, l);
        for x in [0.123, 1.7, 4.9, -2.0] {
            assert!((t.eval_re(x) - ((k * x).cos() + 0.3 * (3.0 * k * x).sin())).abs() < 1e-13);
            let d = t.eval_derivative(x).re;
            assert!((d - (-k * (k * x).sin() + 0.9 * k * (3.0 * k * x).cos())).abs() < 1e-12);
        }
    }

    #[test]
    fn periodic_cubic_converges_fourth_order() {
        let l = 2.0 * PI;
        let err = |n: usize| {
            let xs: Vec<f64> = (0..n).map(|i| l * (i as f64 + 0.3 * (i % 2) as f64) / n as f64).collect();
            let ys: Vec<f64> = xs.iter().map(|x| x.sin().exp()).collect();
            let s = PeriodicCubic::new(&xs, &ys, l);
            (0..997).map(|i| {
                let x = l * i as f64 / 997.0 + 0.01;
                (s.eval(x) - x.sin().exp()).abs()
            })
            .fold(0.0f64, f64::max)
        };
        let (e1, e2) = (err(64), err(128));
        assert!(e1 < 1e-4);
        assert!((e1 / e2).log2() > 3.5, "{e1} {e2}");
        let xs = grid(8, l);
        let ys: Vec<f64> = xs.iter().map(|x| x.cos()).collect();
        let s = PeriodicCubic::new(&xs, &ys, l);
        for (x, y) in xs.iter().zip(&ys) {
            assert!((s.eval(*x) - y).abs() < 1e-14);
            assert!((s.eval(*x + l) - y).abs() < 1e-13);
        }
    }
}
