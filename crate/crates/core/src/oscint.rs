//! Oscillatory integrals of the form int e^{i M^{1/2} Q(s)} f(s) ds: a panel quadrature
//! oracle, the stationary-phase expansion and overlaps of WKB modes.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::TrigInterpolant;
use crate::wkb::WkbField;

/// Largest phase change M^{1/2} max|Q'| h allowed across one panel.
pub const PANEL_PHASE: f64 = 0.2;

type RealFn = Box<dyn Fn(f64) -> f64 + Send + Sync>;
type ComplexFn = Box<dyn Fn(f64) -> Complex64 + Send + Sync>;

pub struct OscillatoryIntegrand {
    pub q: RealFn,
    pub dq: RealFn,
    pub d2q: RealFn,
    pub f: ComplexFn,
    pub mass: f64,
    pub a: f64,
    pub b: f64,
}

impl OscillatoryIntegrand {
    pub fn new(
        q: impl Fn(f64) -> f64 + Send + Sync + 'static,
        dq: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2q: impl Fn(f64) -> f64 + Send + Sync + 'static,
        f: impl Fn(f64) -> Complex64 + Send + Sync + 'static,
        mass: f64,
        interval: (f64, f64),
    ) -> Self {
        OscillatoryIntegrand { q: Box::new(q), dq: Box::new(dq), d2q: Box::new(d2q), f: Box::new(f), mass, a: interval.0, b: interval.1 }
    }

    pub fn omega(&self) -> f64 {
        self.mass.sqrt()
    }

    fn max_slope(&self) -> f64 {
        let n = 4096;
        (0..=n)
            .map(|i| (self.dq)(self.a + (self.b - self.a) * i as f64 / n as f64).abs())
            .fold(0.0, f64::max)
    }

    /// Panels needed by the resolution rule (at least 64).
    pub fn required_panels(&self) -> usize {
        let need = self.omega() * self.max_slope() * 1.25 * (self.b - self.a) / PANEL_PHASE;
        (need.ceil() as usize).max(64)
    }

    fn integrand(&self, s: f64) -> Complex64 {
        (self.f)(s) * Complex64::from_polar(1.0, self.omega() * (self.q)(s))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quadrature {
    pub value: Complex64,
    /// Sum over panels of |Kronrod - Gauss|.
    pub error: f64,
    pub panels: usize,
}

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
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [0.129_484_966_168_869_7, 0.279_705_391_489_276_7, 0.381_830_050_505_118_9, 0.417_959_183_673_469_4];

fn gk15(g: &(dyn Fn(f64) -> Complex64 + Sync), a: f64, b: f64) -> (Complex64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = g(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let (f1, f2) = (g(c - h * XGK[j]), g(c + h * XGK[j]));
        kron += (f1 + f2) * WGK[j];
        if j % 2 == 1 {
            gauss += (f1 + f2) * WG[j / 2];
        }
    }
    (kron * h, ((kron - gauss) * h).norm())
}

/// Gauss-Kronrod 7-15 panels sized to the oscillation; `panels` overrides the automatic count
/// but must satisfy the resolution rule.
pub fn oscillatory_quadrature(it: &OscillatoryIntegrand, panels: Option<usize>) -> Result<Quadrature> {
    let required = it.required_panels();
    let n = match panels {
        Some(p) if p < required => return Err(Error::Resolution { required, given: p }),
        Some(p) => p,
        None => required,
    };
    let h = (it.b - it.a) / n as f64;
    let g = |s: f64| it.integrand(s);
    let parts: Vec<(Complex64, f64)> =
        (0..n).into_par_iter().map(|i| gk15(&g, it.a + i as f64 * h, it.a + (i + 1) as f64 * h)).collect();
    // sequential reduction keeps the sum independent of the thread count
    let mut value = Complex64::new(0.0, 0.0);
    let mut error = 0.0;
    for (v, e) in parts {
        value += v;
        error += e;
    }
    Ok(Quadrature { value, error, panels: n })
}

/// Simple zeros of Q' inside the interval, located by sign changes and bisection.
pub fn critical_points(it: &OscillatoryIntegrand) -> Vec<f64> {
    let n = 8192;
    let xs: Vec<f64> = (0..=n).map(|i| it.a + (it.b - it.a) * i as f64 / n as f64).collect();
    let ds: Vec<f64> = xs.iter().map(|&x| (it.dq)(x)).collect();
    let mut out = Vec::new();
    if ds.iter().all(|d| d.abs() <= 1e-12) {
        // constant phase: nothing oscillates
        return out;
    }
    for i in 0..n {
        if ds[i] == 0.0 {
            if i > 0 {
                out.push(xs[i]);
            }
            continue;
        }
        if ds[i] * ds[i + 1] < 0.0 {
            let (mut lo, mut hi) = (xs[i], xs[i + 1]);
            let s_lo = ds[i].signum();
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if (it.dq)(mid).signum() == s_lo {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo <= 1e-15 * (1.0 + mid.abs()) {
                    break;
                }
            }
            out.push(0.5 * (lo + hi));
        }
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StationaryPhase {
    pub value: Complex64,
    pub points: Vec<f64>,
    /// Size of the first omitted term, |prefactor| (2 M^{1/2} |Q''|)^{-(order+1)} summed over points.
    pub error_model: f64,
}

/// f~(t) = f(s(t)) s'(t) for the local variable t = sgn(s) (2 (Q(sigma+s) - Q(sigma)) / Q''(sigma))^{1/2}.
fn tilde_f(it: &OscillatoryIntegrand, sigma: f64, q2: f64, t: f64) -> Complex64 {
    if t == 0.0 {
        return (it.f)(sigma);
    }
    let q0 = (it.q)(sigma);
    let map = |s: f64| -> f64 {
        let r = (2.0 * ((it.q)(sigma + s) - q0) / q2).max(0.0).sqrt();
        if s < 0.0 {
            -r
        } else {
            r
        }
    };
    // Newton on map(s) = t; dt/ds = Q'(sigma + s) / (Q'' t)
    let mut s = t;
    for _ in 0..60 {
        let m = map(s);
        let dm = (it.dq)(sigma + s) / (q2 * if m == 0.0 { t } else { m });
        let step = (m - t) / dm;
        s -= step;
        if step.abs() <= 1e-15 * (1.0 + s.abs()) {
            break;
        }
    }
    let m = map(s);
    let dsdt = q2 * m / (it.dq)(sigma + s);
    (it.f)(sigma + s) * dsdt
}

/// Even derivatives of f~ at 0 by central differences.
fn tilde_derivative(it: &OscillatoryIntegrand, sigma: f64, q2: f64, order: usize, h: f64) -> Complex64 {
    let v = |j: i32| tilde_f(it, sigma, q2, j as f64 * h);
    match order {
        0 => v(0),
        2 => (-v(2) + v(1) * 16.0 - v(0) * 30.0 + v(-1) * 16.0 - v(-2)) / (12.0 * h * h),
        4 => (-v(3) + v(2) * 12.0 - v(1) * 39.0 + v(0) * 56.0 - v(-1) * 39.0 + v(-2) * 12.0 - v(-3)) / (6.0 * h.powi(4)),
        _ => unreachable!("derivatives up to fourth order"),
    }
}

/// Stationary-phase value to the given order (0, 1 or 2). Uses the term
/// (i / (2 M^{1/2} Q''))^k / k! * f~^{(2k)}(0) at each simple critical point.
pub fn stationary_phase_expand(it: &OscillatoryIntegrand, order: usize) -> Result<StationaryPhase> {
    if order > 2 {
        return Err(Error::Unsupported("stationary phase beyond second order".into()));
    }
    let omega = it.omega();
    let points = critical_points(it);
    let scale = (it.b - it.a).abs().max(1.0);
    let mut curv = Vec::with_capacity(points.len());
    for &s in &points {
        let q2 = (it.d2q)(s);
        if q2.abs() < 1e-8 {
            return Err(Error::DegenerateCriticalPoint(s));
        }
        curv.push(q2);
    }
    for i in 1..points.len() {
        let w = 10.0 / (omega * curv[i].abs().min(curv[i - 1].abs())).sqrt();
        if points[i] - points[i - 1] <= w {
            return Err(Error::OverlappingCriticalPoints(points[i - 1], points[i]));
        }
    }
    let mut value = Complex64::new(0.0, 0.0);
    let mut error_model = 0.0;
    for (&s, &q2) in points.iter().zip(&curv) {
        let pre = Complex64::from_polar(
            (2.0 * PI).sqrt() * omega.powf(-0.5) * q2.abs().powf(-0.5),
            PI * q2.signum() / 4.0 + omega * (it.q)(s),
        );
        let h = 0.05 * scale.min(1.0) / q2.abs().sqrt().max(1.0);
        let mut sum = Complex64::new(0.0, 0.0);
        let mut fact = 1.0;
        for k in 0..=order {
            if k > 0 {
                fact *= k as f64;
            }
            let c = Complex64::new(0.0, 1.0 / (2.0 * omega * q2)).powu(k as u32) / fact;
            sum += c * tilde_derivative(it, s, q2, 2 * k, h);
        }
        value += pre * sum;
        error_model += pre.norm() * (2.0 * omega * q2.abs()).powi(-(order as i32 + 1));
    }
    Ok(StationaryPhase { value, points, error_model })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Overlap {
    pub value: Complex64,
    pub error: f64,
    /// Zeros of theta_B' - theta_A'; empty means the phase has no critical point.
    pub critical_points: Vec<f64>,
    pub min_phase_slope: f64,
}

struct FieldInterp {
    slope: f64,
    x_surface: f64,
    theta: TrigInterpolant,
    p: TrigInterpolant,
    amp: Vec<TrigInterpolant>,
}

fn interp(field: &WkbField) -> Result<FieldInterp> {
    if field.loops != 1 {
        return Err(Error::Unsupported("mode overlap needs single-sheet fields".into()));
    }
    let n = field.n;
    let slope = field.action / field.length;
    let periodic: Vec<f64> = (0..n).map(|i| field.theta[i] - slope * (field.grid[i] - field.x_surface)).collect();
    let tol = 1e-15;
    let amp = (0..field.psi[0].len())
        .map(|c| {
            let v: Vec<Complex64> = (0..n).map(|i| field.psi[i][c] * field.rho[i].sqrt()).collect();
            TrigInterpolant::new(&v, field.length).truncated(tol)
        })
        .collect();
    Ok(FieldInterp {
        slope,
        x_surface: field.x_surface,
        theta: TrigInterpolant::from_real(&periodic, field.length).truncated(tol),
        p: TrigInterpolant::from_real(&field.p, field.length).truncated(tol),
        amp,
    })
}

/// Cross term int g e^{i M^{1/2} (theta_B - theta_A)} (psi_A^* . psi_B) (rho_A rho_B)^{1/2} dX over the torus.
pub fn mode_overlap(
    a: &WkbField,
    b: &WkbField,
    g: impl Fn(f64) -> f64 + Send + Sync + 'static,
    mass: f64,
) -> Result<Overlap> {
    if a.n != b.n || (a.length - b.length).abs() > 1e-12 * a.length {
        return Err(Error::GridMismatch(format!("fields have n = {} and n = {}", a.n, b.n)));
    }
    let (fa, fb) = (interp(a)?, interp(b)?);
    let fa = std::sync::Arc::new(fa);
    let fb = std::sync::Arc::new(fb);
    let length = a.length;
    let theta = |f: &FieldInterp, x: f64| f.slope * (x - f.x_surface) + f.theta.eval_re(x);
    let (qa, qb) = (fa.clone(), fb.clone());
    let q = move |x: f64| theta(&qb, x) - theta(&qa, x);
    let (da, db) = (fa.clone(), fb.clone());
    let dq = move |x: f64| db.p.eval_re(x) - da.p.eval_re(x);
    let (ca, cb) = (fa.clone(), fb.clone());
    let d2q = move |x: f64| cb.p.eval_derivative(x).re - ca.p.eval_derivative(x).re;
    let (aa, ab) = (fa.clone(), fb.clone());
    let f = move |x: f64| {
        let s: Complex64 = aa.amp.iter().zip(&ab.amp).map(|(u, v)| u.eval(x).conj() * v.eval(x)).sum();
        s * g(x)
    };
    let it = OscillatoryIntegrand::new(q, dq, d2q, f, mass, (0.0, length));
    let quad = oscillatory_quadrature(&it, None)?;
    let cps = critical_points(&it);
    let n = 2048;
    let min_slope = (0..n).map(|i| (it.dq)(length * i as f64 / n as f64).abs()).fold(f64::INFINITY, f64::min);
    Ok(Overlap { value: quad.value, error: quad.error, critical_points: cps, min_phase_slope: min_slope })
}

/// Smooth bump supported on (c - w, c + w), equal to 1 at c.
pub fn bump(x: f64, c: f64, w: f64) -> f64 {
    let u = (x - c) / w;
    if u.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - u * u)).exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelSpec, ModelSystem};

    fn gaussian_fresnel(mass: f64) -> OscillatoryIntegrand {
        OscillatoryIntegrand::new(
            |s| 0.5 * s * s,
            |s| s,
            |_| 1.0,
            |s| Complex64::new((-0.5 * s * s).exp(), 0.0),
            mass,
            (-8.0, 8.0),
        )
    }

    #[test]
    fn gaussian_fresnel_closed_form() {
        for mass in [1.0, 100.0, 1e4] {
            let q = oscillatory_quadrature(&gaussian_fresnel(mass), None).unwrap();
            let want = (Complex64::new(2.0 * PI, 0.0) / Complex64::new(1.0, -mass.sqrt())).sqrt();
            assert!((q.value - want).norm() < 1e-8, "{mass}: {} vs {want}", q.value);
            assert!(q.error < 1e-6);
        }
    }

    #[test]
    fn zero_amplitude_and_resolution_rule() {
        let it = OscillatoryIntegrand::new(|s| s, |_| 1.0, |_| 0.0, |_| Complex64::new(0.0, 0.0), 100.0, (0.0, 1.0));
        assert_eq!(oscillatory_quadrature(&it, None).unwrap().value, Complex64::new(0.0, 0.0));
        let g = gaussian_fresnel(1e4);
        assert!(matches!(oscillatory_quadrature(&g, Some(10)), Err(Error::Resolution { .. })));
    }

    #[test]
    fn halving_panels_stays_within_error_estimate() {
        let g = gaussian_fresnel(400.0);
        let a = oscillatory_quadrature(&g, None).unwrap();
        let b = oscillatory_quadrature(&g, Some(2 * a.panels)).unwrap();
        assert!((a.value - b.value).norm() <= a.error + 1e-15);
    }

    #[test]
    fn no_critical_point_decays() {
        let val = |mass: f64| {
            let it = OscillatoryIntegrand::new(|s| s, |_| 1.0, |_| 0.0, |s| Complex64::new(bump(s, 0.0, 1.0), 0.0), mass, (-1.0, 1.0));
            oscillatory_quadrature(&it, None).unwrap().value.norm()
        };
        let c = val(1e2) * 1e2;
        for mass in [1e4, 1e6] {
            assert!(val(mass) <= c / mass + 1e-14);
        }
        let it = OscillatoryIntegrand::new(|s| s, |_| 1.0, |_| 0.0, |_| Complex64::new(1.0, 0.0), 100.0, (-1.0, 1.0));
        let sp = stationary_phase_expand(&it, 2).unwrap();
        assert!(sp.points.is_empty());
        assert_eq!(sp.value, Complex64::new(0.0, 0.0));
    }

    #[test]
    fn order_zero_quadratic_phase() {
        let mass: f64 = 256.0;
        let it = OscillatoryIntegrand::new(|s| 0.5 * s * s, |s| s, |_| 1.0, |_| Complex64::new(1.0, 0.0), mass, (-1.0, 1.0));
        let sp = stationary_phase_expand(&it, 0).unwrap();
        let want = Complex64::from_polar((2.0 * PI).sqrt() * mass.powf(-0.25), PI / 4.0);
        assert!((sp.value - want).norm() < 1e-12);
        assert_eq!(sp.points, vec![0.0]);
    }

    #[test]
    fn conjugation_symmetry_and_linearity() {
        let mk = |sign: f64, scale: f64| {
            OscillatoryIntegrand::new(
                move |s| sign * (s.sin() + 0.3 * s),
                move |s| sign * (s.cos() + 0.3),
                move |s| -sign * s.sin(),
                move |s| Complex64::new(scale * bump(s, 0.5, 2.0), 0.0),
                300.0,
                (-2.0, 3.0),
            )
        };
        let a = oscillatory_quadrature(&mk(1.0, 1.0), None).unwrap().value;
        let b = oscillatory_quadrature(&mk(-1.0, 1.0), None).unwrap().value;
        let c = oscillatory_quadrature(&mk(1.0, 2.5), None).unwrap().value;
        assert!((a - b.conj()).norm() < 1e-12);
        assert!((c - a * 2.5).norm() < 1e-12);
    }

    #[test]
    fn higher_orders_improve_non_quadratic_phase() {
        // Q = s^2/2 + s^4/24 with a Gaussian amplitude: orders 1 and 2 shrink the remainder
        let mass: f64 = 1e4;
        let it = OscillatoryIntegrand::new(
            |s| 0.5 * s * s + s.powi(4) / 24.0,
            |s| s + s.powi(3) / 6.0,
            |s| 1.0 + 0.5 * s * s,
            |s| Complex64::new((-0.5 * s * s).exp() * (1.0 + 0.5 * s), 0.0),
            mass,
            (-10.0, 10.0),
        );
        let exact = oscillatory_quadrature(&it, None).unwrap().value;
        let e: Vec<f64> = (0..=2).map(|k| (stationary_phase_expand(&it, k).unwrap().value - exact).norm()).collect();
        assert!(e[1] < 0.1 * e[0], "{e:?}");
        assert!(e[2] < e[1], "{e:?}");
    }

    #[test]
    fn degenerate_and_overlapping_points_are_refused() {
        let it = OscillatoryIntegrand::new(|s| s * s * s, |s| 3.0 * s * s - 1e-12, |s| 6.0 * s, |_| Complex64::new(1.0, 0.0), 100.0, (-1.0, 1.0));
        assert!(matches!(
            stationary_phase_expand(&it, 0),
            Err(Error::DegenerateCriticalPoint(_)) | Err(Error::OverlappingCriticalPoints(..))
        ));
        let it = OscillatoryIntegrand::new(
            |s| s * s * s / 3.0 - 1e-4 * s,
            |s| s * s - 1e-4,
            |s| 2.0 * s,
            |_| Complex64::new(1.0, 0.0),
            100.0,
            (-1.0, 1.0),
        );
        assert!(matches!(stationary_phase_expand(&it, 0), Err(Error::OverlappingCriticalPoints(..))));
    }

    fn scalar(a: f64) -> ModelSystem {
        ModelSystem::build(&ModelSpec::new("scalar_cos", 1, 2.0 * PI).with_param("a", a)).unwrap()
    }

    #[test]
    fn self_overlap_is_observable() {
        let m = scalar(0.3);
        let f = WkbField::bo(&m, 1.0, 64.0, 64, 0.0).unwrap();
        let o = mode_overlap(&f, &f, |x| x.cos(), 64.0).unwrap();
        let rho = f.density();
        let want: f64 = rho.iter().zip(&f.grid).map(|(r, x)| r * x.cos()).sum::<f64>() * 2.0 * PI / 64.0;
        assert!((o.value.re - want).abs() < 1e-10);
        assert!(o.value.im.abs() < 1e-12);
        assert!(o.critical_points.is_empty());
    }

    #[test]
    fn counter_propagating_modes_decouple() {
        let m = scalar(0.3);
        let mags: Vec<f64> = [64.0, 256.0, 1024.0]
            .iter()
            .map(|&mass| {
                let k = crate::wkb::nearest_quantum_number(&m, 1.0, mass).unwrap();
                let e = crate::wkb::quantized_energy(&m, k, mass).unwrap();
                let f = WkbField::bo(&m, e, mass, 128, 0.0).unwrap();
                mode_overlap(&f, &f.reversed(), |x| x.cos(), mass).unwrap().value.norm()
            })
            .collect();
        for (i, mass) in [64.0, 256.0, 1024.0].iter().enumerate() {
            assert!(mags[i] <= mags[0] * 64.0 / mass + 1e-12, "{mags:?}");
        }
    }
}
