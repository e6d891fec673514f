//! Electron spectra along the nuclear coordinate: gauge-continuous eigenpairs, gaps,
//! crossings, Hellmann-Feynman slopes and the gap-flatness diagnostic kappa.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelSystem;

/// Two eigenvalues closer than this are treated as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct Eigenpairs {
    pub values: Vec<f64>,
    /// Eigenvectors as columns, in the order of `values`.
    pub vectors: DMatrix<f64>,
}

impl Eigenpairs {
    pub fn levels(&self) -> usize {
        self.values.len()
    }

    pub fn is_simple(&self, n: usize) -> bool {
        let v = self.values[n];
        let below = n > 0 && (v - self.values[n - 1]).abs() <= DEGENERACY_TOL;
        let above = n + 1 < self.values.len() && (self.values[n + 1] - v).abs() <= DEGENERACY_TOL;
        !(below || above)
    }
}

/// Eigen-decomposition of a symmetric matrix sorted ascending; the largest-magnitude
/// component of each eigenvector is made positive.
pub fn symmetric_eigen(v: &DMatrix<f64>, x: f64) -> Result<Eigenpairs> {
    let d = v.nrows();
    if d == 1 {
        return Ok(Eigenpairs { values: vec![v[(0, 0)]], vectors: DMatrix::from_element(1, 1, 1.0) });
    }
    let eig = SymmetricEigen::try_new(v.clone(), 1e-15, 10_000).ok_or(Error::Eigen { x })?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen { x });
    }
    let mut vectors = DMatrix::zeros(d, d);
    for (col, &i) in order.iter().enumerate() {
        let mut c = eig.eigenvectors.column(i).into_owned();
        let big = c.iter().copied().fold(0.0f64, |m, e| if e.abs() > m.abs() { e } else { m });
        if big < 0.0 {
            c.neg_mut();
        }
        vectors.set_column(col, &c);
    }
    Ok(Eigenpairs { values, vectors })
}

pub fn eigen_at(model: &ModelSystem, x: f64) -> Result<Eigenpairs> {
    symmetric_eigen(&model.potential(x), x)
}

/// Flip the sign of each column of `cur` whose overlap with the same column of `prev` is negative.
pub fn align_gauge(prev: &DMatrix<f64>, cur: &mut DMatrix<f64>) {
    for j in 0..cur.ncols() {
        if prev.column(j).dot(&cur.column(j)) < 0.0 {
            cur.column_mut(j).neg_mut();
        }
    }
}

/// For each column of `prev`, the column of `cur` with the largest absolute overlap.
/// Assignment is greedy on the overlap magnitudes, which is exact for small d.
pub fn match_columns(prev: &DMatrix<f64>, cur: &DMatrix<f64>) -> Vec<usize> {
    let d = prev.ncols();
    let ov = prev.transpose() * cur;
    let mut pairs: Vec<(usize, usize, f64)> =
        (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| (i, j, ov[(i, j)].abs())).collect();
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2));
    let mut out = vec![usize::MAX; d];
    let mut used = vec![false; d];
    for (i, j, _) in pairs {
        if out[i] == usize::MAX && !used[j] {
            out[i] = j;
            used[j] = true;
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct ElectronBasisField {
    pub grid: Vec<f64>,
    /// `lambdas[i][n]`: eigenvalue n at grid point i, ascending in n.
    pub lambdas: Vec<Vec<f64>>,
    pub vectors: Vec<DMatrix<f64>>,
    /// `gaps[i][n] = lambdas[i][n] - lambdas[i][0]`.
    pub gaps: Vec<Vec<f64>>,
}

impl ElectronBasisField {
    pub fn levels(&self) -> usize {
        self.lambdas.first().map_or(0, |l| l.len())
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }
}

pub fn eigendecompose_field(model: &ModelSystem, grid: &[f64]) -> Result<ElectronBasisField> {
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::GridMismatch("grid must be strictly increasing".into()));
    }
    let mut lambdas = Vec::with_capacity(grid.len());
    let mut vectors: Vec<DMatrix<f64>> = Vec::with_capacity(grid.len());
    for &x in grid {
        let mut e = eigen_at(model, x)?;
        if let Some(prev) = vectors.last() {
            align_gauge(prev, &mut e.vectors);
        }
        lambdas.push(e.values);
        vectors.push(e.vectors);
    }
    let gaps = lambdas.iter().map(|l: &Vec<f64>| l.iter().map(|v| v - l[0]).collect()).collect();
    Ok(ElectronBasisField { grid: grid.to_vec(), lambdas, vectors, gaps })
}

/// Smallest ground-state gap over the grid; zero when a crossing lies on or between grid points.
pub fn detect_gap(field: &ElectronBasisField) -> Result<f64> {
    if field.levels() < 2 {
        return Err(Error::NoExcitedLevel);
    }
    let mut c = f64::INFINITY;
    for g in &field.gaps {
        c = c.min(g[1]);
    }
    if c <= DEGENERACY_TOL {
        return Ok(0.0);
    }
    // the grid covers the torus, so the last point neighbours the first
    let n = field.vectors.len();
    for i in 0..n {
        if match_columns(&field.vectors[i], &field.vectors[(i + 1) % n])[0] != 0 {
            return Ok(0.0);
        }
    }
    Ok(c)
}

/// Slope of eigenvalue n via the Hellmann-Feynman formula.
pub fn hellmann_feynman(model: &ModelSystem, x: f64, n: usize) -> Result<f64> {
    let e = eigen_at(model, x)?;
    if !e.is_simple(n) {
        return Err(Error::Degenerate { x, level: n });
    }
    let dv = model.potential_derivative(x);
    let v = e.vectors.column(n);
    Ok(v.dot(&(&dv * v)))
}

/// Eigenpairs at X together with the Hellmann-Feynman slopes of every level.
pub fn spectrum_with_slopes(model: &ModelSystem, x: f64) -> Result<(Eigenpairs, Vec<f64>)> {
    let e = eigen_at(model, x)?;
    let dv = model.potential_derivative(x);
    let mut slopes = Vec::with_capacity(e.levels());
    for n in 0..e.levels() {
        if !e.is_simple(n) {
            return Err(Error::Degenerate { x, level: n });
        }
        let v = e.vectors.column(n);
        slopes.push(v.dot(&(&dv * v)));
    }
    Ok((e, slopes))
}

/// Source of excited-state gaps and their X-derivatives.
pub trait GapSource {
    /// Returns (gap_j, d gap_j / dX) for j = 1..d-1.
    fn gaps_and_slopes(&self, x: f64) -> Result<(Vec<f64>, Vec<f64>)>;
}

impl GapSource for ModelSystem {
    fn gaps_and_slopes(&self, x: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        if self.levels < 2 {
            return Err(Error::NoExcitedLevel);
        }
        let e = eigen_at(self, x)?;
        if e.values[1] - e.values[0] <= DEGENERACY_TOL {
            return Err(Error::Crossing { x });
        }
        let dv = self.potential_derivative(x);
        let slopes: Vec<f64> = (0..e.levels())
            .map(|n| {
                let v = e.vectors.column(n);
                v.dot(&(&dv * v))
            })
            .collect();
        let gaps = e.values[1..].iter().map(|v| v - e.values[0]).collect();
        let dg = slopes[1..].iter().map(|s| s - slopes[0]).collect();
        Ok((gaps, dg))
    }
}

impl<F> GapSource for F
where
    F: Fn(f64) -> (Vec<f64>, Vec<f64>),
{
    fn gaps_and_slopes(&self, x: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok(self(x))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct KappaReport {
    pub kappa: f64,
    /// T divided by the smallest first gap seen in the domain.
    pub temperature_ratio: f64,
    pub argmax: f64,
}

/// max over X in `domain` and s in [0, 1] of |sum_j gap_j'(Y) (X - X_c) / gap_j(Y)|, Y = s X + (1 - s) X_c.
pub fn kappa(
    source: &impl GapSource,
    domain: (f64, f64),
    x_c: f64,
    temperature: f64,
    nx: usize,
    ns: usize,
) -> Result<KappaReport> {
    let (a, b) = domain;
    if !(a <= x_c && x_c <= b) {
        return Err(Error::InvalidParameter { name: "X_c".into(), reason: "outside the domain".into() });
    }
    let nx = nx.max(2);
    let ns = ns.max(2);
    let mut kappa = 0.0f64;
    let mut argmax = x_c;
    let mut min_gap = f64::INFINITY;
    for i in 0..nx {
        let x = a + (b - a) * i as f64 / (nx - 1) as f64;
        let (g, _) = source.gaps_and_slopes(x)?;
        if g[0] <= DEGENERACY_TOL {
            return Err(Error::Crossing { x });
        }
        min_gap = min_gap.min(g[0]);
        for k in 0..ns {
            let s = k as f64 / (ns - 1) as f64;
            let y = s * x + (1.0 - s) * x_c;
            let (gy, dgy) = source.gaps_and_slopes(y)?;
            if gy[0] <= DEGENERACY_TOL {
                return Err(Error::Crossing { x: y });
            }
            let sum: f64 = gy.iter().zip(&dgy).map(|(g, dg)| dg / g).sum();
            let val = (sum * (x - x_c)).abs();
            if val > kappa {
                kappa = val;
                argmax = x;
            }
        }
    }
    Ok(KappaReport { kappa, temperature_ratio: temperature / min_gap, argmax })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossingEvent {
    pub time: f64,
    pub x: f64,
    /// Adiabatic level that meets the ground level.
    pub level: usize,
    /// |d/dt (lambda_n - lambda_0)| at the crossing.
    pub slope: f64,
    pub degenerate: bool,
}

/// Ground-state crossings along a sampled path (t_i, X_i), located by bisection on the
/// overlap-tracked (diabatic) gap, which changes sign where the adiabatic gap touches zero.
pub fn detect_crossings(model: &ModelSystem, times: &[f64], xs: &[f64], c_min: f64) -> Result<Vec<CrossingEvent>> {
    if times.len() != xs.len() {
        return Err(Error::GridMismatch("times and positions differ in length".into()));
    }
    let mut events = Vec::new();
    if model.levels < 2 || times.len() < 2 {
        return Ok(events);
    }
    let mut ref_vectors: Option<DMatrix<f64>> = None;
    let mut ref_index = 0usize;
    for i in 0..times.len() {
        let e = eigen_at(model, xs[i])?;
        if e.values[1] - e.values[0] <= DEGENERACY_TOL {
            // eigenvectors are arbitrary here; keep matching against the last clean sample
            continue;
        }
        if let Some(prev) = &ref_vectors {
            let m = match_columns(prev, &e.vectors);
            if m[0] != 0 {
                let (t0, t1) = (times[ref_index], times[i]);
                let (x0, x1) = (xs[ref_index], xs[i]);
                events.push(locate_crossing(model, prev, (t0, x0), (t1, x1), m[0], c_min)?);
            }
        }
        ref_vectors = Some(e.vectors);
        ref_index = i;
    }
    Ok(events)
}

fn locate_crossing(
    model: &ModelSystem,
    prev: &DMatrix<f64>,
    (t0, x0): (f64, f64),
    (t1, x1): (f64, f64),
    level: usize,
    c_min: f64,
) -> Result<CrossingEvent> {
    let speed = (x1 - x0) / (t1 - t0);
    let x_of = |t: f64| x0 + speed * (t - t0);
    // signed gap between the two diabatic branches that started as levels 0 and `level`
    let signed = |t: f64| -> Result<f64> {
        let e = eigen_at(model, x_of(t))?;
        let m = match_columns(prev, &e.vectors);
        Ok(e.values[m[level]] - e.values[m[0]])
    };
    let (mut a, mut b) = (t0, t1);
    let fa0 = signed(a)?;
    let mut fa = fa0;
    for _ in 0..200 {
        if b - a <= 1e-13 * (1.0 + t1.abs()) {
            break;
        }
        let mid = 0.5 * (a + b);
        let fm = signed(mid)?;
        if fm == 0.0 {
            a = mid;
            b = mid;
            break;
        }
        if (fm > 0.0) == (fa > 0.0) {
            a = mid;
            fa = fm;
        } else {
            b = mid;
        }
    }
    let sigma = 0.5 * (a + b);
    let h = 1e-6 * (t1 - t0).abs().max(1e-9);
    let slope = ((signed(sigma + h)? - signed(sigma - h)?) / (2.0 * h)).abs();
    let at = eigen_at(model, x_of(sigma))?;
    let scale = at.values.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let touching = at.values[1..].iter().filter(|v| (*v - at.values[0]).abs() <= 1e-8 * scale).count();
    Ok(CrossingEvent {
        time: sigma,
        x: x_of(sigma),
        level,
        slope,
        degenerate: slope < c_min || touching > 1,
    })
}
