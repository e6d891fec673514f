//! Reference quantum solutions of H = V(X) - (1/2M) d^2/dX^2 on a periodic grid.
//!
//! Small problems are solved densely in the collocation basis. Larger ones switch to the
//! Fourier basis, where the smooth potential couples only a few neighbouring modes, and
//! use shift-invert subspace iteration with a banded LU factorization.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::espec;
use crate::model::ModelSystem;
use crate::spectral::{self, Plan};

/// Largest n * d solved with a dense eigen-decomposition.
pub const DENSE_LIMIT: usize = 768;

/// Relative tolerance on the eigen-residual ||H Phi - E Phi|| / ||Phi||.
pub const RESIDUAL_TOL: f64 = 1e-8;

/// Complex d-vector field sampled on n equispaced points; `data[i * levels + c]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaveField {
    pub length: f64,
    pub levels: usize,
    pub data: Vec<Complex64>,
}

impl WaveField {
    pub fn n(&self) -> usize {
        self.data.len() / self.levels
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.n() as f64
    }

    /// Discrete L^2 norm (trapezoid rule).
    pub fn norm(&self) -> f64 {
        (self.spacing() * self.data.iter().map(|c| c.norm_sqr()).sum::<f64>()).sqrt()
    }

    pub fn normalize(&mut self) {
        let s = self.norm();
        if s > 0.0 {
            self.data.iter_mut().for_each(|c| *c /= s);
        }
    }

    pub fn at(&self, i: usize, c: usize) -> Complex64 {
        self.data[i * self.levels + c]
    }

    /// Level-summed |Phi|^2 normalized to unit integral.
    pub fn density(&self) -> Vec<f64> {
        let d = self.levels;
        let rho: Vec<f64> = self.data.chunks(d).map(|v| v.iter().map(|c| c.norm_sqr()).sum()).collect();
        let total = rho.iter().sum::<f64>() * self.spacing();
        rho.iter().map(|r| r / total).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Laplacian {
    Spectral,
    FourthOrder,
}

impl std::str::FromStr for Laplacian {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spectral" => Ok(Laplacian::Spectral),
            "fd4" | "fourth_order" => Ok(Laplacian::FourthOrder),
            other => Err(Error::InvalidParameter { name: "laplacian".into(), reason: format!("unknown `{other}`") }),
        }
    }
}

/// Grid size required for 16 points per de Broglie wavelength at kinetic energy `e_kin`.
pub fn required_points(length: f64, mass: f64, e_kin: f64) -> usize {
    (16.0 * length * (2.0 * e_kin.max(0.0) * mass).sqrt() / (2.0 * PI)).ceil() as usize
}

/// Smallest power of two satisfying the resolution rule at energy `e_max`.
pub fn resolved_grid(model: &ModelSystem, mass: f64, e_max: f64, min_points: usize) -> Result<usize> {
    let e_kin = e_max - min_ground(model, 1024)?;
    Ok(required_points(model.length, mass, e_kin).max(min_points).next_power_of_two())
}

fn min_ground(model: &ModelSystem, n: usize) -> Result<f64> {
    let mut m = f64::INFINITY;
    for i in 0..n {
        m = m.min(espec::eigen_at(model, model.length * i as f64 / n as f64)?.values[0]);
    }
    Ok(m)
}

/// Discrete Hamiltonian on n grid points.
#[derive(Clone, Debug)]
pub struct GridHamiltonian {
    pub length: f64,
    pub mass: f64,
    pub n: usize,
    pub levels: usize,
    pub laplacian: Laplacian,
    potentials: Vec<DMatrix<f64>>,
}

impl GridHamiltonian {
    /// Assemble on n points; refuses grids that violate the resolution rule at energy `e_max`.
    pub fn assemble(model: &ModelSystem, mass: f64, n: usize, laplacian: Laplacian, e_max: f64) -> Result<Self> {
        if n < 8 {
            return Err(Error::InvalidParameter { name: "n_grid".into(), reason: "need at least 8 points".into() });
        }
        if !(mass > 0.0) {
            return Err(Error::InvalidParameter { name: "M".into(), reason: "must be positive".into() });
        }
        let e_kin = e_max - min_ground(model, n.max(256))?;
        let required = required_points(model.length, mass, e_kin);
        if n < required {
            return Err(Error::Resolution { required, given: n });
        }
        let potentials = (0..n).map(|i| model.potential(model.length * i as f64 / n as f64)).collect();
        Ok(GridHamiltonian { length: model.length, mass, n, levels: model.levels, laplacian, potentials })
    }

    pub fn dim(&self) -> usize {
        self.n * self.levels
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.n as f64
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..self.n).map(|i| i as f64 * self.spacing()).collect()
    }

    /// Kinetic symbol for Fourier mode m: the eigenvalue of -(1/2M) Laplacian.
    fn kinetic(&self, m: i64) -> f64 {
        let k = 2.0 * PI * m as f64 / self.length;
        let h = self.spacing();
        let lap = match self.laplacian {
            Laplacian::Spectral => k * k,
            Laplacian::FourthOrder => (30.0 - 32.0 * (k * h).cos() + 2.0 * (2.0 * k * h).cos()) / (12.0 * h * h),
        };
        lap / (2.0 * self.mass)
    }

    /// Dense real symmetric matrix in the collocation basis.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let (n, d) = (self.n, self.levels);
        let h = self.spacing();
        let mut a = DMatrix::zeros(n * d, n * d);
        let scale = -1.0 / (2.0 * self.mass);
        for i in 0..n {
            for j in 0..n {
                let lap = match self.laplacian {
                    Laplacian::Spectral => spectral_d2(i, j, n, self.length),
                    Laplacian::FourthOrder => {
                        let r = (i + n - j) % n;
                        let w = match r {
                            0 => -30.0,
                            1 => 16.0,
                            2 => -1.0,
                            _ if r == n - 1 => 16.0,
                            _ if r == n - 2 => -1.0,
                            _ => 0.0,
                        };
                        w / (12.0 * h * h)
                    }
                };
                for c in 0..d {
                    a[(i * d + c, j * d + c)] = scale * lap;
                }
            }
            for c in 0..d {
                for c2 in 0..d {
                    a[(i * d + c, i * d + c2)] += self.potentials[i][(c, c2)];
                }
            }
        }
        // the closed forms are symmetric up to rounding; make it exact
        let t = a.transpose();
        (a + t) * 0.5
    }

    /// H applied to a grid field (FFT for the spectral Laplacian, stencil for fourth order).
    pub fn apply(&self, phi: &WaveField) -> Result<WaveField> {
        if phi.levels != self.levels || phi.n() != self.n || (phi.length - self.length).abs() > 1e-12 * self.length {
            return Err(Error::GridMismatch(format!(
                "field has n = {}, d = {}; operator has n = {}, d = {}",
                phi.n(),
                phi.levels,
                self.n,
                self.levels
            )));
        }
        let (n, d) = (self.n, self.levels);
        let mut out = vec![Complex64::new(0.0, 0.0); n * d];
        let scale = -1.0 / (2.0 * self.mass);
        let plan = Plan::new(n);
        let h = self.spacing();
        for c in 0..d {
            let comp: Vec<Complex64> = (0..n).map(|i| phi.at(i, c)).collect();
            let lap = match self.laplacian {
                Laplacian::Spectral => spectral::derivative(&plan, &comp, self.length, 2),
                Laplacian::FourthOrder => (0..n)
                    .map(|i| {
                        let f = |s: isize| comp[((i as isize + s).rem_euclid(n as isize)) as usize];
                        (-f(-2) + f(-1) * 16.0 - f(0) * 30.0 + f(1) * 16.0 - f(2)) / (12.0 * h * h)
                    })
                    .collect(),
            };
            for i in 0..n {
                out[i * d + c] = lap[i] * scale;
            }
        }
        for i in 0..n {
            for c in 0..d {
                let mut s = Complex64::new(0.0, 0.0);
                for c2 in 0..d {
                    s += phi.at(i, c2) * self.potentials[i][(c, c2)];
                }
                out[i * d + c] += s;
            }
        }
        Ok(WaveField { length: self.length, levels: d, data: out })
    }
}

/// Entry (i, j) of the Fourier collocation second-derivative matrix on n points.
fn spectral_d2(i: usize, j: usize, n: usize, length: f64) -> f64 {
    let h = 2.0 * PI / n as f64;
    let s = (2.0 * PI / length).powi(2);
    if n % 2 != 0 {
        if i == j {
            return -s * (n * n - 1) as f64 / 12.0;
        }
        let k = (i as f64 - j as f64) * h;
        let sign = if (i as i64 - j as i64).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        return -s * sign * 0.5 / (0.5 * k).sin() / (0.5 * k).tan();
    }
    if i == j {
        return s * (-PI * PI / (3.0 * h * h) - 1.0 / 6.0);
    }
    let k = (i as f64 - j as f64) * h;
    let sign = if (i as i64 - j as i64).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    -s * sign * 0.5 / (0.5 * k).sin().powi(2)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuantumEigenpair {
    pub energy: f64,
    pub phi: WaveField,
    pub mass: f64,
    pub n_grid: usize,
    pub residual: f64,
}

impl QuantumEigenpair {
    pub fn density(&self) -> Vec<f64> {
        self.phi.density()
    }
}

/// ||(H - E) Phi|| / ||Phi||.
pub fn residual_norm(h: &GridHamiltonian, phi: &WaveField, energy: f64) -> Result<f64> {
    let hp = h.apply(phi)?;
    let num: f64 = hp.data.iter().zip(&phi.data).map(|(a, b)| (a - b * energy).norm_sqr()).sum();
    let den: f64 = phi.data.iter().map(|c| c.norm_sqr()).sum();
    Ok((num / den).sqrt())
}

pub fn density_from_state(pair: &QuantumEigenpair) -> Vec<f64> {
    pair.phi.density()
}

/// Average density of a group of eigenpairs, used for near-degenerate doublets.
pub fn average_density(pairs: &[QuantumEigenpair]) -> Vec<f64> {
    let n = pairs[0].n_grid;
    let mut rho = vec![0.0; n];
    for p in pairs {
        for (r, v) in rho.iter_mut().zip(p.density()) {
            *r += v / pairs.len() as f64;
        }
    }
    rho
}

/// Trapezoid value of the integral of g rho over the torus.
pub fn observable(rho: &[f64], length: f64, g: &dyn Fn(f64) -> f64) -> f64 {
    let h = length / rho.len() as f64;
    rho.iter().enumerate().map(|(i, r)| g(i as f64 * h) * r).sum::<f64>() * h
}

/// The `count` eigenpairs nearest `target`, sorted by |E - target|. A near-degenerate partner
/// of the last selected pair is appended, so doublets are always complete.
pub fn eigensolve_near(h: &GridHamiltonian, target: f64, count: usize) -> Result<Vec<QuantumEigenpair>> {
    if count == 0 {
        return Err(Error::InvalidParameter { name: "count".into(), reason: "need at least one eigenpair".into() });
    }
    let raw = if h.dim() <= DENSE_LIMIT { dense_near(h, target, count)? } else { banded_near(h, target, count)? };
    let mut out = Vec::with_capacity(raw.len());
    for (energy, phi) in raw {
        let residual = residual_norm(h, &phi, energy)?;
        if residual > RESIDUAL_TOL * (1.0 + energy.abs()) {
            return Err(Error::NotConverged(format!("eigen-residual {residual:.3e} at E = {energy}")));
        }
        out.push(QuantumEigenpair { energy, phi, mass: h.mass, n_grid: h.n, residual });
    }
    Ok(out)
}

fn doublet_tol(e: f64) -> f64 {
    1e-8 * (1.0 + e.abs())
}

fn select_nearest(values: &[f64], target: f64, count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| (values[a] - target).abs().total_cmp(&(values[b] - target).abs()));
    let mut take = count.min(order.len());
    while take < order.len() && (values[order[take]] - values[order[take - 1]]).abs() <= doublet_tol(values[order[take - 1]]) {
        take += 1;
    }
    order.truncate(take);
    order
}

fn dense_near(h: &GridHamiltonian, target: f64, count: usize) -> Result<Vec<(f64, WaveField)>> {
    let a = h.to_dense();
    let eig = SymmetricEigen::try_new(a, 1e-15, 100_000).ok_or_else(|| Error::NotConverged("dense eigen".into()))?;
    let values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let pick = select_nearest(&values, target, count);
    Ok(pick
        .into_iter()
        .map(|k| {
            let col = eig.eigenvectors.column(k);
            let mut w = WaveField {
                length: h.length,
                levels: h.levels,
                data: col.iter().map(|&r| Complex64::new(r, 0.0)).collect(),
            };
            w.normalize();
            (values[k], w)
        })
        .collect())
}

/// Hermitian band matrix in the Fourier basis, ordered (mode, level) with modes -n/2..n/2-1.
struct FourierOperator {
    dim: usize,
    /// half-bandwidth in matrix index
    band: usize,
    /// rows[r][s] = H[r, r - band + s]
    rows: Vec<Vec<Complex64>>,
}

impl FourierOperator {
    fn build(h: &GridHamiltonian) -> Result<Self> {
        let (n, d) = (h.n, h.levels);
        let plan = Plan::new(n);
        // Fourier coefficients of each potential entry
        let mut vhat = vec![vec![Complex64::new(0.0, 0.0); n]; d * d];
        let mut scale = 0.0f64;
        for c in 0..d {
            for c2 in 0..d {
                let mut col: Vec<Complex64> = (0..n).map(|i| Complex64::new(h.potentials[i][(c, c2)], 0.0)).collect();
                plan.forward(&mut col);
                scale = scale.max(col.iter().map(|z| z.norm()).fold(0.0, f64::max));
                vhat[c * d + c2] = col;
            }
        }
        let cut = 1e-13 * scale.max(1e-300);
        let mut width = 0usize;
        for q in 1..n / 2 {
            if vhat.iter().any(|v| v[q].norm() > cut || v[n - q].norm() > cut) {
                width = q;
            }
        }
        if width > n / 8 {
            return Err(Error::Unsupported(format!("potential has {width} Fourier modes on a {n}-point grid")));
        }
        let dim = n * d;
        let band = (width + 1) * d - 1;
        let half = (n / 2) as i64;
        let mut rows = vec![vec![Complex64::new(0.0, 0.0); 2 * band + 1]; dim];
        for (r, row) in rows.iter_mut().enumerate() {
            let (mi, c) = (r / d, r % d);
            let m = mi as i64 - half;
            for (s, entry) in row.iter_mut().enumerate() {
                let col = r as i64 - band as i64 + s as i64;
                if col < 0 || col >= dim as i64 {
                    continue;
                }
                let (mj, c2) = (col as usize / d, col as usize % d);
                let q = m - (mj as i64 - half);
                if q.unsigned_abs() as usize > width {
                    continue;
                }
                let slot = q.rem_euclid(n as i64) as usize;
                *entry = vhat[c * d + c2][slot];
                if r == col as usize {
                    *entry += h.kinetic(m);
                }
            }
        }
        Ok(FourierOperator { dim, band, rows })
    }

    fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        let b = self.band as i64;
        for (r, row) in self.rows.iter().enumerate() {
            let mut s = Complex64::new(0.0, 0.0);
            for (k, a) in row.iter().enumerate() {
                let col = r as i64 - b + k as i64;
                if col >= 0 && (col as usize) < self.dim {
                    s += a * x[col as usize];
                }
            }
            y[r] = s;
        }
    }
}

/// LU factorization with partial pivoting of a band matrix with kl = ku = band.
struct BandedLu {
    dim: usize,
    kl: usize,
    width: usize,
    /// rows[i][j - i + kl] for j in [i - kl, i + kl + ku]
    rows: Vec<Vec<Complex64>>,
    pivots: Vec<usize>,
}

impl BandedLu {
    fn factor(op: &FourierOperator, shift: f64) -> Result<Self> {
        let (dim, kl) = (op.dim, op.band);
        let width = 3 * kl + 1;
        let mut rows = vec![vec![Complex64::new(0.0, 0.0); width]; dim];
        for (i, row) in rows.iter_mut().enumerate() {
            for s in 0..=2 * kl {
                row[s] = op.rows[i][s];
            }
            row[kl] -= shift;
        }
        let get = |rows: &Vec<Vec<Complex64>>, i: usize, j: usize| -> Complex64 {
            let o = j as i64 - i as i64 + kl as i64;
            if o < 0 || o >= width as i64 {
                Complex64::new(0.0, 0.0)
            } else {
                rows[i][o as usize]
            }
        };
        let mut pivots = vec![0; dim];
        for k in 0..dim {
            let last = (k + kl).min(dim - 1);
            let mut p = k;
            let mut best = get(&rows, k, k).norm();
            for i in k + 1..=last {
                let v = get(&rows, i, k).norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(Error::NotConverged("singular shifted operator".into()));
            }
            pivots[k] = p;
            let hi = (k + 2 * kl).min(dim - 1);
            if p != k {
                for j in k..=hi {
                    let a = get(&rows, k, j);
                    let b = get(&rows, p, j);
                    rows[k][j + kl - k] = b;
                    rows[p][j + kl - p] = a;
                }
            }
            let piv = rows[k][kl];
            for i in k + 1..=last {
                let l = get(&rows, i, k) / piv;
                rows[i][k + kl - i] = l;
                if l.norm() == 0.0 {
                    continue;
                }
                for j in k + 1..=hi {
                    let u = rows[k][j + kl - k];
                    rows[i][j + kl - i] -= l * u;
                }
            }
        }
        Ok(BandedLu { dim, kl, width, rows, pivots })
    }

    fn solve(&self, b: &mut [Complex64]) {
        let kl = self.kl;
        for k in 0..self.dim {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let last = (k + kl).min(self.dim - 1);
            for i in k + 1..=last {
                let l = self.rows[i][k + kl - i];
                let bk = b[k];
                b[i] -= l * bk;
            }
        }
        for k in (0..self.dim).rev() {
            let hi = (k + 2 * kl).min(self.dim - 1).min(k + self.width - kl - 1);
            let mut s = b[k];
            for j in k + 1..=hi {
                s -= self.rows[k][j + kl - k] * b[j];
            }
            b[k] = s / self.rows[k][kl];
        }
    }
}

fn orthonormalize(q: &mut [Vec<Complex64>]) {
    for pass in 0..2 {
        for i in 0..q.len() {
            for j in 0..i {
                let (a, b) = q.split_at_mut(i);
                let dot: Complex64 = a[j].iter().zip(b[0].iter()).map(|(u, v)| u.conj() * v).sum();
                for (v, u) in b[0].iter_mut().zip(a[j].iter()) {
                    *v -= dot * u;
                }
            }
            let nrm = q[i].iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            if nrm > 0.0 {
                q[i].iter_mut().for_each(|c| *c /= nrm);
            }
            let _ = pass;
        }
    }
}

fn banded_near(h: &GridHamiltonian, target: f64, count: usize) -> Result<Vec<(f64, WaveField)>> {
    let op = FourierOperator::build(h)?;
    let dim = op.dim;
    let block = (2 * count + 8).min(dim);
    // keep the shift off any eigenvalue
    let shift = target + 1e-7 * (1.0 + target.abs()) * std::f64::consts::FRAC_1_SQRT_2;
    let lu = BandedLu::factor(&op, shift)?;
    // deterministic start block: smooth low modes around the shift plus a hash-like spread
    let mut q: Vec<Vec<Complex64>> = (0..block)
        .map(|b| {
            (0..dim)
                .map(|r| {
                    let t = ((r * 7919 + b * 104_729) % 1_000_003) as f64 / 1_000_003.0;
                    Complex64::from_polar(1.0, 2.0 * PI * t) * (1.0 + (b as f64 + 1.0) * (r as f64 + 1.0).ln().cos())
                })
                .collect()
        })
        .collect();
    orthonormalize(&mut q);
    let mut ritz: Vec<(f64, Vec<Complex64>)> = Vec::new();
    let mut hq = vec![vec![Complex64::new(0.0, 0.0); dim]; block];
    for _ in 0..500 {
        for v in q.iter_mut() {
            lu.solve(v);
        }
        orthonormalize(&mut q);
        for (v, w) in q.iter().zip(hq.iter_mut()) {
            op.apply(v, w);
        }
        let mut small = DMatrix::<Complex64>::zeros(block, block);
        for i in 0..block {
            for j in 0..block {
                small[(i, j)] = q[i].iter().zip(&hq[j]).map(|(a, b)| a.conj() * b).sum();
            }
        }
        let st = small.adjoint();
        small = (small + st) * Complex64::new(0.5, 0.0);
        let eig = SymmetricEigen::try_new(small, 1e-15, 100_000).ok_or_else(|| Error::NotConverged("Ritz step".into()))?;
        let values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        let pick = select_nearest(&values, target, count);
        if pick.len() > block / 2 {
            return Err(Error::NotConverged("degenerate cluster larger than the search block".into()));
        }
        // rotate the block onto the Ritz vectors
        let mut new_q = vec![vec![Complex64::new(0.0, 0.0); dim]; block];
        let mut new_hq = vec![vec![Complex64::new(0.0, 0.0); dim]; block];
        for k in 0..block {
            for i in 0..block {
                let c = eig.eigenvectors[(i, k)];
                for r in 0..dim {
                    new_q[k][r] += q[i][r] * c;
                    new_hq[k][r] += hq[i][r] * c;
                }
            }
        }
        let mut worst = 0.0f64;
        for &k in &pick {
            let res: f64 = new_hq[k].iter().zip(&new_q[k]).map(|(a, b)| (a - b * values[k]).norm_sqr()).sum::<f64>().sqrt();
            worst = worst.max(res / (1.0 + values[k].abs()));
        }
        ritz = pick.iter().map(|&k| (values[k], new_q[k].clone())).collect();
        q = new_q;
        hq = new_hq;
        if worst < 1e-11 {
            return Ok(ritz.into_iter().map(|(e, v)| (e, fourier_to_grid(h, &v))).collect());
        }
    }
    let _ = ritz;
    Err(Error::NotConverged("shift-invert subspace iteration".into()))
}

fn fourier_to_grid(h: &GridHamiltonian, coeffs: &[Complex64]) -> WaveField {
    let (n, d) = (h.n, h.levels);
    let plan = Plan::new(n);
    let half = n / 2;
    let mut data = vec![Complex64::new(0.0, 0.0); n * d];
    for c in 0..d {
        let mut slots = vec![Complex64::new(0.0, 0.0); n];
        for mi in 0..n {
            let m = mi as i64 - half as i64;
            slots[m.rem_euclid(n as i64) as usize] = coeffs[mi * d + c];
        }
        plan.inverse(&mut slots);
        for i in 0..n {
            data[i * d + c] = slots[i];
        }
    }
    // fix the global phase so the largest component is real and positive
    let big = data.iter().copied().fold(Complex64::new(0.0, 0.0), |a, b| if b.norm() > a.norm() { b } else { a });
    let rot = if big.norm() > 0.0 { big.conj() / big.norm() } else { Complex64::new(1.0, 0.0) };
    data.iter_mut().for_each(|z| *z *= rot);
    let mut w = WaveField { length: h.length, levels: d, data };
    w.normalize();
    w
}
