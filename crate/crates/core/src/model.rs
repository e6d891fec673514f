//! Finite-level model systems on a periodic nuclear coordinate.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serialized model description, as read from a JSON config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub family: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    #[serde(rename = "L")]
    pub length: f64,
    pub d: usize,
    #[serde(rename = "M", default = "default_masses")]
    pub masses: Vec<f64>,
    #[serde(rename = "T", default)]
    pub temperature: f64,
    #[serde(rename = "K", default = "default_friction")]
    pub friction: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tolerances: BTreeMap<String, f64>,
}

fn default_masses() -> Vec<f64> {
    vec![1.0]
}

fn default_friction() -> f64 {
    1.0
}

impl ModelSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn new(family: &str, d: usize, length: f64) -> Self {
        ModelSpec {
            family: family.to_string(),
            params: BTreeMap::new(),
            length,
            d,
            masses: default_masses(),
            temperature: 0.0,
            friction: default_friction(),
            tolerances: BTreeMap::new(),
        }
    }

    pub fn with_param(mut self, name: &str, value: f64) -> Self {
        self.params.insert(name.to_string(), value);
        self
    }

    pub fn with_masses(mut self, masses: &[f64]) -> Self {
        self.masses = masses.to_vec();
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Self {
        self.temperature = t;
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Family {
    Free,
    ScalarCos { a: f64 },
    TwoLevelGap { delta: f64 },
    TwoLevelCross,
    MultiLevel { a: f64, offset: f64, gaps: Vec<f64>, eps: f64, eta: f64 },
}

/// Registered family names with a one-line description.
pub const FAMILIES: &[(&str, &str)] = &[
    ("free", "d=1, V = 0"),
    ("scalar_cos", "d=1, V = a cos(2 pi X / L); params: a"),
    ("two_level_gap", "d=2, L=2pi, V = [[cos X, delta], [delta, -cos X]]; params: delta > 0"),
    ("two_level_cross", "d=2, L=2pi, V = [[sin X, 1 - cos X], [1 - cos X, -sin X]]"),
    (
        "multi_level",
        "d>=2, V = R diag(l0, l0 + gap_n (1 + eps c)) R^T with l0 = offset + a c, c = cos(2 pi X / L), \
         R = adjacent Givens rotations by eta sin(2 pi X / L); params: gap_1..gap_{d-1}, a, offset, eps, eta",
    ),
];

#[derive(Clone, Debug)]
pub struct ModelSystem {
    pub family: Family,
    pub length: f64,
    pub levels: usize,
    pub masses: Vec<f64>,
    pub temperature: f64,
    pub friction: f64,
    spec: ModelSpec,
}

fn check_params(spec: &ModelSpec, allowed: &[String]) -> Result<()> {
    for (name, value) in &spec.params {
        if !allowed.iter().any(|a| a == name) {
            return Err(Error::InvalidParameter {
                name: name.clone(),
                reason: format!("not a parameter of `{}`", spec.family),
            });
        }
        if !value.is_finite() {
            return Err(Error::InvalidParameter { name: name.clone(), reason: "not finite".into() });
        }
    }
    Ok(())
}

fn require(spec: &ModelSpec, name: &str) -> Result<f64> {
    spec.params.get(name).copied().ok_or_else(|| Error::InvalidParameter {
        name: name.to_string(),
        reason: "missing".into(),
    })
}

fn require_levels(spec: &ModelSpec, d: usize) -> Result<()> {
    if spec.d != d {
        return Err(Error::InvalidParameter {
            name: "d".into(),
            reason: format!("family `{}` has d = {d}, config says {}", spec.family, spec.d),
        });
    }
    Ok(())
}

fn require_two_pi(spec: &ModelSpec) -> Result<()> {
    if (spec.length - 2.0 * PI).abs() > 1e-12 {
        return Err(Error::InvalidParameter {
            name: "L".into(),
            reason: format!("family `{}` is defined on L = 2 pi", spec.family),
        });
    }
    Ok(())
}

impl ModelSystem {
    pub fn build(spec: &ModelSpec) -> Result<Self> {
        if !(spec.length.is_finite() && spec.length > 0.0) {
            return Err(Error::InvalidParameter { name: "L".into(), reason: "must be finite and > 0".into() });
        }
        if spec.d < 1 {
            return Err(Error::InvalidParameter { name: "d".into(), reason: "must be >= 1".into() });
        }
        if spec.masses.iter().any(|m| !(m.is_finite() && *m >= 1.0)) {
            return Err(Error::InvalidParameter { name: "M".into(), reason: "masses must be finite and >= 1".into() });
        }
        if !(spec.temperature.is_finite() && spec.temperature >= 0.0) {
            return Err(Error::InvalidParameter { name: "T".into(), reason: "must be finite and >= 0".into() });
        }
        if !(spec.friction.is_finite() && spec.friction > 0.0) {
            return Err(Error::InvalidParameter { name: "K".into(), reason: "must be finite and > 0".into() });
        }
        let family = match spec.family.as_str() {
            "free" => {
                check_params(spec, &[])?;
                require_levels(spec, 1)?;
                Family::Free
            }
            "scalar_cos" => {
                check_params(spec, &["a".into()])?;
                require_levels(spec, 1)?;
                Family::ScalarCos { a: require(spec, "a")? }
            }
            "two_level_gap" => {
                check_params(spec, &["delta".into()])?;
                require_levels(spec, 2)?;
                require_two_pi(spec)?;
                let delta = require(spec, "delta")?;
                if delta <= 0.0 {
                    return Err(Error::InvalidParameter { name: "delta".into(), reason: "must be > 0".into() });
                }
                Family::TwoLevelGap { delta }
            }
            "two_level_cross" => {
                check_params(spec, &[])?;
                require_levels(spec, 2)?;
                require_two_pi(spec)?;
                Family::TwoLevelCross
            }
            "multi_level" => {
                if spec.d < 2 {
                    return Err(Error::InvalidParameter { name: "d".into(), reason: "multi_level needs d >= 2".into() });
                }
                let mut allowed: Vec<String> = ["a", "offset", "eps", "eta"].iter().map(|s| s.to_string()).collect();
                allowed.extend((1..spec.d).map(|n| format!("gap_{n}")));
                check_params(spec, &allowed)?;
                let mut gaps = Vec::with_capacity(spec.d - 1);
                for n in 1..spec.d {
                    let g = require(spec, &format!("gap_{n}"))?;
                    if g <= 0.0 {
                        return Err(Error::InvalidParameter { name: format!("gap_{n}"), reason: "must be > 0".into() });
                    }
                    gaps.push(g);
                }
                let eps = spec.params.get("eps").copied().unwrap_or(0.0);
                if eps.abs() >= 1.0 {
                    return Err(Error::InvalidParameter { name: "eps".into(), reason: "|eps| must be < 1".into() });
                }
                Family::MultiLevel {
                    a: spec.params.get("a").copied().unwrap_or(0.0),
                    offset: spec.params.get("offset").copied().unwrap_or(0.0),
                    gaps,
                    eps,
                    eta: spec.params.get("eta").copied().unwrap_or(0.0),
                }
            }
            other => return Err(Error::UnknownFamily(other.to_string())),
        };
        Ok(ModelSystem {
            family,
            length: spec.length,
            levels: spec.d,
            masses: spec.masses.clone(),
            temperature: spec.temperature,
            friction: spec.friction,
            spec: spec.clone(),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn name(&self) -> &str {
        &self.spec.family
    }

    pub fn tolerance(&self, name: &str, default: f64) -> f64 {
        self.spec.tolerances.get(name).copied().unwrap_or(default)
    }

    /// Angular wavenumber of the torus, 2 pi / L.
    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.length
    }

    pub fn wrap(&self, x: f64) -> f64 {
        let w = x.rem_euclid(self.length);
        if w >= self.length {
            0.0
        } else {
            w
        }
    }

    pub fn potential(&self, x: f64) -> DMatrix<f64> {
        let x = self.wrap(x);
        match &self.family {
            Family::Free => DMatrix::zeros(1, 1),
            Family::ScalarCos { a } => DMatrix::from_element(1, 1, a * (self.wavenumber() * x).cos()),
            Family::TwoLevelGap { delta } => {
                let c = x.cos();
                DMatrix::from_row_slice(2, 2, &[c, *delta, *delta, -c])
            }
            Family::TwoLevelCross => {
                let (s, c) = x.sin_cos();
                DMatrix::from_row_slice(2, 2, &[s, 1.0 - c, 1.0 - c, -s])
            }
            Family::MultiLevel { .. } => {
                let (r, _) = self.rotation(x);
                let (diag, _) = self.diagonal(x);
                let dm = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag));
                symmetrize(&r * dm * r.transpose())
            }
        }
    }

    pub fn potential_derivative(&self, x: f64) -> DMatrix<f64> {
        let x = self.wrap(x);
        match &self.family {
            Family::Free => DMatrix::zeros(1, 1),
            Family::ScalarCos { a } => {
                let k = self.wavenumber();
                DMatrix::from_element(1, 1, -a * k * (k * x).sin())
            }
            Family::TwoLevelGap { .. } => {
                let s = x.sin();
                DMatrix::from_row_slice(2, 2, &[-s, 0.0, 0.0, s])
            }
            Family::TwoLevelCross => {
                let (s, c) = x.sin_cos();
                DMatrix::from_row_slice(2, 2, &[c, s, s, -c])
            }
            Family::MultiLevel { .. } => {
                let (r, dr) = self.rotation(x);
                let (diag, ddiag) = self.diagonal(x);
                let dm = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(diag));
                let ddm = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(ddiag));
                let a = &dr * &dm * r.transpose();
                let b = &r * ddm * r.transpose();
                symmetrize(&a + a.transpose() + b)
            }
        }
    }

    /// Fourth-order central difference of the potential with step 1e-5 L.
    pub fn potential_derivative_fd(&self, x: f64) -> DMatrix<f64> {
        let h = 1e-5 * self.length;
        let v = |s: f64| self.potential(x + s * h);
        (v(-2.0) - v(2.0) + (v(1.0) - v(-1.0)) * 8.0) / (12.0 * h)
    }

    /// Eigenvalues in ascending order when the family has them in closed form.
    pub fn closed_form_eigenvalues(&self, x: f64) -> Option<Vec<f64>> {
        let x = self.wrap(x);
        match &self.family {
            Family::Free => Some(vec![0.0]),
            Family::ScalarCos { a } => Some(vec![a * (self.wavenumber() * x).cos()]),
            Family::TwoLevelGap { delta } => {
                let r = (x.cos().powi(2) + delta * delta).sqrt();
                Some(vec![-r, r])
            }
            Family::TwoLevelCross => {
                let r = 2.0 * (0.5 * x).sin().abs();
                Some(vec![-r, r])
            }
            Family::MultiLevel { .. } => {
                let (mut diag, _) = self.diagonal(x);
                diag.sort_by(f64::total_cmp);
                Some(diag)
            }
        }
    }

    fn diagonal(&self, x: f64) -> (Vec<f64>, Vec<f64>) {
        let Family::MultiLevel { a, offset, gaps, eps, .. } = &self.family else {
            unreachable!("diagonal profile only exists for multi_level")
        };
        let k = self.wavenumber();
        let (s, c) = (k * x).sin_cos();
        let l0 = offset + a * c;
        let dl0 = -a * k * s;
        let mut vals = vec![l0];
        let mut ders = vec![dl0];
        for g in gaps {
            vals.push(l0 + g * (1.0 + eps * c));
            ders.push(dl0 - g * eps * k * s);
        }
        (vals, ders)
    }

    fn rotation(&self, x: f64) -> (DMatrix<f64>, DMatrix<f64>) {
        let Family::MultiLevel { eta, .. } = &self.family else {
            unreachable!("rotation only exists for multi_level")
        };
        let d = self.levels;
        let k = self.wavenumber();
        let theta = eta * (k * x).sin();
        let dtheta = eta * k * (k * x).cos();
        let (sn, cs) = theta.sin_cos();
        let givens = |n: usize, deriv: bool| {
            let mut g = if deriv { DMatrix::zeros(d, d) } else { DMatrix::identity(d, d) };
            let (a, b) = if deriv { (-sn * dtheta, cs * dtheta) } else { (cs, sn) };
            g[(n, n)] = a;
            g[(n, n + 1)] = -b;
            g[(n + 1, n)] = b;
            g[(n + 1, n + 1)] = a;
            g
        };
        let mut r = DMatrix::identity(d, d);
        for n in 0..d - 1 {
            r *= givens(n, false);
        }
        let mut dr = DMatrix::zeros(d, d);
        for m in 0..d - 1 {
            let mut term = DMatrix::identity(d, d);
            for n in 0..d - 1 {
                term *= givens(n, n == m);
            }
            dr += term;
        }
        (r, dr)
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

pub fn build_model(spec: &ModelSpec) -> Result<ModelSystem> {
    ModelSystem::build(spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn all_models() -> Vec<ModelSystem> {
        let two_pi = 2.0 * PI;
        [
            ModelSpec::new("free", 1, 3.0),
            ModelSpec::new("scalar_cos", 1, 5.0).with_param("a", 0.3),
            ModelSpec::new("two_level_gap", 2, two_pi).with_param("delta", 0.25),
            ModelSpec::new("two_level_cross", 2, two_pi),
            ModelSpec::new("multi_level", 3, 4.0)
                .with_param("gap_1", 1.0)
                .with_param("gap_2", 2.5)
                .with_param("a", 0.2)
                .with_param("eps", 0.1)
                .with_param("eta", 0.4),
        ]
        .iter()
        .map(|s| ModelSystem::build(s).unwrap())
        .collect()
    }

    #[test]
    fn free_potential_is_zero() {
        let m = &all_models()[0];
        for x in [0.0, 1.3, -7.0] {
            assert_eq!(m.potential(x), DMatrix::zeros(1, 1));
        }
    }

    #[test]
    fn gap_potential_at_origin() {
        let m = ModelSystem::build(&ModelSpec::new("two_level_gap", 2, 2.0 * PI).with_param("delta", 0.1)).unwrap();
        let v = m.potential(0.0);
        assert_eq!(v, DMatrix::from_row_slice(2, 2, &[1.0, 0.1, 0.1, -1.0]));
        assert_eq!(m.potential_derivative(0.0).abs().max(), 0.0);
    }

    #[test]
    fn gap_closed_form_minimum() {
        let m = &all_models()[2];
        let ev = m.closed_form_eigenvalues(PI / 2.0).unwrap();
        assert!((ev[1] - ev[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn cross_derivative_at_pi() {
        let m = &all_models()[3];
        let dv = m.potential_derivative(PI);
        let want = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]);
        assert!((dv - want).abs().max() < 1e-15);
        let ev = m.closed_form_eigenvalues(0.0).unwrap();
        assert_eq!(ev, vec![0.0, 0.0]);
    }

    #[test]
    fn fd_matches_analytic_on_gap() {
        let m = &all_models()[2];
        let mut x = 0.123;
        for _ in 0..100 {
            x = (x * 7.31 + 0.77) % (2.0 * PI);
            let diff = (m.potential_derivative(x) - m.potential_derivative_fd(x)).abs().max();
            assert!(diff < 1e-8, "x = {x}: {diff}");
        }
    }

    #[test]
    fn multi_level_eigenvalues_match_profile() {
        let m = &all_models()[4];
        for x in [0.0, 0.7, 2.2, 3.9] {
            let v = m.potential(x);
            let mut ev: Vec<f64> = v.symmetric_eigenvalues().iter().copied().collect();
            ev.sort_by(f64::total_cmp);
            let cf = m.closed_form_eigenvalues(x).unwrap();
            for (a, b) in ev.iter().zip(&cf) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spec_round_trip() {
        let spec = ModelSpec::new("multi_level", 2, 6.0)
            .with_param("gap_1", 0.5)
            .with_masses(&[64.0, 256.0])
            .with_temperature(0.05);
        let text = spec.to_json().unwrap();
        assert_eq!(ModelSpec::from_json(&text).unwrap(), spec);
        let parsed = ModelSpec::from_json(r#"{"family":"free","params":{},"L":1,"d":1,"M":[10],"T":0,"K":2}"#).unwrap();
        assert_eq!(ModelSpec::from_json(&parsed.to_json().unwrap()).unwrap(), parsed);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(matches!(
            ModelSystem::build(&ModelSpec::new("nope", 1, 1.0)),
            Err(Error::UnknownFamily(_))
        ));
        assert!(ModelSystem::build(&ModelSpec::new("two_level_gap", 2, 2.0 * PI).with_param("delta", 0.0)).is_err());
        assert!(ModelSystem::build(&ModelSpec::new("two_level_gap", 3, 2.0 * PI).with_param("delta", 0.2)).is_err());
        assert!(ModelSystem::build(&ModelSpec::new("free", 2, 1.0)).is_err());
        assert!(ModelSystem::build(&ModelSpec::new("scalar_cos", 1, 1.0).with_param("b", 1.0)).is_err());
        assert!(ModelSystem::build(&ModelSpec::new("free", 1, 1.0).with_masses(&[0.5])).is_err());
    }

    proptest! {
        #[test]
        fn symmetric_and_periodic(x in -50.0f64..50.0) {
            for m in all_models() {
                let v = m.potential(x);
                prop_assert_eq!((&v - v.transpose()).abs().max(), 0.0);
                let shifted = m.potential(x + m.length);
                prop_assert!((shifted - &v).abs().max() <= 1e-12);
            }
        }

        #[test]
        fn derivative_matches_central_difference(x in 0.0f64..6.0) {
            for m in all_models() {
                let h = 1e-6;
                let fd = (m.potential(x + h) - m.potential(x - h)) / (2.0 * h);
                let an = m.potential_derivative(x);
                let scale = an.abs().max().max(1.0);
                prop_assert!((fd - an).abs().max() <= 1e-6 * scale);
            }
        }
    }
}
