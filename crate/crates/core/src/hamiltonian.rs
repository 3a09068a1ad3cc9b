//! Hamiltonians with p-growth and their Lagrangians.
//!
//! The power family `H(t,x,ξ) = |ξ|^p / (p a(t,x)^{p-1}) + offset` has the
//! closed-form Legendre transform `L(t,x,v) = a(t,x) |v|^q / q - offset`.
//! Custom Hamiltonians are transformed by a brute-force concave maximization
//! and must be certified against the growth envelope
//! `(1/C̄)|ξ|^p - C̄ <= H <= C̄|ξ|^p + C̄` before a solver accepts them.

use std::fmt;
use std::sync::Arc;

use crate::error::{domain, Error, Result};
use crate::grid::ScalarField;

pub type CoefficientFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
pub type HamiltonianFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync>;

/// Coefficient `a(t,x) > 0` of the power family.
#[derive(Clone)]
pub enum Coefficient {
    Constant(f64),
    /// Node-sampled field, interpolated between nodes.
    Nodal(ScalarField),
    Function(CoefficientFn),
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Constant(a) => write!(f, "Constant({a})"),
            Coefficient::Nodal(_) => write!(f, "Nodal(..)"),
            Coefficient::Function(_) => write!(f, "Function(..)"),
        }
    }
}

impl Coefficient {
    pub fn at(&self, t: f64, x: &[f64]) -> f64 {
        match self {
            Coefficient::Constant(a) => *a,
            Coefficient::Nodal(field) => field.interp(t, x),
            Coefficient::Function(g) => g(t, x),
        }
    }

    /// Whether the coefficient depends on time.
    pub fn is_time_dependent(&self) -> bool {
        match self {
            Coefficient::Constant(_) => false,
            Coefficient::Nodal(field) => {
                let g = field.grid();
                (1..g.nt).any(|k| field.level(k) != field.level(0))
            }
            Coefficient::Function(_) => true,
        }
    }
}

#[derive(Clone)]
pub enum HamiltonianKind {
    Power { coefficient: Coefficient, offset: f64 },
    Custom { eval: HamiltonianFn, certified: bool },
}

impl fmt::Debug for HamiltonianKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HamiltonianKind::Power { coefficient, offset } => f
                .debug_struct("Power")
                .field("coefficient", coefficient)
                .field("offset", offset)
                .finish(),
            HamiltonianKind::Custom { certified, .. } => {
                f.debug_struct("Custom").field("certified", certified).finish()
            }
        }
    }
}

/// Search settings for the brute-force Legendre transform.
#[derive(Clone, Copy, Debug)]
pub struct LegendreOptions {
    pub initial_radius: f64,
    /// Maximum number of radius doublings (the cap is `2^max_doublings` times the initial radius).
    pub max_doublings: u32,
    pub tol: f64,
}

impl Default for LegendreOptions {
    fn default() -> Self {
        LegendreOptions {
            initial_radius: 1.0,
            max_doublings: 20,
            tol: 1e-9,
        }
    }
}

/// Hamiltonian with growth exponent `p` and envelope constant `C̄`.
#[derive(Clone, Debug)]
pub struct HamiltonianModel {
    pub p: f64,
    pub q: f64,
    pub bar_c: f64,
    pub kind: HamiltonianKind,
    pub legendre: LegendreOptions,
}

impl HamiltonianModel {
    pub fn power(p: f64, bar_c: f64, coefficient: Coefficient, offset: f64) -> Result<Self> {
        check_exponents(p, bar_c)?;
        if let Coefficient::Constant(a) = coefficient {
            if !(a > 0.0 && a.is_finite()) {
                return domain(format!("coefficient must be positive, got {a}"));
            }
        }
        if let Coefficient::Nodal(field) = &coefficient {
            if field.min() <= 0.0 {
                return domain("coefficient field must be strictly positive");
            }
        }
        if !offset.is_finite() {
            return domain("offset must be finite");
        }
        Ok(HamiltonianModel {
            p,
            q: p / (p - 1.0),
            bar_c,
            kind: HamiltonianKind::Power { coefficient, offset },
            legendre: LegendreOptions::default(),
        })
    }

    /// `|ξ|^p / p`, the unit-coefficient power model.
    pub fn unit_power(p: f64, bar_c: f64) -> Result<Self> {
        Self::power(p, bar_c, Coefficient::Constant(1.0), 0.0)
    }

    /// Custom evaluator; uncertified until [`HamiltonianModel::certify`] succeeds.
    pub fn custom(p: f64, bar_c: f64, eval: HamiltonianFn) -> Result<Self> {
        check_exponents(p, bar_c)?;
        Ok(HamiltonianModel {
            p,
            q: p / (p - 1.0),
            bar_c,
            kind: HamiltonianKind::Custom {
                eval,
                certified: false,
            },
            legendre: LegendreOptions::default(),
        })
    }

    /// Runs the envelope check and, on success, marks a custom model usable by the solvers.
    pub fn certify(mut self, samples: &[EnvelopeSample]) -> Result<(Self, EnvelopeReport)> {
        let report = check_growth_envelope(&self, samples)?;
        if !report.pass {
            return Err(Error::GrowthViolation(format!(
                "declared C̄ = {} but samples need {}",
                self.bar_c, report.certified_bar_c
            )));
        }
        if let HamiltonianKind::Custom { certified, .. } = &mut self.kind {
            *certified = true;
        }
        Ok((self, report))
    }

    /// Whether a solver may use this model.
    pub fn is_usable(&self) -> bool {
        match &self.kind {
            HamiltonianKind::Power { .. } => true,
            HamiltonianKind::Custom { certified, .. } => *certified,
        }
    }

    /// `a(t,x)` for the power family.
    pub fn coefficient_at(&self, t: f64, x: &[f64]) -> Option<f64> {
        match &self.kind {
            HamiltonianKind::Power { coefficient, .. } => Some(coefficient.at(t, x)),
            HamiltonianKind::Custom { .. } => None,
        }
    }

    pub fn offset(&self) -> f64 {
        match &self.kind {
            HamiltonianKind::Power { offset, .. } => *offset,
            HamiltonianKind::Custom { .. } => 0.0,
        }
    }

    pub fn eval_hamiltonian(&self, t: f64, x: &[f64], xi: &[f64]) -> Result<f64> {
        if xi.iter().any(|v| !v.is_finite()) {
            return domain("non-finite momentum");
        }
        Ok(match &self.kind {
            HamiltonianKind::Power { coefficient, offset } => {
                power_h(self.p, coefficient.at(t, x), norm(xi)) + offset
            }
            HamiltonianKind::Custom { eval, .. } => eval(t, x, xi),
        })
    }

    /// `L(t,x,v) = sup_ξ (⟨ξ,v⟩ - H(t,x,ξ))`.
    pub fn legendre_transform(&self, t: f64, x: &[f64], v: &[f64]) -> Result<f64> {
        if v.iter().any(|c| !c.is_finite()) {
            return domain("non-finite velocity");
        }
        match &self.kind {
            HamiltonianKind::Power { coefficient, offset } => {
                Ok(power_l(self.q, coefficient.at(t, x), norm(v)) - offset)
            }
            HamiltonianKind::Custom { eval, .. } => {
                let h = |xi: &[f64]| eval(t, x, xi);
                brute_force_conjugate(&h, v, self.legendre).map(|r| r.value)
            }
        }
    }

    /// `D_ξ H` for the power family.
    pub fn momentum_gradient(&self, t: f64, x: &[f64], xi: &[f64]) -> Option<Vec<f64>> {
        let a = self.coefficient_at(t, x)?;
        let n = norm(xi);
        if n == 0.0 {
            return Some(vec![0.0; xi.len()]);
        }
        let s = n.powf(self.p - 2.0) / a.powf(self.p - 1.0);
        Some(xi.iter().map(|c| c * s).collect())
    }
}

fn check_exponents(p: f64, bar_c: f64) -> Result<()> {
    if !(p > 1.0 && p.is_finite()) {
        return domain(format!("growth exponent must exceed 1, got {p}"));
    }
    if !(bar_c >= 1.0 && bar_c.is_finite()) {
        return domain(format!("envelope constant must be >= 1, got {bar_c}"));
    }
    Ok(())
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    match v.len() {
        1 => v[0].abs(),
        _ => v.iter().map(|c| c * c).sum::<f64>().sqrt(),
    }
}

/// `s^p / (p a^{p-1})` for `s = |ξ|`.
pub fn power_h(p: f64, a: f64, s: f64) -> f64 {
    if p == 2.0 {
        s * s / (2.0 * a)
    } else {
        s.powf(p) / (p * a.powf(p - 1.0))
    }
}

/// `a s^q / q` for `s = |v|`.
pub fn power_l(q: f64, a: f64, s: f64) -> f64 {
    if q == 2.0 {
        0.5 * a * s * s
    } else {
        a * s.powf(q) / q
    }
}

/// Result of a brute-force conjugate evaluation.
#[derive(Clone, Debug)]
pub struct ConjugateResult {
    pub value: f64,
    pub argmax: Vec<f64>,
    pub radius: f64,
}

/// `sup_ξ (⟨ξ,v⟩ - h(ξ))` over balls of doubling radius; stops once the sup
/// is stable and attained away from the ball's edge.
pub fn brute_force_conjugate(
    h: &dyn Fn(&[f64]) -> f64,
    v: &[f64],
    opts: LegendreOptions,
) -> Result<ConjugateResult> {
    let d = v.len();
    let mut radius = opts.initial_radius.max(1e-12);
    let mut prev: Option<(f64, Vec<f64>)> = None;
    for _ in 0..=opts.max_doublings {
        let (val, arg) = maximize_in_box(h, v, radius);
        let interior = arg.iter().all(|c| c.abs() < 0.75 * radius);
        if let Some((pv, _)) = &prev {
            if interior && (val - pv).abs() <= opts.tol * (1.0 + val.abs()) {
                return Ok(ConjugateResult {
                    value: val,
                    argmax: arg,
                    radius,
                });
            }
        }
        prev = Some((val, arg));
        radius *= 2.0;
    }
    let _ = d;
    Err(Error::GrowthViolation(format!(
        "conjugate did not stabilize within radius {}",
        radius / 2.0
    )))
}

fn maximize_in_box(h: &dyn Fn(&[f64]) -> f64, v: &[f64], radius: f64) -> (f64, Vec<f64>) {
    let obj = |xi: &[f64]| xi.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() - h(xi);
    const N: usize = 64;
    let step = 2.0 * radius / N as f64;
    let d = v.len();
    let mut best = f64::NEG_INFINITY;
    let mut arg = vec![0.0; d];
    if d == 1 {
        for i in 0..=N {
            let xi = [-radius + i as f64 * step];
            let val = obj(&xi);
            if val > best {
                best = val;
                arg = xi.to_vec();
            }
        }
        let lo = (arg[0] - step).max(-radius);
        let hi = (arg[0] + step).min(radius);
        let (x, val) = golden_max(|s| obj(&[s]), lo, hi, 1e-13 * (1.0 + radius));
        if val > best {
            best = val;
            arg = vec![x];
        }
    } else {
        for i in 0..=N {
            for j in 0..=N {
                let xi = [-radius + i as f64 * step, -radius + j as f64 * step];
                let val = obj(&xi);
                if val > best {
                    best = val;
                    arg = xi.to_vec();
                }
            }
        }
        let (lo0, hi0) = ((arg[0] - step).max(-radius), (arg[0] + step).min(radius));
        let (lo1, hi1) = ((arg[1] - step).max(-radius), (arg[1] + step).min(radius));
        let tol = 1e-11 * (1.0 + radius);
        let inner = |s: f64| golden_max(|r| obj(&[s, r]), lo1, hi1, tol);
        let (x0, val) = golden_max(|s| inner(s).1, lo0, hi0, tol);
        if val > best {
            best = val;
            arg = vec![x0, inner(x0).0];
        }
    }
    (best, arg)
}

/// Golden-section maximization on `[lo, hi]`; returns `(argmax, max)`.
pub(crate) fn golden_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let mut a = hi - r * (hi - lo);
    let mut b = lo + r * (hi - lo);
    let mut fa = f(a);
    let mut fb = f(b);
    while hi - lo > tol {
        if fa >= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - r * (hi - lo);
            fa = f(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + r * (hi - lo);
            fb = f(b);
        }
    }
    let mut best = (lo, f(lo));
    for x in [a, b, hi] {
        let v = f(x);
        if v > best.1 {
            best = (x, v);
        }
    }
    best
}

/// A sample point for the envelope check.
#[derive(Clone, Debug)]
pub struct EnvelopeSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
}

/// Outcome of [`check_growth_envelope`].
#[derive(Clone, Debug, serde::Serialize)]
pub struct EnvelopeReport {
    pub pass: bool,
    /// Smallest `C̄ >= 1` satisfying both envelope inequalities on every sample.
    pub certified_bar_c: f64,
    pub declared_bar_c: f64,
    /// Index of the sample that determined the certified constant.
    pub worst_sample: usize,
}

/// Checks `(1/C̄)|ξ|^p - C̄ <= H <= C̄|ξ|^p + C̄` on the samples.
pub fn check_growth_envelope(model: &HamiltonianModel, samples: &[EnvelopeSample]) -> Result<EnvelopeReport> {
    if samples.is_empty() {
        return domain("envelope check needs at least one sample");
    }
    let mut need = 1.0f64;
    let mut worst = 0;
    for (i, s) in samples.iter().enumerate() {
        let h = model.eval_hamiltonian(s.t, &s.x, &s.xi)?;
        let np = norm(&s.xi).powf(model.p);
        // H <= C(np + 1)
        let upper = h / (np + 1.0);
        // np/C - C <= H  <=>  C^2 + H C - np >= 0
        let lower = 0.5 * (-h + (h * h + 4.0 * np).sqrt());
        let c = upper.max(lower);
        if c > need {
            need = c;
            worst = i;
        }
    }
    Ok(EnvelopeReport {
        pass: need <= model.bar_c * (1.0 + 1e-12),
        certified_bar_c: need,
        declared_bar_c: model.bar_c,
        worst_sample: worst,
    })
}

/// Deterministic momentum samples at one point: geometric magnitudes up to
/// `radius` along `directions` evenly spread directions (both signs in 1D).
pub fn envelope_samples(t: f64, x: &[f64], radius: f64, magnitudes: usize, directions: usize) -> Vec<EnvelopeSample> {
    let d = x.len();
    let mut out = vec![EnvelopeSample {
        t,
        x: x.to_vec(),
        xi: vec![0.0; d],
    }];
    let mags: Vec<f64> = (0..magnitudes)
        .map(|i| radius * (1e-3f64).powf(1.0 - i as f64 / (magnitudes.max(2) - 1) as f64))
        .collect();
    let dirs: Vec<Vec<f64>> = if d == 1 {
        vec![vec![1.0], vec![-1.0]]
    } else {
        (0..directions.max(1))
            .map(|j| {
                let a = 2.0 * std::f64::consts::PI * j as f64 / directions.max(1) as f64;
                vec![a.cos(), a.sin()]
            })
            .collect()
    };
    for m in &mags {
        for dir in &dirs {
            out.push(EnvelopeSample {
                t,
                x: x.to_vec(),
                xi: dir.iter().map(|c| c * m).collect(),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_values() {
        let m = HamiltonianModel::unit_power(2.0, 2.0).unwrap();
        assert_eq!(m.eval_hamiltonian(0.0, &[0.0], &[2.0]).unwrap(), 2.0);
        assert_eq!(m.eval_hamiltonian(0.0, &[0.0], &[0.0]).unwrap(), 0.0);
        assert_eq!(m.legendre_transform(0.0, &[0.0], &[3.0]).unwrap(), 4.5);
        assert_eq!(m.legendre_transform(0.0, &[0.0], &[0.0]).unwrap(), 0.0);
        let m2 = HamiltonianModel::power(2.0, 2.0, Coefficient::Constant(2.0), 0.0).unwrap();
        assert_eq!(m2.eval_hamiltonian(0.0, &[0.0], &[2.0]).unwrap(), 1.0);
        assert!(m.eval_hamiltonian(0.0, &[0.0], &[f64::NAN]).is_err());
    }

    #[test]
    fn custom_quadratic_conjugate() {
        let m = HamiltonianModel::custom(2.0, 2.0, Arc::new(|_, _, xi: &[f64]| 0.5 * xi[0] * xi[0])).unwrap();
        let l = m.legendre_transform(0.0, &[0.0], &[1.0]).unwrap();
        assert!((l - 0.5).abs() < 1e-8, "{l}");
        let l = m.legendre_transform(0.0, &[0.0], &[37.0]).unwrap();
        assert!((l - 0.5 * 37.0 * 37.0).abs() < 1e-6 * 37.0 * 37.0);
    }

    #[test]
    fn custom_two_dimensional_conjugate() {
        let m = HamiltonianModel::custom(
            2.0,
            2.0,
            Arc::new(|_, _, xi: &[f64]| 0.5 * (xi[0] * xi[0] + xi[1] * xi[1])),
        )
        .unwrap();
        let l = m.legendre_transform(0.0, &[0.0, 0.0], &[1.0, -2.0]).unwrap();
        assert!((l - 2.5).abs() < 1e-7, "{l}");
    }

    #[test]
    fn linear_hamiltonian_has_no_conjugate() {
        let m = HamiltonianModel::custom(2.0, 2.0, Arc::new(|_, _, xi: &[f64]| xi[0].abs())).unwrap();
        assert!(matches!(
            m.legendre_transform(0.0, &[0.0], &[2.0]),
            Err(Error::GrowthViolation(_))
        ));
    }

    #[test]
    fn envelope_examples() {
        let samples = envelope_samples(0.0, &[0.0], 1e3, 40, 1);
        let quad = HamiltonianModel::unit_power(2.0, 2.0).unwrap();
        let r = check_growth_envelope(&quad, &samples).unwrap();
        assert!(r.pass && r.certified_bar_c <= 2.0);

        let lin = HamiltonianModel::custom(2.0, 2.0, Arc::new(|_, _, xi: &[f64]| xi[0].abs())).unwrap();
        let r = check_growth_envelope(&lin, &samples).unwrap();
        assert!(!r.pass);
        assert!(samples[r.worst_sample].xi[0].abs() > 100.0);

        let shifted =
            HamiltonianModel::custom(2.0, 11.0, Arc::new(|_, _, xi: &[f64]| 0.5 * xi[0] * xi[0] - 10.0)).unwrap();
        let r = check_growth_envelope(&shifted, &samples).unwrap();
        assert!(r.pass);
        assert!((r.certified_bar_c - 10.0).abs() < 1e-9, "{}", r.certified_bar_c);
    }

    #[test]
    fn certification_gates_custom_models() {
        let m = HamiltonianModel::custom(2.0, 2.0, Arc::new(|_, _, xi: &[f64]| 0.5 * xi[0] * xi[0])).unwrap();
        assert!(!m.is_usable());
        let (m, _) = m.certify(&envelope_samples(0.0, &[0.0], 100.0, 20, 1)).unwrap();
        assert!(m.is_usable());
    }
}
