//! Monomials, posynomials and their log-space forms.
//!
//! With `x = exp(y)`, a monomial `d * prod x_i^a_i` becomes the affine
//! function `log d + a . y` and a posynomial becomes a log-sum-exp of affine
//! functions, which is convex in `y`.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Div, Mul};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PosyError {
    #[error("monomial coefficient must be positive and finite, got {0}")]
    BadCoefficient(f64),
    #[error("exponent must be finite, got {0}")]
    BadExponent(f64),
    #[error("variable x{index} must be positive, got {value}")]
    NonPositive { index: usize, value: f64 },
    #[error("variable x{index} is out of range for a point of length {len}")]
    MissingVariable { index: usize, len: usize },
    #[error("a posynomial needs at least one term")]
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VarId(pub usize);

impl fmt::Display for VarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    coeff: f64,
    exps: BTreeMap<VarId, f64>,
}

impl Monomial {
    pub fn new(
        coeff: f64,
        exps: impl IntoIterator<Item = (VarId, f64)>,
    ) -> Result<Self, PosyError> {
        if !(coeff.is_finite() && coeff > 0.0) {
            return Err(PosyError::BadCoefficient(coeff));
        }
        let mut map = BTreeMap::new();
        for (v, a) in exps {
            if !a.is_finite() {
                return Err(PosyError::BadExponent(a));
            }
            *map.entry(v).or_insert(0.0) += a;
        }
        map.retain(|_, a| *a != 0.0);
        Ok(Self { coeff, exps: map })
    }

    /// Panics on a non-positive coefficient.
    pub fn constant(c: f64) -> Self {
        Self::new(c, []).expect("positive constant")
    }

    pub fn var(v: VarId) -> Self {
        Self { coeff: 1.0, exps: BTreeMap::from([(v, 1.0)]) }
    }

    /// `c * v^a`. Panics on a non-positive coefficient or non-finite exponent.
    pub fn power(c: f64, v: VarId, a: f64) -> Self {
        Self::new(c, [(v, a)]).expect("valid monomial")
    }

    pub fn coeff(&self) -> f64 {
        self.coeff
    }

    pub fn exponents(&self) -> &BTreeMap<VarId, f64> {
        &self.exps
    }

    pub fn scale(&self, c: f64) -> Self {
        assert!(c.is_finite() && c > 0.0, "scale factor must be positive");
        Self { coeff: self.coeff * c, exps: self.exps.clone() }
    }

    pub fn recip(&self) -> Self {
        Self {
            coeff: 1.0 / self.coeff,
            exps: self.exps.iter().map(|(&v, &a)| (v, -a)).collect(),
        }
    }

    pub fn max_var(&self) -> Option<VarId> {
        self.exps.keys().next_back().copied()
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, PosyError> {
        let mut value = self.coeff;
        for (&v, &a) in &self.exps {
            value *= checked_var(x, v)?.powf(a);
        }
        Ok(value)
    }

    /// `log d + a . y`.
    pub fn log_eval(&self, y: &[f64]) -> f64 {
        self.coeff.ln() + self.exps.iter().map(|(v, a)| a * y[v.0]).sum::<f64>()
    }
}

fn checked_var(x: &[f64], v: VarId) -> Result<f64, PosyError> {
    let value = *x
        .get(v.0)
        .ok_or(PosyError::MissingVariable { index: v.0, len: x.len() })?;
    if !(value > 0.0 && value.is_finite()) {
        return Err(PosyError::NonPositive { index: v.0, value });
    }
    Ok(value)
}

impl Mul for Monomial {
    type Output = Monomial;
    fn mul(self, rhs: Monomial) -> Monomial {
        let mut exps = self.exps;
        for (v, a) in rhs.exps {
            *exps.entry(v).or_insert(0.0) += a;
        }
        exps.retain(|_, a| *a != 0.0);
        Monomial { coeff: self.coeff * rhs.coeff, exps }
    }
}

impl Div for Monomial {
    type Output = Monomial;
    fn div(self, rhs: Monomial) -> Monomial {
        self * rhs.recip()
    }
}

/// A nonempty sum of monomials with distinct exponent maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Posynomial {
    terms: Vec<Monomial>,
}

impl Posynomial {
    pub fn new(terms: Vec<Monomial>) -> Result<Self, PosyError> {
        if terms.is_empty() {
            return Err(PosyError::Empty);
        }
        let mut p = Posynomial { terms: Vec::with_capacity(terms.len()) };
        for t in terms {
            p.push_merged(t);
        }
        Ok(p)
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    fn push_merged(&mut self, t: Monomial) {
        match self.terms.iter_mut().find(|s| s.exps == t.exps) {
            Some(s) => s.coeff += t.coeff,
            None => self.terms.push(t),
        }
    }

    pub fn scale(&self, c: f64) -> Self {
        Posynomial { terms: self.terms.iter().map(|t| t.scale(c)).collect() }
    }

    pub fn max_var(&self) -> Option<VarId> {
        self.terms.iter().filter_map(Monomial::max_var).max()
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, PosyError> {
        self.terms.iter().map(|t| t.eval(x)).sum()
    }

    /// `log sum_k exp(log c_k + a_k . y)`, shifted by the largest exponent.
    pub fn log_eval(&self, y: &[f64]) -> f64 {
        let z: Vec<f64> = self.terms.iter().map(|t| t.log_eval(y)).collect();
        log_sum_exp(&z)
    }

    /// Dense gradient of [`Posynomial::log_eval`]: the softmax-weighted
    /// average of the term exponent vectors.
    pub fn log_grad(&self, y: &[f64]) -> Vec<f64> {
        let z: Vec<f64> = self.terms.iter().map(|t| t.log_eval(y)).collect();
        let lse = log_sum_exp(&z);
        let mut g = vec![0.0; y.len()];
        for (t, zk) in self.terms.iter().zip(&z) {
            let s = (zk - lse).exp();
            for (v, a) in &t.exps {
                g[v.0] += s * a;
            }
        }
        g
    }

    /// Dense Hessian `sum_k s_k a_k a_k^T - g g^T` of [`Posynomial::log_eval`],
    /// row-major `len x len`.
    pub fn log_hessian(&self, y: &[f64]) -> Vec<f64> {
        let n = y.len();
        let c = self.compile();
        let mut out = LogDerivs::default();
        c.derivs(y, &mut out);
        let mut h = vec![0.0; n * n];
        for (a, &ia) in c.support.iter().enumerate() {
            for (b, &ib) in c.support.iter().enumerate() {
                h[ia * n + ib] = out.hess[a * c.support.len() + b];
            }
        }
        h
    }

    /// Log-space form with exponents indexed into the local support.
    pub fn compile(&self) -> CompiledPosynomial {
        let mut support: Vec<usize> =
            self.terms.iter().flat_map(|t| t.exps.keys().map(|v| v.0)).collect();
        support.sort_unstable();
        support.dedup();
        let terms = self
            .terms
            .iter()
            .map(|t| CompiledTerm {
                log_coeff: t.coeff.ln(),
                exps: t
                    .exps
                    .iter()
                    .map(|(v, &a)| (support.binary_search(&v.0).unwrap(), a))
                    .collect(),
            })
            .collect();
        CompiledPosynomial { support, terms }
    }
}

impl From<Monomial> for Posynomial {
    fn from(m: Monomial) -> Self {
        Posynomial { terms: vec![m] }
    }
}

impl Add for Posynomial {
    type Output = Posynomial;
    fn add(mut self, rhs: Posynomial) -> Posynomial {
        for t in rhs.terms {
            self.push_merged(t);
        }
        self
    }
}

impl Add<Monomial> for Posynomial {
    type Output = Posynomial;
    fn add(self, rhs: Monomial) -> Posynomial {
        self + Posynomial::from(rhs)
    }
}

impl Mul<Monomial> for Posynomial {
    type Output = Posynomial;
    fn mul(self, rhs: Monomial) -> Posynomial {
        let terms = self.terms.into_iter().map(|t| t * rhs.clone()).collect();
        Posynomial::new(terms).expect("nonempty")
    }
}

impl Mul for Posynomial {
    type Output = Posynomial;
    fn mul(self, rhs: Posynomial) -> Posynomial {
        let mut terms = Vec::with_capacity(self.terms.len() * rhs.terms.len());
        for a in &self.terms {
            for b in &rhs.terms {
                terms.push(a.clone() * b.clone());
            }
        }
        Posynomial::new(terms).expect("nonempty")
    }
}

impl Div<Monomial> for Posynomial {
    type Output = Posynomial;
    fn div(self, rhs: Monomial) -> Posynomial {
        self * rhs.recip()
    }
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + z.iter().map(|&zk| (zk - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone)]
pub struct CompiledTerm {
    pub log_coeff: f64,
    /// `(local index, exponent)` pairs.
    pub exps: Vec<(usize, f64)>,
}

/// A posynomial in log space, restricted to the variables it touches.
#[derive(Debug, Clone)]
pub struct CompiledPosynomial {
    /// Sorted global variable indices.
    pub support: Vec<usize>,
    pub terms: Vec<CompiledTerm>,
}

/// Value, local gradient and local row-major Hessian of one log-posynomial.
#[derive(Debug, Clone, Default)]
pub struct LogDerivs {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
    weights: Vec<f64>,
}

impl CompiledPosynomial {
    fn term_logs(&self, y: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.terms.iter().map(|t| {
            t.log_coeff + t.exps.iter().map(|&(i, a)| a * y[self.support[i]]).sum::<f64>()
        }));
    }

    pub fn value(&self, y: &[f64]) -> f64 {
        let mut z = Vec::with_capacity(self.terms.len());
        self.term_logs(y, &mut z);
        log_sum_exp(&z)
    }

    pub fn derivs(&self, y: &[f64], out: &mut LogDerivs) {
        let k = self.support.len();
        self.term_logs(y, &mut out.weights);
        let lse = log_sum_exp(&out.weights);
        out.value = lse;
        for s in out.weights.iter_mut() {
            *s = (*s - lse).exp();
        }
        out.grad.clear();
        out.grad.resize(k, 0.0);
        out.hess.clear();
        out.hess.resize(k * k, 0.0);
        for (t, &s) in self.terms.iter().zip(&out.weights) {
            for &(i, a) in &t.exps {
                out.grad[i] += s * a;
                for &(j, b) in &t.exps {
                    out.hess[i * k + j] += s * a * b;
                }
            }
        }
        for i in 0..k {
            for j in 0..k {
                out.hess[i * k + j] -= out.grad[i] * out.grad[j];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const X1: VarId = VarId(0);
    const X2: VarId = VarId(1);

    #[test]
    fn eval_examples() {
        let p = Posynomial::from(Monomial::constant(3.0));
        assert_eq!(p.eval(&[0.7, 2.0]).unwrap(), 3.0);

        let p = Posynomial::from(Monomial::new(1.0, [(X1, 1.0), (X2, 1.0)]).unwrap())
            + Monomial::power(2.0, X1, -1.0);
        assert_eq!(p.eval(&[1.0, 1.0]).unwrap(), 3.0);

        let p = Posynomial::from(Monomial::power(2.0, X1, -0.5));
        assert_relative_eq!(p.eval(&[0.25]).unwrap(), 4.0, epsilon = 1e-15);
    }

    #[test]
    fn eval_rejects_nonpositive_points() {
        let p = Posynomial::from(Monomial::var(X2));
        assert_eq!(
            p.eval(&[1.0, 0.0]).unwrap_err(),
            PosyError::NonPositive { index: 1, value: 0.0 }
        );
        assert!(matches!(p.eval(&[1.0]), Err(PosyError::MissingVariable { .. })));
    }

    #[test]
    fn invalid_construction() {
        assert_eq!(Monomial::new(0.0, []).unwrap_err(), PosyError::BadCoefficient(0.0));
        assert!(Monomial::new(-1.0, []).is_err());
        assert!(Monomial::new(1.0, [(X1, f64::NAN)]).is_err());
        assert_eq!(Posynomial::new(vec![]).unwrap_err(), PosyError::Empty);
    }

    #[test]
    fn algebra_examples() {
        let x = Monomial::var(X1);
        let x_plus_1 = Posynomial::from(x.clone()) + Monomial::constant(1.0);
        let prod = x_plus_1.clone() * x.clone();
        let expected = Posynomial::from(Monomial::power(1.0, X1, 2.0)) + x.clone();
        assert_eq!(prod, expected);
        assert_eq!(prod / x.clone(), x_plus_1);

        let doubled = Posynomial::from(x.clone()) + Posynomial::from(x.clone());
        assert_eq!(doubled.terms().len(), 1);
        assert_eq!(doubled.terms()[0].coeff(), 2.0);
    }

    #[test]
    fn exponents_cancel_out() {
        let m = Monomial::var(X1) / Monomial::var(X1);
        assert!(m.exponents().is_empty());
    }

    #[test]
    fn log_examples() {
        let m = Monomial::new(3.0, [(X1, 2.0), (X2, -1.0)]).unwrap();
        let p = Posynomial::from(m);
        let y = [0.3, -0.7];
        assert_relative_eq!(p.log_eval(&y), 3f64.ln() + 0.6 + 0.7, epsilon = 1e-14);
        assert_eq!(p.log_grad(&y), vec![2.0, -1.0]);

        let p = Posynomial::from(Monomial::var(X1)) + Monomial::power(1.0, X1, -1.0);
        assert_relative_eq!(p.log_eval(&[0.0]), 2f64.ln(), epsilon = 1e-15);
        assert_eq!(p.log_grad(&[0.0]), vec![0.0]);
    }

    #[test]
    fn log_sum_exp_survives_large_arguments() {
        let p = Posynomial::from(Monomial::power(1.0, X1, 800.0)) + Monomial::power(1.0, X1, 799.0);
        let v = p.log_eval(&[1.0]);
        assert!(v.is_finite());
        assert_relative_eq!(v, 800.0 + (1.0 + (-1f64).exp()).ln(), epsilon = 1e-12);
    }

    fn posy_strategy(nvars: usize) -> impl Strategy<Value = Posynomial> {
        let term = (0.1f64..10.0, prop::collection::vec(-2.0f64..2.0, nvars)).prop_map(
            move |(c, a)| Monomial::new(c, a.into_iter().enumerate().map(|(i, e)| (VarId(i), e))).unwrap(),
        );
        prop::collection::vec(term, 1..5).prop_map(|t| Posynomial::new(t).unwrap())
    }

    fn mono_strategy(nvars: usize) -> impl Strategy<Value = Monomial> {
        (0.1f64..10.0, prop::collection::vec(-2.0f64..2.0, nvars)).prop_map(move |(c, a)| {
            Monomial::new(c, a.into_iter().enumerate().map(|(i, e)| (VarId(i), e))).unwrap()
        })
    }

    proptest! {
        #[test]
        fn mul_and_div_match_pointwise(
            p in posy_strategy(3),
            m in mono_strategy(3),
            x in prop::collection::vec(0.2f64..5.0, 3),
        ) {
            let px = p.eval(&x).unwrap();
            let mx = m.eval(&x).unwrap();
            let prod = (p.clone() * m.clone()).eval(&x).unwrap();
            let quot = (p / m).eval(&x).unwrap();
            prop_assert!((prod - px * mx).abs() <= 1e-10 * prod.abs());
            prop_assert!((quot - px / mx).abs() <= 1e-10 * quot.abs());
        }

        #[test]
        fn exp_log_eval_roundtrip(p in posy_strategy(3), x in prop::collection::vec(0.2f64..5.0, 3)) {
            let y: Vec<f64> = x.iter().map(|v| v.ln()).collect();
            let direct = p.eval(&x).unwrap();
            prop_assert!((p.log_eval(&y).exp() - direct).abs() <= 1e-12 * direct);
        }

        #[test]
        fn log_eval_is_convex_on_segments(
            p in posy_strategy(3),
            y1 in prop::collection::vec(-3.0f64..3.0, 3),
            y2 in prop::collection::vec(-3.0f64..3.0, 3),
            theta in 0.0f64..1.0,
        ) {
            let mid: Vec<f64> = y1.iter().zip(&y2).map(|(a, b)| theta * a + (1.0 - theta) * b).collect();
            let lhs = p.log_eval(&mid);
            let rhs = theta * p.log_eval(&y1) + (1.0 - theta) * p.log_eval(&y2);
            prop_assert!(lhs <= rhs + 1e-12);
        }

        #[test]
        fn log_grad_matches_central_differences(
            p in posy_strategy(3),
            y in prop::collection::vec(-2.0f64..2.0, 3),
        ) {
            let g = p.log_grad(&y);
            let h = 1e-5;
            for i in 0..3 {
                let mut yp = y.clone();
                let mut ym = y.clone();
                yp[i] += h;
                ym[i] -= h;
                let fd = (p.log_eval(&yp) - p.log_eval(&ym)) / (2.0 * h);
                prop_assert!((fd - g[i]).abs() <= 1e-6, "i={} fd={} g={}", i, fd, g[i]);
            }
        }

        #[test]
        fn log_hessian_matches_gradient_differences(
            p in posy_strategy(2),
            y in prop::collection::vec(-2.0f64..2.0, 2),
        ) {
            let hess = p.log_hessian(&y);
            let h = 1e-5;
            for j in 0..2 {
                let mut yp = y.clone();
                let mut ym = y.clone();
                yp[j] += h;
                ym[j] -= h;
                let gp = p.log_grad(&yp);
                let gm = p.log_grad(&ym);
                for i in 0..2 {
                    let fd = (gp[i] - gm[i]) / (2.0 * h);
                    prop_assert!((fd - hess[i * 2 + j]).abs() <= 1e-5);
                }
            }
        }
    }
}
