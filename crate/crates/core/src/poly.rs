//! Sparse multivariate polynomials and rational functions over `f64`.
//!
//! This is the symbolic layer used by the Faddeev-Jackiw engine and by the
//! scenario loader: potentials, charges and constraint fields are
//! polynomials, and affine eliminations with a non-constant pivot produce
//! rational functions. There is no gcd cancellation; denominators are only
//! normalised when they are constant.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Relative threshold under which coefficients produced by cancellation are dropped.
const PRUNE_REL: f64 = 1e-14;

#[derive(Debug, Error, PartialEq)]
pub enum PolyError {
    #[error("monomial has {got} exponents, expected {expected}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("variable index {index} out of range for {nvars} variables")]
    VariableOutOfRange { index: usize, nvars: usize },
    #[error("non-finite coefficient {0}")]
    NonFinite(f64),
}

/// One `coeff * x^exponents` term, the exchange format used in scenario files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Monomial {
    pub coeff: f64,
    pub exponents: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    nvars: usize,
    terms: BTreeMap<Vec<u32>, f64>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Polynomial { nvars, terms: BTreeMap::new() }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Self::zero(nvars);
        if c != 0.0 {
            p.terms.insert(vec![0; nvars], c);
        }
        p
    }

    /// The coordinate function `x_index`.
    pub fn var(nvars: usize, index: usize) -> Self {
        assert!(index < nvars, "variable {index} out of range for {nvars} variables");
        let mut e = vec![0; nvars];
        e[index] = 1;
        let mut p = Self::zero(nvars);
        p.terms.insert(e, 1.0);
        p
    }

    /// `sum_i c_i x_i + c0`.
    pub fn linear(coeffs: &[f64], c0: f64) -> Self {
        let n = coeffs.len();
        let mut p = Self::constant(n, c0);
        for (i, &c) in coeffs.iter().enumerate() {
            if c != 0.0 {
                let mut e = vec![0; n];
                e[i] = 1;
                p.terms.insert(e, c);
            }
        }
        p
    }

    pub fn from_monomials<'a, I>(nvars: usize, monomials: I) -> Result<Self, PolyError>
    where
        I: IntoIterator<Item = &'a Monomial>,
    {
        let mut p = Self::zero(nvars);
        for m in monomials {
            if m.exponents.len() != nvars {
                return Err(PolyError::ArityMismatch { expected: nvars, got: m.exponents.len() });
            }
            if !m.coeff.is_finite() {
                return Err(PolyError::NonFinite(m.coeff));
            }
            *p.terms.entry(m.exponents.clone()).or_insert(0.0) += m.coeff;
        }
        p.prune();
        Ok(p)
    }

    pub fn to_monomials(&self) -> Vec<Monomial> {
        self.terms
            .iter()
            .map(|(e, &c)| Monomial { coeff: c, exponents: e.clone() })
            .collect()
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn n_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&[u32], f64)> {
        self.terms.iter().map(|(e, &c)| (e.as_slice(), c))
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// `Some(c)` if the polynomial is the constant `c`.
    pub fn as_constant(&self) -> Option<f64> {
        match self.terms.len() {
            0 => Some(0.0),
            1 => {
                let (e, &c) = self.terms.iter().next().unwrap();
                e.iter().all(|&k| k == 0).then_some(c)
            }
            _ => None,
        }
    }

    pub fn degree_in(&self, var: usize) -> u32 {
        self.terms.keys().map(|e| e[var]).max().unwrap_or(0)
    }

    pub fn total_degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum()).max().unwrap_or(0)
    }

    pub fn contains_var(&self, var: usize) -> bool {
        self.terms.keys().any(|e| e[var] > 0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.nvars);
        self.terms
            .iter()
            .map(|(e, &c)| {
                e.iter()
                    .zip(x)
                    .fold(c, |acc, (&k, &xi)| if k == 0 { acc } else { acc * xi.powi(k as i32) })
            })
            .sum()
    }

    pub fn derivative(&self, var: usize) -> Self {
        let mut out = Self::zero(self.nvars);
        for (e, &c) in &self.terms {
            if e[var] > 0 {
                let mut e2 = e.clone();
                e2[var] -= 1;
                *out.terms.entry(e2).or_insert(0.0) += c * e[var] as f64;
            }
        }
        out.prune();
        out
    }

    pub fn gradient(&self) -> Vec<Polynomial> {
        (0..self.nvars).map(|i| self.derivative(i)).collect()
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut out = self.clone();
        for c in out.terms.values_mut() {
            *c *= s;
        }
        out.prune();
        out
    }

    pub fn powi(&self, k: u32) -> Self {
        let mut acc = Self::constant(self.nvars, 1.0);
        for _ in 0..k {
            acc = &acc * self;
        }
        acc
    }

    /// Splits `p = c1 * x_var + c0` when `p` is at most affine in `x_var`.
    /// Neither part contains `x_var`.
    pub fn split_affine(&self, var: usize) -> Option<(Polynomial, Polynomial)> {
        if self.degree_in(var) > 1 {
            return None;
        }
        let mut c1 = Self::zero(self.nvars);
        let mut c0 = Self::zero(self.nvars);
        for (e, &c) in &self.terms {
            if e[var] == 1 {
                let mut e2 = e.clone();
                e2[var] = 0;
                c1.terms.insert(e2, c);
            } else {
                c0.terms.insert(e.clone(), c);
            }
        }
        Some((c1, c0))
    }

    /// Replaces every variable `x_i` by `subs[i]`; all substitutes share one
    /// variable space, which becomes the variable space of the result.
    pub fn compose(&self, subs: &[Polynomial]) -> Self {
        assert_eq!(subs.len(), self.nvars, "one substitute per variable");
        let target = subs.first().map(|s| s.nvars).unwrap_or(0);
        assert!(subs.iter().all(|s| s.nvars == target));
        let mut cache: Vec<Vec<Polynomial>> = subs
            .iter()
            .map(|s| vec![Polynomial::constant(target, 1.0), s.clone()])
            .collect();
        let mut out = Self::zero(target);
        for (e, &c) in &self.terms {
            let mut term = Polynomial::constant(target, c);
            for (i, &k) in e.iter().enumerate() {
                if k == 0 {
                    continue;
                }
                while cache[i].len() <= k as usize {
                    let next = &cache[i][cache[i].len() - 1] * &subs[i];
                    cache[i].push(next);
                }
                term = &term * &cache[i][k as usize];
            }
            out.add_assign_ref(&term);
        }
        out.prune();
        out
    }

    /// Substitutes `x_var = value` where `value` lives in the same variable space.
    pub fn substitute(&self, var: usize, value: &Polynomial) -> Self {
        let subs: Vec<Polynomial> = (0..self.nvars)
            .map(|i| if i == var { value.clone() } else { Polynomial::var(self.nvars, i) })
            .collect();
        self.compose(&subs)
    }

    /// Drops variable slot `var`, which must not occur.
    pub fn remove_var(&self, var: usize) -> Self {
        assert!(!self.contains_var(var), "cannot remove variable {var} that still occurs");
        let terms = self
            .terms
            .iter()
            .map(|(e, &c)| {
                let mut e2 = e.clone();
                e2.remove(var);
                (e2, c)
            })
            .collect();
        Polynomial { nvars: self.nvars - 1, terms }
    }

    /// Inserts a fresh, unused variable slot at position `at`.
    pub fn insert_var(&self, at: usize) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|(e, &c)| {
                let mut e2 = e.clone();
                e2.insert(at, 0);
                (e2, c)
            })
            .collect();
        Polynomial { nvars: self.nvars + 1, terms }
    }

    /// Same polynomial viewed in a space with `extra` trailing unused variables.
    pub fn extend_vars(&self, extra: usize) -> Self {
        let mut p = self.clone();
        for _ in 0..extra {
            p = p.insert_var(p.nvars);
        }
        p
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.terms.values().fold(0.0, |m, c| m.max(c.abs()))
    }

    fn add_assign_ref(&mut self, other: &Polynomial) {
        debug_assert_eq!(self.nvars, other.nvars);
        for (e, &c) in &other.terms {
            *self.terms.entry(e.clone()).or_insert(0.0) += c;
        }
    }

    fn prune(&mut self) {
        let scale = self.max_abs_coeff().max(1.0);
        self.terms.retain(|_, c| c.abs() > PRUNE_REL * scale);
    }
}

impl Polynomial {
    /// Renders with the given variable names instead of `x0, x1, ...`.
    pub fn render(&self, names: &[String]) -> String {
        if self.terms.is_empty() {
            return "0".into();
        }
        let mut out = String::new();
        for (e, &c) in &self.terms {
            if !out.is_empty() {
                out.push_str(" + ");
            }
            out.push_str(&c.to_string());
            for (i, &k) in e.iter().enumerate() {
                let name = names.get(i).cloned().unwrap_or_else(|| format!("x{i}"));
                match k {
                    0 => {}
                    1 => out.push_str(&format!("*{name}")),
                    _ => out.push_str(&format!("*{name}^{k}")),
                }
            }
        }
        out
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(&[]))
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        let mut out = self.clone();
        out.add_assign_ref(rhs);
        out.prune();
        out
    }
}

impl Sub for &Polynomial {
    type Output = Polynomial;
    fn sub(self, rhs: &Polynomial) -> Polynomial {
        self + &(-rhs)
    }
}

impl Neg for &Polynomial {
    type Output = Polynomial;
    fn neg(self) -> Polynomial {
        self.scale(-1.0)
    }
}

impl Mul for &Polynomial {
    type Output = Polynomial;
    fn mul(self, rhs: &Polynomial) -> Polynomial {
        assert_eq!(self.nvars, rhs.nvars);
        let mut out = Polynomial::zero(self.nvars);
        for (ea, &ca) in &self.terms {
            for (eb, &cb) in &rhs.terms {
                let e: Vec<u32> = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                *out.terms.entry(e).or_insert(0.0) += ca * cb;
            }
        }
        out.prune();
        out
    }
}

/// `num / den` with polynomial numerator and denominator.
#[derive(Clone, Debug, PartialEq)]
pub struct RationalFunction {
    num: Polynomial,
    den: Polynomial,
}

impl From<Polynomial> for RationalFunction {
    fn from(num: Polynomial) -> Self {
        let n = num.nvars;
        RationalFunction { num, den: Polynomial::constant(n, 1.0) }
    }
}

impl RationalFunction {
    pub fn new(num: Polynomial, den: Polynomial) -> Self {
        assert_eq!(num.nvars, den.nvars);
        assert!(!den.is_zero(), "zero denominator");
        let mut r = RationalFunction { num, den };
        r.normalize();
        r
    }

    pub fn zero(nvars: usize) -> Self {
        Polynomial::zero(nvars).into()
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        Polynomial::constant(nvars, c).into()
    }

    pub fn nvars(&self) -> usize {
        self.num.nvars
    }

    pub fn numerator(&self) -> &Polynomial {
        &self.num
    }

    pub fn denominator(&self) -> &Polynomial {
        &self.den
    }

    /// The polynomial this function equals, if its denominator is constant.
    pub fn as_polynomial(&self) -> Option<&Polynomial> {
        self.den.as_constant().map(|_| &self.num)
    }

    pub fn is_zero(&self) -> bool {
        self.num.is_zero()
    }

    pub fn as_constant(&self) -> Option<f64> {
        self.as_polynomial().and_then(Polynomial::as_constant)
    }

    pub fn contains_var(&self, var: usize) -> bool {
        self.num.contains_var(var) || self.den.contains_var(var)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.num.eval(x) / self.den.eval(x)
    }

    pub fn derivative(&self, var: usize) -> Self {
        if self.den.as_constant().is_some() {
            return self.num.derivative(var).into();
        }
        let n = &(&self.num.derivative(var) * &self.den) - &(&self.num * &self.den.derivative(var));
        RationalFunction::new(n, &self.den * &self.den)
    }

    pub fn gradient(&self) -> Vec<RationalFunction> {
        (0..self.nvars()).map(|i| self.derivative(i)).collect()
    }

    pub fn scale(&self, s: f64) -> Self {
        RationalFunction { num: self.num.scale(s), den: self.den.clone() }
    }

    pub fn div(&self, rhs: &RationalFunction) -> Self {
        RationalFunction::new(&self.num * &rhs.den, &self.den * &rhs.num)
    }

    /// Replaces every variable `x_i` by the rational function `subs[i]`.
    pub fn compose(&self, subs: &[RationalFunction]) -> Self {
        let (n1, d1) = compose_poly_rational(&self.num, subs);
        let (n2, d2) = compose_poly_rational(&self.den, subs);
        // self = (n1 / prod b^dn) / (n2 / prod b^dd); cancel the common powers.
        let mut num = n1;
        let mut den = n2;
        for (i, s) in subs.iter().enumerate() {
            if s.den.as_constant().is_some() {
                continue;
            }
            let dn = d1[i];
            let dd = d2[i];
            if dn > dd {
                den = &den * &s.den.powi(dn - dd);
            } else if dd > dn {
                num = &num * &s.den.powi(dd - dn);
            }
        }
        RationalFunction::new(num, den)
    }

    pub fn substitute(&self, var: usize, value: &RationalFunction) -> Self {
        let n = self.nvars();
        let subs: Vec<RationalFunction> = (0..n)
            .map(|i| if i == var { value.clone() } else { Polynomial::var(n, i).into() })
            .collect();
        self.compose(&subs)
    }

    pub fn remove_var(&self, var: usize) -> Self {
        RationalFunction { num: self.num.remove_var(var), den: self.den.remove_var(var) }
    }

    pub fn extend_vars(&self, extra: usize) -> Self {
        RationalFunction { num: self.num.extend_vars(extra), den: self.den.extend_vars(extra) }
    }

    pub fn insert_var(&self, at: usize) -> Self {
        RationalFunction { num: self.num.insert_var(at), den: self.den.insert_var(at) }
    }

    fn normalize(&mut self) {
        if let Some(c) = self.den.as_constant() {
            if c != 1.0 {
                self.num = self.num.scale(1.0 / c);
                self.den = Polynomial::constant(self.den.nvars, 1.0);
            }
        }
    }
}

/// Composes a polynomial with rational substitutes; returns the numerator
/// and, per variable, the power of that variable's denominator that was
/// cleared (the full denominator is `prod_i subs[i].den ^ powers[i]`).
fn compose_poly_rational(p: &Polynomial, subs: &[RationalFunction]) -> (Polynomial, Vec<u32>) {
    assert_eq!(subs.len(), p.nvars);
    let target = subs.first().map(|s| s.nvars()).unwrap_or(0);
    let powers: Vec<u32> = (0..p.nvars)
        .map(|i| if subs[i].den.as_constant().is_some() { 0 } else { p.degree_in(i) })
        .collect();
    let mut out = Polynomial::zero(target);
    for (e, c) in p.terms() {
        let mut term = Polynomial::constant(target, c);
        for (i, &k) in e.iter().enumerate() {
            let s = &subs[i];
            if s.den.as_constant().is_some() {
                if k > 0 {
                    term = &term * &s.num.powi(k);
                }
            } else {
                term = &term * &s.num.powi(k);
                term = &term * &s.den.powi(powers[i] - k);
            }
        }
        out.add_assign_ref(&term);
    }
    out.prune();
    (out, powers)
}

impl Add for &RationalFunction {
    type Output = RationalFunction;
    fn add(self, rhs: &RationalFunction) -> RationalFunction {
        if self.den == rhs.den {
            return RationalFunction::new(&self.num + &rhs.num, self.den.clone());
        }
        RationalFunction::new(
            &(&self.num * &rhs.den) + &(&rhs.num * &self.den),
            &self.den * &rhs.den,
        )
    }
}

impl Sub for &RationalFunction {
    type Output = RationalFunction;
    fn sub(self, rhs: &RationalFunction) -> RationalFunction {
        self + &rhs.scale(-1.0)
    }
}

impl Mul for &RationalFunction {
    type Output = RationalFunction;
    fn mul(self, rhs: &RationalFunction) -> RationalFunction {
        RationalFunction::new(&self.num * &rhs.num, &self.den * &rhs.den)
    }
}

impl RationalFunction {
    pub fn render(&self, names: &[String]) -> String {
        if self.den.as_constant().is_some() {
            self.num.render(names)
        } else {
            format!("({}) / ({})", self.num.render(names), self.den.render(names))
        }
    }
}

impl fmt::Display for RationalFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render(&[]))
    }
}
