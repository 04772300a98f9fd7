//! Sparse multivariate polynomial arithmetic over named variables.
//!
//! Polynomials are immutable values in canonical form: terms are kept in a
//! sorted map keyed by exponent vector, coefficients below [`DROP_TOL`] are
//! dropped, and monomials are ordered graded-lexicographically so that every
//! derived object (Gram bases, serialized certificates) is reproducible
//! byte-for-byte.

mod parse;

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Canonical drop tolerance on coefficients. This is the single place where
/// exact-zero decisions are made: any term whose coefficient magnitude falls
/// below this threshold is removed during canonicalization.
pub const DROP_TOL: f64 = 1e-14;

/// Role of a variable in a parametric system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VarClass {
    /// System state.
    State,
    /// Design parameter.
    Design,
    /// Exogenous disturbance.
    Disturbance,
    /// Auxiliary (bookkeeping) variable.
    Auxiliary,
}

impl fmt::Display for VarClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VarClass::State => write!(f, "state"),
            VarClass::Design => write!(f, "design"),
            VarClass::Disturbance => write!(f, "disturbance"),
            VarClass::Auxiliary => write!(f, "auxiliary"),
        }
    }
}

/// Handle to a variable within a [`VarSpace`]. The class is fixed at creation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VarId(pub(crate) u32);

impl VarId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, PartialEq, Eq)]
struct SpaceInner {
    names: Vec<String>,
    classes: Vec<VarClass>,
}

/// An ordered collection of named, classed variables. Names are unique.
///
/// Cloning is cheap; two spaces compare equal when their variable lists agree,
/// so polynomials moved through serialization boundaries remain compatible.
#[derive(Debug, Clone)]
pub struct VarSpace {
    inner: Arc<SpaceInner>,
}

impl PartialEq for VarSpace {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner) || self.inner == other.inner
    }
}
impl Eq for VarSpace {}

/// Incremental builder for a [`VarSpace`].
#[derive(Debug, Default)]
pub struct VarSpaceBuilder {
    names: Vec<String>,
    classes: Vec<VarClass>,
}

impl VarSpaceBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a variable; errors on duplicate names.
    pub fn add(&mut self, name: impl Into<String>, class: VarClass) -> Result<VarId, PolyError> {
        let name = name.into();
        if self.names.iter().any(|n| *n == name) {
            return Err(PolyError::DuplicateVariable(name));
        }
        self.names.push(name);
        self.classes.push(class);
        Ok(VarId((self.names.len() - 1) as u32))
    }

    pub fn build(self) -> VarSpace {
        VarSpace {
            inner: Arc::new(SpaceInner {
                names: self.names,
                classes: self.classes,
            }),
        }
    }
}

impl VarSpace {
    /// Builds a space from `(name, class)` pairs.
    pub fn new(vars: &[(&str, VarClass)]) -> Result<Self, PolyError> {
        let mut b = VarSpaceBuilder::new();
        for (name, class) in vars {
            b.add(*name, *class)?;
        }
        Ok(b.build())
    }

    pub fn len(&self) -> usize {
        self.inner.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.names.is_empty()
    }

    pub fn name(&self, v: VarId) -> &str {
        &self.inner.names[v.index()]
    }

    pub fn class(&self, v: VarId) -> VarClass {
        self.inner.classes[v.index()]
    }

    /// Looks a variable up by name.
    pub fn var(&self, name: &str) -> Option<VarId> {
        self.inner
            .names
            .iter()
            .position(|n| n == name)
            .map(|i| VarId(i as u32))
    }

    pub fn vars(&self) -> impl Iterator<Item = VarId> + '_ {
        (0..self.len() as u32).map(VarId)
    }

    /// All variables of one class, in declaration order.
    pub fn vars_of_class(&self, class: VarClass) -> Vec<VarId> {
        self.vars().filter(|v| self.class(*v) == class).collect()
    }

    fn check_var(&self, v: VarId) -> Result<(), PolyError> {
        if v.index() < self.len() {
            Ok(())
        } else {
            Err(PolyError::UnknownVariable(format!("#{}", v.0)))
        }
    }
}

/// Errors raised by polynomial construction and arithmetic.
#[derive(Debug, Error)]
pub enum PolyError {
    #[error("polynomials belong to different variable spaces")]
    VarSpaceMismatch,
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("duplicate variable name `{0}`")]
    DuplicateVariable(String),
    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },
}

/// A monomial: an exponent per variable of its space. Zero exponents carry no
/// information; total degree is the exponent sum.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Monomial {
    exps: Vec<u8>,
}

impl Monomial {
    pub fn one(space: &VarSpace) -> Self {
        Monomial {
            exps: vec![0; space.len()],
        }
    }

    pub fn var(space: &VarSpace, v: VarId) -> Self {
        let mut m = Self::one(space);
        m.exps[v.index()] = 1;
        m
    }

    pub fn from_exps(exps: Vec<u8>) -> Self {
        Monomial { exps }
    }

    pub fn exp(&self, v: VarId) -> u8 {
        self.exps.get(v.index()).copied().unwrap_or(0)
    }

    pub fn total_degree(&self) -> u32 {
        self.exps.iter().map(|e| *e as u32).sum()
    }

    pub fn is_one(&self) -> bool {
        self.exps.iter().all(|e| *e == 0)
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        debug_assert_eq!(self.exps.len(), other.exps.len());
        Monomial {
            exps: self
                .exps
                .iter()
                .zip(&other.exps)
                .map(|(a, b)| a.checked_add(*b).expect("monomial exponent overflow"))
                .collect(),
        }
    }

    /// Variables with nonzero exponent.
    pub fn support(&self) -> impl Iterator<Item = VarId> + '_ {
        self.exps
            .iter()
            .enumerate()
            .filter(|(_, e)| **e > 0)
            .map(|(i, _)| VarId(i as u32))
    }

    fn eval(&self, point: &[f64]) -> f64 {
        let mut out = 1.0;
        for (i, &e) in self.exps.iter().enumerate() {
            if e > 0 {
                out *= point[i].powi(e as i32);
            }
        }
        out
    }
}

/// Graded-lexicographic order: lower total degree first; within one degree,
/// a higher exponent on an earlier variable sorts later in declaration order
/// reversed — i.e. ascending iteration yields `1, x, y, x^2, x*y, y^2` for a
/// space declared as `(x, y)`.
impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        match self.total_degree().cmp(&other.total_degree()) {
            Ordering::Equal => {}
            ord => return ord,
        }
        // Same degree: lexicographic with earlier variables weighted higher,
        // reversed so that x^2 < x*y < y^2 does NOT hold; we want x^2 first
        // when iterating ascending, hence compare reversed.
        for (a, b) in self.exps.iter().zip(&other.exps) {
            match a.cmp(b) {
                Ordering::Equal => {}
                // Higher exponent on an earlier variable => earlier in the
                // ascending iteration => "smaller" key.
                Ordering::Greater => return Ordering::Less,
                Ordering::Less => return Ordering::Greater,
            }
        }
        Ordering::Equal
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// A sparse multivariate polynomial with real coefficients in canonical form.
#[derive(Debug, Clone, PartialEq)]
pub struct Polynomial {
    space: VarSpace,
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    pub fn zero(space: &VarSpace) -> Self {
        Polynomial {
            space: space.clone(),
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(space: &VarSpace, c: f64) -> Self {
        let mut p = Self::zero(space);
        if c.abs() >= DROP_TOL {
            p.terms.insert(Monomial::one(space), c);
        }
        p
    }

    pub fn var(space: &VarSpace, v: VarId) -> Self {
        let mut p = Self::zero(space);
        p.terms.insert(Monomial::var(space, v), 1.0);
        p
    }

    /// Builds a polynomial from raw terms, merging duplicates and dropping
    /// sub-tolerance coefficients.
    pub fn from_terms(
        space: &VarSpace,
        terms: impl IntoIterator<Item = (Monomial, f64)>,
    ) -> Self {
        let mut map: BTreeMap<Monomial, f64> = BTreeMap::new();
        for (m, c) in terms {
            debug_assert_eq!(m.exps.len(), space.len());
            *map.entry(m).or_insert(0.0) += c;
        }
        map.retain(|_, c| c.abs() >= DROP_TOL);
        Polynomial {
            space: space.clone(),
            terms: map,
        }
    }

    pub fn monomial(space: &VarSpace, m: Monomial, c: f64) -> Self {
        Self::from_terms(space, [(m, c)])
    }

    /// Parses the human-readable normal form, e.g. `3*x^2*y - 1.5*v + 1`.
    pub fn parse(space: &VarSpace, input: &str) -> Result<Self, PolyError> {
        parse::parse_polynomial(space, input)
    }

    pub fn space(&self) -> &VarSpace {
        &self.space
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, f64)> {
        self.terms.iter().map(|(m, c)| (m, *c))
    }

    pub fn coefficient(&self, m: &Monomial) -> f64 {
        self.terms.get(m).copied().unwrap_or(0.0)
    }

    /// Largest coefficient magnitude (zero for the zero polynomial).
    pub fn max_coeff_norm(&self) -> f64 {
        self.terms.values().fold(0.0, |a, c| a.max(c.abs()))
    }

    pub fn total_degree(&self) -> u32 {
        self.terms.keys().map(|m| m.total_degree()).max().unwrap_or(0)
    }

    pub fn degree_in(&self, v: VarId) -> u32 {
        self.terms.keys().map(|m| m.exp(v) as u32).max().unwrap_or(0)
    }

    /// Largest combined exponent over all variables of one class within a
    /// single term.
    pub fn degree_in_class(&self, class: VarClass) -> u32 {
        self.terms
            .keys()
            .map(|m| {
                m.support()
                    .filter(|v| self.space.class(*v) == class)
                    .map(|v| m.exp(v) as u32)
                    .sum()
            })
            .max()
            .unwrap_or(0)
    }

    /// Variables actually appearing, in declaration order.
    pub fn support_vars(&self) -> Vec<VarId> {
        let mut seen = vec![false; self.space.len()];
        for m in self.terms.keys() {
            for v in m.support() {
                seen[v.index()] = true;
            }
        }
        seen.iter()
            .enumerate()
            .filter(|(_, s)| **s)
            .map(|(i, _)| VarId(i as u32))
            .collect()
    }

    fn check_space(&self, other: &Polynomial) -> Result<(), PolyError> {
        if self.space == other.space {
            Ok(())
        } else {
            Err(PolyError::VarSpaceMismatch)
        }
    }

    /// Coefficient-wise sum.
    pub fn add(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_space(other)?;
        let mut terms = self.terms.clone();
        for (m, c) in &other.terms {
            *terms.entry(m.clone()).or_insert(0.0) += c;
        }
        terms.retain(|_, c| c.abs() >= DROP_TOL);
        Ok(Polynomial {
            space: self.space.clone(),
            terms,
        })
    }

    pub fn sub(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.add(&other.neg())
    }

    pub fn neg(&self) -> Polynomial {
        Polynomial {
            space: self.space.clone(),
            terms: self.terms.iter().map(|(m, c)| (m.clone(), -c)).collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Polynomial {
        let mut terms: BTreeMap<Monomial, f64> = self
            .terms
            .iter()
            .map(|(m, c)| (m.clone(), c * s))
            .collect();
        terms.retain(|_, c| c.abs() >= DROP_TOL);
        Polynomial {
            space: self.space.clone(),
            terms,
        }
    }

    /// Distributive product.
    pub fn mul(&self, other: &Polynomial) -> Result<Polynomial, PolyError> {
        self.check_space(other)?;
        let mut terms: BTreeMap<Monomial, f64> = BTreeMap::new();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                *terms.entry(ma.mul(mb)).or_insert(0.0) += ca * cb;
            }
        }
        terms.retain(|_, c| c.abs() >= DROP_TOL);
        Ok(Polynomial {
            space: self.space.clone(),
            terms,
        })
    }

    pub fn pow(&self, n: u32) -> Polynomial {
        let mut out = Polynomial::constant(&self.space, 1.0);
        for _ in 0..n {
            out = out.mul(self).expect("same space");
        }
        out
    }

    /// Formal partial derivative with respect to `v`.
    pub fn differentiate(&self, v: VarId) -> Result<Polynomial, PolyError> {
        self.space.check_var(v)?;
        let mut terms: BTreeMap<Monomial, f64> = BTreeMap::new();
        for (m, c) in &self.terms {
            let e = m.exp(v);
            if e == 0 {
                continue;
            }
            let mut exps = m.exps.clone();
            exps[v.index()] = e - 1;
            *terms.entry(Monomial::from_exps(exps)).or_insert(0.0) += c * e as f64;
        }
        terms.retain(|_, c| c.abs() >= DROP_TOL);
        Ok(Polynomial {
            space: self.space.clone(),
            terms,
        })
    }

    /// Simultaneous substitution of polynomials for variables. Unbound
    /// variables are left in place; all bindings must share this space.
    pub fn substitute(
        &self,
        bindings: &BTreeMap<VarId, Polynomial>,
    ) -> Result<Polynomial, PolyError> {
        for (v, p) in bindings {
            self.space.check_var(*v)?;
            self.check_space(p)?;
        }
        // Precompute powers of each bound variable up to its max exponent.
        let mut max_exp: BTreeMap<VarId, u8> = BTreeMap::new();
        for m in self.terms.keys() {
            for v in bindings.keys() {
                let e = m.exp(*v);
                let entry = max_exp.entry(*v).or_insert(0);
                if e > *entry {
                    *entry = e;
                }
            }
        }
        let mut powers: BTreeMap<VarId, Vec<Polynomial>> = BTreeMap::new();
        for (v, max) in &max_exp {
            let base = &bindings[v];
            let mut pows = Vec::with_capacity(*max as usize + 1);
            pows.push(Polynomial::constant(&self.space, 1.0));
            for k in 1..=*max {
                let next = pows[(k - 1) as usize].mul(base)?;
                pows.push(next);
            }
            powers.insert(*v, pows);
        }
        let mut out = Polynomial::zero(&self.space);
        for (m, c) in &self.terms {
            let mut exps = m.exps.clone();
            let mut factor = Polynomial::constant(&self.space, *c);
            for (v, pows) in &powers {
                let e = m.exp(*v);
                if e > 0 {
                    exps[v.index()] = 0;
                    factor = factor.mul(&pows[e as usize])?;
                }
            }
            let residual = Polynomial::monomial(&self.space, Monomial::from_exps(exps), 1.0);
            out = out.add(&factor.mul(&residual)?)?;
        }
        Ok(out)
    }

    /// Evaluates at a full point, indexed by variable declaration order.
    pub fn evaluate(&self, point: &[f64]) -> f64 {
        assert_eq!(point.len(), self.space.len(), "point dimension mismatch");
        self.terms.iter().map(|(m, c)| c * m.eval(point)).sum()
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        // Leading (highest) term first.
        for (i, (m, c)) in self.terms.iter().rev().enumerate() {
            let mag = c.abs();
            if i == 0 {
                if *c < 0.0 {
                    write!(f, "-")?;
                }
            } else if *c < 0.0 {
                write!(f, " - ")?;
            } else {
                write!(f, " + ")?;
            }
            let vars: Vec<String> = m
                .support()
                .map(|v| {
                    let e = m.exp(v);
                    if e == 1 {
                        self.space.name(v).to_string()
                    } else {
                        format!("{}^{}", self.space.name(v), e)
                    }
                })
                .collect();
            if vars.is_empty() {
                write!(f, "{mag}")?;
            } else if (mag - 1.0).abs() < f64::EPSILON {
                write!(f, "{}", vars.join("*"))?;
            } else {
                write!(f, "{mag}*{}", vars.join("*"))?;
            }
        }
        Ok(())
    }
}

/// All monomials of total degree at most `max_degree` in the given variables,
/// in ascending graded-lexicographic order. The result has `C(n + d, d)`
/// elements for `n` variables and degree bound `d`.
pub fn monomial_basis(space: &VarSpace, vars: &[VarId], max_degree: u32) -> Vec<Monomial> {
    let mut out = Vec::new();
    let mut current = Monomial::one(space);
    enumerate_rec(space, vars, 0, max_degree, &mut current, &mut out);
    out.sort();
    out
}

fn enumerate_rec(
    space: &VarSpace,
    vars: &[VarId],
    idx: usize,
    remaining: u32,
    current: &mut Monomial,
    out: &mut Vec<Monomial>,
) {
    if idx == vars.len() {
        out.push(current.clone());
        return;
    }
    for e in 0..=remaining.min(u8::MAX as u32) {
        current.exps[vars[idx].index()] = e as u8;
        enumerate_rec(space, vars, idx + 1, remaining - e, current, out);
    }
    current.exps[vars[idx].index()] = 0;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn xy_space() -> VarSpace {
        VarSpace::new(&[("x", VarClass::State), ("y", VarClass::State)]).unwrap()
    }

    #[test]
    fn add_cancellation_and_identity() {
        let sp = xy_space();
        let x = sp.var("x").unwrap();
        let x2 = Polynomial::var(&sp, x).pow(2);
        let p = x2.add(&Polynomial::constant(&sp, 1.0)).unwrap();
        let sum = p.add(&x2.neg()).unwrap();
        assert_eq!(sum, Polynomial::constant(&sp, 1.0));

        let zero = Polynomial::zero(&sp);
        assert_eq!(p.add(&zero).unwrap(), p);
    }

    #[test]
    fn add_collects_terms() {
        let sp = xy_space();
        let p = Polynomial::parse(&sp, "x + y").unwrap();
        let q = Polynomial::parse(&sp, "x - y").unwrap();
        assert_eq!(p.add(&q).unwrap(), Polynomial::parse(&sp, "2*x").unwrap());
    }

    #[test]
    fn mul_examples() {
        let sp = xy_space();
        let a = Polynomial::parse(&sp, "x + 1").unwrap();
        let b = Polynomial::parse(&sp, "x - 1").unwrap();
        assert_eq!(a.mul(&b).unwrap(), Polynomial::parse(&sp, "x^2 - 1").unwrap());

        let p = Polynomial::parse(&sp, "3*x^2*y - 1.5*y + 1").unwrap();
        assert_eq!(p.mul(&Polynomial::constant(&sp, 1.0)).unwrap(), p);

        let s = Polynomial::parse(&sp, "x + y").unwrap();
        assert_eq!(
            s.pow(2),
            Polynomial::parse(&sp, "x^2 + 2*x*y + y^2").unwrap()
        );
    }

    #[test]
    fn var_space_mismatch() {
        let sp = xy_space();
        let sp2 = VarSpace::new(&[("z", VarClass::State)]).unwrap();
        let p = Polynomial::var(&sp, sp.var("x").unwrap());
        let q = Polynomial::var(&sp2, sp2.var("z").unwrap());
        assert!(matches!(p.add(&q), Err(PolyError::VarSpaceMismatch)));
    }

    #[test]
    fn differentiate_examples() {
        let sp = xy_space();
        let x = sp.var("x").unwrap();
        let p = Polynomial::parse(&sp, "x^2*y").unwrap();
        assert_eq!(
            p.differentiate(x).unwrap(),
            Polynomial::parse(&sp, "2*x*y").unwrap()
        );
        let q = Polynomial::parse(&sp, "y^3").unwrap();
        assert!(q.differentiate(x).unwrap().is_zero());
        let r = Polynomial::parse(&sp, "x^3 - 3*x").unwrap();
        assert_eq!(
            r.differentiate(x).unwrap(),
            Polynomial::parse(&sp, "3*x^2 - 3").unwrap()
        );
    }

    #[test]
    fn substitute_examples() {
        let sp = xy_space();
        let x = sp.var("x").unwrap();
        let p = Polynomial::parse(&sp, "x^2 + y").unwrap();
        let mut b = BTreeMap::new();
        b.insert(x, Polynomial::zero(&sp));
        assert_eq!(
            p.substitute(&b).unwrap(),
            Polynomial::parse(&sp, "y").unwrap()
        );

        let mut b = BTreeMap::new();
        b.insert(x, Polynomial::parse(&sp, "x - 1").unwrap());
        assert_eq!(
            Polynomial::parse(&sp, "x^2").unwrap().substitute(&b).unwrap(),
            Polynomial::parse(&sp, "x^2 - 2*x + 1").unwrap()
        );

        assert_eq!(p.evaluate(&[2.0, 1.0]), 5.0);
    }

    #[test]
    fn basis_counts_and_determinism() {
        let sp = xy_space();
        let vars: Vec<VarId> = sp.vars().collect();
        let b1 = monomial_basis(&sp, &vars, 1);
        assert_eq!(b1.len(), 3);
        assert!(b1[0].is_one());
        let b2 = monomial_basis(&sp, &vars, 2);
        assert_eq!(b2.len(), 6);
        assert_eq!(b2, monomial_basis(&sp, &vars, 2));

        let x = sp.var("x").unwrap();
        let b0 = monomial_basis(&sp, &[x], 0);
        assert_eq!(b0.len(), 1);
        assert!(b0[0].is_one());

        // C(n+d, d) for a bigger instance: n=3, d=4 -> C(7,4) = 35.
        let sp3 = VarSpace::new(&[
            ("a", VarClass::State),
            ("b", VarClass::State),
            ("c", VarClass::State),
        ])
        .unwrap();
        let vars3: Vec<VarId> = sp3.vars().collect();
        assert_eq!(monomial_basis(&sp3, &vars3, 4).len(), 35);
    }

    #[test]
    fn grlex_order_is_the_documented_one() {
        let sp = xy_space();
        let vars: Vec<VarId> = sp.vars().collect();
        let names: Vec<String> = monomial_basis(&sp, &vars, 2)
            .into_iter()
            .map(|m| Polynomial::monomial(&sp, m, 1.0).to_string())
            .collect();
        assert_eq!(names, vec!["1", "x", "y", "x^2", "x*y", "y^2"]);
    }

    fn random_poly(sp: &VarSpace, rng: &mut ChaCha8Rng, max_deg: u32) -> Polynomial {
        let vars: Vec<VarId> = sp.vars().collect();
        let basis = monomial_basis(sp, &vars, max_deg);
        let mut terms: Vec<(Monomial, f64)> = Vec::new();
        for m in basis {
            if rng.gen_bool(0.15) {
                terms.push((m, rng.gen_range(-3.0..3.0)));
            }
        }
        Polynomial::from_terms(sp, terms)
    }

    fn coeffs_close(a: &Polynomial, b: &Polynomial, rel: f64) -> bool {
        let diff = a.sub(b).unwrap();
        let scale = a.max_coeff_norm().max(b.max_coeff_norm()).max(1.0);
        diff.max_coeff_norm() <= rel * scale
    }

    #[test]
    fn ring_axioms_randomized() {
        let sp = VarSpace::new(&[
            ("x", VarClass::State),
            ("y", VarClass::State),
            ("z", VarClass::Design),
            ("w", VarClass::Disturbance),
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let p = random_poly(&sp, &mut rng, 4);
            let q = random_poly(&sp, &mut rng, 4);
            let r = random_poly(&sp, &mut rng, 4);
            // Commutativity.
            assert!(coeffs_close(
                &p.add(&q).unwrap(),
                &q.add(&p).unwrap(),
                1e-12
            ));
            assert!(coeffs_close(
                &p.mul(&q).unwrap(),
                &q.mul(&p).unwrap(),
                1e-12
            ));
            // Associativity.
            assert!(coeffs_close(
                &p.add(&q).unwrap().add(&r).unwrap(),
                &p.add(&q.add(&r).unwrap()).unwrap(),
                1e-12
            ));
            assert!(coeffs_close(
                &p.mul(&q).unwrap().mul(&r).unwrap(),
                &p.mul(&q.mul(&r).unwrap()).unwrap(),
                1e-12
            ));
            // Distributivity.
            assert!(coeffs_close(
                &p.mul(&q.add(&r).unwrap()).unwrap(),
                &p.mul(&q).unwrap().add(&p.mul(&r).unwrap()).unwrap(),
                1e-12
            ));
        }
    }

    #[test]
    fn product_rule_exact() {
        let sp = xy_space();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let p = random_poly(&sp, &mut rng, 3);
            let q = random_poly(&sp, &mut rng, 3);
            for v in sp.vars() {
                let lhs = p.mul(&q).unwrap().differentiate(v).unwrap();
                let rhs = p
                    .differentiate(v)
                    .unwrap()
                    .mul(&q)
                    .unwrap()
                    .add(&p.mul(&q.differentiate(v).unwrap()).unwrap())
                    .unwrap();
                assert!(coeffs_close(&lhs, &rhs, 1e-12));
            }
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let sp = VarSpace::new(&[
            ("x", VarClass::State),
            ("y", VarClass::State),
            ("z", VarClass::State),
        ])
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let h = 1e-5;
        for _ in 0..200 {
            let p = random_poly(&sp, &mut rng, 4);
            let point: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            for v in sp.vars() {
                let dp = p.differentiate(v).unwrap().evaluate(&point);
                let mut hi = point.clone();
                let mut lo = point.clone();
                hi[v.index()] += h;
                lo[v.index()] -= h;
                let fd = (p.evaluate(&hi) - p.evaluate(&lo)) / (2.0 * h);
                let scale = dp.abs().max(1.0);
                assert!(
                    (dp - fd).abs() <= 1e-6 * scale,
                    "d={dp} fd={fd} at {point:?}"
                );
            }
        }
    }

    #[test]
    fn substitute_then_evaluate_consistency() {
        let sp = xy_space();
        let x = sp.var("x").unwrap();
        let y = sp.var("y").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..200 {
            let p = random_poly(&sp, &mut rng, 4);
            let g = random_poly(&sp, &mut rng, 2);
            let point: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut b = BTreeMap::new();
            b.insert(x, g.clone());
            let composed = p.substitute(&b).unwrap().evaluate(&point);
            let direct = p.evaluate(&[g.evaluate(&point), point[y.index()]]);
            let scale = direct.abs().max(1.0);
            assert!((composed - direct).abs() <= 1e-12 * scale.max(composed.abs()));
        }
    }

    #[test]
    fn display_parse_round_trip() {
        let sp = VarSpace::new(&[
            ("x", VarClass::State),
            ("y", VarClass::State),
            ("v", VarClass::Design),
        ])
        .unwrap();
        let p = Polynomial::parse(&sp, "3*x^2*y - 1.5*v + 1").unwrap();
        let s = p.to_string();
        assert_eq!(s, "3*x^2*y - 1.5*v + 1");
        assert_eq!(Polynomial::parse(&sp, &s).unwrap(), p);

        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let q = random_poly(&sp, &mut rng, 4);
            let round = Polynomial::parse(&sp, &q.to_string()).unwrap();
            assert_eq!(round, q, "round-trip failed for `{q}`");
        }
    }

    #[test]
    fn parse_rejects_unknown_variable() {
        let sp = xy_space();
        assert!(matches!(
            Polynomial::parse(&sp, "x + q"),
            Err(PolyError::UnknownVariable(_))
        ));
    }
}
