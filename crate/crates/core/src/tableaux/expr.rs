//! Coefficient functions as expression trees over φ-functions of z.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use crate::phi::{phi_scalar, PhiError};

/// A scalar function of z built from φ_k(c·z), constants, sums, products and
/// multiplication by z. Evaluated at z = hL it becomes a matrix function.
#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientExpr {
    /// φ_k(c·z)
    Phi { k: u32, c: f64 },
    /// r·identity
    Const(f64),
    Scale(f64, Box<CoefficientExpr>),
    Sum(Vec<CoefficientExpr>),
    /// left(z)·right(z); applied to a vector, `right` acts first.
    Prod(Box<CoefficientExpr>, Box<CoefficientExpr>),
    /// z·child(z)
    ZMul(Box<CoefficientExpr>),
}

use CoefficientExpr::*;

impl CoefficientExpr {
    pub fn phi(k: u32, c: f64) -> Self {
        Phi { k, c }
    }

    pub fn zero() -> Self {
        Const(0.0)
    }

    pub fn one() -> Self {
        Const(1.0)
    }

    pub fn scale(self, r: f64) -> Self {
        Scale(r, Box::new(self))
    }

    pub fn zmul(self) -> Self {
        ZMul(Box::new(self))
    }

    pub fn prod(self, right: CoefficientExpr) -> Self {
        Prod(Box::new(self), Box::new(right))
    }

    /// True for a literal zero constant (after simplification, every zero
    /// expression built from the catalog has this form).
    pub fn is_zero(&self) -> bool {
        matches!(self, Const(r) if *r == 0.0)
    }

    /// Calls `f(k, c)` for every φ node.
    pub fn visit_phi(&self, f: &mut impl FnMut(u32, f64)) {
        match self {
            Phi { k, c } => f(*k, *c),
            Const(_) => {}
            Scale(_, e) | ZMul(e) => e.visit_phi(f),
            Sum(es) => es.iter().for_each(|e| e.visit_phi(f)),
            Prod(l, r) => {
                l.visit_phi(f);
                r.visit_phi(f);
            }
        }
    }

    /// Largest φ index in the tree, if any.
    pub fn max_phi_index(&self) -> Option<u32> {
        let mut m = None;
        self.visit_phi(&mut |k, _| m = Some(m.map_or(k, |x: u32| x.max(k))));
        m
    }

    /// Checks the node invariants: c ∈ (0, 1] and finite constants.
    pub fn validate(&self) -> Result<(), String> {
        let mut err = None;
        self.visit_phi(&mut |k, c| {
            if !(c > 0.0 && c <= 1.0) && err.is_none() {
                err = Some(format!("phi_{k} has abscissa scale {c} outside (0, 1]"));
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if !self.constants_finite() {
            return Err("non-finite constant".into());
        }
        Ok(())
    }

    fn constants_finite(&self) -> bool {
        match self {
            Phi { .. } => true,
            Const(r) => r.is_finite(),
            Scale(r, e) => r.is_finite() && e.constants_finite(),
            ZMul(e) => e.constants_finite(),
            Sum(es) => es.iter().all(|e| e.constants_finite()),
            Prod(l, r) => l.constants_finite() && r.constants_finite(),
        }
    }

    /// Value at a real scalar z.
    pub fn eval_scalar(&self, z: f64) -> Result<f64, PhiError> {
        Ok(match self {
            Phi { k, c } => phi_scalar(*k, c * z)?,
            Const(r) => *r,
            Scale(r, e) => r * e.eval_scalar(z)?,
            Sum(es) => {
                let mut acc = 0.0;
                for e in es {
                    acc += e.eval_scalar(z)?;
                }
                acc
            }
            Prod(l, r) => l.eval_scalar(z)? * r.eval_scalar(z)?,
            ZMul(e) => z * e.eval_scalar(z)?,
        })
    }

    /// Flattens nested sums, folds constant scales and drops zero terms.
    /// Does not distribute products or rewrite φ identities.
    pub fn simplify(&self) -> CoefficientExpr {
        match self {
            Phi { .. } | Const(_) => self.clone(),
            Scale(r, e) => {
                let inner = e.simplify();
                scale_simplified(*r, inner)
            }
            Sum(es) => {
                let mut terms = Vec::new();
                let mut constant = 0.0;
                for e in es {
                    match e.simplify() {
                        Sum(inner) => {
                            for t in inner {
                                match t {
                                    Const(r) => constant += r,
                                    t => terms.push(t),
                                }
                            }
                        }
                        Const(r) => constant += r,
                        t => terms.push(t),
                    }
                }
                if constant != 0.0 {
                    terms.push(Const(constant));
                }
                match terms.len() {
                    0 => Const(0.0),
                    1 => terms.pop().unwrap(),
                    _ => Sum(terms),
                }
            }
            Prod(l, r) => {
                let (lr, l) = split_scale(l.simplify());
                let (rr, r) = split_scale(r.simplify());
                let factor = lr * rr;
                let core = match (l, r) {
                    (Const(a), Const(b)) => Const(a * b),
                    (Const(a), e) | (e, Const(a)) => scale_simplified(a, e),
                    (l, r) => Prod(Box::new(l), Box::new(r)),
                };
                scale_simplified(factor, core)
            }
            ZMul(e) => {
                let (r, inner) = split_scale(e.simplify());
                if inner.is_zero() || r == 0.0 {
                    Const(0.0)
                } else {
                    scale_simplified(r, ZMul(Box::new(inner)))
                }
            }
        }
    }

    /// Fully expanded normal form: a sum of scaled monomials z^n·Πφ, with
    /// like monomials merged and factors sorted. All functions of the same z
    /// commute, so this form is a faithful identity test for expressions.
    pub fn canonical(&self) -> CoefficientExpr {
        let poly = self.expand();
        let mut terms = Vec::new();
        for (mono, coef) in poly.terms {
            if coef == 0.0 {
                continue;
            }
            terms.push(scale_simplified(coef, mono.to_expr()));
        }
        terms.sort_by_key(|t| t.to_prefix());
        match terms.len() {
            0 => Const(0.0),
            1 => terms.pop().unwrap(),
            _ => Sum(terms),
        }
    }

    /// Structural equality up to `tol` on every constant and abscissa.
    pub fn approx_eq(&self, other: &CoefficientExpr, tol: f64) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0);
        match (self, other) {
            (Phi { k: k1, c: c1 }, Phi { k: k2, c: c2 }) => k1 == k2 && close(*c1, *c2),
            (Const(a), Const(b)) => close(*a, *b),
            (Scale(a, x), Scale(b, y)) => close(*a, *b) && x.approx_eq(y, tol),
            (Sum(xs), Sum(ys)) => {
                xs.len() == ys.len() && xs.iter().zip(ys).all(|(x, y)| x.approx_eq(y, tol))
            }
            (Prod(a, b), Prod(c, d)) => a.approx_eq(c, tol) && b.approx_eq(d, tol),
            (ZMul(x), ZMul(y)) => x.approx_eq(y, tol),
            _ => false,
        }
    }

    /// Stable prefix-notation rendering, e.g. `(sum (phi 1 1) (scale -1 (phi 2 1)))`.
    pub fn to_prefix(&self) -> String {
        match self {
            Phi { k, c } => format!("(phi {k} {c})"),
            Const(r) => format!("{r}"),
            Scale(r, e) => format!("(scale {r} {})", e.to_prefix()),
            Sum(es) => {
                let parts: Vec<String> = es.iter().map(|e| e.to_prefix()).collect();
                format!("(sum {})", parts.join(" "))
            }
            Prod(l, r) => format!("(prod {} {})", l.to_prefix(), r.to_prefix()),
            ZMul(e) => format!("(z {})", e.to_prefix()),
        }
    }

    fn expand(&self) -> Polynomial {
        match self {
            Phi { k, c } => Polynomial::monomial(Monomial {
                z_power: 0,
                factors: vec![PhiKey::new(*k, *c)],
            }),
            Const(r) => Polynomial::constant(*r),
            Scale(r, e) => e.expand().scaled(*r),
            Sum(es) => {
                let mut p = Polynomial::default();
                for e in es {
                    p.add_assign(e.expand());
                }
                p
            }
            Prod(l, r) => l.expand().mul(&r.expand()),
            ZMul(e) => e.expand().times_z(),
        }
    }
}

fn split_scale(e: CoefficientExpr) -> (f64, CoefficientExpr) {
    match e {
        Scale(r, inner) => (r, *inner),
        e => (1.0, e),
    }
}

fn scale_simplified(r: f64, e: CoefficientExpr) -> CoefficientExpr {
    if r == 0.0 || e.is_zero() {
        return Const(0.0);
    }
    if r == 1.0 {
        return e;
    }
    match e {
        Const(c) => Const(r * c),
        Scale(s, inner) => scale_simplified(r * s, *inner),
        e => Scale(r, Box::new(e)),
    }
}

impl fmt::Display for CoefficientExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_prefix())
    }
}

impl Add for CoefficientExpr {
    type Output = CoefficientExpr;
    fn add(self, rhs: CoefficientExpr) -> CoefficientExpr {
        Sum(vec![self, rhs])
    }
}

impl Sub for CoefficientExpr {
    type Output = CoefficientExpr;
    fn sub(self, rhs: CoefficientExpr) -> CoefficientExpr {
        Sum(vec![self, rhs.scale(-1.0)])
    }
}

impl Neg for CoefficientExpr {
    type Output = CoefficientExpr;
    fn neg(self) -> CoefficientExpr {
        self.scale(-1.0)
    }
}

impl Mul for CoefficientExpr {
    type Output = CoefficientExpr;
    fn mul(self, rhs: CoefficientExpr) -> CoefficientExpr {
        self.prod(rhs)
    }
}

impl Mul<CoefficientExpr> for f64 {
    type Output = CoefficientExpr;
    fn mul(self, rhs: CoefficientExpr) -> CoefficientExpr {
        rhs.scale(self)
    }
}

/// φ_k(c·z) as an orderable key (c compared by bit pattern).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct PhiKey {
    k: u32,
    c_bits: u64,
}

impl PhiKey {
    fn new(k: u32, c: f64) -> Self {
        Self {
            k,
            c_bits: c.to_bits(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct Monomial {
    z_power: u32,
    factors: Vec<PhiKey>,
}

impl Monomial {
    fn to_expr(&self) -> CoefficientExpr {
        let mut it = self.factors.iter();
        let mut e = match it.next() {
            Some(p) => Phi {
                k: p.k,
                c: f64::from_bits(p.c_bits),
            },
            None => Const(1.0),
        };
        for p in it {
            e = Prod(
                Box::new(e),
                Box::new(Phi {
                    k: p.k,
                    c: f64::from_bits(p.c_bits),
                }),
            );
        }
        for _ in 0..self.z_power {
            e = ZMul(Box::new(e));
        }
        e
    }
}

#[derive(Debug, Clone, Default)]
struct Polynomial {
    terms: BTreeMap<Monomial, f64>,
}

impl Polynomial {
    fn monomial(m: Monomial) -> Self {
        let mut terms = BTreeMap::new();
        terms.insert(m, 1.0);
        Self { terms }
    }

    fn constant(r: f64) -> Self {
        let mut p = Self::default();
        if r != 0.0 {
            p.terms.insert(
                Monomial {
                    z_power: 0,
                    factors: Vec::new(),
                },
                r,
            );
        }
        p
    }

    fn scaled(mut self, r: f64) -> Self {
        for v in self.terms.values_mut() {
            *v *= r;
        }
        self
    }

    fn add_assign(&mut self, other: Polynomial) {
        for (m, c) in other.terms {
            *self.terms.entry(m).or_insert(0.0) += c;
        }
    }

    fn mul(&self, other: &Polynomial) -> Polynomial {
        let mut out = Polynomial::default();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                let mut factors = ma.factors.clone();
                factors.extend_from_slice(&mb.factors);
                factors.sort();
                let m = Monomial {
                    z_power: ma.z_power + mb.z_power,
                    factors,
                };
                *out.terms.entry(m).or_insert(0.0) += ca * cb;
            }
        }
        out
    }

    fn times_z(self) -> Polynomial {
        Polynomial {
            terms: self
                .terms
                .into_iter()
                .map(|(mut m, c)| {
                    m.z_power += 1;
                    (m, c)
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(k: u32, c: f64) -> CoefficientExpr {
        CoefficientExpr::phi(k, c)
    }

    #[test]
    fn prefix_rendering() {
        let e = p(1, 1.0) - p(2, 1.0);
        assert_eq!(e.to_prefix(), "(sum (phi 1 1) (scale -1 (phi 2 1)))");
        assert_eq!(p(2, 0.5).zmul().to_prefix(), "(z (phi 2 0.5))");
    }

    #[test]
    fn simplify_flattens_and_folds() {
        let e = CoefficientExpr::Sum(vec![
            p(1, 1.0).scale(2.0).scale(0.5),
            CoefficientExpr::Sum(vec![p(2, 1.0), CoefficientExpr::zero()]),
            CoefficientExpr::Const(0.0).scale(3.0),
        ]);
        let s = e.simplify();
        assert_eq!(s, CoefficientExpr::Sum(vec![p(1, 1.0), p(2, 1.0)]));
    }

    #[test]
    fn simplify_pulls_scales_out_of_products() {
        let e = p(1, 1.0).scale(2.0) * p(2, 0.5).scale(-3.0).zmul();
        let s = e.simplify();
        assert_eq!(
            s,
            CoefficientExpr::Scale(-6.0, Box::new(p(1, 1.0) * p(2, 0.5).zmul()))
        );
        assert!((CoefficientExpr::zero() * p(1, 1.0)).simplify().is_zero());
        assert_eq!((CoefficientExpr::one() * p(1, 1.0)).simplify(), p(1, 1.0));
    }

    #[test]
    fn canonical_merges_like_terms() {
        let a = p(1, 1.0) * p(2, 0.5) + p(2, 0.5) * p(1, 1.0);
        let b = (p(2, 0.5) * p(1, 1.0)).scale(2.0);
        assert!(a.canonical().approx_eq(&b.canonical(), 1e-15));
        let cancel = p(3, 1.0).zmul() - p(3, 1.0).zmul();
        assert!(cancel.canonical().is_zero());
    }

    #[test]
    fn scalar_evaluation() {
        let e = p(1, 1.0) - (p(2, 1.0) * p(1, 1.0)).zmul();
        let z: f64 = -0.7;
        let phi1 = phi_scalar(1, z).unwrap();
        let phi2 = phi_scalar(2, z).unwrap();
        let want = phi1 - z * phi2 * phi1;
        assert!((e.eval_scalar(z).unwrap() - want).abs() < 1e-15);
        assert!((e.canonical().eval_scalar(z).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn validation() {
        assert!(p(1, 0.5).validate().is_ok());
        assert!(p(1, 0.0).validate().is_err());
        assert!(p(1, 1.5).validate().is_err());
        assert!(CoefficientExpr::Const(f64::NAN).validate().is_err());
        assert_eq!((p(1, 1.0) + p(4, 0.5)).max_phi_index(), Some(4));
        assert_eq!(CoefficientExpr::one().max_phi_index(), None);
    }
}
