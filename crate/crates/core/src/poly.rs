//! Sparse multivariate polynomials.
//!
//! Symbolic work (brackets, generator application) runs over exact rationals;
//! hot-loop evaluation goes through [`CompiledPoly`], a flat `f64` image of the
//! same polynomial.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};

/// Coefficient ring for [`Poly`].
pub trait Coeff:
    Clone
    + PartialEq
    + fmt::Debug
    + Zero
    + One
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
{
    fn from_i64(v: i64) -> Self;
    fn to_f64(&self) -> f64;
}

impl Coeff for BigRational {
    fn from_i64(v: i64) -> Self {
        BigRational::from_integer(BigInt::from(v))
    }
    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

impl Coeff for f64 {
    fn from_i64(v: i64) -> Self {
        v as f64
    }
    fn to_f64(&self) -> f64 {
        *self
    }
}

/// Exponent vector, one entry per variable.
pub type Monomial = Vec<u32>;

#[derive(Clone, PartialEq)]
pub struct Poly<C> {
    nvars: usize,
    terms: BTreeMap<Monomial, C>,
}

pub type RatPoly = Poly<BigRational>;

/// Exact rational `num/den`.
pub fn rat(num: i64, den: i64) -> BigRational {
    BigRational::new(BigInt::from(num), BigInt::from(den))
}

/// Exact rational image of a finite double.
pub fn rat_from_f64(v: f64) -> Option<BigRational> {
    BigRational::from_float(v)
}

impl<C: Coeff> Poly<C> {
    pub fn zero(nvars: usize) -> Self {
        Poly {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: C) -> Self {
        Self::monomial(nvars, vec![0; nvars], c)
    }

    pub fn one(nvars: usize) -> Self {
        Self::constant(nvars, C::one())
    }

    pub fn var(nvars: usize, i: usize) -> Self {
        assert!(i < nvars, "variable index {i} out of range {nvars}");
        let mut e = vec![0; nvars];
        e[i] = 1;
        Self::monomial(nvars, e, C::one())
    }

    pub fn monomial(nvars: usize, exps: Monomial, c: C) -> Self {
        assert_eq!(exps.len(), nvars);
        let mut p = Self::zero(nvars);
        if !c.is_zero() {
            p.terms.insert(exps, c);
        }
        p
    }

    /// Builds a polynomial from `(exponents, coefficient)` pairs, merging repeats.
    pub fn from_terms(nvars: usize, terms: impl IntoIterator<Item = (Monomial, C)>) -> Self {
        let mut p = Self::zero(nvars);
        for (e, c) in terms {
            assert_eq!(e.len(), nvars);
            p.add_term(e, c);
        }
        p
    }

    fn add_term(&mut self, e: Monomial, c: C) {
        if c.is_zero() {
            return;
        }
        match self.terms.get_mut(&e) {
            Some(v) => {
                let s = v.clone() + c;
                if s.is_zero() {
                    self.terms.remove(&e);
                } else {
                    *v = s;
                }
            }
            None => {
                self.terms.insert(e, c);
            }
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Monomial, &C)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn coeff(&self, exps: &[u32]) -> C {
        self.terms.get(exps).cloned().unwrap_or_else(C::zero)
    }

    /// Total degree; `None` for the zero polynomial.
    pub fn degree(&self) -> Option<u32> {
        self.terms.keys().map(|e| e.iter().sum()).max()
    }

    /// Variables with a nonzero exponent somewhere.
    pub fn support(&self) -> Vec<usize> {
        let mut used = vec![false; self.nvars];
        for e in self.terms.keys() {
            for (i, &k) in e.iter().enumerate() {
                if k > 0 {
                    used[i] = true;
                }
            }
        }
        used.iter()
            .enumerate()
            .filter_map(|(i, &u)| u.then_some(i))
            .collect()
    }

    pub fn scale(&self, c: &C) -> Self {
        Self::from_terms(
            self.nvars,
            self.terms
                .iter()
                .map(|(e, v)| (e.clone(), v.clone() * c.clone())),
        )
    }

    pub fn pow(&self, k: u32) -> Self {
        let mut acc = Self::one(self.nvars);
        for _ in 0..k {
            acc = &acc * self;
        }
        acc
    }

    pub fn derivative(&self, i: usize) -> Self {
        let mut out = Self::zero(self.nvars);
        for (e, c) in &self.terms {
            if e[i] == 0 {
                continue;
            }
            let mut e2 = e.clone();
            e2[i] -= 1;
            out.add_term(e2, c.clone() * C::from_i64(e[i] as i64));
        }
        out
    }

    /// Re-indexes into a polynomial over `nvars` variables, shifting variable
    /// `j` to `offset + j`.
    pub fn embed(&self, nvars: usize, offset: usize) -> Self {
        assert!(offset + self.nvars <= nvars);
        Self::from_terms(
            nvars,
            self.terms.iter().map(|(e, c)| {
                let mut e2 = vec![0; nvars];
                e2[offset..offset + self.nvars].copy_from_slice(e);
                (e2, c.clone())
            }),
        )
    }

    /// Substitutes `args[j]` for variable `j`. All `args` share one variable count.
    pub fn compose(&self, args: &[Poly<C>]) -> Poly<C> {
        assert_eq!(args.len(), self.nvars);
        let m = args.first().map(|a| a.nvars).unwrap_or(0);
        let mut out = Poly::zero(m);
        let mut cache: Vec<Vec<Poly<C>>> = args.iter().map(|a| vec![Poly::one(a.nvars)]).collect();
        for (e, c) in &self.terms {
            let mut term = Poly::constant(m, c.clone());
            for (j, &k) in e.iter().enumerate() {
                while cache[j].len() <= k as usize {
                    let next = cache[j].last().unwrap() * &args[j];
                    cache[j].push(next);
                }
                if k > 0 {
                    term = &term * &cache[j][k as usize];
                }
            }
            out = &out + &term;
        }
        out
    }

    pub fn map_coeffs<D: Coeff>(&self, f: impl Fn(&C) -> D) -> Poly<D> {
        Poly::from_terms(
            self.nvars,
            self.terms.iter().map(|(e, c)| (e.clone(), f(c))),
        )
    }

    pub fn to_f64_poly(&self) -> Poly<f64> {
        self.map_coeffs(|c| c.to_f64())
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.nvars);
        self.terms
            .iter()
            .map(|(e, c)| {
                c.to_f64()
                    * e.iter()
                        .zip(x)
                        .map(|(&k, &v)| v.powi(k as i32))
                        .product::<f64>()
            })
            .sum()
    }

    pub fn compile(&self) -> CompiledPoly {
        CompiledPoly::new(self)
    }
}

impl Poly<f64> {
    /// Integrates out variables `vars` against independent standard normals.
    /// The result keeps the variable count; the integrated variables no
    /// longer appear.
    pub fn expect_gaussian(&self, vars: &[usize]) -> Poly<f64> {
        let mut out = Poly::zero(self.nvars);
        for (e, c) in &self.terms {
            let mut w = *c;
            let mut e2 = e.clone();
            for &v in vars {
                w *= gaussian_moment(e[v]);
                e2[v] = 0;
            }
            out.add_term(e2, w);
        }
        out
    }
}

/// `E[N^k]` for a standard normal `N`.
pub fn gaussian_moment(k: u32) -> f64 {
    if k % 2 == 1 {
        return 0.0;
    }
    // (k-1)!!
    let mut m = 1.0;
    let mut j = k as i64 - 1;
    while j > 1 {
        m *= j as f64;
        j -= 2;
    }
    m
}

impl<C: Coeff> fmt::Debug for Poly<C> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (e, c) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "({:?})", c)?;
            for (i, &k) in e.iter().enumerate() {
                if k == 1 {
                    write!(f, "*v{i}")?;
                } else if k > 1 {
                    write!(f, "*v{i}^{k}")?;
                }
            }
        }
        Ok(())
    }
}

impl<'a, C: Coeff> Add<&'a Poly<C>> for &'a Poly<C> {
    type Output = Poly<C>;
    fn add(self, rhs: &Poly<C>) -> Poly<C> {
        assert_eq!(self.nvars, rhs.nvars);
        let mut out = self.clone();
        for (e, c) in &rhs.terms {
            out.add_term(e.clone(), c.clone());
        }
        out
    }
}

impl<'a, C: Coeff> Sub<&'a Poly<C>> for &'a Poly<C> {
    type Output = Poly<C>;
    fn sub(self, rhs: &Poly<C>) -> Poly<C> {
        assert_eq!(self.nvars, rhs.nvars);
        let mut out = self.clone();
        for (e, c) in &rhs.terms {
            out.add_term(e.clone(), -c.clone());
        }
        out
    }
}

impl<'a, C: Coeff> Mul<&'a Poly<C>> for &'a Poly<C> {
    type Output = Poly<C>;
    fn mul(self, rhs: &Poly<C>) -> Poly<C> {
        assert_eq!(self.nvars, rhs.nvars);
        let mut out = Poly::zero(self.nvars);
        for (e1, c1) in &self.terms {
            for (e2, c2) in &rhs.terms {
                let e: Monomial = e1.iter().zip(e2).map(|(a, b)| a + b).collect();
                out.add_term(e, c1.clone() * c2.clone());
            }
        }
        out
    }
}

impl<C: Coeff> Neg for &Poly<C> {
    type Output = Poly<C>;
    fn neg(self) -> Poly<C> {
        self.map_coeffs(|c| -c.clone())
    }
}

impl<C: Coeff> Add for Poly<C> {
    type Output = Poly<C>;
    fn add(self, rhs: Poly<C>) -> Poly<C> {
        &self + &rhs
    }
}

impl<C: Coeff> Sub for Poly<C> {
    type Output = Poly<C>;
    fn sub(self, rhs: Poly<C>) -> Poly<C> {
        &self - &rhs
    }
}

impl<C: Coeff> Mul for Poly<C> {
    type Output = Poly<C>;
    fn mul(self, rhs: Poly<C>) -> Poly<C> {
        &self * &rhs
    }
}

/// Flat double-precision image of a polynomial for repeated evaluation.
#[derive(Clone, Debug)]
pub struct CompiledPoly {
    nvars: usize,
    max_exp: Vec<u32>,
    exps: Vec<u8>,
    coeffs: Vec<f64>,
}

impl CompiledPoly {
    pub fn new<C: Coeff>(p: &Poly<C>) -> Self {
        let nvars = p.nvars;
        let mut max_exp = vec![0u32; nvars];
        let mut exps = Vec::with_capacity(p.terms.len() * nvars);
        let mut coeffs = Vec::with_capacity(p.terms.len());
        for (e, c) in &p.terms {
            for (i, &k) in e.iter().enumerate() {
                assert!(k < 256, "exponent {k} too large to compile");
                max_exp[i] = max_exp[i].max(k);
                exps.push(k as u8);
            }
            coeffs.push(c.to_f64());
        }
        CompiledPoly {
            nvars,
            max_exp,
            exps,
            coeffs,
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.nvars);
        if self.coeffs.is_empty() {
            return 0.0;
        }
        // Power tables: small degrees, small variable counts.
        let mut table = [[1.0f64; 17]; 16];
        let use_table = self.nvars <= 16 && self.max_exp.iter().all(|&m| m <= 16);
        if use_table {
            for i in 0..self.nvars {
                let mut acc = 1.0;
                for k in 1..=self.max_exp[i] as usize {
                    acc *= x[i];
                    table[i][k] = acc;
                }
            }
        }
        let mut sum = 0.0;
        for (t, c) in self.coeffs.iter().enumerate() {
            let e = &self.exps[t * self.nvars..(t + 1) * self.nvars];
            let mut m = *c;
            for (i, &k) in e.iter().enumerate() {
                if k > 0 {
                    m *= if use_table {
                        table[i][k as usize]
                    } else {
                        x[i].powi(k as i32)
                    };
                }
            }
            sum += m;
        }
        sum
    }
}
