//! Sparse multivariate polynomials with exact differentiation.
//!
//! Every vector field and potential in the crate is a polynomial in the state
//! coordinates, so Jacobians, Hessians and Lie brackets are computed by
//! coefficient arithmetic rather than by finite differences.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `coeff * x_0^powers[0] * ... * x_{n-1}^powers[n-1]`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Polynomial {
    nvars: usize,
    terms: Vec<Monomial>,
}

impl Polynomial {
    pub fn zero(nvars: usize) -> Self {
        Polynomial {
            nvars,
            terms: Vec::new(),
        }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        Self::from_terms_unchecked(
            nvars,
            vec![Monomial {
                coeff: c,
                powers: vec![0; nvars],
            }],
        )
    }

    /// The coordinate function `x_i`.
    pub fn var(nvars: usize, i: usize) -> Self {
        assert!(i < nvars, "variable index {i} out of range for {nvars} variables");
        let mut powers = vec![0; nvars];
        powers[i] = 1;
        Self::from_terms_unchecked(nvars, vec![Monomial { coeff: 1.0, powers }])
    }

    /// Builds a polynomial from monomials, merging repeated exponents.
    pub fn from_terms(nvars: usize, terms: Vec<Monomial>) -> Result<Self> {
        for t in &terms {
            if t.powers.len() != nvars {
                return Err(Error::Shape(format!(
                    "monomial has {} exponents, expected {nvars}",
                    t.powers.len()
                )));
            }
            if !t.coeff.is_finite() {
                return Err(Error::InvalidModel(format!(
                    "non-finite coefficient {}",
                    t.coeff
                )));
            }
        }
        Ok(Self::from_terms_unchecked(nvars, terms))
    }

    fn from_terms_unchecked(nvars: usize, terms: Vec<Monomial>) -> Self {
        let mut merged: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        for t in terms {
            *merged.entry(t.powers).or_insert(0.0) += t.coeff;
        }
        let terms = merged
            .into_iter()
            .filter(|(_, c)| *c != 0.0)
            .map(|(powers, coeff)| Monomial { coeff, powers })
            .collect();
        Polynomial { nvars, terms }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms
            .iter()
            .map(|t| t.powers.iter().sum::<u32>())
            .max()
            .unwrap_or(0)
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.nvars);
        let mut acc = 0.0;
        for t in &self.terms {
            let mut v = t.coeff;
            for (xi, &p) in x.iter().zip(&t.powers) {
                match p {
                    0 => {}
                    1 => v *= xi,
                    2 => v *= xi * xi,
                    _ => v *= xi.powi(p as i32),
                }
            }
            acc += v;
        }
        acc
    }

    /// Partial derivative with respect to `x_j`.
    pub fn partial(&self, j: usize) -> Polynomial {
        let terms = self
            .terms
            .iter()
            .filter(|t| t.powers[j] > 0)
            .map(|t| {
                let mut powers = t.powers.clone();
                let p = powers[j];
                powers[j] -= 1;
                Monomial {
                    coeff: t.coeff * p as f64,
                    powers,
                }
            })
            .collect();
        Self::from_terms_unchecked(self.nvars, terms)
    }

    pub fn scale(&self, c: f64) -> Polynomial {
        Self::from_terms_unchecked(
            self.nvars,
            self.terms
                .iter()
                .map(|t| Monomial {
                    coeff: t.coeff * c,
                    powers: t.powers.clone(),
                })
                .collect(),
        )
    }
}

impl Add for &Polynomial {
    type Output = Polynomial;
    fn add(self, rhs: &Polynomial) -> Polynomial {
        assert_eq!(self.nvars, rhs.nvars);
        let terms = self.terms.iter().chain(&rhs.terms).cloned().collect();
        Polynomial::from_terms_unchecked(self.nvars, terms)
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
        let mut terms = Vec::with_capacity(self.terms.len() * rhs.terms.len());
        for a in &self.terms {
            for b in &rhs.terms {
                terms.push(Monomial {
                    coeff: a.coeff * b.coeff,
                    powers: a.powers.iter().zip(&b.powers).map(|(p, q)| p + q).collect(),
                });
            }
        }
        Polynomial::from_terms_unchecked(self.nvars, terms)
    }
}

impl fmt::Display for Polynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        for (k, t) in self.terms.iter().enumerate() {
            if k > 0 {
                write!(f, " + ")?;
            }
            write!(f, "{}", t.coeff)?;
            for (i, &p) in t.powers.iter().enumerate() {
                match p {
                    0 => {}
                    1 => write!(f, "*x{i}")?,
                    _ => write!(f, "*x{i}^{p}")?,
                }
            }
        }
        Ok(())
    }
}
