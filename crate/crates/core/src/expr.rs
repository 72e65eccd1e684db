//! Analytic phase-space functions built from monomials `c · qᵃ pᵇ xᶜ · exp(i(k_q q + k_p p + k_x x))`.
//!
//! Hamiltonians and observables are carried symbolically so that their
//! derivatives are exact. Polynomial factors are evaluated at the grid
//! coordinates as given, so a grid whose origin is `-L/2` samples the
//! centred periodic representative of `q²`, `p²` and so on.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Neg, Sub};

use crate::lattice::Axis;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coef: C64,
    pub pow: [u32; 3],
    pub freq: [f64; 3],
}

impl Monomial {
    fn same_shape(&self, other: &Monomial) -> bool {
        self.pow == other.pow && self.freq == other.freq
    }

    pub fn eval(&self, z: [f64; 3]) -> C64 {
        let mut poly = 1.0;
        let mut phase = 0.0;
        for a in 0..3 {
            if self.pow[a] > 0 {
                poly *= z[a].powi(self.pow[a] as i32);
            }
            phase += self.freq[a] * z[a];
        }
        if phase == 0.0 {
            self.coef * poly
        } else {
            self.coef * poly * C64::from_polar(1.0, phase)
        }
    }
}

/// Finite sum of monomials.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Expr {
    pub terms: Vec<Monomial>,
}

fn idx(axis: Axis) -> usize {
    axis as usize
}

impl Expr {
    pub fn zero() -> Self {
        Expr { terms: Vec::new() }
    }

    pub fn constant(c: f64) -> Self {
        Self::complex_constant(C64::new(c, 0.0))
    }

    pub fn complex_constant(c: C64) -> Self {
        Expr { terms: vec![Monomial { coef: c, pow: [0; 3], freq: [0.0; 3] }] }.simplified()
    }

    pub fn monomial(coef: C64, pow: [u32; 3], freq: [f64; 3]) -> Self {
        Expr { terms: vec![Monomial { coef, pow, freq }] }.simplified()
    }

    /// `coordᵏ` along one axis.
    pub fn power(axis: Axis, n: u32) -> Self {
        let mut pow = [0; 3];
        pow[idx(axis)] = n;
        Self::monomial(C64::new(1.0, 0.0), pow, [0.0; 3])
    }

    pub fn coord(axis: Axis) -> Self {
        Self::power(axis, 1)
    }

    /// `exp(i k · coord)`.
    pub fn wave(axis: Axis, k: f64) -> Self {
        let mut freq = [0.0; 3];
        freq[idx(axis)] = k;
        Self::monomial(C64::new(1.0, 0.0), [0; 3], freq)
    }

    pub fn cos(axis: Axis, k: f64) -> Self {
        (Self::wave(axis, k) + Self::wave(axis, -k)).scale(0.5)
    }

    pub fn sin(axis: Axis, k: f64) -> Self {
        (Self::wave(axis, k) - Self::wave(axis, -k)).scale_complex(C64::new(0.0, -0.5))
    }

    pub fn scale(&self, s: f64) -> Self {
        self.scale_complex(C64::new(s, 0.0))
    }

    pub fn scale_complex(&self, s: C64) -> Self {
        Expr {
            terms: self.terms.iter().map(|m| Monomial { coef: m.coef * s, ..*m }).collect(),
        }
        .simplified()
    }

    /// Merge like terms and drop exact zeros.
    pub fn simplified(mut self) -> Self {
        let mut out: Vec<Monomial> = Vec::with_capacity(self.terms.len());
        for m in self.terms.drain(..) {
            if let Some(existing) = out.iter_mut().find(|e| e.same_shape(&m)) {
                existing.coef += m.coef;
            } else {
                out.push(m);
            }
        }
        out.retain(|m| m.coef != C64::new(0.0, 0.0));
        Expr { terms: out }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn depends_on(&self, axis: Axis) -> bool {
        let a = idx(axis);
        self.terms.iter().any(|m| m.pow[a] > 0 || m.freq[a] != 0.0)
    }

    pub fn derivative(&self, axis: Axis) -> Self {
        let a = idx(axis);
        let mut out = Vec::new();
        for m in &self.terms {
            if m.pow[a] > 0 {
                let mut pow = m.pow;
                pow[a] -= 1;
                out.push(Monomial { coef: m.coef * m.pow[a] as f64, pow, freq: m.freq });
            }
            if m.freq[a] != 0.0 {
                out.push(Monomial { coef: m.coef * C64::new(0.0, m.freq[a]), ..*m });
            }
        }
        Expr { terms: out }.simplified()
    }

    /// Complex conjugate.
    pub fn conj(&self) -> Self {
        Expr {
            terms: self
                .terms
                .iter()
                .map(|m| Monomial { coef: m.coef.conj(), pow: m.pow, freq: m.freq.map(|k| -k) })
                .collect(),
        }
        .simplified()
    }

    /// Canonical bracket `∂_q f ∂_p g − ∂_p f ∂_q g`.
    pub fn poisson(&self, other: &Expr) -> Self {
        let fq = self.derivative(Axis::Q);
        let fp = self.derivative(Axis::P);
        let gq = other.derivative(Axis::Q);
        let gp = other.derivative(Axis::P);
        &(&fq * &gp) - &(&fp * &gq)
    }

    /// `f − p ∂_p f`, the multiplicative part of the covariant Liouvillian.
    pub fn phase_part(&self) -> Self {
        let fp = self.derivative(Axis::P);
        self - &(&Expr::coord(Axis::P) * &fp)
    }

    /// `f(· + a)` along one axis; powers are expanded binomially.
    pub fn shift(&self, axis: Axis, a: f64) -> Self {
        let ax = idx(axis);
        let mut out = Vec::new();
        for m in &self.terms {
            let phase = C64::from_polar(1.0, m.freq[ax] * a);
            let n = m.pow[ax];
            let mut binom = 1.0;
            for j in 0..=n {
                let mut pow = m.pow;
                pow[ax] = n - j;
                out.push(Monomial { coef: m.coef * phase * binom * a.powi(j as i32), pow, freq: m.freq });
                binom = binom * (n - j) as f64 / (j + 1) as f64;
            }
        }
        Expr { terms: out }.simplified()
    }

    /// Fix one coordinate to a value.
    pub fn substitute(&self, axis: Axis, v: f64) -> Self {
        let ax = idx(axis);
        Expr {
            terms: self
                .terms
                .iter()
                .map(|m| {
                    let mut z = [0.0; 3];
                    z[ax] = v;
                    let mut only = Monomial { coef: C64::new(1.0, 0.0), pow: [0; 3], freq: [0.0; 3] };
                    only.pow[ax] = m.pow[ax];
                    only.freq[ax] = m.freq[ax];
                    let mut rest = *m;
                    rest.pow[ax] = 0;
                    rest.freq[ax] = 0.0;
                    rest.coef *= only.eval(z);
                    rest
                })
                .collect(),
        }
        .simplified()
    }

    pub fn eval(&self, z: [f64; 3]) -> C64 {
        self.terms.iter().map(|m| m.eval(z)).sum()
    }

    pub fn eval_real(&self, z: [f64; 3]) -> f64 {
        self.eval(z).re
    }
}

impl Add for &Expr {
    type Output = Expr;
    fn add(self, rhs: &Expr) -> Expr {
        let mut terms = self.terms.clone();
        terms.extend_from_slice(&rhs.terms);
        Expr { terms }.simplified()
    }
}

impl Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        &self + &rhs
    }
}

impl Sub for &Expr {
    type Output = Expr;
    fn sub(self, rhs: &Expr) -> Expr {
        self + &(-rhs)
    }
}

impl Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        &self - &rhs
    }
}

impl Neg for &Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        self.scale(-1.0)
    }
}

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        -&self
    }
}

impl Mul for &Expr {
    type Output = Expr;
    fn mul(self, rhs: &Expr) -> Expr {
        let mut terms = Vec::with_capacity(self.terms.len() * rhs.terms.len());
        for a in &self.terms {
            for b in &rhs.terms {
                terms.push(Monomial {
                    coef: a.coef * b.coef,
                    pow: [a.pow[0] + b.pow[0], a.pow[1] + b.pow[1], a.pow[2] + b.pow[2]],
                    freq: [a.freq[0] + b.freq[0], a.freq[1] + b.freq[1], a.freq[2] + b.freq[2]],
                });
            }
        }
        Expr { terms }.simplified()
    }
}

impl Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        &self * &rhs
    }
}
