//! Forward-mode differentiation used to evaluate barrier recursions.
//!
//! Two layers are stacked:
//!
//! * [`Hyper`] carries a value together with its gradient and Hessian with
//!   respect to a fixed set of independent variables (the state and time).
//! * [`Jet`] is a truncated Taylor series in an auxiliary flow time `s` whose
//!   coefficients are [`Hyper`] numbers.
//!
//! Expanding the drift flow in `s` turns the recursion
//! `psi_i = d/ds psi_{i-1} + alpha_i(psi_{i-1})` into plain series arithmetic, and
//! the [`Hyper`] coefficients then yield exact state/time derivatives of any
//! level without hand-written higher-order formulas.

use crate::error::{Error, Result};

/// Value, gradient and (dense, row-major) Hessian in `dim` variables.
#[derive(Clone, Debug, PartialEq)]
pub struct Hyper {
    pub v: f64,
    pub g: Vec<f64>,
    pub h: Vec<f64>,
}

impl Hyper {
    pub fn constant(v: f64, dim: usize) -> Self {
        Hyper {
            v,
            g: vec![0.0; dim],
            h: vec![0.0; dim * dim],
        }
    }

    /// The `index`-th independent variable with value `v`.
    pub fn variable(v: f64, index: usize, dim: usize) -> Self {
        let mut out = Self::constant(v, dim);
        out.g[index] = 1.0;
        out
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    pub fn hess(&self, i: usize, j: usize) -> f64 {
        self.h[i * self.dim() + j]
    }

    fn zip(&self, other: &Hyper, f: impl Fn(f64, f64) -> f64) -> Hyper {
        debug_assert_eq!(self.dim(), other.dim());
        Hyper {
            v: f(self.v, other.v),
            g: self
                .g
                .iter()
                .zip(&other.g)
                .map(|(a, b)| f(*a, *b))
                .collect(),
            h: self
                .h
                .iter()
                .zip(&other.h)
                .map(|(a, b)| f(*a, *b))
                .collect(),
        }
    }

    pub fn add(&self, other: &Hyper) -> Hyper {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Hyper) -> Hyper {
        self.zip(other, |a, b| a - b)
    }

    pub fn scale(&self, k: f64) -> Hyper {
        Hyper {
            v: self.v * k,
            g: self.g.iter().map(|a| a * k).collect(),
            h: self.h.iter().map(|a| a * k).collect(),
        }
    }

    pub fn add_scalar(&self, k: f64) -> Hyper {
        let mut out = self.clone();
        out.v += k;
        out
    }

    pub fn mul(&self, other: &Hyper) -> Hyper {
        let d = self.dim();
        debug_assert_eq!(d, other.dim());
        let (a, b) = (self.v, other.v);
        let g = (0..d).map(|i| a * other.g[i] + b * self.g[i]).collect();
        let mut h = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let k = i * d + j;
                h[k] = a * other.h[k]
                    + b * self.h[k]
                    + self.g[i] * other.g[j]
                    + other.g[i] * self.g[j];
            }
        }
        Hyper { v: a * b, g, h }
    }

    /// Chain rule for a scalar function given its value and first two derivatives
    /// at `self.v`.
    pub fn chain(&self, f0: f64, f1: f64, f2: f64) -> Hyper {
        let d = self.dim();
        let g = self.g.iter().map(|gi| f1 * gi).collect();
        let mut h = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let k = i * d + j;
                h[k] = f1 * self.h[k] + f2 * self.g[i] * self.g[j];
            }
        }
        Hyper { v: f0, g, h }
    }

    pub fn recip(&self) -> Result<Hyper> {
        let x = self.v;
        if x == 0.0 {
            return Err(Error::Domain("reciprocal of zero".into()));
        }
        Ok(self.chain(1.0 / x, -1.0 / (x * x), 2.0 / (x * x * x)))
    }

    pub fn div(&self, other: &Hyper) -> Result<Hyper> {
        Ok(self.mul(&other.recip()?))
    }

    pub fn sin(&self) -> Hyper {
        let (s, c) = self.v.sin_cos();
        self.chain(s, c, -s)
    }

    pub fn cos(&self) -> Hyper {
        let (s, c) = self.v.sin_cos();
        self.chain(c, -s, -c)
    }

    pub fn exp(&self) -> Hyper {
        let e = self.v.exp();
        self.chain(e, e, e)
    }

    pub fn ln(&self) -> Result<Hyper> {
        let x = self.v;
        if x <= 0.0 {
            return Err(Error::Domain(format!("log of non-positive value {x}")));
        }
        Ok(self.chain(x.ln(), 1.0 / x, -1.0 / (x * x)))
    }

    /// Real power; the base must be positive unless the exponent is a
    /// non-negative integer.
    pub fn powf(&self, p: f64) -> Result<Hyper> {
        let x = self.v;
        if p.fract() == 0.0 && p >= 0.0 {
            return Ok(self.powi(p as i32));
        }
        if x < 0.0 || (x == 0.0 && self.dim() > 0 && p < 2.0) {
            return Err(Error::Domain(format!("{x}^{p} is not differentiable")));
        }
        if x == 0.0 {
            return Ok(Hyper::constant(0.0, self.dim()));
        }
        Ok(self.chain(
            x.powf(p),
            p * x.powf(p - 1.0),
            p * (p - 1.0) * x.powf(p - 2.0),
        ))
    }

    pub fn powi(&self, n: i32) -> Hyper {
        let x = self.v;
        let nf = f64::from(n);
        let f1 = if n == 0 { 0.0 } else { nf * x.powi(n - 1) };
        let f2 = if (0..2).contains(&n) {
            0.0
        } else {
            nf * (nf - 1.0) * x.powi(n - 2)
        };
        self.chain(x.powi(n), f1, f2)
    }
}

/// Truncated Taylor series `sum_k c[k] s^k` with [`Hyper`] coefficients.
#[derive(Clone, Debug, PartialEq)]
pub struct Jet {
    pub c: Vec<Hyper>,
}

impl Jet {
    pub fn from_hyper(value: Hyper, order: usize) -> Jet {
        let dim = value.dim();
        let mut c = Vec::with_capacity(order + 1);
        c.push(value);
        c.extend((0..order).map(|_| Hyper::constant(0.0, dim)));
        Jet { c }
    }

    pub fn constant(v: f64, order: usize, dim: usize) -> Jet {
        Jet::from_hyper(Hyper::constant(v, dim), order)
    }

    pub fn order(&self) -> usize {
        self.c.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.c[0].dim()
    }

    pub fn value(&self) -> f64 {
        self.c[0].v
    }

    /// Same dimension and order as `self`, holding the constant `v`.
    pub fn lift(&self, v: f64) -> Jet {
        Jet::constant(v, self.order(), self.dim())
    }

    pub fn truncate(&self, order: usize) -> Jet {
        Jet {
            c: self.c[..=order.min(self.order())].to_vec(),
        }
    }

    /// d/ds of the series; the order drops by one (order-0 jets stay order 0 with
    /// a zero value).
    pub fn derivative(&self) -> Jet {
        if self.order() == 0 {
            return self.lift(0.0);
        }
        Jet {
            c: (1..=self.order())
                .map(|k| self.c[k].scale(k as f64))
                .collect(),
        }
    }

    fn common_order(&self, other: &Jet) -> usize {
        self.order().min(other.order())
    }

    pub fn add(&self, other: &Jet) -> Jet {
        let n = self.common_order(other);
        Jet {
            c: (0..=n).map(|k| self.c[k].add(&other.c[k])).collect(),
        }
    }

    pub fn sub(&self, other: &Jet) -> Jet {
        let n = self.common_order(other);
        Jet {
            c: (0..=n).map(|k| self.c[k].sub(&other.c[k])).collect(),
        }
    }

    pub fn neg(&self) -> Jet {
        self.scale(-1.0)
    }

    pub fn scale(&self, k: f64) -> Jet {
        Jet {
            c: self.c.iter().map(|a| a.scale(k)).collect(),
        }
    }

    pub fn add_scalar(&self, k: f64) -> Jet {
        let mut out = self.clone();
        out.c[0] = out.c[0].add_scalar(k);
        out
    }

    pub fn mul(&self, other: &Jet) -> Jet {
        let n = self.common_order(other);
        let c = (0..=n)
            .map(|k| {
                let mut acc = self.c[0].mul(&other.c[k]);
                for j in 1..=k {
                    acc = acc.add(&self.c[j].mul(&other.c[k - j]));
                }
                acc
            })
            .collect();
        Jet { c }
    }

    pub fn square(&self) -> Jet {
        self.mul(self)
    }

    /// `(sin a, cos a)` via the coupled recurrences
    /// `k s_k = sum j a_j c_{k-j}`, `k c_k = -sum j a_j s_{k-j}`.
    pub fn sin_cos(&self) -> (Jet, Jet) {
        let n = self.order();
        let mut s = vec![self.c[0].sin()];
        let mut c = vec![self.c[0].cos()];
        for k in 1..=n {
            let mut sk = Hyper::constant(0.0, self.dim());
            let mut ck = Hyper::constant(0.0, self.dim());
            for j in 1..=k {
                let ja = self.c[j].scale(j as f64);
                sk = sk.add(&ja.mul(&c[k - j]));
                ck = ck.sub(&ja.mul(&s[k - j]));
            }
            s.push(sk.scale(1.0 / k as f64));
            c.push(ck.scale(1.0 / k as f64));
        }
        (Jet { c: s }, Jet { c })
    }

    pub fn sin(&self) -> Jet {
        self.sin_cos().0
    }

    pub fn cos(&self) -> Jet {
        self.sin_cos().1
    }

    pub fn exp(&self) -> Jet {
        let mut e = vec![self.c[0].exp()];
        for k in 1..=self.order() {
            let mut ek = Hyper::constant(0.0, self.dim());
            for j in 1..=k {
                ek = ek.add(&self.c[j].scale(j as f64).mul(&e[k - j]));
            }
            e.push(ek.scale(1.0 / k as f64));
        }
        Jet { c: e }
    }

    pub fn recip(&self) -> Result<Jet> {
        let inv0 = self.c[0].recip()?;
        let mut q = vec![inv0.clone()];
        for k in 1..=self.order() {
            let mut acc = Hyper::constant(0.0, self.dim());
            for j in 1..=k {
                acc = acc.add(&self.c[j].mul(&q[k - j]));
            }
            q.push(acc.mul(&inv0).scale(-1.0));
        }
        Ok(Jet { c: q })
    }

    pub fn div(&self, other: &Jet) -> Result<Jet> {
        Ok(self.mul(&other.recip()?))
    }

    pub fn powi(&self, n: i32) -> Result<Jet> {
        if n < 0 {
            return self.recip()?.powi(-n);
        }
        let mut out = self.lift(1.0);
        let mut base = self.clone();
        let mut e = n as u32;
        while e > 0 {
            if e & 1 == 1 {
                out = out.mul(&base);
            }
            e >>= 1;
            if e > 0 {
                base = base.square();
            }
        }
        Ok(out)
    }

    /// Real power. Non-negative integer exponents are exact for any base; other
    /// exponents need a strictly positive base unless only the value is wanted.
    pub fn powf(&self, p: f64) -> Result<Jet> {
        if p.fract() == 0.0 && p.abs() < i32::MAX as f64 {
            return self.powi(p as i32);
        }
        let a0 = &self.c[0];
        if a0.v < 0.0 {
            return Err(Error::Domain(format!(
                "fractional power {p} of negative value {}",
                a0.v
            )));
        }
        if a0.v == 0.0 {
            let trivial = self.order() == 0 && self.dim() == 0;
            if trivial || p > self.order() as f64 + 2.0 {
                return Ok(self.lift(0.0));
            }
            return Err(Error::Domain(format!(
                "fractional power {p} is not differentiable at zero"
            )));
        }
        let inv0 = a0.recip()?;
        let mut b = vec![a0.powf(p)?];
        for k in 1..=self.order() {
            let mut acc = Hyper::constant(0.0, self.dim());
            for j in 1..=k {
                let coeff = p * j as f64 - (k - j) as f64;
                acc = acc.add(&self.c[j].mul(&b[k - j]).scale(coeff));
            }
            b.push(acc.mul(&inv0).scale(1.0 / k as f64));
        }
        Ok(Jet { c: b })
    }

    pub fn sqrt(&self) -> Result<Jet> {
        self.powf(0.5)
    }
}
