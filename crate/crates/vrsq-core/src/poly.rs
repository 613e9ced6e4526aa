//! Sparse multivariate polynomials over independent zero-mean Gaussian
//! variables, with exact second moments.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

/// A random variable of the rotation-noise model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    /// Common amplitude error, one per trial.
    Common,
    /// Differential amplitude error of pulse channel `i`.
    Diff(u8),
    /// Phase jitter of pulse at step `s`, segment `k`.
    Phase(u8, u8),
    /// Slow axis tilt, one per trial.
    Slow,
    /// Fast axis tilt at step `s`, segment `k`.
    Fast(u8, u8),
    /// Per-pulse amplitude error before splitting into common and differential parts.
    Amp(u8),
    /// Per-segment tilt before splitting into slow and fast parts.
    Tilt(u8, u8),
}

type Mono = Vec<(Var, u32)>;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Poly {
    terms: BTreeMap<Mono, f64>,
}

impl Poly {
    pub fn zero() -> Self {
        Poly::default()
    }

    pub fn constant(c: f64) -> Self {
        Poly::term(c, &[])
    }

    pub fn var(v: Var) -> Self {
        Poly::term(1.0, &[(v, 1)])
    }

    pub fn term(c: f64, factors: &[(Var, u32)]) -> Self {
        let mut p = Poly::zero();
        p.add_mono(normalize(factors.to_vec()), c);
        p
    }

    fn add_mono(&mut self, m: Mono, c: f64) {
        if c == 0.0 {
            return;
        }
        let e = self.terms.entry(m.clone()).or_insert(0.0);
        *e += c;
        if *e == 0.0 {
            self.terms.remove(&m);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add(&self, o: &Poly) -> Poly {
        let mut r = self.clone();
        for (m, &c) in &o.terms {
            r.add_mono(m.clone(), c);
        }
        r
    }

    pub fn scale(&self, s: f64) -> Poly {
        let mut r = Poly::zero();
        for (m, &c) in &self.terms {
            r.add_mono(m.clone(), c * s);
        }
        r
    }

    pub fn sub(&self, o: &Poly) -> Poly {
        self.add(&o.scale(-1.0))
    }

    pub fn mul(&self, o: &Poly) -> Poly {
        let mut r = Poly::zero();
        for (a, &ca) in &self.terms {
            for (b, &cb) in &o.terms {
                let mut m = a.clone();
                m.extend_from_slice(b);
                r.add_mono(normalize(m), ca * cb);
            }
        }
        r
    }

    pub fn pow(&self, n: u32) -> Poly {
        let mut r = Poly::constant(1.0);
        for _ in 0..n {
            r = r.mul(self);
        }
        r
    }

    /// Replace every variable by the polynomial `f(v)`.
    pub fn substitute(&self, f: &dyn Fn(Var) -> Poly) -> Poly {
        let mut r = Poly::zero();
        for (m, &c) in &self.terms {
            let mut t = Poly::constant(c);
            for &(v, k) in m {
                t = t.mul(&f(v).pow(k));
            }
            r = r.add(&t);
        }
        r
    }

    /// Keep only monomials whose variables all satisfy `keep`.
    pub fn restrict(&self, keep: &dyn Fn(Var) -> bool) -> Poly {
        let mut r = Poly::zero();
        for (m, &c) in &self.terms {
            if m.iter().all(|&(v, _)| keep(v)) {
                r.add_mono(m.clone(), c);
            }
        }
        r
    }

    /// Numerical value at a point.
    pub fn eval(&self, value: &dyn Fn(Var) -> f64) -> f64 {
        self.terms.iter().map(|(m, &c)| m.iter().fold(c, |acc, &(v, k)| acc * powi(value(v), k))).sum()
    }

    /// `E[p]` for independent zero-mean Gaussians with standard deviations `sigma(v)`.
    pub fn expectation(&self, sigma: &dyn Fn(Var) -> f64) -> f64 {
        self.terms.iter().map(|(m, &c)| m.iter().fold(c, |acc, &(v, k)| acc * gaussian_moment(sigma(v), k))).sum()
    }

    /// `sqrt(E[p^2])`.
    pub fn rms(&self, sigma: &dyn Fn(Var) -> f64) -> f64 {
        crate::math::sqrt(self.mul(self).expectation(sigma).max(0.0))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

fn normalize(mut m: Mono) -> Mono {
    m.retain(|&(_, k)| k > 0);
    m.sort();
    let mut out: Mono = Vec::with_capacity(m.len());
    for (v, k) in m {
        match out.last_mut() {
            Some((lv, lk)) if *lv == v => *lk += k,
            _ => out.push((v, k)),
        }
    }
    out
}

fn powi(x: f64, k: u32) -> f64 {
    (0..k).fold(1.0, |a, _| a * x)
}

/// `E[x^k] = sigma^k (k-1)!!` for even `k`, zero otherwise.
pub fn gaussian_moment(sigma: f64, k: u32) -> f64 {
    if k % 2 == 1 {
        return 0.0;
    }
    let mut df = 1.0;
    let mut j = k as i64 - 1;
    while j > 1 {
        df *= j as f64;
        j -= 2;
    }
    df * powi(sigma, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moments() {
        assert_eq!(gaussian_moment(2.0, 0), 1.0);
        assert_eq!(gaussian_moment(2.0, 1), 0.0);
        assert_eq!(gaussian_moment(2.0, 2), 4.0);
        assert_eq!(gaussian_moment(2.0, 4), 48.0);
        assert_eq!(gaussian_moment(1.0, 6), 15.0);
    }

    #[test]
    fn square_of_sum() {
        // (a + b)^2 with unit variances: E = 2, E[p^4] = 12
        let p = Poly::var(Var::Common).add(&Poly::var(Var::Slow));
        let s = |_| 1.0;
        assert_eq!(p.mul(&p).expectation(&s), 2.0);
        assert_eq!(p.pow(4).expectation(&s), 12.0);
        assert!((p.rms(&s) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn substitution_and_restriction() {
        // a1 * a2^2 with a_i = c + d_i
        let p = Poly::term(1.0, &[(Var::Amp(1), 1), (Var::Amp(2), 2)]);
        let q = p.substitute(&|v| match v {
            Var::Amp(i) => Poly::var(Var::Common).add(&Poly::var(Var::Diff(i))),
            o => Poly::var(o),
        });
        assert_eq!(q.len(), 6);
        let only_c = q.restrict(&|v| v == Var::Common);
        assert_eq!(only_c, Poly::term(1.0, &[(Var::Common, 3)]));
        let at = q.eval(&|v| match v {
            Var::Common => 0.5,
            Var::Diff(1) => 0.25,
            _ => -0.125,
        });
        assert!((at - 0.75 * 0.375 * 0.375).abs() < 1e-15);
    }

    #[test]
    fn cancellation_removes_terms() {
        let p = Poly::var(Var::Slow);
        assert!(p.sub(&p).is_zero());
    }
}
