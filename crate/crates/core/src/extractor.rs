//! Parameter arithmetic for Trevisan's extractor in the
//! Mauerer-Portmann-Scholz parameterization (TMPS).
//!
//! Only the budget is computed: how many bits `k_out` can be extracted from
//! `m_in` input bits carrying `sigma_in` bits of smooth min-entropy, and how
//! long a seed `d_s` that takes.

use std::f64::consts::E;

use num_bigint::BigUint;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A complete extractor budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractorParams {
    pub m_in: u64,
    pub sigma_in: f64,
    pub eps_ext: f64,
    /// Overall soundness error; `eps_ext < eps`.
    pub eps: f64,
    pub k_out: u64,
    pub d_s: u64,
    /// Prime used by the weak design.
    pub w: u64,
}

/// How far each constraint is from binding; negative means violated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSlacks {
    /// `sigma_in - 6 + 4 log2(eps_ext) - k_out - 4 log2(k_out)`.
    pub output_length: f64,
    /// Largest allowed seed length minus `d_s`.
    pub seed_length: i128,
    /// `m_in + ((1 + beta) / beta) log2(eps) - sigma_in`, when a power is given.
    pub entropy_cap: Option<f64>,
    /// `eps - eps_ext`.
    pub error_split: f64,
}

impl ExtractorParams {
    /// Largest output and the matching seed for the given input budget.
    pub fn budget(m_in: u64, sigma_in: f64, eps_ext: f64, eps: f64) -> Result<Self> {
        if !(eps_ext > 0.0 && eps_ext <= 1.0) {
            return Err(Error::InvalidInput(format!(
                "eps_ext = {eps_ext} outside (0, 1]"
            )));
        }
        if !(sigma_in >= 1.0 && sigma_in <= m_in as f64) {
            return Err(Error::InvalidInput(format!(
                "sigma_in = {sigma_in} outside [1, m_in = {m_in}]"
            )));
        }
        let k_out = max_kout(sigma_in, eps_ext)?;
        let (d_s, w) = seed_length(m_in, k_out, eps_ext)?;
        Ok(Self {
            m_in,
            sigma_in,
            eps_ext,
            eps,
            k_out,
            d_s,
            w,
        })
    }

    pub fn slacks(&self, beta: Option<f64>) -> ConstraintSlacks {
        let k = self.k_out as f64;
        let output_length = self.sigma_in - 6.0 + 4.0 * self.eps_ext.log2() - k - 4.0 * k.log2();
        let seed_length = match seed_bound(self.k_out, self.w) {
            Ok(bound) => bound as i128 - self.d_s as i128,
            Err(_) => i128::MIN,
        };
        ConstraintSlacks {
            output_length,
            seed_length,
            entropy_cap: beta
                .map(|b| self.m_in as f64 + (1.0 + b) / b * self.eps.log2() - self.sigma_in),
            error_split: self.eps - self.eps_ext,
        }
    }
}

/// Deterministic Miller-Rabin for 64-bit integers.
pub fn is_prime(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    for p in BASES {
        if n.is_multiple_of(p) {
            return n == p;
        }
    }
    let mut d = n - 1;
    let mut r = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        r += 1;
    }
    let mul = |a: u64, b: u64| ((a as u128 * b as u128) % n as u128) as u64;
    let pow = |mut a: u64, mut e: u64| {
        let mut acc = 1u64;
        while e > 0 {
            if e & 1 == 1 {
                acc = mul(acc, a);
            }
            a = mul(a, a);
            e >>= 1;
        }
        acc
    };
    'witness: for a in BASES {
        let mut x = pow(a, d);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..r {
            x = mul(x, x);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Least prime strictly greater than `n`.
pub fn smallest_prime_above(n: u64) -> Result<u64> {
    let mut c = n
        .checked_add(1)
        .ok_or_else(|| Error::InvalidInput("n too large".into()))?;
    while !is_prime(c) {
        c = c
            .checked_add(1)
            .ok_or_else(|| Error::InvalidInput("n too large".into()))?;
    }
    Ok(c)
}

/// Largest integer `k_out >= 1` with
/// `k_out + 4 log2(k_out) <= sigma_in - 6 + 4 log2(eps_ext)`.
pub fn max_kout(sigma_in: f64, eps_ext: f64) -> Result<u64> {
    if !(eps_ext > 0.0) || !sigma_in.is_finite() {
        return Err(Error::InvalidInput(
            "max_kout needs finite sigma_in and eps_ext > 0".into(),
        ));
    }
    let rhs = sigma_in - 6.0 + 4.0 * eps_ext.log2();
    let ok = |k: u64| (k as f64) + 4.0 * (k as f64).log2() <= rhs;
    if !ok(1) {
        return Err(Error::Infeasible(format!(
            "sigma_in = {sigma_in} leaves no room for output at eps_ext = {eps_ext}"
        )));
    }
    // ok(lo) holds, ok(hi) fails.
    let mut lo = 1u64;
    let mut hi = rhs.floor() as u64 + 1;
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Seed length `d_s` and prime `w` for output length `k_out`.
///
/// `w` is the least prime above `2 ceil(log2(4 m_in k_out^2 / eps_ext^2))`,
/// with the ceiling evaluated exactly on the binary value of `eps_ext`.
pub fn seed_length(m_in: u64, k_out: u64, eps_ext: f64) -> Result<(u64, u64)> {
    if m_in == 0 || k_out == 0 || !(eps_ext > 0.0 && eps_ext.is_finite()) {
        return Err(Error::InvalidInput(
            "seed_length needs positive arguments".into(),
        ));
    }
    let l = ceil_log2_design(m_in, k_out, eps_ext);
    if l < 1 {
        return Err(Error::InvalidInput("design size is degenerate".into()));
    }
    let w = smallest_prime_above(2 * l as u64)?;
    Ok((seed_bound(k_out, w)?, w))
}

/// `w^2 max(2, 1 + ceil((log2(k - e) - log2(w - e)) / (log2 e - log2(e - 1))))`.
fn seed_bound(k_out: u64, w: u64) -> Result<u64> {
    let (k, wf) = (k_out as f64, w as f64);
    if k <= E || wf <= E {
        return Err(Error::InvalidInput(format!(
            "seed length formula needs k_out > e and w > e (k_out = {k_out}, w = {w})"
        )));
    }
    let ratio = ((k - E).log2() - (wf - E).log2()) / (E.log2() - (E - 1.0).log2());
    let factor = (1.0 + ratio.ceil()).max(2.0) as u64;
    w.checked_mul(w)
        .and_then(|w2| w2.checked_mul(factor))
        .ok_or_else(|| Error::InvalidInput("seed length overflows".into()))
}

/// `ceil(log2(4 m k^2 / eps^2))` in exact arithmetic.
fn ceil_log2_design(m: u64, k: u64, eps: f64) -> i64 {
    // eps = mant * 2^exp exactly.
    let (mant, exp) = decompose(eps);
    let num = BigUint::from(4u32) * BigUint::from(m) * BigUint::from(k) * BigUint::from(k);
    let den = BigUint::from(mant) * BigUint::from(mant);
    ceil_log2_ratio(&num, &den) - 2 * exp
}

fn decompose(x: f64) -> (u64, i64) {
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i64;
    let frac = bits & ((1u64 << 52) - 1);
    if exp == 0 {
        (frac, -1074)
    } else {
        (frac | (1u64 << 52), exp - 1075)
    }
}

/// Smallest integer `L` with `num <= den * 2^L`.
fn ceil_log2_ratio(num: &BigUint, den: &BigUint) -> i64 {
    let fits = |l: i64| -> bool {
        if l >= 0 {
            *num <= den << (l as usize)
        } else {
            num << ((-l) as usize) <= *den
        }
    };
    let mut l = num.bits() as i64 - den.bits() as i64 - 1;
    while !fits(l) {
        l += 1;
    }
    while fits(l - 1) {
        l -= 1;
    }
    l
}

/// Membership of `(sigma_in, d_s, eps_ext)` in the admissible set for a PEF
/// power `beta`: TMPS constraints, `eps_ext < eps`,
/// `1 <= sigma_in <= m_in` and `sigma_in <= m_in + ((1 + beta) / beta) log2(eps)`.
pub fn check_set_x(p: &ExtractorParams, beta: f64) -> bool {
    if !(p.eps_ext > 0.0 && p.eps_ext < p.eps && p.eps <= 1.0) {
        return false;
    }
    if !(p.sigma_in >= 1.0 && p.sigma_in <= p.m_in as f64) || p.k_out as f64 > p.sigma_in {
        return false;
    }
    if p.k_out == 0 {
        return false;
    }
    let s = p.slacks(Some(beta));
    let prime_ok = match seed_length(p.m_in, p.k_out, p.eps_ext) {
        Ok((_, w)) => w == p.w,
        Err(_) => false,
    };
    prime_ok && s.output_length >= 0.0 && s.seed_length >= 0 && s.entropy_cap.unwrap_or(0.0) >= 0.0
}
