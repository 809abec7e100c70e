//! Probability estimation factors (PEFs).
//!
//! A PEF with power `beta` for an input distribution `nu_q` is a nonnegative
//! `F(cz)` with `sum_cz nu_q(z) mu(c|z)^{1+beta} F(cz) <= 1` at every extreme
//! point `mu` of the model. Useful PEFs sit within `O(beta)` of the constant
//! `1`, so they are stored as excesses `e` with `F = 1 + beta e`; at
//! `beta ~ 1e-8` storing `F` directly would discard half the significant
//! digits of `log2(F) / beta`.

mod gain;
mod optimize;
mod table;

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ConditionalDistribution, InputDistribution, PolytopeVertexSet};

pub use gain::{
    block_gain, block_gain_detailed, default_j_mid, optimal_position_gain, search_j_mid,
    search_j_mid_with, GainReport, JMidSearch,
};
pub use optimize::{
    optimize_trial_pef, optimize_trial_pef_certified, optimize_trial_pef_with, PefOptimum,
};
pub use table::{build_pef_table, PefTable};

/// Absolute tolerance of the PEF inequality `E[F mu^beta] <= 1`.
pub const PEF_TOL: f64 = 1e-9;

/// A PEF for one trial position, `F = 1 + beta * excess`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialPef {
    excess: [f64; 16],
    beta: f64,
    /// `q` of the input distribution the PEF was built for.
    q: f64,
}

impl TrialPef {
    pub fn from_excess(excess: [f64; 16], beta: f64, q: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "PEF power {beta} must be positive"
            )));
        }
        if excess.iter().any(|e| !e.is_finite()) {
            return Err(Error::InvalidInput("non-finite PEF entry".into()));
        }
        Ok(Self { excess, beta, q })
    }

    /// From plain values `F(cz)` in `4 z + c` order.
    pub fn from_values(f: [f64; 16], beta: f64, q: f64) -> Result<Self> {
        Self::from_excess(f.map(|v| (v - 1.0) / beta), beta, q)
    }

    /// The constant PEF `F = 1`, valid for every model and power.
    pub fn one(beta: f64, q: f64) -> Result<Self> {
        Self::from_excess([0.0; 16], beta, q)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn excess(&self) -> &[f64; 16] {
        &self.excess
    }

    pub fn value(&self, i: usize) -> f64 {
        1.0 + self.beta * self.excess[i]
    }

    pub fn values(&self) -> [f64; 16] {
        std::array::from_fn(|i| self.value(i))
    }

    /// `log2(F(cz)) / beta` at flat index `i = 4 z + c`.
    pub fn log2_over_beta(&self, i: usize) -> f64 {
        let r = self.beta * self.excess[i];
        if r <= -1.0 {
            return f64::NEG_INFINITY;
        }
        r.ln_1p() / (self.beta * LN_2)
    }

    /// `E[log2 F] / beta` under `nu_q(z) nu_h(c|z)`, in bits.
    pub fn expected_gain(&self, nu_h: &ConditionalDistribution) -> f64 {
        let nu = InputDistribution::from_q(self.q)
            .map(|d| d.table())
            .unwrap_or([0.25; 4]);
        let mut g = 0.0;
        for i in 0..16 {
            let w = nu[i / 4] * nu_h.row(i / 4)[i % 4];
            if w > 0.0 {
                g += w * self.log2_over_beta(i);
            }
        }
        g
    }
}

/// A PEF lifted to the uniform-input model: `F~(cz) = 4 nu_q(z) F(cz)`,
/// stored as `F~ = 4 nu_q(z) + beta * lifted`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LiftedPef {
    lifted: [f64; 16],
    beta: f64,
    q: f64,
}

impl LiftedPef {
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn lifted_excess(&self) -> &[f64; 16] {
        &self.lifted
    }

    /// Plain values `F~(cz)`.
    pub fn values(&self) -> [f64; 16] {
        let nu = InputDistribution::from_q(self.q)
            .map(|d| d.table())
            .unwrap_or([0.25; 4]);
        std::array::from_fn(|i| 4.0 * nu[i / 4] + self.beta * self.lifted[i])
    }

    /// The same PEF as a [`TrialPef`] for uniform inputs.
    pub fn as_uniform_pef(&self) -> Result<TrialPef> {
        TrialPef::from_values(self.values(), self.beta, 1.0)
    }

    /// Inverse of [`lift_to_uniform`].
    pub fn unlift(&self) -> Result<TrialPef> {
        let nu = InputDistribution::from_q(self.q)?.table();
        TrialPef::from_excess(
            std::array::from_fn(|i| self.lifted[i] / (4.0 * nu[i / 4])),
            self.beta,
            self.q,
        )
    }
}

/// `F~(cz) = 4 nu_q(z) F(cz)`, a PEF for the uniform-input model whenever `F`
/// is one for `nu_q`.
pub fn lift_to_uniform(f: &TrialPef, q: InputDistribution) -> LiftedPef {
    let nu = q.table();
    LiftedPef {
        lifted: std::array::from_fn(|i| 4.0 * nu[i / 4] * f.excess[i]),
        beta: f.beta,
        q: q.q(),
    }
}

/// Linear interpolation in `q` between lifted anchors at increasing `q`,
/// un-lifted at `q_j`. Anchors returned exactly at their own positions.
pub fn interpolate(anchors: &[LiftedPef; 3], j: u64, k: u32) -> Result<TrialPef> {
    let q_j = InputDistribution::at_position(j, k)?.q();
    if !(anchors[0].q <= anchors[1].q && anchors[1].q <= anchors[2].q) {
        return Err(Error::InvalidPefTable(
            "anchors must have nondecreasing q".into(),
        ));
    }
    if anchors.iter().any(|a| a.beta != anchors[0].beta) {
        return Err(Error::InvalidPefTable(
            "anchors have different powers".into(),
        ));
    }
    if q_j < anchors[0].q || q_j > anchors[2].q {
        return Err(Error::InvalidInput(format!(
            "q = {q_j} at position {j} lies outside the anchor range"
        )));
    }
    let (lo, hi) = if q_j <= anchors[1].q {
        (&anchors[0], &anchors[1])
    } else {
        (&anchors[1], &anchors[2])
    };
    if q_j == lo.q {
        return lo.unlift();
    }
    if q_j == hi.q {
        return hi.unlift();
    }
    let t = (q_j - lo.q) / (hi.q - lo.q);
    let lifted = std::array::from_fn(|i| (1.0 - t) * lo.lifted[i] + t * hi.lifted[i]);
    LiftedPef {
        lifted,
        beta: lo.beta,
        q: q_j,
    }
    .unlift()
}

/// Vertex data for a fixed power: `mu^{1+beta}` and
/// `mu (1 - mu^beta) / beta`, both evaluated without cancellation.
pub(crate) struct VertexPowers {
    pub beta: f64,
    pub pow: Vec<[f64; 16]>,
    pub deficit: Vec<[f64; 16]>,
}

impl VertexPowers {
    pub fn new(model: &PolytopeVertexSet, beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "PEF power {beta} must be positive"
            )));
        }
        let mut pow = Vec::with_capacity(model.len());
        let mut deficit = Vec::with_capacity(model.len());
        for v in model.vertices() {
            let flat = v.flat();
            pow.push(flat.map(|m| {
                if m > 0.0 {
                    m * (beta * m.ln()).exp()
                } else {
                    0.0
                }
            }));
            deficit.push(flat.map(|m| {
                if m > 0.0 {
                    -m * (beta * m.ln()).exp_m1() / beta
                } else {
                    0.0
                }
            }));
        }
        Ok(Self { beta, pow, deficit })
    }

    pub fn len(&self) -> usize {
        self.pow.len()
    }

    /// `sum_cz nu(z) mu(cz) (1 - mu(cz)^beta) / beta` for vertex `v`.
    pub fn rhs_over_beta(&self, v: usize, nu: &[f64; 4]) -> f64 {
        (0..16).map(|i| nu[i / 4] * self.deficit[v][i]).sum()
    }

    /// `(E[F mu^beta] - 1) / beta` at vertex `v`.
    pub fn scaled_excess(&self, v: usize, nu: &[f64; 4], excess: &[f64; 16]) -> f64 {
        let lhs: f64 = (0..16)
            .map(|i| nu[i / 4] * self.pow[v][i] * excess[i])
            .sum();
        lhs - self.rhs_over_beta(v, nu)
    }
}

/// Largest value of `E[F mu^beta] - 1` over the extreme points `mu`, with `F`
/// a PEF under input distribution `q`.
pub fn max_violation(f: &TrialPef, q: InputDistribution, model: &PolytopeVertexSet) -> Result<f64> {
    Ok(f.beta * max_scaled_violation(f, q, model)?)
}

/// [`max_violation`] divided by `beta`, the natural scale of the excess.
pub fn max_scaled_violation(
    f: &TrialPef,
    q: InputDistribution,
    model: &PolytopeVertexSet,
) -> Result<f64> {
    let powers = VertexPowers::new(model, f.beta)?;
    let nu = q.table();
    Ok((0..powers.len())
        .map(|v| powers.scaled_excess(v, &nu, &f.excess))
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Nonnegativity plus the PEF inequality at every extreme point, both to
/// within [`PEF_TOL`].
pub fn is_valid_pef(f: &TrialPef, q: InputDistribution, model: &PolytopeVertexSet) -> bool {
    if (0..16).any(|i| f.value(i) < -PEF_TOL) {
        return false;
    }
    match max_violation(f, q, model) {
        Ok(v) => v <= PEF_TOL,
        Err(_) => false,
    }
}

/// Smooth min-entropy bound `-log2 p + ((1 + beta) / beta) log2 kappa` where
/// `log2_t = -beta log2 p - log2 eps_s`.
///
/// A nonpositive result means nothing is certified.
pub fn entropy_certificate(log2_t: f64, beta: f64, eps_s: f64, kappa: f64) -> Result<f64> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::InvalidRegime(format!(
            "beta = {beta} must be positive"
        )));
    }
    if !(eps_s > 0.0 && eps_s <= 1.0) {
        return Err(Error::InvalidRegime(format!(
            "eps_s = {eps_s} outside (0, 1]"
        )));
    }
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(Error::InvalidRegime(format!(
            "kappa = {kappa} outside (0, 1]"
        )));
    }
    if !log2_t.is_finite() {
        return Err(Error::InvalidRegime(
            "PEF product is zero or infinite".into(),
        ));
    }
    let neg_log2_p = (log2_t + eps_s.log2()) / beta;
    Ok(neg_log2_p + (1.0 + beta) / beta * kappa.log2())
}

/// Input entropy handed to the extractor when the witness reaches `g_min`:
/// `g_min + log2(eps_en) / beta + log2(eps)`.
///
/// Equals [`entropy_certificate`] with `log2_t = beta * g_min`,
/// `kappa = eps` and `eps_s = eps_en / eps`.
pub fn protocol_sigma_in(g_min: f64, beta: f64, eps_en: f64, eps: f64) -> f64 {
    g_min + eps_en.log2() / beta + eps.log2()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tsirelson_vertices;

    #[test]
    fn constant_one_is_valid() {
        let vs = tsirelson_vertices().unwrap();
        for &beta in &[1e-8, 1e-3, 0.5, 2.0] {
            for &q in &[1.0 / 131072.0, 0.3, 1.0, 1.3] {
                let f = TrialPef::one(beta, q).unwrap();
                assert!(is_valid_pef(&f, InputDistribution::from_q(q).unwrap(), vs));
            }
        }
    }

    #[test]
    fn constructed_violation_is_caught() {
        let vs = tsirelson_vertices().unwrap();
        let q = InputDistribution::uniform();
        let beta = 0.01;
        // At F = 1 the tight vertices are the deterministic ones; raising one
        // entry by 4e-3 / mu^{1+beta} breaks them by 1e-3.
        let mut f = [1.0; 16];
        f[5] += 4e-3;
        let pef = TrialPef::from_values(f, beta, 1.0).unwrap();
        let v = max_violation(&pef, q, vs).unwrap();
        assert!((v - 1e-3).abs() < 1e-12, "{v}");
        assert!(!is_valid_pef(&pef, q, vs));
    }

    #[test]
    fn entropy_certificate_reductions() {
        let beta = 4.7614e-8;
        let eps_s = 5.6822e-7;
        let b = entropy_certificate(0.0, beta, eps_s, 1.0).unwrap();
        assert!((b - eps_s.log2() / beta).abs() < 1e-6 * b.abs());
        let b1 = entropy_certificate(10.0, beta, eps_s, 0.25).unwrap();
        let b2 = entropy_certificate(10.0, beta, eps_s, 0.5).unwrap();
        assert!(((b2 - b1) - (1.0 + beta) / beta).abs() < 1e-6);
        assert!(entropy_certificate(1.0, beta, 0.0, 1.0).is_err());
        assert!(entropy_certificate(1.0, beta, 0.5, 1.5).is_err());
    }

    #[test]
    fn protocol_sigma_in_matches_certificate() {
        let (g, beta, eps_en, eps) = (1_616_998_677.0, 4.7614e-8, 5.6822e-7, 5.7e-7);
        let direct = protocol_sigma_in(g, beta, eps_en, eps);
        let via = entropy_certificate(beta * g, beta, eps_en / eps, eps).unwrap();
        assert!((direct - via).abs() < 1e-3, "{direct} {via}");
    }

    #[test]
    fn lift_at_uniform_is_identity() {
        let f = TrialPef::from_excess(std::array::from_fn(|i| i as f64 - 7.5), 1e-3, 1.0).unwrap();
        let l = lift_to_uniform(&f, InputDistribution::uniform());
        assert_eq!(l.lifted_excess(), f.excess());
        assert_eq!(l.unlift().unwrap(), f);
    }
}
