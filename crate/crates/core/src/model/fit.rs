//! Maximum-likelihood fits over the Tsirelson polytope and the
//! statistical strength of a distribution against local realism.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::polytope::{NsAffine, NS_DIM};
use super::{ConditionalDistribution, CountsTable, LOCAL_BOUND, TSIRELSON_BOUND};
use crate::barrier::{maximize, BarrierOptions, Concave, Polyhedron};
use crate::error::Result;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MleFit {
    pub distribution: ConditionalDistribution,
    pub log_likelihood: f64,
    pub max_chsh: f64,
    pub newton_steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrengthReport {
    /// `(1/4) sum_xy KL(d(.|xy) || sigma(.|xy))` in bits.
    pub bits: f64,
    /// Minimizing local-realistic distribution `sigma`.
    pub closest_local: ConditionalDistribution,
}

/// `sum_i w_i ln p_i(v)` over the non-signaling parameterization.
struct WeightedLogLik<'a> {
    ns: &'a NsAffine,
    w: [f64; 16],
}

impl Concave for WeightedLogLik<'_> {
    fn dim(&self) -> usize {
        NS_DIM
    }

    fn value(&self, v: &[f64]) -> f64 {
        let p = self.ns.apply(v);
        (0..16)
            .filter(|&i| self.w[i] > 0.0)
            .map(|i| self.w[i] * p[i].ln())
            .sum()
    }

    fn grad_hess(&self, v: &[f64], g: &mut DVector<f64>, h: &mut DMatrix<f64>) {
        let p = self.ns.apply(v);
        g.fill(0.0);
        h.fill(0.0);
        for i in 0..16 {
            if self.w[i] == 0.0 {
                continue;
            }
            let row = &self.ns.lin[i];
            let gi = self.w[i] / p[i];
            let hi = gi / p[i];
            for a in 0..NS_DIM {
                if row[a] == 0.0 {
                    continue;
                }
                g[a] += gi * row[a];
                for b in 0..NS_DIM {
                    h[(a, b)] -= hi * row[a] * row[b];
                }
            }
        }
    }

    fn delta(&self, v: &[f64], step: &[f64]) -> f64 {
        let p = self.ns.apply(v);
        let mut sum = 0.0;
        for i in 0..16 {
            if self.w[i] == 0.0 {
                continue;
            }
            let dp: f64 = self.ns.lin[i].iter().zip(step).map(|(a, b)| a * b).sum();
            sum += self.w[i] * (dp / p[i]).ln_1p();
        }
        sum
    }
}

/// Maximizes `sum w_i ln p_i` over non-signaling `p` with every CHSH
/// expression at most `bound`.
fn max_weighted_loglik(
    what: &'static str,
    w: [f64; 16],
    bound: f64,
    opts: &BarrierOptions,
) -> Result<(ConditionalDistribution, usize)> {
    let ns = NsAffine::new();
    let hs = ns.halfspaces(bound);
    let rows = hs
        .iter()
        .map(|(_, a)| a.iter().map(|v| -v).collect())
        .collect();
    let b = hs.iter().map(|(b, _)| *b).collect();
    let poly = Polyhedron::new(rows, b);
    let obj = WeightedLogLik { ns: &ns, w };
    let start = ns.coords(&ConditionalDistribution::uniform());
    let sol = maximize(what, &obj, &poly, &start, opts)?;
    let mut p = ns.apply(&sol.x);
    for v in p.iter_mut() {
        *v = v.max(0.0);
    }
    let mut rows = [[0.0; 4]; 4];
    for z in 0..4 {
        rows[z].copy_from_slice(&p[4 * z..4 * z + 4]);
    }
    Ok((ConditionalDistribution::normalized(rows)?, sol.newton_steps))
}

/// Maximum-likelihood estimate of the trial distribution within the
/// Tsirelson polytope given calibration counts.
pub fn fit_mle(counts: &CountsTable) -> Result<MleFit> {
    let total = counts.total();
    if total == 0 {
        return Err(crate::Error::InvalidInput("empty counts table".into()));
    }
    let n = counts.rows();
    let w: [f64; 16] = std::array::from_fn(|i| n[i / 4][i % 4] as f64 / total as f64);
    let opts = BarrierOptions {
        gap_rel: 1e-13,
        gap_abs: 1e-15,
        polish: true,
        ..BarrierOptions::default()
    };
    let (distribution, newton_steps) = max_weighted_loglik("mle", w, TSIRELSON_BOUND, &opts)?;
    Ok(MleFit {
        log_likelihood: log_likelihood(counts, &distribution),
        max_chsh: distribution.max_chsh(),
        distribution,
        newton_steps,
    })
}

/// `sum n(ab|xy) ln p(ab|xy)`, skipping empty cells.
pub fn log_likelihood(counts: &CountsTable, d: &ConditionalDistribution) -> f64 {
    let mut sum = 0.0;
    for z in 0..4 {
        for c in 0..4 {
            let n = counts.rows()[z][c];
            if n > 0 {
                sum += n as f64 * d.row(z)[c].ln();
            }
        }
    }
    sum
}

/// Minimum over local-realistic `sigma` of the uniform-settings average
/// Kullback-Leibler divergence from `d`, in bits.
pub fn statistical_strength(d: &ConditionalDistribution) -> Result<StrengthReport> {
    let w: [f64; 16] = std::array::from_fn(|i| 0.25 * d.row(i / 4)[i % 4]);
    let opts = BarrierOptions {
        gap_rel: 0.0,
        gap_abs: 1e-14,
        ..BarrierOptions::default()
    };
    let (sigma, _) = max_weighted_loglik("strength", w, LOCAL_BOUND, &opts)?;
    Ok(StrengthReport {
        bits: mean_kl_bits(d, &sigma),
        closest_local: sigma,
    })
}

pub(crate) fn mean_kl_bits(d: &ConditionalDistribution, sigma: &ConditionalDistribution) -> f64 {
    let mut sum = 0.0;
    for z in 0..4 {
        for c in 0..4 {
            let p = d.row(z)[c];
            if p > 0.0 {
                sum += p * (p / sigma.row(z)[c]).ln();
            }
        }
    }
    0.25 * sum / std::f64::consts::LN_2
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mle_of_nonsignaling_interior_frequencies_is_identity() {
        let d = ConditionalDistribution::mixture(&[
            (0.7, &ConditionalDistribution::uniform()),
            (0.3, &ConditionalDistribution::pr_box()),
        ])
        .unwrap();
        let mut n = [[0u64; 4]; 4];
        for z in 0..4 {
            for c in 0..4 {
                n[z][c] = (d.row(z)[c] * 1e6).round() as u64;
            }
        }
        let fit = fit_mle(&CountsTable::new(n)).unwrap();
        assert!(fit.distribution.max_abs_diff(&d) < 1e-9);
    }

    #[test]
    fn mle_clips_to_tsirelson() {
        let pr = ConditionalDistribution::pr_box();
        let mut n = [[0u64; 4]; 4];
        for z in 0..4 {
            for c in 0..4 {
                n[z][c] = (pr.row(z)[c] * 1000.0) as u64;
            }
        }
        let fit = fit_mle(&CountsTable::new(n)).unwrap();
        assert!((fit.max_chsh - TSIRELSON_BOUND).abs() < 1e-6);
        assert!(fit.distribution.is_member_t(1e-9));
    }

    #[test]
    fn local_distributions_have_zero_strength() {
        let d = ConditionalDistribution::mixture(&[
            (0.5, &ConditionalDistribution::uniform()),
            (0.5, &ConditionalDistribution::deterministic([0, 1], [1, 1])),
        ])
        .unwrap();
        let s = statistical_strength(&d).unwrap();
        assert!(s.bits.abs() < 1e-12, "{}", s.bits);
    }

    #[test]
    fn tsirelson_point_strength() {
        // Isotropic mixture at CHSH = 2 sqrt 2 versus the local polytope.
        let v = 1.0 / std::f64::consts::SQRT_2;
        let d = ConditionalDistribution::mixture(&[
            (v, &ConditionalDistribution::pr_box()),
            (1.0 - v, &ConditionalDistribution::uniform()),
        ])
        .unwrap();
        let s = statistical_strength(&d).unwrap();
        assert!(s.closest_local.is_local(1e-9));
        // The closest local point is the isotropic mixture at CHSH = 2.
        let e = ConditionalDistribution::mixture(&[
            (0.5, &ConditionalDistribution::pr_box()),
            (0.5, &ConditionalDistribution::uniform()),
        ])
        .unwrap();
        assert!((s.bits - mean_kl_bits(&d, &e)).abs() < 1e-9, "{}", s.bits);
    }
}
