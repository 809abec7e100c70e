//! Per-position PEF optimization.
//!
//! Variables are the lifted excesses `u(cz) = 4 nu_q(z) e(cz)`, where
//! `F = 1 + beta e`. In these variables every vertex constraint has
//! coefficients `mu^{1+beta} / 4` and right-hand side
//! `sum nu_q(z) mu (1 - mu^beta) / beta`, all of order one even when `beta`
//! is tiny.

use std::f64::consts::LN_2;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{TrialPef, VertexPowers};
use crate::barrier::{maximize, BarrierOptions, Concave, Polyhedron};
use crate::error::{Error, Result};
use crate::model::{
    tsirelson_vertices, ConditionalDistribution, InputDistribution, PolytopeVertexSet,
};

/// `sum_cz w(cz) ln(1 + beta u(cz) / s(z)) / beta` with `s(z) = 4 nu_q(z)`.
struct LogPefObjective {
    beta: f64,
    w: [f64; 16],
    scale: [f64; 16],
}

impl LogPefObjective {
    fn ratio(&self, i: usize, u: f64) -> f64 {
        self.beta * u / self.scale[i]
    }
}

impl Concave for LogPefObjective {
    fn dim(&self) -> usize {
        16
    }

    fn value(&self, u: &[f64]) -> f64 {
        (0..16)
            .filter(|&i| self.w[i] > 0.0)
            .map(|i| self.w[i] * self.ratio(i, u[i]).ln_1p() / self.beta)
            .sum()
    }

    fn grad_hess(&self, u: &[f64], g: &mut DVector<f64>, h: &mut DMatrix<f64>) {
        h.fill(0.0);
        for i in 0..16 {
            if self.w[i] == 0.0 {
                g[i] = 0.0;
                continue;
            }
            let f = 1.0 + self.ratio(i, u[i]);
            let d = self.w[i] / (self.scale[i] * f);
            g[i] = d;
            h[(i, i)] = -d * self.beta / (self.scale[i] * f);
        }
    }

    fn delta(&self, u: &[f64], step: &[f64]) -> f64 {
        (0..16)
            .filter(|&i| self.w[i] > 0.0)
            .map(|i| {
                let f = 1.0 + self.ratio(i, u[i]);
                self.w[i] * (self.ratio(i, step[i]) / f).ln_1p() / self.beta
            })
            .sum()
    }
}

/// Result of a PEF optimization with its optimality certificate.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PefOptimum {
    pub pef: TrialPef,
    /// `E[log2 F] / beta` in bits per trial.
    pub gain: f64,
    /// Upper bound on `optimum - gain` in bits, from a dual feasible point.
    pub gap_bound: f64,
}

/// Largest certified gap accepted, relative to the gain.
const GAP_REL: f64 = 1e-8;
/// Absolute floor on the `E[ln F]` scale, for gains near zero.
const GAP_ABS: f64 = 1e-11;

/// Optimal PEF at one position against the Tsirelson polytope.
///
/// Returns the PEF and its expected gain `E[log2 F] / beta` in bits per trial.
pub fn optimize_trial_pef(
    nu_h: &ConditionalDistribution,
    q: InputDistribution,
    beta: f64,
) -> Result<(TrialPef, f64)> {
    optimize_trial_pef_with(tsirelson_vertices()?, nu_h, q, beta)
}

/// As [`optimize_trial_pef`], also returning the duality-gap certificate.
pub fn optimize_trial_pef_certified(
    model: &PolytopeVertexSet,
    nu_h: &ConditionalDistribution,
    q: InputDistribution,
    beta: f64,
) -> Result<PefOptimum> {
    let powers = VertexPowers::new(model, beta)?;
    solve(&powers, nu_h, q)
}

/// As [`optimize_trial_pef`] for an arbitrary finite model given by its
/// extreme points.
pub fn optimize_trial_pef_with(
    model: &PolytopeVertexSet,
    nu_h: &ConditionalDistribution,
    q: InputDistribution,
    beta: f64,
) -> Result<(TrialPef, f64)> {
    let powers = VertexPowers::new(model, beta)?;
    optimize_with_powers(&powers, nu_h, q)
}

pub(crate) fn optimize_with_powers(
    powers: &VertexPowers,
    nu_h: &ConditionalDistribution,
    q: InputDistribution,
) -> Result<(TrialPef, f64)> {
    let opt = solve(powers, nu_h, q)?;
    if !(opt.gap_bound <= GAP_REL * opt.gain.abs() + GAP_ABS / powers.beta) {
        return Err(Error::NonConvergence {
            what: "pef",
            iterations: 0,
            residual: opt.gap_bound,
            best: opt.pef.excess().to_vec(),
        });
    }
    Ok((opt.pef, opt.gain))
}

fn solve(
    powers: &VertexPowers,
    nu_h: &ConditionalDistribution,
    q: InputDistribution,
) -> Result<PefOptimum> {
    let beta = powers.beta;
    let nu = q.table();
    if nu.iter().any(|v| *v <= 0.0) {
        return Err(Error::InvalidInput(
            "input distribution must give every setting positive weight".into(),
        ));
    }
    let scale: [f64; 16] = std::array::from_fn(|i| 4.0 * nu[i / 4]);
    let w: [f64; 16] = std::array::from_fn(|i| nu[i / 4] * nu_h.row(i / 4)[i % 4]);

    let mut rows = Vec::with_capacity(powers.len() + 16);
    let mut b = Vec::with_capacity(powers.len() + 16);
    for v in 0..powers.len() {
        rows.push(powers.pow[v].iter().map(|p| 0.25 * p).collect());
        b.push(powers.rhs_over_beta(v, &nu));
    }
    for i in 0..16 {
        let mut r = vec![0.0; 16];
        r[i] = -1.0;
        rows.push(r);
        b.push(scale[i] / beta);
    }
    let poly = Polyhedron::new(rows, b);
    let start_e = -(0.5 / beta).min(1.0);
    let start: Vec<f64> = scale.iter().map(|s| s * start_e).collect();
    let obj = LogPefObjective { beta, w, scale };
    let opts = BarrierOptions {
        gap_rel: 1e-9,
        gap_abs: 1e-16,
        ..BarrierOptions::default()
    };
    let sol = maximize("pef", &obj, &poly, &start, &opts)?;
    let excess: [f64; 16] = std::array::from_fn(|i| sol.x[i] / scale[i]);
    let pef = TrialPef::from_excess(excess, beta, q.q())?;
    let gain = pef.expected_gain(nu_h);
    let nv = powers.len();
    let slacks = poly.slacks(&DVector::from_column_slice(&sol.x));
    let barrier_duals = &sol.duals[..nv];
    let mut gap = dual_gap(&obj, &poly, nv, &sol.x, &slacks, barrier_duals);
    if let Some(refined) = refine_duals(&obj, &poly, nv, &sol.x, barrier_duals) {
        gap = gap.min(dual_gap(&obj, &poly, nv, &sol.x, &slacks, &refined));
    }
    Ok(PefOptimum {
        pef,
        gain,
        gap_bound: gap / LN_2,
    })
}

/// Multipliers of the clearly active vertices fitted by least squares to
/// stationarity at `u`; `None` if the fit leaves the nonnegative orthant.
fn refine_duals(
    obj: &LogPefObjective,
    poly: &Polyhedron,
    nv: usize,
    u: &[f64],
    lambda: &[f64],
) -> Option<Vec<f64>> {
    let max = lambda.iter().cloned().fold(0.0, f64::max);
    let active: Vec<usize> = (0..nv).filter(|&v| lambda[v] > 1e-6 * max).collect();
    let rows: Vec<usize> = (0..16).filter(|&i| obj.w[i] > 0.0).collect();
    if active.is_empty() {
        return None;
    }
    let b = DMatrix::from_fn(rows.len(), active.len(), |r, a| {
        poly.a[(active[a], rows[r])]
    });
    let g = DVector::from_fn(rows.len(), |r, _| {
        let i = rows[r];
        obj.w[i] / (obj.scale[i] * (1.0 + obj.ratio(i, u[i])))
    });
    let fit = b.svd(true, true).solve(&g, 1e-14).ok()?;
    if fit.iter().any(|x| !(*x >= 0.0)) {
        return None;
    }
    let mut out = vec![0.0; nv];
    for (a, &v) in active.iter().enumerate() {
        out[v] = fit[a];
    }
    Some(out)
}

/// Weak-duality bound on the suboptimality of `u` using vertex multipliers
/// `theta * lambda`, with `F >= 0` treated as the objective's domain:
/// `sum_v theta lambda_v slack_v` plus the Fenchel-Young gap of each
/// coordinate. `theta` minimizes the bound; it absorbs the common scale
/// error of multipliers estimated from tiny active slacks.
fn dual_gap(
    obj: &LogPefObjective,
    poly: &Polyhedron,
    nv: usize,
    u: &[f64],
    slacks: &DVector<f64>,
    lambda: &[f64],
) -> f64 {
    let beta = obj.beta;
    // All sums below are scaled by beta.
    let slack_term: f64 = beta * (0..nv).map(|v| lambda[v] * slacks[v].max(0.0)).sum::<f64>();
    let mut ratio = [0.0; 16];
    let mut linear = slack_term;
    let mut weight = 0.0;
    for i in 0..16 {
        let c: f64 = (0..nv).map(|v| lambda[v] * poly.a[(v, i)]).sum();
        let y = 1.0 + obj.ratio(i, u[i]);
        let s = obj.scale[i];
        if obj.w[i] > 0.0 {
            if c <= 0.0 {
                return f64::INFINITY;
            }
            ratio[i] = y * s * c / obj.w[i];
            linear += obj.w[i] * ratio[i];
            weight += obj.w[i];
        } else {
            linear += c * s * y.max(0.0);
        }
    }
    let theta = weight / linear;
    let mut gap = theta
        * (linear
            - (0..16)
                .filter(|&i| obj.w[i] > 0.0)
                .map(|i| obj.w[i] * ratio[i])
                .sum::<f64>());
    for i in 0..16 {
        if obj.w[i] > 0.0 {
            let rho = theta * ratio[i] - 1.0;
            gap += obj.w[i] * (rho - rho.ln_1p());
        }
    }
    gap / beta
}
