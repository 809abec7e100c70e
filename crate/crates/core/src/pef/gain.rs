//! Expected block gain, its variance, and the choice of the middle anchor.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::optimize::optimize_with_powers;
use super::table::build_with_powers;
use super::{PefTable, TrialPef, VertexPowers};
use crate::error::Result;
use crate::model::{
    block_capacity, tsirelson_vertices, ConditionalDistribution, InputDistribution,
};

/// Block-level statistics of `X = sum_j log2(F_j) / beta` for honest devices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GainReport {
    /// `E[X]` in bits per block.
    pub g_block: f64,
    /// `Var[X]` in bits^2 per block.
    pub var_block: f64,
    /// `E[log2 F_j] / beta` at each position `j`, given the block reaches it.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub per_position_gain: Option<Vec<f64>>,
}

pub fn block_gain(table: &PefTable, nu_h: &ConditionalDistribution) -> Result<GainReport> {
    block_gain_detailed(table, nu_h, false)
}

/// As [`block_gain`], optionally keeping the per-position gains.
///
/// Position `j` is reached with probability `omega_j = (2^k - j + 1) / 2^k`.
/// Reaching `j > i` means trial `i` was not the spot check, so it used
/// settings `00`; trials are conditionally independent given their settings.
pub fn block_gain_detailed(
    table: &PefTable,
    nu_h: &ConditionalDistribution,
    keep_positions: bool,
) -> Result<GainReport> {
    let n = table.capacity();
    let mut per = keep_positions.then(|| Vec::with_capacity(n as usize));
    let mut g = 0.0;
    let mut second = 0.0;
    // Sum over earlier positions of E[x_i | z = 00].
    let mut prior = 0.0;
    for j in 1..=n {
        let f = table.f_at(j)?;
        let nu = InputDistribution::at_position(j, table.k())?.table();
        let omega = (n - j + 1) as f64 / n as f64;
        let (mut m, mut s, mut a) = (0.0, 0.0, 0.0);
        for i in 0..16 {
            let p = nu_h.row(i / 4)[i % 4];
            if p == 0.0 {
                continue;
            }
            let x = f.log2_over_beta(i);
            let w = nu[i / 4] * p;
            m += w * x;
            s += w * x * x;
            if i < 4 {
                a += p * x;
            }
        }
        g += omega * m;
        second += omega * (s + 2.0 * m * prior);
        prior += a;
        if let Some(v) = per.as_mut() {
            v.push(m);
        }
    }
    Ok(GainReport {
        g_block: g,
        var_block: (second - g * g).max(0.0),
        per_position_gain: per,
    })
}

/// Gain of the individually optimized PEF at position `j`, in bits per trial.
pub fn optimal_position_gain(
    nu_h: &ConditionalDistribution,
    beta: f64,
    j: u64,
    k: u32,
) -> Result<f64> {
    let powers = VertexPowers::new(tsirelson_vertices()?, beta)?;
    let q = InputDistribution::at_position(j, k)?;
    Ok(optimize_with_powers(&powers, nu_h, q)?.1)
}

/// Middle-anchor position used when no search is run: the same fraction
/// `53478 / 2^17` of the block for every `k`.
pub fn default_j_mid(k: u32) -> u64 {
    let max = 1u64 << k;
    let scaled = ((53_478u128 << k) + (1 << 16)) >> 17;
    (scaled as u64).clamp(1, max)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JMidSearch {
    pub j_mid: u64,
    pub g_block: f64,
    /// Every `(j_mid, g_block)` evaluated, in increasing `j_mid`.
    pub evaluations: Vec<(u64, f64)>,
}

/// Maximizes the block gain over the middle anchor position: a log-spaced
/// grid in `q`, then integer golden-section search around the best grid
/// point.
pub fn search_j_mid(nu_h: &ConditionalDistribution, beta: f64, k: u32) -> Result<JMidSearch> {
    search_j_mid_with(nu_h, beta, k, 32, 0.0)
}

/// [`search_j_mid`] with `grid` log-spaced starting points, stopping the
/// golden-section search once the bracket is within `rel_tol * j` (or 4
/// positions).
pub fn search_j_mid_with(
    nu_h: &ConditionalDistribution,
    beta: f64,
    k: u32,
    grid: usize,
    rel_tol: f64,
) -> Result<JMidSearch> {
    let grid_len = grid.max(3);
    let max = block_capacity(k)?;
    let powers = VertexPowers::new(tsirelson_vertices()?, beta)?;
    let end = |j: u64| -> Result<TrialPef> {
        Ok(optimize_with_powers(&powers, nu_h, InputDistribution::at_position(j, k)?)?.0)
    };
    let ends = [end(1)?, end(max)?];
    let eval = |j: u64| -> Result<f64> {
        let t = build_with_powers(&powers, nu_h, k, &ends, j)?;
        Ok(block_gain(&t, nu_h)?.g_block)
    };

    let mut seen: BTreeMap<u64, f64> = BTreeMap::new();
    let grid: Vec<u64> = if max <= 64 {
        (1..=max).collect()
    } else {
        // j(q) = 2^k + 1 - 1/q over q in [1/(2^k - 1), 1/2].
        let (lo, hi) = ((1.0 / (max - 1) as f64).ln(), 0.5f64.ln());
        let mut g: Vec<u64> = (0..grid_len)
            .map(|i| {
                let q = (lo + (hi - lo) * i as f64 / (grid_len - 1) as f64).exp();
                ((max + 1) as f64 - 1.0 / q)
                    .round()
                    .clamp(2.0, (max - 1) as f64) as u64
            })
            .collect();
        g.dedup();
        g
    };
    let values: Vec<f64> = grid.par_iter().map(|&j| eval(j)).collect::<Result<_>>()?;
    for (&j, &v) in grid.iter().zip(&values) {
        seen.insert(j, v);
    }

    if max > 64 {
        let best = (0..grid.len())
            .max_by(|&a, &b| values[a].total_cmp(&values[b]))
            .unwrap_or(0);
        let mut lo = grid[best.saturating_sub(1)];
        let mut hi = grid[(best + 1).min(grid.len() - 1)];
        let f = |j: u64, seen: &mut BTreeMap<u64, f64>| -> Result<f64> {
            if let Some(v) = seen.get(&j) {
                return Ok(*v);
            }
            let v = eval(j)?;
            seen.insert(j, v);
            Ok(v)
        };
        while hi - lo > 4 && (hi - lo) as f64 > rel_tol * lo as f64 {
            let d = ((hi - lo) as f64 * 0.381_966_011_250_105).round() as u64;
            let (m1, m2) = (lo + d.max(1), hi - d.max(1));
            if f(m1, &mut seen)? >= f(m2, &mut seen)? {
                hi = m2;
            } else {
                lo = m1;
            }
        }
        if hi - lo <= 4 {
            for j in lo..=hi {
                f(j, &mut seen)?;
            }
        } else {
            f(lo + (hi - lo) / 2, &mut seen)?;
        }
    }

    let (j_mid, g_block) = seen
        .iter()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(j, v)| (*j, *v))
        .expect("at least one evaluation");
    Ok(JMidSearch {
        j_mid,
        g_block,
        evaluations: seen.into_iter().collect(),
    })
}
