//! Commissioning-time planning: whether a number of blocks suffices for
//! randomness expansion, the fewest blocks that do, the best maximum block
//! length, and the success threshold with its (heuristic, normal
//! approximation) completeness.

use std::collections::HashMap;
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::extractor::{max_kout, seed_length};
use crate::model::{block_capacity, ConditionalDistribution};
use crate::pef::{block_gain, build_pef_table, default_j_mid, search_j_mid_with};
use crate::protocol::consumed_bits;

const GOLDEN: f64 = 0.381_966_011_250_105;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanConfig {
    pub beta_min: f64,
    pub beta_max: f64,
    pub beta_grid: usize,
    /// Stop refining once the `ln(beta)` bracket is this narrow.
    pub ln_beta_tol: f64,
    pub j_mid: JMidChoice,
    /// Number of standard deviations between the expected witness and the
    /// success threshold.
    pub threshold_sigmas: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            beta_min: 1e-10,
            beta_max: 1e-5,
            beta_grid: 40,
            ln_beta_tol: 1e-3,
            j_mid: JMidChoice::Search {
                grid: 12,
                rel_tol: 0.01,
            },
            threshold_sigmas: 2.5,
        }
    }
}

/// How the middle anchor is placed for each `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum JMidChoice {
    /// Maximize the block gain; see [`search_j_mid_with`].
    Search {
        grid: usize,
        rel_tol: f64,
    },
    /// [`default_j_mid`].
    Default,
    Fixed(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub beta: f64,
    pub g_block: f64,
    pub var_block: f64,
    pub j_mid: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanResult {
    pub feasible: bool,
    pub beta_opt: f64,
    pub eps_en_opt: f64,
    pub eps: f64,
    /// Expected net random bits `k_out - d_s - N_b (k + 2)`.
    pub sigma_net: f64,
    pub k_opt: u32,
    pub n_b_min: u64,
    /// `N_b (1 + 2^k) / 2`.
    pub n_t_min: f64,
    pub g_min: f64,
    pub p_succ: f64,
    pub g_block: f64,
    pub var_block: f64,
    pub j_mid: u64,
    pub sigma_in: f64,
    pub k_out: u64,
    pub d_s: u64,
    /// `(beta, best sigma_net)` at every grid point, for auditing the search.
    pub beta_grid: Vec<(f64, f64)>,
}

/// Block gain as a function of `beta` for one distribution and block length,
/// memoized.
pub struct RateCurve {
    nu_h: ConditionalDistribution,
    k: u32,
    j_mid: JMidChoice,
    cache: Mutex<HashMap<u64, RatePoint>>,
}

impl RateCurve {
    pub fn new(nu_h: ConditionalDistribution, k: u32, j_mid: JMidChoice) -> Self {
        Self {
            nu_h,
            k,
            j_mid,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn at(&self, beta: f64) -> Result<RatePoint> {
        if let Some(p) = self.cache.lock().expect("cache lock").get(&beta.to_bits()) {
            return Ok(*p);
        }
        let p = self.compute(beta)?;
        self.cache
            .lock()
            .expect("cache lock")
            .insert(beta.to_bits(), p);
        Ok(p)
    }

    /// Evaluates several `beta` in parallel.
    pub fn at_many(&self, betas: &[f64]) -> Result<Vec<RatePoint>> {
        betas.par_iter().map(|&b| self.at(b)).collect()
    }

    fn compute(&self, beta: f64) -> Result<RatePoint> {
        let j_mid = match self.j_mid {
            JMidChoice::Search { grid, rel_tol } => {
                search_j_mid_with(&self.nu_h, beta, self.k, grid, rel_tol)?.j_mid
            }
            JMidChoice::Default => default_j_mid(self.k),
            JMidChoice::Fixed(j) => j,
        };
        let table = build_pef_table(&self.nu_h, beta, self.k, j_mid)?;
        let r = block_gain(&table, &self.nu_h)?;
        Ok(RatePoint {
            beta,
            g_block: r.g_block,
            var_block: r.var_block,
            j_mid,
        })
    }
}

/// Outcome of the error-split line search at fixed `beta`.
#[derive(Debug, Clone, Copy)]
struct SplitEval {
    sigma_net: f64,
    eps_en: f64,
    sigma_in: f64,
    k_out: u64,
    d_s: u64,
}

/// `sigma_net` for one choice of `(beta, eps_en)`; an infeasible extractor
/// budget yields `k_out = d_s = 0`.
fn sigma_net(n_b: u64, k: u32, g_block: f64, beta: f64, eps: f64, eps_en: f64) -> SplitEval {
    let sigma_in = n_b as f64 * g_block + eps_en.log2() / beta + eps.log2();
    let eps_ext = eps - eps_en;
    let m_in = (n_b as u128) << (k + 1);
    let spent = consumed_bits(n_b, k) as f64;
    let cap = m_in as f64 + (1.0 + beta) / beta * eps.log2();
    let (k_out, d_s) =
        if sigma_in >= 1.0 && sigma_in <= cap && m_in <= u64::MAX as u128 && eps_ext > 0.0 {
            max_kout(sigma_in, eps_ext)
                .and_then(|ko| seed_length(m_in as u64, ko, eps_ext).map(|(d, _)| (ko, d)))
                .unwrap_or_default()
        } else {
            (0, 0)
        };
    SplitEval {
        sigma_net: k_out as f64 - d_s as f64 - spent,
        eps_en,
        sigma_in,
        k_out,
        d_s,
    }
}

/// Line search over the error split. The extractor error
/// `eps_ext = eps - eps_en` is searched in log space because the optimum
/// puts almost all of `eps` into `eps_en`.
fn best_split(n_b: u64, k: u32, g_block: f64, beta: f64, eps: f64) -> SplitEval {
    let eval = |ln_ext: f64| {
        let eps_ext = ln_ext.exp().min(eps * (1.0 - 1e-12));
        sigma_net(n_b, k, g_block, beta, eps, eps - eps_ext)
    };
    let (lo, hi) = ((eps * 1e-12).ln(), (eps * 0.999).ln());
    let n = 48;
    let grid: Vec<(f64, SplitEval)> = (0..n)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            (x, eval(x))
        })
        .collect();
    let best = (0..n)
        .max_by(|&a, &b| grid[a].1.sigma_net.total_cmp(&grid[b].1.sigma_net))
        .unwrap_or(0);
    let mut best_eval = grid[best].1;
    let (mut a, mut b) = (
        grid[best.saturating_sub(1)].0,
        grid[(best + 1).min(n - 1)].0,
    );
    while b - a > 1e-4 {
        let (x1, x2) = (a + GOLDEN * (b - a), b - GOLDEN * (b - a));
        let (e1, e2) = (eval(x1), eval(x2));
        for e in [e1, e2] {
            if e.sigma_net > best_eval.sigma_net {
                best_eval = e;
            }
        }
        if e1.sigma_net >= e2.sigma_net {
            b = x2;
        } else {
            a = x1;
        }
    }
    best_eval
}

/// Best point, its score and the `(beta, score)` grid.
type BetaSearch = (RatePoint, f64, Vec<(f64, f64)>);

/// Planner holding memoized rate curves per block length.
pub struct Planner {
    nu_h: ConditionalDistribution,
    config: PlanConfig,
    curves: Mutex<HashMap<u32, std::sync::Arc<RateCurve>>>,
}

impl Planner {
    pub fn new(nu_h: ConditionalDistribution, config: PlanConfig) -> Self {
        Self {
            nu_h,
            config,
            curves: Mutex::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> &PlanConfig {
        &self.config
    }

    pub fn curve(&self, k: u32) -> std::sync::Arc<RateCurve> {
        self.curves
            .lock()
            .expect("curve lock")
            .entry(k)
            .or_insert_with(|| std::sync::Arc::new(RateCurve::new(self.nu_h, k, self.config.j_mid)))
            .clone()
    }

    fn beta_grid(&self) -> Vec<f64> {
        let c = &self.config;
        let (lo, hi) = (c.beta_min.ln(), c.beta_max.ln());
        (0..c.beta_grid)
            .map(|i| (lo + (hi - lo) * i as f64 / (c.beta_grid - 1).max(1) as f64).exp())
            .collect()
    }

    /// Maximizes `score(beta)` over the grid, then refines by golden-section
    /// search in `ln(beta)`. Returns the best point and all grid scores.
    fn search_beta<F>(&self, curve: &RateCurve, score: F) -> Result<BetaSearch>
    where
        F: Fn(&RatePoint) -> f64,
    {
        let grid = self.beta_grid();
        let points = curve.at_many(&grid)?;
        let scores: Vec<f64> = points.iter().map(&score).collect();
        let audit: Vec<(f64, f64)> = grid.iter().copied().zip(scores.iter().copied()).collect();
        let best = (0..grid.len())
            .max_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(b.cmp(&a)))
            .ok_or_else(|| Error::InvalidInput("empty beta grid".into()))?;
        let mut best_point = (points[best], scores[best]);
        let (mut a, mut b) = (
            grid[best.saturating_sub(1)].ln(),
            grid[(best + 1).min(grid.len() - 1)].ln(),
        );
        let mut x1 = a + GOLDEN * (b - a);
        let mut x2 = b - GOLDEN * (b - a);
        let pair = curve.at_many(&[x1.exp(), x2.exp()])?;
        let (mut p1, mut p2) = (pair[0], pair[1]);
        let (mut s1, mut s2) = (score(&p1), score(&p2));
        while b - a > self.config.ln_beta_tol {
            if s1 >= s2 {
                b = x2;
                x2 = x1;
                p2 = p1;
                s2 = s1;
                x1 = a + GOLDEN * (b - a);
                p1 = curve.at(x1.exp())?;
                s1 = score(&p1);
            } else {
                a = x1;
                x1 = x2;
                p1 = p2;
                s1 = s2;
                x2 = b - GOLDEN * (b - a);
                p2 = curve.at(x2.exp())?;
                s2 = score(&p2);
            }
        }
        for (p, s) in [(p1, s1), (p2, s2)] {
            if s > best_point.1 {
                best_point = (p, s);
            }
        }
        Ok((best_point.0, best_point.1, audit))
    }

    fn result(
        &self,
        n_b: u64,
        k: u32,
        eps: f64,
        rp: RatePoint,
        audit: Vec<(f64, f64)>,
    ) -> PlanResult {
        let split = best_split(n_b, k, rp.g_block, rp.beta, eps);
        let g_min =
            threshold_from_sigma(n_b, rp.g_block, rp.var_block, self.config.threshold_sigmas);
        PlanResult {
            feasible: split.sigma_net >= 0.0,
            beta_opt: rp.beta,
            eps_en_opt: split.eps_en,
            eps,
            sigma_net: split.sigma_net,
            k_opt: k,
            n_b_min: n_b,
            n_t_min: n_b as f64 * (1.0 + (1u64 << k) as f64) / 2.0,
            g_min,
            p_succ: success_probability(n_b, rp.g_block, rp.var_block, g_min),
            g_block: rp.g_block,
            var_block: rp.var_block,
            j_mid: rp.j_mid,
            sigma_in: split.sigma_in,
            k_out: split.k_out,
            d_s: split.d_s,
            beta_grid: audit,
        }
    }

    /// Maximizes `sigma_net` over `beta` and the error split for `n_b`
    /// blocks of maximum length `2^k`.
    pub fn expansion_feasible(&self, n_b: u64, k: u32, eps: f64) -> Result<(bool, PlanResult)> {
        check_eps(eps)?;
        block_capacity(k)?;
        let curve = self.curve(k);
        let (rp, _, audit) = self.search_beta(&curve, |p| {
            best_split(n_b, k, p.g_block, p.beta, eps).sigma_net
        })?;
        let r = self.result(n_b, k, eps, rp, audit);
        Ok((r.feasible, r))
    }

    /// Fewest blocks for which [`Planner::expansion_feasible`] holds.
    pub fn min_blocks(&self, k: u32, eps: f64) -> Result<PlanResult> {
        check_eps(eps)?;
        block_capacity(k)?;
        let curve = self.curve(k);
        // Estimate: minimize over beta the least N_b that is feasible at that beta.
        let (rp, neg_n, _) = self.search_beta(&curve, |p| match min_blocks_at(p, k, eps) {
            Some(n) => -(n as f64),
            None => f64::NEG_INFINITY,
        })?;
        if !neg_n.is_finite() {
            return Err(Error::Infeasible(format!(
                "no block count up to the cap gives expansion at k = {k}"
            )));
        }
        let _ = rp;
        let estimate = (-neg_n) as u64;
        let feasible = |n: u64| -> Result<bool> { Ok(self.expansion_feasible(n, k, eps)?.0) };
        // Bracket around the estimate, then bisect: feasible(hi), !feasible(lo).
        let (mut lo, mut hi);
        if feasible(estimate)? {
            hi = estimate;
            let mut step = 1u64;
            lo = estimate.saturating_sub(step);
            while lo > 0 && feasible(lo)? {
                hi = lo;
                step *= 2;
                lo = lo.saturating_sub(step);
            }
        } else {
            lo = estimate;
            let mut step = 1u64;
            hi = estimate + step;
            while !feasible(hi)? {
                lo = hi;
                step *= 2;
                hi = hi
                    .checked_add(step)
                    .ok_or_else(|| Error::Infeasible("block count overflow".into()))?;
            }
        }
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            if feasible(mid)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Ok(self.expansion_feasible(hi, k, eps)?.1)
    }

    /// Block length minimizing the expected number of trials; ties go to the
    /// smaller `k`.
    pub fn optimal_block_length(&self, eps: f64, ks: &[u32]) -> Result<(u32, Vec<PlanResult>)> {
        if ks.is_empty() {
            return Err(Error::InvalidInput("empty block-length range".into()));
        }
        let mut plans = Vec::new();
        for &k in ks {
            match self.min_blocks(k, eps) {
                Ok(p) => plans.push(p),
                Err(Error::Infeasible(_)) => {}
                Err(e) => return Err(e),
            }
        }
        let best = plans
            .iter()
            .min_by(|a, b| a.n_t_min.total_cmp(&b.n_t_min).then(a.k_opt.cmp(&b.k_opt)))
            .ok_or_else(|| {
                Error::Infeasible("no block length in range permits expansion".into())
            })?;
        Ok((best.k_opt, plans))
    }
}

const MAX_BLOCKS: u64 = 1 << 40;

/// Least `n_b` with nonnegative `sigma_net` at a fixed rate point.
fn min_blocks_at(p: &RatePoint, k: u32, eps: f64) -> Option<u64> {
    if !(p.g_block > (k + 2) as f64) {
        return None;
    }
    let ok = |n: u64| best_split(n, k, p.g_block, p.beta, eps).sigma_net >= 0.0;
    let mut hi = 1u64;
    while !ok(hi) {
        hi = hi.checked_mul(2)?;
        if hi > MAX_BLOCKS {
            return None;
        }
    }
    let mut lo = hi / 2;
    if lo == 0 {
        return Some(1);
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

fn check_eps(eps: f64) -> Result<()> {
    if eps > 0.0 && eps <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("eps = {eps} outside (0, 1]")))
    }
}

pub fn expansion_feasible(
    nu_h: &ConditionalDistribution,
    n_b: u64,
    k: u32,
    eps: f64,
) -> Result<(bool, PlanResult)> {
    Planner::new(*nu_h, PlanConfig::default()).expansion_feasible(n_b, k, eps)
}

pub fn min_blocks(nu_h: &ConditionalDistribution, k: u32, eps: f64) -> Result<PlanResult> {
    Planner::new(*nu_h, PlanConfig::default()).min_blocks(k, eps)
}

pub fn optimal_block_length(nu_h: &ConditionalDistribution, eps: f64, ks: &[u32]) -> Result<u32> {
    Ok(Planner::new(*nu_h, PlanConfig::default())
        .optimal_block_length(eps, ks)?
        .0)
}

/// Normal-approximation probability that `n_b` honest blocks reach `g_min`:
/// `Phi((n_b g_b - g_min) / sqrt(n_b var_b))`.
pub fn success_probability(n_b: u64, g_b: f64, var_b: f64, g_min: f64) -> f64 {
    let sd = (n_b as f64 * var_b).sqrt();
    let z = (n_b as f64 * g_b - g_min) / sd;
    Normal::standard().cdf(z)
}

/// `floor(n_b g_b - z sqrt(n_b var_b))`.
pub fn threshold_from_sigma(n_b: u64, g_b: f64, var_b: f64, z: f64) -> f64 {
    (n_b as f64 * g_b - z * (n_b as f64 * var_b).sqrt()).floor()
}
