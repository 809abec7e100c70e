//! Running entropy witness over a sequence of cycles.
//!
//! Per-trial terms `log2(F_j(cz)) / beta` are rounded once to fixed point
//! with 64 fractional bits and summed as integers, so the sum does not
//! depend on order or grouping: the sparse path (prefix sums over the
//! implicit `00` trials) and the dense path agree exactly, and splitting a
//! run into several calls changes nothing.

use std::ops::{Add, AddAssign, Sub};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{consumed_bits, BlockRecord, CycleData};
use crate::error::{Error, Result};
use crate::model::{fit_mle, tsirelson_vertices, CountsTable, OutcomePair, SettingsPair};
use crate::pef::{build_pef_table, default_j_mid, PefTable};

const SCALE: f64 = 18_446_744_073_709_551_616.0; // 2^64

/// Fixed-point witness in units of `2^-64` bits. Serialized as a decimal
/// string of the raw count, since JSON numbers do not carry 128 bits.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Witness(i128);

impl Serialize for Witness {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Witness {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let text = <std::borrow::Cow<'de, str>>::deserialize(d)?;
        text.parse().map(Witness).map_err(serde::de::Error::custom)
    }
}

impl Witness {
    pub const ZERO: Witness = Witness(0);

    /// Nearest representable value; saturates outside about `±9.2e18` bits.
    pub fn from_f64(x: f64) -> Self {
        Witness((x * SCALE).round() as i128)
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / SCALE
    }

    pub fn raw(self) -> i128 {
        self.0
    }
}

impl Add for Witness {
    type Output = Witness;

    fn add(self, o: Witness) -> Witness {
        Witness(self.0 + o.0)
    }
}

impl AddAssign for Witness {
    fn add_assign(&mut self, o: Witness) {
        self.0 += o.0;
    }
}

impl Sub for Witness {
    type Output = Witness;

    fn sub(self, o: Witness) -> Witness {
        Witness(self.0 - o.0)
    }
}

/// When the witness is compared with the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckGranularity {
    /// After every trial, stopping inside a block.
    PerTrial,
    /// After every block.
    #[default]
    PerBlock,
    /// After every expansion file.
    PerFile,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub k: u32,
    pub beta: f64,
    /// Success threshold `log2(t_min) / beta` in bits.
    pub g_min: f64,
    /// Blocks available before the run fails.
    pub n_b: u64,
    pub n_calib_min: u64,
    pub seed: u64,
    /// Trials skipped after each spot check; wall-clock accounting only.
    pub deadtime_trials: u64,
    pub j_mid: u64,
    pub check: CheckGranularity,
    /// Record a trace point every this many blocks; 0 keeps only the last.
    pub trace_every: u64,
}

impl RunConfig {
    pub fn new(k: u32, beta: f64, g_min: f64, n_b: u64) -> Self {
        Self {
            k,
            beta,
            g_min,
            n_b,
            n_calib_min: 0,
            seed: 0,
            deadtime_trials: 0,
            j_mid: default_j_mid(k),
            check: CheckGranularity::PerBlock,
            trace_every: 1,
        }
    }

    fn validate(&self) -> Result<()> {
        crate::model::block_capacity(self.k)?;
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "beta = {} must be positive",
                self.beta
            )));
        }
        if self.g_min.is_nan() {
            return Err(Error::InvalidInput("g_min is NaN".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AccumulatorState {
    /// Running witness in bits.
    pub g_run: f64,
    /// Exact running witness; `g_run` is its rounding.
    pub witness: Witness,
    pub n_run: u64,
    /// `n_run (k + 2)`.
    pub bits_consumed: u64,
    pub succeeded: bool,
    /// Block count at which the threshold was reached.
    pub stop_block: Option<u64>,
    /// Trial within the stopping block, when checking per trial.
    pub stop_position: Option<u32>,
    pub cycles_processed: u64,
    /// Recorded trials, `sum of l`.
    pub trials: u64,
    /// Trials skipped as dead time.
    pub deadtime_trials: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub block_index: u64,
    pub g_run: f64,
    pub bits_consumed: u64,
}

/// Produces the PEF table for a cycle from its calibration counts.
pub trait PefBuilder: Sync {
    fn build(&self, calibration: &CountsTable, cfg: &RunConfig) -> Result<PefTable>;
}

impl<F> PefBuilder for F
where
    F: Fn(&CountsTable, &RunConfig) -> Result<PefTable> + Sync,
{
    fn build(&self, calibration: &CountsTable, cfg: &RunConfig) -> Result<PefTable> {
        self(calibration, cfg)
    }
}

/// Maximum-likelihood fit of the calibration counts, then the optimized
/// table at the configured `beta` and `j_mid`.
#[derive(Debug, Clone, Copy, Default)]
pub struct OptimizedPefBuilder;

impl PefBuilder for OptimizedPefBuilder {
    fn build(&self, calibration: &CountsTable, cfg: &RunConfig) -> Result<PefTable> {
        let fit = fit_mle(calibration)?;
        build_pef_table(&fit.distribution, cfg.beta, cfg.k, cfg.j_mid)
    }
}

/// `F = 1` at every position.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConstantOneBuilder;

impl PefBuilder for ConstantOneBuilder {
    fn build(&self, _: &CountsTable, cfg: &RunConfig) -> Result<PefTable> {
        PefTable::constant_one(cfg.k, cfg.beta, cfg.j_mid)
    }
}

/// A table with its per-position terms at settings `00` precomputed.
#[derive(Debug, Clone)]
pub struct PreparedTable {
    table: PefTable,
    /// `[j - 1][c]`, terms of `(c, 00)` at position `j`.
    row00: Vec<[Witness; 4]>,
    /// `prefix[j]`: sum of the `(00, 00)` terms at positions `1..=j`.
    prefix: Vec<Witness>,
}

impl PreparedTable {
    pub fn new(table: PefTable) -> Result<Self> {
        let row00: Vec<[Witness; 4]> = (1..=table.capacity())
            .into_par_iter()
            .map(|j| {
                let f = table.f_at(j)?;
                Ok(std::array::from_fn(|c| {
                    Witness::from_f64(f.log2_over_beta(c))
                }))
            })
            .collect::<Result<_>>()?;
        let mut prefix = Vec::with_capacity(row00.len() + 1);
        prefix.push(Witness::ZERO);
        let mut acc = Witness::ZERO;
        for r in &row00 {
            acc += r[0];
            prefix.push(acc);
        }
        Ok(Self {
            table,
            row00,
            prefix,
        })
    }

    pub fn table(&self) -> &PefTable {
        &self.table
    }

    /// Term of one trial at position `j`.
    pub fn term(&self, j: u32, z: SettingsPair, c: OutcomePair) -> Result<Witness> {
        if z.index() == 0 {
            return self
                .row00
                .get((j as usize).wrapping_sub(1))
                .map(|r| r[c.index()])
                .ok_or(Error::PositionOutOfRange {
                    position: j as u64,
                    max: self.table.capacity(),
                });
        }
        let f = self.table.f_at(j as u64)?;
        Ok(Witness::from_f64(
            f.log2_over_beta(4 * z.index() + c.index()),
        ))
    }

    /// Block witness from the sparse record.
    pub fn block_sparse(&self, r: &BlockRecord) -> Result<Witness> {
        let l = r.length as usize;
        if l == 0 || l > self.row00.len() {
            return Err(Error::PositionOutOfRange {
                position: l as u64,
                max: self.table.capacity(),
            });
        }
        let mut w = self.prefix[l - 1];
        for e in &r.events {
            let row = &self.row00[e.position as usize - 1];
            w += row[e.outcome.index()] - row[0];
        }
        Ok(w + self.term(r.length, r.spot.settings, r.spot.outcome)?)
    }

    /// Block witness summed trial by trial.
    pub fn block_dense(&self, r: &BlockRecord) -> Result<Witness> {
        let mut w = Witness::ZERO;
        for t in r.dense() {
            w += self.term(t.position, t.settings, t.outcome)?;
        }
        Ok(w)
    }

    /// First position at which `before` plus the partial block witness
    /// reaches `target`, and the full block witness.
    fn first_crossing(
        &self,
        r: &BlockRecord,
        before: Witness,
        target: Witness,
    ) -> Result<(Option<(u32, Witness)>, Witness)> {
        let mut w = before;
        let mut events = r.events.iter().peekable();
        for j in 1..r.length {
            let row = &self.row00[j as usize - 1];
            w += match events.next_if(|e| e.position == j) {
                Some(e) => row[e.outcome.index()],
                None => row[0],
            };
            if w >= target {
                return Ok((Some((j, w)), w));
            }
        }
        w += self.term(r.length, r.spot.settings, r.spot.outcome)?;
        let hit = (w >= target).then_some((r.length, w));
        Ok((hit, w - before))
    }
}

/// Output of a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Accumulation {
    pub state: AccumulatorState,
    pub trace: Vec<TracePoint>,
}

/// Incremental accumulation; feeding cycles in several calls is the same as
/// feeding them at once.
pub struct Accumulator {
    cfg: RunConfig,
    target: Witness,
    state: AccumulatorState,
    trace: Vec<TracePoint>,
    /// Trailing calibration of the latest cycle's files, in file order.
    prev_trailing: Vec<CountsTable>,
}

impl Accumulator {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            target: Witness::from_f64(cfg.g_min),
            cfg,
            state: AccumulatorState::default(),
            trace: Vec::new(),
            prev_trailing: Vec::new(),
        })
    }

    pub fn state(&self) -> &AccumulatorState {
        &self.state
    }

    pub fn trace(&self) -> &[TracePoint] {
        &self.trace
    }

    fn done(&self) -> bool {
        self.state.succeeded || self.state.n_run >= self.cfg.n_b
    }

    /// Calibration for a cycle, borrowing trailing calibration from the
    /// previous cycle's last files backwards until `n_calib_min` is reached.
    fn calibration(
        &self,
        cycle: &CycleData,
        prev: &[CountsTable],
        index: u64,
    ) -> Result<CountsTable> {
        let mut counts = cycle.calibration;
        for t in prev.iter().rev() {
            if counts.total() >= self.cfg.n_calib_min {
                break;
            }
            counts.merge(t);
        }
        if counts.total() < self.cfg.n_calib_min {
            return Err(Error::CalibrationShortfall {
                cycle: index as usize,
                available: counts.total(),
                required: self.cfg.n_calib_min,
            });
        }
        Ok(counts)
    }

    fn prepare(
        &self,
        cycle: &CycleData,
        prev: &[CountsTable],
        index: u64,
        builder: &dyn PefBuilder,
    ) -> Result<PreparedTable> {
        let counts = self.calibration(cycle, prev, index)?;
        let table = builder.build(&counts, &self.cfg)?;
        if table.k() != self.cfg.k || table.beta() != self.cfg.beta {
            return Err(Error::InvalidPefTable(format!(
                "cycle {index}: table has k = {}, beta = {}, run needs k = {}, beta = {}",
                table.k(),
                table.beta(),
                self.cfg.k,
                self.cfg.beta
            )));
        }
        table.validate(tsirelson_vertices()?)?;
        PreparedTable::new(table)
    }

    /// Processes cycles in order until success or `n_b` blocks. The table
    /// for the next cycle is built while the current cycle's blocks are
    /// processed.
    pub fn push(&mut self, cycles: &[CycleData], builder: &dyn PefBuilder) -> Result<()> {
        if cycles.is_empty() || self.done() {
            return Ok(());
        }
        let first = self.state.cycles_processed;
        let mut pending = Some(self.prepare(&cycles[0], &self.prev_trailing, first, builder));
        for (i, cycle) in cycles.iter().enumerate() {
            let table = pending.take().expect("table prepared")?;
            let next = cycles.get(i + 1);
            let trailing: Vec<CountsTable> =
                cycle.files.iter().map(|f| f.trailing_calibration).collect();
            let this = &*self;
            let (built, state) = rayon::join(
                || next.map(|c| this.prepare(c, &trailing, first + i as u64 + 1, builder)),
                || this.run_cycle(cycle, &table),
            );
            let (state, trace) = state?;
            self.state = state;
            self.trace.extend(trace);
            self.prev_trailing = trailing;
            if self.done() {
                break;
            }
            pending = built;
        }
        Ok(())
    }

    /// Processes one cycle's blocks against a copy of the state.
    fn run_cycle(
        &self,
        cycle: &CycleData,
        table: &PreparedTable,
    ) -> Result<(AccumulatorState, Vec<TracePoint>)> {
        let cfg = &self.cfg;
        let mut s = self.state.clone();
        let mut trace = Vec::new();
        let record = |s: &AccumulatorState, trace: &mut Vec<TracePoint>, force: bool| {
            if force || (cfg.trace_every > 0 && s.n_run.is_multiple_of(cfg.trace_every)) {
                trace.push(TracePoint {
                    block_index: s.n_run,
                    g_run: s.g_run,
                    bits_consumed: s.bits_consumed,
                });
            }
        };
        'files: for file in &cycle.files {
            for block in &file.blocks {
                if s.n_run >= cfg.n_b {
                    break 'files;
                }
                block.validate(cfg.k)?;
                let mut crossed = None;
                if cfg.check == CheckGranularity::PerTrial {
                    let (hit, w) = table.first_crossing(block, s.witness, self.target)?;
                    match hit {
                        Some((j, at)) => {
                            crossed = Some(j);
                            s.witness = at;
                        }
                        None => s.witness += w,
                    }
                } else {
                    s.witness += table.block_sparse(block)?;
                }
                s.n_run += 1;
                s.bits_consumed = consumed_bits(s.n_run, cfg.k);
                s.trials += block.length as u64;
                s.deadtime_trials += cfg.deadtime_trials;
                s.g_run = s.witness.to_f64();
                let hit = match cfg.check {
                    CheckGranularity::PerTrial => crossed.is_some(),
                    CheckGranularity::PerBlock => s.witness >= self.target,
                    CheckGranularity::PerFile => s.n_run >= cfg.n_b && s.witness >= self.target,
                };
                if hit {
                    s.succeeded = true;
                    s.stop_block = Some(s.n_run);
                    s.stop_position = crossed;
                    record(&s, &mut trace, true);
                    break 'files;
                }
                record(&s, &mut trace, false);
            }
            if cfg.check == CheckGranularity::PerFile && !s.succeeded && s.witness >= self.target {
                s.succeeded = true;
                s.stop_block = Some(s.n_run);
                if trace.last().map(|t| t.block_index) != Some(s.n_run) {
                    record(&s, &mut trace, true);
                }
                break;
            }
        }
        s.cycles_processed += 1;
        Ok((s, trace))
    }

    pub fn finish(mut self) -> Accumulation {
        if self.trace.last().map(|t| t.block_index) != Some(self.state.n_run) {
            self.trace.push(TracePoint {
                block_index: self.state.n_run,
                g_run: self.state.g_run,
                bits_consumed: self.state.bits_consumed,
            });
        }
        Accumulation {
            state: self.state,
            trace: self.trace,
        }
    }
}

/// Runs the whole analysis over `cycles`.
pub fn accumulate(
    cycles: &[CycleData],
    cfg: &RunConfig,
    builder: &dyn PefBuilder,
) -> Result<Accumulation> {
    let mut acc = Accumulator::new(cfg.clone())?;
    acc.push(cycles, builder)?;
    Ok(acc.finish())
}
