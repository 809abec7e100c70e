use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use spotcheck::extractor::ExtractorParams;
use spotcheck::model::{
    counts_from_csv, counts_from_json, distribution_from_json, fit_mle, statistical_strength,
    ConditionalDistribution, CountsTable,
};
use spotcheck::pef::{block_gain_detailed, build_pef_table, search_j_mid, PefTable};
use spotcheck::planner::{PlanConfig, PlanResult, Planner};
use spotcheck::protocol::{
    accumulate as run_accumulation, expansion_ratio, read_dataset, simulate_dataset, trace_to_csv,
    write_blocks_jsonl, write_dataset, AccumulatorState, CheckGranularity, OptimizedPefBuilder,
    RunConfig, SimulationConfig,
};
use spotcheck::reference;

use crate::manifest::Manifest;
use crate::{
    AccumulateArgs, Check, ExtractArgs, Format, Outcome, PefOptArgs, PlanArgs, ReportArgs,
    SimulateArgs,
};

pub struct Output {
    format: Format,
    path: Option<PathBuf>,
}

impl Output {
    pub fn new(format: Format, path: Option<PathBuf>) -> Self {
        Self { format, path }
    }

    fn write(&self, text: &str) -> Result<()> {
        match &self.path {
            Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(text.as_bytes())?;
                out.flush()?;
                Ok(())
            }
        }
    }

    /// JSON wraps `result` with the manifest; CSV uses `csv` when given,
    /// otherwise flattens the result into `key,value` rows.
    fn emit(
        &self,
        manifest: &Manifest,
        result: &impl Serialize,
        csv: Option<String>,
    ) -> Result<()> {
        match self.format {
            Format::Json => {
                let doc = manifest.wrap(result)?;
                self.write(&(serde_json::to_string_pretty(&doc)? + "\n"))
            }
            Format::Csv => match csv {
                Some(text) => self.write(&text),
                None => self.write(&flat_csv(&serde_json::to_value(result)?)),
            },
        }
    }
}

fn flat_csv(v: &Value) -> String {
    fn walk(prefix: &str, v: &Value, rows: &mut Vec<(String, String)>) {
        match v {
            Value::Object(m) => {
                for (k, x) in m {
                    let key = if prefix.is_empty() {
                        k.clone()
                    } else {
                        format!("{prefix}.{k}")
                    };
                    walk(&key, x, rows);
                }
            }
            Value::Array(a) => {
                for (i, x) in a.iter().enumerate() {
                    walk(&format!("{prefix}.{i}"), x, rows);
                }
            }
            Value::String(s) => rows.push((prefix.to_string(), s.clone())),
            other => rows.push((prefix.to_string(), other.to_string())),
        }
    }
    let mut rows = Vec::new();
    walk("", v, &mut rows);
    let mut s = String::from("key,value\n");
    for (k, v) in rows {
        s.push_str(&format!("{k},{v}\n"));
    }
    s
}

fn builtin(path: &Path) -> Option<&str> {
    path.to_str()?.strip_prefix("builtin:")
}

/// Reads a JSON document, unwrapping `{"manifest": .., "result": ..}`.
fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let v: Value =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(match v {
        Value::Object(mut m) if m.contains_key("manifest") && m.contains_key("result") => {
            m.remove("result").expect("checked")
        }
        v => v,
    })
}

/// A field of `v` when present, otherwise `v` itself.
fn field_or_self(v: Value, key: &str) -> Value {
    match v {
        Value::Object(mut m) if m.contains_key(key) => m.remove(key).expect("checked"),
        v => v,
    }
}

fn load_counts(path: &Path) -> Result<CountsTable> {
    if let Some(name) = builtin(path) {
        return match name {
            "design" | "design-counts" => Ok(reference::design_counts()),
            "commissioning" | "commissioning-counts" => Ok(reference::commissioning_counts()),
            _ => bail!("unknown built-in counts table {name:?}"),
        };
    }
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let parsed = if path.extension().is_some_and(|e| e == "csv") {
        counts_from_csv(&text)
    } else {
        counts_from_json(&text)
    };
    parsed.with_context(|| format!("parsing {}", path.display()))
}

fn load_distribution(path: &Path) -> Result<ConditionalDistribution> {
    if let Some(name) = builtin(path) {
        return match name {
            "design" | "design-distribution" => Ok(reference::design_distribution()),
            "commissioning" | "commissioning-distribution" => {
                Ok(reference::commissioning_distribution())
            }
            _ => bail!("unknown built-in distribution {name:?}"),
        };
    }
    let v = read_json(path)?;
    distribution_from_json(&v.to_string()).with_context(|| format!("parsing {}", path.display()))
}

fn load_pef(path: &Path) -> Result<PefTable> {
    let v = field_or_self(read_json(path)?, "pef");
    serde_json::from_value(v).with_context(|| format!("parsing PEF table {}", path.display()))
}

pub fn fit(out: &Output, counts: &Path) -> Result<Outcome> {
    let table = load_counts(counts)?;
    let result = fit_mle(&table)?;
    let mut m = Manifest::new("fit");
    m.input(counts)?;
    let csv = {
        let mut s = String::from("x,y,a,b,p\n");
        for (z, row) in result.distribution.rows().iter().enumerate() {
            for (c, p) in row.iter().enumerate() {
                s.push_str(&format!(
                    "{},{},{},{},{p:e}\n",
                    z & 1,
                    z >> 1,
                    c & 1,
                    c >> 1
                ));
            }
        }
        s
    };
    out.emit(&m, &result, Some(csv))?;
    Ok(Outcome::Success)
}

pub fn strength(out: &Output, distribution: &Path) -> Result<Outcome> {
    let d = load_distribution(distribution)?;
    let result = statistical_strength(&d)?;
    let mut m = Manifest::new("strength");
    m.input(distribution)?;
    out.emit(&m, &result, None)?;
    Ok(Outcome::Success)
}

pub fn pef_opt(out: &Output, a: &PefOptArgs) -> Result<Outcome> {
    let d = load_distribution(&a.distribution)?;
    let j_mid = match a.j_mid {
        Some(j) => j,
        None => search_j_mid(&d, a.beta, a.k)?.j_mid,
    };
    let table = build_pef_table(&d, a.beta, a.k, j_mid)?;
    let gain = block_gain_detailed(&table, &d, false)?;
    let mut m = Manifest::new("pef-opt");
    m.input(&a.distribution)?
        .param("beta", a.beta)
        .param("k", a.k)
        .param("j_mid", a.j_mid);
    let result = json!({
        "pef": table,
        "g_block": gain.g_block,
        "var_block": gain.var_block,
    });
    out.emit(&m, &result, None)?;
    Ok(Outcome::Success)
}

pub fn rate(out: &Output, pef: &Path, distribution: &Path, positions: bool) -> Result<Outcome> {
    let table = load_pef(pef)?;
    let d = load_distribution(distribution)?;
    let report = block_gain_detailed(&table, &d, positions)?;
    let mut m = Manifest::new("rate");
    m.input(pef)?
        .input(distribution)?
        .param("positions", positions);
    let csv = report.per_position_gain.as_ref().map(|g| {
        let mut s = String::from("j,gain\n");
        for (i, x) in g.iter().enumerate() {
            s.push_str(&format!("{},{x:e}\n", i + 1));
        }
        s
    });
    out.emit(&m, &report, csv)?;
    Ok(Outcome::Success)
}

fn plan_csv(plans: &[PlanResult]) -> String {
    let mut s = String::from(
        "eps,k,feasible,n_b,n_t,beta,eps_en,g_block,var_block,j_mid,g_min,p_succ,sigma_in,k_out,d_s,sigma_net\n",
    );
    for p in plans {
        s.push_str(&format!(
            "{:e},{},{},{},{:e},{:e},{:e},{},{},{},{},{},{},{},{},{}\n",
            p.eps,
            p.k_opt,
            p.feasible,
            p.n_b_min,
            p.n_t_min,
            p.beta_opt,
            p.eps_en_opt,
            p.g_block,
            p.var_block,
            p.j_mid,
            p.g_min,
            p.p_succ,
            p.sigma_in,
            p.k_out,
            p.d_s,
            p.sigma_net
        ));
    }
    s
}

fn print_plan_table(plans: &[PlanResult]) {
    eprintln!(
        "{:>9} {:>3} {:>5} {:>13} {:>11} {:>11} {:>9} {:>8}",
        "eps", "k", "ok", "blocks", "trials", "beta", "g_block", "p_succ"
    );
    for p in plans {
        eprintln!(
            "{:>9.2e} {:>3} {:>5} {:>13} {:>11.4e} {:>11.4e} {:>9.4} {:>8.5}",
            p.eps, p.k_opt, p.feasible, p.n_b_min, p.n_t_min, p.beta_opt, p.g_block, p.p_succ
        );
    }
}

pub fn plan(out: &Output, a: &PlanArgs) -> Result<Outcome> {
    let d = load_distribution(&a.distribution)?;
    let config = PlanConfig {
        beta_min: a.beta_min,
        beta_max: a.beta_max,
        beta_grid: a.beta_grid,
        threshold_sigmas: a.sigmas,
        ..PlanConfig::default()
    };
    let planner = Planner::new(d, config.clone());
    let mut m = Manifest::new("plan");
    m.input(&a.distribution)?
        .param("eps", &a.eps)
        .param("config", &config)
        .param("blocks", a.blocks)
        .param("trials", a.trials)
        .param("k", a.k);

    let mut plans = Vec::new();
    let mut best_k = Vec::new();
    if a.blocks.is_some() || a.trials.is_some() {
        let k =
            a.k.ok_or_else(|| anyhow!("--blocks and --trials need --k"))?;
        let n_b = match (a.blocks, a.trials) {
            (Some(n), _) => n,
            // Mean block length is (2^k + 1) / 2.
            (None, Some(t)) => (2.0 * t / ((1u64 << k) as f64 + 1.0)).floor() as u64,
            (None, None) => unreachable!(),
        };
        for &eps in &a.eps {
            plans.push(planner.expansion_feasible(n_b, k, eps)?.1);
        }
    } else if let Some(k) = a.k {
        for &eps in &a.eps {
            plans.push(planner.min_blocks(k, eps)?);
        }
    } else {
        if a.k_min > a.k_max {
            bail!("--k-min {} exceeds --k-max {}", a.k_min, a.k_max);
        }
        let ks: Vec<u32> = (a.k_min..=a.k_max).collect();
        for &eps in &a.eps {
            let (k, mut ps) = planner.optimal_block_length(eps, &ks)?;
            best_k.push(json!({ "eps": eps, "k_opt": k }));
            plans.append(&mut ps);
        }
    }
    print_plan_table(&plans);
    let result = json!({ "plans": plans, "optimal_block_length": best_k });
    out.emit(&m, &result, Some(plan_csv(&plans)))?;
    Ok(Outcome::Success)
}

pub fn simulate(out: &Output, a: &SimulateArgs) -> Result<Outcome> {
    let d = load_distribution(&a.distribution)?;
    let cfg = SimulationConfig {
        blocks_per_file: a.blocks_per_file.unwrap_or(a.blocks.max(1)),
        files_per_cycle: a.files_per_cycle,
        calibration_trials: a.calibration_trials,
        trailing_calibration_trials: a.trailing_calibration_trials,
        ..SimulationConfig::new(a.k, a.blocks, a.seed)
    };
    let cycles = simulate_dataset(&d, &cfg)?;
    write_dataset(&a.out, &cycles).with_context(|| format!("writing {}", a.out.display()))?;
    if a.jsonl {
        for (c, cycle) in cycles.iter().enumerate() {
            for (f, file) in cycle.files.iter().enumerate() {
                let p = a
                    .out
                    .join(format!("cycle_{c:05}"))
                    .join(format!("file_{f:05}.jsonl"));
                let mut w = BufWriter::new(fs::File::create(&p)?);
                write_blocks_jsonl(&mut w, &file.blocks)?;
                w.flush()?;
            }
        }
    }
    let mut m = Manifest::new("simulate");
    m.input(&a.distribution)?.param("config", &cfg);
    m.seed = Some(a.seed);
    let trials: u64 = cycles
        .iter()
        .flat_map(|c| c.blocks())
        .map(|b| b.length as u64)
        .sum();
    let result = json!({
        "dir": a.out.display().to_string(),
        "cycles": cycles.len(),
        "blocks": a.blocks,
        "trials": trials,
    });
    let doc = m.wrap(&result)?;
    fs::write(
        a.out.join("manifest.json"),
        serde_json::to_string_pretty(&doc)? + "\n",
    )?;
    out.emit(&m, &result, None)?;
    Ok(Outcome::Success)
}

pub fn accumulate(out: &Output, a: &AccumulateArgs) -> Result<Outcome> {
    let cycles =
        read_dataset(&a.data_dir).with_context(|| format!("reading {}", a.data_dir.display()))?;
    let fixed = a.pef.as_deref().map(load_pef).transpose()?;
    let k =
        a.k.or(fixed.as_ref().map(PefTable::k))
            .ok_or_else(|| anyhow!("--k is required without --pef"))?;
    let beta = a
        .beta
        .or(fixed.as_ref().map(PefTable::beta))
        .ok_or_else(|| anyhow!("--beta is required without --pef"))?;
    let mut cfg = RunConfig::new(k, beta, a.gmin, a.blocks);
    cfg.seed = a.seed;
    cfg.n_calib_min = a.n_calib_min;
    cfg.deadtime_trials = a.deadtime;
    cfg.trace_every = a.trace_decimation;
    cfg.check = match a.check {
        Check::PerTrial => CheckGranularity::PerTrial,
        Check::PerBlock => CheckGranularity::PerBlock,
        Check::PerFile => CheckGranularity::PerFile,
    };
    if let Some(j) = a.j_mid.or(fixed.as_ref().map(PefTable::j_mid)) {
        cfg.j_mid = j;
    }

    let run = match &fixed {
        Some(table) => {
            let builder = |_: &CountsTable, _: &RunConfig| Ok(table.clone());
            run_accumulation(&cycles, &cfg, &builder)?
        }
        None => run_accumulation(&cycles, &cfg, &OptimizedPefBuilder)?,
    };

    let trace_csv = trace_to_csv(&run.trace)?;
    if let Some(p) = &a.trace_out {
        fs::write(p, &trace_csv).with_context(|| format!("writing {}", p.display()))?;
    }
    let mut m = Manifest::new("accumulate");
    m.input(&a.data_dir)?;
    if let Some(p) = &a.pef {
        m.input(p)?;
    }
    m.param("config", &cfg);
    m.seed = Some(a.seed);
    let result = json!({ "state": run.state, "config": cfg });
    out.emit(&m, &result, Some(trace_csv))?;
    if run.state.succeeded {
        Ok(Outcome::Success)
    } else {
        eprintln!(
            "run did not reach g_min = {} after {} blocks (g_run = {})",
            cfg.g_min, run.state.n_run, run.state.g_run
        );
        Ok(Outcome::ProtocolFailure)
    }
}

pub fn extract_params(out: &Output, a: &ExtractArgs) -> Result<Outcome> {
    let eps = a.eps.unwrap_or(a.eps_ext);
    let params = ExtractorParams::budget(a.m_in, a.sigma_in, a.eps_ext, eps)?;
    let slacks = params.slacks(a.beta);
    let mut m = Manifest::new("extract-params");
    m.param("m_in", a.m_in)
        .param("sigma_in", a.sigma_in)
        .param("eps_ext", a.eps_ext)
        .param("eps", eps)
        .param("beta", a.beta);
    out.emit(&m, &json!({ "params": params, "slacks": slacks }), None)?;
    Ok(Outcome::Success)
}

pub fn report(out: &Output, a: &ReportArgs) -> Result<Outcome> {
    let mut m = Manifest::new("report");
    let (k_out, d_s) = match &a.extractor {
        Some(p) => {
            m.input(p)?;
            let params: ExtractorParams =
                serde_json::from_value(field_or_self(read_json(p)?, "params"))
                    .with_context(|| format!("parsing extractor parameters {}", p.display()))?;
            (a.k_out.unwrap_or(params.k_out), a.d_s.unwrap_or(params.d_s))
        }
        None => (
            a.k_out
                .ok_or_else(|| anyhow!("--k-out is required without --extractor"))?,
            a.d_s
                .ok_or_else(|| anyhow!("--d-s is required without --extractor"))?,
        ),
    };
    m.param("k", a.k).param("k_out", k_out).param("d_s", d_s);
    let report = match (&a.state, a.blocks_run) {
        (Some(p), _) => {
            m.input(p)?;
            let state: AccumulatorState =
                serde_json::from_value(field_or_self(read_json(p)?, "state"))
                    .with_context(|| format!("parsing accumulator state {}", p.display()))?;
            if !state.succeeded {
                eprintln!("the run did not succeed; no randomness may be extracted");
                return Ok(Outcome::ProtocolFailure);
            }
            expansion_ratio(state.n_run, a.k, k_out, d_s)
        }
        (None, Some(n)) => {
            m.param("blocks_run", n);
            expansion_ratio(n, a.k, k_out, d_s)
        }
        (None, None) => bail!("either --state or --blocks-run is required"),
    };
    out.emit(&m, &report, None)?;
    Ok(Outcome::Success)
}
