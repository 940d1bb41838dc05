//! Bootstrap sampling distributions, detailed-balance tests, highest-density
//! intervals and convergence bands over ensembles.
//!
//! Resample `r` draws its block starts from ChaCha8 seeded with the test
//! seed on stream `r`, so results are identical for any thread count.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimate::{
    area_rate, auto_block_len, long_run_variance, observable_terms, plugin_optimal_observable, std_dev,
    two_stage_split, Discretization,
};
use crate::model::OuModel;
use crate::simulate::{simulate_replica, SimConfig, Trajectory};

pub const HDI_MASSES: [f64; 3] = [0.5, 0.7, 0.9];

#[derive(Clone, Debug, PartialEq)]
pub struct BootstrapOptions {
    pub n_boot: usize,
    /// `None` picks [`auto_block_len`].
    pub block_len: Option<usize>,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions { n_boot: 500, block_len: None, seed: 0 }
    }
}

fn check_block(block_len: usize, n: usize) -> Result<()> {
    if block_len == 0 || block_len > n {
        return Err(Error::InvalidBlock { block_len, n_steps: n });
    }
    Ok(())
}

/// Circular-block resample of `0..n`: `⌈n/b⌉` blocks with uniform starts,
/// the last one truncated so the total length is `n`. Returns `(start, len)`.
fn block_starts(n: usize, block_len: usize, seed: u64, replica: u64) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replica);
    let mut out = Vec::with_capacity(n.div_ceil(block_len));
    let mut left = n;
    while left > 0 {
        let len = block_len.min(left);
        out.push((rng.random_range(0..n), len));
        left -= len;
    }
    out
}

/// Indices of one circular-block resample of `0..n`.
pub fn resample_indices(n: usize, block_len: usize, seed: u64, replica: u64) -> Result<Vec<usize>> {
    check_block(block_len, n)?;
    Ok(block_starts(n, block_len, seed, replica)
        .into_iter()
        .flat_map(|(s, len)| (s..s + len).map(move |i| i % n))
        .collect())
}

/// Generic block bootstrap over the increments of `traj`: `stat` receives the
/// resampled step indices (each `k` refers to the step `X_k → X_{k+1}`).
pub fn block_bootstrap<F>(traj: &Trajectory, stat: F, n_boot: usize, block_len: usize, seed: u64) -> Result<Vec<f64>>
where
    F: Fn(&[usize]) -> f64 + Sync,
{
    let n = traj.n_steps();
    check_block(block_len, n)?;
    (0..n_boot as u64)
        .into_par_iter()
        .map(|r| resample_indices(n, block_len, seed, r).map(|idx| stat(&idx)))
        .collect()
}

/// Resampled totals of several additive per-step series at once, sharing the
/// block starts. Uses prefix sums, so each resample costs `O(n / b)`.
pub fn bootstrap_sums_multi(series: &[Vec<f64>], n_boot: usize, block_len: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let n = series.first().map_or(0, Vec::len);
    if series.iter().any(|s| s.len() != n) {
        return Err(Error::DimensionMismatch("bootstrap series differ in length".into()));
    }
    check_block(block_len, n)?;
    let prefix: Vec<Vec<f64>> = series
        .iter()
        .map(|s| {
            let mut p = Vec::with_capacity(n + 1);
            p.push(0.0);
            let mut acc = 0.0;
            for x in s {
                acc += x;
                p.push(acc);
            }
            p
        })
        .collect();
    Ok((0..n_boot as u64)
        .into_par_iter()
        .map(|r| {
            let starts = block_starts(n, block_len, seed, r);
            prefix
                .iter()
                .map(|p| {
                    starts
                        .iter()
                        .map(|&(s, len)| {
                            if s + len <= n {
                                p[s + len] - p[s]
                            } else {
                                (p[n] - p[s]) + p[s + len - n]
                            }
                        })
                        .sum()
                })
                .collect()
        })
        .collect())
}

pub fn bootstrap_sums(terms: &[f64], n_boot: usize, block_len: usize, seed: u64) -> Result<Vec<f64>> {
    Ok(bootstrap_sums_multi(&[terms.to_vec()], n_boot, block_len, seed)?
        .into_iter()
        .map(|v| v[0])
        .collect())
}

/// Shortest interval holding `⌈mass·n⌉` of the sorted samples; leftmost on ties.
pub fn hdi(samples: &[f64], mass: f64) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(mass > 0.0 && mass < 1.0) {
        return Err(Error::InvalidArgument(format!("mass = {mass} must lie in (0, 1)")));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::InvalidArgument("NaN sample".into()));
    }
    let mut s = samples.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    let k = ((mass * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    let mut best = (s[0], s[k - 1]);
    for i in 1..=(n - k) {
        if s[i + k - 1] - s[i] < best.1 - best.0 {
            best = (s[i], s[i + k - 1]);
        }
    }
    Ok(best)
}

fn hdi_map(samples: &[f64]) -> Result<BTreeMap<String, [f64; 2]>> {
    HDI_MASSES
        .iter()
        .map(|&m| hdi(samples, m).map(|(lo, hi)| (m.to_string(), [lo, hi])))
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    #[default]
    BlockBootstrap,
    PluginZ,
}

impl std::str::FromStr for TestMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "block_bootstrap" => Ok(TestMethod::BlockBootstrap),
            "plugin_z" => Ok(TestMethod::PluginZ),
            other => Err(Error::InvalidArgument(format!(
                "unknown method {other:?}; expected block_bootstrap or plugin_z"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TestStatistic {
    /// Two-stage entropy production estimate `q̂`.
    #[default]
    Entropy,
    /// `‖α̂‖_F` over the whole trajectory.
    AlphaNorm,
}

impl std::str::FromStr for TestStatistic {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entropy" => Ok(TestStatistic::Entropy),
            "alpha_norm" => Ok(TestStatistic::AlphaNorm),
            other => Err(Error::InvalidArgument(format!(
                "unknown statistic {other:?}; expected entropy or alpha_norm"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TestOptions {
    pub method: TestMethod,
    pub statistic: TestStatistic,
    pub bootstrap: BootstrapOptions,
    pub split: f64,
    pub model_hint: Option<OuModel>,
}

impl Default for TestOptions {
    fn default() -> Self {
        TestOptions {
            method: TestMethod::BlockBootstrap,
            statistic: TestStatistic::Entropy,
            bootstrap: BootstrapOptions::default(),
            split: 0.5,
            model_hint: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TestReport {
    pub statistic: f64,
    pub statistic_kind: TestStatistic,
    pub null_value: f64,
    pub p_value: f64,
    pub method: TestMethod,
    pub n_boot: usize,
    pub std_error: f64,
    pub block_len: Option<usize>,
    pub hdi: BTreeMap<String, [f64; 2]>,
    pub seed: u64,
}

/// One-sided p-value: share of centered bootstrap samples at or above the
/// observed distance from the null.
fn upper_p(samples: &[f64], stat: f64, null: f64) -> f64 {
    let hits = samples.iter().filter(|&&s| s - stat >= stat - null).count();
    hits as f64 / samples.len() as f64
}

fn resolve_block(requested: Option<usize>, traj: &Trajectory) -> Result<usize> {
    let b = requested.unwrap_or_else(|| auto_block_len(traj));
    check_block(b, traj.n_steps())?;
    if traj.n_steps() < 10 * b {
        return Err(Error::TooShort(format!(
            "{} steps is under ten blocks of {b}",
            traj.n_steps()
        )));
    }
    Ok(b)
}

/// Test the null hypothesis of detailed balance on one trajectory.
pub fn detailed_balance_test(traj: &Trajectory, opts: &TestOptions) -> Result<TestReport> {
    if opts.method == TestMethod::BlockBootstrap && opts.bootstrap.n_boot == 0 {
        return Err(Error::InvalidArgument("n_boot must be positive".into()));
    }
    match opts.statistic {
        TestStatistic::Entropy => entropy_test(traj, opts),
        TestStatistic::AlphaNorm => alpha_norm_test(traj, opts),
    }
}

fn entropy_test(traj: &Trajectory, opts: &TestOptions) -> Result<TestReport> {
    let m1 = two_stage_split(traj, opts.split)?;
    let first = traj.segment(0, m1)?;
    let second = traj.segment(m1, traj.n_steps())?;
    let (obs, _) = plugin_optimal_observable(&first)?;
    let terms = observable_terms(&second, &obs, Discretization::Midpoint)?;
    let t2 = second.duration();
    let stat = terms.iter().fold(0.0, |a, x| a + x) / t2;
    match opts.method {
        TestMethod::BlockBootstrap => {
            let b = resolve_block(opts.bootstrap.block_len, &second)?;
            let samples: Vec<f64> = bootstrap_sums(&terms, opts.bootstrap.n_boot, b, opts.bootstrap.seed)?
                .into_iter()
                .map(|s| s / t2)
                .collect();
            Ok(TestReport {
                statistic: stat,
                statistic_kind: TestStatistic::Entropy,
                null_value: 0.0,
                p_value: upper_p(&samples, stat, 0.0),
                method: TestMethod::BlockBootstrap,
                n_boot: samples.len(),
                std_error: std_dev(&samples),
                block_len: Some(b),
                hdi: hdi_map(&samples)?,
                seed: opts.bootstrap.seed,
            })
        }
        TestMethod::PluginZ => {
            let model = opts
                .model_hint
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("plugin_z needs a model".into()))?;
            let state = model.steady_state()?;
            let se = (long_run_variance(&obs, model, &state)? / t2).sqrt();
            let normal = Normal::standard();
            let p_value = if se > 0.0 { normal.cdf(-stat / se) } else if stat > 0.0 { 0.0 } else { 1.0 };
            let hdi = HDI_MASSES
                .iter()
                .map(|&m| {
                    let z = normal.inverse_cdf(0.5 + 0.5 * m);
                    (m.to_string(), [stat - z * se, stat + z * se])
                })
                .collect();
            Ok(TestReport {
                statistic: stat,
                statistic_kind: TestStatistic::Entropy,
                null_value: 0.0,
                p_value,
                method: TestMethod::PluginZ,
                n_boot: 0,
                std_error: se,
                block_len: None,
                hdi,
                seed: opts.bootstrap.seed,
            })
        }
    }
}

fn plane_series(traj: &Trajectory) -> (Vec<(usize, usize)>, Vec<Vec<f64>>) {
    let d = traj.dim();
    let mut planes = vec![];
    let mut series = vec![];
    for i in 0..d {
        for j in (i + 1)..d {
            planes.push((i, j));
            series.push(
                (0..traj.n_steps())
                    .map(|k| {
                        let x = traj.state(k);
                        let y = traj.state(k + 1);
                        0.5 * (x[i] * (y[j] - x[j]) - x[j] * (y[i] - x[i]))
                    })
                    .collect(),
            );
        }
    }
    (planes, series)
}

fn alpha_norm_test(traj: &Trajectory, opts: &TestOptions) -> Result<TestReport> {
    if opts.method == TestMethod::PluginZ {
        return Err(Error::InvalidArgument("plugin_z supports the entropy statistic only".into()));
    }
    if traj.dim() < 2 {
        return Err(Error::DimensionMismatch("area needs d >= 2".into()));
    }
    let stat = area_rate(traj)?.norm();
    let b = resolve_block(opts.bootstrap.block_len, traj)?;
    let (_, series) = plane_series(traj);
    let t = traj.duration();
    let samples: Vec<f64> = bootstrap_sums_multi(&series, opts.bootstrap.n_boot, b, opts.bootstrap.seed)?
        .into_iter()
        .map(|sums| (2.0 * sums.iter().map(|s| (s / t).powi(2)).sum::<f64>()).sqrt())
        .collect();
    Ok(TestReport {
        statistic: stat,
        statistic_kind: TestStatistic::AlphaNorm,
        null_value: 0.0,
        p_value: upper_p(&samples, stat, 0.0),
        method: TestMethod::BlockBootstrap,
        n_boot: samples.len(),
        std_error: std_dev(&samples),
        block_len: Some(b),
        hdi: hdi_map(&samples)?,
        seed: opts.bootstrap.seed,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PlaneTest {
    pub i: usize,
    pub j: usize,
    pub statistic: f64,
    pub std_error: f64,
    pub p_value: f64,
    pub p_holm: f64,
}

/// Holm step-down adjustment of a list of p-values, in the input order.
pub fn holm(p: &[f64]) -> Vec<f64> {
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut out = vec![0.0; m];
    let mut running = 0.0_f64;
    for (rank, &idx) in order.iter().enumerate() {
        running = running.max(((m - rank) as f64 * p[idx]).min(1.0));
        out[idx] = running;
    }
    out
}

/// Two-sided bootstrap tests of `α̂_ij = 0` in every plane, Holm-adjusted.
pub fn per_plane_tests(traj: &Trajectory, boot: &BootstrapOptions) -> Result<Vec<PlaneTest>> {
    if boot.n_boot == 0 {
        return Err(Error::InvalidArgument("n_boot must be positive".into()));
    }
    let b = resolve_block(boot.block_len, traj)?;
    let (planes, series) = plane_series(traj);
    let t = traj.duration();
    let alpha = area_rate(traj)?;
    let sums = bootstrap_sums_multi(&series, boot.n_boot, b, boot.seed)?;
    let mut tests: Vec<PlaneTest> = planes
        .iter()
        .enumerate()
        .map(|(p, &(i, j))| {
            let stat = alpha[(i, j)];
            let samples: Vec<f64> = sums.iter().map(|s| s[p] / t).collect();
            let hits = samples.iter().filter(|&&s| (s - stat).abs() >= stat.abs()).count();
            PlaneTest {
                i,
                j,
                statistic: stat,
                std_error: std_dev(&samples),
                p_value: hits as f64 / samples.len() as f64,
                p_holm: 0.0,
            }
        })
        .collect();
    let adj = holm(&tests.iter().map(|t| t.p_value).collect::<Vec<_>>());
    for (t, a) in tests.iter_mut().zip(adj) {
        t.p_holm = a;
    }
    Ok(tests)
}

/// What each trajectory contributes to a convergence band.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BandStatistic {
    /// `α̂_ij`.
    Entry(usize, usize),
    /// `‖α̂‖_F`.
    Frobenius,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BandRow {
    #[serde(rename = "T")]
    pub t: f64,
    /// Ensemble mean of the statistic.
    pub stat: f64,
    /// Standard error of the ensemble mean.
    pub std_error: f64,
    /// HDIs at masses 0.5, 0.7, 0.9.
    pub hdi: [(f64, f64); 3],
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceTable {
    pub rows: Vec<BandRow>,
    /// `traces[r][g]`: trajectory `r` evaluated at grid point `g`.
    pub traces: Vec<Vec<f64>>,
}

/// Area statistics of `n_traj` trajectories evaluated on the prefixes of
/// length `T` for every `T` in `t_grid`. `cfg.n_steps` is replaced by the
/// length the largest `T` needs.
pub fn convergence_bands(
    model: &OuModel,
    n_traj: usize,
    t_grid: &[f64],
    cfg: &SimConfig,
    which: BandStatistic,
) -> Result<ConvergenceTable> {
    if n_traj == 0 || t_grid.is_empty() {
        return Err(Error::InvalidArgument("need at least one trajectory and one grid time".into()));
    }
    let d = model.dim();
    if let BandStatistic::Entry(i, j) = which {
        if i >= d || j >= d || i == j {
            return Err(Error::InvalidArgument(format!("plane ({i}, {j}) for dimension {d}")));
        }
    }
    let ks: Vec<usize> = t_grid
        .iter()
        .map(|&t| {
            let k = (t / cfg.dt).round();
            if !(k >= 1.0 && k.is_finite()) {
                Err(Error::InvalidArgument(format!("grid time {t} is shorter than one step")))
            } else {
                Ok(k as usize)
            }
        })
        .collect::<Result<_>>()?;
    let mut run = cfg.clone();
    run.n_steps = *ks.iter().max().unwrap();
    let traces: Vec<Vec<f64>> = (0..n_traj as u64)
        .into_par_iter()
        .map(|r| {
            let tr = simulate_replica(model, &run, r)?;
            Ok(prefix_statistics(&tr, &ks, which))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::with_capacity(ks.len());
    for (g, &k) in ks.iter().enumerate() {
        let vals: Vec<f64> = traces.iter().map(|t| t[g]).collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let se = std_dev(&vals) / n.sqrt();
        let mut hdis = [(0.0, 0.0); 3];
        for (h, &m) in hdis.iter_mut().zip(HDI_MASSES.iter()) {
            *h = hdi(&vals, m)?;
        }
        rows.push(BandRow { t: k as f64 * cfg.dt, stat: mean, std_error: se, hdi: hdis });
    }
    Ok(ConvergenceTable { rows, traces })
}

fn prefix_statistics(tr: &Trajectory, ks: &[usize], which: BandStatistic) -> Vec<f64> {
    let (planes, series) = plane_series(tr);
    let n = tr.n_steps();
    let mut cum: Vec<Vec<f64>> = series
        .iter()
        .map(|s| {
            let mut c = Vec::with_capacity(n + 1);
            let mut acc = 0.0;
            c.push(0.0);
            for x in s {
                acc += x;
                c.push(acc);
            }
            c
        })
        .collect();
    ks.iter()
        .map(|&k| {
            let t = k as f64 * tr.dt;
            match which {
                BandStatistic::Entry(i, j) => {
                    let (lo, hi, sign) = if i < j { (i, j, 1.0) } else { (j, i, -1.0) };
                    let p = planes.iter().position(|&pl| pl == (lo, hi)).unwrap();
                    sign * cum[p][k] / t
                }
                BandStatistic::Frobenius => {
                    (2.0 * cum.iter_mut().map(|c| (c[k] / t).powi(2)).sum::<f64>()).sqrt()
                }
            }
        })
        .collect()
}

/// CSV `T,stat,hdi50_lo,hdi50_hi,hdi70_lo,hdi70_hi,hdi90_lo,hdi90_hi`.
pub fn write_bands_csv<W: Write>(table: &ConvergenceTable, mut w: W) -> Result<()> {
    writeln!(w, "T,stat,hdi50_lo,hdi50_hi,hdi70_lo,hdi70_hi,hdi90_lo,hdi90_hi")?;
    for r in &table.rows {
        write!(w, "{:.16e},{:.16e}", r.t, r.stat)?;
        for (lo, hi) in r.hdi {
            write!(w, ",{lo:.16e},{hi:.16e}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// CSV `traj,T,stat`, one row per trajectory and grid time.
pub fn write_traces_csv<W: Write>(table: &ConvergenceTable, mut w: W) -> Result<()> {
    writeln!(w, "traj,T,stat")?;
    for (r, trace) in table.traces.iter().enumerate() {
        for (row, v) in table.rows.iter().zip(trace) {
            writeln!(w, "{r},{:.16e},{v:.16e}", row.t)?;
        }
    }
    Ok(())
}
