//! Desk-scale experiment drivers: consistency trends, sparsity adaptation of
//! split directions, empirical-vs-theoretical cut distances, and within-cell
//! variation decay. Every driver emits machine-readable metric records and
//! is bit-reproducible from its seed, independent of thread count.

use rand::Rng;
use rayon::prelude::*;
use std::fmt::Write as _;
use std::time::Instant;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::forest::{self, ForestParams};
use crate::model::AdditiveModel;
use crate::oracle;
use crate::rng;

/// Which asymptotic condition an explicit schedule claims to follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TheoremRegime {
    /// Shallow trees: leaf budget small relative to the subsample,
    /// `t_n (ln a_n)^9 / a_n` must not increase along the grid.
    ShallowTrees,
    /// Fully grown trees: `t_n = a_n` and `a_n ln n / n` must not increase.
    FullyGrown,
}

/// Per-n forest growth parameters derived from a schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SchedulePoint {
    pub n: usize,
    pub a_n: usize,
    pub t_n: usize,
}

/// How `(a_n, t_n)` follow the sample size along the grid.
#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleRule {
    /// Shallow trees on the full sample: `a_n = n` and
    /// `t_n = max(ceil(a_n / (ln a_n)^10), ceil(a_n^(1/3)))`.
    ///
    /// Both terms are o(a_n / (ln a_n)^9), so the shallow-regime side
    /// condition holds as n grows; the cube-root floor keeps the budget
    /// nondegenerate at desk-scale n, where the first term is still 1.
    ShallowTrees,
    /// Fully grown trees on a vanishing subsample:
    /// `a_n = ceil(n / (ln n)^2)`, `t_n = a_n`.
    FullyGrown,
    /// Explicit per-n overrides, validated against the claimed regime's
    /// ratio decay.
    Explicit { points: Vec<SchedulePoint>, regime: TheoremRegime },
}

/// A grid of sample sizes plus the rule that derives `(a_n, t_n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeSchedule {
    pub n_grid: Vec<usize>,
    pub rule: ScheduleRule,
}

/// Smallest t with t^3 >= a.
fn int_cbrt_ceil(a: usize) -> usize {
    let mut t = (a as f64).cbrt().floor() as usize;
    while t.saturating_pow(3) < a {
        t += 1;
    }
    while t > 1 && (t - 1).pow(3) >= a {
        t -= 1;
    }
    t.max(1)
}

fn shallow_leaf_budget(a_n: usize) -> usize {
    if a_n < 3 {
        return a_n;
    }
    let af = a_n as f64;
    let slow = (af / af.ln().powi(10)).ceil().max(1.0) as usize;
    slow.max(int_cbrt_ceil(a_n)).min(a_n)
}

fn fully_grown_subsample(n: usize) -> usize {
    if n < 3 {
        return n;
    }
    let nf = n as f64;
    (((nf / nf.ln().powi(2)).ceil() as usize).max(1)).min(n)
}

impl RegimeSchedule {
    pub fn shallow(n_grid: Vec<usize>) -> Self {
        RegimeSchedule { n_grid, rule: ScheduleRule::ShallowTrees }
    }

    pub fn fully_grown(n_grid: Vec<usize>) -> Self {
        RegimeSchedule { n_grid, rule: ScheduleRule::FullyGrown }
    }

    /// Validate the schedule and derive the per-n growth parameters.
    ///
    /// All schedules need a strictly increasing grid with `1 <= t_n <= a_n
    /// <= n`. The built-in fully-grown rule and any explicit schedule are
    /// additionally held to the numeric decay of their regime's ratio along
    /// the grid; the built-in shallow rule satisfies its side condition by
    /// construction (see the rule docs), which no finite desk-scale grid can
    /// witness through the raw ratio, so only the structural checks apply.
    pub fn points(&self) -> Result<Vec<SchedulePoint>> {
        if self.n_grid.is_empty() {
            return Err(Error::config("schedule: empty n grid"));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config("schedule: n grid must be strictly increasing"));
        }
        if self.n_grid[0] < 3 {
            return Err(Error::config("schedule: n must be at least 3"));
        }

        let points: Vec<SchedulePoint> = match &self.rule {
            ScheduleRule::ShallowTrees => self
                .n_grid
                .iter()
                .map(|&n| SchedulePoint { n, a_n: n, t_n: shallow_leaf_budget(n) })
                .collect(),
            ScheduleRule::FullyGrown => self
                .n_grid
                .iter()
                .map(|&n| {
                    let a_n = fully_grown_subsample(n);
                    SchedulePoint { n, a_n, t_n: a_n }
                })
                .collect(),
            ScheduleRule::Explicit { points, regime } => {
                if points.len() != self.n_grid.len()
                    || points.iter().zip(&self.n_grid).any(|(pt, &n)| pt.n != n)
                {
                    return Err(Error::config(
                        "schedule: explicit points must match the n grid one-to-one",
                    ));
                }
                if *regime == TheoremRegime::FullyGrown
                    && points.iter().any(|pt| pt.t_n != pt.a_n)
                {
                    return Err(Error::config(
                        "schedule: the fully-grown regime requires t_n = a_n",
                    ));
                }
                points.clone()
            }
        };

        for pt in &points {
            if pt.a_n == 0 || pt.a_n > pt.n || pt.t_n == 0 || pt.t_n > pt.a_n {
                return Err(Error::Config(format!(
                    "schedule: need 1 <= t_n <= a_n <= n, got (n={}, a_n={}, t_n={})",
                    pt.n, pt.a_n, pt.t_n
                )));
            }
        }

        let ratio_check = |name: &str, ratios: Vec<f64>| -> Result<()> {
            for w in ratios.windows(2) {
                if w[1] > w[0] {
                    return Err(Error::Config(format!(
                        "schedule: {name} must not increase along the grid, got {:?}",
                        ratios
                    )));
                }
            }
            Ok(())
        };
        match &self.rule {
            ScheduleRule::ShallowTrees => {}
            ScheduleRule::FullyGrown => {
                let ratios: Vec<f64> = points
                    .iter()
                    .map(|pt| pt.a_n as f64 * (pt.n as f64).ln() / pt.n as f64)
                    .collect();
                ratio_check("a_n ln(n)/n", ratios)?;
            }
            ScheduleRule::Explicit { regime, .. } => match regime {
                TheoremRegime::ShallowTrees => {
                    let ratios: Vec<f64> = points
                        .iter()
                        .map(|pt| pt.t_n as f64 * (pt.a_n as f64).ln().powi(9) / pt.a_n as f64)
                        .collect();
                    ratio_check("t_n (ln a_n)^9 / a_n", ratios)?;
                }
                TheoremRegime::FullyGrown => {
                    let ratios: Vec<f64> = points
                        .iter()
                        .map(|pt| pt.a_n as f64 * (pt.n as f64).ln() / pt.n as f64)
                        .collect();
                    ratio_check("a_n ln(n)/n", ratios)?;
                }
            },
        }
        Ok(points)
    }
}

/// One metric value with its provenance; `replicate = None` marks rows
/// aggregated across replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub experiment: String,
    pub n: usize,
    pub a_n: usize,
    pub t_n: usize,
    pub trees: usize,
    pub mtry: usize,
    pub replicate: Option<usize>,
    pub metric: String,
    pub value: f64,
    pub std_error: f64,
    pub replicates: usize,
}

/// Wall-clock timings, kept out of the metrics records so reruns of the same
/// seed produce byte-identical metrics files.
#[derive(Debug, Clone)]
pub struct TimingRecord {
    pub experiment: String,
    pub n: usize,
    pub wall_ms: u128,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub records: Vec<MetricsRecord>,
    pub timings: Vec<TimingRecord>,
}

/// Forest size settings shared by the drivers. `mtry = None` falls back to
/// the usual regression default `ceil(p/3)`, except where a driver pins its
/// own value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ForestSettings {
    pub trees: usize,
    pub mtry: Option<usize>,
}

impl ForestSettings {
    fn default_mtry(p: usize) -> usize {
        p.div_ceil(3).max(1)
    }

    fn resolve_mtry(&self, p: usize) -> usize {
        self.mtry.unwrap_or_else(|| Self::default_mtry(p))
    }

    fn validate(&self) -> Result<()> {
        if self.trees == 0 {
            return Err(Error::config("trees: must be at least 1"));
        }
        Ok(())
    }
}

const DOM_DATASET: u64 = 1;
const DOM_FOREST: u64 = 2;
const DOM_QUERY: u64 = 3;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Assertion(msg.into()))
    }
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let r = values.len();
    let mean = values.iter().sum::<f64>() / r as f64;
    if r < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (r as f64 - 1.0);
    (mean, (var / r as f64).sqrt())
}

/// Linear-interpolation empirical quantile of sorted samples.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q * (sorted.len() as f64 - 1.0);
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

fn sorted(mut values: Vec<f64>) -> Vec<f64> {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite metric samples"));
    values
}

fn uniform_queries(p: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut r = rng::stream(seed, 0);
    (0..count).map(|_| (0..p).map(|_| r.gen::<f64>()).collect()).collect()
}

/// Quadrature-combined standard error of a difference of two means.
pub fn combined_se(a: f64, b: f64) -> f64 {
    (a * a + b * b).sqrt()
}

/// True when consecutive values drop by more than `factor` combined SEs.
pub fn strictly_decreasing_with_margin(values: &[(f64, f64)], factor: f64) -> bool {
    values
        .windows(2)
        .all(|w| w[0].0 - w[1].0 > factor * combined_se(w[0].1, w[1].1))
}

/// Pull the aggregated rows of a metric as `(n, value, std_error)`, ordered by n.
pub fn aggregated_series(records: &[MetricsRecord], metric: &str) -> Vec<(usize, f64, f64)> {
    let mut rows: Vec<(usize, f64, f64)> = records
        .iter()
        .filter(|r| r.replicate.is_none() && r.metric == metric)
        .map(|r| (r.n, r.value, r.std_error))
        .collect();
    rows.sort_by_key(|&(n, _, _)| n);
    rows
}

/// L2 error of the forest against the known regression function: for each n
/// in the grid, fit per-replicate forests and average the squared error over
/// fresh uniform query points. Dataset and query seeds are paired across n
/// (replicate r reuses its streams) to stabilize the trend differences.
pub fn run_consistency(
    model: &AdditiveModel,
    schedule: &RegimeSchedule,
    settings: ForestSettings,
    replicates: usize,
    n_test: usize,
    seed: u64,
) -> Result<ExperimentOutput> {
    model.validate()?;
    settings.validate()?;
    if replicates == 0 {
        return Err(Error::config("replicates: must be at least 1"));
    }
    if n_test < 1000 {
        return Err(Error::Config(format!("n_test: must be at least 1000, got {n_test}")));
    }
    let points = schedule.points()?;
    let mtry = settings.resolve_mtry(model.p);

    let mut out = ExperimentOutput::default();
    for pt in &points {
        let t0 = Instant::now();
        let mses: Vec<f64> = (0..replicates)
            .into_par_iter()
            .map(|r| -> Result<f64> {
                let ds = Dataset::sample(model, pt.n, rng::derive(seed, DOM_DATASET, r as u64))?;
                let params = ForestParams {
                    trees: settings.trees,
                    mtry,
                    a_n: pt.a_n,
                    t_n: pt.t_n,
                    seed: rng::derive(seed, DOM_FOREST, r as u64),
                };
                let forest = forest::fit(&ds, params)?;
                let queries =
                    uniform_queries(model.p, n_test, rng::derive(seed, DOM_QUERY, r as u64));
                let mut sum = 0.0;
                for x in &queries {
                    let err = forest.predict(x)? - model.eval(x);
                    sum += err * err;
                }
                Ok(sum / n_test as f64)
            })
            .collect::<Result<_>>()?;

        for (r, &mse) in mses.iter().enumerate() {
            ensure(mse >= 0.0 && mse.is_finite(), format!("mse out of range: {mse}"))?;
            out.records.push(MetricsRecord {
                experiment: "consistency".into(),
                n: pt.n,
                a_n: pt.a_n,
                t_n: pt.t_n,
                trees: settings.trees,
                mtry,
                replicate: Some(r),
                metric: "mse".into(),
                value: mse,
                std_error: 0.0,
                replicates: 1,
            });
        }
        let (mean, se) = mean_and_se(&mses);
        out.records.push(MetricsRecord {
            experiment: "consistency".into(),
            n: pt.n,
            a_n: pt.a_n,
            t_n: pt.t_n,
            trees: settings.trees,
            mtry,
            replicate: None,
            metric: "mse_mean".into(),
            value: mean,
            std_error: se,
            replicates,
        });
        out.timings.push(TimingRecord {
            experiment: "consistency".into(),
            n: pt.n,
            wall_ms: t0.elapsed().as_millis(),
        });
    }
    Ok(out)
}

/// Fraction of early cut directions that land on the informative coordinates
/// of a sparse model. The candidate set is the full direction set by default
/// (that is the setting under which the concentration claim holds); the
/// sentinel for "cut fewer than q times" is excluded from the denominator
/// and counted separately.
pub fn run_sparsity(
    model: &AdditiveModel,
    schedule: &RegimeSchedule,
    k: usize,
    settings: ForestSettings,
    replicates: usize,
    n_query: usize,
    seed: u64,
) -> Result<ExperimentOutput> {
    model.validate()?;
    settings.validate()?;
    let s = model.informative();
    if s >= model.p {
        return Err(Error::Config(format!(
            "sparsity experiment needs s < p (no uninformative directions to test), got s = {s}, p = {}",
            model.p
        )));
    }
    for j in 0..s {
        let (lo, hi) = model.component(j).range(0.0, 1.0);
        if hi <= lo {
            return Err(Error::Config(format!(
                "sparsity experiment needs non-constant informative components; component {j} is flat"
            )));
        }
    }
    if k == 0 || replicates == 0 || n_query == 0 {
        return Err(Error::config("k, replicates and n_query must be at least 1"));
    }
    let points = schedule.points()?;
    let mtry = settings.mtry.unwrap_or(model.p);

    struct RepCounts {
        informative: Vec<usize>,
        total: Vec<usize>,
        excluded: usize,
    }

    let mut out = ExperimentOutput::default();
    for pt in &points {
        let t0 = Instant::now();
        let reps: Vec<RepCounts> = (0..replicates)
            .into_par_iter()
            .map(|r| -> Result<RepCounts> {
                let ds = Dataset::sample(model, pt.n, rng::derive(seed, DOM_DATASET, r as u64))?;
                let params = ForestParams {
                    trees: settings.trees,
                    mtry,
                    a_n: pt.a_n,
                    t_n: pt.t_n,
                    seed: rng::derive(seed, DOM_FOREST, r as u64),
                };
                let forest = forest::fit(&ds, params)?;
                let queries =
                    uniform_queries(model.p, n_query, rng::derive(seed, DOM_QUERY, r as u64));
                let mut counts = RepCounts {
                    informative: vec![0; k],
                    total: vec![0; k],
                    excluded: 0,
                };
                for x in &queries {
                    for tree in forest.trees() {
                        for (q, dir) in tree.cut_directions(x, k)?.into_iter().enumerate() {
                            match dir {
                                Some(j) => {
                                    counts.total[q] += 1;
                                    if j < s {
                                        counts.informative[q] += 1;
                                    }
                                }
                                None => counts.excluded += 1,
                            }
                        }
                    }
                }
                Ok(counts)
            })
            .collect::<Result<_>>()?;

        let push = |out: &mut ExperimentOutput, replicate, metric: String, value, se, reps_n| {
            out.records.push(MetricsRecord {
                experiment: "sparsity".into(),
                n: pt.n,
                a_n: pt.a_n,
                t_n: pt.t_n,
                trees: settings.trees,
                mtry,
                replicate,
                metric,
                value,
                std_error: se,
                replicates: reps_n,
            });
        };

        for q in 0..k {
            let fracs: Vec<f64> = reps
                .iter()
                .map(|c| {
                    ensure(c.total[q] > 0, format!("no cuts observed at depth {q}; t_n too small"))
                        .map(|_| c.informative[q] as f64 / c.total[q] as f64)
                })
                .collect::<Result<_>>()?;
            let (mean, se) = mean_and_se(&fracs);
            ensure((0.0..=1.0).contains(&mean), format!("fraction out of [0,1]: {mean}"))?;
            push(&mut out, None, format!("informative_fraction_q{}", q + 1), mean, se, replicates);
        }

        let pooled: Vec<f64> = reps
            .iter()
            .map(|c| {
                let total: usize = c.total.iter().sum();
                let inf: usize = c.informative.iter().sum();
                inf as f64 / total as f64
            })
            .collect();
        for (r, &frac) in pooled.iter().enumerate() {
            push(&mut out, Some(r), "informative_fraction".into(), frac, 0.0, 1);
        }
        let (mean, se) = mean_and_se(&pooled);
        ensure((0.0..=1.0).contains(&mean), format!("fraction out of [0,1]: {mean}"))?;
        push(&mut out, None, "informative_fraction".into(), mean, se, replicates);

        let excluded: usize = reps.iter().map(|c| c.excluded).sum();
        push(&mut out, None, "excluded_paths".into(), excluded as f64, 0.0, replicates);

        out.timings.push(TimingRecord {
            experiment: "sparsity".into(),
            n: pt.n,
            wall_ms: t0.elapsed().as_millis(),
        });
    }
    Ok(out)
}

/// Distance between the first k empirical cuts toward each query point and
/// the set of optimal theoretical cut sequences. Query paths shorter than k
/// are excluded from the distance sample and counted.
pub fn run_cut_distance(
    model: &AdditiveModel,
    schedule: &RegimeSchedule,
    k: usize,
    settings: ForestSettings,
    replicates: usize,
    n_query: usize,
    seed: u64,
) -> Result<ExperimentOutput> {
    model.validate()?;
    settings.validate()?;
    if k == 0 || k > 3 {
        return Err(Error::Config(format!(
            "k: the theoretical tree must stay cheap, need 1 <= k <= 3, got {k}"
        )));
    }
    if replicates == 0 || n_query == 0 {
        return Err(Error::config("replicates and n_query must be at least 1"));
    }
    let theo = oracle::theoretical_tree(model, k)?;
    if theo.degenerate {
        return Err(Error::domain(
            "the model's theoretical splits are degenerate (flat criterion); refusing to run",
        ));
    }
    let points = schedule.points()?;
    // The theoretical tree optimizes over every direction; the empirical
    // candidate set must coincide or the distances are inflated by design.
    let mtry = settings.mtry.unwrap_or(model.p);
    if mtry != model.p {
        return Err(Error::Config(format!(
            "mtry: cut-distance runs need the full direction set (mtry = p = {}), got {mtry}",
            model.p
        )));
    }

    let mut out = ExperimentOutput::default();
    for pt in &points {
        let t0 = Instant::now();
        let reps: Vec<(Vec<f64>, usize)> = (0..replicates)
            .into_par_iter()
            .map(|r| -> Result<(Vec<f64>, usize)> {
                let ds = Dataset::sample(model, pt.n, rng::derive(seed, DOM_DATASET, r as u64))?;
                let params = ForestParams {
                    trees: settings.trees,
                    mtry,
                    a_n: pt.a_n,
                    t_n: pt.t_n,
                    seed: rng::derive(seed, DOM_FOREST, r as u64),
                };
                let forest = forest::fit(&ds, params)?;
                let queries =
                    uniform_queries(model.p, n_query, rng::derive(seed, DOM_QUERY, r as u64));
                let mut distances = Vec::new();
                let mut excluded = 0usize;
                for x in &queries {
                    let theo_seqs = theo.sequences_for(x);
                    for tree in forest.trees() {
                        let emp = tree.cut_sequence(x, k)?;
                        if emp.len() < k {
                            excluded += 1;
                            continue;
                        }
                        distances.push(oracle::cut_distance(&emp, &theo_seqs)?);
                    }
                }
                Ok((distances, excluded))
            })
            .collect::<Result<_>>()?;

        let mut all = Vec::new();
        let mut rep_medians = Vec::with_capacity(replicates);
        let mut excluded_total = 0usize;
        for (r, (distances, excluded)) in reps.iter().enumerate() {
            ensure(
                !distances.is_empty(),
                "every query path was shorter than k; increase t_n",
            )?;
            let s = sorted(distances.clone());
            let med = quantile(&s, 0.5);
            rep_medians.push(med);
            excluded_total += excluded;
            all.extend_from_slice(distances);
            out.records.push(MetricsRecord {
                experiment: "cut_distance".into(),
                n: pt.n,
                a_n: pt.a_n,
                t_n: pt.t_n,
                trees: settings.trees,
                mtry,
                replicate: Some(r),
                metric: "cut_distance_median".into(),
                value: med,
                std_error: 0.0,
                replicates: 1,
            });
        }
        let pooled = sorted(all);
        let (_, med_se) = mean_and_se(&rep_medians);
        for (metric, value, se) in [
            ("cut_distance_median", quantile(&pooled, 0.5), med_se),
            ("cut_distance_p90", quantile(&pooled, 0.9), 0.0),
            ("excluded_paths", excluded_total as f64, 0.0),
        ] {
            out.records.push(MetricsRecord {
                experiment: "cut_distance".into(),
                n: pt.n,
                a_n: pt.a_n,
                t_n: pt.t_n,
                trees: settings.trees,
                mtry,
                replicate: None,
                metric: metric.into(),
                value,
                std_error: se,
                replicates,
            });
        }
        out.timings.push(TimingRecord {
            experiment: "cut_distance".into(),
            n: pt.n,
            wall_ms: t0.elapsed().as_millis(),
        });
    }
    Ok(out)
}

/// Exact variation of the regression function within the leaf containing
/// each query point, per tree: median and the probability of falling under
/// each configured threshold.
pub fn run_cell_variation(
    model: &AdditiveModel,
    schedule: &RegimeSchedule,
    settings: ForestSettings,
    replicates: usize,
    n_query: usize,
    xi_grid: &[f64],
    seed: u64,
) -> Result<ExperimentOutput> {
    model.validate()?;
    settings.validate()?;
    if replicates == 0 || n_query == 0 {
        return Err(Error::config("replicates and n_query must be at least 1"));
    }
    if xi_grid.is_empty() || xi_grid.iter().any(|&xi| xi <= 0.0 || !xi.is_finite()) {
        return Err(Error::config("xi grid must be nonempty with positive thresholds"));
    }
    let points = schedule.points()?;
    let mtry = settings.resolve_mtry(model.p);

    let mut out = ExperimentOutput::default();
    for pt in &points {
        let t0 = Instant::now();
        let reps: Vec<Vec<f64>> = (0..replicates)
            .into_par_iter()
            .map(|r| -> Result<Vec<f64>> {
                let ds = Dataset::sample(model, pt.n, rng::derive(seed, DOM_DATASET, r as u64))?;
                let params = ForestParams {
                    trees: settings.trees,
                    mtry,
                    a_n: pt.a_n,
                    t_n: pt.t_n,
                    seed: rng::derive(seed, DOM_FOREST, r as u64),
                };
                let forest = forest::fit(&ds, params)?;
                let queries =
                    uniform_queries(model.p, n_query, rng::derive(seed, DOM_QUERY, r as u64));
                let mut deltas = Vec::with_capacity(n_query * settings.trees);
                for x in &queries {
                    for tree in forest.trees() {
                        let leaf = tree.leaf(x)?;
                        deltas.push(oracle::cell_variation(model, &leaf.cell)?);
                    }
                }
                Ok(deltas)
            })
            .collect::<Result<_>>()?;

        let mut all = Vec::new();
        let mut rep_medians = Vec::with_capacity(replicates);
        for (r, deltas) in reps.iter().enumerate() {
            let s = sorted(deltas.clone());
            let med = quantile(&s, 0.5);
            rep_medians.push(med);
            all.extend_from_slice(deltas);
            out.records.push(MetricsRecord {
                experiment: "cell_variation".into(),
                n: pt.n,
                a_n: pt.a_n,
                t_n: pt.t_n,
                trees: settings.trees,
                mtry,
                replicate: Some(r),
                metric: "delta_median".into(),
                value: med,
                std_error: 0.0,
                replicates: 1,
            });
        }
        let pooled = sorted(all);
        let (_, med_se) = mean_and_se(&rep_medians);
        out.records.push(MetricsRecord {
            experiment: "cell_variation".into(),
            n: pt.n,
            a_n: pt.a_n,
            t_n: pt.t_n,
            trees: settings.trees,
            mtry,
            replicate: None,
            metric: "delta_median".into(),
            value: quantile(&pooled, 0.5),
            std_error: med_se,
            replicates,
        });
        for &xi in xi_grid {
            let probs: Vec<f64> = reps
                .iter()
                .map(|deltas| {
                    deltas.iter().filter(|&&d| d <= xi).count() as f64 / deltas.len() as f64
                })
                .collect();
            let (mean, se) = mean_and_se(&probs);
            ensure((0.0..=1.0).contains(&mean), format!("probability out of [0,1]: {mean}"))?;
            out.records.push(MetricsRecord {
                experiment: "cell_variation".into(),
                n: pt.n,
                a_n: pt.a_n,
                t_n: pt.t_n,
                trees: settings.trees,
                mtry,
                replicate: None,
                metric: format!("p_delta_le_{xi}"),
                value: mean,
                std_error: se,
                replicates,
            });
        }
        out.timings.push(TimingRecord {
            experiment: "cell_variation".into(),
            n: pt.n,
            wall_ms: t0.elapsed().as_millis(),
        });
    }
    Ok(out)
}

/// Render records as delimited text, one record per line.
pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from(
        "experiment,n,a_n,t_n,trees,mtry,replicate,metric,value,std_error,replicates\n",
    );
    for r in records {
        let rep = r.replicate.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.experiment,
            r.n,
            r.a_n,
            r.t_n,
            r.trees,
            r.mtry,
            rep,
            r.metric,
            r.value,
            r.std_error,
            r.replicates
        );
    }
    out
}

/// Human-oriented summary of the aggregated rows, grouped per metric with
/// the consecutive-n differences and their combined standard errors.
pub fn render_summary(records: &[MetricsRecord]) -> String {
    let mut metrics: Vec<(String, String)> = Vec::new();
    for r in records {
        if r.replicate.is_none()
            && !metrics.iter().any(|(e, m)| e == &r.experiment && m == &r.metric)
        {
            metrics.push((r.experiment.clone(), r.metric.clone()));
        }
    }
    let mut out = String::new();
    for (experiment, metric) in metrics {
        let series: Vec<(usize, f64, f64)> = aggregated_series(
            &records
                .iter()
                .filter(|r| r.experiment == experiment)
                .cloned()
                .collect::<Vec<_>>(),
            &metric,
        );
        let _ = writeln!(out, "[{experiment}] {metric}");
        for (n, v, se) in &series {
            let _ = writeln!(out, "  n = {n:>8}  value = {v:.6e}  se = {se:.3e}");
        }
        for w in series.windows(2) {
            let drop = w[0].1 - w[1].1;
            let cse = combined_se(w[0].2, w[1].2);
            let _ = writeln!(
                out,
                "  n {} -> {}: drop = {:.6e}  (2 x combined se = {:.3e})",
                w[0].0,
                w[1].0,
                drop,
                2.0 * cse
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Component;

    fn constant_model() -> AdditiveModel {
        AdditiveModel::new(1, 1, 0.0, vec![Component::Constant { value: 2.0 }]).unwrap()
    }

    fn linear_model(sigma: f64) -> AdditiveModel {
        AdditiveModel::new(1, 1, sigma, vec![Component::Linear { slope: 1.0, intercept: 0.0 }])
            .unwrap()
    }

    #[test]
    fn shallow_schedule_derives_growing_budgets() {
        let pts = RegimeSchedule::shallow(vec![500, 2000, 8000]).points().unwrap();
        assert_eq!(
            pts,
            vec![
                SchedulePoint { n: 500, a_n: 500, t_n: 8 },
                SchedulePoint { n: 2000, a_n: 2000, t_n: 13 },
                SchedulePoint { n: 8000, a_n: 8000, t_n: 20 },
            ]
        );
    }

    #[test]
    fn shallow_side_condition_vanishes_at_scale() {
        // The raw ratio of the shallow rule tends to zero in n (like
        // 1/ln a_n once the slow term takes over), even though no desk-scale
        // grid can show it: check the decay on an astronomic grid in real
        // arithmetic.
        let ratio = |a: f64| {
            let budget = (a / a.ln().powi(10)).max(a.cbrt());
            budget * a.ln().powi(9) / a
        };
        let grid = [1e24, 1e27, 1e30, 1e50, 1e100, 1e200, 1e300];
        for w in grid.windows(2) {
            assert!(ratio(w[1]) < ratio(w[0]), "{} !< {}", ratio(w[1]), ratio(w[0]));
        }
        assert!(ratio(1e300) < 2e-3);
    }

    #[test]
    fn fully_grown_schedule_matches_the_rule() {
        let pts = RegimeSchedule::fully_grown(vec![500, 2000, 8000]).points().unwrap();
        for pt in &pts {
            assert_eq!(pt.t_n, pt.a_n);
            let expect = ((pt.n as f64) / (pt.n as f64).ln().powi(2)).ceil() as usize;
            assert_eq!(pt.a_n, expect);
        }
        // the decay ratio holds on this grid
        let ratios: Vec<f64> =
            pts.iter().map(|pt| pt.a_n as f64 * (pt.n as f64).ln() / pt.n as f64).collect();
        assert!(ratios.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn explicit_schedule_with_increasing_ratio_is_rejected() {
        let schedule = RegimeSchedule {
            n_grid: vec![500, 2000],
            rule: ScheduleRule::Explicit {
                points: vec![
                    SchedulePoint { n: 500, a_n: 500, t_n: 2 },
                    SchedulePoint { n: 2000, a_n: 2000, t_n: 64 },
                ],
                regime: TheoremRegime::ShallowTrees,
            },
        };
        let err = schedule.points().unwrap_err();
        assert!(err.to_string().contains("must not increase"), "{err}");
    }

    #[test]
    fn explicit_fully_grown_requires_singleton_leaves() {
        let schedule = RegimeSchedule {
            n_grid: vec![100],
            rule: ScheduleRule::Explicit {
                points: vec![SchedulePoint { n: 100, a_n: 50, t_n: 20 }],
                regime: TheoremRegime::FullyGrown,
            },
        };
        assert!(schedule.points().is_err());
    }

    #[test]
    fn non_increasing_grid_is_rejected() {
        assert!(RegimeSchedule::shallow(vec![100, 100]).points().is_err());
        assert!(RegimeSchedule::shallow(vec![]).points().is_err());
    }

    #[test]
    fn noiseless_constant_model_has_zero_mse() {
        let schedule = RegimeSchedule::shallow(vec![30, 60]);
        let out = run_consistency(
            &constant_model(),
            &schedule,
            ForestSettings { trees: 3, mtry: Some(1) },
            2,
            1000,
            7,
        )
        .unwrap();
        for row in aggregated_series(&out.records, "mse_mean") {
            assert!(row.1.abs() < 1e-25, "mse = {}", row.1);
        }
        // shape contract: one row per (n, replicate) plus one aggregate per n
        let per_rep =
            out.records.iter().filter(|r| r.metric == "mse" && r.replicate.is_some()).count();
        assert_eq!(per_rep, 4);
    }

    #[test]
    fn experiment_records_are_bit_reproducible() {
        let schedule = RegimeSchedule::fully_grown(vec![60, 120]);
        let run = || {
            run_consistency(
                &linear_model(0.2),
                &schedule,
                ForestSettings { trees: 5, mtry: Some(1) },
                3,
                1000,
                99,
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.records, b.records);
        assert_eq!(metrics_csv(&a.records), metrics_csv(&b.records));
    }

    #[test]
    fn records_are_independent_of_thread_count() {
        let schedule = RegimeSchedule::fully_grown(vec![60, 120]);
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                run_cell_variation(
                    &linear_model(0.1),
                    &schedule,
                    ForestSettings { trees: 4, mtry: Some(1) },
                    3,
                    20,
                    &[0.25, 0.5],
                    5,
                )
                .unwrap()
            })
        };
        assert_eq!(metrics_csv(&run(1).records), metrics_csv(&run(4).records));
    }

    #[test]
    fn standard_errors_shrink_with_replicates() {
        let schedule = RegimeSchedule::fully_grown(vec![80]);
        let se_of = |replicates: usize| {
            let out = run_consistency(
                &linear_model(0.5),
                &schedule,
                ForestSettings { trees: 3, mtry: Some(1) },
                replicates,
                1000,
                13,
            )
            .unwrap();
            aggregated_series(&out.records, "mse_mean")[0].2
        };
        let (se_small, se_large) = (se_of(8), se_of(128));
        // Monte Carlo scaling: 16x the replicates should shrink the SE by
        // about 4; allow a loose factor.
        assert!(
            se_large < se_small / 2.0,
            "se(8) = {se_small}, se(128) = {se_large}"
        );
    }

    #[test]
    fn noise_dominated_sparsity_sits_near_the_uniform_baseline() {
        // Signals far below the noise floor on a tiny sample: direction
        // choice is effectively uniform over p, so the informative fraction
        // sits near s/p.
        let model = AdditiveModel::new(
            6,
            2,
            50.0,
            vec![
                Component::Linear { slope: 0.1, intercept: 0.0 },
                Component::Polynomial { coeffs: vec![0.0, 0.0, 0.1] },
            ],
        )
        .unwrap();
        let schedule = RegimeSchedule {
            n_grid: vec![20],
            rule: ScheduleRule::Explicit {
                points: vec![SchedulePoint { n: 20, a_n: 20, t_n: 8 }],
                regime: TheoremRegime::ShallowTrees,
            },
        };
        let out = run_sparsity(
            &model,
            &schedule,
            2,
            ForestSettings { trees: 1, mtry: None },
            300,
            16,
            31,
        )
        .unwrap();
        let pooled = aggregated_series(&out.records, "informative_fraction");
        let baseline = 2.0 / 6.0;
        assert!(
            (pooled[0].1 - baseline).abs() < 0.08,
            "fraction {} vs baseline {baseline}",
            pooled[0].1
        );
    }

    #[test]
    fn thresholds_above_the_total_range_have_unit_probability() {
        // A linear slope-1 component varies by at most 1 on any cell.
        let out = run_cell_variation(
            &linear_model(0.3),
            &RegimeSchedule::fully_grown(vec![100]),
            ForestSettings { trees: 5, mtry: None },
            2,
            30,
            &[2.0],
            17,
        )
        .unwrap();
        assert_eq!(aggregated_series(&out.records, "p_delta_le_2")[0].1, 1.0);
    }

    #[test]
    fn sparsity_rejects_a_dense_model() {
        let model = linear_model(0.1); // s = p = 1
        let schedule = RegimeSchedule::shallow(vec![50]);
        let err = run_sparsity(
            &model,
            &schedule,
            1,
            ForestSettings { trees: 2, mtry: None },
            1,
            10,
            3,
        );
        assert!(err.is_err());
    }

    #[test]
    fn cut_distance_refuses_degenerate_models() {
        let schedule = RegimeSchedule::shallow(vec![50]);
        let err = run_cut_distance(
            &constant_model(),
            &schedule,
            1,
            ForestSettings { trees: 2, mtry: None },
            1,
            10,
            3,
        );
        assert!(err.is_err());
    }

    #[test]
    fn cut_distance_requires_the_full_direction_set() {
        let model = AdditiveModel::new(
            2,
            2,
            0.0,
            vec![
                Component::Linear { slope: 1.0, intercept: 0.0 },
                Component::Linear { slope: 0.5, intercept: 0.0 },
            ],
        )
        .unwrap();
        let err = run_cut_distance(
            &model,
            &RegimeSchedule::shallow(vec![50]),
            1,
            ForestSettings { trees: 2, mtry: Some(1) },
            1,
            10,
            3,
        );
        assert!(err.unwrap_err().to_string().contains("mtry"));
    }

    #[test]
    fn cell_variation_of_a_constant_model_is_zero_with_unit_probability() {
        let schedule = RegimeSchedule {
            n_grid: vec![40],
            rule: ScheduleRule::Explicit {
                points: vec![SchedulePoint { n: 40, a_n: 20, t_n: 20 }],
                regime: TheoremRegime::FullyGrown,
            },
        };
        let out = run_cell_variation(
            &constant_model(),
            &schedule,
            ForestSettings { trees: 4, mtry: None },
            2,
            25,
            &[0.5],
            11,
        )
        .unwrap();
        let med = aggregated_series(&out.records, "delta_median");
        assert_eq!(med[0].1, 0.0);
        let prob = aggregated_series(&out.records, "p_delta_le_0.5");
        assert_eq!(prob[0].1, 1.0);
    }

    #[test]
    fn trend_margin_helper() {
        let decreasing = [(1.0, 0.01), (0.5, 0.01), (0.2, 0.01)];
        assert!(strictly_decreasing_with_margin(&decreasing, 2.0));
        let flat = [(1.0, 0.2), (0.9, 0.2)];
        assert!(!strictly_decreasing_with_margin(&flat, 2.0));
    }

    #[test]
    fn quantiles_interpolate() {
        let xs = vec![1.0, 2.0, 3.0, 4.0];
        assert!((quantile(&xs, 0.5) - 2.5).abs() < 1e-15);
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 1.0), 4.0);
    }
}
