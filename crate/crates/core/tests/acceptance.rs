//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line
//! with the measured numbers. Run it alone with
//!
//! ```text
//! cargo test -p subforest --test acceptance -- --nocapture --test-threads=1
//! ```

use std::time::Instant;

use rand::Rng;

use subforest::dataset::Dataset;
use subforest::experiments::{
    aggregated_series, combined_se, metrics_csv, run_cell_variation, run_consistency,
    run_cut_distance, run_sparsity, ForestSettings, RegimeSchedule,
};
use subforest::forest::{self, ForestParams};
use subforest::geom::Cell;
use subforest::model::{AdditiveModel, Component};
use subforest::oracle;
use subforest::rng;
use subforest::splitter::{self, CellPoints, Cut, SplitEvaluation};
use subforest::tree;

fn verdict(id: u8, name: &str, pass: bool, detail: &str) {
    println!("[criterion {id:02}] {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "[criterion {id:02}] {name}: {detail}");
}

fn consistency_model() -> AdditiveModel {
    AdditiveModel::new(
        2,
        2,
        0.1,
        vec![
            Component::Linear { slope: 1.0, intercept: 0.0 },
            Component::Polynomial { coeffs: vec![0.0, 0.0, 1.0] },
        ],
    )
    .unwrap()
}

/// Exhaustive best-cut search, deliberately naive: every admissible midpoint
/// scored independently with the direct two-pass formula, then the same
/// variance-scaled tie set and lexicographic winner as the engine.
fn brute_force_best_cut(
    ds: &Dataset,
    rows: &[usize],
    directions: &[usize],
) -> Option<(usize, f64, f64)> {
    let n = rows.len();
    let nf = n as f64;
    let mean = rows.iter().map(|&i| ds.response(i)).sum::<f64>() / nf;
    let variance = rows.iter().map(|&i| (ds.response(i) - mean).powi(2)).sum::<f64>() / nf;

    let mut candidates: Vec<(f64, usize, f64)> = Vec::new();
    for &d in directions {
        let mut xs: Vec<f64> = rows.iter().map(|&i| ds.row(i)[d]).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        xs.dedup();
        for w in xs.windows(2) {
            let z = 0.5 * (w[0] + w[1]);
            if z <= w[0] || z >= w[1] {
                continue;
            }
            let (mut sum_l, mut n_l) = (0.0f64, 0usize);
            for &i in rows {
                if ds.row(i)[d] < z {
                    sum_l += ds.response(i);
                    n_l += 1;
                }
            }
            let n_r = n - n_l;
            let mean_l = if n_l == 0 { 0.0 } else { sum_l / n_l as f64 };
            let sum_r: f64 = rows.iter().map(|&i| ds.response(i)).sum::<f64>() - sum_l;
            let mean_r = if n_r == 0 { 0.0 } else { sum_r / n_r as f64 };
            let (mut ss_parent, mut ss_children) = (0.0f64, 0.0f64);
            for &i in rows {
                let y = ds.response(i);
                ss_parent += (y - mean) * (y - mean);
                let m = if ds.row(i)[d] < z { mean_l } else { mean_r };
                ss_children += (y - m) * (y - m);
            }
            candidates.push((((ss_parent - ss_children) / nf).max(0.0), d, z));
        }
    }
    let vmax = candidates.iter().map(|&(v, _, _)| v).fold(f64::NEG_INFINITY, f64::max);
    candidates
        .into_iter()
        .filter(|&(v, _, _)| v >= vmax - splitter::TIE_REL_TOL * variance)
        .min_by(|a, b| (a.1, a.2).partial_cmp(&(b.1, b.2)).unwrap())
        .map(|(v, d, z)| (d, z, v))
}

#[test]
fn c01_split_oracle_equivalence() {
    let t0 = Instant::now();
    let mut gen = rng::stream(20_250_101, 0);
    let mut worst_gap = 0.0f64;
    for case in 0..1000 {
        let p = gen.gen_range(1..=3);
        let n = gen.gen_range(2..=50);
        let mut features = Vec::with_capacity(n * p);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            for _ in 0..p {
                features.push(gen.gen::<f64>());
            }
            ys.push(gen.gen::<f64>() * 6.0 - 3.0);
        }
        let ds = Dataset::new(n, p, features, ys).unwrap();
        let rows: Vec<usize> = (0..n).collect();
        let dirs: Vec<usize> = (0..p).collect();

        let got = splitter::best_cut(&CellPoints::new(&ds, &rows), &dirs).unwrap();
        let expect = brute_force_best_cut(&ds, &rows, &dirs);
        match (got, expect) {
            (None, None) => {}
            (Some(g), Some((d, z, v))) => {
                assert_eq!(g.cut.direction, d, "case {case}: direction mismatch");
                assert_eq!(g.cut.position, z, "case {case}: position mismatch");
                let gap = (g.criterion_value - v).abs();
                worst_gap = worst_gap.max(gap);
                assert!(gap <= 1e-12, "case {case}: criterion gap {gap}");
            }
            (g, e) => panic!("case {case}: presence mismatch {g:?} vs {e:?}"),
        }
    }
    let elapsed = t0.elapsed();
    verdict(
        1,
        "split-oracle equivalence on 1000 random cells",
        elapsed.as_secs() < 30,
        &format!("worst criterion gap {worst_gap:.2e}, elapsed {elapsed:?}"),
    );
}

/// Straight-line re-implementation of the growth protocol: explicit level
/// vectors, naive exhaustive cut search, no shared tree code. Only the mtry
/// draw is shared so both sides read the same random stream.
mod replay {
    use super::brute_force_best_cut;
    use subforest::dataset::Dataset;
    use subforest::splitter;

    pub struct Node {
        pub lower: Vec<f64>,
        pub upper: Vec<f64>,
        pub rows: Vec<usize>,
        pub depth: usize,
        pub cut: Option<(usize, f64)>,
        pub children: Option<(usize, usize)>,
        pub mean: f64,
    }

    pub fn grow(
        ds: &Dataset,
        subsample: Vec<usize>,
        t_n: usize,
        mtry: usize,
        rng: &mut rand_chacha::ChaCha8Rng,
    ) -> Vec<Node> {
        let p = ds.p();
        let mut nodes = vec![Node {
            lower: vec![0.0; p],
            upper: vec![1.0; p],
            rows: subsample,
            depth: 0,
            cut: None,
            children: None,
            mean: 0.0,
        }];
        let mut level: Vec<usize> = vec![0];
        let mut next_level: Vec<usize> = Vec::new();
        let mut n_nodes = 1usize;
        let mut split_made_this_pass = false;

        while n_nodes < t_n {
            if level.is_empty() {
                if !split_made_this_pass {
                    break;
                }
                level = std::mem::take(&mut next_level);
                split_made_this_pass = false;
                continue;
            }
            let idx = level.remove(0);
            if nodes[idx].rows.len() == 1 {
                next_level.push(idx);
                continue;
            }
            let dirs = splitter::draw_mtry(p, mtry, rng).unwrap();
            let Some((dir, z, _)) = brute_force_best_cut(ds, &nodes[idx].rows, &dirs) else {
                next_level.push(idx);
                continue;
            };
            let (mut left_rows, mut right_rows) = (Vec::new(), Vec::new());
            for &i in &nodes[idx].rows {
                if ds.row(i)[dir] < z {
                    left_rows.push(i);
                } else {
                    right_rows.push(i);
                }
            }
            let mut left = Node {
                lower: nodes[idx].lower.clone(),
                upper: nodes[idx].upper.clone(),
                rows: left_rows,
                depth: nodes[idx].depth + 1,
                cut: None,
                children: None,
                mean: 0.0,
            };
            left.upper[dir] = z;
            let mut right = Node {
                lower: nodes[idx].lower.clone(),
                upper: nodes[idx].upper.clone(),
                rows: right_rows,
                depth: nodes[idx].depth + 1,
                cut: None,
                children: None,
                mean: 0.0,
            };
            right.lower[dir] = z;
            let li = nodes.len();
            nodes.push(left);
            let ri = nodes.len();
            nodes.push(right);
            nodes[idx].cut = Some((dir, z));
            nodes[idx].children = Some((li, ri));
            next_level.push(li);
            next_level.push(ri);
            n_nodes += 1;
            split_made_this_pass = true;
        }

        for node in nodes.iter_mut() {
            if node.children.is_none() && !node.rows.is_empty() {
                node.mean =
                    node.rows.iter().map(|&i| ds.response(i)).sum::<f64>() / node.rows.len() as f64;
            }
        }
        nodes
    }
}

#[test]
fn c02_growth_protocol_replay() {
    let t0 = Instant::now();
    for case in 0..100u64 {
        let mut gen = rng::stream(31_000 + case, 0);
        let p = gen.gen_range(1..=4usize);
        let n = gen.gen_range(5..=60usize);
        let quantize = case % 4 == 0; // duplicated coordinates every 4th case
        let mut features = Vec::with_capacity(n * p);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            for _ in 0..p {
                let x: f64 = gen.gen();
                features.push(if quantize { (x * 8.0).floor() / 8.0 } else { x });
            }
            ys.push(gen.gen::<f64>() * 4.0 - 2.0);
        }
        let ds = Dataset::new(n, p, features, ys).unwrap();
        let a_n = gen.gen_range(1..=n);
        let mut subsample = rand::seq::index::sample(&mut gen, n, a_n).into_vec();
        subsample.sort_unstable();
        let t_n = gen.gen_range(1..=a_n);
        let mtry = gen.gen_range(1..=p);

        let mut rng_engine = rng::stream(77_000 + case, 16);
        let engine =
            tree::grow(&ds, subsample.clone(), t_n, mtry, &mut rng_engine).unwrap();
        let mut rng_replay = rng::stream(77_000 + case, 16);
        let oracle_nodes = replay::grow(&ds, subsample, t_n, mtry, &mut rng_replay);

        assert_eq!(engine.nodes().len(), oracle_nodes.len(), "case {case}: node count");
        for (i, (en, on)) in engine.nodes().iter().zip(&oracle_nodes).enumerate() {
            assert_eq!(en.cell.lower, on.lower, "case {case} node {i}: lower bounds");
            assert_eq!(en.cell.upper, on.upper, "case {case} node {i}: upper bounds");
            assert_eq!(en.depth, on.depth, "case {case} node {i}: depth");
            assert_eq!(en.points, on.rows, "case {case} node {i}: point sets");
            assert_eq!(en.children, on.children, "case {case} node {i}: children");
            match (en.cut, on.cut) {
                (None, None) => assert_eq!(en.leaf_mean, on.mean, "case {case} node {i}: mean"),
                (Some(cut), Some((d, z))) => {
                    assert_eq!(cut.direction, d, "case {case} node {i}: cut direction");
                    assert_eq!(cut.position, z, "case {case} node {i}: cut position");
                }
                (a, b) => panic!("case {case} node {i}: cut presence {a:?} vs {b:?}"),
            }
        }
    }
    let elapsed = t0.elapsed();
    verdict(
        2,
        "growth protocol replay on 100 fixed-seed instances",
        elapsed.as_secs() < 30,
        &format!("node-for-node identical, elapsed {elapsed:?}"),
    );
}

#[test]
fn c03_interpolation_when_fully_grown_on_the_full_sample() {
    let model = consistency_model();
    let n = 300;
    let ds = Dataset::sample(&model, n, 3003).unwrap();
    let forest = forest::fit(
        &ds,
        ForestParams { trees: 25, mtry: 1, a_n: n, t_n: n, seed: 404 },
    )
    .unwrap();
    let mut worst = 0.0f64;
    for i in 0..n {
        let gap = (forest.predict(ds.row(i)).unwrap() - ds.response(i)).abs();
        worst = worst.max(gap);
    }
    verdict(
        3,
        "training-point interpolation with singleton leaves",
        worst <= 1e-12,
        &format!("worst |prediction - response| = {worst:.2e} over {n} points"),
    );
}

#[test]
fn c04_connection_weight_identities() {
    let t0 = Instant::now();
    let model = consistency_model();
    let n = 500;
    let a_n = 50; // a_n / n = 0.1
    let ds = Dataset::sample(&model, n, 911).unwrap();
    let forest = forest::fit(
        &ds,
        ForestParams { trees: 10_000, mtry: 1, a_n, t_n: a_n, seed: 2024 },
    )
    .unwrap();

    let m = 10_000f64;
    let mut queries = rng::stream(5150, 0);
    let mut worst_sum_gap = 0.0f64;
    let mut worst_excess = f64::NEG_INFINITY;
    for _ in 0..100 {
        let x: Vec<f64> = (0..2).map(|_| queries.gen::<f64>()).collect();
        let w = forest.connection_weights(&x).unwrap();
        worst_sum_gap = worst_sum_gap.max((w.sum() - 1.0).abs());
        let max_w = w.max();
        let se = (max_w * (1.0 - max_w) / m).sqrt();
        worst_excess = worst_excess.max(max_w - (a_n as f64 / n as f64 + 3.0 * se));
    }
    let elapsed = t0.elapsed();
    verdict(
        4,
        "connection weights sum to one and respect the subsampling bound",
        worst_sum_gap <= 1e-12 && worst_excess <= 0.0 && elapsed.as_secs() < 120,
        &format!(
            "worst |sum - 1| = {worst_sum_gap:.2e}, worst (max_w - bound) = {worst_excess:.3e}, elapsed {elapsed:?}"
        ),
    );
}

#[test]
fn c05_theoretical_cut_oracle_for_the_linear_model() {
    let model =
        AdditiveModel::new(1, 1, 0.0, vec![Component::Linear { slope: 1.0, intercept: 0.0 }])
            .unwrap();
    let cell = Cell::unit(1);

    let split = oracle::best_theoretical_cut(&model, &cell, &[0]).unwrap();
    let z_gap = (split.cut.position - 0.5).abs();

    let closed_form = |z: f64| 1.0 / 12.0 - z.powi(3) / 12.0 - (1.0 - z).powi(3) / 12.0;
    let mut worst = 0.0f64;
    for i in 0..=100 {
        let z = 0.005 + 0.99 * i as f64 / 100.0;
        let got =
            oracle::theoretical_criterion(&model, &cell, &Cut { direction: 0, position: z })
                .unwrap();
        worst = worst.max((got - closed_form(z)).abs());
    }
    verdict(
        5,
        "theoretical cut oracle matches the closed form",
        z_gap <= 1e-6 && worst <= 1e-9,
        &format!("|z* - 0.5| = {z_gap:.2e}, worst criterion gap = {worst:.2e} on a 101-point grid"),
    );
}

fn check_mse_trend(id: u8, name: &str, schedule: RegimeSchedule, budget_s: u64) {
    let t0 = Instant::now();
    let out = run_consistency(
        &consistency_model(),
        &schedule,
        ForestSettings { trees: 100, mtry: None },
        8,
        2000,
        42,
    )
    .unwrap();
    let series = aggregated_series(&out.records, "mse_mean");
    assert_eq!(series.len(), 3);
    let mut pass = true;
    let mut detail = String::new();
    for w in series.windows(2) {
        let drop = w[0].1 - w[1].1;
        let margin = 2.0 * combined_se(w[0].2, w[1].2);
        pass &= drop > margin;
        detail.push_str(&format!(
            "mse({}) - mse({}) = {:.3e} vs 2se {:.3e}; ",
            w[0].0, w[1].0, drop, margin
        ));
    }
    let elapsed = t0.elapsed();
    pass &= elapsed.as_secs() < budget_s;
    detail.push_str(&format!("elapsed {elapsed:?}"));
    verdict(id, name, pass, &detail);
}

#[test]
fn c06_consistency_trend_shallow_trees() {
    check_mse_trend(
        6,
        "MSE decays with shallow trees on the full sample",
        RegimeSchedule::shallow(vec![500, 2000, 8000]),
        600,
    );
}

#[test]
fn c07_consistency_trend_fully_grown_trees() {
    check_mse_trend(
        7,
        "MSE decays with fully grown trees on vanishing subsamples",
        RegimeSchedule::fully_grown(vec![500, 2000, 8000]),
        600,
    );
}

#[test]
fn c08_sparsity_adaptation_of_cut_directions() {
    let t0 = Instant::now();
    // Strong signals on the first two of six coordinates; the noise level
    // sits in the band where n = 1000 still errs visibly and n = 4000 is
    // nearly saturated. With the full sample per tree and mtry = p the
    // trees carry no randomness, so one tree per replicate and many
    // replicates is the efficient design.
    let model = AdditiveModel::new(
        6,
        2,
        24.0,
        vec![
            Component::Linear { slope: 10.0, intercept: 0.0 },
            Component::Polynomial { coeffs: vec![0.0, 0.0, 10.0] },
        ],
    )
    .unwrap();
    let out = run_sparsity(
        &model,
        &RegimeSchedule::shallow(vec![1000, 4000]),
        2,
        ForestSettings { trees: 1, mtry: None }, // defaults to mtry = p here
        48,
        64,
        42,
    )
    .unwrap();
    let pooled = aggregated_series(&out.records, "informative_fraction");
    assert_eq!(pooled.len(), 2);
    let (f_small, f_large) = (pooled[0].1, pooled[1].1);
    let elapsed = t0.elapsed();
    verdict(
        8,
        "early cuts concentrate on the informative coordinates",
        f_large >= 0.9 && f_large > f_small && elapsed.as_secs() < 300,
        &format!(
            "fraction(n=1000) = {f_small:.4}, fraction(n=4000) = {f_large:.4}, elapsed {elapsed:?}"
        ),
    );
}

#[test]
fn c09_cell_variation_decay() {
    let t0 = Instant::now();
    let out = run_cell_variation(
        &consistency_model(),
        &RegimeSchedule::fully_grown(vec![500, 2000, 8000]),
        ForestSettings { trees: 50, mtry: None },
        4,
        200,
        &[0.5],
        42,
    )
    .unwrap();
    let medians = aggregated_series(&out.records, "delta_median");
    let probs = aggregated_series(&out.records, "p_delta_le_0.5");
    let medians_decreasing = medians.windows(2).all(|w| w[1].1 < w[0].1);
    let probs_nondecreasing = probs.windows(2).all(|w| w[1].1 >= w[0].1);
    let elapsed = t0.elapsed();
    verdict(
        9,
        "within-cell variation of the regression function decays",
        medians_decreasing && probs_nondecreasing && elapsed.as_secs() < 600,
        &format!(
            "median delta = {:?}, P[delta <= 0.5] = {:?}, elapsed {elapsed:?}",
            medians.iter().map(|r| (r.0, (r.1 * 1e4).round() / 1e4)).collect::<Vec<_>>(),
            probs.iter().map(|r| (r.0, (r.1 * 1e4).round() / 1e4)).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn c10_empirical_cuts_approach_the_theoretical_cut() {
    let t0 = Instant::now();
    let model =
        AdditiveModel::new(1, 1, 0.0, vec![Component::Linear { slope: 1.0, intercept: 0.0 }])
            .unwrap();
    let out = run_cut_distance(
        &model,
        &RegimeSchedule::shallow(vec![500, 2000, 8000]),
        1,
        ForestSettings { trees: 1, mtry: None },
        31,
        1,
        42,
    )
    .unwrap();
    let medians = aggregated_series(&out.records, "cut_distance_median");
    let decreasing = medians.windows(2).all(|w| w[1].1 < w[0].1);
    let elapsed = t0.elapsed();
    verdict(
        10,
        "median root-cut distance to the theoretical cut decays",
        decreasing && elapsed.as_secs() < 300,
        &format!(
            "medians |z - 0.5| = {:?}, elapsed {elapsed:?}",
            medians.iter().map(|r| (r.0, (r.1 * 1e6).round() / 1e6)).collect::<Vec<_>>()
        ),
    );
}

#[test]
fn c11_determinism_across_reruns_and_thread_counts() {
    let schedule = RegimeSchedule::fully_grown(vec![60, 120]);
    let run_once = || {
        run_cell_variation(
            &consistency_model(),
            &schedule,
            ForestSettings { trees: 6, mtry: None },
            3,
            25,
            &[0.5],
            1234,
        )
        .unwrap()
    };
    let baseline = metrics_csv(&run_once().records);
    let rerun = metrics_csv(&run_once().records);

    let csv_in_pool = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| metrics_csv(&run_once().records))
    };
    let single = csv_in_pool(1);
    let multi = csv_in_pool(4);

    let consistency_csv = || {
        let out = run_consistency(
            &consistency_model(),
            &RegimeSchedule::shallow(vec![50, 100]),
            ForestSettings { trees: 4, mtry: None },
            2,
            1000,
            77,
        )
        .unwrap();
        metrics_csv(&out.records)
    };
    let cons_a = consistency_csv();
    let cons_b = {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        pool.install(consistency_csv)
    };

    verdict(
        11,
        "metrics files are byte-identical across reruns and thread counts",
        baseline == rerun && baseline == single && baseline == multi && cons_a == cons_b,
        &format!("{} bytes compared equal across 4 runs", baseline.len()),
    );
}

/// The empirical best cut is a plain function of the data: reuse of a seed
/// elsewhere cannot change it. Guards the suite's seed hygiene.
#[test]
fn engine_and_brute_force_share_no_state() {
    let ds = Dataset::sample(&consistency_model(), 40, 5).unwrap();
    let rows: Vec<usize> = (0..40).collect();
    let before = splitter::best_cut(&CellPoints::new(&ds, &rows), &[0, 1]).unwrap();
    let _ = brute_force_best_cut(&ds, &rows, &[0, 1]);
    let after = splitter::best_cut(&CellPoints::new(&ds, &rows), &[0, 1]).unwrap();
    assert_eq!(
        before.as_ref().map(|s: &SplitEvaluation| (s.cut.direction, s.cut.position)),
        after.as_ref().map(|s: &SplitEvaluation| (s.cut.direction, s.cut.position))
    );
}
