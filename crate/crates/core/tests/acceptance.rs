//! Acceptance suite. Every test prints one `[criterion N] PASS|FAIL` line
//! and then asserts the same verdict.

mod common;

use std::collections::HashMap;
use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use bh_plasticity::distributed::{distributed_connectivity_update, partition};
use bh_plasticity::geometry::{
    required_m, run_ac_trials, subdivision_guarantee, AcTrialConfig, CentroidPlacement, Theta, SQRT_3,
};
use bh_plasticity::harness::{compare_with_monolithic, expected_sampling_tv, measure, proposal_multiset_diff, ScalingReport};
use bh_plasticity::octree::{ElementKind, NeuronId, Octree, Vacancy};
use bh_plasticity::oracle::naive_distribution;
use bh_plasticity::plasticity::{
    candidate_distribution, connectivity_update, exact_target_distribution, find_target, DescentStats, SearchConfig,
    DEFAULT_KERNEL_SIGMA,
};
use bh_plasticity::population::{uniform_cube, Population, VacancyProfile};
use bh_plasticity::rng::KeyedRng;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use common::{check_octree, cube, min_max_norm_separation, random_neurons, same_summaries, LAYOUTS};

fn verdict(criterion: u32, title: &str, ok: bool, detail: &str) {
    let line = format!("[criterion {criterion}] {} {title}: {detail}\n", if ok { "PASS" } else { "FAIL" });
    // Written to the handle directly so the line survives output capture.
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(ok, "criterion {criterion} ({title}) failed: {detail}");
}

fn theta(v: f64) -> Theta {
    Theta::new(v).unwrap()
}

fn config(t: f64, seed: u64) -> SearchConfig {
    SearchConfig::new(theta(t), DEFAULT_KERNEL_SIGMA, seed).unwrap()
}

#[test]
fn criterion_1_subdivision_table() {
    let start = Instant::now();
    let published = [
        (0.1, 1.20949, 1, 8),
        (0.2, 1.53001, 1, 8),
        (0.3, 2.08166, 2, 64),
        (0.4, 3.25542, 2, 64),
        (0.5, 7.46410, 3, 512),
    ];
    let mut rows = Vec::new();
    let mut ok = true;
    for (t, m_ref, depth_ref, nodes_ref) in published {
        let m = required_m(theta(t)).unwrap();
        let g = subdivision_guarantee(theta(t)).unwrap();
        ok &= (m - m_ref).abs() <= 1e-5 && g.depth == depth_ref && g.node_bound == nodes_ref;
        rows.push(format!("m({t})={m:.5} d={} nodes={}", g.depth, g.node_bound));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(1);
    verdict(1, "subdivision table", ok, &format!("{} in {elapsed:?}", rows.join(", ")));
}

#[test]
fn criterion_2_child_acceptance() {
    let start = Instant::now();
    let trials = 1_000_000;
    let mut summary = Vec::new();
    let mut ok = true;
    for t in [0.05, 0.15, 0.25, 1.0 / (2.0 * SQRT_3)] {
        let r = run_ac_trials(&AcTrialConfig::new(theta(t), trials, 2024, CentroidPlacement::Anywhere));
        ok &= r.violations == 0 && r.trials >= trials;
        summary.push(format!("anywhere {t:.4}: {}/{}", r.violations, r.trials));
        if let Some(c) = r.first {
            summary.push(format!("counterexample {c}"));
        }
    }
    for t in [0.5, 0.9, 1.0] {
        let r = run_ac_trials(&AcTrialConfig::centered(t, trials, 2024).unwrap());
        ok &= r.violations == 0 && r.trials >= trials;
        summary.push(format!("centered {t}: {}/{}", r.violations, r.trials));
        if let Some(c) = r.first {
            summary.push(format!("counterexample {c}"));
        }
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(60);
    verdict(2, "child acceptance", ok, &format!("violations/trials {} in {elapsed:.1?}", summary.join(", ")));
}

#[test]
fn criterion_3_guaranteed_depth() {
    let mut summary = Vec::new();
    let mut ok = true;
    for t in [0.3, 0.4, 0.5] {
        let depth = subdivision_guarantee(theta(t)).unwrap().depth;
        let mut cfg = AcTrialConfig::new(theta(t), 100_000, 77, CentroidPlacement::Anywhere);
        cfg.depth = depth;
        let r = run_ac_trials(&cfg);
        ok &= r.violations == 0 && r.trials >= 100_000;
        // One level less is not enough; shows the trials reach the boundary.
        cfg.depth = depth - 1;
        let shallower = run_ac_trials(&cfg).violations;
        summary.push(format!("theta {t} depth {depth}: {} violations (depth {}: {shallower})", r.violations, depth - 1));
    }
    verdict(3, "descendants at guaranteed depth", ok, &summary.join(", "));
}

struct Sweep {
    quarter: ScalingReport,
    point_four: ScalingReport,
    top_size: Duration,
}

const SWEEP_EXPONENTS: std::ops::RangeInclusive<u32> = 10..=17;

fn sweep() -> &'static Sweep {
    static SWEEP: OnceLock<Sweep> = OnceLock::new();
    SWEEP.get_or_init(|| {
        let profile = VacancyProfile::default();
        let run = |t: f64| {
            let mut top = Duration::ZERO;
            let rows = SWEEP_EXPONENTS
                .map(|k| {
                    let pop = uniform_cube(1 << k, 1000.0, profile, 1).unwrap();
                    let start = Instant::now();
                    let row = measure(pop, theta(t), DEFAULT_KERNEL_SIGMA, 1, 1, &profile).unwrap();
                    top = start.elapsed();
                    row
                })
                .collect();
            (ScalingReport::new(rows), top)
        };
        let (quarter, top_size) = run(0.25);
        let (point_four, _) = run(0.4);
        Sweep {
            quarter,
            point_four,
            top_size,
        }
    })
}

#[test]
fn criterion_4_constant_subsequent_work() {
    let s = sweep();
    let mut ok = true;
    let mut means = Vec::new();
    for r in &s.quarter.rows {
        ok &= r.stats.max_subsequent_pushes == 0 && r.stats.max_subsequent_inspected <= 8;
        means.push(format!("2^{}:{:.3}", r.n.trailing_zeros(), r.mean_subsequent()));
    }
    let bound_04 = s.point_four.rows.iter().map(|r| r.stats.max_subsequent_inspected).max().unwrap();
    ok &= bound_04 <= 64;
    let max_pushes = s.quarter.rows.iter().map(|r| r.stats.max_subsequent_pushes).max().unwrap();
    let max_inspected = s.quarter.rows.iter().map(|r| r.stats.max_subsequent_inspected).max().unwrap();
    let slope = s.quarter.fits[0].subsequent_slope;
    ok &= slope.abs() <= 0.05;
    ok &= s.top_size < Duration::from_secs(600);
    verdict(
        4,
        "constant subsequent work",
        ok,
        &format!(
            "theta 0.25: max pushes {max_pushes}, max inspected {max_inspected} (<= 8); theta 0.4: max inspected {bound_04} (<= 64); \
             mean subsequent {}; slope {slope:.4} per doubling (limit 0.05); top size {:.1?}",
            means.join(" "),
            s.top_size
        ),
    );
}

#[test]
fn criterion_5_n_log_n_signature() {
    let s = sweep();
    let fit = &s.quarter.fits[0];
    let per_nlog2n: Vec<f64> = s.quarter.rows.iter().map(|r| r.work_per_nlog2n()).collect();
    let decreasing = per_nlog2n.windows(2).all(|w| w[1] < w[0]);
    let ok = fit.nlogn_spread <= 1.25 && decreasing;
    let ratios: Vec<String> = s.quarter.rows.iter().map(|r| format!("{:.1}", r.work_per_nlogn())).collect();
    let sq: Vec<String> = per_nlog2n.iter().map(|v| format!("{v:.2}")).collect();
    verdict(
        5,
        "n log n work signature",
        ok,
        &format!(
            "W/(n log n) = [{}], max/min {:.3} (limit 1.25); W/(n log^2 n) = [{}], decreasing: {decreasing}; \
             W/n = {:.0} + {:.1} log2 n (R^2 {:.4})",
            ratios.join(", "),
            fit.nlogn_spread,
            sq.join(", "),
            fit.work_intercept,
            fit.work_slope,
            fit.work_r_squared
        ),
    );
}

fn oracle_population(rng: &mut ChaCha8Rng, k: usize) -> Population {
    let n = rng.random_range(2..=1000);
    let neurons = random_neurons(rng, n, 1000.0, LAYOUTS[k % LAYOUTS.len()], 3);
    Population::new(cube(1000.0), neurons).unwrap()
}

#[test]
fn criterion_6_oracle_exactness() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let mut worst: f64 = 0.0;
    let mut structural = 0;
    for k in 0..100 {
        let pop = oracle_population(&mut rng, k);
        let tree = Octree::build(pop.neurons(), pop.bounds()).unwrap();
        let searcher = pop.neurons()[rng.random_range(0..pop.len())];
        let cfg = config(0.25, k as u64).with_oracle_mode(true);
        let naive = naive_distribution(&searcher, pop.neurons(), ElementKind::Dendrite, DEFAULT_KERNEL_SIGMA);
        let mut got: HashMap<NeuronId, f64> = HashMap::new();
        for (summary, p) in candidate_distribution(&tree, &searcher, &cfg).unwrap() {
            match summary.leaf {
                Some(id) => *got.entry(id).or_insert(0.0) += p,
                None => structural += 1,
            }
        }
        for (id, p) in &naive.probabilities {
            worst = worst.max((p - got.get(id).copied().unwrap_or(0.0)).abs());
        }
        for (id, p) in &got {
            worst = worst.max((p - naive.get(*id)).abs());
        }
    }

    let pop = uniform_cube(1000, 1000.0, VacancyProfile::default(), 7).unwrap();
    let tree = Octree::build(pop.neurons(), pop.bounds()).unwrap();
    let searcher = pop.neurons()[0];
    let cfg = config(0.25, 7);
    let naive = naive_distribution(&searcher, pop.neurons(), ElementKind::Dendrite, DEFAULT_KERNEL_SIGMA);
    let exact = exact_target_distribution(&tree, &searcher, &cfg).unwrap();
    let exact_tv = naive.total_variation(&exact);

    let draws = 100_000u32;
    let keys = KeyedRng::new(cfg.rng_seed, 0);
    let mut view = &tree;
    let mut stats = DescentStats::default();
    let mut counts: HashMap<NeuronId, f64> = HashMap::new();
    for i in 0..draws {
        if let Some(p) = find_target(&mut view, &searcher, &cfg, &keys, i, &mut stats).unwrap() {
            *counts.entry(p.target).or_insert(0.0) += 1.0 / f64::from(draws);
        }
    }
    let empirical_tv = naive.total_variation(&counts);
    let noise = expected_sampling_tv(exact.values().copied(), u64::from(draws));

    let ok = worst <= 1e-12 && structural == 0 && exact_tv <= 0.02 && empirical_tv <= 0.02 + noise;
    verdict(
        6,
        "oracle exactness",
        ok,
        &format!(
            "oracle mode max |p - naive| {worst:.2e} over 100 populations; theta 0.25 n=1000: exact TV {exact_tv:.5}, \
             empirical TV over {draws} draws {empirical_tv:.5} (0.02 + sampling noise {noise:.5})"
        ),
    );
}

#[test]
fn criterion_7_distributed_equivalence() {
    let pop = uniform_cube(1 << 12, 1000.0, VacancyProfile::default(), 3).unwrap();
    let cfg = config(0.25, 99);
    let mut tree = Octree::build(pop.neurons(), pop.bounds()).unwrap();
    let mut reference = connectivity_update(&pop, &mut tree, &cfg, 0).unwrap().proposals;
    reference.sort_unstable();

    let mut ok = true;
    let mut lines = Vec::new();
    for p in [1usize, 8, 64] {
        let mut ranks = partition(pop.neurons(), pop.bounds(), p).unwrap();
        let out = distributed_connectivity_update(&mut ranks, pop.bounds(), &cfg, 0).unwrap();
        let mut proposals = out.proposals.clone();
        proposals.sort_unstable();
        let diff = proposal_multiset_diff(&reference, &proposals);
        let summaries = compare_with_monolithic(&ranks, &tree);
        let p64 = p as u64;
        let exchange_ok = out.exchange.broadcast_messages == p64 && out.exchange.pairwise_messages == p64 * (p64 - 1);
        ok &= diff.is_empty() && summaries.mismatches.is_empty() && exchange_ok;
        ok &= p == 1 || summaries.checked > 0;
        lines.push(format!(
            "p={p}: {} proposals, {} differing, {} summaries checked, {} mismatched, broadcast {} pairwise {} ({} per rank)",
            proposals.len(),
            diff.len(),
            summaries.checked,
            summaries.mismatches.len(),
            out.exchange.broadcast_messages,
            out.exchange.pairwise_messages,
            p - 1
        ));
        if let Some(m) = summaries.mismatches.first() {
            lines.push(m.clone());
        }
    }
    verdict(7, "distributed equivalence", ok, &lines.join("; "));
}

#[test]
fn criterion_8_per_rank_work() {
    let pop = uniform_cube(1 << 15, 1000.0, VacancyProfile::default(), 8).unwrap();
    let cfg = config(0.25, 8);
    let mut means = Vec::new();
    let mut lines = Vec::new();
    for p in [1usize, 2, 4, 8] {
        let mut ranks = partition(pop.neurons(), pop.bounds(), p).unwrap();
        let out = distributed_connectivity_update(&mut ranks, pop.bounds(), &cfg, 0).unwrap();
        let work: Vec<f64> = out.per_rank.iter().map(|c| c.local_work as f64).collect();
        let mean = work.iter().sum::<f64>() / p as f64;
        let max = work.iter().copied().fold(0.0, f64::max);
        lines.push(format!("p={p}: mean {mean:.0} max/mean {:.3}", max / mean));
        means.push(mean);
    }
    let ratios: Vec<f64> = means.windows(2).map(|w| w[1] / w[0]).collect();
    let ok = ratios.iter().all(|r| (r / 0.5 - 1.0).abs() <= 0.2);
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.4}")).collect();
    verdict(
        8,
        "per-rank work decomposition",
        ok,
        &format!("{}; doubling ratios [{}] (0.5 within 20%)", lines.join(", "), shown.join(", ")),
    );
}

#[test]
fn criterion_9_structural_invariants() {
    let failures: Vec<String> = (0..1000u64)
        .into_par_iter()
        .filter_map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(9000 + k);
            let n = if k == 0 { 10_000 } else { rng.random_range(1..=10_000) };
            let layout = LAYOUTS[k as usize % LAYOUTS.len()];
            let mut neurons = random_neurons(&mut rng, n, 1000.0, layout, 3);
            let bounds = cube(1000.0);
            let mut run = || -> Result<(), String> {
                let mut tree = Octree::build(&neurons, bounds).map_err(|e| e.to_string())?;
                check_octree(&tree, &neurons)?;
                if (2..=2000).contains(&n) {
                    let limit = (1000.0 / min_max_norm_separation(&neurons)).log2().ceil();
                    if f64::from(tree.height()) > limit {
                        return Err(format!("height {} above {limit}", tree.height()));
                    }
                }
                for nr in neurons.iter_mut() {
                    nr.vacant = Vacancy::new(rng.random_range(0..=4), rng.random_range(0..=4));
                }
                tree.update_leaves_and_subtree(&neurons).map_err(|e| e.to_string())?;
                check_octree(&tree, &neurons)?;
                let rebuilt = Octree::build(&neurons, bounds).map_err(|e| e.to_string())?;
                same_summaries(&tree, &rebuilt, 1e-12)
            };
            run().err().map(|e| format!("population {k} (n={n}, {layout:?}): {e}"))
        })
        .collect();
    let detail = match failures.first() {
        None => "1000 populations up to n=10^4: weights, centroids, leaves, rebuild = update".to_string(),
        Some(f) => format!("{} failing populations, first: {f}", failures.len()),
    };
    verdict(9, "structural invariants", failures.is_empty(), &detail);
}
