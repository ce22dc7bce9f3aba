use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::BufWriter;

use rayon::prelude::*;
use serde::Serialize;

use crate::distributed::{
    counter_rows, distributed_connectivity_update, distributed_resolve, end_of_step_discard, partition, reset_counters,
    ExchangeReport, RankCounterRow, RankState, UpperChild,
};
use crate::error::Result;
use crate::geometry::{
    required_m, run_ac_trials, subdivision_guarantee, AcTrialConfig, Box3, CentroidPlacement, Counterexample, Theta,
    THETA_CHILD_GUARANTEE,
};
use crate::octree::{ElementKind, NeuronId, NodeSummary, Octree};
use crate::oracle::{naive_distribution, CandidateDistribution};
use crate::plasticity::{
    candidate_distribution, connectivity_update, exact_target_distribution, find_target, resolve_proposals,
    DescentStats, SearchConfig, SynapseProposal, SEARCH_KIND,
};
use crate::population::{uniform_cube, Population};
use crate::rng::KeyedRng;

use super::config::{ExperimentSpec, PopulationSource};
use super::scaling::{measure, ScalingReport};
use super::{all_passed, write_checks, Check};

/// `(theta, m, log2 m, depth, node bound)` as published.
pub const TABLE_1: [(f64, f64, f64, u32, u64); 5] = [
    (0.1, 1.20949, 0.274399, 1, 8),
    (0.2, 1.53001, 0.613541, 1, 8),
    (0.3, 2.08166, 1.057734, 2, 64),
    (0.4, 3.25542, 1.702844, 2, 64),
    (0.5, 7.46410, 2.899968, 3, 512),
];

const TABLE_TOLERANCE: f64 = 1e-5;

fn create(path: &std::path::Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

#[derive(Debug, Clone, Default)]
pub struct TheoremReport {
    pub checks: Vec<Check>,
    pub counterexamples: Vec<Counterexample>,
}

impl TheoremReport {
    pub fn passed(&self) -> bool {
        all_passed(&self.checks)
    }
}

impl fmt::Display for TheoremReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_checks(f, &self.checks)?;
        for c in &self.counterexamples {
            writeln!(f, "counterexample: {c}")?;
        }
        Ok(())
    }
}

/// Table values plus the randomized geometry suites. `inject_fault` keeps
/// descendant sides unhalved, which must surface a counterexample.
pub fn cmd_verify_theorems(trials: u64, seed: u64, inject_fault: bool) -> Result<TheoremReport> {
    let mut report = TheoremReport::default();

    for (t, m_ref, log_ref, depth_ref, nodes_ref) in TABLE_1 {
        let theta = Theta::new(t)?;
        let m = required_m(theta)?;
        let g = subdivision_guarantee(theta)?;
        let ok = (m - m_ref).abs() <= TABLE_TOLERANCE
            && (m.log2() - log_ref).abs() <= TABLE_TOLERANCE
            && g.depth == depth_ref
            && g.node_bound == nodes_ref;
        report.checks.push(Check::new(
            format!("table theta={t}"),
            ok,
            format!(
                "m={m:.6} log2 m={:.6} {} ({}) expected m={m_ref} {depth_ref} ({nodes_ref})",
                m.log2(),
                g.generation_name(),
                g.node_bound
            ),
        ));
    }

    let mut suites = Vec::new();
    for t in [0.05, 0.15, 0.25, THETA_CHILD_GUARANTEE] {
        let mut cfg = AcTrialConfig::new(Theta::new(t)?, trials, seed, CentroidPlacement::Anywhere);
        cfg.skip_halving = inject_fault;
        suites.push(("child acceptance, centroid anywhere", cfg));
    }
    for t in [0.5, 0.9, 1.0] {
        let mut cfg = AcTrialConfig::centered(t, trials, seed)?;
        cfg.skip_halving = inject_fault;
        suites.push(("child acceptance, centered centroids", cfg));
    }
    for t in [0.3, 0.4, 0.5] {
        let theta = Theta::new(t)?;
        let mut cfg = AcTrialConfig::new(theta, (trials / 10).max(1), seed, CentroidPlacement::Anywhere);
        cfg.depth = subdivision_guarantee(theta)?.depth;
        cfg.skip_halving = inject_fault;
        suites.push(("descendants at guaranteed depth", cfg));
    }
    for (name, cfg) in suites {
        let r = run_ac_trials(&cfg);
        report.checks.push(Check::new(
            format!("{name} theta={} depth={}", cfg.theta, cfg.depth),
            r.violations == 0,
            format!("{} violations in {} trials", r.violations, r.trials),
        ));
        report.counterexamples.extend(r.first);
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct ScalingOutcome {
    pub report: ScalingReport,
    pub checks: Vec<Check>,
}

impl ScalingOutcome {
    pub fn passed(&self) -> bool {
        all_passed(&self.checks)
    }
}

impl fmt::Display for ScalingOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:>9} {:>6} {:>11} {:>9} {:>14} {:>10}", "n", "theta", "mean_first", "mean_sub", "total_work", "W/(nlogn)")?;
        for r in &self.report.rows {
            writeln!(
                f,
                "{:>9} {:>6} {:>11.2} {:>9.4} {:>14.0} {:>10.3}",
                r.n,
                r.theta,
                r.mean_first(),
                r.mean_subsequent(),
                r.total_work(),
                r.work_per_nlogn()
            )?;
        }
        for fit in &self.report.fits {
            writeln!(
                f,
                "theta={}: W/n = {:.2} + {:.2} log2 n (R^2 {:.4}); W/(n log2^2 n) spread {:.3}",
                fit.theta, fit.work_intercept, fit.work_slope, fit.work_r_squared, fit.nlog2n_spread
            )?;
        }
        write_checks(f, &self.checks)
    }
}

/// Measures every (theta, n) cell and writes `<name>.csv` and `<name>-fit.csv`.
pub fn cmd_scaling(spec: &ExperimentSpec) -> Result<ScalingOutcome> {
    let populations = spec.populations()?;
    let mut rows = Vec::new();
    for &theta in &spec.thetas {
        for pop in &populations {
            rows.push(measure(pop.clone(), theta, spec.sigma, spec.seed, spec.steps, &spec.profile)?);
        }
    }
    let report = ScalingReport::new(rows);
    report.write_csv(create(&spec.output_path(""))?)?;
    report.write_fit_csv(create(&spec.output_path("-fit"))?)?;
    let checks = report.checks();
    Ok(ScalingOutcome { report, checks })
}

/// Node summaries seen by the ranks compared with the monolithic tree.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SummaryComparison {
    pub checked: usize,
    pub mismatches: Vec<String>,
}

fn bbox_key(b: &Box3) -> [u64; 6] {
    let (lo, s) = (b.min_corner(), b.sides());
    [lo.x, lo.y, lo.z, s.x, s.y, s.z].map(f64::to_bits)
}

fn summary_difference(seen: &NodeSummary, reference: &NodeSummary) -> Option<String> {
    if seen.leaf != reference.leaf {
        return Some(format!("leaf {:?} vs {:?}", seen.leaf, reference.leaf));
    }
    for kind in ElementKind::ALL {
        let (a, b) = (seen.kinds[kind.index()], reference.kinds[kind.index()]);
        if a.weight != b.weight {
            return Some(format!("{kind:?} weight {} vs {}", a.weight, b.weight));
        }
        let close = match (a.centroid, b.centroid) {
            (None, None) => true,
            (Some(x), Some(y)) => (0..3).all(|i| (x.component(i) - y.component(i)).abs() <= 1e-9),
            _ => false,
        };
        if !close {
            return Some(format!("{kind:?} centroid {:?} vs {:?}", a.centroid, b.centroid));
        }
    }
    None
}

/// Every upper-tree node and every downloaded child summary held by the
/// ranks must equal the node with the same box in `reference`.
pub fn compare_with_monolithic(ranks: &[RankState], reference: &Octree) -> SummaryComparison {
    let index: HashMap<[u64; 6], &NodeSummary> = reference.nodes().iter().map(|n| (bbox_key(&n.summary.bbox), &n.summary)).collect();
    let mut out = SummaryComparison::default();
    let mut check = |rank: usize, what: &str, s: &NodeSummary| {
        out.checked += 1;
        let problem = match index.get(&bbox_key(&s.bbox)) {
            None => Some("no node with this box".to_string()),
            Some(r) => summary_difference(s, r),
        };
        if let Some(p) = problem {
            out.mismatches.push(format!("rank {rank} {what} {}: {p}", s.bbox.min_corner()));
        }
    };
    for r in ranks {
        if let Some(upper) = r.upper_tree() {
            for node in &upper.nodes {
                check(r.rank_id, "upper node", &node.summary);
                for c in &node.children {
                    if let UpperChild::Branch { summary, .. } = c {
                        check(r.rank_id, "branch root", summary);
                    }
                }
            }
        }
        for children in r.remote_cache().values() {
            for c in children {
                check(r.rank_id, "downloaded node", &c.summary);
            }
        }
    }
    out
}

/// Differences between two proposal multisets, one line per pair.
pub fn proposal_multiset_diff(reference: &[SynapseProposal], other: &[SynapseProposal]) -> Vec<String> {
    let mut counts: BTreeMap<SynapseProposal, (i64, i64)> = BTreeMap::new();
    for p in reference {
        counts.entry(*p).or_default().0 += 1;
    }
    for p in other {
        counts.entry(*p).or_default().1 += 1;
    }
    counts
        .into_iter()
        .filter(|(_, (a, b))| a != b)
        .map(|(p, (a, b))| format!("{} -> {}: reference {a}, distributed {b}", p.source, p.target))
        .collect()
}

#[derive(Debug, Clone)]
pub struct DistributedRun {
    pub p: usize,
    pub step: u64,
    pub proposals: usize,
    pub exchange: ExchangeReport,
    pub mean_local_work: f64,
    pub summaries: SummaryComparison,
    pub diff: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct DistributedReport {
    pub rows: Vec<RankCounterRow>,
    pub runs: Vec<DistributedRun>,
    pub checks: Vec<Check>,
}

impl DistributedReport {
    pub fn passed(&self) -> bool {
        all_passed(&self.checks)
    }
}

impl fmt::Display for DistributedReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.runs {
            writeln!(
                f,
                "p={} step={} proposals={} exchange pairwise={} broadcast={} upper_nodes={} mean local_work={:.1} summaries checked={}",
                r.p,
                r.step,
                r.proposals,
                r.exchange.pairwise_messages,
                r.exchange.broadcast_messages,
                r.exchange.upper_nodes,
                r.mean_local_work,
                r.summaries.checked
            )?;
            for line in r.diff.iter().take(20) {
                writeln!(f, "  diff {line}")?;
            }
            for line in r.summaries.mismatches.iter().take(20) {
                writeln!(f, "  mismatch {line}")?;
            }
        }
        write_checks(f, &self.checks)
    }
}

fn replenish_ranks(ranks: &mut [RankState], spec: &ExperimentSpec, step: u64) {
    let keys = KeyedRng::new(spec.seed, step);
    for r in ranks {
        for n in &mut r.local_neurons {
            let add = spec.profile.sample(&keys, n.id.0);
            n.vacant.axons += add.axons;
            n.vacant.dendrites += add.dendrites;
        }
    }
}

/// Runs every rank count in lockstep with a monolithic reference and writes
/// the per-rank counters to `<name>.csv`.
pub fn cmd_distributed(spec: &ExperimentSpec) -> Result<DistributedReport> {
    let mut population = spec.first_population()?;
    let bounds = population.bounds();
    let config = SearchConfig::new(spec.thetas[0], spec.sigma, spec.seed)?;
    let mut tree = Octree::build(population.neurons(), bounds)?;
    let mut rank_sets = Vec::new();
    let mut ranks_sorted = spec.ranks.clone();
    ranks_sorted.sort_unstable();
    ranks_sorted.dedup();
    for &p in &ranks_sorted {
        rank_sets.push(partition(population.neurons(), bounds, p)?);
    }

    let mut report = DistributedReport::default();
    for step in 0..spec.steps {
        let keys = KeyedRng::new(spec.seed, step);
        let mut reference = connectivity_update(&population, &mut tree, &config, step)?.proposals;
        reference.sort_unstable();
        let last = step + 1 == spec.steps;

        for ranks in &mut rank_sets {
            let p = ranks.len();
            let outcome = distributed_connectivity_update(ranks, bounds, &config, step)?;
            let mut proposals = outcome.proposals;
            proposals.sort_unstable();
            let summaries = compare_with_monolithic(ranks, &tree);
            let rows = counter_rows(ranks, step);
            let mean_local_work = rows.iter().map(|r| r.local_work as f64).sum::<f64>() / p as f64;
            report.rows.extend(rows);
            report.runs.push(DistributedRun {
                p,
                step,
                proposals: proposals.len(),
                exchange: outcome.exchange,
                mean_local_work,
                summaries,
                diff: proposal_multiset_diff(&reference, &proposals),
            });
            reset_counters(ranks);
            end_of_step_discard(ranks);
            if !last {
                distributed_resolve(ranks, &proposals, &keys);
                replenish_ranks(ranks, spec, step + 1);
            }
        }
        if !last {
            resolve_proposals(&reference, &mut population, &keys);
            population.replenish(&spec.profile, spec.seed, step + 1);
        }
    }

    let mut w = csv::Writer::from_writer(create(&spec.output_path(""))?);
    for r in &report.rows {
        w.serialize(r)?;
    }
    w.flush()?;

    for r in &report.runs {
        let tag = format!("p={} step={}", r.p, r.step);
        report.checks.push(Check::new(
            format!("identical proposals {tag}"),
            r.diff.is_empty(),
            format!("{} proposals, {} differing pairs", r.proposals, r.diff.len()),
        ));
        report.checks.push(Check::new(
            format!("summaries match monolithic tree {tag}"),
            r.summaries.mismatches.is_empty(),
            format!("{} checked, {} mismatched", r.summaries.checked, r.summaries.mismatches.len()),
        ));
        let p = r.p as u64;
        report.checks.push(Check::new(
            format!("exchange messages {tag}"),
            r.exchange.pairwise_messages == p * (p - 1) && r.exchange.broadcast_messages == p,
            format!("pairwise {} broadcast {}", r.exchange.pairwise_messages, r.exchange.broadcast_messages),
        ));
    }
    for step in 0..spec.steps {
        let runs: Vec<&DistributedRun> = report.runs.iter().filter(|r| r.step == step).collect();
        for pair in runs.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let expected = a.p as f64 / b.p as f64;
            let ratio = b.mean_local_work / a.mean_local_work;
            report.checks.push(Check::new(
                format!("per-rank work p={} -> p={} step={step}", a.p, b.p),
                (ratio / expected - 1.0).abs() <= 0.2,
                format!("ratio {ratio:.4}, expected {expected:.4} within 20%"),
            ));
        }
    }
    Ok(report)
}

/// Mean total variation distance between `draws` samples of `probabilities`
/// and the distribution itself, to leading order.
pub fn expected_sampling_tv(probabilities: impl IntoIterator<Item = f64>, draws: u64) -> f64 {
    let n = draws as f64;
    0.5 * probabilities
        .into_iter()
        .map(|p| (2.0 * p * (1.0 - p) / (std::f64::consts::PI * n)).sqrt())
        .sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleRow {
    /// `oracle` for the exactness rows, `approximate` for theta comparisons.
    pub mode: &'static str,
    pub theta: f64,
    pub population_seed: u64,
    pub n: usize,
    pub searcher: u64,
    pub draws: u64,
    pub max_abs_diff: f64,
    pub exact_tv: f64,
    pub empirical_tv: f64,
    pub sampling_tv: f64,
}

#[derive(Debug, Clone, Default)]
pub struct OracleReport {
    pub rows: Vec<OracleRow>,
    pub checks: Vec<Check>,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        all_passed(&self.checks)
    }
}

impl fmt::Display for OracleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in self.rows.iter().filter(|r| r.mode == "approximate") {
            writeln!(
                f,
                "theta={} n={} exact TV {:.5}, empirical TV {:.5} over {} draws (sampling noise {:.5})",
                r.theta, r.n, r.exact_tv, r.empirical_tv, r.draws, r.sampling_tv
            )?;
        }
        write_checks(f, &self.checks)
    }
}

fn max_abs_diff(a: &CandidateDistribution, b: &HashMap<NeuronId, f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for (id, p) in &a.probabilities {
        worst = worst.max((p - b.get(id).copied().unwrap_or(0.0)).abs());
    }
    for (id, p) in b {
        worst = worst.max((p - a.get(*id)).abs());
    }
    worst
}

/// Oracle-mode search probabilities against the naive oracle.
fn oracle_mode_diff(pop: &Population, tree: &Octree, searcher: usize, config: &SearchConfig) -> Result<f64> {
    let s = &pop.neurons()[searcher];
    let kind = SEARCH_KIND.opposite();
    let naive = naive_distribution(s, pop.neurons(), kind, config.kernel_sigma);
    let oracle = config.with_oracle_mode(true);
    let mut first: HashMap<NeuronId, f64> = HashMap::new();
    for (summary, p) in candidate_distribution(tree, s, &oracle)? {
        if let Some(id) = summary.leaf {
            *first.entry(id).or_insert(0.0) += p;
        }
    }
    let whole = exact_target_distribution(tree, s, &oracle)?;
    Ok(max_abs_diff(&naive, &first).max(max_abs_diff(&naive, &whole)))
}

/// Empirical target frequencies from `draws` independent searches.
pub(crate) fn sample_targets(tree: &Octree, searcher: usize, pop: &Population, config: &SearchConfig, draws: u64) -> Result<HashMap<NeuronId, f64>> {
    let s = pop.neurons()[searcher];
    let keys = KeyedRng::new(config.rng_seed, 0);
    let chunk = 4096u64;
    let counts: Vec<HashMap<NeuronId, u64>> = (0..draws.div_ceil(chunk))
        .into_par_iter()
        .map(|c| -> Result<HashMap<NeuronId, u64>> {
            let mut view = tree;
            let mut stats = DescentStats::default();
            let mut counts = HashMap::new();
            for i in c * chunk..((c + 1) * chunk).min(draws) {
                if let Some(p) = find_target(&mut view, &s, config, &keys, i as u32, &mut stats)? {
                    *counts.entry(p.target).or_insert(0) += 1;
                }
            }
            Ok(counts)
        })
        .collect::<Result<_>>()?;
    let mut freq = HashMap::new();
    for m in counts {
        for (id, c) in m {
            *freq.entry(id).or_insert(0.0) += c as f64;
        }
    }
    for v in freq.values_mut() {
        *v /= draws as f64;
    }
    Ok(freq)
}

/// Oracle exactness over `spec.populations` generated populations, then
/// the approximation error for each theta on the first one. Writes
/// `<name>.csv`.
pub fn cmd_compare_oracle(spec: &ExperimentSpec) -> Result<OracleReport> {
    let mut report = OracleReport::default();
    let n = spec.sizes[0];
    let pops: Vec<(u64, Population)> = match &spec.population {
        PopulationSource::File(_) => vec![(spec.seed, spec.first_population()?)],
        PopulationSource::UniformCube { side, profile } => (0..spec.populations)
            .map(|k| Ok((spec.seed + k, uniform_cube(n, *side, *profile, spec.seed + k)?)))
            .collect::<Result<_>>()?,
    };

    let theta0 = spec.thetas[0];
    let mut worst: f64 = 0.0;
    for (seed, pop) in &pops {
        let tree = Octree::build(pop.neurons(), pop.bounds())?;
        let config = SearchConfig::new(theta0, spec.sigma, *seed)?;
        for searcher in 0..pop.len().min(3) {
            let diff = oracle_mode_diff(pop, &tree, searcher, &config)?;
            worst = worst.max(diff);
            report.rows.push(OracleRow {
                mode: "oracle",
                theta: theta0.value(),
                population_seed: *seed,
                n: pop.len(),
                searcher: pop.neurons()[searcher].id.0,
                draws: 0,
                max_abs_diff: diff,
                exact_tv: 0.0,
                empirical_tv: 0.0,
                sampling_tv: 0.0,
            });
        }
    }
    report.checks.push(Check::new(
        "oracle mode equals naive distribution",
        worst <= 1e-12,
        format!("largest difference {worst:.3e} over {} populations", pops.len()),
    ));

    let (seed, pop) = &pops[0];
    let tree = Octree::build(pop.neurons(), pop.bounds())?;
    let searcher = 0;
    let s = &pop.neurons()[searcher];
    let naive = naive_distribution(s, pop.neurons(), SEARCH_KIND.opposite(), spec.sigma);
    for &theta in &spec.thetas {
        let config = SearchConfig::new(theta, spec.sigma, *seed)?;
        let exact = exact_target_distribution(&tree, s, &config)?;
        let exact_tv = naive.total_variation(&exact);
        let freq = sample_targets(&tree, searcher, pop, &config, spec.draws)?;
        let empirical_tv = naive.total_variation(&freq);
        let sampling_tv = expected_sampling_tv(exact.values().copied(), spec.draws);
        report.rows.push(OracleRow {
            mode: "approximate",
            theta: theta.value(),
            population_seed: *seed,
            n: pop.len(),
            searcher: s.id.0,
            draws: spec.draws,
            max_abs_diff: 0.0,
            exact_tv,
            empirical_tv,
            sampling_tv,
        });
        if theta.value() <= 0.25 {
            report.checks.push(Check::new(
                format!("approximation error theta={theta}"),
                exact_tv <= 0.02 && empirical_tv <= 0.02 + sampling_tv,
                format!("exact TV {exact_tv:.5}, empirical TV {empirical_tv:.5} (limit 0.02 + noise {sampling_tv:.5})"),
            ));
        }
    }

    let mut w = csv::Writer::from_writer(create(&spec.output_path(""))?);
    for r in &report.rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRow {
    pub step: u64,
    pub searches: u64,
    pub proposals: u64,
    pub formed: u64,
    pub mean_first: f64,
    pub mean_subsequent: f64,
    pub vacant_elements: u64,
}

#[derive(Debug, Clone, Default)]
pub struct SimulationReport {
    pub steps: Vec<StepRow>,
    pub descents: u64,
    pub checks: Vec<Check>,
}

impl SimulationReport {
    pub fn passed(&self) -> bool {
        all_passed(&self.checks)
    }
}

impl fmt::Display for SimulationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.steps {
            writeln!(
                f,
                "step {}: {} searches, {} proposals, {} synapses, mean first {:.2}, mean subsequent {:.3}",
                s.step, s.searches, s.proposals, s.formed, s.mean_first, s.mean_subsequent
            )?;
        }
        writeln!(f, "{} descents recorded", self.descents)?;
        write_checks(f, &self.checks)
    }
}

/// Full update steps on one population with per-descent records in
/// `<name>-descents.csv` and a per-step summary in `<name>-steps.csv`.
pub fn simulate(spec: &ExperimentSpec) -> Result<SimulationReport> {
    let mut population = spec.first_population()?;
    let theta = spec.thetas[0];
    let config = SearchConfig::new(theta, spec.sigma, spec.seed)?.with_recording(true);
    let bound = subdivision_guarantee(theta).ok();
    let mut tree = Octree::build(population.neurons(), population.bounds())?;
    let mut descents = csv::Writer::from_writer(create(&spec.output_path("-descents"))?);
    let mut report = SimulationReport::default();
    let mut autapses = 0;
    let mut longest_path = 0;
    let mut path_ok = true;
    let mut worst_sub = 0;
    for step in 0..spec.steps {
        if step > 0 {
            population.replenish(&spec.profile, spec.seed, step);
        }
        let outcome = connectivity_update(&population, &mut tree, &config, step)?;
        for r in &outcome.records {
            descents.serialize(r)?;
        }
        report.descents += outcome.records.len() as u64;
        autapses += outcome.proposals.iter().filter(|p| p.source == p.target).count();
        let s = &outcome.stats;
        longest_path = longest_path.max(s.max_path_length);
        path_ok &= s.max_path_length <= u64::from(tree.height()) + 1;
        worst_sub = worst_sub.max(s.max_subsequent_inspected);
        let keys = KeyedRng::new(spec.seed, step);
        let resolution = resolve_proposals(&outcome.proposals, &mut population, &keys);
        report.steps.push(StepRow {
            step,
            searches: s.searches,
            proposals: s.proposals,
            formed: resolution.formed.len() as u64,
            mean_first: s.mean_first(),
            mean_subsequent: s.mean_subsequent(),
            vacant_elements: population.total_vacant(),
        });
    }
    descents.flush()?;
    let mut w = csv::Writer::from_writer(create(&spec.output_path("-steps"))?);
    for s in &report.steps {
        w.serialize(s)?;
    }
    w.flush()?;

    report.checks.push(Check::new("no autapses", autapses == 0, format!("{autapses} self proposals")));
    report.checks.push(Check::new(
        "descent path within tree height",
        path_ok,
        format!("longest path {longest_path}, tree height {}", tree.height()),
    ));
    if let Some(g) = bound {
        report.checks.push(Check::new(
            "per-descent bound",
            worst_sub <= g.node_bound,
            format!("max subsequent inspections {worst_sub} bound {}", g.node_bound),
        ));
    }
    Ok(report)
}
