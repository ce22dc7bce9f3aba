mod common;

use std::collections::HashMap;

use bh_plasticity::distributed::{distributed_connectivity_update, partition};
use bh_plasticity::geometry::Theta;
use bh_plasticity::octree::{ElementKind, NeuronId, Octree};
use bh_plasticity::oracle::naive_distribution;
use bh_plasticity::plasticity::{
    connectivity_update, exact_target_distribution, find_target, DescentStats, SearchConfig, DEFAULT_KERNEL_SIGMA,
};
use bh_plasticity::population::Population;
use bh_plasticity::rng::KeyedRng;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{cube, random_neurons, Layout, LAYOUTS};

fn config(theta: f64, seed: u64) -> SearchConfig {
    SearchConfig::new(Theta::new(theta).unwrap(), DEFAULT_KERNEL_SIGMA, seed).unwrap()
}

fn population(seed: u64, n: usize, layout: Layout) -> Population {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Population::new(cube(1000.0), random_neurons(&mut rng, n, 1000.0, layout, 3)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn proposals_are_never_autapses(seed in any::<u64>(), n in 1usize..300, layout in 0usize..3, theta in 0.05..0.55f64) {
        let pop = population(seed, n, LAYOUTS[layout]);
        let mut tree = Octree::build(pop.neurons(), pop.bounds()).unwrap();
        let outcome = connectivity_update(&pop, &mut tree, &config(theta, seed), 0).unwrap();
        let height = u64::from(tree.height());
        for p in &outcome.proposals {
            prop_assert_ne!(p.source, p.target);
            prop_assert!(pop.get(p.target).unwrap().vacant.get(ElementKind::Dendrite) > 0);
        }
        prop_assert!(outcome.stats.max_path_length <= height + 1);
    }

    #[test]
    fn exact_distribution_is_a_subprobability(seed in any::<u64>(), n in 2usize..200, theta in 0.05..0.55f64) {
        let pop = population(seed, n, Layout::Uniform);
        let tree = Octree::build(pop.neurons(), pop.bounds()).unwrap();
        let searcher = pop.neurons()[0];
        let exact = exact_target_distribution(&tree, &searcher, &config(theta, seed)).unwrap();
        let total: f64 = exact.values().sum();
        prop_assert!(total <= 1.0 + 1e-9);
        prop_assert!(!exact.contains_key(&searcher.id));
        prop_assert!(exact.values().all(|p| *p > 0.0));
    }

    #[test]
    fn oracle_mode_matches_naive_exactly(seed in any::<u64>(), n in 2usize..200, layout in 0usize..3) {
        let pop = population(seed, n, LAYOUTS[layout]);
        let tree = Octree::build(pop.neurons(), pop.bounds()).unwrap();
        let searcher = pop.neurons()[n / 2];
        let exact = exact_target_distribution(&tree, &searcher, &config(0.25, seed).with_oracle_mode(true)).unwrap();
        let naive = naive_distribution(&searcher, pop.neurons(), ElementKind::Dendrite, DEFAULT_KERNEL_SIGMA);
        prop_assert!(naive.total_variation(&exact) <= 1e-12);
    }
}

#[test]
fn oracle_mode_sampling_converges() {
    let pop = population(20, 20, Layout::Uniform);
    let tree = Octree::build(pop.neurons(), pop.bounds()).unwrap();
    let searcher = pop.neurons()[3];
    let cfg = config(0.25, 20).with_oracle_mode(true);
    let naive = naive_distribution(&searcher, pop.neurons(), ElementKind::Dendrite, DEFAULT_KERNEL_SIGMA);
    let draws = 100_000u32;
    let keys = KeyedRng::new(cfg.rng_seed, 0);
    let mut view = &tree;
    let mut stats = DescentStats::default();
    let mut counts: HashMap<NeuronId, f64> = HashMap::new();
    for i in 0..draws {
        let p = find_target(&mut view, &searcher, &cfg, &keys, i, &mut stats).unwrap().unwrap();
        assert_eq!(stats.chosen_path_length(), 1);
        *counts.entry(p.target).or_insert(0.0) += 1.0 / f64::from(draws);
    }
    let tv = naive.total_variation(&counts);
    assert!(tv <= 3.0 / f64::from(draws).sqrt(), "tv {tv}");
}

#[test]
fn searches_repeat_exactly() {
    let pop = population(5, 2000, Layout::Clustered);
    let mut tree = Octree::build(pop.neurons(), pop.bounds()).unwrap();
    let cfg = config(0.3, 5);
    let a = connectivity_update(&pop, &mut tree, &cfg, 4).unwrap();
    let b = connectivity_update(&pop, &mut tree, &cfg, 4).unwrap();
    let c = connectivity_update(&pop, &mut tree, &cfg, 5).unwrap();
    assert_eq!(a.proposals, b.proposals);
    assert_eq!(a.stats.search_work(), b.stats.search_work());
    assert_ne!(a.proposals, c.proposals);
}

#[test]
fn distributed_matches_on_skewed_populations() {
    for layout in [Layout::Clustered, Layout::Grid] {
        let pop = population(77, 3000, layout);
        let mut tree = Octree::build(pop.neurons(), pop.bounds()).unwrap();
        let cfg = config(0.25, 77);
        let mut reference = connectivity_update(&pop, &mut tree, &cfg, 0).unwrap().proposals;
        reference.sort();
        for p in [2, 4, 16] {
            let mut ranks = partition(pop.neurons(), pop.bounds(), p).unwrap();
            let mut got = distributed_connectivity_update(&mut ranks, pop.bounds(), &cfg, 0).unwrap().proposals;
            got.sort();
            assert_eq!(got, reference, "{layout:?} p={p}");
        }
    }
}
