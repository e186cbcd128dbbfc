use std::collections::{HashSet, VecDeque};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use contextnav::contextkit::{
    build_dynamic_context, build_oracle_context, build_random_context, build_static_context, gumbel_select, Context,
    ContextError, ContextStrategy, OracleKind, SelectMode, SelectorLogits, DEFAULT_CONTEXT_SIZE, DEFAULT_TAU,
    PANORAMA_STEP_DEG,
};
use contextnav::embedstore::{EmbeddingRecord, Store};
use contextnav::navsim::{Cell, FeatureMap, FeatureSpec, Scene};
use contextnav::retrieval::softmax;
use contextnav::scalar::{dot, normalized};
use contextnav::simgraph::{Edge, GraphVariant, SimilarityGraph};

fn random_unit(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    normalized(&v).unwrap()
}

fn selection_frequencies(alphas: &[f64], tau: f64, draws: usize, seed: u64) -> Vec<f64> {
    let logits = SelectorLogits {
        alphas: alphas.to_vec(),
        tau,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = vec![0usize; alphas.len()];
    for _ in 0..draws {
        counts[gumbel_select(&logits, SelectMode::Sample, &mut rng).unwrap().0] += 1;
    }
    counts.into_iter().map(|c| c as f64 / draws as f64).collect()
}

fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

#[test]
fn defaults() {
    assert_eq!(DEFAULT_CONTEXT_SIZE, 8);
    assert_eq!(DEFAULT_TAU, 1.0);
}

#[test]
fn gumbel_hard_choice_follows_softmax_for_any_temperature() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let mut worst: f64 = 0.0;
    for v in 0..20 {
        let c = rng.random_range(2..=12);
        let alphas: Vec<f64> = (0..c)
            .map(|_| 1.5 * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect();
        let target = softmax(&alphas);
        let by_tau: Vec<Vec<f64>> = [0.1, 1.0, 10.0]
            .iter()
            .map(|&tau| selection_frequencies(&alphas, tau, 100_000, 1000 + v))
            .collect();
        for f in &by_tau {
            worst = worst.max(total_variation(f, &target));
        }
        // same noise stream: the hard choice cannot depend on τ
        assert_eq!(by_tau[0], by_tau[1]);
        assert_eq!(by_tau[1], by_tau[2]);
    }
    assert!(worst < 0.01, "worst TV {worst}");
}

#[test]
fn gumbel_examples() {
    let freq = selection_frequencies(&[0.0; 6], 1.0, 100_000, 42);
    assert!(total_variation(&freq, &[1.0 / 6.0; 6]) < 0.01);

    let dominant = [10.0, 0.0, 0.0];
    assert!(softmax(&dominant)[0] >= 0.9999);
    for tau in [0.1, 1.0, 10.0] {
        assert!(selection_frequencies(&dominant, tau, 100_000, 43)[0] >= 0.9997);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let single = SelectorLogits {
        alphas: vec![-3.0],
        tau: 0.5,
    };
    assert_eq!(
        gumbel_select(&single, SelectMode::Sample, &mut rng).unwrap(),
        (0, vec![1.0])
    );
    let zero_tau = SelectorLogits {
        alphas: vec![1.0, 2.0],
        tau: 0.0,
    };
    assert_eq!(
        gumbel_select(&zero_tau, SelectMode::Sample, &mut rng),
        Err(ContextError::BadTemperature)
    );
    let argmax = SelectorLogits {
        alphas: vec![1.0, 3.0, 2.0],
        tau: 1.0,
    };
    assert_eq!(gumbel_select(&argmax, SelectMode::Argmax, &mut rng).unwrap().0, 1);
}

fn store_of(n: usize, dim: usize, seed: u64) -> Store<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = Store::new(dim).unwrap();
    for id in 0..n as u64 {
        s.add_record(EmbeddingRecord::new(id * 2 + 1, "a", random_unit(&mut rng, dim)))
            .unwrap();
    }
    s
}

#[test]
fn random_context_basics() {
    let s = store_of(8, 4, 45);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let c = build_random_context(&s, "a", 8, &mut rng).unwrap();
    let mut sorted = c.slots.clone();
    sorted.sort();
    assert_eq!(sorted, (0..8).collect::<Vec<_>>());
    assert_eq!(c.strategy, ContextStrategy::Random);
    assert!(matches!(
        build_random_context(&s, "a", 9, &mut rng),
        Err(ContextError::SceneTooSmall { .. })
    ));
    let a = build_random_context(&s, "a", 5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = build_random_context(&s, "a", 5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn random_context_inclusion_is_uniform() {
    let s = store_of(100, 4, 46);
    let mut rng = ChaCha8Rng::seed_from_u64(47);
    let draws = 10_000;
    let mut counts = vec![0usize; 100];
    for _ in 0..draws {
        let c = build_random_context(&s, "a", 8, &mut rng).unwrap();
        assert_eq!(c.slots.iter().collect::<HashSet<_>>().len(), 8);
        for i in c.slots {
            counts[i] += 1;
        }
    }
    let p = 8.0 / 100.0;
    let expected = draws as f64 * p;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for &c in &counts {
        assert!((c as f64 - expected).abs() <= 3.0 * sigma, "count {c}");
    }
    // chi-square, 99 degrees of freedom, 1% critical value 134.642
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    assert!(chi2 < 134.642, "chi2 {chi2}");
}

/// Greedy MMR over every record of the scene, evaluated from scratch.
fn hand_mmr(s: &Store<f64>, goal: &[f64], n: usize, beta: f64) -> Vec<usize> {
    let all: Vec<usize> = (0..s.len()).collect();
    let rel = |i: usize| dot(s.vector(i), goal);
    let mut chosen: Vec<usize> = Vec::new();
    while chosen.len() < n.min(all.len()) {
        let score = |c: usize| {
            if chosen.is_empty() {
                rel(c)
            } else {
                let m = chosen
                    .iter()
                    .map(|&x| dot(s.vector(c), s.vector(x)))
                    .fold(f64::NEG_INFINITY, f64::max);
                beta * rel(c) - (1.0 - beta) * m
            }
        };
        let best = all
            .iter()
            .copied()
            .filter(|c| !chosen.contains(c))
            .max_by(|&a, &b| score(a).total_cmp(&score(b)).then(s.frame_id(b).cmp(&s.frame_id(a))))
            .unwrap();
        chosen.push(best);
    }
    chosen
}

#[test]
fn static_context_matches_hand_mmr() {
    for seed in 0..20 {
        let s = store_of(10, 3, 48 + seed);
        let goal = random_unit(&mut ChaCha8Rng::seed_from_u64(seed), 3);
        let c = build_static_context(&s, "a", &goal, 8, 0.5).unwrap();
        assert_eq!(c.slots, hand_mmr(&s, &goal, 8, 0.5));
        assert_eq!(c, build_static_context(&s, "a", &goal, 8, 0.5).unwrap());
        let one = build_static_context(&s, "a", &goal, 1, 0.5).unwrap();
        assert_eq!(one.slots, vec![s.topk("a", &goal, 1).unwrap()[0].0]);
    }
    let tiny = store_of(3, 3, 7);
    let c = build_static_context(&tiny, "a", tiny.vector(0), 8, 0.5).unwrap();
    assert_eq!(c.len(), 8);
}

/// Records on a line; graph edges only between consecutive records.
fn chain(n: usize) -> (Store<f64>, SimilarityGraph) {
    let mut s = Store::new(2).unwrap();
    for i in 0..n {
        let a = i as f64 * 0.05;
        s.add_record(EmbeddingRecord::new(500 - i as u64, "a", vec![a.cos(), a.sin()]))
            .unwrap();
    }
    let edges = (0..n - 1).map(|i| Edge(i, i + 1, 0.1)).collect();
    (
        s,
        SimilarityGraph::from_edges(GraphVariant::Swg, 0.75, (0..n).collect(), edges),
    )
}

#[test]
fn dynamic_context_on_a_chain() {
    let (s, g) = chain(30);
    let prev = Context {
        slots: vec![0; 8],
        strategy: ContextStrategy::Static,
    };
    for seed in 0..30 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (rng.random_range(0..30), rng.random_range(0..30));
        let u = build_dynamic_context(&s, "a", &g, s.vector(a), s.vector(b), &prev, &mut rng).unwrap();
        assert_eq!((u.r_obs, u.r_goal), (a, b));
        // the only simple path on a chain visits every record between a and b
        let between: Vec<usize> = if a <= b {
            (a..=b).collect()
        } else {
            (b..=a).rev().collect()
        };
        assert_eq!(u.path.nodes, between);
        let fresh = &u.context.slots[..u.fresh];
        assert_eq!(fresh.first(), Some(&a));
        assert_eq!(fresh.last(), Some(&b));
        let order: Vec<usize> = fresh
            .iter()
            .map(|x| between.iter().position(|y| y == x).unwrap())
            .collect();
        if a != b {
            assert!(order.windows(2).all(|w| w[0] < w[1]), "{order:?}");
        }
        assert_eq!(u.context.len(), 8);
    }
}

#[test]
fn dynamic_context_edge_cases() {
    let (s, g) = chain(10);
    let prev = Context {
        slots: (0..8).map(|i| i + 1).collect(),
        strategy: ContextStrategy::Dynamic,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(49);
    let u = build_dynamic_context(&s, "a", &g, s.vector(4), s.vector(4), &prev, &mut rng).unwrap();
    assert_eq!(u.r_obs, u.r_goal);
    assert_eq!(u.context.slots[..2], [4, 4]);
    assert_eq!(u.context.slots[2..], prev.slots[2..]);

    let cut = SimilarityGraph::from_edges(
        GraphVariant::Swg,
        0.75,
        (0..10).collect(),
        vec![Edge(0, 1, 0.1), Edge(5, 6, 0.1)],
    );
    let u = build_dynamic_context(&s, "a", &cut, s.vector(0), s.vector(9), &prev, &mut rng).unwrap();
    assert!(!u.path.found);
    assert_eq!(u.fresh, 2);
    assert_eq!(u.context.slots, vec![0, 9, 3, 4, 5, 6, 7, 8]);
}

fn l_corridor() -> Scene {
    let rows = [
        "##########",
        "#........#",
        "#.########",
        "#.########",
        "#.########",
        "#.########",
        "##########",
    ];
    Scene::from_ascii("L", &rows, FeatureMap::new(&FeatureSpec::default(), 3).unwrap()).unwrap()
}

/// Plain BFS step counts from one cell.
fn bfs(scene: &Scene, from: Cell) -> Vec<Option<usize>> {
    let mut dist = vec![None; scene.width * scene.height];
    let mut q = VecDeque::from([from]);
    dist[scene.index(from)] = Some(0);
    while let Some(c) = q.pop_front() {
        let d = dist[scene.index(c)].unwrap();
        for (dx, dy) in [(1i64, 0i64), (-1, 0), (0, 1), (0, -1)] {
            let (x, y) = (c.x as i64 + dx, c.y as i64 + dy);
            if x < 0 || y < 0 || x >= scene.width as i64 || y >= scene.height as i64 {
                continue;
            }
            let n = Cell::new(x as usize, y as usize);
            if scene.is_free(n) && dist[scene.index(n)].is_none() {
                dist[scene.index(n)] = Some(d + 1);
                q.push_back(n);
            }
        }
    }
    dist
}

#[test]
fn oracle_contexts() {
    let scene = l_corridor();
    let agent = Cell::new(1, 5);
    let goal = Cell::new(8, 1);
    let (pa, pg) = (agent.center(), goal.center());

    let pano = build_oracle_context::<f64>(&scene, OracleKind::Panorama, &pa, &pg, 8).unwrap();
    let headings: Vec<f64> = pano.iter().map(|f| f.heading_deg).collect();
    assert_eq!(
        headings,
        (0..8).map(|i| i as f64 * PANORAMA_STEP_DEG).collect::<Vec<_>>()
    );
    assert!(pano.iter().all(|f| f.pose == pg));

    let at_goal = build_oracle_context::<f64>(&scene, OracleKind::ShortestPath, &pg, &pg, 8).unwrap();
    assert!(at_goal.iter().all(|f| f.pose == pg));

    let from_agent = bfs(&scene, agent);
    let to_goal = bfs(&scene, goal);
    let total = from_agent[scene.index(goal)].unwrap();
    let frames = build_oracle_context::<f64>(&scene, OracleKind::ShortestPath, &pa, &pg, 6).unwrap();
    assert_eq!(frames.len(), 6);
    assert_eq!(frames[0].pose, pa);
    let mut along = Vec::new();
    for f in &frames {
        let c = Cell::of_pose(&f.pose).unwrap();
        let (a, b) = (from_agent[scene.index(c)].unwrap(), to_goal[scene.index(c)].unwrap());
        assert_eq!(a + b, total, "frame off the geodesic at {c:?}");
        assert_eq!(f.embedding, scene.features.embed::<f64>(&f.pose));
        along.push(a);
    }
    assert!(along.windows(2).all(|w| w[1] > w[0]));
    let gaps: Vec<usize> = along.windows(2).map(|w| w[1] - w[0]).collect();
    assert!(gaps.iter().max().unwrap() - gaps.iter().min().unwrap() <= 1, "{gaps:?}");

    let island = ["######", "#..#.#", "######"];
    let split = Scene::from_ascii("split", &island, FeatureMap::new(&FeatureSpec::default(), 3).unwrap()).unwrap();
    let r = build_oracle_context::<f64>(
        &split,
        OracleKind::ShortestPath,
        &Cell::new(1, 1).center(),
        &Cell::new(4, 1).center(),
        8,
    );
    assert!(r.is_err());
}

proptest! {
    #[test]
    fn soft_weights_are_a_distribution(alphas in prop::collection::vec(-30.0f64..30.0, 1..16), tau in 0.5f64..20.0, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (sel, w) = gumbel_select(&SelectorLogits { alphas: alphas.clone(), tau }, SelectMode::Sample, &mut rng).unwrap();
        prop_assert!(sel < alphas.len());
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(w.iter().all(|&x| x > 0.0));
        let top = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(w[sel], top);
    }
}
