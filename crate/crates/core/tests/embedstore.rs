use std::collections::HashMap;
use std::thread;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use contextnav::embedstore::{cosine, EmbeddingRecord, SharedStore, Store, StoreError};
use contextnav::retrieval::retrieve_goal;
use contextnav::scalar::{dot, normalized};

fn random_unit(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
    let v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    normalized(&v).unwrap()
}

/// Sum of f32 products in f64 with Neumaier compensation. Each product of
/// two f32 values is exact in f64.
fn extended_dot(a: &[f32], b: &[f32]) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let p = *x as f64 * *y as f64;
        let t = sum + p;
        comp += if sum.abs() >= p.abs() {
            (sum - t) + p
        } else {
            (p - t) + sum
        };
        sum = t;
    }
    sum + comp
}

/// Score everything with the same kernel, then sort the whole partition.
fn full_sort(store: &Store<f32>, scene: &str, q: &[f32]) -> Vec<(u64, f32)> {
    let mut all: Vec<(u64, f32)> = store
        .partition(scene)
        .unwrap()
        .iter()
        .map(|&i| (store.frame_id(i), dot(store.vector(i), q)))
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    all
}

#[test]
fn normalizes_on_ingest() {
    let mut s = Store::<f64>::new(2).unwrap();
    let i = s.add_record(EmbeddingRecord::new(1, "a", vec![3.0, 4.0])).unwrap();
    assert_eq!(s.vector(i), &[0.6, 0.8]);
    assert_eq!(
        s.add_record(EmbeddingRecord::new(2, "a", vec![1.0, 2.0, 3.0])),
        Err(StoreError::DimensionMismatch { expected: 2, got: 3 })
    );
    assert_eq!(
        s.add_record(EmbeddingRecord::new(3, "a", vec![0.0, 0.0])),
        Err(StoreError::ZeroVector(3))
    );
    assert_eq!(
        s.add_record(EmbeddingRecord::new(1, "a", vec![1.0, 0.0])),
        Err(StoreError::DuplicateFrame(1))
    );
    assert_eq!(s.len(), 1);
}

#[test]
fn thousand_records_one_partition() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut s = Store::new(16).unwrap();
    for id in 0..1000 {
        s.add_record(EmbeddingRecord::new(id, "scene", random_unit(&mut rng, 16)))
            .unwrap();
    }
    assert_eq!(s.partition("scene").unwrap().len(), 1000);
}

#[test]
fn cosine_matches_extended_precision() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let a = random_unit(&mut rng, 256);
        let b = random_unit(&mut rng, 256);
        let c = cosine(&a, &b).unwrap() as f64;
        assert!((c - extended_dot(&a, &b)).abs() < 1e-6);
        assert_eq!(cosine(&a, &b), cosine(&b, &a));
        assert!((cosine(&a, &a).unwrap() - 1.0).abs() <= 1e-6);
    }
    assert_eq!(cosine(&[1.0f32, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    assert!(cosine(&[1.0f32], &[1.0, 0.0]).is_err());
}

#[test]
fn topk_small_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut s = Store::new(8).unwrap();
    let vs: Vec<Vec<f32>> = (0..5).map(|_| random_unit(&mut rng, 8)).collect();
    for (i, v) in vs.iter().enumerate() {
        s.add_record(EmbeddingRecord::new(i as u64 * 10, "a", v.clone()))
            .unwrap();
    }
    let hit = s.topk("a", &vs[3], 1).unwrap();
    assert_eq!(s.frame_id(hit[0].0), 30);
    assert!((hit[0].1 - 1.0).abs() < 1e-6);
    let all = s.topk("a", &vs[0], 50).unwrap();
    assert_eq!(all.len(), 5);
    assert!(all.windows(2).all(|w| w[0].1 >= w[1].1));
    assert_eq!(s.topk("a", &vs[0], 0), Err(StoreError::ZeroK));
    assert_eq!(s.topk("b", &vs[0], 1), Err(StoreError::UnknownScene("b".into())));
}

#[test]
fn ties_go_to_lower_frame_id() {
    let mut s = Store::<f32>::new(2).unwrap();
    s.add_record(EmbeddingRecord::new(9, "a", vec![1.0, 0.0])).unwrap();
    s.add_record(EmbeddingRecord::new(4, "a", vec![2.0, 0.0])).unwrap();
    s.add_record(EmbeddingRecord::new(7, "a", vec![0.0, 1.0])).unwrap();
    let r = s.topk("a", &[1.0, 0.0], 2).unwrap();
    assert_eq!(r.iter().map(|&(i, _)| s.frame_id(i)).collect::<Vec<_>>(), vec![4, 9]);
    assert_eq!(s.frame_id(retrieve_goal(&s, "a", &[1.0, 0.0]).unwrap()), 4);
}

#[test]
fn retrieve_goal_is_argmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut s = Store::new(32).unwrap();
    for id in 0..500 {
        s.add_record(EmbeddingRecord::new(id, "a", random_unit(&mut rng, 32)))
            .unwrap();
    }
    for _ in 0..20 {
        let g = random_unit(&mut rng, 32);
        let want = full_sort(&s, "a", &g)[0].0;
        assert_eq!(s.frame_id(retrieve_goal(&s, "a", &g).unwrap()), want);
    }
}

#[test]
fn topk_matches_full_sort_on_large_partition() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut s = Store::new(24).unwrap();
    for id in 0..10_000u64 {
        // a coarse grid of values makes exact score ties common
        let v: Vec<f32> = (0..24).map(|_| rng.random_range(-2i32..=2) as f32).collect();
        if v.iter().all(|&x| x == 0.0) {
            continue;
        }
        s.add_record(EmbeddingRecord::new(id, "a", v)).unwrap();
    }
    for k in [1, 8, 100, 20_000] {
        let q = random_unit(&mut rng, 24);
        let got: Vec<(u64, f32)> = s
            .topk("a", &q, k)
            .unwrap()
            .into_iter()
            .map(|(i, sc)| (s.frame_id(i), sc))
            .collect();
        let want = full_sort(&s, "a", &q);
        assert_eq!(got.len(), k.min(want.len()));
        assert_eq!(
            got.iter().map(|g| g.0).collect::<Vec<_>>(),
            want[..got.len()].iter().map(|w| w.0).collect::<Vec<_>>()
        );
    }
}

#[test]
fn shared_store_concurrent_appends_and_reads() {
    let shared = SharedStore::new(Store::<f32>::new(4).unwrap());
    let writers: Vec<_> = (0..4u64)
        .map(|w| {
            let s = shared.clone();
            thread::spawn(move || {
                for b in 0..50u64 {
                    let batch = (0..10u64)
                        .map(|j| {
                            EmbeddingRecord::new(w * 10_000 + b * 10 + j, "a", vec![1.0, w as f32, b as f32, j as f32])
                        })
                        .collect();
                    s.append_batch(batch).unwrap();
                }
            })
        })
        .collect();
    let readers: Vec<_> = (0..2)
        .map(|_| {
            let s = shared.clone();
            thread::spawn(move || {
                let mut last = 0;
                for _ in 0..200 {
                    let n = s.read(|st| {
                        // whole batches only
                        assert_eq!(st.len() % 10, 0);
                        let seen: HashMap<u64, usize> = (0..st.len()).map(|i| (st.frame_id(i), i)).collect();
                        for (&id, &i) in &seen {
                            assert_eq!(st.index_of(id), Some(i));
                        }
                        st.len()
                    });
                    assert!(n >= last);
                    last = n;
                }
            })
        })
        .collect();
    for h in writers.into_iter().chain(readers) {
        h.join().unwrap();
    }
    assert_eq!(shared.len(), 2000);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn topk_equals_brute_force(
        vecs in prop::collection::vec(prop::collection::vec(-4i8..=4, 6), 1..120),
        q in prop::collection::vec(-1.0f32..1.0, 6),
        k in 1usize..40,
    ) {
        prop_assume!(q.iter().any(|&x| x != 0.0));
        let q = normalized(&q).unwrap();
        let mut s = Store::new(6).unwrap();
        for (i, v) in vecs.iter().enumerate() {
            let v: Vec<f32> = v.iter().map(|&x| x as f32).collect();
            if v.iter().any(|&x| x != 0.0) {
                s.add_record(EmbeddingRecord::new((i as u64 * 7919) % 1000, "a", v)).ok();
            }
        }
        prop_assume!(!s.is_empty());
        let got: Vec<(u64, f32)> = s.topk("a", &q, k).unwrap().into_iter().map(|(i, sc)| (s.frame_id(i), sc)).collect();
        let want = full_sort(&s, "a", &q);
        prop_assert_eq!(&got[..], &want[..k.min(want.len())]);
    }

    #[test]
    fn appends_never_move_records(batches in prop::collection::vec(1usize..20, 1..10)) {
        let mut s = Store::<f64>::new(3).unwrap();
        let mut issued: Vec<(usize, u64)> = Vec::new();
        let mut id = 0u64;
        for n in batches {
            let batch: Vec<_> = (0..n)
                .map(|_| {
                    id += 1;
                    let scene = if id.is_multiple_of(2) { "a" } else { "b" };
                    EmbeddingRecord::new(id, scene, vec![1.0, id as f64, 0.5])
                })
                .collect();
            let range = s.add_batch(batch).unwrap();
            issued.extend(range.clone().map(|i| (i, s.frame_id(i))));
            for &(i, f) in &issued {
                prop_assert_eq!(s.frame_id(i), f);
                prop_assert_eq!(s.index_of(f), Some(i));
            }
        }
    }

    #[test]
    fn normalization_is_idempotent(v in prop::collection::vec(-100.0f32..100.0, 1..64)) {
        prop_assume!(v.iter().any(|&x| x.abs() > 1e-3));
        let once = normalized(&v).unwrap();
        let twice = normalized(&once).unwrap();
        let n: f64 = once.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        prop_assert!((n - 1.0).abs() <= 1e-6);
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() <= 1e-7);
        }
    }
}
