use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use contextnav::embedstore::{EmbeddingRecord, Store};
use contextnav::remb::{
    load_store, read_remb, read_sidecar, save_store, write_remb, AppendLog, FormatError, RembRecord, SidecarEntry,
};
use contextnav::simgraph::{build_affinity, build_graph, GraphVariant, SimilarityGraph};

fn records(rng: &mut impl Rng, n: usize, dim: usize) -> Vec<RembRecord> {
    (0..n)
        .map(|i| RembRecord {
            frame_id: rng.random::<u64>() ^ i as u64,
            vector: (0..dim)
                .map(|_| f32::from_bits(rng.random::<u32>() & 0xbf7f_ffff))
                .collect(),
        })
        .collect()
}

#[test]
fn remb_header_layout() {
    let mut buf = Vec::new();
    write_remb(
        &mut buf,
        3,
        &[RembRecord {
            frame_id: 5,
            vector: vec![1.0, -2.0, 0.5],
        }],
    )
    .unwrap();
    assert_eq!(&buf[..4], b"REMB");
    assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
    assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 3);
    assert_eq!(u64::from_le_bytes(buf[12..20].try_into().unwrap()), 1);
    assert_eq!(u64::from_le_bytes(buf[20..28].try_into().unwrap()), 5);
    assert_eq!(f32::from_le_bytes(buf[32..36].try_into().unwrap()), -2.0);
    assert_eq!(buf.len(), 20 + 8 + 12);
}

#[test]
fn remb_rejects_bad_magic_and_version() {
    let mut buf = Vec::new();
    write_remb(&mut buf, 1, &[]).unwrap();
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(read_remb(&bad[..]), Err(FormatError::BadMagic(_))));
    let mut bad = buf.clone();
    bad[4] = 2;
    assert!(matches!(read_remb(&bad[..]), Err(FormatError::BadVersion(2))));
    let mut short = Vec::new();
    write_remb(
        &mut short,
        2,
        &[RembRecord {
            frame_id: 1,
            vector: vec![1.0, 2.0],
        }],
    )
    .unwrap();
    short.truncate(short.len() - 3);
    assert!(read_remb(&short[..]).is_err());
}

#[test]
fn remb_round_trip_is_bit_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for dim in [1, 7, 256] {
        let recs = records(&mut rng, 300, dim);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.remb");
        write_remb(File::create(&path).unwrap(), dim, &recs).unwrap();
        let (d, back) = read_remb(File::open(&path).unwrap()).unwrap();
        assert_eq!(d, dim);
        assert_eq!(back.len(), recs.len());
        for (a, b) in recs.iter().zip(&back) {
            assert_eq!(a.frame_id, b.frame_id);
            assert!(a.vector.iter().zip(&b.vector).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}

#[test]
fn store_save_load_keeps_vectors_and_metadata() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut s = Store::<f32>::new(16).unwrap();
    for id in 0..200u64 {
        let v: Vec<f32> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut r = EmbeddingRecord::new(id, format!("s{}", id % 3), v).with_pose([id as f64 * 0.25, 1.5]);
        if id % 5 == 0 {
            r = r.with_category_scores(BTreeMap::from([
                ("chair".to_string(), 0.3),
                ("sofa".to_string(), -1.25),
            ]));
        }
        s.add_record(r).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    let (remb, side) = (dir.path().join("d.remb"), dir.path().join("d.jsonl"));
    save_store(&s, &remb, &side).unwrap();
    let back: Store<f32> = load_store(&remb, &side).unwrap();
    assert_eq!(back.len(), s.len());
    for i in 0..s.len() {
        assert_eq!(back.frame_id(i), s.frame_id(i));
        assert!(back
            .vector(i)
            .iter()
            .zip(s.vector(i))
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(back.meta(i), s.meta(i));
    }
    assert_eq!(read_sidecar(File::open(&side).unwrap()).unwrap().len(), 200);
}

#[test]
fn append_log_survives_torn_tail() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let dir = tempfile::tempdir().unwrap();
    let (remb, side) = (dir.path().join("l.remb"), dir.path().join("l.jsonl"));
    let entry = |r: &RembRecord| SidecarEntry {
        frame_id: r.frame_id,
        scene: "a".into(),
        pose: None,
        category_scores: None,
    };
    let first = records(&mut rng, 10, 4);
    {
        let (mut log, old, _) = AppendLog::open(&remb, &side, 4, true).unwrap();
        assert!(old.is_empty());
        log.append(&first, &first.iter().map(entry).collect::<Vec<_>>())
            .unwrap();
    }
    // half a record of garbage, as from a crash mid-append
    File::options()
        .append(true)
        .open(&remb)
        .unwrap()
        .write_all(&[7u8; 13])
        .unwrap();
    let (mut log, old, meta) = AppendLog::open(&remb, &side, 4, true).unwrap();
    assert_eq!(old, first);
    assert_eq!(meta.len(), 10);
    let second = records(&mut rng, 3, 4);
    log.append(&second, &second.iter().map(entry).collect::<Vec<_>>())
        .unwrap();
    drop(log);
    let (_, all) = read_remb(File::open(&remb).unwrap()).unwrap();
    assert_eq!(all.len(), 13);
    assert_eq!(&all[10..], &second[..]);
    assert!(matches!(
        AppendLog::open(&remb, &side, 5, true),
        Err(FormatError::Dimension { .. })
    ));
}

#[test]
fn graph_json_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mut s = Store::<f64>::new(3).unwrap();
    for id in 0..60u64 {
        let v = vec![1.0, rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6)];
        s.add_record(EmbeddingRecord::new(id, "a", v)).unwrap();
    }
    let aff = build_affinity(&s, "a").unwrap();
    for variant in [GraphVariant::Swg, GraphVariant::Sbg, GraphVariant::Dwg] {
        let g = build_graph(&aff, variant, None, None).unwrap();
        assert!(!g.edges().is_empty());
        let text = serde_json::to_string(&g).unwrap();
        let back: SimilarityGraph = serde_json::from_str(&text).unwrap();
        assert_eq!(back.nodes(), g.nodes());
        assert_eq!(back.edges().len(), g.edges().len());
        for (a, b) in g.edges().iter().zip(back.edges()) {
            assert_eq!((a.0, a.1), (b.0, b.1));
            assert!((a.2 - b.2).abs() <= 1e-9);
        }
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["variant"], variant.name());
        assert!(v["edges"][0].as_array().unwrap().len() == 3);
    }
}

proptest! {
    #[test]
    fn any_f32_bits_round_trip(bits in prop::collection::vec(any::<u32>(), 1..64), id in any::<u64>()) {
        let rec = RembRecord { frame_id: id, vector: bits.iter().map(|&b| f32::from_bits(b)).collect() };
        let mut buf = Vec::new();
        write_remb(&mut buf, bits.len(), std::slice::from_ref(&rec)).unwrap();
        let (_, back) = read_remb(&buf[..]).unwrap();
        prop_assert_eq!(back[0].frame_id, id);
        prop_assert_eq!(back[0].vector.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), bits);
    }
}
