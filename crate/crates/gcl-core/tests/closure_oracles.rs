//! Closure-metric checks against values computed by independent means:
//! brute-force scalar arithmetic for the cosines, hand-summed means for
//! the curves, and frozen Student-t quantiles for the intervals.

use gcl_core::closure::{
    closure_curve, closure_per_triple, cosine, curve_slope, embed_stimuli, is_flat, read_curves,
    read_records, strictly_increasing, write_curves, write_records, CiMethod, ClosureRecord,
    EmbeddingMatrix, ZeroNorm,
};
use gcl_core::nn::{Head, NetConfig, NetKind, Network};
use gcl_core::stimulus::{build_triples, enumerate_specs, render, spec_index, EDGE_LENGTHS};
use gcl_core::{Normalizer, rng};
use rand::Rng;

fn brute_cosine(x: &[f32], y: &[f32]) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| *a as f64 * *b as f64).sum();
    let nx: f64 = x.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
    let ny: f64 = y.iter().map(|b| (*b as f64).powi(2)).sum::<f64>().sqrt();
    dot / (nx * ny)
}

#[test]
fn cosine_matches_brute_force_on_random_vectors() {
    let mut rng = rng::keyed(0x636f73, &[1]);
    for _ in 0..200 {
        let n = rng.gen_range(1..40);
        let x: Vec<f32> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let y: Vec<f32> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
        if x.iter().all(|v| *v == 0.0) || y.iter().all(|v| *v == 0.0) {
            continue;
        }
        let (s, z) = cosine(&x, &y).unwrap();
        assert_eq!(z, ZeroNorm::Neither);
        assert!((s - brute_cosine(&x, &y)).abs() < 1e-12);
        assert!(s.abs() <= 1.0 + 1e-9);
    }
}

#[test]
fn cosine_is_symmetric_and_scale_invariant() {
    let mut rng = rng::keyed(0x636f73, &[2]);
    for _ in 0..100 {
        let n = rng.gen_range(2..24);
        let x: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f32> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // powers of two scale f32 components exactly
        let alpha: f32 = 2.0f32.powi(rng.gen_range(-6..7));
        let xs: Vec<f32> = x.iter().map(|v| v * alpha).collect();
        let (sxy, _) = cosine(&x, &y).unwrap();
        let (syx, _) = cosine(&y, &x).unwrap();
        let (scaled, _) = cosine(&xs, &y).unwrap();
        assert!((sxy - syx).abs() < 1e-15);
        assert!((sxy - scaled).abs() < 1e-9);
    }
}

/// Three-dimensional hand example: every quantity recomputed with
/// scalar arithmetic right here.
#[test]
fn closure_record_matches_brute_force_3dim() {
    let triples = build_triples(0).unwrap();
    let t = &triples[0];
    let ids = [
        spec_index(&t.complete).unwrap(),
        spec_index(&t.aligned).unwrap(),
        spec_index(&t.disordered).unwrap(),
    ];
    let fc = vec![1.0f32, 2.0, 3.0];
    let fa = vec![4.0f32, 0.5, 1.0];
    let fd = vec![0.25f32, 2.0, 5.0];
    let emb = EmbeddingMatrix::from_rows(
        "fc_finale",
        &ids,
        vec![fc.clone(), fa.clone(), fd.clone()],
    )
    .unwrap();
    let (records, diag) = closure_per_triple(&emb, std::slice::from_ref(t), "hand").unwrap();
    assert_eq!(records.len(), 1);
    let r = &records[0];
    let s_ac = brute_cosine(&fa, &fc);
    let s_dc = brute_cosine(&fd, &fc);
    assert!((r.s_ac - s_ac).abs() < 1e-8);
    assert!((r.s_dc - s_dc).abs() < 1e-8);
    assert!((r.c - (s_ac - s_dc)).abs() < 1e-12);
    assert_eq!(r.c, r.s_ac - r.s_dc);
    assert_eq!(r.edge_length, t.edge_length);
    assert!(diag.one_zero_norm.is_empty());
}

#[test]
fn aligned_equal_to_complete_and_orthogonal_disordered_gives_one() {
    let triples = build_triples(3).unwrap();
    let t = &triples[10];
    let ids = [
        spec_index(&t.complete).unwrap(),
        spec_index(&t.aligned).unwrap(),
        spec_index(&t.disordered).unwrap(),
    ];
    let emb = EmbeddingMatrix::from_rows(
        "fc_finale",
        &ids,
        vec![vec![2.0, 0.0], vec![1.0, 0.0], vec![0.0, 3.0]],
    )
    .unwrap();
    let (records, _) = closure_per_triple(&emb, std::slice::from_ref(t), "m").unwrap();
    assert!((records[0].c - 1.0).abs() < 1e-15);
}

/// Identical aligned and disordered vectors cancel exactly, whatever
/// they are.
#[test]
fn equal_aligned_and_disordered_embeddings_give_exactly_zero() {
    let triples = build_triples(7).unwrap();
    let t = &triples[500];
    let ids = [
        spec_index(&t.complete).unwrap(),
        spec_index(&t.aligned).unwrap(),
        spec_index(&t.disordered).unwrap(),
    ];
    let shared = vec![0.3f32, 1.7, 0.01, 9.0];
    let emb = EmbeddingMatrix::from_rows(
        "fc_finale",
        &ids,
        vec![vec![5.0, 0.5, 2.0, 1.0], shared.clone(), shared],
    )
    .unwrap();
    let (records, _) = closure_per_triple(&emb, std::slice::from_ref(t), "m").unwrap();
    assert_eq!(records[0].c, 0.0);
}

#[test]
fn missing_embedding_is_an_error() {
    let triples = build_triples(0).unwrap();
    let t = &triples[0];
    let emb = EmbeddingMatrix::from_rows(
        "fc_finale",
        &[spec_index(&t.complete).unwrap()],
        vec![vec![1.0, 0.0]],
    )
    .unwrap();
    assert!(closure_per_triple(&emb, std::slice::from_ref(t), "m").is_err());
}

fn rec(model: &str, triple: usize, edge: u8, c: f64) -> ClosureRecord {
    ClosureRecord {
        model_id: model.into(),
        layer: "fc_finale".into(),
        triple_index: triple,
        edge_length: edge,
        s_ac: c.max(0.0),
        s_dc: (-c).max(0.0),
        c,
    }
}

/// Four hand-picked values per group; the group means are summed by
/// hand here, independent of the implementation.
#[test]
fn curve_means_match_hand_sums() {
    let mut records = Vec::new();
    let per_group = [
        (3u8, [0.10, 0.20, -0.05, 0.15]),
        (8u8, [0.30, 0.25, 0.20, 0.25]),
        (13u8, [0.40, 0.45, 0.35, 0.40]),
    ];
    for (i, (edge, cs)) in per_group.iter().enumerate() {
        for (j, c) in cs.iter().enumerate() {
            records.push(rec("m", i * 4 + j, *edge, *c));
        }
    }
    let curve = closure_curve(&records, CiMethod::default()).unwrap();
    assert_eq!(curve.points.len(), 3);
    let expect = [
        (0.10 + 0.20 - 0.05 + 0.15) / 4.0,
        (0.30 + 0.25 + 0.20 + 0.25) / 4.0,
        (0.40 + 0.45 + 0.35 + 0.40) / 4.0,
    ];
    for (p, e) in curve.points.iter().zip(expect) {
        assert!((p.mean_c - e).abs() < 1e-15);
        assert_eq!(p.n, 4);
        assert!(p.ci_defined);
        assert!(p.ci_lo <= p.mean_c && p.mean_c <= p.ci_hi);
    }
}

#[test]
fn degenerate_group_has_zero_width_interval() {
    let records: Vec<ClosureRecord> = (0..6).map(|i| rec("m", i, 3, 0.25)).collect();
    for ci in [CiMethod::default(), CiMethod::TInterval] {
        let curve = closure_curve(&records, ci).unwrap();
        assert_eq!(curve.points[0].mean_c, 0.25);
        assert_eq!(curve.points[0].ci_lo, 0.25);
        assert_eq!(curve.points[0].ci_hi, 0.25);
    }
}

/// t-interval half-width checked against the frozen t quantile
/// t(0.975, df=3) = 3.182446.
#[test]
fn t_interval_matches_frozen_quantile() {
    let cs = [0.1, 0.2, 0.3, 0.4];
    let records: Vec<ClosureRecord> =
        cs.iter().enumerate().map(|(i, c)| rec("m", i, 8, *c)).collect();
    let curve = closure_curve(&records, CiMethod::TInterval).unwrap();
    let mean = 0.25;
    let sd = (cs.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / 3.0).sqrt();
    let half = 3.182446 * sd / 2.0;
    let p = curve.points[0];
    assert!((p.mean_c - mean).abs() < 1e-15);
    assert!((p.ci_lo - (mean - half)).abs() < 1e-5);
    assert!((p.ci_hi - (mean + half)).abs() < 1e-5);
}

#[test]
fn curve_is_invariant_to_record_order() {
    let mut rng = rng::keyed(0x637276, &[4]);
    let mut records = Vec::new();
    for &edge in &EDGE_LENGTHS {
        for i in 0..20 {
            records.push(rec("m", i, edge, rng.gen_range(-0.5..0.5)));
        }
    }
    let a = closure_curve(&records, CiMethod::default()).unwrap();
    use rand::seq::SliceRandom;
    records.shuffle(&mut rng);
    let b = closure_curve(&records, CiMethod::default()).unwrap();
    assert_eq!(a, b);
    assert!(a.covers_all_edge_lengths());
    assert_eq!(a.points.len(), 6);
}

#[test]
fn bootstrap_interval_covers_a_known_mean() {
    // values drawn around 0.3; the 95% band should bracket the sample
    // mean and be visibly narrower than the sample range
    let mut rng = rng::keyed(0x637276, &[5]);
    let records: Vec<ClosureRecord> =
        (0..100).map(|i| rec("m", i, 13, 0.3 + rng.gen_range(-0.1..0.1))).collect();
    let curve = closure_curve(&records, CiMethod::Bootstrap { b: 1000, seed: 9 }).unwrap();
    let p = curve.points[0];
    assert!(p.ci_lo < p.mean_c && p.mean_c < p.ci_hi);
    assert!(p.ci_hi - p.ci_lo < 0.1);
    assert!(p.ci_lo > 0.2 && p.ci_hi < 0.4);
}

#[test]
fn signature_checks_and_slope() {
    let inc: Vec<ClosureRecord> = EDGE_LENGTHS
        .iter()
        .enumerate()
        .flat_map(|(i, &e)| (0..3).map(move |j| rec("m", i * 3 + j, e, 0.02 * e as f64)))
        .collect();
    let curve = closure_curve(&inc, CiMethod::default()).unwrap();
    assert!(strictly_increasing(&curve));
    assert!(!is_flat(&curve, 0.1));
    assert!((curve_slope(&curve).unwrap() - 0.02).abs() < 1e-12);

    let flat: Vec<ClosureRecord> = EDGE_LENGTHS
        .iter()
        .enumerate()
        .flat_map(|(i, &e)| (0..3).map(move |j| rec("m", i * 3 + j, e, 0.001 * (i as f64 - 2.5))))
        .collect();
    let curve = closure_curve(&flat, CiMethod::default()).unwrap();
    assert!(is_flat(&curve, 0.1));
    assert!(curve_slope(&curve).unwrap().abs() < 0.001);
}

#[test]
fn records_and_curves_csv_roundtrip_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = rng::keyed(0x637376, &[6]);
    let mut records = Vec::new();
    for &edge in &EDGE_LENGTHS {
        for i in 0..5 {
            records.push(rec("m0", i, edge, rng.gen_range(-1.0..1.0)));
        }
    }
    let rec_path = dir.path().join("records.csv");
    write_records(&rec_path, &records).unwrap();
    let back = read_records(&rec_path).unwrap();
    assert_eq!(records, back);
    let rec_path2 = dir.path().join("records2.csv");
    write_records(&rec_path2, &back).unwrap();
    assert_eq!(std::fs::read(&rec_path).unwrap(), std::fs::read(&rec_path2).unwrap());

    let mut curves = vec![closure_curve(&records, CiMethod::default()).unwrap()];
    curves.push({
        let single = vec![rec("m0", 0, 3, 0.5)];
        let mut c = closure_curve(&single, CiMethod::default()).unwrap();
        c.model_id = "m1".into();
        c.points[0].n = 1;
        c
    });
    let curve_path = dir.path().join("curves.csv");
    write_curves(&curve_path, &curves).unwrap();
    let back = read_curves(&curve_path).unwrap();
    assert_eq!(curves, back);
    let curve_path2 = dir.path().join("curves2.csv");
    write_curves(&curve_path2, &back).unwrap();
    assert_eq!(std::fs::read(&curve_path).unwrap(), std::fs::read(&curve_path2).unwrap());
}

#[test]
fn embeddings_from_small_net_are_deterministic_and_sized() {
    let config = NetConfig {
        kind: NetKind::Conv,
        n_layers: 2,
        n_classes: 2,
        base_width: 3,
        width_step: 2,
        penultimate_width: 11,
        head: Head::Softmax,
        input_hw: 150,
        input_channels: 3,
    };
    let net = Network::<f32>::custom(&config, 5).unwrap();
    let norm = Normalizer::identity(3);
    let specs = enumerate_specs();
    let images: Vec<_> = specs[..6].iter().map(|s| render(s).unwrap()).collect();
    let ids: Vec<usize> = (0..6).collect();
    let a = embed_stimuli(&net, &norm, &images, &ids, "fc_finale", 4).unwrap();
    let b = embed_stimuli(&net, &norm, &images, &ids, "fc_finale", 3).unwrap();
    assert_eq!(a.dim, 11);
    assert_eq!(a.len(), 6);
    assert!(a.non_negative, "post-ReLU embeddings are non-negative");
    for id in 0..6 {
        assert_eq!(a.vector(id).unwrap(), b.vector(id).unwrap());
    }
    // conv activations are recorded before pooling: 75x75 spatial at
    // the second block, 5 channels
    let c = embed_stimuli(&net, &norm, &images, &ids, "conv2d_2", 4).unwrap();
    assert_eq!(c.dim, 75 * 75 * 5);
    assert!(embed_stimuli(&net, &norm, &images, &ids, "nope", 4).is_err());
}
