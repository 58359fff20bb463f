use std::path::Path;

use artkit::cache::{corpus_targets, load_caches, preprocess, CACHE_FORMAT};
use artkit::dataset::{build_dataset, Corpus};
use artkit::prior::{PriorConfig, ShapePrior, TABLES};
use artkit::Error;
use artkit_tensor::{Graph, Tensor};

fn small_prior() -> PriorConfig {
    PriorConfig {
        codebook_rows: 5,
        ..PriorConfig::desk()
    }
}

struct Setup {
    _dir: tempfile::TempDir,
    data: std::path::PathBuf,
    prior: std::path::PathBuf,
    out: std::path::PathBuf,
}

fn setup(count: usize) -> Setup {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let prior = dir.path().join("prior.ckpt");
    let out = dir.path().join("caches");
    build_dataset(&data, count, [0.8, 0.1, 0.1], 5).unwrap();
    ShapePrior::new(&small_prior(), 2).unwrap().save(&prior).unwrap();
    Setup { _dir: dir, data, prior, out }
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn preprocessing_is_byte_stable_and_loads_back() {
    let s = setup(6);
    let m = preprocess(&s.data, &s.prior, &s.out, 9).unwrap();
    assert_eq!(m.format, CACHE_FORMAT);
    assert_eq!(m.objects.len(), 6);
    let first = files(&s.out);
    assert_eq!(first.len(), 2 * 6 + 1);
    preprocess(&s.data, &s.prior, &s.out, 9).unwrap();
    assert_eq!(files(&s.out), first);

    let loaded = load_caches(&s.out, &s.data, &s.prior).unwrap();
    let corpus = Corpus::load(&s.data).unwrap();
    let prior = ShapePrior::load(&s.prior).unwrap();
    let objects: Vec<_> = corpus.objects.iter().collect();
    let fresh = corpus_targets(&prior, &objects, 9).unwrap();
    assert_eq!(loaded.objects.keys().collect::<Vec<_>>(), fresh.objects.keys().collect::<Vec<_>>());
    for (id, parts) in &fresh.objects {
        let got = loaded.get(id).unwrap();
        assert_eq!(got.len(), corpus.get(id).unwrap().tree.len());
        for (a, b) in parts.iter().zip(got) {
            for (x, y) in a.z.iter().chain(&a.c_s).chain(&a.d).zip(b.z.iter().chain(&b.c_s).chain(&b.d)) {
                assert_eq!(*y, *x as f32 as f64);
            }
        }
    }
}

#[test]
fn distance_logits_are_negative_distances_to_codebook_rows() {
    let s = setup(4);
    let corpus = Corpus::load(&s.data).unwrap();
    let prior = ShapePrior::load(&s.prior).unwrap();
    let objects: Vec<_> = corpus.objects.iter().collect();
    let caches = corpus_targets(&prior, &objects, 1).unwrap();
    let n = prior.cfg.codebook_rows;
    let chunk = prior.cfg.c_g / TABLES;
    for parts in caches.objects.values() {
        for p in parts {
            assert_eq!(p.d.len(), TABLES * n);
            assert!(p.d.iter().all(|&v| v <= 0.0));
            // Recompute c_g and every distance by hand.
            let mut g = Graph::new();
            let z = g.constant(Tensor::row(&p.z));
            let c = prior.geometry_condition(&mut g, z).unwrap();
            let c = g.value(c).data().to_vec();
            for t in 0..TABLES {
                let m = prior.codebook(t);
                let by_hand: Vec<f64> = (0..n)
                    .map(|r| {
                        let row = m.row_slice(r);
                        -(0..chunk).map(|k| (c[t * chunk + k] - row[k]).powi(2)).sum::<f64>().sqrt()
                    })
                    .collect();
                for r in 0..n {
                    assert!((p.d[t * n + r] - by_hand[r]).abs() < 1e-9);
                }
                let argmax = |v: &[f64]| (0..v.len()).max_by(|&a, &b| v[a].total_cmp(&v[b])).unwrap();
                assert_eq!(argmax(&p.d[t * n..(t + 1) * n]), argmax(&by_hand));
            }
        }
    }
}

#[test]
fn stale_or_missing_caches_are_refused() {
    let s = setup(3);
    let err = load_caches(&s.out, &s.data, &s.prior).unwrap_err();
    assert!(matches!(err, Error::Missing { .. }));
    assert!(err.to_string().contains("artkit prior preprocess"), "{err}");

    let m = preprocess(&s.data, &s.prior, &s.out, 0).unwrap();

    // A different prior checkpoint.
    ShapePrior::new(&small_prior(), 3).unwrap().save(&s.prior).unwrap();
    let err = load_caches(&s.out, &s.data, &s.prior).unwrap_err();
    assert!(matches!(err, Error::Stale { what: "part cache prior hash", .. }), "{err}");
    preprocess(&s.data, &s.prior, &s.out, 0).unwrap();
    load_caches(&s.out, &s.data, &s.prior).unwrap();

    // Corrupted payload.
    let bin = s.out.join(format!("{}.bin", m.objects[0]));
    let mut bytes = std::fs::read(&bin).unwrap();
    bytes[0] ^= 1;
    std::fs::write(&bin, bytes).unwrap();
    let err = load_caches(&s.out, &s.data, &s.prior).unwrap_err();
    assert!(matches!(err, Error::Stale { what: "part cache data hash", .. }), "{err}");

    // A rebuilt dataset with different contents.
    preprocess(&s.data, &s.prior, &s.out, 0).unwrap();
    build_dataset(&s.data, 4, [0.8, 0.1, 0.1], 5).unwrap();
    let err = load_caches(&s.out, &s.data, &s.prior).unwrap_err();
    assert!(matches!(err, Error::Stale { what: "part cache dataset hash", .. }), "{err}");
    assert!(err.to_string().contains("artkit prior preprocess"));
}
