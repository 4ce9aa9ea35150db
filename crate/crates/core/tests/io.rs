use p2l::io::{
    encode_embeddings_bin, parse_embeddings_bin, profile_from_json, profile_to_json, read_embeddings,
    write_embeddings_bin, write_embeddings_csv, ProfileRegistry,
};
use p2l::summarize::build_profile;
use p2l::{DatasetProfile, EmbeddingMatrix, Error, Role, Summarizer};
use proptest::prelude::*;

fn matrix() -> impl Strategy<Value = EmbeddingMatrix> {
    (1usize..20, 1usize..10).prop_flat_map(|(rows, dim)| {
        prop::collection::vec(-1e6f64..1e6, rows * dim)
            .prop_map(move |v| EmbeddingMatrix::new(rows, dim, v, "prop-x").unwrap())
    })
}

fn profile() -> impl Strategy<Value = DatasetProfile> {
    (1usize..8, 1usize..16, 1u64..u64::MAX, "[a-z][a-z0-9_-]{0,11}", any::<bool>()).prop_flat_map(
        |(rows, dim, size, name, target)| {
            prop::collection::vec(0.0f64..1e3, rows * dim).prop_map(move |v| {
                let m = EmbeddingMatrix::new(rows, dim, v, "prop-x").unwrap();
                let role = if target { Role::Target } else { Role::Source };
                build_profile(name.clone(), &m, Some(size), Summarizer::Mean, role).unwrap()
            })
        },
    )
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

proptest! {
    #[test]
    fn csv_and_binary_agree(m in matrix()) {
        let dir = tempfile::tempdir().unwrap();
        let (csv, bin) = (dir.path().join("m.csv"), dir.path().join("m.p2le"));
        write_embeddings_csv(&csv, &m).unwrap();
        write_embeddings_bin(&bin, &m).unwrap();
        let (a, b) = (read_embeddings(&csv).unwrap(), read_embeddings(&bin).unwrap());
        prop_assert_eq!((a.items(), a.dim()), (b.items(), b.dim()));
        prop_assert_eq!(a.extractor_id(), b.extractor_id());
        for (x, y) in a.values().iter().zip(b.values()) {
            prop_assert!((x - y).abs() <= 1e-6 * x.abs().max(y.abs()).max(1e-30), "{} vs {}", x, y);
        }
    }

    #[test]
    fn binary_encoding_is_stable(m in matrix()) {
        let once = encode_embeddings_bin(&m).unwrap();
        let again = encode_embeddings_bin(&parse_embeddings_bin(&once).unwrap()).unwrap();
        prop_assert_eq!(once, again);
    }

    #[test]
    fn registry_round_trip_is_bit_exact(p in profile()) {
        let dir = tempfile::tempdir().unwrap();
        let reg = ProfileRegistry::open(dir.path()).unwrap();
        reg.save(&p, false).unwrap();
        let back = reg.load(&p.name).unwrap();
        prop_assert_eq!(bits(&back.summary.values), bits(&p.summary.values));
        prop_assert_eq!(bits(&back.summary.raw_mean), bits(&p.summary.raw_mean));
        prop_assert_eq!(&back, &p);
        prop_assert!(matches!(reg.save(&p, false), Err(Error::NameCollision(_))));
    }

    #[test]
    fn json_round_trip_of_arbitrary_doubles(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        let m = EmbeddingMatrix::new(1, 1, vec![1.0], "e").unwrap();
        let mut p = build_profile("one", &m, None, Summarizer::Mean, Role::Source).unwrap();
        p.summary.raw_mean = vec![x];
        let back = profile_from_json(&profile_to_json(&p).unwrap()).unwrap();
        prop_assert_eq!(back.summary.raw_mean[0].to_bits(), x.to_bits());
    }
}

#[test]
fn pi_survives_the_registry() {
    let dir = tempfile::tempdir().unwrap();
    let reg = ProfileRegistry::open(dir.path()).unwrap();
    let m = EmbeddingMatrix::new(1, 2, vec![std::f64::consts::PI, 1.0], "e").unwrap();
    let p = build_profile("pi", &m, None, Summarizer::Mean, Role::Source).unwrap();
    reg.save(&p, false).unwrap();
    let back = reg.load("pi").unwrap();
    assert_eq!(back.summary.raw_mean[0].to_bits(), std::f64::consts::PI.to_bits());
}

#[test]
fn listing_is_sorted_and_skips_foreign_files() {
    let dir = tempfile::tempdir().unwrap();
    let reg = ProfileRegistry::open(dir.path()).unwrap();
    let m = EmbeddingMatrix::new(1, 2, vec![0.5, 1.0], "e").unwrap();
    for name in ["zeta", "alpha", "mid-1"] {
        reg.save(&build_profile(name, &m, None, Summarizer::Mean, Role::Source).unwrap(), false).unwrap();
    }
    std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
    assert_eq!(reg.list().unwrap(), ["alpha", "mid-1", "zeta"]);
    assert!(matches!(reg.load("missing"), Err(Error::NotFound(_))));
    let reopened = ProfileRegistry::open(dir.path()).unwrap();
    assert_eq!(reopened.load_all().unwrap().len(), 3);
}
