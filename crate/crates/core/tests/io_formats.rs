mod common;

use hidemk::filter::{ImportanceMatrix, KnockoffStats};
use hidemk::io;
use hidemk::knockoff::scit_generate;
use hidemk::model::{build_with_l1, ArchitectureConfig};
use hidemk::nn::{forward, Activation, EpochRecord, MetricKind, ModelState, TrainHistory};
use hidemk::sim::{simulate_dataset, SimConfig, TraitKind};

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

#[test]
fn importance_round_trip_is_exact() {
    let mut rng = common::rng(1);
    let v = common::random_tensor(&mut rng, vec![7 * 4], 1.0).into_data().into_iter().map(f64::abs).collect();
    let t = ImportanceMatrix::with_default_ids(7, 3, v).unwrap();
    let d = tmp();
    let path = d.path().join("t.csv");
    io::write_importance(&path, &t).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("variant_id,t0,t1,t2,t3\n"));
    assert_eq!(io::read_importance(&path).unwrap(), t);
}

#[test]
fn importance_reader_rejects_bad_header() {
    let d = tmp();
    let path = d.path().join("bad.csv");
    std::fs::write(&path, "id,a,b\nv0,1,2\n").unwrap();
    assert!(io::read_importance(&path).is_err());
    std::fs::write(&path, "variant_id,t0,t1\nv0,1,-2\n").unwrap();
    assert!(io::read_importance(&path).is_err());
}

#[test]
fn selection_csv_matches_filter() {
    let t = ImportanceMatrix::with_default_ids(
        4,
        2,
        vec![5.0, 1.0, 0.0, 0.0, 2.0, 1.0, 3.0, 1.0, 1.0, 0.5, 0.2, 0.1],
    )
    .unwrap();
    let st = KnockoffStats::compute(&t).unwrap();
    let d = tmp();
    let path = d.path().join("sel.csv");
    io::write_selection_table(&path, t.ids(), &[("hidemk", &st)], &[0.1, 0.2]).unwrap();
    let mut r = csv::Reader::from_path(&path).unwrap();
    let h: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(h, ["method", "variant_id", "kappa", "tau", "W", "q", "selected@0.10", "selected@0.20"]);
    let sel = st.select(0.2);
    for (j, rec) in r.records().enumerate() {
        let rec = rec.unwrap();
        assert_eq!(rec[2].parse::<usize>().unwrap(), st.kappa[j]);
        assert_eq!(&rec[7] == "1", sel.contains(&j));
    }
}

#[test]
fn genotype_trait_and_knockoff_round_trip() {
    let cfg = SimConfig { n: 120, p: 30, ..SimConfig::default() };
    let ds = simulate_dataset(&cfg, TraitKind::Quantitative, 3).unwrap();
    let d = tmp();
    let (gp, mp, tp, kp) =
        (d.path().join("g.csv"), d.path().join("meta.csv"), d.path().join("y.csv"), d.path().join("k.csv"));
    io::write_genotypes(&gp, &ds.genotypes).unwrap();
    io::write_variant_metadata(&mp, &ds.genotypes).unwrap();
    io::write_trait(&tp, &ds.phenotype).unwrap();
    let g = io::read_genotypes(&gp, Some(&mp)).unwrap();
    assert_eq!(g.ids(), ds.genotypes.ids());
    assert_eq!(g.positions(), ds.genotypes.positions());
    assert_eq!(g.to_dmatrix(), ds.genotypes.to_dmatrix());
    let (y, x1) = io::read_trait(&tp).unwrap();
    assert_eq!(y, ds.phenotype.y);
    assert_eq!(x1, ds.phenotype.x1);

    let x = g.to_dmatrix();
    let k = scit_generate(&x, 2, 4, 9).unwrap();
    io::write_knockoffs(&kp, g.ids(), &k).unwrap();
    let header = std::fs::read_to_string(&kp).unwrap().lines().next().unwrap().to_string();
    assert!(header.starts_with(&format!("{0}@k1,{0}@k2,", g.ids()[0])));
    let back = io::read_knockoffs(&kp, 9, 4).unwrap();
    assert_eq!(back.values(), k.values());
    assert_eq!((back.n(), back.p(), back.m()), (k.n(), k.p(), k.m()));
}

#[test]
fn checkpoint_round_trip_reproduces_predictions() {
    let arch = ArchitectureConfig {
        p: 12,
        knockoffs: 2,
        sigma: 4,
        theta: 3,
        dense: vec![5],
        covariates: 1,
        activation: Activation::Elu,
        head: Activation::Sigmoid,
        ..ArchitectureConfig::default()
    };
    let built = build_with_l1(&arch, 1e-3).unwrap();
    let state = ModelState::init(&built.spec, 77);
    let mut rng = common::rng(2);
    let x = common::random_tensor(&mut rng, vec![6, 12, 3], 1.0);
    let cov = common::random_tensor(&mut rng, vec![6, 1], 1.0);
    let d = tmp();
    let path = d.path().join("model.bin");
    io::write_checkpoint(&path, &arch, 1e-3, &state).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"HDMK");
    let (header, rebuilt, loaded) = io::read_checkpoint(&path).unwrap();
    assert_eq!(header.arch, arch);
    assert_eq!(loaded.params, state.params);
    let a = forward(&built.spec, &state, &x, Some(&cov)).unwrap();
    let b = forward(&rebuilt.spec, &loaded, &x, Some(&cov)).unwrap();
    assert_eq!(a, b);

    let mut corrupt = bytes.clone();
    corrupt.truncate(bytes.len() - 8);
    std::fs::write(&path, &corrupt).unwrap();
    assert!(io::read_checkpoint(&path).is_err());
    std::fs::write(&path, b"NOPE").unwrap();
    assert!(io::read_checkpoint(&path).is_err());
}

#[test]
fn history_csv_has_blank_missing_fields() {
    let h = TrainHistory {
        metric: MetricKind::Mse,
        records: vec![EpochRecord { epoch: 1, train_loss: 0.5, val_loss: None, val_metric: None }],
    };
    let d = tmp();
    let path = d.path().join("h.csv");
    io::write_history(&path, &h).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), "epoch,train_loss,val_loss,val_metric\n1,0.5,,\n");
}

#[test]
fn manifest_round_trip() {
    let d = tmp();
    let path = d.path().join("manifest.json");
    let mut m = io::Manifest::new("simulate", Some(4), &SimConfig::default()).unwrap();
    m.failed = 2;
    m.outputs.push("g.csv".into());
    m.write(&path).unwrap();
    let back: io::Manifest = io::read_json(&path).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.version, env!("CARGO_PKG_VERSION"));
}
