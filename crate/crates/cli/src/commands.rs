use std::fs;
use std::path::{Path, PathBuf};

use hidemk::filter::{importance_matrix, KnockoffStats};
use hidemk::harness::{
    aggregate_curves, augmented_input, base_run, method_architecture, method_statistics, network_importance,
    resolve_run, run_pipeline, CurveRow, Method, PipelineConfig, ReplicateReport, StudyInputs,
};
use hidemk::io::{self, Manifest};
use hidemk::knockoff::{scit_generate, KnockoffTensor};
use hidemk::model::{build, comparison_architectures, train, TrainData};
use hidemk::nn::{input_gradients, Tensor};
use hidemk::sim::{simulate_dataset, GenotypeMatrix, TraitKind};
use hidemk::{seed, Error, Result};
use nalgebra::DMatrix;
use serde_json::json;

use crate::{Command, Common, DataArgs};

pub fn run(command: Command) -> Result<PathBuf> {
    match command {
        Command::Simulate { trait_kind, common } => simulate(&trait_kind, &common),
        Command::Knockoff { genotypes, metadata, m, window, common } => {
            knockoff(&genotypes, metadata.as_deref(), m, window, &common)
        }
        Command::Train { data, method, common } => train_cmd(&data, &method, &common),
        Command::Importance { data, model, method, ensemble, common } => {
            importance(&data, model.as_deref(), &method, ensemble, &common)
        }
        Command::Select { importance, m, alpha, common } => select(&importance, m, &alpha, &common),
        Command::Baseline { data, method, alpha, common } => baseline(&data, &method, &alpha, &common),
        Command::Pipeline { replicates, trait_kind, methods, append, common } => {
            pipeline(replicates, trait_kind.as_deref(), methods.as_deref(), append, &common)
        }
        Command::Counts { p, m, sigma, theta, common } => counts(p, m, sigma, theta, &common),
        Command::SweepKernel { sigmas, replicates, trait_kind, common } => {
            sweep_kernel(&sigmas, replicates, trait_kind.as_deref(), &common)
        }
        Command::Aggregate { reports, common } => aggregate(&reports, &common),
    }
}

/// Config from `--config` (or defaults) with `--seed` / `--threads` applied.
fn load_config(common: &Common) -> Result<PipelineConfig> {
    let mut cfg: PipelineConfig = match &common.config {
        Some(path) => io::read_json(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.master_seed = s;
    }
    if common.threads.is_some() {
        cfg.threads = common.threads;
    }
    if let Some(t) = cfg.threads {
        // Fails only if a pool already exists, which is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global();
    }
    fs::create_dir_all(&common.out)?;
    Ok(cfg)
}

fn finish(mut manifest: Manifest, common: &Common, outputs: Vec<PathBuf>) -> Result<PathBuf> {
    manifest.outputs = outputs;
    let path = common.out.join("manifest.json");
    manifest.write(&path)?;
    Ok(path)
}

fn parse_method(s: &str) -> Result<Method> {
    s.parse()
}

struct LoadedData {
    genotypes: GenotypeMatrix,
    x: DMatrix<f64>,
    knockoffs: KnockoffTensor,
    y: Vec<f64>,
    covariate: Tensor,
}

impl LoadedData {
    fn read(args: &DataArgs) -> Result<Self> {
        let genotypes = io::read_genotypes(&args.genotypes, args.metadata.as_deref())?;
        let knockoffs = io::read_knockoffs(&args.knockoffs, 0, 0)?;
        let (y, x1) = io::read_trait(&args.trait_file)?;
        let n = genotypes.n();
        if knockoffs.n() != n || knockoffs.p() != genotypes.p() || y.len() != n {
            return Err(Error::Shape(format!(
                "genotypes {}×{}, knockoffs {}×{}, trait {} rows",
                n,
                genotypes.p(),
                knockoffs.n(),
                knockoffs.p(),
                y.len()
            )));
        }
        let covariate = Tensor::new(vec![n, 1], x1)?;
        Ok(Self { x: genotypes.to_dmatrix(), genotypes, knockoffs, y, covariate })
    }

    fn inputs(&self, seed: u64) -> StudyInputs<'_> {
        StudyInputs {
            x: &self.x,
            knockoffs: &self.knockoffs,
            covariate: &self.covariate,
            y: &self.y,
            ids: self.genotypes.ids(),
            seed,
        }
    }
}

/// Config adjusted to the files on disk.
fn data_config(common: &Common, args: &DataArgs, data: &LoadedData) -> Result<PipelineConfig> {
    let mut cfg = load_config(common)?;
    cfg.trait_kind = args.trait_kind.parse::<TraitKind>()?;
    cfg.knockoffs = data.knockoffs.m();
    cfg.sim.n = data.x.nrows();
    Ok(cfg)
}

fn simulate(trait_kind: &str, common: &Common) -> Result<PathBuf> {
    let mut cfg = load_config(common)?;
    cfg.trait_kind = trait_kind.parse()?;
    let ds = simulate_dataset(&cfg.sim, cfg.trait_kind, cfg.master_seed)?;
    let out = &common.out;
    let files = [out.join("genotypes.csv"), out.join("variants.csv"), out.join("trait.csv")];
    io::write_genotypes(&files[0], &ds.genotypes)?;
    io::write_variant_metadata(&files[1], &ds.genotypes)?;
    io::write_trait(&files[2], &ds.phenotype)?;
    let mut m = Manifest::new("simulate", Some(cfg.master_seed), &cfg)?;
    m.extra = json!({
        "trait": cfg.trait_kind,
        "causal": ds.causal,
        "causal_ids": ds.causal.iter().map(|&j| ds.genotypes.ids()[j].clone()).collect::<Vec<_>>(),
        "trait_spec": ds.trait_spec,
        "intercept": ds.phenotype.intercept,
        "p": ds.genotypes.p(),
    });
    finish(m, common, files.to_vec())
}

fn knockoff(genotypes: &Path, metadata: Option<&Path>, m: usize, window: usize, common: &Common) -> Result<PathBuf> {
    let mut cfg = load_config(common)?;
    cfg.knockoffs = m;
    cfg.window = window;
    let g = io::read_genotypes(genotypes, metadata)?;
    let s = seed::derive(cfg.master_seed, &[seed::stream::KNOCKOFF]);
    let k = scit_generate(&g.to_dmatrix(), m, window, s)?;
    let path = common.out.join("knockoffs.csv");
    io::write_knockoffs(&path, g.ids(), &k)?;
    let mut man = Manifest::new("knockoff", Some(cfg.master_seed), &cfg)?;
    man.extra = json!({ "knockoff_seed": s, "n": g.n(), "p": g.p(), "m": m, "window": window });
    finish(man, common, vec![path])
}

fn train_cmd(args: &DataArgs, method: &str, common: &Common) -> Result<PathBuf> {
    let method = parse_method(method)?;
    let data = LoadedData::read(args)?;
    let cfg = data_config(common, args, &data)?;
    let inputs = data.inputs(cfg.master_seed);
    let arch = method_architecture(&cfg, method, data.x.ncols())
        .ok_or_else(|| Error::InvalidConfig(format!("{method} does not train a network")))?;
    let xa = augmented_input(&inputs, &arch)?;
    let cov = cfg.network.use_covariate.then_some(&data.covariate);
    let td = TrainData { x: &xa, cov, y: &data.y };
    let run = resolve_run(&cfg, &arch, base_run(&cfg, &inputs), td)?;
    let rows: Vec<usize> = (0..data.x.nrows()).collect();
    let model = train(&arch, &run, td, &rows, None)?;
    let (ckpt, hist) = (common.out.join("model.bin"), common.out.join("history.csv"));
    io::write_checkpoint(&ckpt, &arch, run.l1, &model.state)?;
    io::write_history(&hist, &model.history)?;
    let mut m = Manifest::new("train", Some(cfg.master_seed), &cfg)?;
    m.extra = json!({ "method": method, "architecture": arch, "run": run });
    finish(m, common, vec![ckpt, hist])
}

fn importance(
    args: &DataArgs,
    model: Option<&Path>,
    method: &str,
    ensemble: Option<usize>,
    common: &Common,
) -> Result<PathBuf> {
    let method = parse_method(method)?;
    let data = LoadedData::read(args)?;
    let mut cfg = data_config(common, args, &data)?;
    if let Some(r) = ensemble {
        cfg.ensemble = r;
    }
    let inputs = data.inputs(cfg.master_seed);
    let mut extra = json!({ "method": method });
    let t = match model {
        Some(path) => {
            let (header, built, state) = io::read_checkpoint(path)?;
            if header.arch.p != data.x.ncols() || header.arch.knockoffs > data.knockoffs.m() {
                return Err(Error::Shape(format!(
                    "checkpoint expects p = {}, M = {}; data has p = {}, M = {}",
                    header.arch.p,
                    header.arch.knockoffs,
                    data.x.ncols(),
                    data.knockoffs.m()
                )));
            }
            let xa = augmented_input(&inputs, &header.arch)?;
            let cov = (header.arch.covariates > 0).then_some(&data.covariate);
            let grad = input_gradients(&built.spec, &state, &xa, cov)?;
            extra = json!({ "model": path });
            importance_matrix(&grad, Some(data.genotypes.ids().to_vec()))?
        }
        None => {
            let (t, epochs) = network_importance(&cfg, &inputs, method)?;
            extra["epochs"] = json!(epochs);
            extra["ensemble"] = json!(if method == Method::Hidemk { 1 } else { cfg.ensemble });
            t
        }
    };
    let path = common.out.join("importance.csv");
    io::write_importance(&path, &t)?;
    let mut m = Manifest::new("importance", Some(cfg.master_seed), &cfg)?;
    m.extra = extra;
    finish(m, common, vec![path])
}

fn select(importance: &Path, m: Option<usize>, alphas: &[f64], common: &Common) -> Result<PathBuf> {
    let cfg = load_config(common)?;
    if alphas.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
        return Err(Error::InvalidConfig("alpha must lie in (0, 1)".into()));
    }
    let mut t = io::read_importance(importance)?;
    if let Some(m) = m {
        if m != t.knockoffs() {
            t = t.truncate_knockoffs(m)?;
        }
    }
    let st = KnockoffStats::compute(&t)?;
    let path = common.out.join("selection.csv");
    io::write_selection(&path, t.ids(), &st, alphas)?;
    let mut man = Manifest::new("select", common.seed, &cfg)?;
    man.extra = json!({
        "importance": importance,
        "m": t.knockoffs(),
        "alpha": alphas,
        "selected": alphas.iter().map(|&a| st.select(a).len()).collect::<Vec<_>>(),
    });
    finish(man, common, vec![path])
}

fn baseline(args: &DataArgs, methods: &[String], alphas: &[f64], common: &Common) -> Result<PathBuf> {
    let data = LoadedData::read(args)?;
    let cfg = data_config(common, args, &data)?;
    let inputs = data.inputs(cfg.master_seed);
    let mut results = Vec::new();
    for name in methods {
        let method = parse_method(name)?;
        if method.baseline().is_none() {
            return Err(Error::InvalidConfig(format!("{method} is not a baseline method")));
        }
        results.push((method, method_statistics(&cfg, &inputs, method)?.0));
    }
    let entries: Vec<(&str, &KnockoffStats)> = results.iter().map(|(m, s)| (m.as_str(), s)).collect();
    let path = common.out.join("selection.csv");
    io::write_selection_table(&path, data.genotypes.ids(), &entries, alphas)?;
    let mut m = Manifest::new("baseline", Some(cfg.master_seed), &cfg)?;
    m.extra = json!({ "methods": methods, "alpha": alphas });
    finish(m, common, vec![path])
}

fn pipeline_config(
    common: &Common,
    replicates: Option<usize>,
    trait_kind: Option<&str>,
    methods: Option<&[String]>,
) -> Result<PipelineConfig> {
    let mut cfg = load_config(common)?;
    if let Some(r) = replicates {
        cfg.replicates = r;
    }
    if let Some(t) = trait_kind {
        cfg.trait_kind = t.parse()?;
    }
    if let Some(ms) = methods {
        cfg.methods = ms.iter().map(|m| parse_method(m)).collect::<Result<_>>()?;
    }
    cfg.output_dir = Some(common.out.clone());
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one study into `dir`; returns the reports used for the curves.
fn study(cfg: &PipelineConfig, dir: &Path, append: bool) -> Result<(Vec<ReplicateReport>, Vec<CurveRow>, Vec<PathBuf>)> {
    fs::create_dir_all(dir)?;
    let reports_path = dir.join("reports.jsonl");
    if !append && reports_path.exists() {
        fs::remove_file(&reports_path)?;
    }
    let reports = run_pipeline(cfg)?;
    io::append_reports(&reports_path, &reports)?;
    let all = io::read_reports(&reports_path)?;
    let curves = aggregate_curves(&all)?;
    let curves_path = dir.join("curves.csv");
    io::write_curves(&curves_path, &curves)?;
    Ok((all, curves, vec![reports_path, curves_path]))
}

fn pipeline(
    replicates: Option<usize>,
    trait_kind: Option<&str>,
    methods: Option<&[String]>,
    append: bool,
    common: &Common,
) -> Result<PathBuf> {
    let cfg = pipeline_config(common, replicates, trait_kind, methods)?;
    let (reports, _, outputs) = study(&cfg, &common.out, append)?;
    let mut m = Manifest::new("pipeline", Some(cfg.master_seed), &cfg)?;
    m.failed = reports.iter().filter(|r| r.failed()).count();
    m.extra = json!({ "reports": reports.len(), "appended": append });
    finish(m, common, outputs)
}

fn counts(p: usize, m: usize, sigma: usize, theta: usize, common: &Common) -> Result<PathBuf> {
    let cfg = load_config(common)?;
    let path = common.out.join("counts.csv");
    let mut w = csv::Writer::from_path(&path).map_err(Error::from)?;
    w.write_record(["levels", "layer", "kind", "output_width", "weights", "biases", "activations"])?;
    let mut totals = Vec::new();
    for arch in comparison_architectures(p, m, sigma, theta) {
        let built = build(&arch)?;
        for (i, l) in built.layers.iter().enumerate() {
            w.write_record([
                arch.levels.to_string(),
                i.to_string(),
                l.kind.clone(),
                l.output_width.to_string(),
                l.weights.to_string(),
                l.biases.to_string(),
                l.activations.to_string(),
            ])?;
        }
        let weights: usize = built.layers.iter().map(|l| l.weights).sum();
        w.write_record([
            arch.levels.to_string(),
            "total".into(),
            String::new(),
            String::new(),
            weights.to_string(),
            (built.parameters - weights).to_string(),
            built.activations.to_string(),
        ])?;
        println!(
            "levels={} parameters={} weights={} activations={}",
            arch.levels, built.parameters, weights, built.activations
        );
        totals.push(json!({ "levels": arch.levels, "parameters": built.parameters, "weights": weights, "activations": built.activations }));
    }
    w.flush()?;
    let mut man = Manifest::new("counts", None, &cfg)?;
    man.extra = json!({ "p": p, "m": m, "sigma": sigma, "theta": theta, "totals": totals });
    finish(man, common, vec![path])
}

fn sweep_kernel(sigmas: &[usize], replicates: Option<usize>, trait_kind: Option<&str>, common: &Common) -> Result<PathBuf> {
    if sigmas.is_empty() {
        return Err(Error::InvalidConfig("no kernel sizes given".into()));
    }
    let base = pipeline_config(common, replicates, trait_kind, None)?;
    let sweep_path = common.out.join("sweep.csv");
    let mut w = csv::Writer::from_path(&sweep_path).map_err(Error::from)?;
    w.write_record([
        "sigma", "method", "trait", "target_fdr", "fdr_mean", "fdr_se", "power_mean", "power_se", "n_replicates",
    ])?;
    let mut outputs = vec![sweep_path];
    let mut failed = 0;
    for &sigma in sigmas {
        let mut cfg = base.clone();
        cfg.network.sigma = sigma;
        let (reports, curves, files) = study(&cfg, &common.out.join(format!("sigma{sigma}")), false)?;
        failed += reports.iter().filter(|r| r.failed()).count();
        outputs.extend(files);
        for c in curves {
            w.write_record([
                sigma.to_string(),
                c.method,
                c.trait_kind,
                c.target_fdr.to_string(),
                c.fdr_mean.to_string(),
                c.fdr_se.to_string(),
                c.power_mean.to_string(),
                c.power_se.to_string(),
                c.n_replicates.to_string(),
            ])?;
        }
    }
    w.flush()?;
    let mut m = Manifest::new("sweep-kernel", Some(base.master_seed), &base)?;
    m.failed = failed;
    m.extra = json!({ "sigmas": sigmas });
    finish(m, common, outputs)
}

fn aggregate(paths: &[PathBuf], common: &Common) -> Result<PathBuf> {
    let cfg = load_config(common)?;
    let mut reports = Vec::new();
    for p in paths {
        reports.extend(io::read_reports(p)?);
    }
    let curves = aggregate_curves(&reports)?;
    let path = common.out.join("curves.csv");
    io::write_curves(&path, &curves)?;
    let mut m = Manifest::new("aggregate", None, &cfg)?;
    m.failed = reports.iter().filter(|r| r.failed()).count();
    m.extra = json!({ "reports": paths, "rows": curves.len() });
    finish(m, common, vec![path])
}
