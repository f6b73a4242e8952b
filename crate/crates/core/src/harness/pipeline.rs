use std::collections::{BTreeMap, HashSet};
use std::fs::{self, OpenOptions};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::data::{read_dataset, sample_dataset, write_dataset, Dataset, SampleRecord};
use crate::engine::{
    estimate_fisher, generate_explanations, write_bundle, BundleMeta, BundleSummary, EngineConfig, Explanation,
    FisherEstimate, Interpolated, Method,
};
use crate::eval::{classifier_ground_truth_bias, evaluate_items, select_eval_set, EvalItem, MetricsReport};
use crate::models::mlp::stack_rows;
use crate::models::{
    load_classifier, load_oracle, load_vae, train_classifier, train_oracle, train_vae, Classifier, ModelCheckpoint,
    Oracle, ReconMode, TrainConfig, TrainLog, Vae,
};
use crate::tensor::{SeededRng, Tensor};
use crate::{Error, Result};

/// Generative model flavours. Each method runs on one of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VaeVariant {
    /// The configured β-TCVAE.
    Main,
    /// β-TCVAE with pixel reconstruction.
    Pixel,
    /// Plain VAE (β = 1) with pixel reconstruction.
    Plain,
}

impl VaeVariant {
    pub const ALL: [VaeVariant; 3] = [Self::Main, Self::Pixel, Self::Plain];

    pub fn name(self) -> &'static str {
        match self {
            Self::Main => "vae",
            Self::Pixel => "vae_pixel",
            Self::Plain => "vae_plain",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    pub fn for_method(m: Method) -> Self {
        match m {
            Method::DiveMinus => Self::Pixel,
            Method::XgemPlus => Self::Plain,
            _ => Self::Main,
        }
    }

    pub fn train_config(self, base: &TrainConfig) -> TrainConfig {
        match self {
            Self::Main => base.clone(),
            Self::Pixel => TrainConfig {
                recon: ReconMode::Pixel,
                ..base.clone()
            },
            Self::Plain => TrainConfig {
                recon: ReconMode::Pixel,
                beta: 1.0,
                ..base.clone()
            },
        }
    }
}

/// Artifact layout under the output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Paths {
    pub root: PathBuf,
}

impl Paths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset.divd")
    }
    /// Unbiased dataset for the oracle; its validation split is the
    /// explanation pool.
    pub fn oracle_dataset(&self) -> PathBuf {
        self.root.join("oracle_data.divd")
    }
    pub fn oracle(&self) -> PathBuf {
        self.root.join("oracle.divc")
    }
    pub fn classifier(&self) -> PathBuf {
        self.root.join("classifier.divc")
    }
    pub fn vae(&self, v: VaeVariant) -> PathBuf {
        self.root.join(format!("{}.divc", v.name()))
    }
    pub fn train_log(&self, model: &str) -> PathBuf {
        self.root.join(format!("{model}_log.csv"))
    }
    pub fn fisher(&self, v: VaeVariant) -> PathBuf {
        self.root.join(format!("fisher_{}.divf", v.name()))
    }
    pub fn bundles(&self) -> PathBuf {
        self.root.join("bundles")
    }
    pub fn bundle(&self, method: Method, index: usize) -> PathBuf {
        self.bundles().join(method.name()).join(index.to_string())
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }
    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.toml")
    }
    pub fn sweep(&self) -> PathBuf {
        self.root.join("sweep.csv")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report.md")
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Sample and write both datasets. Returns `(dataset, oracle_dataset)`.
pub fn gen_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let paths = Paths::new(&cfg.out_dir);
    ensure_dir(&paths.root)?;
    let ds = sample_dataset(&cfg.data, &mut SeededRng::derive(cfg.seed, "data"))?;
    write_dataset(&paths.dataset(), &ds)?;
    let od = sample_dataset(&cfg.oracle_data(), &mut SeededRng::derive(cfg.seed, "oracle-data"))?;
    write_dataset(&paths.oracle_dataset(), &od)?;
    log::info!(
        "wrote {} records to {} and {} to {}",
        ds.records.len(),
        paths.dataset().display(),
        od.records.len(),
        paths.oracle_dataset().display()
    );
    Ok((ds, od))
}

/// What `train` fits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainTarget {
    Vae(VaeVariant),
    Classifier,
    Oracle,
}

impl TrainTarget {
    pub fn name(self) -> &'static str {
        match self {
            Self::Vae(v) => v.name(),
            Self::Classifier => "classifier",
            Self::Oracle => "oracle",
        }
    }
}

/// Train one model, write its checkpoint and log. `epochs` overrides the
/// configured epoch count.
pub fn train(cfg: &ExperimentConfig, target: TrainTarget, epochs: Option<usize>) -> Result<TrainLog> {
    cfg.validate()?;
    if epochs == Some(0) {
        return Err(Error::config("--epochs", "must be positive"));
    }
    let paths = Paths::new(&cfg.out_dir);
    let mut rng = SeededRng::derive(cfg.seed, &format!("train/{}", target.name()));
    let (checkpoint, log) = match target {
        TrainTarget::Vae(v) => {
            let mut tc = v.train_config(&cfg.train);
            if let Some(e) = epochs {
                tc.vae_epochs = e;
            }
            let ds = read_dataset(&paths.dataset())?;
            let oracle = match tc.recon {
                ReconMode::Perceptual => Some(load_oracle(&paths.oracle())?),
                ReconMode::Pixel => None,
            };
            let (vae, log) = train_vae(&ds, &ds.generative_train, &tc, &mut rng, oracle.as_ref())?;
            (ModelCheckpoint::Vae(vae), log)
        }
        TrainTarget::Classifier => {
            let mut tc = cfg.train.clone();
            if let Some(e) = epochs {
                tc.classifier_epochs = e;
            }
            let ds = read_dataset(&paths.dataset())?;
            let (clf, log, acc) = train_classifier(&ds, &ds.train, &ds.val, &tc, &mut rng)?;
            log::info!("classifier validation accuracy {acc:.4}");
            // Fisher estimates depend on the classifier.
            for v in VaeVariant::ALL {
                let p = paths.fisher(v);
                if p.exists() {
                    fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
                }
            }
            (ModelCheckpoint::Classifier(clf), log)
        }
        TrainTarget::Oracle => {
            let mut tc = cfg.oracle_train();
            if let Some(e) = epochs {
                tc.classifier_epochs = e;
            }
            let ds = read_dataset(&paths.oracle_dataset())?;
            let (oracle, log, acc) = train_oracle(&ds, &ds.train, &ds.val, &tc, &mut rng)?;
            log::info!(
                "oracle validation accuracy: label {:.4} shape {:.4} style {:.4}",
                acc.label,
                acc.shape,
                acc.style
            );
            (ModelCheckpoint::Oracle(oracle), log)
        }
    };
    let path = match target {
        TrainTarget::Vae(v) => paths.vae(v),
        TrainTarget::Classifier => paths.classifier(),
        TrainTarget::Oracle => paths.oracle(),
    };
    checkpoint.save(&path)?;
    log.write_csv(&paths.train_log(target.name()))?;
    log::info!("saved {} to {}", checkpoint.kind(), path.display());
    Ok(log)
}

/// Fisher estimate of the classifier through one generator, read from the
/// cache when present.
pub fn fisher_for(cfg: &ExperimentConfig, variant: VaeVariant, vae: &Vae, clf: &Classifier) -> Result<FisherEstimate> {
    let paths = Paths::new(&cfg.out_dir);
    let path = paths.fisher(variant);
    if path.exists() {
        let f = FisherEstimate::load(&path)?;
        if f.d == vae.latent_dim {
            log::info!("reusing cached Fisher estimate {}", path.display());
            return Ok(f);
        }
        log::warn!("cached Fisher estimate {} has d={}, recomputing", path.display(), f.d);
    }
    let ds = read_dataset(&paths.dataset())?;
    let take = ds.train.len().min(cfg.eval.fisher_pool);
    let images = stack_rows(ds.subset(&ds.train[..take]).iter().map(|r| r.image.as_slice()));
    let mut rng = SeededRng::derive(cfg.seed, &format!("fisher/{}", variant.name()));
    let f = estimate_fisher(vae, vae, clf, &images, &cfg.engine.fisher, &mut rng)?;
    f.save(&path)?;
    log::info!("computed Fisher estimate and cached it at {}", path.display());
    Ok(f)
}

/// Trained models needed to explain and evaluate.
#[derive(Debug, Clone)]
pub struct Models {
    pub classifier: Classifier,
    pub vaes: BTreeMap<VaeVariant, Vae>,
    pub fishers: BTreeMap<VaeVariant, FisherEstimate>,
}

impl Models {
    /// Load the classifier plus every generator (and Fisher estimate) the
    /// given methods need.
    pub fn load(cfg: &ExperimentConfig, methods: &[Method]) -> Result<Self> {
        let paths = Paths::new(&cfg.out_dir);
        let classifier = load_classifier(&paths.classifier())?;
        let mut vaes = BTreeMap::new();
        let mut fishers = BTreeMap::new();
        for &m in methods {
            let v = VaeVariant::for_method(m);
            if !vaes.contains_key(&v) {
                vaes.insert(v, load_vae(&paths.vae(v))?);
            }
            if m.needs_fisher() && !fishers.contains_key(&v) {
                let f = fisher_for(cfg, v, &vaes[&v], &classifier)?;
                fishers.insert(v, f);
            }
        }
        Ok(Self {
            classifier,
            vaes,
            fishers,
        })
    }

    pub fn explain(&self, x: &[f64], engine: &EngineConfig, rng: &mut SeededRng) -> Result<Explanation> {
        let v = VaeVariant::for_method(engine.method);
        let vae = self.vaes.get(&v).ok_or_else(|| Error::Invalid(format!("{} not loaded", v.name())))?;
        generate_explanations(x, vae, vae, &self.classifier, self.fishers.get(&v), engine, rng)
    }
}

/// Which inputs `explain` runs on.
#[derive(Debug, Clone, PartialEq)]
pub enum Selector {
    /// One record of the explanation pool.
    Index(usize),
    /// The per-style evaluation set.
    EvalSet,
}

/// The explanation pool: validation records of the oracle dataset.
pub fn eval_pool(ds: &Dataset) -> Vec<(usize, &SampleRecord)> {
    ds.val.iter().map(|&i| (i, &ds.records[i])).collect()
}

/// Evaluation-set indices into `ds` for this classifier.
pub fn eval_set(ds: &Dataset, classifier: &Classifier, per_slot: usize) -> Result<Vec<usize>> {
    let pool = eval_pool(ds);
    let x = stack_rows(pool.iter().map(|(_, r)| r.image.as_slice()));
    let probs = classifier.predict(&x)?;
    let sel = select_eval_set(&pool, &probs, per_slot);
    for w in &sel.warnings {
        log::warn!("{w}");
    }
    if sel.indices.is_empty() {
        return Err(Error::Invalid("evaluation set is empty".into()));
    }
    Ok(sel.indices)
}

fn input_rng(seed: u64, key: &str, index: usize) -> SeededRng {
    SeededRng::derive(seed, &format!("{key}/{index}"))
}

/// Read off and decode the trajectory at classifier output `query`.
fn interpolated(ex: &Explanation, vae: &Vae, clf: &Classifier, query: f64) -> Result<Vec<Interpolated>> {
    let s = &ex.set;
    let mut out = Vec::with_capacity(s.n);
    for i in 0..s.n {
        let eps = s.interpolate(i, query);
        let z: Vec<f64> = s.z.iter().zip(&eps).map(|(a, b)| a + b).collect();
        let image = vae.decode_tensor(&Tensor::new(vec![1, s.d], z)?)?.data().to_vec();
        let f = clf.predict(&Tensor::new(vec![1, image.len()], image.clone())?)?[0];
        out.push(Interpolated { query, eps, f, image });
    }
    Ok(out)
}

/// Explain the selected inputs with the configured method and write one
/// bundle directory per input.
pub fn explain(cfg: &ExperimentConfig, selector: &Selector, query: Option<f64>) -> Result<Vec<PathBuf>> {
    cfg.validate()?;
    if let Some(q) = query {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::config("--target", format!("{q} is outside [0, 1]")));
        }
    }
    let paths = Paths::new(&cfg.out_dir);
    let ds = read_dataset(&paths.oracle_dataset())?;
    let method = cfg.engine.method;
    let models = Models::load(cfg, &[method])?;
    let indices = match selector {
        Selector::Index(i) => {
            if *i >= ds.records.len() {
                return Err(Error::config(
                    "--index",
                    format!("{i} is out of range for {} records", ds.records.len()),
                ));
            }
            vec![*i]
        }
        Selector::EvalSet => eval_set(&ds, &models.classifier, cfg.eval.per_slot)?,
    };
    let variant = VaeVariant::for_method(method);
    let results: Vec<Result<PathBuf>> = indices
        .par_iter()
        .map(|&i| {
            let x = &ds.records[i].image;
            let mut rng = input_rng(cfg.seed, &format!("explain/{}", method.name()), i);
            let ex = models.explain(x, &cfg.engine, &mut rng)?;
            let interp = match query {
                Some(q) => interpolated(&ex, &models.vaes[&variant], &models.classifier, q)?,
                None => Vec::new(),
            };
            let dir = paths.bundle(method, i);
            let meta = BundleMeta {
                method: method.name().into(),
                generator: variant.name().into(),
                input_index: Some(i),
            };
            write_bundle(&dir, x, &meta, &ex, &interp)?;
            Ok(dir)
        })
        .collect();
    let dirs = results.into_iter().collect::<Result<Vec<_>>>()?;
    log::info!("wrote {} bundle(s) under {}", dirs.len(), paths.bundles().join(method.name()).display());
    Ok(dirs)
}

/// Bundle summaries grouped by method, in index order.
fn collect_bundles(dir: &Path) -> Result<BTreeMap<String, Vec<BundleSummary>>> {
    let mut out: BTreeMap<String, Vec<BundleSummary>> = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    let mut files = Vec::new();
    for method in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let method = method.map_err(|e| Error::io(dir, e))?.path();
        if !method.is_dir() {
            continue;
        }
        for b in fs::read_dir(&method).map_err(|e| Error::io(&method, e))? {
            let s = b.map_err(|e| Error::io(&method, e))?.path().join("summary.toml");
            if s.exists() {
                files.push(s);
            }
        }
    }
    for f in files {
        let s = BundleSummary::load(&f)?;
        out.entry(s.method.clone()).or_default().push(s);
    }
    for v in out.values_mut() {
        v.sort_by_key(|s| s.input_index);
    }
    Ok(out)
}

/// Rebuild the counterfactuals of a bundle from its latent code.
fn decode_bundle(s: &BundleSummary, vae: &Vae) -> Result<Tensor> {
    let d = s.z.len();
    let mut data = Vec::with_capacity(d * s.eps.len());
    for eps in &s.eps {
        if eps.len() != d {
            return Err(Error::Format {
                what: "bundle summary",
                message: format!("perturbation of length {} for a {d}-dimensional code", eps.len()),
            });
        }
        data.extend(s.z.iter().zip(eps).map(|(a, b)| a + b));
    }
    Ok(vae.decode_tensor(&Tensor::new(vec![s.eps.len(), d], data)?)?)
}

/// Score every bundle under the output directory and write `metrics.csv`
/// plus `summary.toml`.
pub fn evaluate(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    cfg.validate()?;
    let paths = Paths::new(&cfg.out_dir);
    let bundles = collect_bundles(&paths.bundles())?;
    if bundles.is_empty() {
        return Err(Error::MissingArtifact { path: paths.bundles() });
    }
    let ds = read_dataset(&paths.oracle_dataset())?;
    let oracle = load_oracle(&paths.oracle())?;
    let clf = load_classifier(&paths.classifier())?;
    let mut vaes: BTreeMap<String, Vae> = BTreeMap::new();
    let mut report = MetricsReport::default();
    for (method, summaries) in &bundles {
        let mut items = Vec::with_capacity(summaries.len());
        for s in summaries {
            if !vaes.contains_key(&s.generator) {
                let v = VaeVariant::parse(&s.generator).ok_or_else(|| Error::Format {
                    what: "bundle summary",
                    message: format!("unknown generator {:?}", s.generator),
                })?;
                vaes.insert(s.generator.clone(), load_vae(&paths.vae(v))?);
            }
            let index = s.input_index.ok_or_else(|| Error::Format {
                what: "bundle summary",
                message: "bundle has no input index".into(),
            })?;
            let rec = ds.records.get(index).ok_or_else(|| Error::Format {
                what: "bundle summary",
                message: format!("input index {index} is out of range"),
            })?;
            let cfs = decode_bundle(s, &vaes[&s.generator])?;
            items.push(EvalItem::build(&rec.image, &cfs, &clf, &oracle)?);
        }
        report.push_all(method, cfg.seed, &evaluate_items(&items)?);
    }
    let gtb = classifier_ground_truth_bias(&clf, &ds.subset(&ds.val))?;
    report.push_all("classifier", cfg.seed, &[("ground_truth_bias".into(), gtb)]);
    report.write_csv(&paths.metrics())?;
    report.write_summary(&paths.summary())?;
    Ok(report)
}

/// One sweep result: a grid point evaluated under one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub key: String,
    pub method: String,
    pub seed: u64,
    pub gamma: f64,
    pub alpha: f64,
    pub lambda: f64,
    pub n: usize,
    pub lr: f64,
    pub success_rate: f64,
    pub validity: f64,
    pub any_valid_rate: f64,
    pub mean_similarity: f64,
    pub confounding: Option<f64>,
}

/// Stable identifier of a (grid point, seed) pair.
pub fn row_key(p: &EngineConfig, seed: u64) -> String {
    format!(
        "{}|g={}|a={}|l={}|n={}|lr={}|s={seed}",
        p.method.name(),
        p.gamma,
        p.alpha,
        p.lambda,
        p.n,
        p.lr
    )
}

/// Evaluate one grid point over `inputs`.
pub fn sweep_point(
    models: &Models,
    oracle: &Oracle,
    inputs: &[&[f64]],
    point: &EngineConfig,
    seed: u64,
) -> Result<SweepRow> {
    let key = row_key(point, seed);
    let mut items = Vec::with_capacity(inputs.len());
    for (i, x) in inputs.iter().enumerate() {
        let ex = models.explain(x, point, &mut input_rng(seed, &key, i))?;
        items.push(EvalItem::build(x, &ex.counterfactuals, &models.classifier, oracle)?);
    }
    let m: BTreeMap<String, f64> = evaluate_items(&items)?.into_iter().collect();
    Ok(SweepRow {
        key,
        method: point.method.name().into(),
        seed,
        gamma: point.gamma,
        alpha: point.alpha,
        lambda: point.lambda,
        n: point.n,
        lr: point.lr,
        success_rate: m["success_rate"],
        validity: m["validity"],
        any_valid_rate: m["any_valid_rate"],
        mean_similarity: m["mean_similarity"],
        confounding: m.get("confounding").copied(),
    })
}

pub fn read_sweep(path: &Path) -> Result<Vec<SweepRow>> {
    if !path.exists() {
        return Err(Error::MissingArtifact { path: path.into() });
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for row in r.deserialize() {
        match row {
            Ok(row) => rows.push(row),
            // A row cut short by an interrupted run is recomputed.
            Err(e) => log::warn!("skipping unreadable sweep row in {}: {e}", path.display()),
        }
    }
    Ok(rows)
}

fn write_sweep(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Worker count: the flag, else `DIVE_THREADS`, else every logical core.
/// `DIVE_THREADS` also caps the flag.
pub fn worker_count(flag: Option<usize>) -> usize {
    let env = std::env::var("DIVE_THREADS").ok().and_then(|s| s.parse::<usize>().ok()).filter(|&n| n > 0);
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let n = flag.or(env).unwrap_or(cores).max(1);
    env.map_or(n, |cap| n.min(cap))
}

/// Run every (grid point, seed) pair not already in `sweep.csv`. Finished
/// rows are appended as they complete; the file is rewritten in grid order
/// at the end.
pub fn sweep(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let paths = Paths::new(&cfg.out_dir);
    let points = cfg.sweep.points(&cfg.engine);
    let methods: Vec<Method> = cfg.sweep.methods.clone();
    let models = Models::load(cfg, &methods)?;
    let oracle = load_oracle(&paths.oracle())?;
    let ds = read_dataset(&paths.oracle_dataset())?;
    let idx = eval_set(&ds, &models.classifier, cfg.eval.per_slot)?;
    let inputs: Vec<&[f64]> = idx.iter().map(|&i| ds.records[i].image.as_slice()).collect();

    let path = paths.sweep();
    let mut done: BTreeMap<String, SweepRow> = BTreeMap::new();
    if path.exists() {
        for r in read_sweep(&path)? {
            done.insert(r.key.clone(), r);
        }
        log::info!("resuming sweep: {} row(s) already in {}", done.len(), path.display());
        // Drop a partial trailing line before appending.
        write_sweep(&path, &done.values().cloned().collect::<Vec<_>>())?;
    }
    let todo: Vec<(EngineConfig, u64)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| points.iter().map(move |p| (p.clone(), s)))
        .filter(|(p, s)| !done.contains_key(&row_key(p, *s)))
        .collect();
    log::info!("sweep: {} row(s) to run", todo.len());

    let file = OpenOptions::new().create(true).append(true).open(&path).map_err(|e| Error::io(&path, e))?;
    let has_header = path.metadata().map(|m| m.len() > 0).unwrap_or(false);
    let writer = Mutex::new(csv::WriterBuilder::new().has_headers(!has_header).from_writer(file));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(threads))
        .build()
        .map_err(|e| Error::Invalid(format!("thread pool: {e}")))?;
    let fresh: Vec<SweepRow> = pool.install(|| {
        todo.par_iter()
            .map(|(p, s)| {
                let row = sweep_point(&models, &oracle, &inputs, p, *s)?;
                let mut w = writer.lock().expect("sweep writer");
                w.serialize(&row)?;
                w.flush().map_err(|e| Error::io(&path, e))?;
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    drop(writer);
    for r in fresh {
        done.insert(r.key.clone(), r);
    }

    let order: Vec<String> = cfg.seeds.iter().flat_map(|&s| points.iter().map(move |p| row_key(p, s))).collect();
    let wanted: HashSet<&String> = order.iter().collect();
    let mut rows: Vec<SweepRow> = order.iter().filter_map(|k| done.get(k).cloned()).collect();
    // Rows from an earlier, different grid are kept after the current ones.
    rows.extend(done.values().filter(|r| !wanted.contains(&r.key)).cloned());
    write_sweep(&path, &rows)?;
    Ok(rows)
}

/// Per-method means over sweep rows: `(mean success over every row,
/// mean over seeds of the best point's success)`.
pub fn sweep_means(rows: &[SweepRow]) -> BTreeMap<String, (f64, f64)> {
    let mut by_method: BTreeMap<&str, Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        by_method.entry(&r.method).or_default().push(r);
    }
    by_method
        .into_iter()
        .map(|(m, rs)| {
            let mean = rs.iter().map(|r| r.success_rate).sum::<f64>() / rs.len() as f64;
            let mut per_point: BTreeMap<String, (f64, usize)> = BTreeMap::new();
            for r in &rs {
                let k = r.key.rsplit_once("|s=").map_or(r.key.as_str(), |(k, _)| k).to_string();
                let e = per_point.entry(k).or_default();
                e.0 += r.success_rate;
                e.1 += 1;
            }
            let best = per_point.values().map(|(s, n)| s / *n as f64).fold(f64::NEG_INFINITY, f64::max);
            (m.to_string(), (mean, best))
        })
        .collect()
}

/// Markdown report from whatever of `sweep.csv` and `metrics.csv` exist.
pub fn report(cfg: &ExperimentConfig) -> Result<String> {
    let paths = Paths::new(&cfg.out_dir);
    let sweep = paths.sweep().exists().then(|| read_sweep(&paths.sweep())).transpose()?;
    let metrics = paths.metrics().exists().then(|| MetricsReport::read_csv(&paths.metrics())).transpose()?;
    if sweep.is_none() && metrics.is_none() {
        return Err(Error::MissingArtifact { path: paths.metrics() });
    }
    let mut md = String::from("# Results\n\n");
    if let Some(rows) = &sweep {
        md.push_str("## Sweep\n\n| method | rows | mean success | best point success |\n|---|---|---|---|\n");
        let means = sweep_means(rows);
        for (m, (mean, best)) in &means {
            let n = rows.iter().filter(|r| &r.method == m).count();
            md.push_str(&format!("| {m} | {n} | {mean:.4} | {best:.4} |\n"));
        }
        let chain = [Method::FisherSpectral, Method::FisherChunks, Method::Dive, Method::XgemPlus];
        let vals: Vec<Option<f64>> = chain.iter().map(|m| means.get(m.name()).map(|v| v.0)).collect();
        if vals.iter().all(Option::is_some) {
            let v: Vec<f64> = vals.into_iter().flatten().collect();
            let holds = v.windows(2).all(|w| w[0] >= w[1]);
            md.push_str(&format!(
                "\nOrdering fisher_spectral >= fisher_chunks >= dive >= xgem_plus on mean success: {}\n",
                if holds { "holds" } else { "does not hold" }
            ));
        }
        md.push('\n');
    }
    if let Some(m) = &metrics {
        md.push_str("## Metrics\n\n| method | metric | mean |\n|---|---|---|\n");
        for (method, vals) in m.means() {
            for (k, v) in vals {
                md.push_str(&format!("| {method} | {k} | {v:.4} |\n"));
            }
        }
    }
    fs::write(paths.report(), &md).map_err(|e| Error::io(paths.report(), e))?;
    Ok(md)
}
