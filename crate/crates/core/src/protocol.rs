//! The end-to-end study: cohorts, the eight named models, the alpha
//! searches, three ensemble families over the fine-tuned pretrained models,
//! evaluation on internal and shifted test sets, significance tests and
//! figure data.
//!
//! Every stage writes its artifacts under the output directory. Expensive
//! artifacts (cohorts, trained weights, alpha searches, ensembles) are reused
//! when present, so an interrupted run resumes where it stopped. Wall-clock
//! timings go to stderr only, which keeps the output tree a pure function of
//! the configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agelfs::{concat_features, constituent_features, train_agelfs_on_features, AgelfsModel, AgelfsSpec};
use crate::config::ProtocolConfig;
use crate::data::{generate_cohort, halve_periodic, split_group_level, Cohort, CohortConfig, CohortTag, PeriodicSplit};
use crate::dataset::Dataset;
use crate::ensemble::{ewa, fslsqp, FslsqpConfig};
use crate::error::{Error, Result};
use crate::gp::{minimize, trace_csv, BOConfig};
use crate::init::{cold_init, shrink_perturb, warm_init, ShrinkParams};
use crate::io::{self, agelfs_to_json, num, read_weights, weights_from_json, weights_to_json, Csv};
use crate::nn::{train, Checkpoint, EpochRecord, Network, NetworkSpec, TrainConfig, TrainResult};
use crate::reference::{published_fixture, replicate_paper_significance, ReplicationRow};
use crate::stats::{
    clopper_pearson, emd_1d, metrics_report, optimal_threshold, pr_curve, significance, softmax_histogram,
    weight_correlation, MetricsReport, SignificanceResult,
};
use crate::tensor::WeightSet;

pub const SINGLE_MODELS: [&str; 8] =
    ["Cold-RP", "Cold-IP", "Cold-RF", "Cold-IF", "Warm-RF", "Warm-IF", "Shrink-RF", "Shrink-IF"];
pub const IF_MODELS: [&str; 3] = ["Cold-IF", "Warm-IF", "Shrink-IF"];
/// Index sets into [`IF_MODELS`]: the three pairs and the triple.
pub const COMBINATIONS: [&[usize]; 4] = [&[0, 1], &[0, 2], &[1, 2], &[0, 1, 2]];
pub const FAMILIES: [&str; 3] = ["EWA", "F-SLSQP", "AGELFS"];
pub const TEST_SETS: [&str; 5] = ["internal", "ext_adult", "ext_ped2", "ext_ped11", "ext_ped18"];
const EXTERNAL: [(CohortTag, &str); 4] = [
    (CohortTag::ExtAdult, "ext_adult"),
    (CohortTag::ExtPed2, "ext_ped2"),
    (CohortTag::ExtPed11, "ext_ped11"),
    (CohortTag::ExtPed18, "ext_ped18"),
];
const HEAD_HASH: &str = "agelfs-head";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Generate,
    TrainP,
    SearchAlpha,
    TrainF,
    Ensemble,
    Evaluate,
    Significance,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Generate,
        Stage::TrainP,
        Stage::SearchAlpha,
        Stage::TrainF,
        Stage::Ensemble,
        Stage::Evaluate,
        Stage::Significance,
        Stage::Report,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::TrainP => "train-p",
            Stage::SearchAlpha => "search-alpha",
            Stage::TrainF => "train-f",
            Stage::Ensemble => "ensemble",
            Stage::Evaluate => "evaluate",
            Stage::Significance => "significance",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum StageStatus {
    Done,
    Failed(String),
    Skipped,
}

/// Seed derived from the run seed and a role label.
pub fn derive_seed(seed: u64, role: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(role.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

pub fn ensemble_name(family: &str, combo: &[usize]) -> String {
    let members: Vec<&str> = combo.iter().map(|&i| IF_MODELS[i]).collect();
    format!("{family}({})", members.join("+"))
}

/// Every model the protocol produces, in report order.
pub fn roster() -> Vec<String> {
    let mut out: Vec<String> = SINGLE_MODELS.iter().map(|s| s.to_string()).collect();
    for fam in FAMILIES {
        for combo in COMBINATIONS {
            out.push(ensemble_name(fam, combo));
        }
    }
    out
}

fn file_stem(name: &str) -> String {
    name.to_lowercase().replace('(', "__").replace(')', "")
}

/// Training outcome as persisted; wall time is deliberately absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epochs_run: usize,
    pub epochs_to_best: usize,
    pub best_val_loss: f64,
    pub threshold: f64,
    pub history: Vec<EpochRecord>,
}

impl TrainRecord {
    fn from_result(r: &TrainResult) -> Self {
        Self {
            epochs_run: r.history.len(),
            epochs_to_best: r.epochs_to_best,
            best_val_loss: r.best.val_loss,
            threshold: r.best.threshold,
            history: r.history.clone(),
        }
    }

    pub fn epochs_to_reach(&self, target: f64) -> Option<usize> {
        self.history.iter().position(|e| e.val_loss <= target).map(|i| i + 1)
    }
}

#[derive(Debug, Clone)]
struct ModelArtifact {
    weights: WeightSet,
    record: TrainRecord,
}

impl ModelArtifact {
    fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            weights: self.weights.clone(),
            val_loss: self.record.best_val_loss,
            epoch: self.record.epochs_to_best,
            threshold: self.record.threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaOutcome {
    pub best_alpha: f64,
    pub best_value: f64,
    pub noise_seed: u64,
    pub penalized_calls: usize,
    pub trace_file: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMeta {
    pub name: String,
    pub family: String,
    pub members: Vec<String>,
    pub factors: Vec<f64>,
    pub validation_error: Option<f64>,
    pub restarts_run: Option<usize>,
    pub fuzziness: Option<f64>,
    pub threshold: f64,
    pub weights_file: String,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceRow {
    pub comparison: String,
    pub test_set: String,
    pub metric: String,
    pub model1: String,
    pub model2: String,
    pub value1: f64,
    pub ci1: (f64, f64),
    pub value2: f64,
    pub ci2: (f64, f64),
    pub result: Option<SignificanceResult>,
}

/// Directional outcomes of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub epochs_to_target: BTreeMap<String, Option<usize>>,
    pub pretrained_faster: bool,
    pub internal_mcc: BTreeMap<String, f64>,
    pub if_beats_rf: BTreeMap<String, bool>,
    /// `(averaged ensemble, test set)` cases whose recall reaches the best constituent's.
    pub recall_hits: Vec<(String, String)>,
    pub alpha_rf: f64,
    pub alpha_if: f64,
    pub fuzziness: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionalSummary {
    pub seeds_run: usize,
    pub target_val_loss: f64,
    pub pretrained_faster_seeds: usize,
    pub if_beats_rf_seeds: BTreeMap<String, usize>,
    pub recall_seeds: usize,
    pub min_faster_seeds: usize,
    pub min_if_better_seeds: usize,
    pub min_recall_seeds: usize,
    pub faster_pass: bool,
    pub if_better_pass: bool,
    pub recall_pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub until: Stage,
    pub models: Vec<String>,
    pub shared: BTreeMap<String, StageStatus>,
    pub stages: BTreeMap<String, BTreeMap<String, StageStatus>>,
    pub summaries: Vec<SeedSummary>,
    pub directional: Option<DirectionalSummary>,
    /// Relative path → SHA-256 of every other file in the output tree.
    pub files: BTreeMap<String, String>,
    pub success: bool,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub until: Stage,
    pub verbose: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { until: Stage::Report, verbose: true }
    }
}

struct Log {
    verbose: bool,
    started: Instant,
}

impl Log {
    fn say(&self, msg: impl fmt::Display) {
        if self.verbose {
            eprintln!("[{:7.1}s] {msg}", self.started.elapsed().as_secs_f64());
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn rel(root: &Path, path: &Path) -> String {
    path.strip_prefix(root).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

/// Loads a trained model if both of its files exist, otherwise trains and stores it.
fn cached_model(
    dir: &Path,
    name: &str,
    spec: &NetworkSpec,
    compute: impl FnOnce() -> Result<TrainResult>,
) -> Result<ModelArtifact> {
    let wpath = dir.join(format!("{}.weights.json", file_stem(name)));
    let rpath = dir.join(format!("{}.train.json", file_stem(name)));
    if wpath.exists() && rpath.exists() {
        return Ok(ModelArtifact { weights: read_weights(&wpath, spec)?, record: read_json(&rpath)? });
    }
    let result = compute()?;
    let record = TrainRecord::from_result(&result);
    io::write_weights(&wpath, spec, &result.best.weights)?;
    write_json(&rpath, &record)?;
    Ok(ModelArtifact { weights: result.best.weights, record })
}

struct Shared {
    surrogate: WeightSet,
}

struct SeedData {
    internal: Cohort,
    periodic: PeriodicSplit,
    external: Vec<Cohort>,
}

impl SeedData {
    fn test_sets(&self) -> Vec<(&'static str, Dataset)> {
        let mut out = vec![("internal", self.internal.dataset(&self.periodic.test))];
        for ((_, name), c) in EXTERNAL.iter().zip(&self.external) {
            out.push((name, c.full_dataset()));
        }
        out
    }
}

struct EnsembleArtifact {
    meta: EnsembleMeta,
    kind: EnsembleKind,
}

enum EnsembleKind {
    Averaged(WeightSet),
    Agelfs(AgelfsModel),
}

struct SeedRun<'a> {
    cfg: &'a ProtocolConfig,
    spec: NetworkSpec,
    seed: u64,
    dir: PathBuf,
    log: &'a Log,
    data: Option<SeedData>,
    models: BTreeMap<String, ModelArtifact>,
    alphas: BTreeMap<String, AlphaOutcome>,
    ensembles: Vec<EnsembleArtifact>,
    scores: BTreeMap<(String, String), Vec<f64>>,
    labels: BTreeMap<String, Vec<u8>>,
    reports: BTreeMap<(String, String), MetricsReport>,
}

impl<'a> SeedRun<'a> {
    fn sub(&self, name: &str) -> Result<PathBuf> {
        let p = self.dir.join(name);
        fs::create_dir_all(&p)?;
        Ok(p)
    }

    fn train_cfg(&self, role: &str) -> TrainConfig {
        TrainConfig { rng_seed: derive_seed(self.seed, role), ..self.cfg.train.clone() }
    }

    fn data(&self) -> &SeedData {
        self.data.as_ref().expect("generate stage ran")
    }

    fn model(&self, name: &str) -> &ModelArtifact {
        &self.models[name]
    }

    fn generate(&mut self) -> Result<()> {
        let dir = self.sub("cohorts")?;
        let load_or_make = |stem: &str, cfg: CohortConfig| -> Result<Cohort> {
            if dir.join(format!("{stem}.jsonl")).exists() {
                let c = io::read_cohort(&dir, stem)?;
                if c.config == cfg {
                    return Ok(c);
                }
            }
            let c = generate_cohort(&cfg)?;
            io::write_cohort(&dir, stem, &c)?;
            Ok(c)
        };
        let sizes = &self.cfg.cohorts;
        let internal = load_or_make("internal", CohortConfig::preset(CohortTag::Internal, sizes.internal, self.seed))?;
        let split = split_group_level(&internal)?;
        let periodic = halve_periodic(&internal, &split);
        write_json(&dir.join("splits.json"), &periodic)?;
        let mut external = Vec::new();
        for (tag, name) in EXTERNAL {
            let cfg = CohortConfig::preset(tag, sizes.external, derive_seed(self.seed, name));
            external.push(load_or_make(name, cfg)?);
        }
        self.data = Some(SeedData { internal, periodic, external });
        Ok(())
    }

    fn train_p(&mut self, shared: &Shared) -> Result<()> {
        let dir = self.sub("models")?;
        let d = self.data();
        let (tr, va) = (d.internal.dataset(&d.periodic.p_train), d.internal.dataset(&d.periodic.p_val));
        let cold = cold_init(&self.spec, derive_seed(self.seed, "cold-init"))?;
        let rp = cached_model(&dir, "Cold-RP", &self.spec, || train(&self.spec, &cold, &tr, &va, &self.train_cfg("Cold-RP")))?;
        self.log.say(format_args!("seed {} Cold-RP val {:.4}", self.seed, rp.record.best_val_loss));
        let ip = cached_model(&dir, "Cold-IP", &self.spec, || {
            train(&self.spec, &shared.surrogate, &tr, &va, &self.train_cfg("Cold-IP"))
        })?;
        self.log.say(format_args!("seed {} Cold-IP val {:.4}", self.seed, ip.record.best_val_loss));
        self.models.insert("Cold-RP".into(), rp);
        self.models.insert("Cold-IP".into(), ip);
        Ok(())
    }

    fn search_alpha(&mut self) -> Result<()> {
        let dir = self.sub("search")?;
        let d = self.data();
        let mut idx = d.periodic.f_train.clone();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(self.seed, "search-subset")));
        idx.truncate(self.cfg.search.subset);
        idx.sort_unstable();
        let sub_train = d.internal.dataset(&idx);
        let f_val = d.internal.dataset(&d.periodic.f_val);
        let search_train = TrainConfig {
            max_epochs: self.cfg.search.epochs,
            patience: self.cfg.search.epochs,
            rng_seed: derive_seed(self.seed, "search-train"),
            ..self.cfg.train.clone()
        };
        for (key, source) in [("rf", "Cold-RP"), ("if", "Cold-IP")] {
            let out_path = dir.join(format!("alpha_{key}.json"));
            if out_path.exists() {
                let outcome: AlphaOutcome = read_json(&out_path)?;
                self.alphas.insert(key.into(), outcome);
                continue;
            }
            let base = self.model(source).weights.clone();
            let noise_seed = derive_seed(self.seed, &format!("noise-{key}"));
            let beta = self.cfg.search.beta_scale;
            // the objective is deterministic, so repeated proposals reuse earlier values
            let mut memo: BTreeMap<u64, f64> = BTreeMap::new();
            let objective = |alpha: f64| -> f64 {
                *memo.entry(alpha.to_bits()).or_insert_with(|| {
                    let run = || -> Result<f64> {
                        let start = shrink_perturb(&base, &ShrinkParams::new(alpha, beta, noise_seed)?)?;
                        Ok(train(&self.spec, &start, &sub_train, &f_val, &search_train)?.best.val_loss)
                    };
                    run().unwrap_or(f64::NAN)
                })
            };
            let bo = BOConfig { seed: derive_seed(self.seed, &format!("bo-{key}")), ..self.cfg.search.bo.clone() };
            let res = minimize(objective, &bo)?;
            let trace_file = format!("alpha_{key}_trace.csv");
            fs::write(dir.join(&trace_file), trace_csv(&res.trace))?;
            let outcome = AlphaOutcome {
                best_alpha: res.best_alpha,
                best_value: res.best_value,
                noise_seed,
                penalized_calls: res.trace.iter().filter(|o| o.penalized).count(),
                trace_file,
            };
            write_json(&out_path, &outcome)?;
            self.log.say(format_args!("seed {} alpha_{key} = {:.4} (val {:.4})", self.seed, res.best_alpha, res.best_value));
            self.alphas.insert(key.into(), outcome);
        }
        Ok(())
    }

    fn train_f(&mut self, shared: &Shared) -> Result<()> {
        let dir = self.sub("models")?;
        let d = self.data();
        let (tr, va) = (d.internal.dataset(&d.periodic.f_train), d.internal.dataset(&d.periodic.f_val));
        let cold = cold_init(&self.spec, derive_seed(self.seed, "cold-init"))?;
        let beta = self.cfg.search.beta_scale;
        let shrunk = |source: &str, key: &str| -> Result<WeightSet> {
            let a = &self.alphas[key];
            shrink_perturb(&self.model(source).weights, &ShrinkParams::new(a.best_alpha, beta, a.noise_seed)?)
        };
        let starts: Vec<(&str, WeightSet)> = vec![
            ("Cold-RF", cold),
            ("Cold-IF", shared.surrogate.clone()),
            ("Warm-RF", warm_init(&self.spec, &self.model("Cold-RP").checkpoint())?),
            ("Warm-IF", warm_init(&self.spec, &self.model("Cold-IP").checkpoint())?),
            ("Shrink-RF", shrunk("Cold-RP", "rf")?),
            ("Shrink-IF", shrunk("Cold-IP", "if")?),
        ];
        for (name, init) in starts {
            let m = cached_model(&dir, name, &self.spec, || train(&self.spec, &init, &tr, &va, &self.train_cfg(name)))?;
            self.log.say(format_args!("seed {} {name} val {:.4}", self.seed, m.record.best_val_loss));
            self.models.insert(name.into(), m);
        }
        Ok(())
    }

    fn ensemble(&mut self) -> Result<()> {
        let dir = self.sub("ensembles")?;
        let d = self.data();
        let f_train = d.internal.dataset(&d.periodic.f_train);
        let f_val = d.internal.dataset(&d.periodic.f_val);
        let net = Network::new(&self.spec)?;
        let members: Vec<&ModelArtifact> = IF_MODELS.iter().map(|m| self.model(m)).collect();
        let mut features: Option<(Vec<Dataset>, Vec<Dataset>)> = None;
        let mut out = Vec::new();

        for family in FAMILIES {
            for combo in COMBINATIONS {
                let name = ensemble_name(family, combo);
                let stem = file_stem(&name);
                let meta_path = dir.join(format!("{stem}.json"));
                let weights_file = format!("{stem}.weights.json");
                let names: Vec<String> = combo.iter().map(|&i| IF_MODELS[i].to_string()).collect();
                let weights: Vec<WeightSet> = combo.iter().map(|&i| members[i].weights.clone()).collect();

                if family == "AGELFS" {
                    let head_path = dir.join(&weights_file);
                    let record_path = dir.join(format!("{stem}.train.json"));
                    let spec = AgelfsSpec::new(
                        weights.iter().map(|w| (self.spec.clone(), w.clone())).collect(),
                        derive_seed(self.seed, &name),
                    )?;
                    if meta_path.exists() && head_path.exists() && record_path.exists() {
                        let (hash, head) = weights_from_json(&fs::read_to_string(&head_path)?)?;
                        if hash != HEAD_HASH {
                            return Err(Error::Validation(format!("{} is not a head file", head_path.display())));
                        }
                        let meta: EnsembleMeta = read_json(&meta_path)?;
                        out.push(EnsembleArtifact { meta, kind: EnsembleKind::Agelfs(AgelfsModel { spec, head }) });
                        continue;
                    }
                    let (tr_parts, va_parts) = match &features {
                        Some(f) => f,
                        None => {
                            let mut tr = Vec::new();
                            let mut va = Vec::new();
                            for m in &members {
                                tr.push(constituent_features(&self.spec, &m.weights, &f_train)?);
                                va.push(constituent_features(&self.spec, &m.weights, &f_val)?);
                            }
                            features.insert((tr, va))
                        }
                    };
                    let tr_f = concat_features(&combo.iter().map(|&i| &tr_parts[i]).collect::<Vec<_>>())?;
                    let va_f = concat_features(&combo.iter().map(|&i| &va_parts[i]).collect::<Vec<_>>())?;
                    let head_cfg = TrainConfig { rng_seed: derive_seed(self.seed, &format!("{name}-shuffle")), ..self.cfg.agelfs.clone() };
                    let (model, result) = train_agelfs_on_features(spec, &tr_f, &va_f, &head_cfg)?;
                    let refs: Vec<String> =
                        names.iter().map(|n| format!("../models/{}.weights.json", file_stem(n))).collect();
                    fs::write(dir.join(format!("{stem}.model.json")), agelfs_to_json(&model, &refs)?)?;
                    fs::write(&head_path, weights_to_json(HEAD_HASH, &model.head))?;
                    write_json(&record_path, &TrainRecord::from_result(&result))?;
                    let meta = EnsembleMeta {
                        name: name.clone(),
                        family: family.into(),
                        members: names,
                        factors: vec![],
                        validation_error: None,
                        restarts_run: None,
                        fuzziness: Some(model.fuzziness()),
                        threshold: result.best.threshold,
                        weights_file,
                        warnings: vec![],
                    };
                    write_json(&meta_path, &meta)?;
                    self.log.say(format_args!("seed {} {name} fuzziness {:.3}", self.seed, model.fuzziness()));
                    out.push(EnsembleArtifact { meta, kind: EnsembleKind::Agelfs(model) });
                    continue;
                }

                let wpath = dir.join(&weights_file);
                if meta_path.exists() && wpath.exists() {
                    let meta: EnsembleMeta = read_json(&meta_path)?;
                    out.push(EnsembleArtifact { meta, kind: EnsembleKind::Averaged(read_weights(&wpath, &self.spec)?) });
                    continue;
                }
                let (avg, factors, validation_error, restarts_run, warnings) = if family == "EWA" {
                    let avg = ewa(&weights)?;
                    let k = weights.len();
                    (avg, vec![1.0 / k as f64; k], None, None, vec![])
                } else {
                    let fcfg = FslsqpConfig { seed: derive_seed(self.seed, &name), ..self.cfg.ensemble.clone() };
                    let r = fslsqp(&weights, &self.spec, &f_val, &fcfg)?;
                    (r.weights, r.factors.as_slice().to_vec(), Some(r.validation_error), Some(r.restarts_run), r.warnings)
                };
                let threshold = optimal_threshold(&net.positive_scores(&avg, &f_val), &f_val.labels).unwrap_or(0.5);
                io::write_weights(&wpath, &self.spec, &avg)?;
                let meta = EnsembleMeta {
                    name: name.clone(),
                    family: family.into(),
                    members: names,
                    factors,
                    validation_error,
                    restarts_run,
                    fuzziness: None,
                    threshold,
                    weights_file,
                    warnings,
                };
                write_json(&meta_path, &meta)?;
                if family == "F-SLSQP" {
                    self.log.say(format_args!("seed {} {name} factors {:?}", self.seed, meta.factors));
                }
                out.push(EnsembleArtifact { meta, kind: EnsembleKind::Averaged(avg) });
            }
        }
        self.ensembles = out;
        Ok(())
    }

    fn evaluate(&mut self) -> Result<()> {
        let dir = self.sub("scores")?;
        let net = Network::new(&self.spec)?;
        let tests = self.data().test_sets();
        let members: Vec<&WeightSet> = IF_MODELS.iter().map(|m| &self.model(m).weights).collect();
        let mut scores = BTreeMap::new();
        let mut reports = BTreeMap::new();
        let mut labels = BTreeMap::new();
        for (test, ds) in &tests {
            let mut per_model: Vec<(String, Vec<f64>, f64)> = Vec::new();
            for name in SINGLE_MODELS {
                let m = self.model(name);
                per_model.push((name.into(), net.positive_scores(&m.weights, ds), m.record.threshold));
            }
            let parts = members
                .iter()
                .map(|w| constituent_features(&self.spec, w, ds))
                .collect::<Result<Vec<_>>>()?;
            for e in &self.ensembles {
                let s = match &e.kind {
                    EnsembleKind::Averaged(w) => net.positive_scores(w, ds),
                    EnsembleKind::Agelfs(model) => {
                        let idx: Vec<usize> =
                            e.meta.members.iter().map(|m| IF_MODELS.iter().position(|x| x == m).unwrap()).collect();
                        let feats = concat_features(&idx.iter().map(|&i| &parts[i]).collect::<Vec<_>>())?;
                        model.scores_from_features(&feats)?
                    }
                };
                per_model.push((e.meta.name.clone(), s, e.meta.threshold));
            }
            let mut header = vec!["index".to_string(), "label".to_string()];
            header.extend(per_model.iter().map(|(n, _, _)| n.clone()));
            let mut csv = Csv::new(&header.iter().map(|s| s.as_str()).collect::<Vec<_>>());
            for i in 0..ds.len() {
                let mut row = vec![i.to_string(), ds.labels[i].to_string()];
                row.extend(per_model.iter().map(|(_, s, _)| num(s[i])));
                csv.row(&row);
            }
            csv.write(&dir.join(format!("{test}.csv")))?;
            for (name, s, thr) in per_model {
                reports.insert((name.clone(), test.to_string()), metrics_report(&s, &ds.labels, thr)?);
                scores.insert((name, test.to_string()), s);
            }
            labels.insert(test.to_string(), ds.labels.clone());
        }
        self.labels = labels;
        self.scores = scores;
        self.reports = reports;

        let rdir = self.sub("reports")?;
        metrics_csv(&self.reports)?.write(&rdir.join("metrics.csv"))?;
        Ok(())
    }

    fn significance(&self) -> Result<()> {
        let mut rows = Vec::new();
        let mcc_row = |cmp: &str, test: &str, a: &str, b: &str| -> SignificanceRow {
            let ra = &self.reports[&(a.to_string(), test.to_string())];
            let rb = &self.reports[&(b.to_string(), test.to_string())];
            SignificanceRow {
                comparison: cmp.into(),
                test_set: test.into(),
                metric: "mcc".into(),
                model1: a.into(),
                model2: b.into(),
                value1: ra.mcc,
                ci1: ra.mcc_ci,
                value2: rb.mcc,
                ci2: rb.mcc_ci,
                result: significance(ra.mcc, ra.mcc_ci, rb.mcc, rb.mcc_ci).ok(),
            }
        };
        rows.push(mcc_row("pretrained-vs-random-p", "internal", "Cold-RP", "Cold-IP"));
        for regime in ["Cold", "Warm", "Shrink"] {
            rows.push(mcc_row("pretrained-vs-random-f", "internal", &format!("{regime}-RF"), &format!("{regime}-IF")));
        }
        for test in TEST_SETS {
            for (i, j) in [(0, 1), (0, 2), (1, 2)] {
                rows.push(mcc_row("if-regimes", test, IF_MODELS[i], IF_MODELS[j]));
            }
        }
        // ensembles against the best single model by internal MCC
        let baseline = IF_MODELS
            .iter()
            .copied()
            .max_by(|a, b| {
                let ma = self.reports[&(a.to_string(), "internal".to_string())].mcc;
                let mb = self.reports[&(b.to_string(), "internal".to_string())].mcc;
                ma.total_cmp(&mb).then_with(|| b.cmp(a))
            })
            .unwrap();
        for e in &self.ensembles {
            for test in TEST_SETS {
                rows.push(mcc_row("ensemble-vs-baseline", test, baseline, &e.meta.name));
                let ra = &self.reports[&(baseline.to_string(), test.to_string())];
                let rb = &self.reports[&(e.meta.name.clone(), test.to_string())];
                let recall_ci = |r: &MetricsReport| {
                    let p = r.counts.tp + r.counts.fn_;
                    clopper_pearson(r.counts.tp, p.max(1), 0.95).unwrap_or((0.0, 1.0))
                };
                let (ca, cb) = (recall_ci(ra), recall_ci(rb));
                rows.push(SignificanceRow {
                    comparison: "ensemble-vs-baseline".into(),
                    test_set: test.into(),
                    metric: "recall".into(),
                    model1: baseline.into(),
                    model2: e.meta.name.clone(),
                    value1: ra.recall,
                    ci1: ca,
                    value2: rb.recall,
                    ci2: cb,
                    result: significance(ra.recall, ca, rb.recall, cb).ok(),
                });
            }
        }
        let mut csv = Csv::new(&[
            "comparison", "test_set", "metric", "model1", "model2", "value1", "ci1_lower", "ci1_upper", "value2",
            "ci2_lower", "ci2_upper", "se1", "se2", "delta", "delta_se", "z", "p_two_tailed", "significant",
        ]);
        for r in &rows {
            let mut cells = vec![
                r.comparison.clone(),
                r.test_set.clone(),
                r.metric.clone(),
                r.model1.clone(),
                r.model2.clone(),
                num(r.value1),
                num(r.ci1.0),
                num(r.ci1.1),
                num(r.value2),
                num(r.ci2.0),
                num(r.ci2.1),
            ];
            match &r.result {
                Some(s) => cells.extend([
                    num(s.se1),
                    num(s.se2),
                    num(s.delta_mcc),
                    num(s.delta_se),
                    num(s.z),
                    num(s.p_two_tailed),
                    s.significant.to_string(),
                ]),
                None => cells.extend(std::iter::repeat_n("NA".to_string(), 7)),
            }
            csv.row(&cells);
        }
        csv.write(&self.sub("reports")?.join("significance.csv"))?;
        Ok(())
    }

    fn report(&mut self) -> Result<SeedSummary> {
        let rdir = self.sub("reports")?;
        let a = &self.cfg.analysis;

        let mut training = Csv::new(&["model", "epochs_run", "epochs_to_best", "best_val_loss", "threshold", "epochs_to_target"]);
        let mut epochs_to_target = BTreeMap::new();
        for name in SINGLE_MODELS {
            let r = &self.model(name).record;
            let reach = r.epochs_to_reach(a.target_val_loss);
            epochs_to_target.insert(name.to_string(), reach);
            training.row(&[
                name.to_string(),
                r.epochs_run.to_string(),
                r.epochs_to_best.to_string(),
                num(r.best_val_loss),
                num(r.threshold),
                reach.map_or("NA".into(), |e| e.to_string()),
            ]);
        }
        training.write(&rdir.join("training.csv"))?;

        let mut curve = Csv::new(&["model", "test_set", "recall", "precision", "threshold"]);
        let mut hist = Csv::new(&["model", "test_set", "class", "bin_lower", "bin_upper", "count", "density"]);
        let labels = &self.labels["internal"];
        for name in roster() {
            let s = &self.scores[&(name.clone(), "internal".to_string())];
            for (r, p, t) in pr_curve(s, labels)? {
                curve.row(&[name.clone(), "internal".into(), num(r), num(p), num(t)]);
            }
            let h = softmax_histogram(s, labels, a.histogram_bins)?;
            for (class, ch) in [("0", &h.negative), ("1", &h.positive)] {
                for b in 0..h.bins {
                    hist.row(&[
                        name.clone(),
                        "internal".into(),
                        class.into(),
                        num(b as f64 / h.bins as f64),
                        num((b + 1) as f64 / h.bins as f64),
                        ch.counts[b].to_string(),
                        num(ch.density[b]),
                    ]);
                }
            }
        }
        curve.write(&rdir.join("pr_curves.csv"))?;
        hist.write(&rdir.join("softmax_histograms.csv"))?;

        // weight-space similarity over every parameter-space model
        let mut weighted: Vec<(String, &WeightSet)> =
            SINGLE_MODELS.iter().map(|n| (n.to_string(), &self.model(n).weights)).collect();
        for e in &self.ensembles {
            if let EnsembleKind::Averaged(w) = &e.kind {
                weighted.push((e.meta.name.clone(), w));
            }
        }
        let mut header = vec!["model".to_string()];
        header.extend(weighted.iter().map(|(n, _)| n.clone()));
        let mut emd = Csv::new(&header.iter().map(|s| s.as_str()).collect::<Vec<_>>());
        for (na, wa) in &weighted {
            let mut row = vec![na.clone()];
            for (nb, wb) in &weighted {
                row.push(num(if na == nb { 0.0 } else { emd_1d(wa, wb)? }));
            }
            emd.row(&row);
        }
        emd.write(&rdir.join("emd_matrix.csv"))?;

        let mut corr = Csv::new(&["model_a", "model_b", "pearson"]);
        let mut scatter = Csv::new(&["model_a", "model_b", "weight_a", "weight_b"]);
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let (a_name, b_name) = (IF_MODELS[i], IF_MODELS[j]);
            let (wa, wb) = (&self.model(a_name).weights, &self.model(b_name).weights);
            corr.row(&[a_name.into(), b_name.into(), num(weight_correlation(wa, wb)?)]);
            let (fa, fb) = (wa.flatten(), wb.flatten());
            let stride = fa.len().div_ceil(a.scatter_cap).max(1);
            for k in (0..fa.len()).step_by(stride) {
                scatter.row(&[a_name.into(), b_name.into(), num(fa[k]), num(fb[k])]);
            }
        }
        corr.write(&rdir.join("weight_correlation.csv"))?;
        scatter.write(&rdir.join("weight_scatter.csv"))?;

        let mut ens = Csv::new(&["ensemble", "family", "members", "factors", "validation_error", "fuzziness", "threshold"]);
        let mut fuzziness = BTreeMap::new();
        for e in &self.ensembles {
            let m = &e.meta;
            if let Some(f) = m.fuzziness {
                fuzziness.insert(m.name.clone(), f);
            }
            ens.row(&[
                m.name.clone(),
                m.family.clone(),
                m.members.join("+"),
                m.factors.iter().map(|f| num(*f)).collect::<Vec<_>>().join(" "),
                m.validation_error.map_or("NA".into(), num),
                m.fuzziness.map_or("NA".into(), num),
                num(m.threshold),
            ]);
        }
        ens.write(&rdir.join("ensembles.csv"))?;

        let internal_mcc: BTreeMap<String, f64> = SINGLE_MODELS
            .iter()
            .map(|n| (n.to_string(), self.reports[&(n.to_string(), "internal".to_string())].mcc))
            .collect();
        let if_beats_rf = ["Cold", "Warm", "Shrink"]
            .iter()
            .map(|r| (r.to_string(), internal_mcc[&format!("{r}-IF")] > internal_mcc[&format!("{r}-RF")]))
            .collect();
        let faster = match (epochs_to_target["Cold-IP"], epochs_to_target["Cold-RP"]) {
            (Some(i), Some(r)) => i < r,
            (Some(_), None) => true,
            _ => false,
        };
        let mut recall_hits = Vec::new();
        // weight-space ensembles only; AGELFS mixes features, not weights
        for e in self.ensembles.iter().filter(|e| e.meta.family != "AGELFS") {
            for (_, test) in EXTERNAL {
                let best = e
                    .meta
                    .members
                    .iter()
                    .map(|m| self.reports[&(m.clone(), test.to_string())].recall)
                    .fold(f64::NEG_INFINITY, f64::max);
                if self.reports[&(e.meta.name.clone(), test.to_string())].recall >= best {
                    recall_hits.push((e.meta.name.clone(), test.to_string()));
                }
            }
        }
        let summary = SeedSummary {
            seed: self.seed,
            epochs_to_target,
            pretrained_faster: faster,
            internal_mcc,
            if_beats_rf,
            recall_hits,
            alpha_rf: self.alphas["rf"].best_alpha,
            alpha_if: self.alphas["if"].best_alpha,
            fuzziness,
        };
        write_json(&rdir.join("summary.json"), &summary)?;
        Ok(summary)
    }
}

/// Metrics table: one row per (model, test set), in the usual column order.
pub fn metrics_csv(reports: &BTreeMap<(String, String), MetricsReport>) -> Result<Csv> {
    let mut csv = Csv::new(&[
        "model", "test_set", "auprc", "balanced_accuracy", "precision", "recall", "f_score", "mcc", "mcc_ci_lower",
        "mcc_ci_upper", "threshold", "n", "tp", "fp", "tn", "fn",
    ]);
    let order = roster();
    for test in TEST_SETS {
        for name in &order {
            let Some(r) = reports.get(&(name.clone(), test.to_string())) else { continue };
            csv.row(&[
                name.clone(),
                test.to_string(),
                num(r.auprc),
                num(r.balanced_accuracy),
                num(r.precision),
                num(r.recall),
                num(r.f_score),
                num(r.mcc),
                num(r.mcc_ci.0),
                num(r.mcc_ci.1),
                num(r.threshold),
                r.n.to_string(),
                r.counts.tp.to_string(),
                r.counts.fp.to_string(),
                r.counts.tn.to_string(),
                r.counts.fn_.to_string(),
            ]);
        }
    }
    Ok(csv)
}

/// CSV of the significance chain over published values.
pub fn replication_csv(rows: &[ReplicationRow]) -> Csv {
    let mut csv = Csv::new(&[
        "group", "test_set", "model1", "model2", "se1", "se2", "delta_mcc", "delta_se", "z", "p_two_tailed",
        "significant", "reported_significant", "agrees",
    ]);
    for r in rows {
        let s = &r.result;
        csv.row(&[
            r.label.clone(),
            r.test_set.clone(),
            r.model1.clone(),
            r.model2.clone(),
            num(s.se1),
            num(s.se2),
            num(s.delta_mcc),
            num(s.delta_se),
            num(s.z),
            num(s.p_two_tailed),
            s.significant.to_string(),
            r.reported_significant.to_string(),
            (s.significant == r.reported_significant).to_string(),
        ]);
    }
    csv
}

pub fn directional_summary(cfg: &ProtocolConfig, summaries: &[SeedSummary]) -> DirectionalSummary {
    let a = &cfg.analysis;
    let faster = summaries.iter().filter(|s| s.pretrained_faster).count();
    let mut if_better = BTreeMap::new();
    for regime in ["Cold", "Warm", "Shrink"] {
        if_better.insert(regime.to_string(), summaries.iter().filter(|s| s.if_beats_rf[regime]).count());
    }
    let recall = summaries.iter().filter(|s| !s.recall_hits.is_empty()).count();
    DirectionalSummary {
        seeds_run: summaries.len(),
        target_val_loss: a.target_val_loss,
        pretrained_faster_seeds: faster,
        if_beats_rf_seeds: if_better.clone(),
        recall_seeds: recall,
        min_faster_seeds: a.min_faster_seeds,
        min_if_better_seeds: a.min_if_better_seeds,
        min_recall_seeds: a.min_recall_seeds,
        faster_pass: faster >= a.min_faster_seeds,
        if_better_pass: if_better.values().all(|&n| n >= a.min_if_better_seeds),
        recall_pass: recall >= a.min_recall_seeds,
    }
}

fn shared_stage(cfg: &ProtocolConfig, spec: &NetworkSpec, root: &Path, log: &Log) -> Result<Shared> {
    let dir = root.join("shared");
    fs::create_dir_all(&dir)?;
    let pcfg = CohortConfig::preset(CohortTag::Pretext, cfg.cohorts.pretext, cfg.cohorts.pretext_seed);
    let pretext = if dir.join("pretext.jsonl").exists() {
        io::read_cohort(&dir, "pretext")?
    } else {
        let c = generate_cohort(&pcfg)?;
        io::write_cohort(&dir, "pretext", &c)?;
        c
    };
    if pretext.config != pcfg {
        return Err(Error::Validation("stored pretext cohort does not match the configuration".into()));
    }
    let split = split_group_level(&pretext)?;
    let m = cached_model(&dir, "surrogate", spec, || {
        let init = cold_init(spec, cfg.pretrain.rng_seed)?;
        train(spec, &init, &pretext.dataset(&split.train), &pretext.dataset(&split.val), &cfg.pretrain)
    })?;
    log.say(format_args!("surrogate ready (pretext val {:.4})", m.record.best_val_loss));
    Ok(Shared { surrogate: m.weights })
}

fn list_files(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) -> Result<()> {
    let mut entries: Vec<_> = fs::read_dir(dir)?.collect::<std::io::Result<_>>()?;
    entries.sort_by_key(|e| e.file_name());
    for e in entries {
        let p = e.path();
        if p.is_dir() {
            list_files(root, &p, out)?;
        } else {
            let name = rel(root, &p);
            if name != "run_manifest.json" {
                out.insert(name, io::sha256_hex(&fs::read(&p)?));
            }
        }
    }
    Ok(())
}

/// Runs the protocol up to and including `opts.until` and writes the manifest.
pub fn run_protocol(cfg: &ProtocolConfig, opts: &RunOptions) -> Result<RunManifest> {
    cfg.validate()?;
    let log = Log { verbose: opts.verbose, started: Instant::now() };
    let root = cfg.output_dir.clone();
    fs::create_dir_all(&root)?;
    let config_hash = cfg.hash()?;
    let cfg_path = root.join("config.toml");
    if cfg_path.exists() {
        let previous = ProtocolConfig::load(&cfg_path)?;
        if previous.hash()? != config_hash {
            return Err(Error::Config(format!(
                "{} holds a run with a different configuration; use a fresh output directory",
                root.display()
            )));
        }
    }
    let mut canonical = cfg.clone();
    canonical.output_dir = PathBuf::from(".");
    fs::write(&cfg_path, canonical.to_toml()?)?;

    let spec = NetworkSpec::desk_default();
    let mut shared_status = BTreeMap::new();
    let shared = if opts.until >= Stage::TrainP {
        match shared_stage(cfg, &spec, &root, &log) {
            Ok(s) => {
                shared_status.insert("surrogate".to_string(), StageStatus::Done);
                Some(s)
            }
            Err(e) => {
                shared_status.insert("surrogate".to_string(), StageStatus::Failed(e.to_string()));
                None
            }
        }
    } else {
        None
    };

    let mut stages = BTreeMap::new();
    let mut summaries = Vec::new();
    for &seed in &cfg.seeds {
        let mut run = SeedRun {
            cfg,
            spec: spec.clone(),
            seed,
            dir: root.join(format!("seed_{seed:03}")),
            log: &log,
            data: None,
            models: BTreeMap::new(),
            alphas: BTreeMap::new(),
            ensembles: Vec::new(),
            scores: BTreeMap::new(),
            labels: BTreeMap::new(),
            reports: BTreeMap::new(),
        };
        let mut status = BTreeMap::new();
        let mut failed = false;
        for stage in Stage::ALL {
            if stage > opts.until {
                break;
            }
            if failed {
                status.insert(stage.to_string(), StageStatus::Skipped);
                continue;
            }
            let outcome = match stage {
                Stage::Generate => run.generate(),
                Stage::TrainP | Stage::TrainF if shared.is_none() => {
                    Err(Error::Validation("surrogate weights unavailable".into()))
                }
                Stage::TrainP => run.train_p(shared.as_ref().unwrap()),
                Stage::SearchAlpha => run.search_alpha(),
                Stage::TrainF => run.train_f(shared.as_ref().unwrap()),
                Stage::Ensemble => run.ensemble(),
                Stage::Evaluate => run.evaluate(),
                Stage::Significance => run.significance(),
                Stage::Report => run.report().map(|s| summaries.push(s)),
            };
            match outcome {
                Ok(()) => {
                    status.insert(stage.to_string(), StageStatus::Done);
                }
                Err(e) => {
                    log.say(format_args!("seed {seed} stage {stage} failed: {e}"));
                    status.insert(stage.to_string(), StageStatus::Failed(e.to_string()));
                    failed = true;
                }
            }
        }
        log.say(format_args!("seed {seed} finished"));
        stages.insert(format!("seed_{seed:03}"), status);
    }

    let mut directional = None;
    if opts.until >= Stage::Report {
        let rows = replicate_paper_significance(&published_fixture())?;
        replication_csv(&rows).write(&root.join("replicate_paper.csv"))?;
        let d = directional_summary(cfg, &summaries);
        let mut csv = Csv::new(&[
            "seed", "ip_epochs_to_target", "rp_epochs_to_target", "pretrained_faster", "cold_if_beats_rf",
            "warm_if_beats_rf", "shrink_if_beats_rf", "recall_hits", "alpha_rf", "alpha_if",
        ]);
        for s in &summaries {
            let e = |m: &str| s.epochs_to_target[m].map_or("NA".into(), |v| v.to_string());
            csv.row(&[
                s.seed.to_string(),
                e("Cold-IP"),
                e("Cold-RP"),
                s.pretrained_faster.to_string(),
                s.if_beats_rf["Cold"].to_string(),
                s.if_beats_rf["Warm"].to_string(),
                s.if_beats_rf["Shrink"].to_string(),
                s.recall_hits.len().to_string(),
                num(s.alpha_rf),
                num(s.alpha_if),
            ]);
        }
        csv.write(&root.join("summary.csv"))?;
        write_json(&root.join("directional.json"), &d)?;
        directional = Some(d);
    }

    let all_done = shared_status.values().all(|s| *s == StageStatus::Done)
        && stages.values().all(|m| m.values().all(|s| *s == StageStatus::Done));
    let mut files = BTreeMap::new();
    list_files(&root, &root, &mut files)?;
    let manifest = RunManifest {
        config_hash,
        seeds: cfg.seeds.clone(),
        until: opts.until,
        models: roster(),
        shared: shared_status,
        stages,
        summaries,
        directional,
        files,
        success: all_done,
    };
    write_json(&root.join("run_manifest.json"), &manifest)?;
    log.say(if all_done { "run complete" } else { "run finished with failures" });
    Ok(manifest)
}

/// Checks a manifest against the tree it describes.
pub fn verify_manifest(root: &Path) -> Result<RunManifest> {
    let manifest: RunManifest = read_json(&root.join("run_manifest.json"))?;
    for (path, hash) in &manifest.files {
        let bytes = fs::read(root.join(path))?;
        if &io::sha256_hex(&bytes) != hash {
            return Err(Error::Validation(format!("{path} changed since the manifest was written")));
        }
    }
    let cfg = ProtocolConfig::load(&root.join("config.toml"))?;
    if cfg.hash()? != manifest.config_hash {
        return Err(Error::Validation("config hash does not match config.toml".into()));
    }
    Ok(manifest)
}
