//! Stage commands behind the command-line tool. Every stage reads and
//! writes plain files under the configured output directory, and every
//! JSON artifact carries the config hash and seed that produced it.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{PipelineConfig, ResolvedPaths, SimScope};
use crate::extended::{decode_prediction, read_jsonl, write_jsonl, ExtendedError, Instance};
use crate::graph::{build_scene_graph, SceneGraph};
use crate::metrics::{sweep, EvalReport, MetricsError};
use crate::model::{forward, Checkpoint, ModelError, ModelInput};
use crate::scenario::{corpus_instances, generate_corpus, CorpusManifest, Scenario, ScenarioError, ScenarioFile, TemplateId};
use crate::sim::{
    fidelity, realize, run_batch, run_episode, scr_report, trace_csv, ControllerProfile, ExecutableScenario, ProfileKind,
    ScrOutcome, ScrTable, SimError, DT, HORIZON,
};
use crate::training::{k_fold_prepared, prepare, select_scenarios, split_scenarios, train_prepared, KFoldSummary, TrainError};

pub const ARTIFACT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("missing input: {}", .0.display())]
    MissingInput(PathBuf),
    #[error("schema version mismatch for {what}: expected {expected}, found {found}")]
    SchemaVersionMismatch {
        what: String,
        expected: String,
        found: String,
    },
    #[error("config parse error: {0}")]
    ConfigParse(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    CorruptArtifact {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Extended(#[from] ExtendedError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

impl From<ModelError> for PipelineError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::SchemaVersionMismatch { what, expected, found } => PipelineError::SchemaVersionMismatch {
                what: what.to_string(),
                expected,
                found,
            },
            other => PipelineError::Model(other),
        }
    }
}

impl PipelineError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PipelineError::MissingInput(_) => "MissingInput",
            PipelineError::SchemaVersionMismatch { .. } => "SchemaVersionMismatch",
            PipelineError::ConfigParse(_) => "ConfigParse",
            PipelineError::Io { .. } => "Io",
            PipelineError::CorruptArtifact { .. } => "CorruptArtifact",
            PipelineError::Scenario(_) => "Scenario",
            PipelineError::Extended(_) => "ExtendedGraph",
            PipelineError::Train(_) => "Train",
            PipelineError::Model(_) => "Model",
            PipelineError::Metrics(_) => "Metrics",
            PipelineError::Sim(_) => "Simulation",
        }
    }

    /// Machine-readable form for stderr.
    pub fn to_json(&self) -> String {
        let mut v = serde_json::json!({ "error": self.kind(), "message": self.to_string() });
        if let PipelineError::MissingInput(p) = self {
            v["path"] = serde_json::json!(p.display().to_string());
        }
        v.to_string()
    }
}

/// JSON envelope shared by the stage artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    #[serde(flatten)]
    pub body: T,
}

struct Ctx {
    cfg: PipelineConfig,
    hash: String,
    paths: ResolvedPaths,
}

impl Ctx {
    fn new(cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        let paths = cfg.paths();
        for dir in [&cfg.out_dir, &paths.reports] {
            std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
        }
        Ok(Self {
            hash: cfg.config_hash(),
            cfg: cfg.clone(),
            paths,
        })
    }

    fn stamp<T>(&self, body: T) -> Stamped<T> {
        Stamped {
            schema_version: ARTIFACT_SCHEMA_VERSION,
            config_hash: self.hash.clone(),
            seed: self.cfg.seed,
            body,
        }
    }

    fn write_json<T: Serialize>(&self, path: &Path, body: T) -> Result<(), PipelineError> {
        let s = serde_json::to_string_pretty(&self.stamp(body)).expect("artifact serializes");
        write_text(path, &(s + "\n"))
    }

    /// CSV with a leading `#` line carrying the config hash and seed.
    fn write_csv(&self, path: &Path, csv: &str) -> Result<(), PipelineError> {
        write_text(path, &format!("# config_hash={} seed={}\n{csv}", self.hash, self.cfg.seed))
    }
}

fn write_text(path: &Path, s: &str) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    std::fs::write(path, s).map_err(|e| PipelineError::io(path, e))
}

fn require(path: &Path) -> Result<(), PipelineError> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::MissingInput(path.to_path_buf()))
    }
}

fn read_stamped<T: DeserializeOwned>(path: &Path, what: &str) -> Result<Stamped<T>, PipelineError> {
    require(path)?;
    let s = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    let v: Stamped<T> = serde_json::from_str(&s).map_err(|source| PipelineError::CorruptArtifact {
        path: path.to_path_buf(),
        source,
    })?;
    if v.schema_version != ARTIFACT_SCHEMA_VERSION {
        return Err(PipelineError::SchemaVersionMismatch {
            what: what.into(),
            expected: ARTIFACT_SCHEMA_VERSION.to_string(),
            found: v.schema_version.to_string(),
        });
    }
    Ok(v)
}

fn read_dataset(path: &Path) -> Result<Vec<Instance>, PipelineError> {
    require(path)?;
    let f = File::open(path).map_err(|e| PipelineError::io(path, e))?;
    Ok(read_jsonl(BufReader::new(f))?)
}

fn read_scenarios(path: &Path) -> Result<Vec<Scenario>, PipelineError> {
    let f: ScenarioFile = {
        require(path)?;
        let s = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        serde_json::from_str(&s).map_err(|source| PipelineError::CorruptArtifact {
            path: path.to_path_buf(),
            source,
        })?
    };
    if f.schema_version != ARTIFACT_SCHEMA_VERSION {
        return Err(PipelineError::SchemaVersionMismatch {
            what: "scenarios".into(),
            expected: ARTIFACT_SCHEMA_VERSION.to_string(),
            found: f.schema_version.to_string(),
        });
    }
    Ok(f.scenarios)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenSummary {
    pub n_scenarios: usize,
    pub n_instances: usize,
    pub positive_fraction: f64,
}

/// Generates the scenario corpus and its labelled instances.
pub fn cmd_gen(cfg: &PipelineConfig) -> Result<GenSummary, PipelineError> {
    let ctx = Ctx::new(cfg)?;
    let scenarios = generate_corpus(cfg.seed, cfg.generation.n_scenarios);
    let instances = corpus_instances(&scenarios)?;
    let manifest = CorpusManifest::new(&ctx.hash, cfg.seed, &scenarios, &instances);
    log::info!(
        "{} scenarios, {} instances, positive fraction {:.3}",
        scenarios.len(),
        instances.len(),
        manifest.positive_fraction
    );
    if !(0.05..=0.6).contains(&manifest.positive_fraction) {
        log::warn!("positive fraction {:.3} outside [0.05, 0.6]", manifest.positive_fraction);
    }

    let path = &ctx.paths.dataset;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))?;
    }
    let f = File::create(path).map_err(|e| PipelineError::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_jsonl(&mut w, &instances).map_err(|e| PipelineError::io(path, e))?;
    w.flush().map_err(|e| PipelineError::io(path, e))?;

    let file = ScenarioFile {
        schema_version: ARTIFACT_SCHEMA_VERSION,
        config_hash: ctx.hash.clone(),
        seed: cfg.seed,
        scenarios,
    };
    write_text(&ctx.paths.scenarios, &serde_json::to_string(&file).expect("scenarios serialize"))?;
    write_text(
        &ctx.paths.manifest,
        &(serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n"),
    )?;
    Ok(GenSummary {
        n_scenarios: manifest.n_scenarios,
        n_instances: manifest.n_instances,
        positive_fraction: manifest.positive_fraction,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub train_scenarios: usize,
    pub val_scenarios: usize,
    pub test_scenarios: usize,
}

/// Trains on the dataset and writes the checkpoint and loss log.
pub fn cmd_train(cfg: &PipelineConfig) -> Result<TrainSummary, PipelineError> {
    let ctx = Ctx::new(cfg)?;
    let data = prepare(&read_dataset(&ctx.paths.dataset)?)?;
    let (params, log) = train_prepared(&data, &cfg.train)?;
    let ckpt = Checkpoint {
        params,
        config_hash: ctx.hash.clone(),
        seed: cfg.seed,
    };
    write_text(&ctx.paths.checkpoint, &ckpt.to_json())?;
    ctx.write_csv(&ctx.paths.report("train_log.csv"), &log.to_csv())?;
    let summary = TrainSummary {
        epochs_run: log.epochs.len(),
        best_epoch: log.best_epoch,
        best_val_loss: log.best_val_loss,
        stopped_early: log.stopped_early,
        train_scenarios: log.split.train.len(),
        val_scenarios: log.split.val.len(),
        test_scenarios: log.split.test.len(),
    };
    #[derive(Serialize)]
    struct Doc<'a> {
        summary: &'a TrainSummary,
        log: &'a crate::training::TrainLog,
    }
    ctx.write_json(&ctx.paths.report("train_log.json"), Doc { summary: &summary, log: &log })?;
    log::info!(
        "trained {} epochs, best {} (val loss {:.5})",
        summary.epochs_run,
        summary.best_epoch,
        summary.best_val_loss
    );
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalDoc {
    pub split: String,
    pub n_instances: usize,
    pub n_scenarios: usize,
    pub report: EvalReport,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub k_fold: Option<KFoldSummary>,
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, PipelineError> {
    require(path)?;
    Ok(Checkpoint::load(path)?)
}

/// Scores the test split with the checkpoint; optionally reruns k-fold
/// cross-validation from scratch.
pub fn cmd_eval(cfg: &PipelineConfig, k_fold: bool) -> Result<EvalDoc, PipelineError> {
    let ctx = Ctx::new(cfg)?;
    let ckpt = load_checkpoint(&ctx.paths.checkpoint)?;
    let data = prepare(&read_dataset(&ctx.paths.dataset)?)?;
    let ids: Vec<u64> = data.iter().map(|p| p.scenario_id).collect();
    let split = split_scenarios(&ids, cfg.train.split, cfg.train.seed);
    let (name, chosen) = if split.test.is_empty() {
        ("validation", &split.val)
    } else {
        ("test", &split.test)
    };
    let test = select_scenarios(&data, chosen);
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for p in &test {
        scores.extend(forward(&ckpt.params, &p.input)?);
        labels.extend_from_slice(&p.labels);
    }
    let report = sweep(&scores, &labels)?;
    let k_fold = if k_fold {
        Some(k_fold_prepared(&data, &cfg.train, |c| {
            crate::model::ModelParams::init(c.model, c.seed)
        })?)
    } else {
        None
    };
    let doc = EvalDoc {
        split: name.into(),
        n_instances: test.len(),
        n_scenarios: chosen.len(),
        report,
        k_fold,
    };
    ctx.write_json(&ctx.paths.report("eval_report.json"), &doc)?;
    ctx.write_csv(&ctx.paths.report("roc.csv"), &doc.report.roc_csv())?;
    ctx.write_csv(&ctx.paths.report("pr.csv"), &doc.report.pr_csv())?;
    log::info!(
        "{name}: F1 {:.3} (best {:.3}) AUC {:.3} accuracy {:.3}",
        doc.report.f1,
        doc.report.best_f1,
        doc.report.auc,
        doc.report.accuracy
    );
    Ok(doc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub scenario_id: u64,
    pub template: TemplateId,
    /// Index of the regular frame that was perturbed.
    pub frame: usize,
    pub predicted: SceneGraph,
    /// Cross edges that differ from the regular graph.
    pub changed_edges: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbDoc {
    pub scope: SimScope,
    pub perturbations: Vec<Perturbation>,
}

fn changed_edges(a: &SceneGraph, b: &SceneGraph) -> usize {
    let ea: BTreeSet<_> = a.cross_edges().map(|e| e.sort_key()).collect();
    let eb: BTreeSet<_> = b.cross_edges().map(|e| e.sort_key()).collect();
    ea.symmetric_difference(&eb).count()
}

fn perturb_scope(
    cfg: &PipelineConfig,
    instances: &[Instance],
    scenarios: &[Scenario],
    ids: &BTreeSet<u64>,
    ckpt: &Checkpoint,
) -> Result<(Vec<Perturbation>, usize), PipelineError> {
    let mut out = Vec::new();
    let mut feasible = 0;
    for inst in instances.iter().filter(|i| i.ext.base.frame_index == 0 && ids.contains(&i.scenario_id)) {
        let s = scenarios
            .iter()
            .find(|s| s.id == inst.scenario_id)
            .ok_or_else(|| PipelineError::Scenario(ScenarioError::Invalid {
                id: inst.scenario_id,
                reason: "scenario missing from scenarios file".into(),
            }))?;
        let mut ext = inst.ext.clone();
        let probs = forward(&ckpt.params, &ModelInput::from_extended(&ext))?;
        ext.set_predictions(&probs);
        let predicted = decode_prediction(&ext, cfg.decode.mode())?;
        feasible += usize::from(realize(&ext.base, &predicted, s.road(), &cfg.simulation.realize).is_ok());
        out.push(Perturbation {
            scenario_id: inst.scenario_id,
            template: s.template,
            frame: 0,
            changed_edges: changed_edges(&ext.base, &predicted),
            predicted,
        });
    }
    Ok((out, feasible))
}

/// Predicts a corner case for the first frame of every scenario in scope.
pub fn cmd_perturb(cfg: &PipelineConfig) -> Result<PerturbDoc, PipelineError> {
    let ctx = Ctx::new(cfg)?;
    let ckpt = load_checkpoint(&ctx.paths.checkpoint)?;
    let instances = read_dataset(&ctx.paths.dataset)?;
    let scenarios = read_scenarios(&ctx.paths.scenarios)?;
    let all: BTreeSet<u64> = scenarios.iter().map(|s| s.id).collect();
    let mut scope = cfg.simulation.scope;
    let ids = match scope {
        SimScope::All => all.clone(),
        SimScope::HeldOut => {
            let v: Vec<u64> = all.iter().copied().collect();
            let split = split_scenarios(&v, cfg.train.split, cfg.train.seed);
            split.val.iter().chain(&split.test).copied().collect()
        }
    };
    let (mut perturbations, feasible) = perturb_scope(cfg, &instances, &scenarios, &ids, &ckpt)?;
    if scope == SimScope::HeldOut && feasible < cfg.simulation.min_episodes {
        log::info!(
            "{feasible} feasible held-out episodes < {}; using all scenarios",
            cfg.simulation.min_episodes
        );
        scope = SimScope::All;
        perturbations = perturb_scope(cfg, &instances, &scenarios, &all, &ckpt)?.0;
    }
    let doc = PerturbDoc { scope, perturbations };
    ctx.write_json(&ctx.paths.report("perturbations.json"), &doc)?;
    log::info!("{} perturbed graphs ({:?} scope)", doc.perturbations.len(), doc.scope);
    Ok(doc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub scenario_id: u64,
    pub template: TemplateId,
    /// Infeasibility reason; absent when realized.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub infeasible: Option<String>,
    pub arrival_time: f64,
    /// `(profile, perturbed outcome, regular outcome)`.
    pub outcomes: Vec<(ProfileKind, ScrOutcome, ScrOutcome)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fidelity {
    pub matched: usize,
    pub total: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDoc {
    /// Episodes realized from predicted corner cases.
    pub perturbed: ScrTable,
    /// The same scenarios continued without perturbation.
    pub regular: ScrTable,
    pub fidelity: Fidelity,
    pub episodes: Vec<EpisodeRecord>,
}

/// Realizes every perturbation, simulates each profile and writes the
/// SCR tables. With `traces`, per-episode CSV traces go to `traces/`.
pub fn cmd_sim(cfg: &PipelineConfig, traces: bool) -> Result<SimDoc, PipelineError> {
    let ctx = Ctx::new(cfg)?;
    let scenarios = read_scenarios(&ctx.paths.scenarios)?;
    let doc: Stamped<PerturbDoc> = read_stamped(&ctx.paths.report("perturbations.json"), "perturbations")?;
    let profiles: Vec<ControllerProfile> = cfg.simulation.profiles.iter().map(|&k| ControllerProfile::new(k)).collect();

    let mut records = Vec::new();
    let mut perturbed: Vec<ExecutableScenario> = Vec::new();
    let mut regular: Vec<ExecutableScenario> = Vec::new();
    let mut matched = 0;
    let mut total = 0;
    for p in &doc.body.perturbations {
        let s = scenarios
            .iter()
            .find(|s| s.id == p.scenario_id)
            .ok_or_else(|| PipelineError::Scenario(ScenarioError::Invalid {
                id: p.scenario_id,
                reason: "scenario missing from scenarios file".into(),
            }))?;
        let base = build_scene_graph(&s.frames[p.frame]).map_err(SimError::from)?;
        let mut rec = EpisodeRecord {
            scenario_id: s.id,
            template: s.template,
            infeasible: None,
            arrival_time: 0.0,
            outcomes: Vec::new(),
        };
        match realize(&base, &p.predicted, s.road(), &cfg.simulation.realize) {
            Ok(mut scn) => {
                scn.scenario_id = s.id;
                let (m, t) = fidelity(&scn, &p.predicted)?;
                matched += m;
                total += t;
                rec.arrival_time = scn.arrival_time;
                let mut reg = realize(&base, &base, s.road(), &cfg.simulation.realize)?;
                reg.scenario_id = s.id;
                perturbed.push(scn);
                regular.push(reg);
            }
            Err(SimError::Infeasible(reason)) => rec.infeasible = Some(reason),
            Err(e) => return Err(e.into()),
        }
        records.push(rec);
    }
    let infeasible = records.iter().filter(|r| r.infeasible.is_some()).count();
    let out_p = run_batch(&perturbed, &profiles);
    let out_r = run_batch(&regular, &profiles);
    for (k, rec) in records.iter_mut().filter(|r| r.infeasible.is_none()).enumerate() {
        rec.outcomes = profiles
            .iter()
            .enumerate()
            .map(|(j, p)| (p.kind, out_p[j].1[k], out_r[j].1[k]))
            .collect();
    }
    if traces {
        for scn in &perturbed {
            for p in &profiles {
                let r = run_episode(scn, p, DT, HORIZON, true);
                let path = ctx
                    .paths
                    .report(&format!("traces/scenario_{}_{}.csv", scn.scenario_id, p.kind.name()));
                ctx.write_csv(&path, &trace_csv(&r.trace))?;
            }
        }
    }
    let sim = SimDoc {
        perturbed: scr_report(&out_p, infeasible),
        regular: scr_report(&out_r, 0),
        fidelity: Fidelity {
            matched,
            total,
            rate: if total == 0 { 1.0 } else { matched as f64 / total as f64 },
        },
        episodes: records,
    };
    ctx.write_json(&ctx.paths.report("scr.json"), &sim)?;
    write_text(&ctx.paths.report("scr.txt"), &scr_text(&ctx, &sim))?;
    log::info!("{} episodes realized, {infeasible} infeasible", perturbed.len());
    Ok(sim)
}

fn scr_text(ctx: &Ctx, sim: &SimDoc) -> String {
    format!(
        "config_hash {} seed {}\n\nScenario collision rates, predicted corner cases\n{}\nScenario collision rates, unperturbed continuation\n{}\nrelation fidelity: {}/{} ({:.2}%)\n",
        ctx.hash,
        ctx.cfg.seed,
        sim.perturbed.to_text(),
        sim.regular.to_text(),
        sim.fidelity.matched,
        sim.fidelity.total,
        100.0 * sim.fidelity.rate
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeMetrics {
    pub split: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub best_f1: f64,
    pub auc: f64,
    pub youden_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDoc {
    pub edge_prediction: EdgeMetrics,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub k_fold: Option<KFoldSummary>,
    pub scr: ScrTable,
    pub scr_regular: ScrTable,
    pub fidelity: Fidelity,
}

/// Merges the evaluation and simulation results into one document.
pub fn cmd_report(cfg: &PipelineConfig) -> Result<ReportDoc, PipelineError> {
    let ctx = Ctx::new(cfg)?;
    let eval: Stamped<EvalDoc> = read_stamped(&ctx.paths.report("eval_report.json"), "eval report")?;
    let sim: Stamped<SimDoc> = read_stamped(&ctx.paths.report("scr.json"), "SCR report")?;
    for (what, h) in [("eval report", &eval.config_hash), ("SCR report", &sim.config_hash)] {
        if *h != ctx.hash {
            log::warn!("{what} was produced with config {h}, current config is {}", ctx.hash);
        }
    }
    let r = &eval.body.report;
    let doc = ReportDoc {
        edge_prediction: EdgeMetrics {
            split: eval.body.split.clone(),
            accuracy: r.accuracy,
            precision: r.precision,
            recall: r.recall,
            f1: r.f1,
            best_f1: r.best_f1,
            auc: r.auc,
            youden_threshold: r.youden_threshold,
        },
        k_fold: eval.body.k_fold.clone(),
        scr: sim.body.perturbed.clone(),
        scr_regular: sim.body.regular.clone(),
        fidelity: sim.body.fidelity.clone(),
    };
    ctx.write_json(&ctx.paths.report("report.json"), &doc)?;
    write_text(&ctx.paths.report("report.txt"), &report_text(&ctx, &doc))?;
    Ok(doc)
}

fn report_text(ctx: &Ctx, d: &ReportDoc) -> String {
    let m = &d.edge_prediction;
    let mut s = format!("config_hash {} seed {}\n\n", ctx.hash, ctx.cfg.seed);
    s += &format!("Edge prediction ({} split)\n", m.split);
    s += &format!("{:<22}{:>10}\n", "Metric", "Value");
    for (k, v) in [
        ("Accuracy", m.accuracy),
        ("Precision", m.precision),
        ("Recall", m.recall),
        ("F1 (Youden threshold)", m.f1),
        ("F1 (best threshold)", m.best_f1),
        ("ROC AUC", m.auc),
    ] {
        s += &format!("{k:<22}{v:>10.4}\n");
    }
    if let Some(k) = &d.k_fold {
        s += &format!(
            "{:<22}{:>10.4} ± {:.4} over {} folds\n",
            "k-fold test F1",
            k.mean_test_f1,
            k.std_test_f1,
            k.folds.len()
        );
    }
    s += "\nScenario collision rates, predicted corner cases\n";
    s += &d.scr.to_text();
    s += "\nScenario collision rates, unperturbed continuation\n";
    s += &d.scr_regular.to_text();
    s += &format!(
        "\nrelation fidelity: {}/{} ({:.2}%)\n",
        d.fidelity.matched,
        d.fidelity.total,
        100.0 * d.fidelity.rate
    );
    s
}

/// Runs every stage in order.
pub fn run_all(cfg: &PipelineConfig) -> Result<ReportDoc, PipelineError> {
    cmd_gen(cfg)?;
    cmd_train(cfg)?;
    cmd_eval(cfg, false)?;
    cmd_perturb(cfg)?;
    cmd_sim(cfg, false)?;
    cmd_report(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Overrides;

    fn tiny(dir: &Path) -> PipelineConfig {
        let mut c = PipelineConfig::from_toml(
            "[generation]\nn_scenarios = 18\n[train]\nepochs = 2\n[train.model]\nenc_hidden = 4\ngat1_out = 4\nmid_hidden = 4\nmid_out = 4\ntriple_hidden = 4\n[simulation]\nmin_episodes = 5\nprofiles = [\"Basic\", \"Cautious\"]\n",
        )
        .unwrap()
        .finalize(&Overrides::default())
        .unwrap();
        c.out_dir = dir.to_path_buf();
        c
    }

    #[test]
    fn stages_require_upstream_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny(dir.path());
        assert!(matches!(cmd_train(&c), Err(PipelineError::MissingInput(_))));
        assert!(matches!(cmd_eval(&c, false), Err(PipelineError::MissingInput(_))));
        assert!(matches!(cmd_report(&c), Err(PipelineError::MissingInput(_))));
        let e = cmd_sim(&c, false).unwrap_err();
        assert_eq!(e.kind(), "MissingInput");
        let v: serde_json::Value = serde_json::from_str(&e.to_json()).unwrap();
        assert_eq!(v["error"], "MissingInput");
    }

    #[test]
    fn tiny_pipeline_runs_and_stamps_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny(dir.path());
        let report = run_all(&c).unwrap();
        assert_eq!(report.scr.rows.len(), 2);
        cmd_sim(&c, true).unwrap();
        let hash = c.config_hash();
        for name in ["eval_report.json", "perturbations.json", "scr.json", "report.json", "train_log.json"] {
            let v: serde_json::Value =
                serde_json::from_str(&std::fs::read_to_string(dir.path().join(name)).unwrap()).unwrap();
            assert_eq!(v["config_hash"], hash.as_str(), "{name}");
            assert_eq!(v["seed"], 42, "{name}");
        }
        for name in ["roc.csv", "pr.csv", "train_log.csv"] {
            let s = std::fs::read_to_string(dir.path().join(name)).unwrap();
            assert!(s.starts_with(&format!("# config_hash={hash} seed=42\n")));
        }
        assert!(std::fs::read_dir(dir.path().join("traces")).unwrap().count() > 0);
    }

    #[test]
    fn layout_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let c = tiny(dir.path());
        cmd_gen(&c).unwrap();
        cmd_train(&c).unwrap();
        let p = c.paths().checkpoint;
        let s = std::fs::read_to_string(&p).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&s).unwrap();
        v["feature_layout_id"] = serde_json::json!("other");
        std::fs::write(&p, v.to_string()).unwrap();
        let e = cmd_eval(&c, false).unwrap_err();
        assert_eq!(e.kind(), "SchemaVersionMismatch");
    }
}
