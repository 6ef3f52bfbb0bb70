use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::Result;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use untangle_core::impossibility::run_demo;
use untangle_core::metrics::MetricsConfig;
use untangle_core::study::{
    self, resolve_workers, run_study, score_checkpoint, score_precomputed, AnalysisOptions, Cell, RecordStore,
    RunOptions, ScoreRecord, Status, StudyConfig, RECORD_METRICS, WORKERS_ENV,
};
use untangle_core::tensor_io;
use untangle_core::vae::{train_with, Checkpoint, Method, ObjectiveConfig, RepresentationMatrix, TrainOptions};
use untangle_core::worlds::{FactorMatrix, FactorWorld, ObservationBatch, WorldConfig, WorldManifest};

use crate::config;
use crate::error::{coded, Code};
use crate::manifest::Ctx;
use crate::Common;

/// Largest export `generate` will render in one go, in f32 values.
const MAX_EXPORT_VALUES: usize = 1 << 28;

const WORLD_FILE: &str = "world.json";
const FACTORS_FILE: &str = "factors.dtns";
const OBSERVATIONS_FILE: &str = "observations.dtns";

fn default_world() -> WorldConfig {
    WorldConfig::dsprites_lite(16)
}

fn default_steps() -> usize {
    5000
}

fn default_objective() -> ObjectiveConfig {
    ObjectiveConfig::BetaVae { beta: 4.0 }
}

fn default_unsupervised() -> usize {
    10_000
}

fn default_select() -> Vec<String> {
    vec!["all".into()]
}

fn default_d() -> usize {
    2
}

fn default_n() -> usize {
    100_000
}

/// File config, then command-line flags, then `--set` overrides. The
/// resolved config is recorded in the run manifest.
fn resolve<T: DeserializeOwned + Serialize>(
    ctx: &mut Ctx,
    common: &Common,
    flags: Vec<(&str, Value)>,
    what: &str,
) -> Result<T> {
    let mut value = config::load(common.config.as_deref())?;
    if let Some(p) = &common.config {
        ctx.input("config", p);
    }
    for (key, v) in flags {
        config::set(&mut value, key, v)?;
    }
    for spec in &common.overrides {
        config::apply_override(&mut value, spec)?;
    }
    let resolved: T = config::resolve(value, what)?;
    ctx.set_config(&resolved)?;
    Ok(resolved)
}

fn seed_flag(common: &Common) -> Vec<(&'static str, Value)> {
    common.seed.map(|s| ("seed", json!(s))).into_iter().collect()
}

fn world_flags(world: &Option<String>, size: Option<usize>) -> Vec<(&'static str, Value)> {
    let mut flags = Vec::new();
    if let Some(w) = world {
        flags.push(("world.kind", json!(w)));
    }
    if let Some(s) = size {
        flags.push(("world.size", json!(s)));
    }
    flags
}

fn read_manifest(ctx: &mut Ctx, path: &Path) -> Result<(WorldManifest, FactorWorld)> {
    ctx.input("world", path);
    let text = fs::read_to_string(path)
        .map_err(|e| coded(Code::Input, format!("cannot read world manifest {}: {e}", path.display())))?;
    let manifest: WorldManifest = serde_json::from_str(&text)
        .map_err(|e| coded(Code::Input, format!("bad world manifest {}: {e}", path.display())))?;
    let world = manifest.world()?;
    Ok((manifest, world))
}

fn load_tensor(ctx: &mut Ctx, name: &str, path: &Path) -> Result<tensor_io::Tensor> {
    ctx.input(name, path);
    tensor_io::load(path).map_err(|e| coded(Code::Input, format!("cannot load {name} tensor {}: {e}", path.display())))
}

fn load_checkpoint(ctx: &mut Ctx, path: &Path) -> Result<Checkpoint> {
    ctx.input("checkpoint", path);
    Checkpoint::load(path).map_err(|e| coded(Code::Input, format!("cannot load checkpoint {}: {e}", path.display())))
}

fn load_store(path: &Path) -> Result<RecordStore> {
    RecordStore::load(path).map_err(|e| coded(Code::Input, format!("cannot read score store {}: {e}", path.display())))
}

fn check_world(ckpt: &Checkpoint, world: &FactorWorld) -> Result<()> {
    if ckpt.world_hash != world.manifest_hash() {
        return Err(coded(
            Code::Input,
            format!(
                "checkpoint was trained on {} ({}) but the data is {} ({})",
                ckpt.world.label(),
                ckpt.world_hash,
                world.config().label(),
                world.manifest_hash()
            ),
        ));
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GenerateConfig {
    #[serde(default = "default_world")]
    world: WorldConfig,
    /// Rows to sample; the full grid when absent.
    #[serde(default)]
    samples: Option<usize>,
    #[serde(default)]
    seed: u64,
}

pub fn generate(
    ctx: &mut Ctx,
    common: &Common,
    world: &Option<String>,
    size: Option<usize>,
    samples: Option<usize>,
) -> Result<()> {
    let mut flags = world_flags(world, size);
    if let Some(n) = samples {
        flags.push(("samples", json!(n)));
    }
    flags.extend(seed_flag(common));
    let cfg: GenerateConfig = resolve(ctx, common, flags, "generate")?;
    let world = FactorWorld::new(cfg.world)?;
    let rows = match cfg.samples {
        Some(0) => return Err(coded(Code::Validation, "samples must be at least 1")),
        Some(n) => n,
        None => world.space().grid_size().try_into().unwrap_or(usize::MAX),
    };
    if rows.saturating_mul(world.pixels()) > MAX_EXPORT_VALUES {
        return Err(coded(
            Code::Validation,
            format!("{} rows of {} values is too large to export; use --samples", rows, world.pixels()),
        ));
    }
    let factors = match cfg.samples {
        Some(n) => world.sample_factors(n, cfg.seed),
        None => world.enumerate_grid()?,
    };
    let observations = world.render(&factors)?;
    let manifest = WorldManifest::new(&world, factors.rows(), cfg.samples.map(|_| cfg.seed));
    fs::write(ctx.output(WORLD_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    tensor_io::save(&ctx.output(FACTORS_FILE), &factors.to_tensor()?)?;
    tensor_io::save(&ctx.output(OBSERVATIONS_FILE), &observations.to_tensor()?)?;
    println!("{}: {} rows of {} values", world.config().label(), factors.rows(), world.pixels());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainConfig {
    #[serde(default = "default_world")]
    world: WorldConfig,
    #[serde(default = "default_objective")]
    objective: ObjectiveConfig,
    #[serde(default = "default_steps")]
    steps: usize,
    #[serde(default)]
    train: TrainOptions,
    #[serde(default)]
    seed: u64,
}

pub fn train(
    ctx: &mut Ctx,
    common: &Common,
    world: &Option<String>,
    size: Option<usize>,
    method: &Option<String>,
    strength: Option<f64>,
    steps: Option<usize>,
) -> Result<()> {
    let mut flags = world_flags(world, size);
    if let Some(s) = steps {
        flags.push(("steps", json!(s)));
    }
    flags.extend(seed_flag(common));
    if method.is_some() || strength.is_some() {
        // The objective needs the final step count (annealing schedule), so
        // peek at it before building the objective from the flags.
        let file = config::load(common.config.as_deref())?;
        let file_steps = file.get("steps").and_then(Value::as_u64).map(|s| s as usize);
        let file_method = file.pointer("/objective/method").and_then(Value::as_str).map(str::to_string);
        let name = method.clone().or(file_method).unwrap_or_else(|| Method::BetaVae.name().to_string());
        let m = Method::parse(&name).ok_or_else(|| coded(Code::Usage, format!("unknown method '{name}'")))?;
        let strength = strength.unwrap_or(m.default_sweep()[2]);
        let objective = m.config_for_strength(strength, steps.or(file_steps).unwrap_or_else(default_steps));
        flags.push(("objective", serde_json::to_value(objective)?));
    }
    let cfg: TrainConfig = resolve(ctx, common, flags, "train")?;
    let world = FactorWorld::new(cfg.world.clone())?;
    let run = study::run_id(&cfg.world, &cfg.objective, cfg.seed);
    log::info!("training {run} for {} steps", cfg.steps);
    let ckpt = train_with(&world, &cfg.objective, cfg.steps, cfg.seed, &cfg.train)?;
    ckpt.save(&ctx.output("model.ckpt"))?;
    let h = &ckpt.history;
    let mut tsv = String::from("step\trecon\tkl\tregularizer\n");
    for i in 0..h.len() {
        writeln!(tsv, "{}\t{}\t{}\t{}", i + 1, h.recon[i], h.kl[i], h.regularizer[i])?;
    }
    fs::write(ctx.output("history.tsv"), tsv)?;
    let last = h.len() - 1;
    println!("{run}: recon {:.4} kl {:.4}", h.recon[last], h.kl[last]);
    Ok(())
}

/// Encoding is deterministic; the seed is accepted for uniformity and
/// recorded in the manifest.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EncodeConfig {
    #[serde(default)]
    seed: u64,
}

pub fn encode(ctx: &mut Ctx, common: &Common, ckpt_path: &Path, data: &Path) -> Result<()> {
    let _cfg: EncodeConfig = resolve(ctx, common, seed_flag(common), "encode")?;
    let ckpt = load_checkpoint(ctx, ckpt_path)?;
    let (manifest, world) = read_manifest(ctx, &data.join(WORLD_FILE))?;
    check_world(&ckpt, &world)?;
    let obs = ObservationBatch::from_tensor(&load_tensor(ctx, "observations", &data.join(OBSERVATIONS_FILE))?)?;
    if obs.rows() != manifest.rows || obs.width() != world.pixels() {
        return Err(coded(
            Code::Input,
            format!(
                "observations are {}x{}, manifest says {}x{}",
                obs.rows(),
                obs.width(),
                manifest.rows,
                world.pixels()
            ),
        ));
    }
    let reps = ckpt.encode(&obs)?;
    tensor_io::save(&ctx.output("reps.dtns"), &reps.to_tensor()?)?;
    fs::copy(data.join(FACTORS_FILE), ctx.output(FACTORS_FILE))?;
    fs::copy(data.join(WORLD_FILE), ctx.output(WORLD_FILE))?;
    println!("encoded {} rows into {} dims", reps.rows(), reps.cols());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvaluateConfig {
    #[serde(default)]
    metrics: MetricsConfig,
    #[serde(default = "default_unsupervised")]
    unsupervised_samples: usize,
    /// `["all"]` or score names.
    #[serde(default = "default_select")]
    select: Vec<String>,
    #[serde(default)]
    seed: u64,
}

/// Explicitly named scores, or `None` for `all`: every score the input
/// supports.
fn selected(select: &[String]) -> Result<Option<Vec<&'static str>>> {
    if select.iter().any(|s| s == "all") {
        return Ok(None);
    }
    let mut out = Vec::new();
    for name in select {
        let m = RECORD_METRICS.iter().find(|m| **m == name.as_str()).ok_or_else(|| {
            coded(Code::Schema, format!("unknown score '{name}'; known: {}", RECORD_METRICS.join(", ")))
        })?;
        if !out.contains(m) {
            out.push(*m);
        }
    }
    if out.is_empty() {
        return Err(coded(Code::Schema, "no scores selected"));
    }
    Ok(Some(out))
}

pub fn evaluate(
    ctx: &mut Ctx,
    common: &Common,
    ckpt_path: Option<&Path>,
    world_path: Option<&Path>,
    precomputed: Option<(&Path, &Path)>,
    metrics: &Option<String>,
) -> Result<()> {
    let mut flags = seed_flag(common);
    if let Some(list) = metrics {
        let names: Vec<&str> = list.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
        flags.push(("select", json!(names)));
    }
    let cfg: EvaluateConfig = resolve(ctx, common, flags, "evaluate")?;
    let wanted = selected(&cfg.select)?;
    if cfg.unsupervised_samples < 1000 {
        return Err(coded(Code::Schema, "unsupervised_samples must be at least 1000"));
    }

    let records: Vec<ScoreRecord> = match (ckpt_path, precomputed) {
        (Some(path), None) => {
            let ckpt = load_checkpoint(ctx, path)?;
            let world = match world_path {
                Some(p) => read_manifest(ctx, p)?.1,
                None => FactorWorld::new(ckpt.world.clone())?,
            };
            check_world(&ckpt, &world)?;
            let scores = score_checkpoint(&world, &ckpt, &cfg.metrics, cfg.unsupervised_samples, cfg.seed)?;
            Cell::new(ckpt.world.clone(), ckpt.objective, ckpt.seed).records(Ok(scores))
        }
        (None, Some((reps_path, factors_path))) => {
            let world_path =
                world_path.ok_or_else(|| coded(Code::Usage, "--reps/--factors need --world <manifest>"))?;
            let (_, world) = read_manifest(ctx, world_path)?;
            let codes = RepresentationMatrix::from_tensor(&load_tensor(ctx, "reps", reps_path)?)?;
            let factors =
                FactorMatrix::from_tensor(&load_tensor(ctx, "factors", factors_path)?, world.space().cardinalities())?;
            let scores = score_precomputed(&world, &factors, &codes, &cfg.metrics, cfg.seed)?;
            let stem = reps_path.file_stem().map_or("reps".into(), |s| s.to_string_lossy().into_owned());
            scores
                .into_iter()
                .map(|(metric, value)| ScoreRecord {
                    run_id: format!("{}__precomputed__{stem}__seed{}", world.config().label(), cfg.seed),
                    world: world.config().label(),
                    method: "precomputed".into(),
                    hparam_name: "none".into(),
                    hparam_value: 0.0,
                    seed: cfg.seed,
                    metric,
                    value,
                    status: Status::Ok,
                })
                .collect()
        }
        _ => return Err(coded(Code::Usage, "give either --ckpt or both --reps and --factors")),
    };

    let kept: Vec<ScoreRecord> = match wanted {
        None => records,
        Some(wanted) => {
            let missing: Vec<&str> =
                wanted.iter().copied().filter(|w| !records.iter().any(|r| r.metric == *w)).collect();
            if !missing.is_empty() {
                return Err(coded(
                    Code::Validation,
                    format!(
                        "not available for these codes: {} (sampled rows support mig, modularity, dci, sap)",
                        missing.join(", ")
                    ),
                ));
            }
            records.into_iter().filter(|r| wanted.contains(&r.metric.as_str())).collect()
        }
    };
    for r in &kept {
        println!("{}\t{}", r.metric, r.value);
    }
    let mut store = RecordStore::new();
    store.append(kept, false)?;
    store.save(&ctx.output("scores.csv"))?;
    Ok(())
}

pub fn study(ctx: &mut Ctx, common: &Common, workers: Option<usize>, force: bool, keep: bool) -> Result<()> {
    if common.config.is_none() {
        return Err(coded(Code::Usage, "study needs --config <FILE>"));
    }
    let flags = common.seed.map(|s| ("seeds", json!([s]))).into_iter().collect();
    let cfg: StudyConfig = resolve(ctx, common, flags, "study")?;
    cfg.validate()?;
    let env = std::env::var(WORKERS_ENV).ok();
    let workers = resolve_workers(workers, env.as_deref(), cfg.workers)?;
    let store_path = ctx.output("scores.csv");
    let mut store = if store_path.exists() {
        ctx.input("store", &store_path);
        load_store(&store_path)?
    } else {
        RecordStore::new()
    };
    let checkpoint_dir = keep.then(|| ctx.output("checkpoints"));
    let options = RunOptions { workers, force, checkpoint_dir, store_path: Some(store_path) };
    run_study(&cfg, &mut store, &options)?;
    let runs = cfg.cells();
    let failed = runs
        .iter()
        .filter(|c| store.records().iter().any(|r| r.run_id == c.run_id && r.status == Status::Failed))
        .count();
    println!("{} runs, {failed} failed, {} records in store", runs.len(), store.len());
    Ok(())
}

pub fn analyze(ctx: &mut Ctx, common: &Common, store_path: &Path, trials: Option<usize>) -> Result<()> {
    let mut flags = seed_flag(common);
    if let Some(t) = trials {
        flags.push(("transfer_trials", json!(t)));
    }
    let opts: AnalysisOptions = resolve(ctx, common, flags, "analyze")?;
    ctx.input("store", store_path);
    let store = load_store(store_path)?;
    let summary = study::analyze(&store, &ctx.out, &opts)?;
    for f in &summary.files {
        let rel = f.strip_prefix(&ctx.out).unwrap_or(f);
        ctx.output(&rel.display().to_string());
    }
    let transfers = summary.transfer.iter().filter(|t| t.result.is_some()).count();
    println!(
        "{} records: {} ANOVA rows, {transfers}/{} transfer pairs",
        summary.records,
        summary.anova.len(),
        summary.transfer.len()
    );
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImpossibilityConfig {
    #[serde(default = "default_d")]
    d: usize,
    #[serde(default = "default_n")]
    n: usize,
    /// Fixed Givens angle in radians; random angles when absent.
    #[serde(default)]
    angle: Option<f64>,
    #[serde(default)]
    seed: u64,
}

pub fn impossibility(
    ctx: &mut Ctx,
    common: &Common,
    d: Option<usize>,
    n: Option<usize>,
    angle: Option<f64>,
) -> Result<()> {
    let mut flags = seed_flag(common);
    flags.extend(d.map(|v| ("d", json!(v))));
    flags.extend(n.map(|v| ("n", json!(v))));
    flags.extend(angle.map(|v| ("angle", json!(v))));
    let cfg: ImpossibilityConfig = resolve(ctx, common, flags, "impossibility")?;
    let report = run_demo(cfg.d, cfg.n, cfg.seed, cfg.angle)?;
    fs::write(ctx.output("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
    let mut tsv = String::new();
    let header: Vec<String> =
        (0..cfg.d).map(|i| format!("z{i}")).chain((0..cfg.d).map(|i| format!("z_hat{i}"))).collect();
    tsv.push_str(&header.join("\t"));
    tsv.push('\n');
    for p in &report.scatter {
        let row: Vec<String> = p.z.iter().chain(&p.z_hat).map(|v| v.to_string()).collect();
        tsv.push_str(&row.join("\t"));
        tsv.push('\n');
    }
    fs::write(ctx.output("scatter.tsv"), tsv)?;
    println!(
        "observations identical: {}; MIG world A {:.3} vs world B {:.3} (identity code), {:.3} vs {:.3} (rotated code)",
        report.pushforward_identical,
        report.identity.mig_a,
        report.identity.mig_b,
        report.rotated.mig_a,
        report.rotated.mig_b
    );
    Ok(())
}
