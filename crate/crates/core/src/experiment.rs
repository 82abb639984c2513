//! Reproducible experiments driven by a JSON config: dataset generation, the
//! proposal-level pilot study, training, evaluation, ablation grids and mask
//! diagnostics. Every command is a pure function of (config, seed) and writes
//! CSV (canonical) plus SVG (convenience) artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::{train, DecoderWeights, EpochMetrics, TrainConfig};
use crate::depthprior::{ConfidenceNet, LambdaMode};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate_model, pilot_split, EvalReport, EvalSetup, Origin, PilotRow};
use crate::masking::{apply_policy, first_projection, MaskKind, MaskPolicy};
use crate::pipeline::confidence_examples;
use crate::rng::{derive_seed, tag};
use crate::scenesim::{apply_domain, generate_scene, read_dataset, write_dataset, DomainName, DomainTag, Scene, SimConfig, CLASS_NAMES};
use crate::svg;

pub const CONFIG_VERSION: &str = "ccf-experiment-v1";
pub const TRAIN_SPLIT: &str = "train";
pub const EVAL_SPLITS: [&str; 4] = ["source", "rain", "night", "geo"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub dataset: PathBuf,
    pub output: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            dataset: "data".into(),
            output: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_scenes: usize,
    /// Scenes per held-out split; the domain splits corrupt the same base
    /// scenes as `source`.
    pub eval_scenes: usize,
    pub rain_severity: f64,
    pub night_severity: f64,
    pub geo_severity: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            train_scenes: 48,
            eval_scenes: 24,
            rain_severity: 0.8,
            night_severity: 0.8,
            geo_severity: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub splits: Vec<String>,
    /// Decoder weights to evaluate; defaults to `<output>/weights.json`.
    pub weights: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            splits: EVAL_SPLITS.iter().map(|s| s.to_string()).collect(),
            weights: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaskStatsConfig {
    pub scenes: usize,
}

impl Default for MaskStatsConfig {
    fn default() -> Self {
        Self { scenes: 8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: String,
    pub seed: u64,
    #[serde(default)]
    pub paths: Paths,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub splits: SplitConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub mask_stats: MaskStatsConfig,
}

impl ExperimentConfig {
    /// A default config with the given seed and paths.
    pub fn new(seed: u64, dataset: impl Into<PathBuf>, output: impl Into<PathBuf>) -> Self {
        Self {
            version: CONFIG_VERSION.into(),
            seed,
            paths: Paths {
                dataset: dataset.into(),
                output: output.into(),
            },
            sim: SimConfig::default(),
            splits: SplitConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            mask_stats: MaskStatsConfig::default(),
        }
    }

    /// Parses a config; relative paths are taken relative to `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Version {
            version: Option<String>,
        }
        let v: Version = serde_json::from_str(text)?;
        let found = v.version.ok_or_else(|| Error::InvalidConfig("missing field `version`".into()))?;
        if found != CONFIG_VERSION {
            return Err(Error::VersionMismatch {
                expected: CONFIG_VERSION.into(),
                found,
            });
        }
        let mut cfg: ExperimentConfig = serde_json::from_str(text)?;
        for p in [&mut cfg.paths.dataset, &mut cfg.paths.output] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(w) = cfg.eval.weights.as_mut() {
            if w.is_relative() {
                *w = base.join(&*w);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, &base)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.train.validate()?;
        let s = &self.splits;
        for (name, v) in [("rain", s.rain_severity), ("night", s.night_severity), ("geo", s.geo_severity)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidConfig(format!("splits.{name}_severity {v} outside [0, 1]")));
            }
        }
        for name in &self.eval.splits {
            if !EVAL_SPLITS.contains(&name.as_str()) && name != TRAIN_SPLIT {
                return Err(Error::InvalidConfig(format!("unknown split `{name}`")));
            }
        }
        Ok(())
    }

    pub fn split_path(&self, split: &str) -> PathBuf {
        self.paths.dataset.join(format!("{split}.jsonl"))
    }

    fn weights_path(&self) -> PathBuf {
        self.eval.weights.clone().unwrap_or_else(|| self.paths.output.join("weights.json"))
    }
}

/// Formats an optional metric; absent values become `NA`.
pub fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.6}"),
        Some(x) if x.is_infinite() => "inf".into(),
        _ => "NA".into(),
    }
}

fn fmt(v: f64) -> String {
    fmt_opt(Some(v))
}

fn write_file(path: &Path, contents: &str) -> Result<PathBuf> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

fn csv(header: &str, rows: &[Vec<String>]) -> String {
    let mut s = String::from(header);
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}

fn domain_for(split: &str, cfg: &SplitConfig) -> Option<DomainTag> {
    let (name, sev) = match split {
        "rain" => (DomainName::Rain, cfg.rain_severity),
        "night" => (DomainName::Night, cfg.night_severity),
        "geo" => (DomainName::Geo, cfg.geo_severity),
        _ => return None,
    };
    DomainTag::new(name, sev).ok()
}

/// Scenes of one split, generated in memory.
pub fn generate_split(cfg: &ExperimentConfig, split: &str) -> Result<Vec<Scene>> {
    let (stream, n) = if split == TRAIN_SPLIT {
        (0, cfg.splits.train_scenes)
    } else {
        (1, cfg.splits.eval_scenes)
    };
    let domain = domain_for(split, &cfg.splits);
    (0..n)
        .into_par_iter()
        .map(|i| {
            let base = generate_scene(&cfg.sim, derive_seed(cfg.seed, &[tag::SCENE, stream, i as u64]))?;
            Ok(match domain {
                Some(d) => apply_domain(&base, d, derive_seed(cfg.seed, &[tag::DOMAIN, i as u64])),
                None => base,
            })
        })
        .collect()
}

pub fn load_split(cfg: &ExperimentConfig, split: &str) -> Result<Vec<Scene>> {
    read_dataset(cfg.split_path(split))
}

/// Writes the training split and every held-out split. Returns
/// `(split, scene count)` per written file.
pub fn cmd_gen(cfg: &ExperimentConfig) -> Result<Vec<(String, usize)>> {
    let dir = &cfg.paths.dataset;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for split in std::iter::once(TRAIN_SPLIT).chain(EVAL_SPLITS) {
        let scenes = generate_split(cfg, split)?;
        write_dataset(&scenes, cfg.split_path(split))?;
        out.push((split.to_string(), scenes.len()));
    }
    Ok(out)
}

/// The fusion-weight network for a config: trained on the training split
/// when the depth prior is enabled.
fn fusion_weights(cfg: &ExperimentConfig, train_scenes: &[Scene]) -> Result<(ConfidenceNet, LambdaMode)> {
    let bins = &cfg.train.pipeline.bins;
    let mut net = ConfidenceNet::with_defaults(bins.count, derive_seed(cfg.seed, &[tag::INIT, 1]));
    if !cfg.train.depth_prior {
        return Ok((net, LambdaMode::Fixed(1.0)));
    }
    let data = confidence_examples(train_scenes, &cfg.train.pipeline, derive_seed(cfg.seed, &[tag::INIT, 2]))?;
    net.train(&data, bins, &cfg.train.conf)?;
    Ok((net, LambdaMode::Learned))
}

/// Pilot study on proposals alone, per held-out split.
pub fn pilot_rows(cfg: &ExperimentConfig) -> Result<Vec<PilotRow>> {
    let train_scenes = if cfg.train.depth_prior { load_split(cfg, TRAIN_SPLIT)? } else { Vec::new() };
    let (net, lambda) = fusion_weights(cfg, &train_scenes)?;
    cfg.eval
        .splits
        .iter()
        .map(|split| {
            let scenes = load_split(cfg, split)?;
            pilot_split(split, &scenes, &cfg.train.pipeline, lambda, &net, &cfg.train.matching, derive_seed(cfg.seed, &[tag::PROPOSAL_2D]))
        })
        .collect()
}

pub fn cmd_pilot(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let rows = pilot_rows(cfg)?;
    let out = &cfg.paths.output;
    let mut written = Vec::new();
    let map2d: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.split.clone(), fmt_opt(r.map2d_native), fmt_opt(r.map2d_projected)])
        .collect();
    written.push(write_file(&out.join("pilot_2d_map.csv"), &csv("split,native_2d_map50,projected_3d_map50", &map2d))?);
    let origin: Vec<Vec<String>> = rows
        .iter()
        .flat_map(|r| {
            [
                vec![r.split.clone(), Origin::From2D.as_str().into(), fmt_opt(r.map3d_from_2d)],
                vec![r.split.clone(), Origin::From3D.as_str().into(), fmt_opt(r.map3d_from_3d)],
            ]
        })
        .collect();
    written.push(write_file(&out.join("pilot_origin_map.csv"), &csv("split,origin,map", &origin))?);
    let sup: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let absent = r.supervision.samples == 0;
            vec![
                r.split.clone(),
                "fused".into(),
                if absent { "NA".into() } else { fmt(r.supervision.mean_matched_2d) },
                if absent { "NA".into() } else { fmt(r.supervision.mean_matched_3d) },
                if absent { "NA".into() } else { fmt(r.supervision.ratio) },
            ]
        })
        .collect();
    written.push(write_file(&out.join("pilot_supervision.csv"), &csv("split,pass,matched2d,matched3d,ratio", &sup))?);
    let depth: Vec<Vec<String>> = rows
        .iter()
        .flat_map(|r| {
            [
                vec![r.split.clone(), "image".into(), fmt_opt(r.depth_mae_image)],
                vec![r.split.clone(), "fused".into(), fmt_opt(r.depth_mae_fused)],
            ]
        })
        .collect();
    written.push(write_file(&out.join("pilot_depth_mae.csv"), &csv("split,source,depth_mae_m", &depth))?);

    let labels: Vec<String> = rows.iter().map(|r| r.split.clone()).collect();
    written.push(write_file(
        &out.join("pilot_2d_map.svg"),
        &svg::bar_chart(
            "2D mAP@50: native image proposals vs projected LiDAR proposals",
            &labels,
            &[
                ("native 2D".into(), rows.iter().map(|r| r.map2d_native).collect()),
                ("projected 3D".into(), rows.iter().map(|r| r.map2d_projected).collect()),
            ],
        ),
    )?);
    written.push(write_file(
        &out.join("pilot_origin_map.svg"),
        &svg::bar_chart(
            "3D mAP by query origin",
            &labels,
            &[
                ("image queries".into(), rows.iter().map(|r| r.map3d_from_2d).collect()),
                ("LiDAR queries".into(), rows.iter().map(|r| r.map3d_from_3d).collect()),
            ],
        ),
    )?);
    Ok(written)
}

/// One training run's artifacts.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub name: String,
    pub dir: PathBuf,
    pub weights: DecoderWeights,
    pub confnet: ConfidenceNet,
    pub lambda: LambdaMode,
    pub log: Vec<EpochMetrics>,
}

fn log_csv(log: &[EpochMetrics]) -> String {
    let rows: Vec<Vec<String>> = log
        .iter()
        .map(|m| {
            vec![
                m.epoch.to_string(),
                m.split.clone(),
                fmt(m.loss_2d),
                fmt(m.loss_3d),
                fmt(m.loss_fused),
                fmt(m.loss_total),
                fmt_opt(m.map),
            ]
        })
        .collect();
    csv("epoch,split,L_2d,L_3d,L_fused,L_total,mAP", &rows)
}

fn load_eval_splits(cfg: &ExperimentConfig) -> Result<Vec<(String, Vec<Scene>)>> {
    cfg.eval.splits.iter().map(|s| Ok((s.clone(), load_split(cfg, s)?))).collect()
}

/// Trains one model and writes weights, fusion net and log into `dir`.
pub fn run_training(cfg: &ExperimentConfig, name: &str, train_cfg: &TrainConfig, dir: &Path) -> Result<RunResult> {
    let train_scenes = load_split(cfg, TRAIN_SPLIT)?;
    let evals = load_eval_splits(cfg)?;
    let eval_refs: Vec<(&str, &[Scene])> = evals.iter().map(|(n, s)| (n.as_str(), s.as_slice())).collect();
    let outcome = train(&train_scenes, &eval_refs, train_cfg, cfg.seed)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    outcome.weights.save(dir.join("weights.json"))?;
    outcome.confnet.save(dir.join("confnet.json"))?;
    write_file(&dir.join("train_log.csv"), &log_csv(&outcome.log))?;
    let train_rows: Vec<&EpochMetrics> = outcome.log.iter().filter(|m| m.split == TRAIN_SPLIT).collect();
    write_file(
        &dir.join("train_loss.svg"),
        &svg::line_chart(
            "training loss",
            &train_rows.iter().map(|m| m.epoch as f64).collect::<Vec<_>>(),
            &[
                ("total".into(), train_rows.iter().map(|m| m.loss_total).collect()),
                ("2d".into(), train_rows.iter().map(|m| m.loss_2d).collect()),
                ("3d".into(), train_rows.iter().map(|m| m.loss_3d).collect()),
                ("fused".into(), train_rows.iter().map(|m| m.loss_fused).collect()),
            ],
        ),
    )?;
    Ok(RunResult {
        name: name.to_string(),
        dir: dir.to_path_buf(),
        weights: outcome.weights,
        confnet: outcome.confnet,
        lambda: outcome.lambda,
        log: outcome.log,
    })
}

/// Component toggles of the ablation grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Toggle {
    /// Decoupled per-modality supervision.
    Qdl,
    /// LiDAR-guided depth prior.
    Lgdp,
    /// Complementary cross-modal masking.
    Ccm,
}

impl Toggle {
    pub fn as_str(&self) -> &'static str {
        match self {
            Toggle::Qdl => "qdl",
            Toggle::Lgdp => "lgdp",
            Toggle::Ccm => "ccm",
        }
    }
}

/// Parses `qdl,lgdp,ccm` (any subset, or `all`).
pub fn parse_ablation(spec: &str) -> Result<Vec<Toggle>> {
    if spec.trim() == "all" {
        return Ok(vec![Toggle::Qdl, Toggle::Lgdp, Toggle::Ccm]);
    }
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let t = match part.to_ascii_lowercase().as_str() {
            "qdl" => Toggle::Qdl,
            "lgdp" => Toggle::Lgdp,
            "ccm" => Toggle::Ccm,
            other => return Err(Error::InvalidConfig(format!("unknown ablation toggle `{other}` (expected qdl, lgdp, ccm)"))),
        };
        if !out.contains(&t) {
            out.push(t);
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidConfig("empty ablation spec".into()));
    }
    Ok(out)
}

/// Every on/off combination of `toggles` as `(run name, train config)`;
/// toggles not listed keep their configured values.
pub fn ablation_grid(base: &TrainConfig, toggles: &[Toggle]) -> Vec<(String, TrainConfig)> {
    (0..1usize << toggles.len())
        .map(|bits| {
            let mut c = base.clone();
            let mut on = Vec::new();
            for (i, t) in toggles.iter().enumerate() {
                let enabled = bits >> (toggles.len() - 1 - i) & 1 == 1;
                match t {
                    Toggle::Qdl => c.decoupled = enabled,
                    Toggle::Lgdp => c.depth_prior = enabled,
                    Toggle::Ccm => c.mask = MaskPolicy { kind: if enabled { MaskKind::ComplementaryGrid } else { MaskKind::None }, ..c.mask.clone() },
                }
                if enabled {
                    on.push(t.as_str());
                }
            }
            let name = if on.is_empty() { "baseline".to_string() } else { on.join("+") };
            (name, c)
        })
        .collect()
}

/// Trains a single model, or the ablation grid when `ablate` is given.
pub fn cmd_train(cfg: &ExperimentConfig, ablate: Option<&str>) -> Result<Vec<RunResult>> {
    match ablate {
        None => Ok(vec![run_training(cfg, "model", &cfg.train, &cfg.paths.output)?]),
        Some(spec) => {
            let toggles = parse_ablation(spec)?;
            ablation_grid(&cfg.train, &toggles)
                .into_iter()
                .map(|(name, tc)| {
                    let dir = cfg.paths.output.join("ablate").join(&name);
                    run_training(cfg, &name, &tc, &dir)
                })
                .collect()
        }
    }
}

/// Evaluates a model on every configured split.
pub fn evaluate_splits(cfg: &ExperimentConfig, weights: &DecoderWeights, confnet: &ConfidenceNet, lambda: LambdaMode) -> Result<Vec<EvalReport>> {
    let setup = EvalSetup {
        pipeline: &cfg.train.pipeline,
        confnet,
        lambda,
        matching: &cfg.train.matching,
        seed: derive_seed(cfg.seed, &[tag::PROPOSAL_2D, 0xE7A1]),
    };
    load_eval_splits(cfg)?
        .iter()
        .map(|(name, scenes)| evaluate_model(weights, name, scenes, &setup))
        .collect()
}

/// Writes per-split report CSVs for one model into `dir`.
pub fn write_reports(dir: &Path, reports: &[EvalReport]) -> Result<Vec<PathBuf>> {
    let mut ap = Vec::new();
    let mut origin = Vec::new();
    let mut depth = Vec::new();
    let mut sup = Vec::new();
    let mut metrics = Vec::new();
    for r in reports {
        for (c, t, v) in &r.per_class_ap {
            ap.push(vec![r.split.clone(), CLASS_NAMES[*c].into(), format!("{t}"), fmt(*v)]);
        }
        for (o, m) in &r.per_origin_map {
            origin.push(vec![r.split.clone(), o.as_str().into(), fmt_opt(*m)]);
        }
        depth.push(vec![r.split.clone(), "image".into(), fmt_opt(r.depth_mae_image)]);
        depth.push(vec![r.split.clone(), "fused".into(), fmt_opt(r.depth_mae_fused)]);
        let absent = r.supervision.samples == 0;
        sup.push(vec![
            r.split.clone(),
            "fused".into(),
            if absent { "NA".into() } else { fmt(r.supervision.mean_matched_2d) },
            if absent { "NA".into() } else { fmt(r.supervision.mean_matched_3d) },
            if absent { "NA".into() } else { fmt(r.supervision.ratio) },
        ]);
        let absent_classes: Vec<&str> = r.absent_classes.iter().map(|c| CLASS_NAMES[*c]).collect();
        metrics.push(vec![
            r.split.clone(),
            r.scenes.to_string(),
            fmt_opt(r.map),
            fmt_opt(r.translation_error),
            absent_classes.join(";"),
        ]);
    }
    Ok(vec![
        write_file(&dir.join("eval_ap.csv"), &csv("split,class,threshold,ap", &ap))?,
        write_file(&dir.join("eval_origin_map.csv"), &csv("split,origin,map", &origin))?,
        write_file(&dir.join("eval_depth_mae.csv"), &csv("split,source,depth_mae_m", &depth))?,
        write_file(&dir.join("eval_supervision.csv"), &csv("split,pass,matched2d,matched3d,ratio", &sup))?,
        write_file(&dir.join("eval_metrics.csv"), &csv("split,scenes,map,translation_error_m,absent_classes", &metrics))?,
        write_file(
            &dir.join("eval_meta.json"),
            &serde_json::to_string_pretty(&serde_json::json!({
                "absent_class_rule": "classes without ground truth in a split are excluded from that split's mean",
                "origin_attribution": "a detection carries the origin of the query that produced it",
                "thresholds_m": crate::evalkit::DEFAULT_THRESHOLDS,
            }))
            .expect("serializable"),
        )?,
    ])
}

/// Cross-split mAP table: one row per model, one column per split.
pub fn summary_table(splits: &[String], rows: &[(String, Vec<EvalReport>)]) -> String {
    let mut s = String::from("method");
    for sp in splits {
        let _ = write!(s, ",{sp}");
    }
    s.push('\n');
    for (name, reports) in rows {
        s.push_str(name);
        for sp in splits {
            let m = reports.iter().find(|r| &r.split == sp).and_then(|r| r.map);
            let _ = write!(s, ",{}", fmt_opt(m));
        }
        s.push('\n');
    }
    s
}

/// Loads the model named by the config and evaluates it.
pub fn cmd_eval(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let wpath = cfg.weights_path();
    let weights = DecoderWeights::load(&wpath)?;
    let (confnet, lambda) = if cfg.train.depth_prior {
        let cpath = wpath.with_file_name("confnet.json");
        (ConfidenceNet::load(&cpath)?, LambdaMode::Learned)
    } else {
        (ConfidenceNet::with_defaults(cfg.train.pipeline.bins.count, 0), LambdaMode::Fixed(1.0))
    };
    let reports = evaluate_splits(cfg, &weights, &confnet, lambda)?;
    let out = &cfg.paths.output;
    let mut written = write_reports(out, &reports)?;
    let table = summary_table(&cfg.eval.splits, &[("model".into(), reports)]);
    written.push(write_file(&out.join("eval_summary.csv"), &table)?);
    Ok(written)
}

/// Trains and evaluates the ablation grid; writes a summary table.
pub fn cmd_ablate(cfg: &ExperimentConfig, spec: &str) -> Result<Vec<PathBuf>> {
    let runs = cmd_train(cfg, Some(spec))?;
    let mut rows = Vec::new();
    let mut written = Vec::new();
    for run in runs {
        let reports = evaluate_splits(cfg, &run.weights, &run.confnet, run.lambda)?;
        written.extend(write_reports(&run.dir, &reports)?);
        rows.push((run.name, reports));
    }
    let out = &cfg.paths.output;
    written.push(write_file(&out.join("ablate_summary.csv"), &summary_table(&cfg.eval.splits, &rows))?);
    let labels: Vec<String> = cfg.eval.splits.clone();
    let series: Vec<(String, Vec<Option<f64>>)> = rows
        .iter()
        .map(|(name, reports)| {
            (
                name.clone(),
                labels.iter().map(|sp| reports.iter().find(|r| &r.split == sp).and_then(|r| r.map)).collect(),
            )
        })
        .collect();
    written.push(write_file(&out.join("ablate_summary.svg"), &svg::bar_chart("mAP by ablation", &labels, &series))?);
    Ok(written)
}

/// Per-scene statistics of one masking variant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaskStats {
    pub variant: MaskKind,
    pub scene: usize,
    pub masked_fraction: f64,
    /// Share of projectable points that survive.
    pub points_retained_fraction: f64,
    /// Share of projectable points that land on visible image cells.
    pub image_visible_fraction: f64,
}

/// Mask diagnostics over freshly generated training-distribution scenes,
/// with every variant forced to fire.
pub fn mask_stats(cfg: &ExperimentConfig) -> Result<(Vec<MaskStats>, Vec<(MaskKind, crate::masking::Mask)>)> {
    let scenes: Vec<Scene> = (0..cfg.mask_stats.scenes)
        .into_par_iter()
        .map(|i| generate_scene(&cfg.sim, derive_seed(cfg.seed, &[tag::SCENE, 0, i as u64])))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut samples = Vec::new();
    for kind in MaskKind::ALL {
        let policy = MaskPolicy {
            kind,
            p_max: 1.0,
            curriculum: false,
            ..cfg.train.mask.clone()
        };
        for (si, scene) in scenes.iter().enumerate() {
            let aug = apply_policy(&scene.cameras, &scene.points, &policy, 0, 1, derive_seed(cfg.seed, &[tag::MASK, si as u64]))?;
            let projectable = |pts: &[crate::scenesim::LidarPoint]| pts.iter().filter(|p| first_projection(&scene.cameras, p).is_some()).count();
            let total = projectable(&scene.points);
            let kept = projectable(&aug.points);
            let visible = scene
                .points
                .iter()
                .filter_map(|p| first_projection(&scene.cameras, p))
                .filter(|(ci, (r, c))| aug.images[*ci].get(*r, *c))
                .count();
            let denom = total.max(1) as f64;
            rows.push(MaskStats {
                variant: kind,
                scene: si,
                masked_fraction: aug.images.iter().map(|m| m.masked_fraction()).sum::<f64>() / aug.images.len().max(1) as f64,
                points_retained_fraction: if total == 0 { 1.0 } else { kept as f64 / denom },
                image_visible_fraction: if total == 0 { 1.0 } else { visible as f64 / denom },
            });
            if si == 0 {
                samples.push((kind, aug.images[0].clone()));
            }
        }
    }
    Ok((rows, samples))
}

pub fn cmd_mask(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let (rows, samples) = mask_stats(cfg)?;
    let out = &cfg.paths.output;
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.variant.as_str().into(),
                r.scene.to_string(),
                fmt(r.masked_fraction),
                fmt(r.points_retained_fraction),
                fmt(r.image_visible_fraction),
            ]
        })
        .collect();
    let mut written = vec![write_file(
        &out.join("mask_stats.csv"),
        &csv("variant,scene,masked_fraction,points_retained_fraction,image_visible_fraction", &table),
    )?];
    for (kind, mask) in samples {
        written.push(write_file(&out.join(format!("mask_{}.svg", kind.as_str())), &svg::mask_image(&mask, 2))?);
    }
    Ok(written)
}
