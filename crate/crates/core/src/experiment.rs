//! Seeded grasping campaigns and condition comparisons.
//!
//! Attempt `i` of a campaign uses seed `base_seed + i` (wrapping). The scene
//! generator draws from that seed directly; depth noise and mask corruption
//! draw from streams 1 and 2 of the same ChaCha8 key. Two configurations that
//! differ only in finger or filtering therefore see identical scenes, depth
//! and masks at every attempt, which is what the paired tests rely on.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::archetype::ArchetypeLibrary;
use crate::error::{param, Error, Result};
use crate::graspsim::{execute_grasp, CaptureParams, FingerKind, FingerModel, GraspClass};
use crate::io::{heights_to_levels, write_json, write_pgm};
use crate::perception::{corrupt_masks, render_depth, render_masks, CorruptionParams, DepthImage, InstanceMaskSet};
use crate::planner::plan;
use crate::scenegen::{generate_scene, SceneConfig, TrayConfig, TrayScene};
use crate::stats::mcnemar_one_sided;

const DEPTH_STREAM: u64 = 1;
const CORRUPTION_STREAM: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefillPolicy {
    FreshSceneEachAttempt,
    DepleteUntilEmptyThenRefresh,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepthNoise {
    pub sigma_mm: f64,
    pub quant_mm: f64,
}

impl Default for DepthNoise {
    fn default() -> Self {
        Self {
            sigma_mm: 0.5,
            quant_mm: 0.1,
        }
    }
}

/// Full description of one campaign. Every tunable constant lives here.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub archetype: String,
    pub finger: FingerModel,
    pub filtering: bool,
    pub corruption: CorruptionParams,
    pub depth_noise: DepthNoise,
    pub capture: CaptureParams,
    pub n_attempts: u32,
    pub refill: RefillPolicy,
    /// Consecutive attempts without a pick after which a depleting tray is
    /// refreshed.
    pub stall_limit: u32,
    pub base_seed: u64,
    pub tray: TrayConfig,
    pub count_range: Option<[u32; 2]>,
    pub scale_range: Option<[f64; 2]>,
    pub library: ArchetypeLibrary,
    pub output_dir: Option<PathBuf>,
    /// Write each attempt's pre-grasp height raster next to the records.
    pub render_scenes: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            archetype: "fried_chicken".into(),
            finger: FingerModel::adaptive(),
            filtering: true,
            corruption: default_corruption(),
            depth_noise: DepthNoise::default(),
            capture: CaptureParams::default(),
            n_attempts: 50,
            refill: RefillPolicy::DepleteUntilEmptyThenRefresh,
            stall_limit: 5,
            base_seed: 0,
            tray: TrayConfig::default(),
            count_range: None,
            scale_range: None,
            library: ArchetypeLibrary::default(),
            output_dir: None,
            render_scenes: false,
        }
    }
}

/// Segmentation error model used unless a configuration overrides it.
pub fn default_corruption() -> CorruptionParams {
    CorruptionParams {
        boundary_jitter: 1,
        merge_prob: 0.15,
        drop_prob: 0.05,
        confidence_floor: 0.0,
    }
}

impl ExperimentConfig {
    pub fn for_archetype(name: &str) -> Self {
        Self {
            archetype: name.into(),
            ..Self::default()
        }
    }

    pub fn with_condition(&self, finger: FingerKind, filtering: bool) -> Self {
        let mut cfg = self.clone();
        cfg.finger.kind = finger;
        cfg.filtering = filtering;
        cfg
    }

    /// Short condition label, e.g. `adaptive+filter`.
    pub fn label(&self) -> String {
        format!("{}{}", self.finger.kind, if self.filtering { "+filter" } else { "" })
    }

    pub fn scene_config(&self) -> SceneConfig {
        SceneConfig {
            archetype: self.archetype.clone(),
            tray: self.tray.clone(),
            count_range: self.count_range,
            scale_range: self.scale_range,
        }
    }

    pub fn attempt_seed(&self, attempt: u32) -> u64 {
        self.base_seed.wrapping_add(u64::from(attempt))
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_attempts == 0 {
            return Err(param("n_attempts must be >= 1"));
        }
        if self.stall_limit == 0 {
            return Err(param("stall_limit must be >= 1"));
        }
        self.library.validate()?;
        self.scene_config().resolve(&self.library)?;
        self.finger.validate()?;
        self.capture.validate()?;
        self.corruption.validate()?;
        if !(self.depth_noise.sigma_mm >= 0.0 && self.depth_noise.quant_mm >= 0.0) {
            return Err(param("depth noise sigma and quantization must be >= 0"));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let cfg: Self = crate::io::read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub attempt: u32,
    pub seed: u64,
    /// Index of the tray fill this attempt picked from.
    pub epoch: u32,
    pub pieces_before: usize,
    pub candidates: usize,
    pub retained: usize,
    pub target: Option<u32>,
    pub outcome: GraspClass,
    pub no_target: bool,
    pub picked: Vec<u32>,
    pub damaged: Vec<u32>,
}

impl TrialRecord {
    pub fn picked_count(&self) -> usize {
        self.picked.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub archetype: String,
    pub finger: FingerKind,
    pub filtering: bool,
    pub n_attempts: u32,
    pub success_single_rate: f64,
    pub success_incl_multiple_rate: f64,
    pub multi_pick_rate: f64,
    /// Distinct pieces damaged over the campaign.
    pub damaged_piece_total: usize,
    pub no_target_count: usize,
}

impl SummaryStats {
    pub fn from_records(cfg: &ExperimentConfig, records: &[TrialRecord]) -> Self {
        let n = records.len().max(1) as f64;
        let count = |k: GraspClass| records.iter().filter(|r| r.outcome == k).count() as f64;
        let single = count(GraspClass::SuccessSingle);
        let multiple = count(GraspClass::SuccessMultiple);
        let damaged: BTreeSet<(u32, u32)> = records
            .iter()
            .flat_map(|r| r.damaged.iter().map(move |&id| (r.epoch, id)))
            .collect();
        Self {
            archetype: cfg.archetype.clone(),
            finger: cfg.finger.kind,
            filtering: cfg.filtering,
            n_attempts: records.len() as u32,
            success_single_rate: single / n,
            success_incl_multiple_rate: (single + multiple) / n,
            multi_pick_rate: multiple / n,
            damaged_piece_total: damaged.len(),
            no_target_count: records.iter().filter(|r| r.no_target).count(),
        }
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// What the planner sees of one tray state.
#[derive(Clone, Debug, PartialEq)]
pub struct Perception {
    pub depth: DepthImage,
    pub masks: InstanceMaskSet,
}

/// Depth and (corrupted) masks of `scene` at attempt seed `seed`.
pub fn perceive(cfg: &ExperimentConfig, scene: &TrayScene, seed: u64) -> Result<Perception> {
    let depth = render_depth(
        scene,
        cfg.depth_noise.sigma_mm,
        cfg.depth_noise.quant_mm,
        &mut stream_rng(seed, DEPTH_STREAM),
    )?;
    let masks = corrupt_masks(
        &render_masks(scene),
        &cfg.corruption,
        &mut stream_rng(seed, CORRUPTION_STREAM),
    )?;
    Ok(Perception { depth, masks })
}

/// Plans on `seen` and grasps once on `scene`, mutating it.
fn act(
    cfg: &ExperimentConfig,
    scene: &mut TrayScene,
    seen: &Perception,
    attempt: u32,
    epoch: u32,
) -> Result<TrialRecord> {
    let archetype = cfg.scene_config().resolve(&cfg.library)?;
    let planned = plan(
        &seen.masks,
        &seen.depth,
        &archetype,
        &cfg.finger.geometry,
        cfg.filtering,
    )?;
    let mut record = TrialRecord {
        attempt,
        seed: cfg.attempt_seed(attempt),
        epoch,
        pieces_before: scene.pieces.len(),
        candidates: planned.candidates.len(),
        retained: planned.retained_count(),
        target: planned.target,
        outcome: GraspClass::Failure,
        no_target: true,
        picked: Vec::new(),
        damaged: Vec::new(),
    };
    if let Some(c) = planned.target_candidate() {
        let outcome = execute_grasp(scene, c, &cfg.finger, &cfg.capture);
        record.no_target = false;
        record.outcome = outcome.classification;
        record.picked = outcome.picked;
        record.damaged = outcome.damaged.iter().map(|d| d.piece_id).collect();
    }
    Ok(record)
}

fn attempt_on(cfg: &ExperimentConfig, scene: &mut TrayScene, attempt: u32, epoch: u32) -> Result<TrialRecord> {
    let seen = perceive(cfg, scene, cfg.attempt_seed(attempt))?;
    act(cfg, scene, &seen, attempt, epoch)
}

/// Whether two configurations generate and perceive identical trays at every
/// attempt, differing at most in planning and grasping.
fn shares_perception(a: &ExperimentConfig, b: &ExperimentConfig) -> bool {
    a.refill == RefillPolicy::FreshSceneEachAttempt
        && b.refill == a.refill
        && a.n_attempts == b.n_attempts
        && a.base_seed == b.base_seed
        && a.scene_config() == b.scene_config()
        && a.library == b.library
        && a.depth_noise == b.depth_noise
        && a.corruption == b.corruption
        && !a.render_scenes
        && !b.render_scenes
}

/// Fresh-scene campaigns for several conditions over shared perception:
/// each tray is generated and perceived once, then every condition grasps
/// its own copy.
fn run_shared(cfgs: &[ExperimentConfig]) -> Result<Vec<Vec<TrialRecord>>> {
    let first = &cfgs[0];
    for c in cfgs {
        c.validate()?;
    }
    let per_attempt: Vec<Vec<TrialRecord>> = (0..first.n_attempts)
        .into_par_iter()
        .map(|i| {
            let scene = generate_scene(&first.scene_config(), &first.library, first.attempt_seed(i))?;
            let seen = perceive(first, &scene, first.attempt_seed(i))?;
            cfgs.iter().map(|c| act(c, &mut scene.clone(), &seen, i, i)).collect()
        })
        .collect::<Result<_>>()?;
    let mut out = vec![Vec::with_capacity(per_attempt.len()); cfgs.len()];
    for row in per_attempt {
        for (k, r) in row.into_iter().enumerate() {
            out[k].push(r);
        }
    }
    Ok(out)
}

fn render_path(dir: &Path, attempt: u32) -> PathBuf {
    dir.join("renders").join(format!("attempt_{attempt:05}_height.pgm"))
}

fn render(cfg: &ExperimentConfig, scene: &TrayScene, attempt: u32) -> Result<()> {
    match (&cfg.output_dir, cfg.render_scenes) {
        (Some(dir), true) => write_pgm(
            &render_path(dir, attempt),
            &heights_to_levels(&scene.heightmap_mm()),
            u16::MAX,
        ),
        _ => Ok(()),
    }
}

/// Walks a depleting campaign up to and including `last`, calling `visit`
/// with each record.
fn walk_depleting(
    cfg: &ExperimentConfig,
    last: u32,
    mut visit: impl FnMut(&TrialRecord, &TrayScene) -> Result<()>,
) -> Result<()> {
    let mut scene: Option<TrayScene> = None;
    let mut epoch = 0u32;
    let mut stalled = 0u32;
    for attempt in 0..=last {
        let refresh = match &scene {
            None => true,
            Some(s) => s.pieces.iter().all(|p| p.fully_occluded()) || stalled >= cfg.stall_limit,
        };
        if refresh {
            if scene.is_some() {
                epoch += 1;
            }
            scene = Some(generate_scene(
                &cfg.scene_config(),
                &cfg.library,
                cfg.attempt_seed(attempt),
            )?);
            stalled = 0;
        }
        let s = scene.as_mut().expect("scene set above");
        let pre = s.clone();
        let record = attempt_on(cfg, s, attempt, epoch)?;
        stalled = if record.picked.is_empty() { stalled + 1 } else { 0 };
        visit(&record, &pre)?;
    }
    Ok(())
}

/// Runs attempt `attempt` of the campaign. Deterministic per
/// `(cfg, attempt)`; under the depleting policy earlier attempts are replayed
/// to reconstruct the tray.
pub fn run_trial(cfg: &ExperimentConfig, attempt: u32) -> Result<TrialRecord> {
    cfg.validate()?;
    match cfg.refill {
        RefillPolicy::FreshSceneEachAttempt => fresh_trial(cfg, attempt).map(|(r, _)| r),
        RefillPolicy::DepleteUntilEmptyThenRefresh => {
            let mut out = None;
            walk_depleting(cfg, attempt, |r, _| {
                out = Some(r.clone());
                Ok(())
            })?;
            Ok(out.expect("at least one attempt walked"))
        }
    }
}

fn fresh_trial(cfg: &ExperimentConfig, attempt: u32) -> Result<(TrialRecord, TrayScene)> {
    let mut scene = generate_scene(&cfg.scene_config(), &cfg.library, cfg.attempt_seed(attempt))?;
    let pre = scene.clone();
    Ok((attempt_on(cfg, &mut scene, attempt, attempt)?, pre))
}

/// Records of every attempt, in attempt order. Fresh-scene campaigns run
/// attempts in parallel on the current rayon pool.
pub fn run_records(cfg: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    cfg.validate()?;
    if let (Some(dir), true) = (&cfg.output_dir, cfg.render_scenes) {
        let renders = dir.join("renders");
        fs::create_dir_all(&renders).map_err(|source| Error::Io { path: renders, source })?;
    }
    match cfg.refill {
        RefillPolicy::FreshSceneEachAttempt => (0..cfg.n_attempts)
            .into_par_iter()
            .map(|i| {
                let (record, pre) = fresh_trial(cfg, i)?;
                render(cfg, &pre, i)?;
                Ok(record)
            })
            .collect(),
        RefillPolicy::DepleteUntilEmptyThenRefresh => {
            let mut records = Vec::with_capacity(cfg.n_attempts as usize);
            walk_depleting(cfg, cfg.n_attempts - 1, |r, pre| {
                render(cfg, pre, r.attempt)?;
                records.push(r.clone());
                Ok(())
            })?;
            Ok(records)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub summary: SummaryStats,
    pub records: Vec<TrialRecord>,
}

pub const RECORDS_FILE: &str = "records.jsonl";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const CONFIG_FILE: &str = "config.json";

/// Runs the campaign. With an output directory the records (JSON lines), the
/// summary (CSV) and the resolved config are written there.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let records = run_records(cfg)?;
    let summary = SummaryStats::from_records(cfg, &records);
    if let Some(dir) = &cfg.output_dir {
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.clone(),
            source,
        })?;
        write_records(&dir.join(RECORDS_FILE), &records)?;
        write_summaries(&dir.join(SUMMARY_FILE), std::slice::from_ref(&summary))?;
        write_json(&dir.join(CONFIG_FILE), cfg)?;
    }
    Ok(ExperimentResult { summary, records })
}

pub fn records_to_jsonl(records: &[TrialRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect()
}

pub fn write_records(path: &Path, records: &[TrialRecord]) -> Result<()> {
    fs::write(path, records_to_jsonl(records)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_records(path: &Path) -> Result<Vec<TrialRecord>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|source| Error::Json {
                path: path.to_path_buf(),
                source,
            })
        })
        .collect()
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e.into(),
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_summaries(path: &Path, rows: &[SummaryStats]) -> Result<()> {
    write_csv(path, rows)
}

/// One condition of a comparison, measured against the first condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub condition: String,
    pub stats: SummaryStats,
    pub delta_success_single: f64,
    pub delta_success_incl_multiple: f64,
    pub delta_multi_pick: f64,
    pub delta_damaged: i64,
    /// Paired attempts where only this condition / only the baseline
    /// achieved single success.
    pub only_this_single: u64,
    pub only_baseline_single: u64,
    /// One-sided exact McNemar p-value for "this condition succeeds more
    /// often than the baseline".
    pub p_value_single: f64,
}

#[derive(Serialize)]
struct ComparisonCsvRow<'a> {
    condition: &'a str,
    archetype: &'a str,
    finger: FingerKind,
    filtering: bool,
    n_attempts: u32,
    success_single_rate: f64,
    success_incl_multiple_rate: f64,
    multi_pick_rate: f64,
    damaged_piece_total: usize,
    no_target_count: usize,
    delta_success_single: f64,
    delta_success_incl_multiple: f64,
    delta_multi_pick: f64,
    delta_damaged: i64,
    only_this_single: u64,
    only_baseline_single: u64,
    p_value_single: f64,
}

impl<'a> From<&'a ComparisonRow> for ComparisonCsvRow<'a> {
    fn from(r: &'a ComparisonRow) -> Self {
        let s = &r.stats;
        Self {
            condition: &r.condition,
            archetype: &s.archetype,
            finger: s.finger,
            filtering: s.filtering,
            n_attempts: s.n_attempts,
            success_single_rate: s.success_single_rate,
            success_incl_multiple_rate: s.success_incl_multiple_rate,
            multi_pick_rate: s.multi_pick_rate,
            damaged_piece_total: s.damaged_piece_total,
            no_target_count: s.no_target_count,
            delta_success_single: r.delta_success_single,
            delta_success_incl_multiple: r.delta_success_incl_multiple,
            delta_multi_pick: r.delta_multi_pick,
            delta_damaged: r.delta_damaged,
            only_this_single: r.only_this_single,
            only_baseline_single: r.only_baseline_single,
            p_value_single: r.p_value_single,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub archetype: String,
    pub rows: Vec<ComparisonRow>,
    pub records: Vec<Vec<TrialRecord>>,
}

impl Comparison {
    pub fn row(&self, finger: FingerKind, filtering: bool) -> Option<&ComparisonRow> {
        self.rows
            .iter()
            .find(|r| r.stats.finger == finger && r.stats.filtering == filtering)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let flat: Vec<ComparisonCsvRow> = self.rows.iter().map(ComparisonCsvRow::from).collect();
        write_csv(path, &flat)
    }
}

/// The four finger × filtering conditions built from `base`, fixed and
/// unfiltered first.
pub fn condition_grid(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    [FingerKind::Fixed, FingerKind::Adaptive]
        .into_iter()
        .flat_map(|f| [false, true].map(|filtering| base.with_condition(f, filtering)))
        .collect()
}

/// Runs every configuration (in parallel) and reports each against the
/// first. Attempts are paired by index, so configurations sharing a base
/// seed compare on identical scenes.
pub fn compare_conditions(cfgs: &[ExperimentConfig]) -> Result<Comparison> {
    let Some(first) = cfgs.first() else {
        return Err(param("comparison needs at least two configurations"));
    };
    if cfgs.len() < 2 {
        return Err(param("comparison needs at least two configurations"));
    }
    if let Some(other) = cfgs.iter().find(|c| c.archetype != first.archetype) {
        return Err(param(format!(
            "cannot compare archetypes {} and {}",
            first.archetype, other.archetype
        )));
    }
    let records: Vec<Vec<TrialRecord>> = if cfgs.iter().all(|c| shares_perception(first, c)) {
        run_shared(cfgs)?
    } else {
        cfgs.par_iter().map(run_records).collect::<Result<_>>()?
    };
    let stats: Vec<SummaryStats> = cfgs
        .iter()
        .zip(&records)
        .map(|(c, r)| SummaryStats::from_records(c, r))
        .collect();
    let base = &stats[0];
    let single = |r: &TrialRecord| r.outcome == GraspClass::SuccessSingle;
    let rows = cfgs
        .iter()
        .zip(&stats)
        .zip(&records)
        .map(|((cfg, s), recs)| {
            let (mut b, mut c) = (0u64, 0u64);
            for (x, y) in recs.iter().zip(&records[0]) {
                match (single(x), single(y)) {
                    (true, false) => b += 1,
                    (false, true) => c += 1,
                    _ => {}
                }
            }
            ComparisonRow {
                condition: cfg.label(),
                stats: s.clone(),
                delta_success_single: s.success_single_rate - base.success_single_rate,
                delta_success_incl_multiple: s.success_incl_multiple_rate - base.success_incl_multiple_rate,
                delta_multi_pick: s.multi_pick_rate - base.multi_pick_rate,
                delta_damaged: s.damaged_piece_total as i64 - base.damaged_piece_total as i64,
                only_this_single: b,
                only_baseline_single: c,
                p_value_single: mcnemar_one_sided(b, c),
            }
        })
        .collect();
    Ok(Comparison {
        archetype: first.archetype.clone(),
        rows,
        records,
    })
}
