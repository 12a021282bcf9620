//! `traypick`: generate trays, plan and execute grasps, and run campaigns.

use std::fs;
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use traypick_core::experiment::{perceive, write_records, RECORDS_FILE};
use traypick_core::io::{load_depth, load_masks, load_scene, save_depth, save_masks, save_scene, write_json};
use traypick_core::perception::{agreement_matrix, render_masks};
use traypick_core::{
    compare_conditions, condition_grid, execute_grasp, generate_scene, plan, run_experiment, ExperimentConfig,
    FingerKind, Plan, RefillPolicy, SummaryStats,
};

#[derive(Parser, Debug)]
#[command(
    name = "traypick",
    version,
    about = "Food-tray bin-picking simulator and grasp planner"
)]
struct Cli {
    /// Base seed; attempt and scene i use seed + i.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment configuration (JSON). Every subcommand reads the parts it needs.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Finger {
    Fixed,
    Adaptive,
}

impl From<Finger> for FingerKind {
    fn from(f: Finger) -> Self {
        match f {
            Finger::Fixed => FingerKind::Fixed,
            Finger::Adaptive => FingerKind::Adaptive,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Refill {
    /// A new tray for every attempt.
    Fresh,
    /// Keep picking from one tray until it is empty or stalls.
    Deplete,
}

impl From<Refill> for RefillPolicy {
    fn from(r: Refill) -> Self {
        match r {
            Refill::Fresh => RefillPolicy::FreshSceneEachAttempt,
            Refill::Deplete => RefillPolicy::DepleteUntilEmptyThenRefresh,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate tray scenes, optionally with the depth and masks the planner sees.
    Generate {
        #[arg(long)]
        archetype: Option<String>,
        /// Number of scenes.
        #[arg(long, default_value_t = 1)]
        count: u32,
        /// Also write depth (PGM), ground-truth masks and corrupted masks.
        #[arg(long)]
        perception: bool,
    },
    /// Plan grasps from a mask manifest and a depth raster.
    Plan {
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        depth: PathBuf,
        #[arg(long)]
        archetype: Option<String>,
        /// Keep every candidate instead of applying the contact-height filter.
        #[arg(long)]
        no_filter: bool,
    },
    /// Execute a planned grasp on a scene file.
    Grasp {
        #[arg(long)]
        scene: PathBuf,
        /// Plan JSON as written by `plan`.
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, value_enum)]
        finger: Option<Finger>,
        /// Grasp this instance instead of the plan's target.
        #[arg(long)]
        candidate: Option<u32>,
    },
    /// Run one grasping campaign.
    Experiment {
        #[arg(long)]
        archetype: Option<String>,
        #[arg(long, value_enum)]
        finger: Option<Finger>,
        #[arg(long)]
        no_filter: bool,
        #[arg(long)]
        attempts: Option<u32>,
        #[arg(long, value_enum)]
        refill: Option<Refill>,
    },
    /// Run the fixed/adaptive × filter off/on grid on paired seeds.
    Compare {
        #[arg(long)]
        archetype: Option<String>,
        #[arg(long)]
        attempts: Option<u32>,
        #[arg(long, value_enum)]
        refill: Option<Refill>,
    },
    /// Agreement matrix between mask sets (rows act as ground truth).
    Agreement {
        /// Two or more mask manifests.
        #[arg(required = true, num_args = 2..)]
        manifests: Vec<PathBuf>,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring the worker pool")?;
    }
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.base_seed = seed;
    }
    let out = cli.out.clone();
    match cli.command {
        Command::Generate {
            archetype,
            count,
            perception,
        } => {
            set_archetype(&mut cfg, archetype)?;
            generate(&cfg, count, perception, &out.unwrap_or_else(|| "scenes".into()))
        }
        Command::Plan {
            masks,
            depth,
            archetype,
            no_filter,
        } => {
            set_archetype(&mut cfg, archetype)?;
            plan_cmd(&cfg, &masks, &depth, !no_filter, out.as_deref())
        }
        Command::Grasp {
            scene,
            plan,
            finger,
            candidate,
        } => {
            if let Some(f) = finger {
                cfg.finger.kind = f.into();
            }
            grasp_cmd(&cfg, &scene, &plan, candidate, &out.unwrap_or_else(|| "out".into()))
        }
        Command::Experiment {
            archetype,
            finger,
            no_filter,
            attempts,
            refill,
        } => {
            set_archetype(&mut cfg, archetype)?;
            if let Some(f) = finger {
                cfg.finger.kind = f.into();
            }
            if no_filter {
                cfg.filtering = false;
            }
            set_campaign(&mut cfg, attempts, refill)?;
            if let Some(dir) = out {
                cfg.output_dir = Some(dir);
            }
            if cfg.output_dir.is_none() {
                cfg.output_dir = Some(PathBuf::from("out").join(format!("{}_{}", cfg.archetype, cfg.label())));
            }
            let result = run_experiment(&cfg)?;
            emit(&summary_table(&[(cfg.label(), result.summary)]))?;
            eprintln!("wrote {}", cfg.output_dir.as_ref().expect("set above").display());
            Ok(())
        }
        Command::Compare {
            archetype,
            attempts,
            refill,
        } => {
            set_archetype(&mut cfg, archetype)?;
            set_campaign(&mut cfg, attempts, refill)?;
            compare_cmd(&cfg, &out.unwrap_or_else(|| "out".into()))
        }
        Command::Agreement { manifests } => agreement_cmd(&manifests, out.as_deref()),
    }
}

fn set_archetype(cfg: &mut ExperimentConfig, archetype: Option<String>) -> Result<()> {
    if let Some(name) = archetype {
        cfg.archetype = name;
    }
    cfg.validate()?;
    Ok(())
}

fn set_campaign(cfg: &mut ExperimentConfig, attempts: Option<u32>, refill: Option<Refill>) -> Result<()> {
    if let Some(n) = attempts {
        cfg.n_attempts = n;
    }
    if let Some(r) = refill {
        cfg.refill = r.into();
    }
    cfg.validate()?;
    Ok(())
}

/// Writes to stdout; a reader closing the pipe early is not an error.
fn emit(text: &str) -> Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Scene `i` uses the same seed and perception streams as attempt `i` of a
/// fresh-scene campaign with this configuration.
fn generate(cfg: &ExperimentConfig, count: u32, perception: bool, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let scene_cfg = cfg.scene_config();
    let lines = (0..count)
        .into_par_iter()
        .map(|i| -> Result<String> {
            let seed = cfg.attempt_seed(i);
            let scene = generate_scene(&scene_cfg, &cfg.library, seed)?;
            let path = dir.join(format!("scene_{i:04}.json"));
            save_scene(&scene, &path)?;
            if perception {
                let seen = perceive(cfg, &scene, seed)?;
                save_depth(&seen.depth, &dir.join(format!("depth_{i:04}.pgm")))?;
                save_masks(&seen.masks, &dir.join(format!("masks_{i:04}.json")))?;
                save_masks(&render_masks(&scene), &dir.join(format!("truth_{i:04}.json")))?;
            }
            Ok(format!("{}\t{}\t{}", path.display(), seed, scene.pieces.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    emit(&format!("scene\tseed\tpieces\n{}\n", lines.join("\n")))
}

fn plan_cmd(cfg: &ExperimentConfig, masks: &Path, depth: &Path, filtering: bool, out: Option<&Path>) -> Result<()> {
    let masks = load_masks(masks).with_context(|| format!("loading {}", masks.display()))?;
    let depth = load_depth(depth, masks.frame).with_context(|| format!("loading {}", depth.display()))?;
    let archetype = cfg.library.get(&cfg.archetype)?;
    let planned = plan(
        &masks,
        &depth,
        archetype,
        &cfg.finger.geometry,
        filtering && cfg.filtering,
    )?;
    eprintln!(
        "{} candidates, {} retained, target {}",
        planned.candidates.len(),
        planned.retained_count(),
        planned.target.map_or("none".into(), |t| t.to_string())
    );
    match out {
        Some(dir) => {
            create_dir(dir)?;
            write_json(&dir.join("plan.json"), &planned)?;
        }
        None => emit(&(serde_json::to_string_pretty(&planned)? + "\n"))?,
    }
    Ok(())
}

fn grasp_cmd(cfg: &ExperimentConfig, scene: &Path, plan_path: &Path, candidate: Option<u32>, dir: &Path) -> Result<()> {
    let mut scene = load_scene(scene).with_context(|| format!("loading {}", scene.display()))?;
    let text = fs::read_to_string(plan_path).with_context(|| format!("reading {}", plan_path.display()))?;
    let planned: Plan = serde_json::from_str(&text).with_context(|| format!("parsing {}", plan_path.display()))?;
    let Some(id) = candidate.or(planned.target) else {
        bail!("the plan has no target; pass --candidate to grasp a rejected one");
    };
    let Some(c) = planned.candidates.iter().find(|c| c.instance_id == id) else {
        bail!("the plan has no candidate for instance {id}");
    };
    let mut finger = cfg.finger.clone();
    finger.geometry = planned.finger_geometry;
    let outcome = execute_grasp(&mut scene, c, &finger, &cfg.capture);
    create_dir(dir)?;
    write_json(&dir.join("outcome.json"), &outcome)?;
    save_scene(&scene, &dir.join("scene.json"))?;
    emit(&(serde_json::to_string_pretty(&outcome)? + "\n"))
}

fn compare_cmd(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let grid = condition_grid(cfg);
    let cmp = compare_conditions(&grid)?;
    create_dir(dir)?;
    cmp.write_csv(&dir.join("comparison.csv"))?;
    for (c, recs) in grid.iter().zip(&cmp.records) {
        let sub = dir.join(c.label());
        create_dir(&sub)?;
        write_records(&sub.join(RECORDS_FILE), recs)?;
    }
    let mut text = summary_table(
        &cmp.rows
            .iter()
            .map(|r| (r.condition.clone(), r.stats.clone()))
            .collect::<Vec<_>>(),
    );
    text += &format!(
        "\n{:<18} {:>10} {:>8} {:>10}\n",
        "vs first", "d_single", "d_multi", "p_single"
    );
    for r in &cmp.rows[1..] {
        text += &format!(
            "{:<18} {:>+10.3} {:>+8.3} {:>10.2e}\n",
            r.condition, r.delta_success_single, r.delta_multi_pick, r.p_value_single
        );
    }
    emit(&text)?;
    eprintln!("wrote {}", dir.join("comparison.csv").display());
    Ok(())
}

fn summary_table(rows: &[(String, SummaryStats)]) -> String {
    let mut t = format!(
        "{:<18} {:>8} {:>16} {:>8} {:>8} {:>10}\n",
        "condition", "single", "incl. multiple", "multi", "damaged", "no target"
    );
    for (label, s) in rows {
        t += &format!(
            "{:<18} {:>8.3} {:>16.3} {:>8.3} {:>8} {:>10}\n",
            label,
            s.success_single_rate,
            s.success_incl_multiple_rate,
            s.multi_pick_rate,
            s.damaged_piece_total,
            s.no_target_count
        );
    }
    t
}

fn agreement_cmd(manifests: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let sets = manifests
        .iter()
        .map(|p| load_masks(p).with_context(|| format!("loading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let matrix = agreement_matrix(&sets)?;
    let names: Vec<String> = manifests
        .iter()
        .map(|p| p.file_stem().unwrap_or_default().to_string_lossy().into_owned())
        .collect();
    let mut csv = format!("ground_truth,{}\n", names.join(","));
    for (name, row) in names.iter().zip(&matrix) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
        csv += &format!("{name},{}\n", cells.join(","));
    }
    match out {
        Some(dir) => {
            create_dir(dir)?;
            fs::write(dir.join("agreement.csv"), &csv).context("writing agreement.csv")?;
        }
        None => emit(&csv)?,
    }
    Ok(())
}
