//! Desk-scale bin-picking simulator and ellipse-fit grasp planner.
//!
//! Pipeline: [`scenegen`] builds cluttered trays as heightfields with
//! per-pixel ownership, [`perception`] renders depth and instance masks (with
//! an optional segmentation-error model), [`planner`] fits ellipses to masks
//! and turns them into filtered parallel-gripper grasps, [`graspsim`] executes
//! a grasp with fixed or adaptive fingers, and [`experiment`] runs seeded
//! campaigns over all of it.

// `!(x > 0.0)` style checks reject NaN parameters along with out-of-range ones.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod archetype;
pub mod error;
pub mod experiment;
pub mod graspsim;
pub mod io;
pub mod perception;
pub mod planner;
pub mod raster;
pub mod scenegen;
pub mod stats;

pub use archetype::{ArchetypeLibrary, FoodArchetype, Hardness};
pub use error::{Error, Result};
pub use experiment::{
    compare_conditions, condition_grid, run_experiment, run_trial, Comparison, ExperimentConfig, RefillPolicy,
    SummaryStats, TrialRecord,
};
pub use graspsim::{execute_grasp, CaptureParams, FingerKind, FingerModel, GraspClass, GraspOutcome};
pub use perception::{agreement, DepthImage, InstanceMaskSet, MaskSource};
pub use planner::{plan, EllipseFit, FingerGeometry, GraspCandidate, Plan};
pub use raster::{Mask, RasterFrame};
pub use scenegen::{generate_scene, PieceInstance, PieceStamp, SceneConfig, TrayConfig, TrayScene};
