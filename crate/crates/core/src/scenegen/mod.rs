//! Procedural, domain-randomized tray scenes.
//!
//! Pieces are 2.5-D stamps (single-valued top and bottom surfaces) dropped
//! vertically onto the tray and settled by max-composition: each piece comes to
//! rest at the lowest base elevation where its underside touches the current
//! surface, and the heightfield becomes the pointwise maximum.

mod scene;
mod stamp;

pub use scene::{
    generate_scene, PieceInstance, RandomizationRecord, SceneConfig, TrayConfig, TrayScene, MAX_PLACEMENT_RETRIES,
};
pub use stamp::{make_stamp, PieceStamp, StampShape};
