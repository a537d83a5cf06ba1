//! Learning to intervene in cascades of collision events.

pub mod datagen;
pub mod dynamics;
pub mod event_tree;
pub mod harness;
pub mod instruction;
pub mod model;
pub mod rng;
pub mod scoring;
pub mod search;

pub use datagen::{EpisodeRecord, Scene};
pub use dynamics::{Collision, ObjectId, ObjectState, SemanticEvent, Vec2, WorldState};
pub use event_tree::{EventTree, Intervention, NodeId, TreeNode};
pub use instruction::{EventDag, Instruction};
