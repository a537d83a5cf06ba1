//! Fixtures shared by the benchmarks.

use cascade_core::datagen::{generate_episode_with_retries, EpisodeRecord, GenConfig};

/// A reproducible generated episode.
pub fn episode(scene_id: u64) -> EpisodeRecord {
    generate_episode_with_retries(scene_id, 2024, &GenConfig::default(), 20)
        .expect("fixture scene generates")
        .0
}
