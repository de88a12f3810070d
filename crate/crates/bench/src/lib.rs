//! Shared fixtures for the benchmarks.

use progvid_core::envsim::{sample_dataset, EnvConfig};
use progvid_core::fit::{episodes_from_dataset, Episode};
use progvid_core::{Dataset, EnvKind, RenderConfig};

pub struct Fixture {
    pub config: EnvConfig,
    pub render: RenderConfig,
    pub data: Dataset,
    pub episodes: Vec<Episode>,
}

/// `n` default clips of `kind` with their perceived training episodes.
pub fn fixture(kind: EnvKind, n: usize) -> Fixture {
    let config = EnvConfig::default_for(kind);
    let render = config.render_config();
    let data = sample_dataset(&config, n, 1000).expect("default configs generate");
    let episodes = episodes_from_dataset(&data, &render, true).expect("generated clips perceive");
    Fixture {
        config,
        render,
        data,
        episodes,
    }
}
