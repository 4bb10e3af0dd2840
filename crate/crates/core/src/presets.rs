//! Search settings tuned for the bundled experiments.

use crate::graph::TopologyPreset;
use crate::search::{InitConfig, RGConfig, RefitConfig};

/// Structure recovery on small tensors: start fully connected at bond 3
/// and only compress, at the finest scale. Node splits are off since they
/// add cores without a physical mode, which can never match a
/// one-core-per-mode truth. Ties among screened compressions are broken
/// by a three-wide lookahead.
pub fn reveal() -> RGConfig {
    RGConfig {
        scales: 0,
        expand_steps: 0,
        compress_steps: 30,
        epochs_refine: 0,
        init: InitConfig { topology: TopologyPreset::FullyConnected, bond_dim: 3 },
        refit: RefitConfig { restarts: 5, ..RefitConfig::default() },
        screen_compressions: true,
        screen_lookahead: 3,
        ..RGConfig::default()
    }
}

/// Compressing a fully observed tensor from a bond-3 ring. The modes are
/// too short to pool, so the search runs at the finest scale only.
pub fn compression() -> RGConfig {
    RGConfig {
        scales: 0,
        expand_steps: 0,
        compress_steps: 20,
        epochs_refine: 0,
        init: InitConfig { topology: TopologyPreset::Ring, bond_dim: 3 },
        screen_compressions: true,
        ..RGConfig::default()
    }
}

/// Completing a frames x height x width x channels video with both
/// smoothness terms on; height and width are pooled.
pub fn completion_video() -> RGConfig {
    let mut cfg = RGConfig {
        scales: 2,
        spatial_modes: Some(vec![1, 2]),
        expand_steps: 2,
        compress_steps: 4,
        epochs_refine: 0,
        mask_min_fraction: 0.0,
        init: InitConfig { topology: TopologyPreset::Ring, bond_dim: 3 },
        ..RGConfig::default()
    };
    cfg.couplings.alpha = 0.1;
    cfg.couplings.beta = 0.1;
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for cfg in [reveal(), compression(), completion_video()] {
            cfg.validate().unwrap();
        }
    }
}
