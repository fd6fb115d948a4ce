//! Named synthetic-network presets: planted community sizes and edge
//! probabilities for each network family, together with the statistics the
//! generator is expected to reproduce.

use crate::graph::SbmSpec;

/// Expected generator statistics for a preset (approximate; generated
/// graphs should land within ±20% on density and average degree and ±0.05
/// on ground-truth modularity).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PresetStats {
    pub density: f64,
    pub average_degree: f64,
    pub modularity: f64,
}

/// One synthetic network family.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub cluster_sizes: &'static [usize],
    pub p_in: f64,
    pub p_out: f64,
    pub expected: PresetStats,
}

impl Preset {
    pub fn node_count(&self) -> usize {
        self.cluster_sizes.iter().sum()
    }

    pub fn cluster_count(&self) -> usize {
        self.cluster_sizes.len()
    }

    /// The SBM spec for one draw of this preset.
    pub fn sbm_spec(&self, seed: u64) -> SbmSpec {
        SbmSpec {
            cluster_sizes: self.cluster_sizes.to_vec(),
            p_in: self.p_in,
            p_out: self.p_out,
            seed,
        }
    }
}

const SMALL_SIZES: &[usize] = &[25, 30, 10, 20, 15];
const MEDIUM_SIZES: &[usize] = &[39, 175, 236, 270, 280];
const MEDIUM_K10_SIZES: &[usize] = &[10, 23, 27, 32, 38, 97, 108, 170, 229, 266];
const MEDIUM_K20_SIZES: &[usize] = &[
    20, 31, 71, 73, 29, 19, 21, 32, 15, 65, 60, 53, 76, 80, 70, 27, 62, 61, 85, 50,
];
const LARGE_SIZES: &[usize] = &[175, 478, 2358, 2989, 4000];

/// All presets. Density for `medium-low` is the value implied by its
/// average degree (density = avg_degree / (n − 1)); the two statistics are
/// not independent.
pub const PRESETS: &[Preset] = &[
    Preset {
        name: "small-low",
        cluster_sizes: SMALL_SIZES,
        p_in: 0.15,
        p_out: 0.015,
        expected: PresetStats {
            density: 0.04,
            average_degree: 4.0,
            modularity: 0.49,
        },
    },
    Preset {
        name: "small-medium",
        cluster_sizes: SMALL_SIZES,
        p_in: 0.4,
        p_out: 0.04,
        expected: PresetStats {
            density: 0.1,
            average_degree: 11.0,
            modularity: 0.48,
        },
    },
    Preset {
        name: "medium-low",
        cluster_sizes: MEDIUM_SIZES,
        p_in: 0.1,
        p_out: 0.002,
        expected: PresetStats {
            density: 0.025,
            average_degree: 25.0,
            modularity: 0.67,
        },
    },
    Preset {
        name: "medium-medium",
        cluster_sizes: MEDIUM_SIZES,
        p_in: 0.4,
        p_out: 0.007,
        expected: PresetStats {
            density: 0.1,
            average_degree: 100.0,
            modularity: 0.67,
        },
    },
    Preset {
        name: "medium-high",
        cluster_sizes: MEDIUM_SIZES,
        p_in: 0.6,
        p_out: 0.015,
        expected: PresetStats {
            density: 0.15,
            average_degree: 154.0,
            modularity: 0.65,
        },
    },
    Preset {
        name: "medium-k10",
        cluster_sizes: MEDIUM_K10_SIZES,
        p_in: 0.4,
        p_out: 0.002,
        expected: PresetStats {
            density: 0.07,
            average_degree: 72.0,
            modularity: 0.69,
        },
    },
    Preset {
        name: "medium-k20",
        cluster_sizes: MEDIUM_K20_SIZES,
        p_in: 0.8,
        p_out: 0.004,
        expected: PresetStats {
            density: 0.05,
            average_degree: 51.0,
            modularity: 0.84,
        },
    },
    Preset {
        name: "large-low",
        cluster_sizes: LARGE_SIZES,
        p_in: 0.033,
        p_out: 0.0003,
        expected: PresetStats {
            density: 0.01,
            average_degree: 103.0,
            modularity: 0.59,
        },
    },
];

/// Looks a preset up by name.
pub fn preset(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

/// All preset names, for error messages and CLI help.
pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|p| p.name).collect()
}
