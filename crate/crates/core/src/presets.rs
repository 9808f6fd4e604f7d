//! Checked-in mixture configurations.

use crate::mixer::MixConfig;

pub const ABLATION_64K: &str = include_str!("../presets/ablation_64k.toml");
pub const STAGE1_64K: &str = include_str!("../presets/stage1_64k.toml");
pub const STAGE2_512K: &str = include_str!("../presets/stage2_512k.toml");

/// Short-context ablation mix: 60% long (books and repos 1:1), 40% short.
pub fn ablation() -> MixConfig {
    MixConfig::from_toml(ABLATION_64K).expect("preset parses")
}

pub fn stage1() -> MixConfig {
    MixConfig::from_toml(STAGE1_64K).expect("preset parses")
}

pub fn stage2() -> MixConfig {
    MixConfig::from_toml(STAGE2_512K).expect("preset parses")
}

pub fn by_name(name: &str) -> Option<MixConfig> {
    match name {
        "ablation" | "ablation-64k" => Some(ablation()),
        "stage1" | "stage1-64k" => Some(stage1()),
        "stage2" | "stage2-512k" => Some(stage2()),
        _ => None,
    }
}
