//! Configurations shipped with the binary.

pub const NAMES: [&str; 3] = ["stage-sweep-k2", "ma-density-k1", "flex-k2"];

pub fn get(name: &str) -> Option<&'static str> {
    match name {
        "stage-sweep-k2" => Some(include_str!("../presets/stage-sweep-k2.toml")),
        "ma-density-k1" => Some(include_str!("../presets/ma-density-k1.toml")),
        "flex-k2" => Some(include_str!("../presets/flex-k2.toml")),
        _ => None,
    }
}
