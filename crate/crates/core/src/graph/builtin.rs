//! Model definitions shipped with the library, addressable from the CLI
//! as `builtin:<name>`.

/// YOLOv5s-style baseline: C3 backbone and neck, SPPF, three-scale
/// detection head.
pub const BASELINE_TEXT: &str =
    include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../models/baseline.yaml"));

/// Lightweight variant: backbone C3 blocks swapped for C3Faster
/// (partial-conv inner units), neck C3 blocks swapped for C3Ghost.
pub const FOSTC3NET_TEXT: &str =
    include_str!(concat!(env!("CARGO_MANIFEST_DIR"), "/../../models/fostc3net.yaml"));

pub fn builtin_model_text(name: &str) -> Option<&'static str> {
    match name {
        "baseline" => Some(BASELINE_TEXT),
        "fostc3net" => Some(FOSTC3NET_TEXT),
        _ => None,
    }
}

/// Names accepted by [`builtin_model_text`], for error messages.
pub const BUILTIN_NAMES: [&str; 2] = ["baseline", "fostc3net"];
