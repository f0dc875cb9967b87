//! Built-in experiment presets, as TOML documents.

use toml::Table;

use crate::error::{Error, Result};

pub const PRESETS: &[&str] = &["ncv-grid25", "static-quadratic", "complete-graph-centralized", "custom"];

/// 25 sensors on a 5×5 grid tracking a nearly-constant-velocity target
/// through cubic-noise scalar observations.
const NCV_GRID25: &str = r#"
rounds = 1000
seed = 0
weights = "metropolis"
map = "euclidean"
clip = "auto"
init = "zero"
granularity = "full"
execution = "serial"
target_start = [0.0, 0.0, 0.0, 0.0]

[network]
kind = "grid"
rows = 5
cols = 5

[set]
kind = "whole-space"

[dynamics]
kind = "ncv"
epsilon = 0.1

[noise]
kind = "ncv-scaled"
sigma_nu2 = 0.5

[loss]
kind = "quartic-sensor"

[schedule]
kind = "constant"
eta = 0.1

[bound]
delta = 0.1
pad = 1.0
"#;

/// A fixed target in a box: every hypothesis of the regret bound holds.
const STATIC_QUADRATIC: &str = r#"
rounds = 1000
seed = 0
weights = "metropolis"
map = "euclidean"
clip = "none"
init = "zero"
granularity = "full"
execution = "serial"
target_start = [0.3, -0.2]

[network]
kind = "grid"
rows = 3
cols = 3

[set]
kind = "box"
lower = [-1.0, -1.0]
upper = [1.0, 1.0]

[dynamics]
kind = "identity"
dim = 2

[noise]
kind = "zero"

[loss]
kind = "quadratic-tracking"
amplitude = 0.5

[schedule]
kind = "static-optimal"

[bound]
delta = 0.1
pad = 1.0
"#;

/// Parsed preset document. `custom` is empty: the config file supplies everything.
pub fn preset_table(name: &str) -> Result<Table> {
    let text = match name {
        "ncv-grid25" => NCV_GRID25.to_string(),
        "static-quadratic" => STATIC_QUADRATIC.to_string(),
        "complete-graph-centralized" => NCV_GRID25
            .replace("weights = \"metropolis\"", "weights = \"uniform\"")
            .replace("kind = \"grid\"\nrows = 5\ncols = 5", "kind = \"complete\"\nn = 25"),
        "custom" => String::new(),
        other => {
            return Err(Error::config(format!(
                "unknown preset {other:?} (known: {})",
                PRESETS.join(", ")
            )))
        }
    };
    text.parse::<Table>().map_err(|e| Error::config(format!("preset {name}: {}", e.message())))
}
