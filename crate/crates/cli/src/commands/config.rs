use std::fs;

use robself::model::{RobSelfConfig, PRESETS};

use crate::args::ConfigArgs;
use crate::{CliError, CliResult};

pub fn cmd_config(a: &ConfigArgs) -> CliResult {
    if a.list {
        for name in PRESETS {
            println!("{name}");
        }
    } else if let Some(name) = &a.dump_preset {
        let cfg = RobSelfConfig::preset(name).map_err(|e| CliError::Usage(e.to_string()))?;
        print!("preset = {name}\n{}", cfg.to_text());
    } else if let Some(path) = &a.check {
        let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
        let cfg = RobSelfConfig::parse(&text).map_err(|e| CliError::Usage(e.to_string()))?;
        print!("{}", cfg.to_text());
    }
    Ok(())
}
