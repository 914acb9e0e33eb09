use std::fmt::Display;
use std::path::Path;

use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Text on stdout, or a JSON summary with `--json`. Notes go to stderr.
pub struct Output {
    json: bool,
}

impl Output {
    pub fn new(json: bool) -> Self {
        Self { json }
    }

    pub fn is_json(&self) -> bool {
        self.json
    }

    pub fn emit(&self, text: impl Display, summary: &impl Serialize) {
        if self.json {
            println!("{}", serde_json::to_string_pretty(summary).expect("summary serializes"));
        } else {
            println!("{text}");
        }
    }

    pub fn note(&self, msg: impl Display) {
        eprintln!("{msg}");
    }
}

pub fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    write_file(path, serde_json::to_string_pretty(value).expect("value serializes") + "\n")
}
