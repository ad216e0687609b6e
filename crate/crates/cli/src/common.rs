use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use serde_json::Value;

use agentseg_core::RunConfig;

pub const EXIT_OK: u8 = 0;
pub const EXIT_INVALID: u8 = 1;
pub const EXIT_IO: u8 = 2;
pub const EXIT_BACKEND: u8 = 3;

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    pub fn invalid(msg: impl Display) -> Self {
        Failure {
            code: EXIT_INVALID,
            error: anyhow!("{msg}"),
        }
    }

    pub fn io(msg: impl Display) -> Self {
        Failure {
            code: EXIT_IO,
            error: anyhow!("{msg}"),
        }
    }
}

pub trait ResultExt<T> {
    fn invalid(self) -> Result<T, Failure>;
    fn io(self) -> Result<T, Failure>;
    fn backend(self) -> Result<T, Failure>;
}

impl<T, E> ResultExt<T> for Result<T, E>
where
    E: Into<anyhow::Error>,
{
    fn invalid(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: EXIT_INVALID,
            error: e.into(),
        })
    }

    fn io(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: EXIT_IO,
            error: e.into(),
        })
    }

    fn backend(self) -> Result<T, Failure> {
        self.map_err(|e| Failure {
            code: EXIT_BACKEND,
            error: e.into(),
        })
    }
}

pub fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::io(format!("cannot read {}: {e}", path.display())))
}

pub fn read_json(path: &Path) -> Result<Value, Failure> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

/// Non-blank lines of a JSON-Lines file, parsed.
pub fn read_jsonl(path: &Path) -> Result<Vec<Value>, Failure> {
    let text = read_text(path)?;
    parse_jsonl(&text, path)
}

pub fn parse_jsonl(text: &str, path: &Path) -> Result<Vec<Value>, Failure> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Failure::io(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}

/// Writes to `out`, or stdout when absent.
pub fn emit(out: Option<&PathBuf>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)
                    .map_err(|e| Failure::io(format!("cannot create {}: {e}", parent.display())))?;
            }
            std::fs::write(path, text).map_err(|e| Failure::io(format!("cannot write {}: {e}", path.display())))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).io()?;
            stdout.flush().io()
        }
    }
}

/// Pretty JSON with a trailing newline.
pub fn json_text(value: &Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("JSON values always serialize");
    s.push('\n');
    s
}

/// CSV artifacts carry the effective config as a leading comment line.
pub fn config_comment(cfg: &RunConfig) -> String {
    format!("# config: {}\n", cfg.to_json())
}

pub fn csv_text(cfg: &RunConfig, header: &[&str], rows: &[Vec<String>]) -> Result<String, Failure> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).io()?;
    for row in rows {
        w.write_record(row).io()?;
    }
    let body = String::from_utf8(w.into_inner().map_err(|e| Failure::io(e.to_string()))?).io()?;
    Ok(format!("{}{}", config_comment(cfg), body))
}

pub fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Json,
    Csv,
}
