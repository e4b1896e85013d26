use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};
use stiv_core::conic::SolveStatus;
use stiv_core::Error;

pub const SCHEMA: &str = "stiv/1";

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub bytes: usize,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub flags: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub version: &'static str,
    pub seed: Option<u64>,
    /// Wall-clock seconds per phase; the only fields that vary between identical runs.
    pub timings: BTreeMap<String, f64>,
}

impl RunManifest {
    pub fn new(command: &str, flags: serde_json::Value) -> Self {
        Self {
            command: command.to_string(),
            flags,
            inputs: Vec::new(),
            version: env!("CARGO_PKG_VERSION"),
            seed: None,
            timings: BTreeMap::new(),
        }
    }

    /// Reads an input file, records its digest and returns the bytes that were hashed.
    pub fn read_input(&mut self, path: &Path) -> Result<Vec<u8>, Error> {
        let bytes = std::fs::read(path)?;
        self.inputs.push(InputDigest {
            path: path.to_path_buf(),
            bytes: bytes.len(),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
        Ok(bytes)
    }

    /// Runs `f` and records its duration under `phase`.
    pub fn timed<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.timings.insert(phase.to_string(), start.elapsed().as_secs_f64());
        out
    }
}

#[derive(Debug, Serialize)]
pub struct Document<T: Serialize> {
    pub schema: &'static str,
    pub command: String,
    pub result: T,
    pub manifest: RunManifest,
}

pub fn emit<T: Serialize>(doc: &Document<T>, out: Option<&Path>) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(doc)?;
    match out {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.write_all(b"\n")?;
        }
    }
    Ok(())
}

pub mod exit {
    pub const USAGE: u8 = 2;
    pub const VALIDATION: u8 = 3;
    pub const SOLVER: u8 = 4;
    pub const INPUT: u8 = 5;
    pub const NUMERICAL: u8 = 6;
    pub const OTHER: u8 = 1;
}

/// Maps an error chain to the documented exit code.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Parse { .. } | Error::Io(_) => exit::INPUT,
                Error::Solver {
                    status: SolveStatus::NumericalFailure,
                    ..
                } => exit::NUMERICAL,
                Error::Solver { .. } => exit::SOLVER,
                _ => exit::VALIDATION,
            };
        }
        if cause.is::<std::io::Error>() || cause.is::<serde_json::Error>() || cause.is::<csv::Error>() {
            return exit::INPUT;
        }
    }
    exit::OTHER
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        let cases = [
            (Error::Config("x".into()), exit::VALIDATION),
            (Error::Dimension("x".into()), exit::VALIDATION),
            (
                Error::Parse {
                    row: 1,
                    column: "y".into(),
                    message: "bad".into(),
                },
                exit::INPUT,
            ),
            (
                Error::Solver {
                    status: SolveStatus::Infeasible,
                    context: "lp".into(),
                },
                exit::SOLVER,
            ),
            (
                Error::Solver {
                    status: SolveStatus::NumericalFailure,
                    context: "lp".into(),
                },
                exit::NUMERICAL,
            ),
        ];
        for (e, code) in cases {
            assert_eq!(exit_code(&anyhow::Error::new(e).context("while running")), code);
        }
    }

    #[test]
    fn digest_covers_the_bytes_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        std::fs::write(&path, b"abc").unwrap();
        let mut m = RunManifest::new("inspect", serde_json::Value::Null);
        let bytes = m.read_input(&path).unwrap();
        assert_eq!(bytes, b"abc");
        assert_eq!(m.inputs[0].sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }
}
