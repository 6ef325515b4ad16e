//! CSV and JSON emitters. Every CSV starts with comment lines carrying the config hash
//! and the config itself, followed by the header row.

use std::io::Write;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::settings::EffectiveConfig;
use crate::CliError;

pub fn config_json(cfg: &EffectiveConfig) -> String {
    serde_json::to_string(cfg).expect("config serializes")
}

/// Hex SHA-256 of the compact JSON form of the config.
pub fn config_hash(cfg: &EffectiveConfig) -> String {
    hex::encode(Sha256::digest(config_json(cfg).as_bytes()))
}

/// RFC 4180 table preceded by config comments and followed by optional trailing
/// comment lines.
pub struct CsvTable {
    writer: csv::Writer<Vec<u8>>,
    trailer: Vec<String>,
}

impl CsvTable {
    pub fn new(cfg: &EffectiveConfig, header: &[&str]) -> Result<Self, CliError> {
        let mut prefix = Vec::new();
        write!(prefix, "# config_sha256={}\r\n", config_hash(cfg))?;
        write!(prefix, "# config={}\r\n", config_json(cfg))?;
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::CRLF)
            .from_writer(prefix);
        writer.write_record(header).map_err(csv_error)?;
        Ok(Self {
            writer,
            trailer: Vec::new(),
        })
    }

    pub fn row<I, T>(&mut self, fields: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = T>,
        T: AsRef<[u8]>,
    {
        self.writer.write_record(fields).map_err(csv_error)
    }

    /// A `# key=value` line after the table.
    pub fn note(&mut self, key: &str, value: impl std::fmt::Display) {
        self.trailer.push(format!("{key}={value}"));
    }

    pub fn finish(self) -> Result<Vec<u8>, CliError> {
        let mut out = self
            .writer
            .into_inner()
            .map_err(|e| CliError::Io(e.into_error()))?;
        for line in self.trailer {
            // comments stay on one line
            write!(out, "# {}\r\n", line.replace(['\r', '\n'], " "))?;
        }
        Ok(out)
    }
}

fn csv_error(e: csv::Error) -> CliError {
    CliError::Io(std::io::Error::other(e))
}

/// Shortest round-trip decimal form of a float.
pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn json_pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("report serializes");
    out.push(b'\n');
    out
}

/// Writes `bytes` to `path`, or to standard output.
pub fn emit(bytes: &[u8], path: Option<&Path>) -> Result<(), CliError> {
    match path {
        Some(p) => std::fs::write(p, bytes)
            .map_err(|e| CliError::Config(format!("cannot write {}: {e}", p.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use linresp::ResponseConfig;

    #[test]
    fn table_layout() {
        let cfg = EffectiveConfig::new("scaling-a", "solenoid".into(), ResponseConfig::default());
        let mut t = CsvTable::new(&cfg, &["A", "mean", "std"]).unwrap();
        t.row(["125", "0.1", "0.02"]).unwrap();
        t.note("loglog_slope", 0.5);
        let text = String::from_utf8(t.finish().unwrap()).unwrap();
        let lines: Vec<&str> = text.split("\r\n").collect();
        assert!(lines[0].starts_with("# config_sha256="));
        assert_eq!(lines[0].len(), "# config_sha256=".len() + 64);
        assert!(lines[1].starts_with("# config={"));
        assert_eq!(lines[2], "A,mean,std");
        assert_eq!(lines[3], "125,0.1,0.02");
        assert_eq!(lines[4], "# loglog_slope=0.5");
    }

    #[test]
    fn hash_depends_on_config() {
        let a = EffectiveConfig::new("run", "solenoid".into(), ResponseConfig::default());
        let mut b = a.clone();
        b.response.segments = 10;
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a), config_hash(&a.clone()));
    }
}
