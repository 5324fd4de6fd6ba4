//! Subcommand implementations and shared output plumbing.

pub mod hj;
pub mod ldp;
pub mod rates;
pub mod simulation;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::CliError;

/// Resolved configuration plus the output directory of one run.
pub struct RunContext {
    pub config: ExperimentConfig,
    pub hash: String,
    pub subcommand: &'static str,
    pub out_dir: PathBuf,
}

impl RunContext {
    /// Create the output directory and echo the resolved config into it.
    /// The echo carries the provenance header as TOML comments, so it
    /// stays a valid config with the same hash.
    pub fn prepare(config: ExperimentConfig, subcommand: &'static str) -> Result<Self, CliError> {
        let out_dir = PathBuf::from(&config.output.dir);
        fs::create_dir_all(&out_dir)
            .map_err(|e| CliError::Validation(format!("cannot create output dir: {e}")))?;
        let hash = config.hash();
        let ctx = Self {
            config,
            hash,
            subcommand,
            out_dir,
        };
        let seed = ctx.config.simulation.as_ref().map_or(0, |s| s.seed);
        let mut echo = String::new();
        for (key, value) in ctx.metadata(seed) {
            echo.push_str(&format!("# {key}={value}\n"));
        }
        echo.push_str(&ctx.config.canonical_text());
        ctx.write_text("config.resolved.toml", &echo)?;
        Ok(ctx)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Comment metadata stamped into CSV outputs.
    pub fn metadata(&self, seed: u64) -> Vec<(String, String)> {
        vec![
            ("produced_by".into(), self.subcommand.to_string()),
            ("config_hash".into(), self.hash.clone()),
            ("seed".into(), seed.to_string()),
        ]
    }

    pub fn write_text(&self, name: &str, text: &str) -> Result<(), CliError> {
        fs::write(self.path(name), text)
            .map_err(|e| CliError::Validation(format!("cannot write {name}: {e}")))
    }

    /// Write a CSV via a callback receiving a buffered writer.
    pub fn write_csv(
        &self,
        name: &str,
        seed: u64,
        body: impl FnOnce(&mut Vec<u8>) -> Result<(), fluxldp_core::Error>,
    ) -> Result<(), CliError> {
        let mut buf: Vec<u8> = Vec::new();
        for (key, value) in self.metadata(seed) {
            writeln!(buf, "# {key}={value}")
                .map_err(|e| CliError::Validation(e.to_string()))?;
        }
        body(&mut buf).map_err(CliError::from_core)?;
        self.write_text_bytes(name, &buf)
    }

    fn write_text_bytes(&self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        fs::write(self.path(name), bytes)
            .map_err(|e| CliError::Validation(format!("cannot write {name}: {e}")))
    }

    /// Wrap a report with provenance and write it as pretty JSON.
    pub fn write_json<T: Serialize>(
        &self,
        name: &str,
        seed: u64,
        report: &T,
    ) -> Result<(), CliError> {
        #[derive(Serialize)]
        struct Wrapper<'a, T> {
            subcommand: &'a str,
            config_hash: &'a str,
            seed: u64,
            resolved_config: &'a str,
            report: &'a T,
        }
        let canonical = self.config.canonical_text();
        let wrapper = Wrapper {
            subcommand: self.subcommand,
            config_hash: &self.hash,
            seed,
            resolved_config: &canonical,
            report,
        };
        let json = serde_json::to_string_pretty(&wrapper)
            .map_err(|e| CliError::Validation(e.to_string()))?;
        self.write_text(name, &(json + "\n"))
    }

    /// One-line run summary on stdout.
    pub fn summarize(&self, detail: &str) {
        println!(
            "{}: {detail} config={} -> {}",
            self.subcommand,
            self.hash,
            self.out_dir.display()
        );
    }
}

/// Decimal rendering used by every CSV column (17 significant digits).
pub fn fmt(x: f64) -> String {
    fluxldp_core::io::format_f64(x)
}

pub fn file_name_of(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}
