//! Append-only draw store (JSON Lines) and the resume checkpoint.
//!
//! Line 1 is a header carrying a format version, the run seed, and hashes
//! of the resolved configuration and ingested data; readers reject stores
//! whose hashes do not match the current run. Each further line is one
//! retained draw. The checkpoint records the full sampler state plus the
//! store byte offset it corresponds to, so a resumed run truncates any
//! partial tail and continues bit-identically.

use crate::CliError;
use countsurge::mcmc::{DrawRecord, SamplerState};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Seek, SeekFrom, Write};
use std::path::Path;

pub const STORE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreHeader {
    pub version: u32,
    pub seed: u64,
    /// Hash of the model-defining configuration (priors and rescaling);
    /// readers reject stores whose hash differs.
    pub config_hash: String,
    /// Hash of the full sampler configuration (run lengths, particles,
    /// seed); enforced when resuming.
    pub mcmc_hash: String,
    pub data_hash: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub seed: u64,
    pub config_hash: String,
    pub mcmc_hash: String,
    pub data_hash: String,
    /// Store length in bytes at the moment the state was captured.
    pub store_bytes: u64,
    pub state: SamplerState,
}

pub fn hash_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("serialisable");
    hex::encode(Sha256::digest(&bytes))
}

pub struct StoreWriter {
    writer: BufWriter<File>,
}

impl StoreWriter {
    /// Create a fresh store with its header line.
    pub fn create(path: &Path, header: &StoreHeader) -> Result<Self, CliError> {
        let file = File::create(path)
            .map_err(|e| CliError::Other(anyhow::anyhow!("cannot create {}: {e}", path.display())))?;
        let mut writer = BufWriter::new(file);
        serde_json::to_writer(&mut writer, header).map_err(json_err)?;
        writer.write_all(b"\n").map_err(io_err)?;
        Ok(Self { writer })
    }

    /// Reopen an existing store for appending after truncating it to the
    /// checkpointed length.
    pub fn reopen(path: &Path, truncate_to: u64) -> Result<Self, CliError> {
        let file = OpenOptions::new()
            .write(true)
            .open(path)
            .map_err(|e| CliError::Other(anyhow::anyhow!("cannot open {}: {e}", path.display())))?;
        file.set_len(truncate_to).map_err(io_err)?;
        let mut file = file;
        file.seek(SeekFrom::End(0)).map_err(io_err)?;
        Ok(Self {
            writer: BufWriter::new(file),
        })
    }

    pub fn append(&mut self, record: &DrawRecord) -> Result<(), CliError> {
        serde_json::to_writer(&mut self.writer, record).map_err(json_err)?;
        self.writer.write_all(b"\n").map_err(io_err)?;
        Ok(())
    }

    /// Flush and report the current byte length.
    pub fn flushed_len(&mut self) -> Result<u64, CliError> {
        self.writer.flush().map_err(io_err)?;
        Ok(self.writer.get_ref().metadata().map_err(io_err)?.len())
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.writer.flush().map_err(io_err)?;
        Ok(())
    }
}

/// Read a store, validating its header against the expected hashes.
pub fn read_store(
    path: &Path,
    expect_config_hash: Option<&str>,
    expect_data_hash: Option<&str>,
) -> Result<(StoreHeader, Vec<DrawRecord>), CliError> {
    let file = File::open(path)
        .map_err(|e| CliError::Validation(format!("cannot open draw store {}: {e}", path.display())))?;
    let mut lines = BufReader::new(file).lines();
    let header_line = lines
        .next()
        .ok_or_else(|| CliError::Validation("draw store is empty".into()))?
        .map_err(io_err)?;
    let header: StoreHeader = serde_json::from_str(&header_line)
        .map_err(|e| CliError::Validation(format!("draw store header: {e}")))?;
    if header.version != STORE_VERSION {
        return Err(CliError::Validation(format!(
            "draw store version {} unsupported (expected {STORE_VERSION})",
            header.version
        )));
    }
    if let Some(expect) = expect_config_hash {
        if header.config_hash != expect {
            return Err(CliError::Validation(
                "draw store was produced under a different configuration".into(),
            ));
        }
    }
    if let Some(expect) = expect_data_hash {
        if header.data_hash != expect {
            return Err(CliError::Validation(
                "draw store was produced from different data".into(),
            ));
        }
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(io_err)?;
        if line.is_empty() {
            continue;
        }
        let record: DrawRecord = serde_json::from_str(&line)
            .map_err(|e| CliError::Validation(format!("draw store line {}: {e}", i + 2)))?;
        records.push(record);
    }
    Ok((header, records))
}

pub fn write_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    let mut file = BufWriter::new(File::create(&tmp).map_err(io_err)?);
    serde_json::to_writer(&mut file, checkpoint).map_err(json_err)?;
    file.flush().map_err(io_err)?;
    drop(file);
    std::fs::rename(&tmp, path).map_err(io_err)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read checkpoint {}: {e}", path.display())))?;
    serde_json::from_str(&raw)
        .map_err(|e| CliError::Validation(format!("malformed checkpoint: {e}")))
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::Other(anyhow::anyhow!("store I/O: {e}"))
}

fn json_err(e: serde_json::Error) -> CliError {
    CliError::Other(anyhow::anyhow!("store serialisation: {e}"))
}
