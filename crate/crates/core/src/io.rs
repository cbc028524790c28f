//! Binary artifacts: a magic header, an artifact tag, a format version and a
//! bincode payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::data::{Dataset, SplitBundle};
use crate::error::{Error, Result};
use crate::models::{ModelConfig, TrainedModel};

const MAGIC: &[u8; 6] = b"LATTE\0";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtifactKind {
    Dataset,
    Split,
    Model,
}

impl ArtifactKind {
    fn tag(self) -> [u8; 4] {
        match self {
            ArtifactKind::Dataset => *b"DSET",
            ArtifactKind::Split => *b"SPLT",
            ArtifactKind::Model => *b"MODL",
        }
    }
}

/// A trained model together with the configuration that produced it.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelArtifact {
    pub config: ModelConfig,
    pub model: TrainedModel,
}

pub fn write_artifact<T: Serialize, W: Write>(mut w: W, kind: ArtifactKind, value: &T) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&kind.tag())?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    bincode::serialize_into(&mut w, value)?;
    w.flush()?;
    Ok(())
}

pub fn read_artifact<T: DeserializeOwned, R: Read>(mut r: R, kind: ArtifactKind) -> Result<T> {
    let mut header = [0u8; 12];
    r.read_exact(&mut header).map_err(|_| Error::BadHeader {
        expected: describe(MAGIC, &kind.tag()),
        found: "truncated file".to_string(),
    })?;
    if &header[..6] != MAGIC || header[6..10] != kind.tag() {
        return Err(Error::BadHeader {
            expected: describe(MAGIC, &kind.tag()),
            found: describe(&header[..6], &header[6..10]),
        });
    }
    let version = u16::from_le_bytes([header[10], header[11]]);
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    Ok(bincode::deserialize_from(r)?)
}

fn describe(magic: &[u8], tag: &[u8]) -> String {
    format!("{}/{}", String::from_utf8_lossy(magic).trim_end_matches('\0'), String::from_utf8_lossy(tag))
}

pub fn save<T: Serialize>(path: impl AsRef<Path>, kind: ArtifactKind, value: &T) -> Result<()> {
    write_artifact(BufWriter::new(File::create(path)?), kind, value)
}

pub fn load<T: DeserializeOwned>(path: impl AsRef<Path>, kind: ArtifactKind) -> Result<T> {
    read_artifact(BufReader::new(File::open(path)?), kind)
}

pub fn save_dataset(path: impl AsRef<Path>, d: &Dataset) -> Result<()> {
    save(path, ArtifactKind::Dataset, d)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    load(path, ArtifactKind::Dataset)
}

pub fn save_split(path: impl AsRef<Path>, b: &SplitBundle) -> Result<()> {
    save(path, ArtifactKind::Split, b)
}

pub fn load_split(path: impl AsRef<Path>) -> Result<SplitBundle> {
    load(path, ArtifactKind::Split)
}

pub fn save_model(path: impl AsRef<Path>, m: &ModelArtifact) -> Result<()> {
    save(path, ArtifactKind::Model, m)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelArtifact> {
    load(path, ArtifactKind::Model)
}
