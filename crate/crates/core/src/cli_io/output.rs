//! Artifact writing. Tables are CSV with a leading `# config-hash: <hex>`
//! comment line, '.' decimals and LF endings; summaries are pretty JSON with
//! a `config_hash` field. Every file written is recorded for the manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

#[derive(Debug, Clone, Serialize)]
pub struct ArtifactRecord {
    pub file: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug)]
pub struct OutputDir {
    dir: PathBuf,
    config_hash: String,
    written: Vec<ArtifactRecord>,
}

impl OutputDir {
    pub fn create(dir: &Path, config_hash: &str) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            config_hash: config_hash.to_string(),
            written: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn records(&self) -> &[ArtifactRecord] {
        &self.written
    }

    fn save(&mut self, name: &str, bytes: Vec<u8>) -> Result<()> {
        let mut f = fs::File::create(self.dir.join(name))?;
        f.write_all(&bytes)?;
        self.written.push(ArtifactRecord {
            file: name.to_string(),
            sha256: hex::encode(Sha256::digest(&bytes)),
            bytes: bytes.len(),
        });
        Ok(())
    }

    /// Writes `rows` under `header`; each row must match the header length.
    pub fn csv<R: AsRef<[String]>>(&mut self, name: &str, header: &[&str], rows: &[R]) -> Result<()> {
        let mut buf = format!("# config-hash: {}\n", self.config_hash).into_bytes();
        {
            let mut w = csv::WriterBuilder::new()
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(&mut buf);
            w.write_record(header)?;
            for r in rows {
                w.write_record(r.as_ref())?;
            }
            w.flush()?;
        }
        self.save(name, buf)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        #[derive(Serialize)]
        struct Wrapped<'a, T> {
            config_hash: &'a str,
            #[serde(flatten)]
            body: &'a T,
        }
        let mut bytes = serde_json::to_vec_pretty(&Wrapped {
            config_hash: &self.config_hash,
            body: value,
        })?;
        bytes.push(b'\n');
        self.save(name, bytes)
    }
}

/// Shortest round-trip decimal form of a float.
pub fn num(v: f64) -> String {
    format!("{v}")
}

/// A CSV row from numbers.
pub fn row<I: IntoIterator<Item = f64>>(values: I) -> Vec<String> {
    values.into_iter().map(num).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_hash_line_and_lf_endings() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::create(dir.path(), "abc").unwrap();
        out.csv("t.csv", &["a", "b"], &[row([1.0, 0.1]), vec!["x,y".into(), num(-2.5)]])
            .unwrap();
        let text = fs::read_to_string(dir.path().join("t.csv")).unwrap();
        assert_eq!(text, "# config-hash: abc\na,b\n1,0.1\n\"x,y\",-2.5\n");
        assert_eq!(out.records()[0].bytes, text.len());
    }
}
