use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sqdiv_core::witness_format::{Artifact, SCHEMA_VERSION};

#[derive(Serialize)]
struct Run<'a, C, R> {
    config: &'a C,
    result: &'a R,
}

/// Artifact writer for one invocation. Writes are sequential and contain no timestamps, so equal
/// inputs give equal bytes.
pub struct Output {
    dir: PathBuf,
    seed: u64,
    svg: bool,
}

impl Output {
    pub fn new(dir: &Path, seed: u64, svg: bool) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Output { dir: dir.to_path_buf(), seed, svg })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn write(&self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        eprintln!("wrote {}", path.display());
        Ok(path)
    }

    pub fn json<C: Serialize, R: Serialize>(&self, name: &str, kind: &str, config: &C, result: &R) -> Result<PathBuf> {
        self.write(name, &Artifact::new(kind, self.seed, Run { config, result }).to_json())
    }

    /// A raw artifact whose body is already a complete payload.
    pub fn artifact<T: Serialize>(&self, name: &str, kind: &str, body: T) -> Result<PathBuf> {
        self.write(name, &Artifact::new(kind, self.seed, body).to_json())
    }

    /// CSV with a `#` header line carrying the schema version and seed.
    pub fn csv(&self, name: &str, kind: &str, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let body = String::from_utf8(w.into_inner()?)?;
        let text = format!("# schema_version={SCHEMA_VERSION} kind={kind} seed={}\n{body}", self.seed);
        self.write(name, &text)
    }

    pub fn svg(&self, name: &str, kind: &str, body: String) -> Result<Option<PathBuf>> {
        if !self.svg {
            return Ok(None);
        }
        let text = body.replacen(
            "<svg ",
            &format!("<!-- schema_version={SCHEMA_VERSION} kind={kind} seed={} -->\n<svg ", self.seed),
            1,
        );
        self.write(name, &text).map(Some)
    }
}
