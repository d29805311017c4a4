use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

/// Bumped whenever a CSV layout changes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize)]
pub struct FileEntry {
    pub path: String,
    pub format: &'static str,
    /// Header row for CSV files.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub columns: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub schema_version: u32,
    pub kind: crate::config::Kind,
    pub seed: u64,
    pub parallel_feature: bool,
    pub config: &'a ExperimentConfig,
    pub files: &'a [FileEntry],
}

/// Output directory plus the record of everything written into it.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<FileEntry>,
}

impl Outputs {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn open(&self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let f = File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Ok(BufWriter::new(f))
    }

    /// Writes a CSV through `write` and records its header.
    pub fn csv(
        &mut self,
        name: &str,
        write: impl FnOnce(&mut BufWriter<File>) -> Result<()>,
    ) -> Result<()> {
        let mut w = self.open(name)?;
        write(&mut w)?;
        w.flush()?;
        drop(w);
        let mut header = String::new();
        BufReader::new(File::open(self.dir.join(name))?).read_line(&mut header)?;
        self.files.push(FileEntry {
            path: name.to_string(),
            format: "csv",
            columns: header.trim_end().split(',').map(str::to_string).collect(),
        });
        Ok(())
    }

    /// Rows of already formatted fields under `header`.
    pub fn table(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        self.csv(name, |w| {
            let mut wtr = csv::Writer::from_writer(w);
            wtr.write_record(header)?;
            for r in rows {
                wtr.write_record(&r)?;
            }
            wtr.flush()?;
            Ok(())
        })
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut w = self.open(name)?;
        serde_json::to_writer_pretty(&mut w, value)?;
        writeln!(w)?;
        w.flush()?;
        self.files.push(FileEntry {
            path: name.to_string(),
            format: "json",
            columns: Vec::new(),
        });
        Ok(())
    }

    pub fn text(&mut self, name: &str, format: &'static str, body: &str) -> Result<()> {
        let mut w = self.open(name)?;
        w.write_all(body.as_bytes())?;
        w.flush()?;
        self.files.push(FileEntry {
            path: name.to_string(),
            format,
            columns: Vec::new(),
        });
        Ok(())
    }

    /// Writes `manifest.json` and returns its path.
    pub fn finish(self, cfg: &ExperimentConfig) -> Result<PathBuf> {
        let manifest = Manifest {
            tool: "twolevel",
            version: env!("CARGO_PKG_VERSION"),
            schema_version: SCHEMA_VERSION,
            kind: cfg.kind,
            seed: cfg.seed,
            parallel_feature: cfg!(feature = "parallel"),
            config: cfg,
            files: &self.files,
        };
        let path = self.dir.join("manifest.json");
        let mut w = self.open("manifest.json")?;
        serde_json::to_writer_pretty(&mut w, &manifest)?;
        writeln!(w)?;
        w.flush()?;
        Ok(path)
    }
}

/// Shortest round-trip decimal form, `NaN`, `inf` or `-inf`.
pub fn num(v: f64) -> String {
    v.to_string()
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}
