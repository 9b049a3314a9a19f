//! Output files. Every CSV starts with one provenance comment line; JSON
//! reports carry the same fields under `provenance`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub toolkit: &'static str,
    pub version: &'static str,
    pub config_hash: String,
    pub master_seed: u64,
}

impl Provenance {
    pub fn new(config_hash: String, master_seed: u64) -> Self {
        Provenance {
            toolkit: "privaudit",
            version: VERSION,
            config_hash,
            master_seed,
        }
    }

    pub fn comment_line(&self) -> String {
        format!(
            "# {} {} config={} master_seed={}",
            self.toolkit, self.version, self.config_hash, self.master_seed
        )
    }
}

/// Directory receiving an experiment's artifacts.
#[derive(Debug, Clone)]
pub struct OutputDir {
    dir: PathBuf,
    provenance: Provenance,
    written: Vec<PathBuf>,
}

pub type CsvOut = csv::Writer<BufWriter<File>>;

impl OutputDir {
    pub fn create(dir: &Path, provenance: Provenance) -> Result<Self> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::io(format!("creating {}", dir.display()), e))?;
        Ok(OutputDir {
            dir: dir.to_path_buf(),
            provenance,
            written: Vec::new(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Files written so far, in order.
    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    fn open(&mut self, name: &str) -> Result<(PathBuf, BufWriter<File>)> {
        let path = self.dir.join(name);
        let file = File::create(&path)
            .map_err(|e| CliError::io(format!("creating {}", path.display()), e))?;
        self.written.push(path.clone());
        Ok((path, BufWriter::new(file)))
    }

    /// A CSV writer positioned after the provenance line.
    pub fn csv(&mut self, name: &str) -> Result<CsvOut> {
        let (path, mut w) = self.open(name)?;
        write!(w, "{}\r\n", self.provenance.comment_line())
            .map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
        Ok(csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(w))
    }

    /// Raw writer positioned after the provenance line, for core writers
    /// that emit their own CSV.
    pub fn csv_raw(&mut self, name: &str) -> Result<BufWriter<File>> {
        let (path, mut w) = self.open(name)?;
        write!(w, "{}\r\n", self.provenance.comment_line())
            .map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
        Ok(w)
    }

    /// Pretty JSON with a `provenance` member added to `value`'s object.
    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut v = serde_json::to_value(value).expect("report serializes");
        if let serde_json::Value::Object(map) = &mut v {
            map.insert(
                "provenance".into(),
                serde_json::to_value(&self.provenance).expect("provenance serializes"),
            );
        }
        let (path, mut w) = self.open(name)?;
        let io = |e| CliError::io(format!("writing {}", path.display()), e);
        serde_json::to_writer_pretty(&mut w, &v).map_err(|e| io(e.into()))?;
        writeln!(w).map_err(io)?;
        w.flush().map_err(io)
    }

    /// Binary artifact without provenance header.
    pub fn binary(&mut self, name: &str) -> Result<BufWriter<File>> {
        Ok(self.open(name)?.1)
    }
}

/// Flushes a CSV writer, reporting failures as IO errors.
pub fn finish(mut w: CsvOut, name: &str) -> Result<()> {
    w.flush().map_err(|e| CliError::io(format!("writing {name}"), e))
}

/// Shortest round-trip decimal; infinities as `inf`.
pub fn num(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        v.to_string()
    }
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}
