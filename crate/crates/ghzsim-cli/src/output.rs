use std::cell::RefCell;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use serde::Serialize;

/// Written beside every output set. Holds the only non-deterministic field
/// (the timestamp), so the numerical files themselves are reproducible.
#[derive(Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub scenario: String,
    pub overrides: Vec<String>,
    pub seed: Option<u64>,
    pub shots: Option<usize>,
    pub outputs: Vec<String>,
    pub tool_version: String,
    pub timestamp: u64,
}

impl Manifest {
    pub fn new(command: &str, scenario: &str, overrides: &[String], seed: Option<u64>, shots: Option<usize>) -> Self {
        Self {
            command: command.into(),
            scenario: scenario.into(),
            overrides: overrides.to_vec(),
            seed,
            shots,
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        }
    }
}

pub struct Sink {
    dir: Option<PathBuf>,
    written: RefCell<Vec<String>>,
}

impl Sink {
    pub fn new(dir: Option<PathBuf>) -> anyhow::Result<Self> {
        if let Some(d) = &dir {
            std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
        }
        Ok(Self { dir, written: RefCell::new(Vec::new()) })
    }

    pub fn file(&self, name: &str, contents: &str) -> anyhow::Result<()> {
        if let Some(d) = &self.dir {
            let p = d.join(name);
            std::fs::write(&p, contents).with_context(|| format!("writing {}", p.display()))?;
            self.written.borrow_mut().push(name.to_string());
        }
        Ok(())
    }

    /// Prints to stdout as well as writing the file.
    pub fn stdout_file(&self, name: &str, contents: &str) -> anyhow::Result<()> {
        write_stdout(contents);
        self.file(name, contents)
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> anyhow::Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.file(name, &s)
    }

    pub fn manifest(&self, mut m: Manifest) -> anyhow::Result<()> {
        if self.dir.is_none() {
            return Ok(());
        }
        m.outputs = self.written.borrow().clone();
        self.json("manifest.json", &m)
    }
}

pub fn csv_row(fields: &[String]) -> String {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(fields).expect("writing to memory");
    String::from_utf8(w.into_inner().expect("flushing memory writer")).expect("csv output is utf-8")
}

fn read_rows(path: &Path, width: usize) -> anyhow::Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() < width {
            bail!("{}: line {} has {} columns, expected {width}", path.display(), i + 2, rec.len());
        }
        let row = (0..width)
            .map(|c| rec[c].parse::<f64>().with_context(|| format!("{}: line {}: bad number '{}'", path.display(), i + 2, &rec[c])))
            .collect::<anyhow::Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_pairs(path: &Path) -> anyhow::Result<Vec<(f64, f64)>> {
    Ok(read_rows(path, 2)?.into_iter().map(|r| (r[0], r[1])).collect())
}

pub fn read_triples(path: &Path) -> anyhow::Result<Vec<(f64, f64, f64)>> {
    Ok(read_rows(path, 3)?.into_iter().map(|r| (r[0], r[1], r[2])).collect())
}

/// Writes to stdout; a closed pipe ends the process quietly.
pub fn write_stdout(s: &str) {
    let mut out = std::io::stdout().lock();
    if let Err(e) = out.write_all(s.as_bytes()).and_then(|_| out.flush()) {
        if e.kind() == std::io::ErrorKind::BrokenPipe {
            std::process::exit(0);
        }
        eprintln!("error: writing stdout: {e}");
        std::process::exit(3);
    }
}
