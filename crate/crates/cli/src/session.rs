//! Input/output plumbing shared by all subcommands: `-` for the standard
//! streams, SHA-256 digests of everything read and written, and the run
//! manifest.

use std::cell::RefCell;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

/// Error caused by how the program was invoked rather than by the data.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

type SharedHasher = Rc<RefCell<Sha256>>;

struct HashingReader<R> {
    inner: R,
    hasher: SharedHasher,
}

impl<R: Read> Read for HashingReader<R> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.hasher.borrow_mut().update(&buf[..n]);
        Ok(n)
    }
}

struct HashingWriter<W> {
    inner: W,
    hasher: SharedHasher,
}

impl<W: Write> Write for HashingWriter<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.hasher.borrow_mut().update(&buf[..n]);
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

struct Tracked {
    path: String,
    hasher: SharedHasher,
}

impl Tracked {
    fn digest(&self) -> Value {
        let hex: String = self
            .hasher
            .borrow()
            .clone()
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        json!({ "path": self.path, "sha256": hex })
    }
}

pub fn is_stdio(path: &Path) -> bool {
    path.as_os_str() == "-"
}

pub struct Session {
    subcommand: &'static str,
    started: Instant,
    inputs: Vec<Tracked>,
    outputs: Vec<Tracked>,
    manifest_path: Option<PathBuf>,
}

impl Session {
    pub fn new(subcommand: &'static str, manifest: Option<PathBuf>) -> Self {
        Session {
            subcommand,
            started: Instant::now(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            manifest_path: manifest,
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<Box<dyn BufRead>> {
        let hasher = SharedHasher::default();
        let source: Box<dyn Read> = if is_stdio(path) {
            Box::new(io::stdin().lock())
        } else {
            let file = File::open(path)
                .map_err(|e| UsageError(format!("cannot open {}: {e}", path.display())))?;
            Box::new(file)
        };
        self.inputs.push(Tracked {
            path: path.display().to_string(),
            hasher: hasher.clone(),
        });
        Ok(Box::new(BufReader::with_capacity(
            1 << 16,
            HashingReader { inner: source, hasher },
        )))
    }

    /// Opens an output. The first file output also fixes the default
    /// manifest location, `<output>.manifest.json`.
    pub fn output(&mut self, path: &Path) -> Result<Box<dyn Write>> {
        let hasher = SharedHasher::default();
        let sink: Box<dyn Write> = if is_stdio(path) {
            Box::new(io::stdout().lock())
        } else {
            if self.manifest_path.is_none() {
                let mut name = path.as_os_str().to_owned();
                name.push(".manifest.json");
                self.manifest_path = Some(PathBuf::from(name));
            }
            let file = File::create(path)
                .map_err(|e| UsageError(format!("cannot create {}: {e}", path.display())))?;
            Box::new(file)
        };
        self.outputs.push(Tracked {
            path: path.display().to_string(),
            hasher: hasher.clone(),
        });
        Ok(Box::new(BufWriter::with_capacity(
            1 << 16,
            HashingWriter { inner: sink, hasher },
        )))
    }

    /// Writes the manifest when a location is known: either `--manifest` or
    /// derived from a file output. Runs that only print to the standard
    /// output and get no `--manifest` have nowhere to put one.
    pub fn finish<P: Serialize>(self, params: &P, seed: Option<u64>, summary: Value) -> Result<()> {
        let Some(path) = &self.manifest_path else {
            return Ok(());
        };
        let manifest = json!({
            "subcommand": self.subcommand,
            "version": env!("CARGO_PKG_VERSION"),
            "parameters": serde_json::to_value(params)?,
            "seed": seed,
            "inputs": self.inputs.iter().map(Tracked::digest).collect::<Vec<_>>(),
            "outputs": self.outputs.iter().map(Tracked::digest).collect::<Vec<_>>(),
            "summary": summary,
            "wall_time_seconds": self.started.elapsed().as_secs_f64(),
        });
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        std::fs::write(path, text).with_context(|| format!("writing manifest {}", path.display()))?;
        Ok(())
    }
}
