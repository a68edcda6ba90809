//! Per-run record of what a command read, wrote and cost.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};

pub const MANIFEST_HEADER: &str = "# tracesynth-manifest v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputDigest {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug)]
pub struct RunManifest {
    pub command: String,
    pub config: Vec<(String, String)>,
    pub inputs: Vec<InputDigest>,
    pub seed: Option<u64>,
    pub outputs: Vec<PathBuf>,
    started: Instant,
}

impl RunManifest {
    pub fn new(command: &str) -> Self {
        RunManifest {
            command: command.to_string(),
            config: Vec::new(),
            inputs: Vec::new(),
            seed: None,
            outputs: Vec::new(),
            started: Instant::now(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.config.push((key.to_string(), value.to_string()));
    }

    /// Hashes an input file. Directories hash every regular file inside,
    /// in name order.
    pub fn digest(&mut self, path: &Path) -> io::Result<()> {
        if path.is_dir() {
            let mut entries: Vec<PathBuf> = fs::read_dir(path)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file())
                .collect();
            entries.sort();
            for p in entries {
                self.digest(&p)?;
            }
            return Ok(());
        }
        let mut f = fs::File::open(path)?;
        let mut hasher = Sha256::new();
        let mut buf = vec![0u8; 1 << 16];
        let mut bytes = 0u64;
        loop {
            let n = f.read(&mut buf)?;
            if n == 0 {
                break;
            }
            bytes += n as u64;
            hasher.update(&buf[..n]);
        }
        let sha256 = hasher
            .finalize()
            .iter()
            .fold(String::with_capacity(64), |mut s, b| {
                write!(s, "{b:02x}").expect("String write");
                s
            });
        self.inputs.push(InputDigest {
            path: path.to_path_buf(),
            sha256,
            bytes,
        });
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Renders the manifest; `error` is the failure message of a failed run.
    pub fn render(&self, error: Option<&str>) -> String {
        let mut s = format!("{MANIFEST_HEADER}\ncommand={}\n", self.command);
        let status = if error.is_some() { "error" } else { "ok" };
        writeln!(s, "status={status}").unwrap();
        if let Some(e) = error {
            writeln!(s, "error={}", e.replace('\n', " | ")).unwrap();
        }
        match self.seed {
            Some(seed) => writeln!(s, "seed={seed}").unwrap(),
            None => s.push_str("seed=none\n"),
        }
        for (k, v) in &self.config {
            writeln!(s, "config.{k}={v}").unwrap();
        }
        for i in &self.inputs {
            writeln!(
                s,
                "input={} sha256={} bytes={}",
                i.path.display(),
                i.sha256,
                i.bytes
            )
            .unwrap();
        }
        for o in &self.outputs {
            writeln!(s, "output={}", o.display()).unwrap();
        }
        writeln!(
            s,
            "wall_ms={:.3}",
            self.started.elapsed().as_secs_f64() * 1000.0
        )
        .unwrap();
        match peak_rss_kb() {
            Some(kb) => writeln!(s, "peak_rss_kb={kb}").unwrap(),
            None => s.push_str("peak_rss_kb=unknown\n"),
        }
        s
    }
}

/// High-water resident set size of this process.
pub fn peak_rss_kb() -> Option<u64> {
    let status = fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

/// `key=value` fields of a rendered manifest, in file order.
pub fn parse_manifest(text: &str) -> Option<Vec<(String, String)>> {
    let mut lines = text.lines();
    if lines.next()? != MANIFEST_HEADER {
        return None;
    }
    lines
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
        })
        .collect()
}
