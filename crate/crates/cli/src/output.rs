//! Run manifests and report files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::args::Cli;
use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct SystemInfo {
    pub name: String,
    pub source: String,
    /// SHA-256 of the system file, or of the catalog name.
    pub hash: String,
}

impl SystemInfo {
    pub fn new(arg: &str, name: &str, source: &str) -> Self {
        let bytes = match std::fs::read(arg) {
            Ok(b) if Path::new(arg).is_file() => b,
            _ => arg.trim().as_bytes().to_vec(),
        };
        let digest = Sha256::digest(&bytes);
        let hash = digest.iter().map(|b| format!("{b:02x}")).collect();
        Self { name: name.to_string(), source: source.to_string(), hash }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub system: Option<SystemInfo>,
    pub parameters: BTreeMap<String, Value>,
    pub seed: u64,
    pub tol: f64,
    pub versions: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_clock_seconds: Option<f64>,
}

/// Collects the outputs of one run and writes them.
pub struct Run {
    manifest: RunManifest,
    dir: PathBuf,
    stem: String,
    json: bool,
    csv: bool,
    timing: bool,
    started: Instant,
}

/// `DLAB_OUT` when set and nonempty, otherwise `--out-dir`.
pub fn out_dir(cli: &Cli) -> PathBuf {
    match std::env::var("DLAB_OUT") {
        Ok(v) if !v.trim().is_empty() => PathBuf::from(v),
        _ => cli.out_dir.clone(),
    }
}

fn slug(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' }).collect()
}

impl Run {
    pub fn new(cli: &Cli, command: &str, system: Option<SystemInfo>) -> Self {
        let stem = match &system {
            Some(s) => format!("{command}-{}", slug(&s.name)),
            None => command.to_string(),
        };
        let mut versions = BTreeMap::new();
        versions.insert("dlab-core".to_string(), dlab::VERSION.to_string());
        versions.insert("dlab-cli".to_string(), env!("CARGO_PKG_VERSION").to_string());
        let both = !cli.json && !cli.csv;
        Self {
            manifest: RunManifest {
                command: command.to_string(),
                system,
                parameters: BTreeMap::new(),
                seed: cli.seed,
                tol: cli.tol,
                versions,
                outputs: Vec::new(),
                wall_clock_seconds: None,
            },
            dir: out_dir(cli),
            stem,
            json: cli.json || both,
            csv: cli.csv || both,
            timing: cli.timing,
            started: Instant::now(),
        }
    }

    pub fn param(&mut self, key: &str, value: impl Serialize) -> &mut Self {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.manifest.parameters.insert(key.to_string(), v);
        self
    }

    fn path(&self, suffix: &str, ext: &str) -> PathBuf {
        self.dir.join(format!("{}{suffix}.{ext}", self.stem))
    }

    /// Writes the CSV tables (`suffix`, text) and the JSON report, then
    /// prints the paths.
    pub fn finish(mut self, report: &impl Serialize, tables: &[(&str, String)]) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.dir)
            .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", self.dir.display())))?;
        let mut written = Vec::new();
        if self.csv {
            for (suffix, text) in tables {
                let p = self.path(suffix, "csv");
                write(&p, text)?;
                written.push(p);
            }
        }
        let json_path = self.path("", "json");
        if self.json {
            written.push(json_path.clone());
        }
        self.manifest.outputs = written.iter().map(|p| p.display().to_string()).collect();
        if self.timing {
            self.manifest.wall_clock_seconds = Some(self.started.elapsed().as_secs_f64());
        }
        if self.json {
            let doc = serde_json::json!({ "manifest": &self.manifest, "report": report });
            let text = serde_json::to_string_pretty(&doc)
                .map_err(|e| CliError::Numerical(format!("report is not serializable: {e}")))?;
            write(&json_path, &(text + "\n"))?;
        }
        for p in &written {
            say!("wrote {}", p.display());
        }
        Ok(())
    }
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

/// `value` with 17 significant digits.
pub fn num(value: f64) -> String {
    format!("{value:.16e}")
}

/// `t,<prefix>_11,...` rows of row-major matrix samples.
pub fn matrix_table(prefixes: &[&str], times: &[f64], mats: &[Vec<dlab::linalg::Mat>]) -> String {
    let mut out = String::from("t");
    for (p, m) in prefixes.iter().zip(mats) {
        let (r, c) = m.first().map_or((0, 0), |m| m.shape());
        for i in 1..=r {
            for j in 1..=c {
                out.push_str(&format!(",{p}_{i}{j}"));
            }
        }
    }
    out.push('\n');
    for (k, t) in times.iter().enumerate() {
        out.push_str(&num(*t));
        for m in mats {
            let m = &m[k];
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    out.push(',');
                    out.push_str(&num(m[(i, j)]));
                }
            }
        }
        out.push('\n');
    }
    out
}
