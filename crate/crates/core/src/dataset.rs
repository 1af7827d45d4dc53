//! Measured datasets and their bit-exact persistence. Sequence files are
//! plain numeric CSV — header `t,q1..qn,qd1..qdn,tau1..taun`, 17 significant
//! digits, LF endings — so a write/read round trip preserves every f64 bit
//! and artifact checksums are meaningful.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::CleanSequence;
use crate::util::{randn, stream_rng};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub q_std: f64,
    pub qd_std: f64,
    pub tau_std: f64,
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("q_std", self.q_std), ("qd_std", self.qd_std), ("tau_std", self.tau_std)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("noise {name} must be finite and ≥ 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// One measured run: uniform timestamps, row-major t × nq channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub nq: usize,
    pub dt: f64,
    pub t: Vec<f64>,
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
    pub tau: Vec<f64>,
}

impl Sequence {
    pub fn t_len(&self) -> usize {
        self.t.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.t.len();
        if n < 2 || self.nq == 0 {
            return Err(Error::Config("sequence needs ≥ 2 rows and ≥ 1 joint".into()));
        }
        for (arr, context) in [(&self.q, "q"), (&self.qd, "qd"), (&self.tau, "tau")] {
            if arr.len() != n * self.nq {
                return Err(Error::Shape {
                    expected: n * self.nq,
                    got: arr.len(),
                    context: "sequence channel length",
                });
            }
            if !arr.iter().all(|v| v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite value in {context}")));
            }
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config(format!("sample step must be positive, got {}", self.dt)));
        }
        for i in 1..n {
            let step = self.t[i] - self.t[i - 1];
            if (step - self.dt).abs() > 1e-9 * self.dt.max(1.0) {
                return Err(Error::Config(format!(
                    "timestamps not uniform: step {} at row {i}, expected {}",
                    step, self.dt
                )));
            }
        }
        Ok(())
    }
}

/// Everything identification consumes: training runs, a held-out validation
/// run, and the provenance metadata the manifest records.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub plant_id: String,
    pub seed: u64,
    pub noise: NoiseConfig,
    pub train: Vec<Sequence>,
    pub validation: Vec<Sequence>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let mut nq = None;
        for seq in self.train.iter().chain(&self.validation) {
            seq.validate()?;
            if *nq.get_or_insert(seq.nq) != seq.nq {
                return Err(Error::Shape {
                    expected: nq.unwrap(),
                    got: seq.nq,
                    context: "joint count consistent across sequences",
                });
            }
        }
        Ok(())
    }
}

/// Corrupt a clean simulation record with i.i.d. Gaussian measurement noise.
/// Draws are consumed row by row as (q₁..q_n, q̇₁..q̇_n, τ₁..τ_n), so a given
/// seed always produces the same measured sequence.
pub fn measure(clean: &CleanSequence, noise: &NoiseConfig, seed: u64) -> Result<Sequence> {
    noise.validate()?;
    let mut rng = stream_rng(seed, 17);
    let nq = clean.nq;
    let mut seq = Sequence {
        nq,
        dt: clean.dt,
        t: clean.t.clone(),
        q: clean.q.clone(),
        qd: clean.qd.clone(),
        tau: clean.tau_m.clone(),
    };
    for i in 0..clean.t_len() {
        for j in 0..nq {
            seq.q[i * nq + j] += noise.q_std * randn(&mut rng);
        }
        for j in 0..nq {
            seq.qd[i * nq + j] += noise.qd_std * randn(&mut rng);
        }
        for j in 0..nq {
            seq.tau[i * nq + j] += noise.tau_std * randn(&mut rng);
        }
    }
    Ok(seq)
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), reason: reason.into() }
}

pub fn write_sequence_csv(path: &Path, seq: &Sequence) -> Result<()> {
    seq.validate()?;
    let mut w = BufWriter::new(fs::File::create(path)?);
    let mut header = String::from("t");
    for ch in ["q", "qd", "tau"] {
        for j in 1..=seq.nq {
            header.push_str(&format!(",{ch}{j}"));
        }
    }
    writeln!(w, "{header}")?;
    for i in 0..seq.t_len() {
        write!(w, "{:.16e}", seq.t[i])?;
        for arr in [&seq.q, &seq.qd, &seq.tau] {
            for j in 0..seq.nq {
                write!(w, ",{:.16e}", arr[i * seq.nq + j])?;
            }
        }
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sequence_csv(path: &Path) -> Result<Sequence> {
    let file = fs::File::open(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact(path.to_path_buf())
        } else {
            Error::Io(e)
        }
    })?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| format_err(path, "empty file"))??;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || (cols.len() - 1) % 3 != 0 || cols[0] != "t" {
        return Err(format_err(path, format!("unrecognized header `{header}`")));
    }
    let nq = (cols.len() - 1) / 3;
    for (j, ch) in (0..3).flat_map(|c| (1..=nq).map(move |j| (j, ["q", "qd", "tau"][c]))).enumerate()
    {
        let expect = format!("{}{}", ch.1, ch.0);
        if cols[1 + j] != expect {
            return Err(format_err(path, format!("column {} is `{}`, expected `{expect}`", 1 + j, cols[1 + j])));
        }
    }
    let mut seq = Sequence { nq, dt: 0.0, t: vec![], q: vec![], qd: vec![], tau: vec![] };
    for (row, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let mut next = |what: &str| -> Result<f64> {
            fields
                .next()
                .ok_or_else(|| format_err(path, format!("row {}: missing {what}", row + 2)))?
                .parse::<f64>()
                .map_err(|e| format_err(path, format!("row {}: bad {what}: {e}", row + 2)))
        };
        seq.t.push(next("t")?);
        for j in 0..nq {
            let v = next(&format!("q{}", j + 1))?;
            seq.q.push(v);
        }
        for j in 0..nq {
            let v = next(&format!("qd{}", j + 1))?;
            seq.qd.push(v);
        }
        for j in 0..nq {
            let v = next(&format!("tau{}", j + 1))?;
            seq.tau.push(v);
        }
        if fields.next().is_some() {
            return Err(format_err(path, format!("row {}: too many fields", row + 2)));
        }
    }
    if seq.t.len() < 2 {
        return Err(format_err(path, "fewer than two data rows"));
    }
    seq.dt = seq.t[1] - seq.t[0];
    seq.validate()?;
    Ok(seq)
}

/// Provenance record written next to every dataset: enough to re-run the
/// synthesis bit-identically and to verify artifacts came from one config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub tool_version: String,
    pub config_hash: String,
    pub plant_id: String,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub noise: NoiseConfig,
    pub dt: f64,
    pub train: Vec<String>,
    pub validation: Vec<String>,
}

pub const MANIFEST_NAME: &str = "manifest.toml";

pub fn write_manifest(dir: &Path, manifest: &DatasetManifest) -> Result<()> {
    let text = toml::to_string_pretty(manifest)
        .map_err(|e| Error::Config(format!("manifest serialization failed: {e}")))?;
    fs::write(dir.join(MANIFEST_NAME), text)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingArtifact(path.clone())
        } else {
            Error::Io(e)
        }
    })?;
    toml::from_str(&text).map_err(|e| format_err(&path, e.to_string()))
}

/// Write all sequences plus the manifest into `dir` (created if needed).
/// `seeds` are the per-sequence seeds the caller drew, recorded verbatim.
pub fn save_dataset(
    dir: &Path,
    set: &Dataset,
    seeds: &[u64],
    config_hash: &str,
    tool_version: &str,
) -> Result<DatasetManifest> {
    set.validate()?;
    fs::create_dir_all(dir)?;
    let name = |split: &str, i: usize| format!("{split}_{i:02}.csv");
    let mut manifest = DatasetManifest {
        tool_version: tool_version.into(),
        config_hash: config_hash.into(),
        plant_id: set.plant_id.clone(),
        seed: set.seed,
        seeds: seeds.to_vec(),
        noise: set.noise,
        dt: set.train.first().or(set.validation.first()).map_or(0.0, |s| s.dt),
        train: vec![],
        validation: vec![],
    };
    for (i, seq) in set.train.iter().enumerate() {
        let file = name("train", i);
        write_sequence_csv(&dir.join(&file), seq)?;
        manifest.train.push(file);
    }
    for (i, seq) in set.validation.iter().enumerate() {
        let file = name("validation", i);
        write_sequence_csv(&dir.join(&file), seq)?;
        manifest.validation.push(file);
    }
    write_manifest(dir, &manifest)?;
    Ok(manifest)
}

pub fn load_dataset(dir: &Path) -> Result<(Dataset, DatasetManifest)> {
    let manifest = read_manifest(dir)?;
    let read_split = |files: &[String]| -> Result<Vec<Sequence>> {
        files.iter().map(|f| read_sequence_csv(&dir.join(f))).collect()
    };
    let set = Dataset {
        plant_id: manifest.plant_id.clone(),
        seed: manifest.seed,
        noise: manifest.noise,
        train: read_split(&manifest.train)?,
        validation: read_split(&manifest.validation)?,
    };
    set.validate()?;
    Ok((set, manifest))
}
