//! File formats: network and anchor-bundle JSON, dataset and path CSV,
//! run manifests.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mandel::{components_to_mandel, from_upper_triangle, upper_triangle, EulerAngles, MandelVector6};
use crate::network::Network;
use crate::train::{Dataset, Sample};
use crate::transfer::{fit_anchor_regression, AnchorSet, Descriptor};

pub const NETWORK_FORMAT_VERSION: u32 = 1;
pub const BUNDLE_FORMAT_VERSION: u32 = 1;

/// Where a network came from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: Option<u64>,
    pub train_config_hash: Option<String>,
    /// Set when the network was instantiated from an anchor bundle.
    pub anchor_descriptor: Option<Descriptor>,
}

/// On-disk form of a network. Angles are flattened `α, β, γ` per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub format_version: u32,
    pub n_layers: usize,
    pub z: Vec<f64>,
    pub angles: Vec<f64>,
    #[serde(default)]
    pub provenance: Provenance,
}

impl NetworkFile {
    pub fn new(net: &Network, provenance: Provenance) -> Self {
        Self {
            format_version: NETWORK_FORMAT_VERSION,
            n_layers: net.n_layers(),
            z: net.z().to_vec(),
            angles: net.angles().iter().flat_map(EulerAngles::as_array).collect(),
            provenance,
        }
    }

    pub fn to_network(&self) -> Result<Network> {
        if self.format_version != NETWORK_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "network format version {} is not supported (expected {NETWORK_FORMAT_VERSION})",
                self.format_version
            )));
        }
        if !self.angles.len().is_multiple_of(3) {
            return Err(Error::Format(format!(
                "angle array length {} is not a multiple of 3",
                self.angles.len()
            )));
        }
        let angles = self.angles.chunks_exact(3).map(|a| EulerAngles::new(a[0], a[1], a[2])).collect();
        Network::new(self.n_layers, self.z.clone(), angles).map_err(|e| Error::Format(e.to_string()))
    }
}

fn json_error(path: &str, e: serde_json::Error) -> Error {
    Error::Parse {
        path: path.to_string(),
        line: e.line(),
        msg: e.to_string(),
    }
}

fn context(path: &str, e: Error) -> Error {
    match e {
        Error::Format(msg) => Error::Format(format!("{path}: {msg}")),
        other => other,
    }
}

pub fn network_to_json(net: &Network, provenance: &Provenance) -> String {
    serde_json::to_string_pretty(&NetworkFile::new(net, provenance.clone())).expect("network serializes")
}

pub fn network_from_json(text: &str, path: &str) -> Result<(Network, Provenance)> {
    let file: NetworkFile = serde_json::from_str(text).map_err(|e| json_error(path, e))?;
    let net = file.to_network().map_err(|e| context(path, e))?;
    Ok((net, file.provenance))
}

pub fn save_network(path: &Path, net: &Network, provenance: &Provenance) -> Result<()> {
    std::fs::write(path, network_to_json(net, provenance))?;
    Ok(())
}

pub fn load_network(path: &Path) -> Result<(Network, Provenance)> {
    let text = std::fs::read_to_string(path)?;
    network_from_json(&text, &path.display().to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleAnchor {
    pub descriptor: Descriptor,
    pub network: NetworkFile,
}

/// The four anchors; the regression is refitted on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleFile {
    pub format_version: u32,
    pub anchors: Vec<BundleAnchor>,
}

pub fn save_bundle(path: &Path, set: &AnchorSet) -> Result<()> {
    let file = BundleFile {
        format_version: BUNDLE_FORMAT_VERSION,
        anchors: set
            .descriptors()
            .iter()
            .zip(set.networks())
            .map(|(d, n)| BundleAnchor {
                descriptor: *d,
                network: NetworkFile::new(
                    n,
                    Provenance {
                        anchor_descriptor: Some(*d),
                        ..Provenance::default()
                    },
                ),
            })
            .collect(),
    };
    std::fs::write(path, serde_json::to_string_pretty(&file)?)?;
    Ok(())
}

pub fn load_bundle(path: &Path) -> Result<AnchorSet> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path)?;
    let file: BundleFile = serde_json::from_str(&text).map_err(|e| json_error(&name, e))?;
    if file.format_version != BUNDLE_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{name}: bundle format version {} is not supported (expected {BUNDLE_FORMAT_VERSION})",
            file.format_version
        )));
    }
    let anchors = file
        .anchors
        .iter()
        .map(|a| Ok((a.descriptor, a.network.to_network().map_err(|e| context(&name, e))?)))
        .collect::<Result<Vec<_>>>()?;
    fit_anchor_regression(&anchors)
}

const DATASET_PREFIXES: [&str; 3] = ["cf", "cm", "cc"];

fn dataset_header() -> Vec<String> {
    let mut h = vec!["split".to_string()];
    for p in DATASET_PREFIXES {
        for i in 0..6 {
            for j in i..6 {
                h.push(format!("{p}_{}{}", i + 1, j + 1));
            }
        }
    }
    h
}

/// CSV with one sample per row: split (`train`/`test`) followed by the
/// upper triangles of the fiber, matrix and composite Mandel stiffnesses.
/// The teacher hash and anchor descriptor, if any, go in leading
/// `# teacher_hash=` and `# descriptor=vf,a11,a22` comments.
pub fn write_dataset<W: Write>(mut w: W, data: &Dataset, descriptor: Option<&Descriptor>) -> Result<()> {
    if let Some(h) = &data.teacher_hash {
        writeln!(w, "# teacher_hash={h}")?;
    }
    if let Some(d) = descriptor {
        writeln!(w, "# descriptor={:?},{:?},{:?}", d.vf, d.a11, d.a22)?;
    }
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(dataset_header())?;
    for (split, samples) in [("train", &data.train), ("test", &data.test)] {
        for s in samples.iter() {
            let mut row = vec![split.to_string()];
            for c in [&s.c_fiber, &s.c_matrix, &s.c_composite] {
                row.extend(upper_triangle(c).iter().map(|x| format!("{x:?}")));
            }
            csv.write_record(&row)?;
        }
    }
    csv.flush()?;
    Ok(())
}

pub fn read_dataset<R: Read>(mut r: R, path: &str) -> Result<(Dataset, Option<Descriptor>)> {
    let mut text = String::new();
    r.read_to_string(&mut text)?;
    let meta = |key: &str| {
        text.lines()
            .take_while(|l| l.starts_with('#'))
            .find_map(|l| l.trim_start_matches('#').trim().strip_prefix(key).map(str::to_string))
    };
    let teacher_hash = meta("teacher_hash=");
    let descriptor = match meta("descriptor=") {
        None => None,
        Some(v) => {
            let x = v
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .ok()
                .filter(|x| x.len() == 3)
                .ok_or_else(|| Error::Format(format!("{path}: invalid descriptor comment '{v}'")))?;
            Some(Descriptor::new(x[0], x[1], x[2]))
        }
    };
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_string(),
        line,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new().flexible(true).comment(Some(b'#')).from_reader(text.as_bytes());
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != dataset_header() {
        return Err(perr(1, "unexpected dataset header".into()));
    }
    let mut data = Dataset {
        teacher_hash,
        ..Dataset::default()
    };
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 64 {
            return Err(perr(line, format!("expected 64 fields, got {}", rec.len())));
        }
        let vals = rec
            .iter()
            .skip(1)
            .map(|s| s.parse::<f64>().map_err(|_| perr(line, format!("invalid number '{s}'"))))
            .collect::<Result<Vec<_>>>()?;
        let m = |k: usize| from_upper_triangle(&vals[21 * k..21 * (k + 1)]).map_err(|e| perr(line, e.to_string()));
        let sample = Sample::new(m(0)?, m(1)?, m(2)?);
        match &rec[0] {
            "train" => data.train.push(sample),
            "test" => data.test.push(sample),
            other => return Err(perr(line, format!("unknown split '{other}'"))),
        }
    }
    if data.train.is_empty() {
        return Err(Error::Format(format!("{path}: dataset has no training samples")));
    }
    Ok((data, descriptor))
}

pub fn save_dataset(path: &Path, data: &Dataset, descriptor: Option<&Descriptor>) -> Result<()> {
    write_dataset(BufWriter::new(File::create(path)?), data, descriptor)
}

pub fn load_dataset(path: &Path) -> Result<(Dataset, Option<Descriptor>)> {
    read_dataset(File::open(path)?, &path.display().to_string())
}

/// Reads strain increments from `step,d11,d22,d33,d12,d23,d31` rows
/// (tensor components).
pub fn read_strain_path<R: Read>(r: R, path: &str) -> Result<Vec<MandelVector6>> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_string(),
        line,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).comment(Some(b'#')).from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != ["step", "d11", "d22", "d33", "d12", "d23", "d31"] {
        return Err(perr(1, format!("expected header 'step,d11,d22,d33,d12,d23,d31', got '{}'", header.join(","))));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 7 {
            return Err(perr(line, format!("expected 7 fields, got {}", rec.len())));
        }
        let mut c = [0.0; 6];
        for (k, x) in c.iter_mut().enumerate() {
            *x = rec[k + 1]
                .parse()
                .map_err(|_| perr(line, format!("invalid number '{}'", &rec[k + 1])))?;
        }
        out.push(components_to_mandel(&c));
    }
    if out.is_empty() {
        return Err(Error::Format(format!("{path}: strain path is empty")));
    }
    Ok(out)
}

pub fn load_strain_path(path: &Path) -> Result<Vec<MandelVector6>> {
    read_strain_path(File::open(path)?, &path.display().to_string())
}

/// Hex-encoded SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputHash {
    pub path: String,
    pub sha256: String,
}

/// Record of one CLI run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub config_hash: Option<String>,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<InputHash>,
    pub seeds: Vec<u64>,
    pub wall_time_s: f64,
    pub version: String,
}

impl RunManifest {
    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(InputHash {
            path: path.display().to_string(),
            sha256: hash_file(path)?,
        });
        Ok(())
    }

    pub fn add_output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(InputHash {
            path: path.display().to_string(),
            sha256: hash_file(path)?,
        });
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}
