//! File formats: CSV tables, JSON-lines reports, binary checkpoints and
//! run manifests.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::filter::{ImportanceMatrix, KnockoffStats};
use crate::harness::{CurveRow, ReplicateReport};
use crate::knockoff::KnockoffTensor;
use crate::model::{build_with_l1, ArchitectureConfig, BuiltNetwork};
use crate::nn::{LayerParams, ModelState, Tensor, TrainHistory};
use crate::sim::{GenotypeMatrix, Phenotype};
use crate::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
const MAGIC: &[u8; 4] = b"HDMK";

fn create(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::Reader::from_reader(open(path)?))
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.trim().parse::<f64>().map_err(|_| Error::Parse(format!("{what}: `{s}` is not a number")))
}

// ---------------------------------------------------------------- importance

/// `variant_id,t0,…,tM`, one row per variant.
pub fn write_importance(path: &Path, t: &ImportanceMatrix) -> Result<()> {
    let mut w = create(path)?;
    let mut header = vec!["variant_id".to_string()];
    header.extend((0..=t.knockoffs()).map(|m| format!("t{m}")));
    w.write_record(&header)?;
    for (j, id) in t.ids().iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(t.row(j).iter().map(|&v| fmt(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_importance(path: &Path) -> Result<ImportanceMatrix> {
    let mut r = reader(path)?;
    let header = r.headers()?.clone();
    if header.len() < 3 || &header[0] != "variant_id" {
        return Err(Error::Parse("importance CSV needs `variant_id,t0,t1,...`".into()));
    }
    for (m, h) in header.iter().skip(1).enumerate() {
        if h != format!("t{m}") {
            return Err(Error::Parse(format!("importance column {} should be t{m}, found `{h}`", m + 1)));
        }
    }
    let knockoffs = header.len() - 2;
    let (mut ids, mut values) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Parse(format!("row for `{}` has {} fields", &rec[0], rec.len())));
        }
        ids.push(rec[0].to_string());
        for v in rec.iter().skip(1) {
            values.push(parse_f64(v, "importance")?);
        }
    }
    ImportanceMatrix::new(ids, knockoffs, values)
}

// ---------------------------------------------------------------- selection

/// `variant_id,kappa,tau,W,q,selected@α…`.
pub fn write_selection(path: &Path, ids: &[String], stats: &KnockoffStats, alphas: &[f64]) -> Result<()> {
    write_rows(path, ids, &[(None, stats)], alphas)
}

/// As [`write_selection`] with a leading `method` column, one block of
/// rows per method.
pub fn write_selection_table(
    path: &Path,
    ids: &[String],
    entries: &[(&str, &KnockoffStats)],
    alphas: &[f64],
) -> Result<()> {
    let rows: Vec<_> = entries.iter().map(|(m, s)| (Some(*m), *s)).collect();
    write_rows(path, ids, &rows, alphas)
}

fn write_rows(path: &Path, ids: &[String], entries: &[(Option<&str>, &KnockoffStats)], alphas: &[f64]) -> Result<()> {
    let with_method = entries.iter().any(|(m, _)| m.is_some());
    let mut w = create(path)?;
    let mut header: Vec<String> = Vec::new();
    if with_method {
        header.push("method".into());
    }
    header.extend(["variant_id", "kappa", "tau", "W", "q"].map(String::from));
    header.extend(alphas.iter().map(|a| format!("selected@{a:.2}")));
    w.write_record(&header)?;
    for (method, stats) in entries {
        if ids.len() != stats.w.len() {
            return Err(Error::Shape(format!("{} ids for {} statistics", ids.len(), stats.w.len())));
        }
        let selections: Vec<Vec<usize>> = alphas.iter().map(|&a| stats.select(a)).collect();
        for (j, id) in ids.iter().enumerate() {
            let mut rec: Vec<String> = method.map(|m| vec![m.to_string()]).unwrap_or_default();
            rec.extend([id.clone(), stats.kappa[j].to_string(), fmt(stats.tau[j]), fmt(stats.w[j]), fmt(stats.q[j])]);
            rec.extend(selections.iter().map(|s| u8::from(s.contains(&j)).to_string()));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- history

pub fn write_history(path: &Path, h: &TrainHistory) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["epoch", "train_loss", "val_loss", "val_metric"])?;
    let opt = |v: Option<f64>| v.map(fmt).unwrap_or_default();
    for r in &h.records {
        w.write_record([r.epoch.to_string(), fmt(r.train_loss), opt(r.val_loss), opt(r.val_metric)])?;
    }
    w.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- genotypes

/// Dosage CSV (rows = individuals, header = variant ids).
pub fn write_genotypes(path: &Path, g: &GenotypeMatrix) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(g.ids())?;
    for i in 0..g.n() {
        w.write_record((0..g.p()).map(|j| g.get(i, j).to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// `variant_id,position,maf,mac`.
pub fn write_variant_metadata(path: &Path, g: &GenotypeMatrix) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["variant_id", "position", "maf", "mac"])?;
    for j in 0..g.p() {
        w.write_record([g.ids()[j].clone(), g.positions()[j].to_string(), fmt(g.maf()[j]), g.mac()[j].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a dosage CSV plus optional metadata (positions default to 1, 2, …).
pub fn read_genotypes(path: &Path, metadata: Option<&Path>) -> Result<GenotypeMatrix> {
    let mut r = reader(path)?;
    let ids: Vec<String> = r.headers()?.iter().map(String::from).collect();
    let p = ids.len();
    let mut rows: Vec<Vec<u8>> = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != p {
            return Err(Error::Parse(format!("genotype row {} has {} fields, expected {p}", rows.len() + 1, rec.len())));
        }
        let row = rec
            .iter()
            .map(|v| match v.trim() {
                "0" => Ok(0),
                "1" => Ok(1),
                "2" => Ok(2),
                other => Err(Error::Parse(format!("dosage `{other}` is not 0, 1 or 2"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        rows.push(row);
    }
    let n = rows.len();
    let mut dosages = vec![0u8; n * p];
    for (i, row) in rows.iter().enumerate() {
        for (j, &d) in row.iter().enumerate() {
            dosages[j * n + i] = d;
        }
    }
    let positions = match metadata {
        Some(m) => {
            let mut r = reader(m)?;
            let mut pos = Vec::with_capacity(p);
            for (j, rec) in r.records().enumerate() {
                let rec = rec?;
                if j >= p || rec[0] != ids[j] {
                    return Err(Error::Parse(format!("metadata row {} does not match genotype header", j + 1)));
                }
                pos.push(rec[1].trim().parse::<u64>().map_err(|_| Error::Parse(format!("bad position `{}`", &rec[1])))?);
            }
            pos
        }
        None => (1..=p as u64).collect(),
    };
    GenotypeMatrix::new(n, ids, positions, dosages)
}

/// `sample_id,y,x1`.
pub fn write_trait(path: &Path, ph: &Phenotype) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["sample_id", "y", "x1"])?;
    for (i, (y, x)) in ph.y.iter().zip(&ph.x1).enumerate() {
        w.write_record([format!("s{i}"), fmt(*y), fmt(*x)])?;
    }
    w.flush()?;
    Ok(())
}

/// Returns (y, x1).
pub fn read_trait(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut r = reader(path)?;
    let h = r.headers()?.clone();
    if h.len() < 3 || &h[1] != "y" || &h[2] != "x1" {
        return Err(Error::Parse("trait CSV needs `sample_id,y,x1`".into()));
    }
    let (mut y, mut x1) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        y.push(parse_f64(&rec[1], "y")?);
        x1.push(parse_f64(&rec[2], "x1")?);
    }
    Ok((y, x1))
}

// ---------------------------------------------------------------- knockoffs

/// Header `id@k1 … id@kM` per variant (j-major), rows = individuals.
pub fn write_knockoffs(path: &Path, ids: &[String], k: &KnockoffTensor) -> Result<()> {
    if ids.len() != k.p() {
        return Err(Error::Shape(format!("{} ids for {} features", ids.len(), k.p())));
    }
    let mut w = create(path)?;
    let header: Vec<String> =
        ids.iter().flat_map(|id| (1..=k.m()).map(move |m| format!("{id}@k{m}"))).collect();
    w.write_record(&header)?;
    for i in 0..k.n() {
        let mut rec = Vec::with_capacity(header.len());
        for j in 0..k.p() {
            for m in 0..k.m() {
                rec.push(fmt(k.column(j, m)[i]));
            }
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a knockoff CSV written by [`write_knockoffs`]; M is inferred from
/// the header.
pub fn read_knockoffs(path: &Path, seed: u64, window: usize) -> Result<KnockoffTensor> {
    let mut r = reader(path)?;
    let header = r.headers()?.clone();
    let m = header
        .iter()
        .map(|h| h.rsplit_once("@k").and_then(|(_, k)| k.parse::<usize>().ok()))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::Parse("knockoff header entries must look like `id@kM`".into()))?
        .into_iter()
        .max()
        .unwrap_or(0);
    if m == 0 || header.len() % m != 0 {
        return Err(Error::Parse("knockoff header is not a whole number of variants".into()));
    }
    let p = header.len() / m;
    let rows: Vec<Vec<f64>> = r
        .records()
        .map(|rec| rec?.iter().map(|v| parse_f64(v, "knockoff")).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let n = rows.len();
    let mut values = vec![0.0; n * p * m];
    for (i, row) in rows.iter().enumerate() {
        if row.len() != p * m {
            return Err(Error::Parse(format!("knockoff row {} has {} fields", i + 1, row.len())));
        }
        for (c, &v) in row.iter().enumerate() {
            values[c * n + i] = v;
        }
    }
    KnockoffTensor::new(n, p, m, seed, window, values)
}

// ---------------------------------------------------------------- checkpoint

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: String,
    pub arch: ArchitectureConfig,
    pub l1: f64,
    pub seed: u64,
    /// `[weight shape, bias shape]` per layer, in file order.
    pub shapes: Vec<[Vec<usize>; 2]>,
}

/// "HDMK", a little-endian u32 header length, the JSON header, then every
/// layer's weight and bias as little-endian f64. Adam moments are not kept.
pub fn write_checkpoint(path: &Path, arch: &ArchitectureConfig, l1: f64, state: &ModelState) -> Result<()> {
    let header = CheckpointHeader {
        version: VERSION.to_string(),
        arch: arch.clone(),
        l1,
        seed: state.seed,
        shapes: state.params.iter().map(|l| [l.weight.shape().to_vec(), l.bias.shape().to_vec()]).collect(),
    };
    let json = serde_json::to_vec(&header)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for l in &state.params {
        for v in l.weight.data().iter().chain(l.bias.data()) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Loads a checkpoint and rebuilds the network it was trained on.
pub fn read_checkpoint(path: &Path) -> Result<(CheckpointHeader, BuiltNetwork, ModelState)> {
    let mut bytes = Vec::new();
    open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(Error::Parse("not a checkpoint (bad magic)".into()));
    }
    let hlen = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    let body_start = 8 + hlen;
    if bytes.len() < body_start {
        return Err(Error::Parse("truncated checkpoint header".into()));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[8..body_start])?;
    let built = build_with_l1(&header.arch, header.l1)?;
    let mut floats = bytes[body_start..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    if !(bytes.len() - body_start).is_multiple_of(8) {
        return Err(Error::Parse("checkpoint body is not a whole number of f64".into()));
    }
    let mut params = Vec::with_capacity(built.spec.layers.len());
    for (layer, [ws, bs]) in built.spec.layers.iter().zip(&header.shapes) {
        let zero = LayerParams::zeros_for(layer);
        if zero.weight.shape() != ws.as_slice() || zero.bias.shape() != bs.as_slice() {
            return Err(Error::Shape(format!("checkpoint layer {} does not match its architecture", layer.kind_name())));
        }
        let mut take = |n: usize, shape: &[usize]| -> Result<Tensor> {
            let v: Vec<f64> = floats.by_ref().take(n).collect();
            if v.len() != n {
                return Err(Error::Parse("truncated checkpoint body".into()));
            }
            Tensor::new(shape.to_vec(), v)
        };
        let weight = take(zero.weight.len(), ws)?;
        let bias = take(zero.bias.len(), bs)?;
        params.push(LayerParams { weight, bias });
    }
    if header.shapes.len() != built.spec.layers.len() || floats.next().is_some() {
        return Err(Error::Parse("checkpoint tensor count does not match its architecture".into()));
    }
    let zeros: Vec<LayerParams> = built.spec.layers.iter().map(LayerParams::zeros_for).collect();
    let state = ModelState { params, first_moment: zeros.clone(), second_moment: zeros, step: 0, seed: header.seed };
    Ok((header, built, state))
}

// ---------------------------------------------------------------- reports

/// Appends reports as JSON lines; existing content is kept.
pub fn append_reports(path: &Path, reports: &[ReplicateReport]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?);
    for r in reports {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_reports(path: &Path) -> Result<Vec<ReplicateReport>> {
    let mut out = Vec::new();
    for (k, line) in BufReader::new(open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse(format!("report line {}: {e}", k + 1)))?);
    }
    Ok(out)
}

pub fn write_curves(path: &Path, rows: &[CurveRow]) -> Result<()> {
    let mut w = create(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["method", "trait", "target_fdr", "fdr_mean", "fdr_se", "power_mean", "power_se", "n_replicates"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curves(path: &Path) -> Result<Vec<CurveRow>> {
    let mut r = reader(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

// ---------------------------------------------------------------- manifest

/// Echo of a run: resolved configuration, seed, version and outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    #[serde(default)]
    pub outputs: Vec<PathBuf>,
    #[serde(default)]
    pub failed: usize,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub extra: serde_json::Value,
}

impl Manifest {
    pub fn new<C: Serialize>(command: &str, seed: Option<u64>, config: &C) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            version: VERSION.to_string(),
            seed,
            config: serde_json::to_value(config)?,
            outputs: Vec::new(),
            failed: 0,
            extra: serde_json::Value::Null,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(open(path)?))?)
}
