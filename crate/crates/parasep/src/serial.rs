//! Persistence for models and bases.
//!
//! A saved model is a directory: a JSON manifest describing the layout, the
//! selections and the collocation matrix, plus one binary file per snapshot.
//! Floating-point values in JSON are written by serde_json in the shortest
//! form that parses back to the same bits, and the binary payloads store raw
//! little-endian doubles, so a reload reproduces the model exactly. Function
//! entries are stored by registry name and resolved on load; a name outside
//! the registry is an error rather than a guess.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::layout::{builtin_kernel, builtin_scalar, RowMeta, TermBlock, TermLayout};
use crate::linalg::DMat;
use crate::model::{ModelError, Payload, SnapshotModel};
use crate::rb::{GreedyStop, ReducedBasis};
use crate::scalar::{FieldTag, Scalar};

const PAYLOAD_MAGIC: &[u8; 8] = b"PSEPBIN1";
const MODEL_FORMAT: &str = "parasep-model/1";
const BASIS_FORMAT: &str = "parasep-basis/1";

#[derive(Debug)]
pub enum SerialError {
    Io(std::io::Error),
    Json(serde_json::Error),
    Model(ModelError),
    Format(String),
    UnknownFunction(String),
    FieldMismatch { expect: &'static str, got: String },
}

impl std::fmt::Display for SerialError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SerialError::Io(e) => write!(f, "io error: {e}"),
            SerialError::Json(e) => write!(f, "manifest error: {e}"),
            SerialError::Model(e) => write!(f, "{e}"),
            SerialError::Format(msg) => write!(f, "bad stored data: {msg}"),
            SerialError::UnknownFunction(name) => {
                write!(f, "function {name:?} is not in the registry")
            }
            SerialError::FieldMismatch { expect, got } => {
                write!(f, "stored field is {got:?}, loader expects {expect:?}")
            }
        }
    }
}

impl std::error::Error for SerialError {}

impl From<std::io::Error> for SerialError {
    fn from(e: std::io::Error) -> Self {
        SerialError::Io(e)
    }
}

impl From<serde_json::Error> for SerialError {
    fn from(e: serde_json::Error) -> Self {
        SerialError::Json(e)
    }
}

impl From<ModelError> for SerialError {
    fn from(e: ModelError) -> Self {
        SerialError::Model(e)
    }
}

fn check_field<T: Scalar>(got: &str) -> Result<(), SerialError> {
    if got != T::FIELD.name() {
        return Err(SerialError::FieldMismatch {
            expect: T::FIELD.name(),
            got: got.to_string(),
        });
    }
    Ok(())
}

/// Scalars flattened to raw doubles: one per value for the real field, an
/// interleaved real/imaginary pair for the complex field.
fn flatten<T: Scalar>(values: &[T]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len() * T::FIELD.components());
    for v in values {
        out.push(v.re());
        if T::FIELD == FieldTag::Complex {
            out.push(v.im());
        }
    }
    out
}

fn unflatten<T: Scalar>(data: &[f64], count: usize) -> Result<Vec<T>, SerialError> {
    let comps = T::FIELD.components();
    if data.len() != count * comps {
        return Err(SerialError::Format(format!(
            "expected {} raw values, found {}",
            count * comps,
            data.len()
        )));
    }
    let mut out = Vec::with_capacity(count);
    for chunk in data.chunks_exact(comps) {
        let im = if comps == 2 { chunk[1] } else { 0.0 };
        let v = T::from_parts(chunk[0], im).ok_or_else(|| {
            SerialError::Format("complex value stored for a real field".into())
        })?;
        out.push(v);
    }
    Ok(out)
}

/// Matrix embedded in JSON. Row-major, complex values interleaved.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixJson {
    pub rows: usize,
    pub cols: usize,
    pub field: String,
    pub data: Vec<f64>,
}

impl MatrixJson {
    pub fn from_mat<T: Scalar>(m: &DMat<T>) -> Self {
        MatrixJson {
            rows: m.rows(),
            cols: m.cols(),
            field: T::FIELD.name().to_string(),
            data: flatten(m.data()),
        }
    }

    pub fn to_mat<T: Scalar>(&self) -> Result<DMat<T>, SerialError> {
        check_field::<T>(&self.field)?;
        let values = unflatten::<T>(&self.data, self.rows * self.cols)?;
        Ok(DMat::from_flat(self.rows, self.cols, values))
    }
}

fn kind_byte<T>(p: &Payload<T>) -> u8 {
    match p {
        Payload::Matrix(_) => 0,
        Payload::Vector(_) => 1,
    }
}

/// Write one payload in the binary container: an eight-byte magic, a field
/// byte, a kind byte, two little-endian u64 dimensions, then the raw
/// little-endian doubles.
pub fn write_payload<T: Scalar, W: Write>(w: &mut W, p: &Payload<T>) -> Result<(), SerialError> {
    w.write_all(PAYLOAD_MAGIC)?;
    w.write_all(&[T::FIELD as u8, kind_byte(p)])?;
    let (rows, cols, values): (u64, u64, &[T]) = match p {
        Payload::Matrix(m) => (m.rows() as u64, m.cols() as u64, m.data()),
        Payload::Vector(v) => (v.len() as u64, 1, v),
    };
    w.write_all(&rows.to_le_bytes())?;
    w.write_all(&cols.to_le_bytes())?;
    let mut buf = Vec::with_capacity(values.len() * T::FIELD.components() * 8);
    for raw in flatten(values) {
        buf.extend_from_slice(&raw.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_payload<T: Scalar, R: Read>(r: &mut R) -> Result<Payload<T>, SerialError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != PAYLOAD_MAGIC {
        return Err(SerialError::Format("payload magic mismatch".into()));
    }
    let mut head = [0u8; 2];
    r.read_exact(&mut head)?;
    let field = match head[0] {
        0 => FieldTag::Real,
        1 => FieldTag::Complex,
        other => {
            return Err(SerialError::Format(format!("unknown field byte {other}")));
        }
    };
    if field != T::FIELD {
        return Err(SerialError::FieldMismatch {
            expect: T::FIELD.name(),
            got: field.name().to_string(),
        });
    }
    let kind = head[1];
    let mut dims = [0u8; 16];
    r.read_exact(&mut dims)?;
    let rows = u64::from_le_bytes(dims[..8].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(dims[8..].try_into().unwrap()) as usize;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| SerialError::Format("payload dimensions overflow".into()))?;
    let n_raw = count * T::FIELD.components();
    let mut buf = vec![0u8; n_raw * 8];
    r.read_exact(&mut buf)?;
    let mut raw = Vec::with_capacity(n_raw);
    for chunk in buf.chunks_exact(8) {
        raw.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    let values = unflatten::<T>(&raw, count)?;
    match kind {
        0 => Ok(Payload::Matrix(DMat::from_flat(rows, cols, values))),
        1 => {
            if cols != 1 {
                return Err(SerialError::Format(format!(
                    "vector payload with {cols} columns"
                )));
            }
            Ok(Payload::Vector(values))
        }
        other => Err(SerialError::Format(format!("unknown kind byte {other}"))),
    }
}

pub fn write_payload_file<T: Scalar>(path: &Path, p: &Payload<T>) -> Result<(), SerialError> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    write_payload(&mut f, p)?;
    f.flush()?;
    Ok(())
}

pub fn read_payload_file<T: Scalar>(path: &Path) -> Result<Payload<T>, SerialError> {
    let mut f = std::io::BufReader::new(fs::File::open(path)?);
    read_payload(&mut f)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BlockManifest {
    kernel: String,
    weights: Vec<String>,
    mu_sel: Vec<f64>,
    magic_points: Vec<f64>,
    b: MatrixJson,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelManifest {
    format: String,
    field: String,
    dim: usize,
    provider_calls: usize,
    blocks: Vec<BlockManifest>,
    psis: Vec<String>,
    p_sel: Vec<usize>,
    meta_sel: Vec<RowMeta>,
    mu_sel: Vec<f64>,
    z: MatrixJson,
    payloads: Vec<String>,
}

/// Save a model into `dir` (created if missing): `model.json` plus one
/// binary payload file per snapshot.
pub fn save_model<T: Scalar>(model: &SnapshotModel<T>, dir: &Path) -> Result<(), SerialError> {
    fs::create_dir_all(dir)?;
    let mut payloads = Vec::with_capacity(model.terms());
    for (i, snap) in model.snapshots().iter().enumerate() {
        let name = format!("snapshot_{i:03}.bin");
        write_payload_file(&dir.join(&name), snap)?;
        payloads.push(name);
    }
    let layout = model.layout();
    let blocks = layout
        .blocks()
        .iter()
        .map(|b| BlockManifest {
            kernel: b.kernel().name().to_string(),
            weights: b.weights().iter().map(|w| w.name().to_string()).collect(),
            mu_sel: b.mu_sel().to_vec(),
            magic_points: b.magic_points().to_vec(),
            b: MatrixJson::from_mat(b.b()),
        })
        .collect();
    let manifest = ModelManifest {
        format: MODEL_FORMAT.to_string(),
        field: T::FIELD.name().to_string(),
        dim: model.dim(),
        provider_calls: model.provider_calls(),
        blocks,
        psis: layout.psis().iter().map(|p| p.name().to_string()).collect(),
        p_sel: model.p_sel().to_vec(),
        meta_sel: model.meta_sel().to_vec(),
        mu_sel: model.mu_sel().to_vec(),
        z: MatrixJson::from_mat(model.z()),
        payloads,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join("model.json"), json)?;
    Ok(())
}

/// Load a model saved by [`save_model`]. Function names are resolved from
/// the registry; the collocation matrix is refactored from its stored bits.
pub fn load_model<T: Scalar>(dir: &Path) -> Result<SnapshotModel<T>, SerialError> {
    let manifest: ModelManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("model.json"))?)?;
    if manifest.format != MODEL_FORMAT {
        return Err(SerialError::Format(format!(
            "manifest format {:?}, expected {MODEL_FORMAT:?}",
            manifest.format
        )));
    }
    check_field::<T>(&manifest.field)?;
    let mut blocks = Vec::with_capacity(manifest.blocks.len());
    for bm in &manifest.blocks {
        let kernel = builtin_kernel::<T>(&bm.kernel)
            .ok_or_else(|| SerialError::UnknownFunction(bm.kernel.clone()))?;
        let mut weights = Vec::with_capacity(bm.weights.len());
        for w in &bm.weights {
            weights.push(
                builtin_scalar::<T>(w).ok_or_else(|| SerialError::UnknownFunction(w.clone()))?,
            );
        }
        blocks.push(TermBlock::new(
            bm.b.to_mat()?,
            bm.magic_points.clone(),
            bm.mu_sel.clone(),
            kernel,
            weights,
        ));
    }
    let mut psis = Vec::with_capacity(manifest.psis.len());
    for p in &manifest.psis {
        psis.push(builtin_scalar::<T>(p).ok_or_else(|| SerialError::UnknownFunction(p.clone()))?);
    }
    let layout = Arc::new(
        TermLayout::new(blocks, psis)
            .map_err(|e| SerialError::Format(format!("stored layout is invalid: {e}")))?,
    );
    let mut snapshots = Vec::with_capacity(manifest.payloads.len());
    for name in &manifest.payloads {
        snapshots.push(read_payload_file::<T>(&dir.join(name))?);
    }
    let model = SnapshotModel::from_parts(
        layout,
        manifest.p_sel,
        manifest.meta_sel,
        manifest.mu_sel,
        manifest.z.to_mat()?,
        snapshots,
        manifest.dim,
        manifest.provider_calls,
    )?;
    Ok(model)
}

fn stop_name(stop: GreedyStop) -> &'static str {
    match stop {
        GreedyStop::MaxTerms => "max_terms",
        GreedyStop::Tolerance => "tolerance",
        GreedyStop::DependentSnapshot => "dependent_snapshot",
    }
}

fn stop_from_name(name: &str) -> Result<GreedyStop, SerialError> {
    match name {
        "max_terms" => Ok(GreedyStop::MaxTerms),
        "tolerance" => Ok(GreedyStop::Tolerance),
        "dependent_snapshot" => Ok(GreedyStop::DependentSnapshot),
        other => Err(SerialError::Format(format!("unknown stop reason {other:?}"))),
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BasisManifest {
    format: String,
    field: String,
    mu_rb: Vec<f64>,
    max_err_path: Vec<f64>,
    stop: String,
    u: String,
}

pub fn save_basis<T: Scalar>(basis: &ReducedBasis<T>, dir: &Path) -> Result<(), SerialError> {
    fs::create_dir_all(dir)?;
    let u_name = "basis_u.bin";
    write_payload_file(&dir.join(u_name), &Payload::Matrix(basis.u().clone()))?;
    let manifest = BasisManifest {
        format: BASIS_FORMAT.to_string(),
        field: T::FIELD.name().to_string(),
        mu_rb: basis.mu_rb().to_vec(),
        max_err_path: basis.max_err_path().to_vec(),
        stop: stop_name(basis.stop()).to_string(),
        u: u_name.to_string(),
    };
    fs::write(
        dir.join("basis.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

pub fn load_basis<T: Scalar>(dir: &Path) -> Result<ReducedBasis<T>, SerialError> {
    let manifest: BasisManifest =
        serde_json::from_str(&fs::read_to_string(dir.join("basis.json"))?)?;
    if manifest.format != BASIS_FORMAT {
        return Err(SerialError::Format(format!(
            "manifest format {:?}, expected {BASIS_FORMAT:?}",
            manifest.format
        )));
    }
    check_field::<T>(&manifest.field)?;
    let u = match read_payload_file::<T>(&dir.join(&manifest.u))? {
        Payload::Matrix(m) => m,
        Payload::Vector(_) => {
            return Err(SerialError::Format("basis payload is not a matrix".into()));
        }
    };
    if u.cols() != manifest.mu_rb.len() {
        return Err(SerialError::Format(format!(
            "basis has {} columns but {} parameters",
            u.cols(),
            manifest.mu_rb.len()
        )));
    }
    Ok(ReducedBasis::from_parts(
        u,
        manifest.mu_rb,
        manifest.max_err_path,
        stop_from_name(&manifest.stop)?,
    ))
}
