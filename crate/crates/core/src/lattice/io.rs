//! JSON and binary lattice files.
//!
//! JSON: `{"graph_size", "vocab_size", "hidden_dim", "log_transition",
//! "log_emission", "hidden_states"?}`, row-major nested arrays, `null` for
//! `-inf`, 0-based vertex order.
//!
//! Binary: `b"DALT"`, `u32` version (1), `u32` graph_size, vocab_size,
//! hidden_dim, then the transition, emission and (when hidden_dim > 0) hidden
//! state blocks as row-major `f64`. All integers and floats little-endian.

use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::DagLattice;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DALT";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatticeFormat {
    Json,
    Binary,
}

impl LatticeFormat {
    /// `.json` files are JSON, everything else binary.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => LatticeFormat::Json,
            _ => LatticeFormat::Binary,
        }
    }
}

impl FromStr for LatticeFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(LatticeFormat::Json),
            "binary" | "bin" => Ok(LatticeFormat::Binary),
            other => Err(Error::InvalidArgument(format!("unknown lattice format {other:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonLattice {
    graph_size: usize,
    vocab_size: usize,
    hidden_dim: usize,
    log_transition: Vec<Vec<Option<f64>>>,
    log_emission: Vec<Vec<Option<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hidden_states: Option<Vec<Vec<f64>>>,
}

fn log_matrix_to_json(field: &str, m: &Array2<f64>) -> Result<Vec<Vec<Option<f64>>>> {
    m.rows()
        .into_iter()
        .enumerate()
        .map(|(r, row)| {
            row.iter()
                .enumerate()
                .map(|(c, &x)| {
                    if x == f64::NEG_INFINITY {
                        Ok(None)
                    } else if x.is_finite() {
                        Ok(Some(x))
                    } else {
                        Err(Error::InvalidArgument(format!(
                            "{field}[{r}][{c}] = {x} has no JSON encoding"
                        )))
                    }
                })
                .collect()
        })
        .collect()
}

fn json_to_matrix<T: Copy>(
    field: &str,
    rows: Vec<Vec<T>>,
    expected_rows: usize,
    expected_cols: usize,
    map: impl Fn(T) -> f64,
) -> Result<Array2<f64>> {
    if rows.len() != expected_rows {
        return Err(Error::dimension(format!("{field} rows"), expected_rows, rows.len()));
    }
    let mut out = Array2::zeros((expected_rows, expected_cols));
    for (r, row) in rows.into_iter().enumerate() {
        if row.len() != expected_cols {
            return Err(Error::dimension(
                format!("{field}[{r}] length"),
                expected_cols,
                row.len(),
            ));
        }
        for (c, x) in row.into_iter().enumerate() {
            out[[r, c]] = map(x);
        }
    }
    Ok(out)
}

fn to_json(lattice: &DagLattice) -> Result<Vec<u8>> {
    let doc = JsonLattice {
        graph_size: lattice.graph_size(),
        vocab_size: lattice.vocab_size(),
        hidden_dim: lattice.hidden_dim(),
        log_transition: log_matrix_to_json("log_transition", lattice.log_transition())?,
        log_emission: log_matrix_to_json("log_emission", lattice.log_emission())?,
        hidden_states: lattice
            .hidden_states()
            .map(|h| h.rows().into_iter().map(|r| r.to_vec()).collect()),
    };
    serde_json::to_vec(&doc).map_err(|e| Error::InvalidArgument(e.to_string()))
}

fn from_json(bytes: &[u8]) -> Result<DagLattice> {
    let doc: JsonLattice = serde_json::from_slice(bytes)
        .map_err(|e| Error::parse(format!("line {} column {}", e.line(), e.column()), e.to_string()))?;
    let size = doc.graph_size;
    let to_log = |x: Option<f64>| x.unwrap_or(f64::NEG_INFINITY);
    let log_transition = json_to_matrix("log_transition", doc.log_transition, size, size, to_log)?;
    let log_emission = json_to_matrix("log_emission", doc.log_emission, size, doc.vocab_size, to_log)?;
    let hidden_states = match (doc.hidden_dim, doc.hidden_states) {
        (0, None) => None,
        (0, Some(rows)) if rows.iter().all(Vec::is_empty) => None,
        (d, Some(rows)) => Some(json_to_matrix("hidden_states", rows, size, d, |x| x)?),
        (d, None) => {
            return Err(Error::dimension(
                "hidden_states",
                format!("{size}x{d} matrix"),
                "absent",
            ))
        }
    };
    DagLattice::new(log_transition, log_emission, hidden_states)
}

/// Serializes a lattice to the binary format.
pub fn to_bytes(lattice: &DagLattice) -> Vec<u8> {
    let (l, v, d) = (lattice.graph_size(), lattice.vocab_size(), lattice.hidden_dim());
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * (l * l + l * v + l * d));
    out.extend_from_slice(MAGIC);
    for word in [VERSION, l as u32, v as u32, d as u32] {
        out.extend_from_slice(&word.to_le_bytes());
    }
    let mut push = |m: &Array2<f64>| {
        for x in m.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    };
    push(lattice.log_transition());
    push(lattice.log_emission());
    if let Some(h) = lattice.hidden_states() {
        push(h);
    }
    out
}

fn from_binary(bytes: &[u8]) -> Result<DagLattice> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::parse(
            format!("offset {}", bytes.len()),
            format!("file too short for header ({} < {HEADER_LEN} bytes)", bytes.len()),
        ));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::parse(
            "offset 0",
            format!("bad magic {:?}, expected \"DALT\"", &bytes[..4]),
        ));
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let version = word(4) as u32;
    if version != VERSION {
        return Err(Error::parse("offset 4", format!("unsupported version {version}")));
    }
    let (l, v, d) = (word(8), word(12), word(16));
    if l == 0 {
        return Err(Error::dimension("graph_size", ">= 1", 0));
    }
    if v == 0 {
        return Err(Error::dimension("vocab_size", ">= 1", 0));
    }
    let floats = l
        .checked_mul(l)
        .and_then(|t| l.checked_mul(v).and_then(|e| t.checked_add(e)))
        .and_then(|n| l.checked_mul(d).and_then(|h| n.checked_add(h)))
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::parse("offset 8", "header dimensions overflow"))?;
    let expected_len = HEADER_LEN + floats;
    if bytes.len() != expected_len {
        return Err(Error::parse(
            format!("offset {}", bytes.len().min(expected_len)),
            format!(
                "expected {expected_len} bytes for {l}x{l}, {l}x{v}, {l}x{d} blocks, found {}",
                bytes.len()
            ),
        ));
    }

    let mut cursor = HEADER_LEN;
    let mut block = |rows: usize, cols: usize| {
        let values = bytes[cursor..cursor + 8 * rows * cols]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        cursor += 8 * rows * cols;
        Array2::from_shape_vec((rows, cols), values).expect("block length checked")
    };
    let log_transition = block(l, l);
    let log_emission = block(l, v);
    let hidden_states = (d > 0).then(|| block(l, d));
    DagLattice::new(log_transition, log_emission, hidden_states)
}

/// Decodes a lattice held in memory.
pub fn load_bytes(bytes: &[u8], format: LatticeFormat) -> Result<DagLattice> {
    match format {
        LatticeFormat::Json => from_json(bytes),
        LatticeFormat::Binary => from_binary(bytes),
    }
}

pub fn load(path: &Path, format: LatticeFormat) -> Result<DagLattice> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })?;
    load_bytes(&bytes, format)
}

pub fn save(lattice: &DagLattice, path: &Path, format: LatticeFormat) -> Result<()> {
    let bytes = match format {
        LatticeFormat::Json => to_json(lattice)?,
        LatticeFormat::Binary => to_bytes(lattice),
    };
    std::fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}
