//! Field storage: little-endian f64 payload with a JSON sidecar, and CSV export.

use super::{DiscreteManifold, Field, ManifoldId, ManifoldSpec};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

const MAGIC: &[u8; 8] = b"BLFIELD1";

/// Contents of the sidecar file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub spec: ManifoldSpec,
    pub manifold_id: ManifoldId,
    pub len: usize,
    pub name: String,
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Write `field` to `path` (binary) and `path.json` (header).
pub fn write_field(path: &Path, m: &DiscreteManifold, name: &str, field: &Field) -> Result<()> {
    m.check(field)?;
    let mut bytes = Vec::with_capacity(16 + 8 * field.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(field.len() as u64).to_le_bytes());
    for v in field.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    let header = FieldHeader { spec: m.spec().clone(), manifold_id: m.id(), len: field.len(), name: name.to_string() };
    let text = serde_json::to_string_pretty(&header).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(sidecar(path), text)?;
    Ok(())
}

/// Read a field and its header.
pub fn read_field(path: &Path) -> Result<(FieldHeader, Vec<f64>)> {
    let text = fs::read_to_string(sidecar(path))?;
    let header: FieldHeader = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Format(format!("{} is not a field file", path.display())));
    }
    let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    if len != header.len || bytes.len() != 16 + 8 * len {
        return Err(Error::Format(format!("{}: length mismatch", path.display())));
    }
    let values = bytes[16..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header, values))
}

/// Read a field stored for manifold `m`.
pub fn load_field(path: &Path, m: &DiscreteManifold) -> Result<Field> {
    let (header, values) = read_field(path)?;
    if header.manifold_id != m.id() || header.spec != *m.spec() {
        return Err(Error::ManifoldMismatch);
    }
    m.field(values)
}

/// CSV with columns t, theta, weight and one column per field.
pub fn write_fields_csv<W: Write>(out: W, m: &DiscreteManifold, fields: &[(&str, &Field)]) -> Result<()> {
    for (_, f) in fields {
        m.check(f)?;
    }
    let mut w = csv::Writer::from_writer(out);
    let mut head = vec!["t".to_string(), "theta".to_string(), "weight".to_string()];
    head.extend(fields.iter().map(|(n, _)| n.to_string()));
    w.write_record(&head).map_err(crate::bubble_euclid::csv_err)?;
    for k in 0..m.len() {
        let p = m.node(k);
        let mut row = vec![p.t.to_string(), p.theta.to_string(), m.weights()[k].to_string()];
        row.extend(fields.iter().map(|(_, f)| f.values()[k].to_string()));
        w.write_record(&row).map_err(crate::bubble_euclid::csv_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_mismatch() {
        let dir = std::env::temp_dir().join(format!("bubblelab-io-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let m = DiscreteManifold::build(ManifoldSpec::product(1.2, 3, 16, 16)).unwrap();
        let f = m.field_fn(|p| p.t.sin() * p.theta.cos());
        let path = dir.join("f.bin");
        write_field(&path, &m, "f", &f).unwrap();
        assert_eq!(load_field(&path, &m).unwrap(), f);
        let other = DiscreteManifold::build(ManifoldSpec::product(1.3, 3, 16, 16)).unwrap();
        assert!(matches!(load_field(&path, &other), Err(Error::ManifoldMismatch)));
        fs::write(&path, b"garbage").unwrap();
        assert!(read_field(&path).is_err());
        let mut buf = Vec::new();
        write_fields_csv(&mut buf, &m, &[("f", &f)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1 + m.len());
        fs::remove_dir_all(dir).ok();
    }
}
