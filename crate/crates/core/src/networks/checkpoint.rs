//! Parameter checkpoint files.
//!
//! Layout:
//!
//! ```text
//! legan-checkpoint 1
//! <name> <dim> <dim> ...      one line per tensor
//! end
//! <f64 little-endian values of every tensor, in manifest order>
//! ```
//!
//! A scalar tensor is written with no dims after its name.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{LeganError, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

const MAGIC: &str = "legan-checkpoint 1";

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub tensor: Tensor<f64>,
}

pub fn write_checkpoint<T: Scalar>(path: &Path, tensors: &[(String, Tensor<T>)]) -> Result<()> {
    let mut bytes = Vec::new();
    let mut manifest = format!("{MAGIC}\n");
    for (name, t) in tensors {
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(LeganError::invalid(
                "write_checkpoint",
                format!("tensor name {name:?} must be non-empty without whitespace"),
            ));
        }
        manifest.push_str(name);
        for d in t.shape() {
            manifest.push_str(&format!(" {d}"));
        }
        manifest.push('\n');
        for &v in t.data() {
            bytes.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
    }
    manifest.push_str("end\n");
    let mut file = fs::File::create(path).map_err(|e| LeganError::io(path, e))?;
    file.write_all(manifest.as_bytes())
        .and_then(|_| file.write_all(&bytes))
        .map_err(|e| LeganError::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<CheckpointEntry>> {
    let raw = fs::read(path).map_err(|e| LeganError::io(path, e))?;
    let bad = |location: String, detail: &str| LeganError::Format {
        path: path.to_path_buf(),
        location,
        detail: detail.to_string(),
    };
    let mut offset = 0;
    let mut line_no = 0;
    let mut next_line = |offset: &mut usize| -> Result<String> {
        line_no += 1;
        let rest = &raw[*offset..];
        let end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| {
            bad(
                format!("line {line_no}"),
                "manifest not terminated by 'end'",
            )
        })?;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| bad(format!("line {line_no}"), "manifest is not UTF-8"))?
            .to_string();
        *offset += end + 1;
        Ok(line)
    };
    if next_line(&mut offset)? != MAGIC {
        return Err(bad("line 1".into(), "missing checkpoint header"));
    }
    let mut manifest = Vec::new();
    loop {
        let line = next_line(&mut offset)?;
        if line == "end" {
            break;
        }
        let mut parts = line.split_whitespace();
        let name = parts
            .next()
            .ok_or_else(|| {
                bad(
                    format!("line {}", manifest.len() + 2),
                    "empty manifest line",
                )
            })?
            .to_string();
        let dims = parts
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad(format!("line {}", manifest.len() + 2), "bad dimension"))?;
        manifest.push((name, dims));
    }
    let mut entries = Vec::with_capacity(manifest.len());
    for (name, dims) in manifest {
        let n = numel(&dims);
        let end = offset + 8 * n;
        if end > raw.len() {
            return Err(bad(format!("byte {offset}"), "truncated tensor data"));
        }
        let values = raw[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        offset = end;
        let tensor =
            Tensor::new(dims, values).map_err(|e| bad(format!("byte {offset}"), &e.to_string()))?;
        entries.push(CheckpointEntry { name, tensor });
    }
    if offset != raw.len() {
        return Err(bad(
            format!("byte {offset}"),
            "trailing bytes after last tensor",
        ));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_names_shapes_and_bits() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let tensors = vec![
            (
                "a.kernel".to_string(),
                Tensor::from_f64(vec![2, 1], &[0.1, -3.5]).unwrap(),
            ),
            ("s".to_string(), Tensor::scalar(std::f64::consts::PI)),
        ];
        write_checkpoint(&path, &tensors).unwrap();
        let text = fs::read(&path).unwrap();
        assert!(text.starts_with(b"legan-checkpoint 1\na.kernel 2 1\ns\nend\n"));
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].name, "a.kernel");
        assert_eq!(back[0].tensor, tensors[0].1);
        assert_eq!(back[1].tensor.item().unwrap(), std::f64::consts::PI);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let tensors = vec![("w".to_string(), Tensor::<f64>::ones(vec![3]))];
        write_checkpoint(&path, &tensors).unwrap();
        let mut raw = fs::read(&path).unwrap();
        raw.truncate(raw.len() - 4);
        fs::write(&path, raw).unwrap();
        assert!(read_checkpoint(&path).is_err());
    }
}
