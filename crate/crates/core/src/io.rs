//! Plain-text `key=value` headers and little-endian raw payloads.
//!
//! Every field file in this crate is a header next to a raw binary payload:
//!
//! ```text
//! dims=64,64,64
//! spacing=1
//! origin=0,0,0
//! dtype=float64
//! data=sdf.raw
//! ```
//!
//! The payload path in `data=` is resolved relative to the header's directory.
//! Values are stored x-fastest.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Ordered `key=value` lines. Blank lines and `#` comments are skipped.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
    source: Option<PathBuf>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str, source: Option<&Path>) -> Result<Self> {
        let mut kv = KeyValues {
            entries: Vec::new(),
            source: source.map(Path::to_path_buf),
        };
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                kv.error(format!("line {}: expected key=value, got {line:?}", lineno + 1))
            })?;
            kv.set(key.trim(), value.trim());
        }
        Ok(kv)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, Some(path))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_string()).map_err(|e| Error::io(path, e))
    }

    /// Insert or replace `key`. Replacement keeps the original position.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.get(key).is_some()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    /// Overlay `other` on top of `self`; keys in `other` win.
    pub fn merge(&mut self, other: &KeyValues) {
        for (k, v) in other.iter() {
            self.set(k, v);
        }
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| self.error(format!("missing key {key:?}")))
    }

    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| self.error(format!("cannot parse {key}={v:?}"))),
        }
    }

    pub fn require_value<T: FromStr>(&self, key: &str) -> Result<T> {
        self.parse_value(key)?
            .ok_or_else(|| self.error(format!("missing key {key:?}")))
    }

    /// Comma separated list, e.g. `dims=4,4,4`.
    pub fn parse_list<T: FromStr>(&self, key: &str) -> Result<Option<Vec<T>>> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .map(|s| s.trim().parse::<T>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(Some)
                .map_err(|_| self.error(format!("cannot parse list {key}={v:?}"))),
        }
    }

    pub fn require_list<T: FromStr>(&self, key: &str, len: usize) -> Result<Vec<T>> {
        let list = self
            .parse_list(key)?
            .ok_or_else(|| self.error(format!("missing key {key:?}")))?;
        if list.len() != len {
            return Err(self.error(format!(
                "{key} needs {len} entries, found {}",
                list.len()
            )));
        }
        Ok(list)
    }

    pub(crate) fn error(&self, msg: String) -> Error {
        match &self.source {
            Some(path) => Error::format(path, msg),
            None => Error::Invalid(msg),
        }
    }
}

impl std::fmt::Display for KeyValues {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

/// Join numbers with commas using the shortest round-trip representation.
pub fn join<T: std::fmt::Display>(values: &[T]) -> String {
    let mut out = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v}");
    }
    out
}

/// Payload element type.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    U8,
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::U8 => "uint8",
            Dtype::F32 => "float32",
            Dtype::F64 => "float64",
        }
    }
}

impl FromStr for Dtype {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        match s {
            "uint8" => Ok(Dtype::U8),
            "float32" => Ok(Dtype::F32),
            "float64" => Ok(Dtype::F64),
            _ => Err(()),
        }
    }
}

/// Resolve the `data=` entry of a header relative to the header location.
pub fn payload_path(header_path: &Path, header: &KeyValues) -> Result<PathBuf> {
    let data = header.require("data")?;
    let base = header_path.parent().unwrap_or_else(|| Path::new(""));
    Ok(base.join(data))
}

/// Default payload file name for a header: `name.hdr` -> `name.raw`.
pub fn default_payload_name(header_path: &Path) -> String {
    let stem = header_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "field".to_string());
    format!("{stem}.raw")
}

/// Read `count` values from a raw payload. Non-finite values are rejected.
pub fn read_raw(path: &Path, dtype: Dtype, count: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let expected = count * dtype.size();
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!(
                "payload has {} bytes, header requires {count} x {} = {expected}",
                bytes.len(),
                dtype.name()
            ),
        ));
    }
    let values: Vec<f64> = match dtype {
        Dtype::U8 => bytes.iter().map(|&b| f64::from(b)).collect(),
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::format(path, format!("non-finite value at index {i}")));
    }
    Ok(values)
}

pub fn write_raw(path: &Path, dtype: Dtype, values: &[f64]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * dtype.size());
    for &v in values {
        match dtype {
            Dtype::U8 => bytes.push(v.round().clamp(0.0, 255.0) as u8),
            Dtype::F32 => bytes.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64 => bytes.extend_from_slice(&v.to_le_bytes()),
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn ensure_exists(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_skips_comments_and_trims() {
        let kv = KeyValues::parse("# header\n dims = 4,4,4\n\nsigma=2.5\n", None).unwrap();
        assert_eq!(kv.get("dims"), Some("4,4,4"));
        assert_eq!(kv.require_list::<usize>("dims", 3).unwrap(), vec![4, 4, 4]);
        assert_eq!(kv.require_value::<f64>("sigma").unwrap(), 2.5);
    }

    #[test]
    fn missing_equals_is_an_error() {
        assert!(KeyValues::parse("dims 4", None).is_err());
    }

    #[test]
    fn merge_overrides_in_place() {
        let mut a = KeyValues::parse("a=1\nb=2", None).unwrap();
        let b = KeyValues::parse("b=3\nc=4", None).unwrap();
        a.merge(&b);
        assert_eq!(a.to_string(), "a=1\nb=3\nc=4\n");
    }

    #[test]
    fn raw_size_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.raw");
        write_raw(&path, Dtype::F64, &[0.0; 63]).unwrap();
        let err = read_raw(&path, Dtype::F64, 64).unwrap_err();
        assert!(err.to_string().contains("payload has 504 bytes"));
    }

    #[test]
    fn raw_rejects_nan() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.raw");
        write_raw(&path, Dtype::F32, &[0.0, f64::NAN]).unwrap();
        assert!(read_raw(&path, Dtype::F32, 2).is_err());
    }
}
