//! Resolved run configuration for the command-line front end.
//!
//! A run starts from an optional `key=value` config file; flags given on the
//! command line are overlaid on top and win. The merged table is echoed into
//! a manifest next to every output.

use std::path::{Path, PathBuf};

use crate::classifier::{ClassifierParams, DEFAULT_BAND_VOXELS, DEFAULT_CLAMP};
use crate::error::{Error, Result};
use crate::graph::Frame;
use crate::io::{ensure_exists, join, KeyValues};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub values: KeyValues,
    pub seed: u64,
}

impl RunConfig {
    /// Config file (if any) overlaid with `overrides`.
    pub fn resolve(config: Option<&Path>, overrides: &KeyValues) -> Result<Self> {
        let mut values = match config {
            Some(path) => KeyValues::read(path)?,
            None => KeyValues::new(),
        };
        values.merge(overrides);
        let seed = values.parse_value("seed")?.unwrap_or(0);
        values.set("seed", seed);
        Ok(Self { values, seed })
    }

    /// Output path under `key`.
    pub fn path(&self, key: &str) -> Result<PathBuf> {
        self.values.require(key).map(PathBuf::from)
    }

    pub fn optional_path(&self, key: &str) -> Option<PathBuf> {
        self.values.get(key).map(PathBuf::from)
    }

    /// Input path under `key`; it must exist.
    pub fn input(&self, key: &str) -> Result<PathBuf> {
        let path = self.path(key)?;
        ensure_exists(&path)?;
        Ok(path)
    }

    pub fn optional_input(&self, key: &str) -> Result<Option<PathBuf>> {
        match self.optional_path(key) {
            Some(path) => {
                ensure_exists(&path)?;
                Ok(Some(path))
            }
            None => Ok(None),
        }
    }

    /// Classifier settings for a volume of spacing `h`: `eps` and `band` in
    /// length units, defaulting to `8h` and the narrow band.
    pub fn classifier_params(&self, h: f64) -> Result<(ClassifierParams, f64)> {
        let eps = self.values.parse_value("eps")?.unwrap_or(8.0 * h);
        let mut params = ClassifierParams::with_eps(eps, h);
        if let Some(beta) = self.values.parse_value("beta")? {
            params.beta = beta;
        }
        if let Some(n) = self.values.parse_value("quadrature_points_per_axis")? {
            params.quadrature_points_per_axis = n;
        }
        if !(params.beta > 0.0 && params.beta.is_finite()) {
            return Err(Error::Invalid(format!("beta must be positive, got {}", params.beta)));
        }
        params.validate(h)?;
        let band = self.values.parse_value("band")?.unwrap_or(DEFAULT_BAND_VOXELS * h);
        if !(band >= 0.0) {
            return Err(Error::Invalid("band must be non-negative".into()));
        }
        Ok((params, band))
    }

    pub fn clamp(&self) -> Result<(f64, f64)> {
        match self.values.parse_list::<f64>("clamp")? {
            None => Ok(DEFAULT_CLAMP),
            Some(v) if v.len() == 2 => Ok((v[0], v[1])),
            Some(_) => Err(Error::Invalid("clamp needs lo,hi".into())),
        }
    }

    /// `frame_origin` and the three rows of `frame_axes`; identity if absent.
    pub fn frame(&self) -> Result<Frame> {
        let origin = match self.values.parse_list::<f64>("frame_origin")? {
            Some(o) if o.len() == 3 => [o[0], o[1], o[2]],
            Some(_) => return Err(Error::Invalid("frame_origin needs 3 entries".into())),
            None => [0.0; 3],
        };
        match self.values.parse_list::<f64>("frame_axes")? {
            None => Frame::new(origin, Frame::identity().axes),
            Some(a) if a.len() == 9 => Frame::new(
                origin,
                [[a[0], a[1], a[2]], [a[3], a[4], a[5]], [a[6], a[7], a[8]]],
            ),
            Some(_) => Err(Error::Invalid("frame_axes needs 9 entries".into())),
        }
    }

    /// Manifest echoing the subcommand and every resolved key.
    pub fn manifest(&self, command: &str) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("command", command);
        kv.set("version", env!("CARGO_PKG_VERSION"));
        kv.merge(&self.values);
        kv
    }

    /// Record a resolved default so the manifest shows the value used.
    pub fn record(&mut self, key: &str, value: impl ToString) {
        self.values.set(key, value);
    }

    pub fn record_list<T: std::fmt::Display>(&mut self, key: &str, values: &[T]) {
        self.values.set(key, join(values));
    }
}

/// Manifest path that sits next to `out`: `out.manifest`, or
/// `out/manifest.txt` when `out` is a directory.
pub fn manifest_path(out: &Path) -> PathBuf {
    if out.is_dir() {
        out.join("manifest.txt")
    } else {
        let mut name = out.as_os_str().to_owned();
        name.push(".manifest");
        PathBuf::from(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(text: &str) -> KeyValues {
        KeyValues::parse(text, None).unwrap()
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("run.cfg");
        std::fs::write(&file, "seed=3\nlambda=0.5\nlevels=2\n").unwrap();
        let cfg = RunConfig::resolve(Some(&file), &kv("lambda=2\n")).unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.values.get("lambda"), Some("2"));
        assert_eq!(cfg.values.get("levels"), Some("2"));
    }

    #[test]
    fn missing_input_is_an_io_error() {
        let cfg = RunConfig::resolve(None, &kv("mask=/definitely/not/here.hdr")).unwrap();
        let err = cfg.input("mask").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert_eq!(cfg.path("out").unwrap_err().exit_code(), 3);
    }

    #[test]
    fn classifier_defaults_scale_with_spacing() {
        let cfg = RunConfig::resolve(None, &KeyValues::new()).unwrap();
        let (p, band) = cfg.classifier_params(0.5).unwrap();
        assert_eq!(p.eps, 4.0);
        assert_eq!(p.beta, 20.0);
        assert_eq!(band, DEFAULT_BAND_VOXELS * 0.5);
        let small = RunConfig::resolve(None, &kv("eps=0.5")).unwrap();
        assert_eq!(small.classifier_params(0.5).unwrap_err().exit_code(), 3);
    }

    #[test]
    fn frame_parses_axes_rows() {
        let cfg = RunConfig::resolve(None, &kv("frame_origin=1,2,3\nframe_axes=0,1,0,-1,0,0,0,0,1")).unwrap();
        let f = cfg.frame().unwrap();
        assert_eq!(f.origin, [1.0, 2.0, 3.0]);
        assert_eq!(f.axes[1], [-1.0, 0.0, 0.0]);
        let bad = RunConfig::resolve(None, &kv("frame_axes=1,0,0")).unwrap();
        assert!(bad.frame().is_err());
    }

    #[test]
    fn manifest_echoes_command_and_values() {
        let cfg = RunConfig::resolve(None, &kv("lambda=1.5")).unwrap();
        let m = cfg.manifest("register");
        assert_eq!(m.get("command"), Some("register"));
        assert_eq!(m.get("lambda"), Some("1.5"));
        assert_eq!(m.get("seed"), Some("0"));
    }
}
