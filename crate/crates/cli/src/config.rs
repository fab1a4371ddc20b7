//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; blank lines and lines starting with `#` are
//! ignored. Flags given on the command line override file values. Artifact
//! paths left at their defaults live in the output directory; paths given
//! explicitly are used as written.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::CliError;

/// Every recognized key with its default (`None` means no default).
pub const KEYS: &[(&str, Option<&str>)] = &[
    ("seed", Some("0")),
    ("embeddings", Some("embeddings")),
    ("hidden", Some("hidden")),
    ("bench", Some("bench")),
    ("bench_hidden", Some("bench_hidden")),
    ("head", Some("head.ckpt")),
    ("dict", Some("dict.ckpt")),
    ("kind", Some("matryoshka_transcoder")),
    ("sizes", Some("128,256,512,1024,2048")),
    ("sparsities", Some("16,32,64,128,256")),
    ("lr", Some("1e-4")),
    ("beta1", Some("0.9")),
    ("beta2", Some("0.999")),
    ("eps", Some("1e-8")),
    ("epochs", Some("200")),
    ("batch_size", Some("256")),
    ("decoder_norm", Some("true")),
    ("dead_window", Some("100")),
    ("head_hidden", Some("256")),
    ("head_lr", Some("1e-4")),
    ("head_weight_decay", Some("0.01")),
    ("head_epochs", Some("50")),
    ("head_batch_size", Some("256")),
    ("class_weights", None),
    ("theta_rule", Some("relative:0.5")),
    ("min_support", Some("10")),
    ("include_unlabeled", Some("false")),
    ("level", None),
    ("tau", Some("0.95")),
    ("bin_width", Some("0.05")),
    ("top_n", Some("20")),
    ("image_root", Some("images")),
    ("features", None),
    ("lmm_url", None),
    ("lmm_model", None),
    ("lmm_provider", Some("anthropic")),
    ("lmm_max_tokens", Some("256")),
    ("lmm_timeout_secs", Some("120")),
    ("lmm_concurrency", Some("4")),
    ("lmm_max_attempts", Some("3")),
    ("synth_rows", Some("20000")),
    ("synth_bench_rows", Some("2000")),
    ("synth_n_true", Some("32")),
    ("synth_d_in", Some("96")),
    ("synth_d_out", Some("48")),
    ("synth_p", Some("3")),
    ("synth_sigma", Some("0.01")),
    ("synth_amp_min", Some("0.5")),
    ("synth_amp_max", Some("1.5")),
    ("synth_sources", Some("4")),
];

#[derive(Clone, Debug)]
pub struct RunConfig {
    out: PathBuf,
    values: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn new(out: PathBuf) -> Self {
        RunConfig { out, values: BTreeMap::new() }
    }

    pub fn out(&self) -> &Path {
        &self.out
    }

    pub fn load_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("{}:{}: expected key = value", path.display(), n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(CliError::Usage(format!("unknown config key {key:?}")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn set_opt<T: ToString>(&mut self, key: &str, value: Option<T>) -> Result<(), CliError> {
        match value {
            Some(v) => self.set(key, &v.to_string()),
            None => Ok(()),
        }
    }

    fn default_of(key: &str) -> Option<&'static str> {
        KEYS.iter().find(|(k, _)| *k == key).and_then(|(_, d)| *d)
    }

    pub fn is_set(&self, key: &str) -> bool {
        self.values.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str).or_else(|| Self::default_of(key))
    }

    pub fn require(&self, key: &str) -> Result<&str, CliError> {
        self.raw(key).ok_or_else(|| CliError::Usage(format!("missing config key {key:?}")))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.require(key)?;
        raw.parse().map_err(|e| CliError::Usage(format!("bad value {raw:?} for {key}: {e}")))
    }

    pub fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(_) => self.get(key).map(Some),
        }
    }

    pub fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.require(key)?;
        raw.split(',')
            .map(|s| s.trim().parse().map_err(|e| CliError::Usage(format!("bad list {raw:?} for {key}: {e}"))))
            .collect()
    }

    /// An artifact path: explicit values as written, defaults under `out`.
    pub fn path(&self, key: &str) -> Result<PathBuf, CliError> {
        match self.values.get(key) {
            Some(v) => Ok(PathBuf::from(v)),
            None => Ok(self.out.join(self.require(key)?)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("run.conf");
        std::fs::write(&p, "# comment\nepochs = 5\n\nsizes = 32, 64\n").unwrap();
        let mut c = RunConfig::new(dir.path().into());
        c.load_file(&p).unwrap();
        c.set("epochs", "7").unwrap();
        assert_eq!(c.get::<usize>("epochs").unwrap(), 7);
        assert_eq!(c.list::<usize>("sizes").unwrap(), [32, 64]);
        assert_eq!(c.get::<f64>("tau").unwrap(), 0.95);
        assert_eq!(c.path("dict").unwrap(), dir.path().join("dict.ckpt"));
        c.set("dict", "x/y.ckpt").unwrap();
        assert_eq!(c.path("dict").unwrap(), PathBuf::from("x/y.ckpt"));
        assert!(matches!(c.set("epoch", "1"), Err(CliError::Usage(_))));
        assert!(matches!(c.require("lmm_url"), Err(CliError::Usage(_))));
        assert!(matches!(c.get::<usize>("sizes"), Err(CliError::Usage(_))));
    }

    #[test]
    fn malformed_file_is_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.conf");
        std::fs::write(&p, "epochs 5\n").unwrap();
        assert!(matches!(RunConfig::new(dir.path().into()).load_file(&p), Err(CliError::Usage(_))));
    }
}
