//! Checkpoint files: a UTF-8 header block, a blank line, then one tensor
//! blob per parameter in declaration order.
//!
//! ```text
//! # affect checkpoint v1
//! kind = temporal
//! task = va
//! ...config keys...
//! tensor = tcn.0.weight
//! tensor = tcn.0.bias
//!
//! <blob><blob>...
//! ```

use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use thiserror::Error;

use crate::config::{Config, ConfigError};
use crate::tensor::{read_blob, write_blob, Tensor};

pub const MAGIC: &str = "# affect checkpoint v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: not a checkpoint (missing '{MAGIC}' header)")]
    Magic { path: String },
    #[error("{path}: malformed header line '{line}'")]
    Header { path: String, line: String },
    #[error("checkpoint has no '{0}' entry")]
    MissingKey(String),
    #[error("checkpoint holds {got} tensors, model expects {expected}")]
    Count { expected: usize, got: usize },
    #[error("tensor {index}: checkpoint has '{found}' {found_shape:?}, model expects '{expected}' {expected_shape:?}")]
    Mismatch {
        index: usize,
        expected: String,
        expected_shape: Vec<usize>,
        found: String,
        found_shape: Vec<usize>,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    /// Header entries other than `tensor`, in file order.
    pub header: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(header: Vec<(String, String)>, params: &[(String, Tensor)]) -> Self {
        Checkpoint {
            header,
            tensors: params.iter().map(|(n, t)| (n.clone(), t.detach())).collect(),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.header.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str, CheckpointError> {
        self.get(key).ok_or_else(|| CheckpointError::MissingKey(key.to_string()))
    }

    /// The run configuration stored in the header, layered over defaults.
    /// Keys that are not configuration keys are skipped.
    pub fn config(&self) -> Result<Config, CheckpointError> {
        let mut cfg = Config::default();
        for (k, v) in &self.header {
            match cfg.set(k, v) {
                Ok(()) | Err(ConfigError::UnknownKey(_)) => {}
                Err(e) => return Err(e.into()),
            }
        }
        Ok(cfg)
    }

    /// Copy stored values into `params`, which must match by name, order
    /// and shape.
    pub fn load_into(&self, params: &[(String, Tensor)]) -> Result<(), CheckpointError> {
        if params.len() != self.tensors.len() {
            return Err(CheckpointError::Count {
                expected: params.len(),
                got: self.tensors.len(),
            });
        }
        for (index, ((name, p), (found, t))) in params.iter().zip(&self.tensors).enumerate() {
            if name != found || p.shape() != t.shape() {
                return Err(CheckpointError::Mismatch {
                    index,
                    expected: name.clone(),
                    expected_shape: p.shape().to_vec(),
                    found: found.clone(),
                    found_shape: t.shape().to_vec(),
                });
            }
        }
        for ((_, p), (_, t)) in params.iter().zip(&self.tensors) {
            p.set_data(t.to_vec()).expect("shapes checked above");
        }
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        writeln!(w, "{MAGIC}")?;
        for (k, v) in &self.header {
            writeln!(w, "{k} = {v}")?;
        }
        for (name, _) in &self.tensors {
            writeln!(w, "tensor = {name}")?;
        }
        writeln!(w)?;
        for (_, t) in &self.tensors {
            write_blob(w, t)?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io_err = |source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut w = BufWriter::new(fs::File::create(path).map_err(io_err)?);
        self.write_to(&mut w).map_err(io_err)?;
        w.flush().map_err(io_err)
    }

    pub fn read_from(r: &mut impl BufRead, path: &str) -> Result<Self, CheckpointError> {
        let io_err = |source| CheckpointError::Io {
            path: path.to_string(),
            source,
        };
        let mut line = String::new();
        r.read_line(&mut line).map_err(io_err)?;
        if line.trim_end() != MAGIC {
            return Err(CheckpointError::Magic { path: path.to_string() });
        }
        let mut header = Vec::new();
        let mut names = Vec::new();
        loop {
            line.clear();
            if r.read_line(&mut line).map_err(io_err)? == 0 {
                return Err(CheckpointError::Header {
                    path: path.to_string(),
                    line: "<end of file before blank line>".into(),
                });
            }
            let text = line.trim_end_matches(['\n', '\r']);
            if text.is_empty() {
                break;
            }
            let (k, v) = text.split_once('=').ok_or_else(|| CheckpointError::Header {
                path: path.to_string(),
                line: text.to_string(),
            })?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if k == "tensor" {
                names.push(v);
            } else {
                header.push((k, v));
            }
        }
        let tensors = names
            .into_iter()
            .map(|n| read_blob(r).map(|t| (n, t)).map_err(io_err))
            .collect::<Result<Vec<_>, _>>()?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(io_err)? != 0 {
            return Err(CheckpointError::Header {
                path: path.to_string(),
                line: "<trailing bytes after last tensor>".into(),
            });
        }
        Ok(Checkpoint { header, tensors })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let name = path.display().to_string();
        let file = fs::File::open(path).map_err(|source| CheckpointError::Io {
            path: name.clone(),
            source,
        })?;
        Self::read_from(&mut BufReader::new(file), &name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> Vec<(String, Tensor)> {
        vec![
            ("a.weight".into(), Tensor::param(vec![0.5, -1.25, 3.0, 0.0], &[2, 2]).unwrap()),
            ("a.bias".into(), Tensor::param(vec![0.125], &[1]).unwrap()),
        ]
    }

    #[test]
    fn round_trip_preserves_header_and_values() {
        let ck = Checkpoint::new(vec![("kind".into(), "temporal".into()), ("lr".into(), "0.001".into())], &params());
        let mut bytes = Vec::new();
        ck.write_to(&mut bytes).unwrap();
        let text_end = bytes.windows(2).position(|w| w == b"\n\n").unwrap();
        let header = std::str::from_utf8(&bytes[..text_end]).unwrap();
        assert!(header.starts_with(MAGIC));
        assert!(header.contains("tensor = a.bias"));
        let back = Checkpoint::read_from(&mut &bytes[..], "mem").unwrap();
        assert_eq!(back.get("kind"), Some("temporal"));
        assert_eq!(back.config().unwrap().optim.lr_peak, 0.001);
        let fresh = vec![
            ("a.weight".into(), Tensor::param(vec![0.0; 4], &[2, 2]).unwrap()),
            ("a.bias".into(), Tensor::param(vec![0.0], &[1]).unwrap()),
        ];
        back.load_into(&fresh).unwrap();
        assert_eq!(fresh[0].1.to_vec(), vec![0.5, -1.25, 3.0, 0.0]);
        assert_eq!(fresh[1].1.to_vec(), vec![0.125]);
    }

    #[test]
    fn shape_and_name_mismatches_are_reported() {
        let ck = Checkpoint::new(vec![], &params());
        let wrong = vec![
            ("a.weight".into(), Tensor::param(vec![0.0; 2], &[2]).unwrap()),
            ("a.bias".into(), Tensor::param(vec![0.0], &[1]).unwrap()),
        ];
        assert!(matches!(ck.load_into(&wrong), Err(CheckpointError::Mismatch { index: 0, .. })));
        assert!(matches!(ck.load_into(&wrong[..1]), Err(CheckpointError::Count { .. })));
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(matches!(
            Checkpoint::read_from(&mut &b"hello\n"[..], "x"),
            Err(CheckpointError::Magic { .. })
        ));
        let mut bytes = Vec::new();
        Checkpoint::new(vec![], &params()).write_to(&mut bytes).unwrap();
        bytes.truncate(bytes.len() - 2);
        assert!(Checkpoint::read_from(&mut &bytes[..], "x").is_err());
    }
}
