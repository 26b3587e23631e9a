//! Binary checkpoint container.
//!
//! Layout:
//!
//! ```text
//! DANS-CKPT v1 <dim> <dim> ...\n
//! <name> <rows> <cols>\n
//! <rows * cols little-endian f64 values>
//! <name> <rows> <cols>\n
//! ...
//! ```
//!
//! Names contain no whitespace. Arrays are stored in insertion order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::micrograd::Tensor;

const MAGIC: &str = "DANS-CKPT v1";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub dims: Vec<usize>,
    arrays: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(dims: Vec<usize>) -> Self {
        Self {
            dims,
            arrays: Vec::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: &Tensor) {
        let name = name.into();
        debug_assert!(!name.contains(char::is_whitespace));
        let mut t = Tensor::from_vec(tensor.rows(), tensor.cols(), tensor.data().to_vec())
            .expect("shape preserved");
        if let Some(slot) = self.arrays.iter_mut().find(|(n, _)| *n == name) {
            std::mem::swap(&mut slot.1, &mut t);
        } else {
            self.arrays.push((name, t));
        }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Checkpoint(format!("missing array '{name}'")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.iter().map(|(n, _)| n.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC.as_bytes());
        for d in &self.dims {
            out.extend_from_slice(format!(" {d}").as_bytes());
        }
        out.push(b'\n');
        for (name, t) in &self.arrays {
            out.extend_from_slice(format!("{name} {} {}\n", t.rows(), t.cols()).as_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let header = read_line(bytes, &mut pos)?;
        let rest = header
            .strip_prefix(MAGIC)
            .ok_or_else(|| Error::Checkpoint("bad magic".into()))?;
        let dims = rest
            .split_whitespace()
            .map(|d| d.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Checkpoint(format!("bad header dims: {e}")))?;
        let mut ckpt = Checkpoint::new(dims);
        while pos < bytes.len() {
            let line = read_line(bytes, &mut pos)?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [name, rows, cols] = fields[..] else {
                return Err(Error::Checkpoint(format!("bad array header '{line}'")));
            };
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::Checkpoint(format!("bad array header '{line}'")))
            };
            let (rows, cols) = (parse(rows)?, parse(cols)?);
            let n = rows * cols;
            let end = pos + 8 * n;
            if end > bytes.len() {
                return Err(Error::Checkpoint(format!("truncated array '{name}'")));
            }
            let data = bytes[pos..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            pos = end;
            ckpt.arrays
                .push((name.to_string(), Tensor::from_vec(rows, cols, data)?));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn read_line<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    let start = *pos;
    let len = bytes[start..]
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Checkpoint("unterminated header line".into()))?;
    *pos = start + len + 1;
    std::str::from_utf8(&bytes[start..start + len])
        .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))
}
