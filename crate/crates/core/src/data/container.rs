//! Binary tensor container.
//!
//! Wire format, little-endian throughout:
//!
//! ```text
//! ATTRFUSE-TC v1\n
//! tensor <name> <f32|f64> <d0>x<d1>...\n     (one line per tensor)
//! end\n
//! <zero padding to the next 64-byte boundary>
//! <tensor 0 payload, row-major><zero padding to 64>
//! <tensor 1 payload>...
//! ```
//!
//! Every tensor payload starts on a 64-byte boundary measured from the
//! start of the file. Write -> read round trips are bit-exact.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::scalar::{Dtype, Scalar};
use crate::tensor::Tensor;

pub const MAGIC: &str = "ATTRFUSE-TC v1";
const ALIGN: u64 = 64;

/// A tensor as stored on disk, tagged by element type.
#[derive(Debug, Clone, PartialEq)]
pub enum ContainerTensor {
    F32 { shape: Vec<usize>, data: Vec<f32> },
    F64 { shape: Vec<usize>, data: Vec<f64> },
}

impl ContainerTensor {
    pub fn dtype(&self) -> Dtype {
        match self {
            ContainerTensor::F32 { .. } => Dtype::F32,
            ContainerTensor::F64 { .. } => Dtype::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            ContainerTensor::F32 { shape, .. } => shape,
            ContainerTensor::F64 { shape, .. } => shape,
        }
    }

    pub fn element_count(&self) -> usize {
        self.shape().iter().product()
    }

    pub fn byte_len(&self) -> usize {
        self.element_count() * self.dtype().size_bytes()
    }

    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Self {
        match T::DTYPE {
            Dtype::F32 => ContainerTensor::F32 {
                shape: t.shape().to_vec(),
                data: t.data().iter().map(|v| v.to_f64_lossy() as f32).collect(),
            },
            Dtype::F64 => ContainerTensor::F64 {
                shape: t.shape().to_vec(),
                data: t.data().iter().map(|v| v.to_f64_lossy()).collect(),
            },
        }
    }

    /// Convert to an in-memory tensor, widening or narrowing as needed.
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        match self {
            ContainerTensor::F32 { shape, data } => Tensor::new(
                shape.clone(),
                data.iter().map(|&v| T::cast(f64::from(v))).collect(),
            ),
            ContainerTensor::F64 { shape, data } => {
                Tensor::new(shape.clone(), data.iter().map(|&v| T::cast(v)).collect())
            }
        }
    }

    fn write_payload(&self, out: &mut Vec<u8>) {
        match self {
            ContainerTensor::F32 { data, .. } => {
                for v in data {
                    v.write_le(out);
                }
            }
            ContainerTensor::F64 { data, .. } => {
                for v in data {
                    v.write_le(out);
                }
            }
        }
    }

    fn read_payload(dtype: Dtype, shape: Vec<usize>, bytes: &[u8]) -> Self {
        match dtype {
            Dtype::F32 => ContainerTensor::F32 {
                shape,
                data: bytes.chunks_exact(4).map(f32::read_le).collect(),
            },
            Dtype::F64 => ContainerTensor::F64 {
                shape,
                data: bytes.chunks_exact(8).map(f64::read_le).collect(),
            },
        }
    }
}

fn validate_name(name: &str) -> Result<()> {
    if name.is_empty() || name.chars().any(|c| c.is_whitespace() || c.is_control()) {
        return Err(Error::Format(format!(
            "tensor name '{name}' must be non-empty without whitespace"
        )));
    }
    Ok(())
}

fn align_up(offset: u64) -> u64 {
    offset.div_ceil(ALIGN) * ALIGN
}

/// In-memory container being assembled for writing.
#[derive(Debug, Default)]
pub struct ContainerWriter {
    entries: Vec<(String, ContainerTensor)>,
    names: HashMap<String, usize>,
}

impl ContainerWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: ContainerTensor) -> Result<()> {
        validate_name(name)?;
        if self.names.contains_key(name) {
            return Err(Error::Integrity(format!(
                "duplicate tensor name '{name}' in container"
            )));
        }
        self.names.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), tensor));
        Ok(())
    }

    pub fn insert_tensor<T: Scalar>(&mut self, name: &str, t: &Tensor<T>) -> Result<()> {
        self.insert(name, ContainerTensor::from_tensor(t))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = String::new();
        header.push_str(MAGIC);
        header.push('\n');
        for (name, t) in &self.entries {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            header.push_str(&format!(
                "tensor {} {} {}\n",
                name,
                t.dtype().name(),
                dims.join("x")
            ));
        }
        header.push_str("end\n");

        let mut out = header.into_bytes();
        for (_, t) in &self.entries {
            let start = align_up(out.len() as u64) as usize;
            out.resize(start, 0);
            t.write_payload(&mut out);
        }
        out
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut f = File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct TocEntry {
    dtype: Dtype,
    shape: Vec<usize>,
    offset: u64,
    byte_len: u64,
}

/// Container opened for reading. The header is parsed and validated
/// eagerly; tensor payloads are read on demand.
#[derive(Debug)]
pub struct ContainerReader {
    path: PathBuf,
    order: Vec<String>,
    toc: HashMap<String, TocEntry>,
}

impl ContainerReader {
    pub fn open(path: &Path) -> Result<Self> {
        let mut f = File::open(path)?;
        let mut bytes = Vec::new();
        f.read_to_end(&mut bytes)?;
        drop(f);

        // Header is pure ASCII lines; scan until the end marker.
        let mut lines = Vec::new();
        let mut cursor = 0usize;
        let mut header_end = None;
        while cursor < bytes.len() {
            let nl = bytes[cursor..]
                .iter()
                .position(|&b| b == b'\n')
                .map(|p| cursor + p)
                .ok_or_else(|| Error::Format("unterminated container header".into()))?;
            let line = std::str::from_utf8(&bytes[cursor..nl])
                .map_err(|_| Error::Format("container header is not UTF-8".into()))?;
            cursor = nl + 1;
            if line == "end" {
                header_end = Some(cursor);
                break;
            }
            lines.push(line.to_string());
        }
        let header_end =
            header_end.ok_or_else(|| Error::Format("container missing end marker".into()))? as u64;

        if lines.first().map(String::as_str) != Some(MAGIC) {
            return Err(Error::Format(format!(
                "bad container magic in {}",
                path.display()
            )));
        }

        let mut order = Vec::new();
        let mut toc = HashMap::new();
        let mut offset = align_up(header_end);
        for line in &lines[1..] {
            let parts: Vec<&str> = line.split(' ').collect();
            if parts.len() != 4 || parts[0] != "tensor" {
                return Err(Error::Format(format!("bad container header line: {line}")));
            }
            let name = parts[1];
            validate_name(name)?;
            let dtype = Dtype::parse(parts[2])
                .ok_or_else(|| Error::Format(format!("unknown dtype '{}'", parts[2])))?;
            let shape: Vec<usize> = parts[3]
                .split('x')
                .map(|d| {
                    d.parse::<usize>()
                        .map_err(|_| Error::Format(format!("bad dimension '{d}' in: {line}")))
                })
                .collect::<Result<_>>()?;
            if shape.is_empty() || shape.contains(&0) {
                return Err(Error::Format(format!("bad shape in: {line}")));
            }
            let count: usize = shape.iter().product();
            let byte_len = (count * dtype.size_bytes()) as u64;
            if toc.contains_key(name) {
                return Err(Error::Integrity(format!("duplicate tensor '{name}'")));
            }
            toc.insert(
                name.to_string(),
                TocEntry {
                    dtype,
                    shape,
                    offset,
                    byte_len,
                },
            );
            order.push(name.to_string());
            offset = align_up(offset + byte_len);
        }

        // Expected total length: last payload end without trailing padding.
        let expected = order
            .last()
            .map(|n| {
                let e = &toc[n];
                e.offset + e.byte_len
            })
            .unwrap_or(header_end);
        if bytes.len() as u64 != expected {
            return Err(Error::Format(format!(
                "container length {} does not match header ({} expected)",
                bytes.len(),
                expected
            )));
        }

        Ok(ContainerReader {
            path: path.to_path_buf(),
            order,
            toc,
        })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.toc.contains_key(name)
    }

    pub fn names(&self) -> &[String] {
        &self.order
    }

    pub fn shape(&self, name: &str) -> Option<&[usize]> {
        self.toc.get(name).map(|e| e.shape.as_slice())
    }

    pub fn read(&self, name: &str) -> Result<ContainerTensor> {
        let entry = self
            .toc
            .get(name)
            .ok_or_else(|| Error::Integrity(format!("tensor '{name}' not in container")))?;
        let mut f = File::open(&self.path)?;
        f.seek(SeekFrom::Start(entry.offset))?;
        let mut buf = vec![0u8; entry.byte_len as usize];
        f.read_exact(&mut buf)?;
        Ok(ContainerTensor::read_payload(
            entry.dtype,
            entry.shape.clone(),
            &buf,
        ))
    }

    pub fn read_tensor<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        self.read(name)?.to_tensor()
    }
}
