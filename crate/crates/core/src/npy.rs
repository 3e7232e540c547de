//! NPY array files: little-endian float32/float64, C order.
//!
//! Reads format versions 1.0 and 2.0. Writes version 1.0 float32 only.

use std::fs;
use std::path::Path;

use crate::attention::{ingest_scores, Ingested};
use crate::error::{Error, Result};
use crate::model::{AttentionScores, QueryKey, TokenGrid};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const ALIGN: usize = 64;

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }
}

/// Row-major array of values widened to f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        check_shape(&shape)?;
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(crate::error::shape(format!(
                "shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Fails unless the shape equals `expected`.
    pub fn expect_shape(&self, expected: &[usize]) -> Result<()> {
        if self.shape != expected {
            return Err(crate::error::shape(format!("expected shape {expected:?}, file has {:?}", self.shape)));
        }
        Ok(())
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(format_err("scalar (empty-shape) arrays are not supported"));
    }
    if shape.contains(&0) {
        return Err(format_err(format!("shape {shape:?} has a zero-length axis")));
    }
    Ok(())
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(format_err("bad magic, not an NPY file"));
    }
    let (header_len, start): (usize, usize) = match bytes[6] {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(format_err("truncated header"));
            }
            (u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize, 12)
        }
        v => return Err(format_err(format!("unsupported format version {v}.{}", bytes[7]))),
    };
    let end = start
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| format_err("truncated header"))?;
    let header = std::str::from_utf8(&bytes[start..end]).map_err(|_| format_err("header is not text"))?;
    let (dtype, fortran, shape) = parse_header(header)?;
    if fortran {
        return Err(format_err("unsupported layout: fortran_order=True"));
    }
    check_shape(&shape)?;
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| format_err("shape overflows"))?;
    let payload = &bytes[end..];
    if count.checked_mul(dtype.size()) != Some(payload.len()) {
        return Err(format_err(format!(
            "payload is {} bytes, shape {shape:?} needs {}",
            payload.len(),
            count.saturating_mul(dtype.size())
        )));
    }
    let data = match dtype {
        Dtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64 => payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
    };
    Ok(Tensor { shape, data })
}

fn dict_value<'a>(header: &'a str, key: &str) -> Result<&'a str> {
    let pat = format!("'{key}'");
    let at = header.find(&pat).ok_or_else(|| format_err(format!("header lacks {pat}")))?;
    let rest = header[at + pat.len()..].trim_start();
    rest.strip_prefix(':').map(str::trim_start).ok_or_else(|| format_err(format!("malformed {pat}")))
}

fn parse_header(header: &str) -> Result<(Dtype, bool, Vec<usize>)> {
    let descr = dict_value(header, "descr")?;
    let descr = descr
        .strip_prefix('\'')
        .and_then(|s| s.split('\'').next())
        .ok_or_else(|| format_err("malformed descr"))?;
    let dtype = match descr {
        "<f4" => Dtype::F32,
        "<f8" => Dtype::F64,
        other => return Err(format_err(format!("unsupported dtype '{other}' (need <f4 or <f8)"))),
    };

    let fortran = dict_value(header, "fortran_order")?;
    let fortran = if fortran.starts_with("True") {
        true
    } else if fortran.starts_with("False") {
        false
    } else {
        return Err(format_err("malformed fortran_order"));
    };

    let shape = dict_value(header, "shape")?;
    let inner = shape
        .strip_prefix('(')
        .and_then(|s| s.split(')').next())
        .ok_or_else(|| format_err("malformed shape"))?;
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.trim_end_matches('L').parse::<usize>().map_err(|_| format_err(format!("bad dimension '{s}'"))))
        .collect::<Result<Vec<_>>>()?;
    Ok((dtype, fortran, shape))
}

/// Version 1.0, `<f4`, C order; header padded with spaces to a 64-byte boundary.
pub fn encode(tensor: &Tensor) -> Result<Vec<u8>> {
    check_shape(&tensor.shape)?;
    let dims: Vec<String> = tensor.shape.iter().map(usize::to_string).collect();
    let shape = if dims.len() == 1 { format!("({},)", dims[0]) } else { format!("({})", dims.join(", ")) };
    let mut header = format!("{{'descr': '<f4', 'fortran_order': False, 'shape': {shape}, }}");
    let unpadded = MAGIC.len() + 4 + header.len() + 1;
    header.push_str(&" ".repeat((ALIGN - unpadded % ALIGN) % ALIGN));
    header.push('\n');
    let header_len = u16::try_from(header.len()).map_err(|_| format_err("header too long for version 1.0"))?;

    let mut out = Vec::with_capacity(10 + header.len() + 4 * tensor.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for &v in &tensor.data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    Ok(out)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    decode(&fs::read(path)?)
}

/// Reads and checks the shape against `expected`.
pub fn read_tensor_shaped(path: impl AsRef<Path>, expected: &[usize]) -> Result<Tensor> {
    let t = read_tensor(path)?;
    t.expect_shape(expected)?;
    Ok(t)
}

pub fn write_tensor(tensor: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode(tensor)?;
    fs::write(path, bytes)?;
    Ok(())
}

fn dims<const N: usize>(t: &Tensor, what: &str, layout: &str) -> Result<[usize; N]> {
    t.shape.as_slice().try_into().map_err(|_| {
        crate::error::shape(format!("{what} must be {N}-D {layout}, file has shape {:?}", t.shape))
    })
}

impl Tensor {
    /// `[T, n_v, d]` embeddings.
    pub fn into_token_grid(self) -> Result<TokenGrid> {
        let [t, n, d] = dims(&self, "tokens", "[T, n_v, d]")?;
        TokenGrid::new(t, n, d, self.data)
    }

    /// `[T, n_v]` scores; frames off by more than the ingest tolerance are renormalized.
    pub fn into_attention_scores(self) -> Result<Ingested> {
        let [t, n] = dims(&self, "scores", "[T, n_v]")?;
        ingest_scores(t, n, self.data)
    }

    pub fn from_token_grid(grid: &TokenGrid) -> Self {
        Self { shape: vec![grid.frames(), grid.patches(), grid.dim()], data: grid.data().to_vec() }
    }

    pub fn from_scores(scores: &AttentionScores) -> Self {
        Self { shape: vec![scores.frames(), scores.patches()], data: scores.data().to_vec() }
    }
}

/// Queries and keys as `[heads, T, n_v, d_h]` tensors of equal shape.
pub fn query_key(q: Tensor, k: Tensor) -> Result<QueryKey> {
    let [h, t, n, dh] = dims(&q, "queries", "[heads, T, n_v, d_h]")?;
    k.expect_shape(&q.shape)?;
    QueryKey::new(h, t, n, dh, q.data, k.data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(descr: &str, fortran: &str, shape: &str, payload: &[u8]) -> Vec<u8> {
        let header = format!("{{'descr': '{descr}', 'fortran_order': {fortran}, 'shape': {shape}, }}\n");
        let mut b = MAGIC.to_vec();
        b.extend_from_slice(&[1, 0]);
        b.extend_from_slice(&(header.len() as u16).to_le_bytes());
        b.extend_from_slice(header.as_bytes());
        b.extend_from_slice(payload);
        b
    }

    #[test]
    fn one_element_bytes() {
        let bytes = encode(&Tensor::new(vec![1], vec![1.0]).unwrap()).unwrap();
        // numpy.save(np.array([1.0], dtype='<f4'))
        let header = "{'descr': '<f4', 'fortran_order': False, 'shape': (1,), }";
        let mut expected = b"\x93NUMPY\x01\x00\x76\x00".to_vec();
        expected.extend_from_slice(header.as_bytes());
        expected.extend(std::iter::repeat_n(b' ', 118 - header.len() - 1));
        expected.push(b'\n');
        expected.extend_from_slice(&[0x00, 0x00, 0x80, 0x3f]);
        assert_eq!(bytes.len(), 132);
        assert_eq!(bytes, expected);
    }

    #[test]
    fn zeros_2x2() {
        let t = decode(&raw("<f4", "False", "(2, 2)", &[0; 16])).unwrap();
        assert_eq!(t.shape, vec![2, 2]);
        assert_eq!(t.data, vec![0.0; 4]);
    }

    #[test]
    fn float64_and_version_2() {
        let mut payload = Vec::new();
        for v in [1.5f64, -2.25, 1e-300] {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        let header = "{'descr': '<f8', 'fortran_order': False, 'shape': (3,), }\n";
        let mut b = MAGIC.to_vec();
        b.extend_from_slice(&[2, 0]);
        b.extend_from_slice(&(header.len() as u32).to_le_bytes());
        b.extend_from_slice(header.as_bytes());
        b.extend_from_slice(&payload);
        let t = decode(&b).unwrap();
        assert_eq!(t.data, vec![1.5, -2.25, 1e-300]);
    }

    #[test]
    fn rejections() {
        let err = decode(&raw("<f4", "True", "(2, 2)", &[0; 16])).unwrap_err().to_string();
        assert!(err.contains("unsupported layout"), "{err}");
        assert!(decode(b"PK\x03\x04 not npy").unwrap_err().to_string().contains("bad magic"));
        assert!(decode(&raw("<i4", "False", "(1,)", &[0; 4])).unwrap_err().to_string().contains("dtype"));
        assert!(decode(&raw(">f4", "False", "(1,)", &[0; 4])).is_err());
        assert!(decode(&raw("<f4", "False", "(3,)", &[0; 8])).is_err());
        assert!(decode(&raw("<f4", "False", "()", &[0; 4])).unwrap_err().to_string().contains("scalar"));
        assert!(decode(&raw("<f4", "False", "(0, 3)", &[])).unwrap_err().to_string().contains("zero-length"));
        assert!(encode(&Tensor { shape: vec![], data: vec![1.0] }).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        let t = Tensor::new(vec![2, 2], vec![0.0; 4]).unwrap();
        assert!(t.expect_shape(&[4]).is_err());
    }

    #[test]
    fn model_conversions() {
        let g = Tensor::new(vec![2, 3, 2], (0..12).map(f64::from).collect()).unwrap().into_token_grid().unwrap();
        assert_eq!((g.frames(), g.patches(), g.dim()), (2, 3, 2));
        assert_eq!(Tensor::from_token_grid(&g).shape, vec![2, 3, 2]);
        assert!(Tensor::new(vec![6, 2], vec![0.0; 12]).unwrap().into_token_grid().is_err());

        let ing = Tensor::new(vec![1, 2], vec![2.0, 2.0]).unwrap().into_attention_scores().unwrap();
        assert!(ing.renormalized);
        assert_eq!(ing.scores.data(), &[0.5, 0.5]);

        let q = Tensor::new(vec![1, 1, 2, 1], vec![1.0, 0.0]).unwrap();
        assert!(query_key(q.clone(), q.clone()).is_ok());
        assert!(query_key(q, Tensor::new(vec![1, 2, 1, 1], vec![1.0, 0.0]).unwrap()).is_err());
    }

    #[test]
    fn header_alignment() {
        for shape in [vec![3], vec![2, 3], vec![7, 11, 13, 17]] {
            let n = shape.iter().product();
            let bytes = encode(&Tensor::new(shape, vec![0.5; n]).unwrap()).unwrap();
            let hl = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
            assert_eq!((10 + hl) % 64, 0);
            assert_eq!(bytes[10 + hl - 1], b'\n');
        }
    }

    #[test]
    fn file_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.npy");
        let b = dir.path().join("b.npy");
        let t = Tensor::new(vec![2, 3], vec![0.1, -1.0, 3.5, 1e-7, 0.0, 42.0]).unwrap();
        write_tensor(&t, &a).unwrap();
        let back = read_tensor(&a).unwrap();
        write_tensor(&back, &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        assert!(read_tensor(dir.path().join("missing.npy")).unwrap_err().is_io());
    }
}
