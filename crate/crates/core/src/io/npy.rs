//! Reading and writing dense float arrays in the NPY v1.0 layout.
//!
//! Only little-endian `float32`/`float64`, C order and rank 1..=4 are
//! supported. Writes always emit the canonical header numpy itself produces
//! (`{'descr': ..., 'fortran_order': False, 'shape': (...), }` padded with
//! spaces to a 64-byte boundary and terminated by `\n`), so identical arrays
//! give identical bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub(crate) const MAGIC: [u8; 6] = *b"\x93NUMPY";
const PREAMBLE_LEN: usize = 10;
const ALIGN: usize = 64;
pub const MAX_RANK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    fn from_descr(descr: &str) -> Result<Self> {
        match descr {
            "<f4" => Ok(Dtype::F32),
            "<f8" => Ok(Dtype::F64),
            other => Err(Error::UnsupportedDtype(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl ArrayData {
    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A dense, row-major array of rank 1 to 4.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseArray {
    shape: Vec<usize>,
    data: ArrayData,
}

impl DenseArray {
    pub fn new(shape: Vec<usize>, data: ArrayData) -> Result<Self> {
        if shape.is_empty() || shape.len() > MAX_RANK {
            return Err(Error::Shape(format!(
                "rank must be between 1 and {MAX_RANK}, got {}",
                shape.len()
            )));
        }
        if shape.contains(&0) {
            return Err(Error::Shape(format!("zero-length axis in shape {shape:?}")));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} holds {n} elements but buffer has {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn from_f64(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::new(shape, ArrayData::F64(data))
    }

    pub fn from_f32(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        Self::new(shape, ArrayData::F32(data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dtype(&self) -> Dtype {
        match self.data {
            ArrayData::F32(_) => Dtype::F32,
            ArrayData::F64(_) => Dtype::F64,
        }
    }

    pub fn data(&self) -> &ArrayData {
        &self.data
    }

    /// Widens (or copies) the payload to `f64`.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            ArrayData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            ArrayData::F64(v) => v.clone(),
        }
    }

    /// Same shape, payload converted to `dtype`.
    pub fn cast(&self, dtype: Dtype) -> DenseArray {
        let data = match (dtype, &self.data) {
            (Dtype::F32, ArrayData::F32(v)) => ArrayData::F32(v.clone()),
            (Dtype::F64, ArrayData::F64(v)) => ArrayData::F64(v.clone()),
            (Dtype::F32, ArrayData::F64(v)) => ArrayData::F32(v.iter().map(|&x| x as f32).collect()),
            (Dtype::F64, ArrayData::F32(v)) => ArrayData::F64(v.iter().map(|&x| x as f64).collect()),
        };
        DenseArray {
            shape: self.shape.clone(),
            data,
        }
    }

    /// Bitwise payload equality, so NaN payloads compare equal to themselves.
    pub fn bit_eq(&self, other: &DenseArray) -> bool {
        if self.shape != other.shape {
            return false;
        }
        match (&self.data, &other.data) {
            (ArrayData::F32(a), ArrayData::F32(b)) => {
                a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (ArrayData::F64(a), ArrayData::F64(b)) => {
                a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        }
    }
}

fn header_dict(dtype: Dtype, shape: &[usize]) -> String {
    let dims = match shape {
        [n] => format!("({n},)"),
        _ => {
            let parts: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
            format!("({})", parts.join(", "))
        }
    };
    format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        dtype.descr(),
        dims
    )
}

/// Serializes `arr` into NPY bytes with a canonical header.
pub fn encode(arr: &DenseArray) -> Vec<u8> {
    let dict = header_dict(arr.dtype(), &arr.shape);
    // +1 for the terminating newline
    let unpadded = PREAMBLE_LEN + dict.len() + 1;
    let total = unpadded.div_ceil(ALIGN) * ALIGN;
    let header_len = total - PREAMBLE_LEN;

    let mut out = Vec::with_capacity(total + arr.len() * arr.dtype().size());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header_len as u16).to_le_bytes());
    out.extend_from_slice(dict.as_bytes());
    out.resize(total - 1, b' ');
    out.push(b'\n');
    match &arr.data {
        ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

/// Parses NPY bytes.
pub fn decode(bytes: &[u8]) -> Result<DenseArray> {
    if bytes.len() < PREAMBLE_LEN {
        return Err(Error::format(bytes.len(), "file shorter than the 10-byte preamble"));
    }
    if let Some(i) = (0..MAGIC.len()).find(|&i| bytes[i] != MAGIC[i]) {
        return Err(Error::format(i, "bad magic string"));
    }
    if bytes[6] != 1 || bytes[7] != 0 {
        return Err(Error::format(
            6,
            format!("unsupported format version {}.{}", bytes[6], bytes[7]),
        ));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_start = PREAMBLE_LEN + header_len;
    if bytes.len() < data_start {
        return Err(Error::format(
            bytes.len(),
            format!("header declares {header_len} bytes but file ends early"),
        ));
    }
    let header = std::str::from_utf8(&bytes[PREAMBLE_LEN..data_start])
        .map_err(|e| Error::format(PREAMBLE_LEN + e.valid_up_to(), "header is not ASCII"))?;
    let parsed = HeaderParser::new(header).parse()?;

    let dtype = Dtype::from_descr(&parsed.descr)?;
    if parsed.fortran_order {
        return Err(Error::format(PREAMBLE_LEN, "fortran_order arrays are not supported"));
    }
    if parsed.shape.is_empty() || parsed.shape.len() > MAX_RANK {
        return Err(Error::format(
            PREAMBLE_LEN,
            format!("rank {} outside 1..={MAX_RANK}", parsed.shape.len()),
        ));
    }
    if parsed.shape.contains(&0) {
        return Err(Error::format(PREAMBLE_LEN, "zero-length axis"));
    }

    let count = parsed
        .shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format(PREAMBLE_LEN, "shape overflows usize"))?;
    let payload = &bytes[data_start..];
    let expected = count * dtype.size();
    if payload.len() != expected {
        return Err(Error::LengthMismatch {
            expected,
            actual: payload.len(),
        });
    }
    let data = match dtype {
        Dtype::F32 => ArrayData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        Dtype::F64 => ArrayData::F64(
            payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
    };
    DenseArray::new(parsed.shape, data)
}

pub fn read_array(path: impl AsRef<Path>) -> Result<DenseArray> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Writes `arr` to `path` atomically (temp file in the same directory, then rename).
pub fn write_array(arr: &DenseArray, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &encode(arr))
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

struct ParsedHeader {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

/// Minimal parser for the python-literal dict numpy writes.
struct HeaderParser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> HeaderParser<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn err(&self, message: impl Into<String>) -> Error {
        Error::format(PREAMBLE_LEN + self.pos, message)
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<()> {
        match self.peek() {
            Some(x) if x == c => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.err(format!("expected '{}'", c as char))),
        }
    }

    fn string(&mut self) -> Result<String> {
        let quote = match self.peek() {
            Some(q @ (b'\'' | b'"')) => q,
            _ => return Err(self.err("expected a quoted string")),
        };
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos] != quote {
            self.pos += 1;
        }
        if self.pos == self.src.len() {
            return Err(self.err("unterminated string"));
        }
        let s = String::from_utf8_lossy(&self.src[start..self.pos]).into_owned();
        self.pos += 1;
        Ok(s)
    }

    fn ident(&mut self) -> Result<&'a [u8]> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected a literal"));
        }
        Ok(&self.src[start..self.pos])
    }

    fn boolean(&mut self) -> Result<bool> {
        let at = self.pos;
        match self.ident()? {
            b"True" => Ok(true),
            b"False" => Ok(false),
            _ => {
                self.pos = at;
                Err(self.err("expected True or False"))
            }
        }
    }

    fn shape(&mut self) -> Result<Vec<usize>> {
        self.expect(b'(')?;
        let mut dims = Vec::new();
        loop {
            if self.peek() == Some(b')') {
                self.pos += 1;
                return Ok(dims);
            }
            let at = self.pos;
            let tok = self.ident()?;
            let dim = std::str::from_utf8(tok)
                .ok()
                .and_then(|t| t.parse::<usize>().ok())
                .ok_or_else(|| {
                    self.pos = at;
                    self.err("shape entries must be non-negative integers")
                })?;
            dims.push(dim);
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b')') => {}
                _ => return Err(self.err("expected ',' or ')' in shape")),
            }
        }
    }

    fn parse(mut self) -> Result<ParsedHeader> {
        self.expect(b'{')?;
        let mut descr = None;
        let mut fortran = None;
        let mut shape = None;
        loop {
            if self.peek() == Some(b'}') {
                self.pos += 1;
                break;
            }
            let key = self.string()?;
            self.expect(b':')?;
            match key.as_str() {
                "descr" => descr = Some(self.string()?),
                "fortran_order" => fortran = Some(self.boolean()?),
                "shape" => shape = Some(self.shape()?),
                other => return Err(self.err(format!("unexpected header key '{other}'"))),
            }
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b'}') => {}
                _ => return Err(self.err("expected ',' or '}'")),
            }
        }
        if self.peek().is_some() {
            return Err(self.err("trailing bytes after header dict"));
        }
        Ok(ParsedHeader {
            descr: descr.ok_or_else(|| self.err("missing 'descr'"))?,
            fortran_order: fortran.ok_or_else(|| self.err("missing 'fortran_order'"))?,
            shape: shape.ok_or_else(|| self.err("missing 'shape'"))?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_2x2_roundtrip() {
        let a = DenseArray::from_f32(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = decode(&encode(&a)).unwrap();
        assert_eq!(b.shape(), &[2, 2]);
        assert_eq!(b.data(), &ArrayData::F32(vec![1.0, 2.0, 3.0, 4.0]));
    }

    #[test]
    fn degenerate_single_element() {
        let a = DenseArray::from_f64(vec![1], vec![0.0]).unwrap();
        let b = decode(&encode(&a)).unwrap();
        assert_eq!(b, a);
    }

    #[test]
    fn header_is_128_bytes_for_short_vector() {
        let a = DenseArray::from_f32(vec![2], vec![0.5, 0.5]).unwrap();
        let bytes = encode(&a);
        assert_eq!(bytes.len(), 128 + 8);
        assert_eq!(bytes[127], b'\n');
        let dict = std::str::from_utf8(&bytes[10..128]).unwrap();
        assert!(dict.starts_with("{'descr': '<f4', 'fortran_order': False, 'shape': (2,), }"));
    }

    #[test]
    fn header_total_is_64_aligned() {
        for shape in [vec![3], vec![7, 11], vec![2, 3, 4], vec![100000, 1, 1, 1]] {
            let n = shape.iter().product();
            let a = DenseArray::from_f64(shape, vec![1.0; n]).unwrap();
            let bytes = encode(&a);
            let hl = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
            assert_eq!((10 + hl) % 64, 0);
        }
    }

    fn raw_npy(dict: &str, payload: &[u8]) -> Vec<u8> {
        let mut header = dict.to_string();
        while !(10 + header.len() + 1).is_multiple_of(64) {
            header.push(' ');
        }
        header.push('\n');
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&[1, 0]);
        bytes.extend_from_slice(&(header.len() as u16).to_le_bytes());
        bytes.extend_from_slice(header.as_bytes());
        bytes.extend_from_slice(payload);
        bytes
    }

    #[test]
    fn reads_numpy_variants() {
        // No trailing comma and double quotes are both legal python literals.
        let mut payload = 1.5f64.to_le_bytes().to_vec();
        payload.extend_from_slice(&(-2.0f64).to_le_bytes());
        let bytes = raw_npy(
            "{\"descr\": \"<f8\", \"shape\": (2, 1), \"fortran_order\": False}",
            &payload,
        );
        let a = decode(&bytes).unwrap();
        assert_eq!(a.shape(), &[2, 1]);
        assert_eq!(a.to_f64_vec(), vec![1.5, -2.0]);
    }

    #[test]
    fn integer_and_big_endian_rejected() {
        for descr in ["<i4", ">f8", "<f2"] {
            let dict = format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': (1,), }}");
            let bytes = raw_npy(&dict, &[0; 8]);
            assert!(matches!(decode(&bytes), Err(Error::UnsupportedDtype(d)) if d == descr));
        }
    }

    #[test]
    fn fortran_order_rejected() {
        let bytes = raw_npy("{'descr': '<f8', 'fortran_order': True, 'shape': (1,), }", &[0; 8]);
        assert!(matches!(decode(&bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn bad_magic_reports_offset() {
        let a = DenseArray::from_f64(vec![1], vec![0.0]).unwrap();
        let mut bytes = encode(&a);
        bytes[3] = b'X';
        match decode(&bytes) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_version_rejected() {
        let a = DenseArray::from_f64(vec![1], vec![0.0]).unwrap();
        let mut bytes = encode(&a);
        bytes[6] = 2;
        assert!(matches!(decode(&bytes), Err(Error::Format { offset: 6, .. })));
    }

    #[test]
    fn truncated_payload() {
        let a = DenseArray::from_f64(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        let bytes = encode(&a);
        match decode(&bytes[..bytes.len() - 5]) {
            Err(Error::LengthMismatch { expected, actual }) => {
                assert_eq!(expected, 24);
                assert_eq!(actual, 19);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_header_dict() {
        let a = DenseArray::from_f64(vec![1], vec![0.0]).unwrap();
        let mut bytes = encode(&a);
        // corrupt "'shape'" key quote
        let pos = bytes.windows(7).position(|w| w == b"'shape'").unwrap();
        bytes[pos + 3] = b'\'';
        assert!(matches!(decode(&bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn invalid_shapes_rejected() {
        assert!(DenseArray::from_f64(vec![], vec![]).is_err());
        assert!(DenseArray::from_f64(vec![1, 1, 1, 1, 1], vec![0.0]).is_err());
        assert!(DenseArray::from_f64(vec![2, 2], vec![0.0; 3]).is_err());
    }
}
