//! Portable named-array container used for checkpoints and preprocessed
//! datasets. The byte layout is described in `docs/container-format.md`.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

pub const MAGIC: [u8; 8] = *b"EEGARRS\0";
pub const FORMAT_VERSION: u32 = 1;

/// Typed row-major payload.
#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
    I64(Vec<i64>),
}

impl ArrayData {
    pub fn tag(&self) -> u8 {
        match self {
            ArrayData::F32(_) => 0,
            ArrayData::F64(_) => 1,
            ArrayData::U8(_) => 2,
            ArrayData::I64(_) => 3,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            ArrayData::F32(v) => v.len(),
            ArrayData::F64(v) => v.len(),
            ArrayData::U8(v) => v.len(),
            ArrayData::I64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn elem_size(tag: u8) -> Option<usize> {
        match tag {
            0 => Some(4),
            1 => Some(8),
            2 => Some(1),
            3 => Some(8),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: ArrayData,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, dims: Vec<usize>, data: ArrayData) -> Result<Self, ContainerError> {
        let name = name.into();
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(ContainerError::ShapeCorruption(format!(
                "array {name}: dims {dims:?} hold {n} values, payload has {}",
                data.len()
            )));
        }
        Ok(Self { name, dims, data })
    }

    /// UTF-8 text stored as a rank-1 `u8` array.
    pub fn text(name: impl Into<String>, text: &str) -> Self {
        Self {
            name: name.into(),
            dims: vec![text.len()],
            data: ArrayData::U8(text.as_bytes().to_vec()),
        }
    }
}

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not an array container (bad magic)")]
    BadMagic,
    #[error("container format version {found}, this build reads {expected}")]
    FormatVersionMismatch { found: u32, expected: u32 },
    #[error("shape corruption: {0}")]
    ShapeCorruption(String),
    #[error("array {0} appears twice")]
    DuplicateName(String),
    #[error("array {0} missing")]
    Missing(String),
    #[error("metadata: {0}")]
    Metadata(String),
    #[error("array {name}: expected {expected}")]
    WrongKind { name: String, expected: String },
}

/// Serializes `arrays` in order.
pub fn encode(arrays: &[NamedArray]) -> Result<Vec<u8>, ContainerError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for a in arrays {
        if !seen.insert(a.name.as_str()) {
            return Err(ContainerError::DuplicateName(a.name.clone()));
        }
        let n: usize = a.dims.iter().product();
        if n != a.data.len() {
            return Err(ContainerError::ShapeCorruption(format!("array {} dims disagree with payload", a.name)));
        }
        out.extend_from_slice(&(a.name.len() as u32).to_le_bytes());
        out.extend_from_slice(a.name.as_bytes());
        out.push(a.data.tag());
        out.extend_from_slice(&(a.dims.len() as u32).to_le_bytes());
        for &d in &a.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &a.data {
            ArrayData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            ArrayData::U8(v) => out.extend_from_slice(v),
            ArrayData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], ContainerError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            ContainerError::ShapeCorruption(format!(
                "{what}: need {n} bytes at offset {}, file has {}",
                self.pos,
                self.buf.len()
            ))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64, ContainerError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

/// Parses a whole container. Any truncation, trailing bytes or size
/// disagreement is an error; nothing partial is returned.
pub fn decode(bytes: &[u8]) -> Result<Vec<NamedArray>, ContainerError> {
    if bytes.len() < MAGIC.len() || bytes[..MAGIC.len()] != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let mut r = Reader { buf: bytes, pos: MAGIC.len() };
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(ContainerError::FormatVersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let count = r.u32("array count")? as usize;
    let mut arrays = Vec::new();
    let mut seen = HashSet::new();
    for i in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = String::from_utf8(r.take(name_len, "name")?.to_vec())
            .map_err(|_| ContainerError::ShapeCorruption(format!("array #{i}: name is not UTF-8")))?;
        let tag = r.take(1, "dtype tag")?[0];
        let elem = ArrayData::elem_size(tag)
            .ok_or_else(|| ContainerError::ShapeCorruption(format!("array {name}: unknown dtype tag {tag}")))?;
        let rank = r.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(rank.min(64));
        let mut n: usize = 1;
        for _ in 0..rank {
            let d = usize::try_from(r.u64("dim")?)
                .map_err(|_| ContainerError::ShapeCorruption(format!("array {name}: dimension overflows")))?;
            n = n
                .checked_mul(d)
                .ok_or_else(|| ContainerError::ShapeCorruption(format!("array {name}: element count overflows")))?;
            dims.push(d);
        }
        let nbytes = n
            .checked_mul(elem)
            .ok_or_else(|| ContainerError::ShapeCorruption(format!("array {name}: byte count overflows")))?;
        let raw = r.take(nbytes, &format!("payload of {name}"))?;
        let data = match tag {
            0 => ArrayData::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
            1 => ArrayData::F64(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
            2 => ArrayData::U8(raw.to_vec()),
            _ => ArrayData::I64(raw.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap())).collect()),
        };
        if !seen.insert(name.clone()) {
            return Err(ContainerError::DuplicateName(name));
        }
        arrays.push(NamedArray { name, dims, data });
    }
    if r.pos != bytes.len() {
        return Err(ContainerError::ShapeCorruption(format!(
            "{} trailing bytes after the last array",
            bytes.len() - r.pos
        )));
    }
    Ok(arrays)
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_container(path: &Path, arrays: &[NamedArray]) -> Result<(), ContainerError> {
    let bytes = encode(arrays)?;
    let io = |source| ContainerError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut tmp_name = path.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(&bytes).map_err(io)?;
        f.sync_all().map_err(io)?;
    }
    fs::rename(&tmp, path).map_err(io)
}

pub fn read_container(path: &Path) -> Result<Vec<NamedArray>, ContainerError> {
    let bytes = fs::read(path).map_err(|source| ContainerError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}

/// Lookup helpers over a decoded container.
pub struct ArrayMap {
    arrays: Vec<NamedArray>,
}

impl ArrayMap {
    pub fn new(arrays: Vec<NamedArray>) -> Self {
        Self { arrays }
    }

    pub fn get(&self, name: &str) -> Result<&NamedArray, ContainerError> {
        self.arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| ContainerError::Missing(name.into()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.arrays.iter().any(|a| a.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.iter().map(|a| a.name.as_str())
    }

    fn wrong(name: &str, expected: &str) -> ContainerError {
        ContainerError::WrongKind {
            name: name.into(),
            expected: expected.into(),
        }
    }

    pub fn text(&self, name: &str) -> Result<String, ContainerError> {
        match &self.get(name)?.data {
            ArrayData::U8(b) => String::from_utf8(b.clone()).map_err(|_| Self::wrong(name, "UTF-8 text")),
            _ => Err(Self::wrong(name, "u8 text")),
        }
    }

    pub fn f64s(&self, name: &str) -> Result<(&[usize], &[f64]), ContainerError> {
        let a = self.get(name)?;
        match &a.data {
            ArrayData::F64(v) => Ok((&a.dims, v)),
            _ => Err(Self::wrong(name, "f64 array")),
        }
    }

    pub fn u8s(&self, name: &str) -> Result<(&[usize], &[u8]), ContainerError> {
        let a = self.get(name)?;
        match &a.data {
            ArrayData::U8(v) => Ok((&a.dims, v)),
            _ => Err(Self::wrong(name, "u8 array")),
        }
    }

    pub fn i64s(&self, name: &str) -> Result<(&[usize], &[i64]), ContainerError> {
        let a = self.get(name)?;
        match &a.data {
            ArrayData::I64(v) => Ok((&a.dims, v)),
            _ => Err(Self::wrong(name, "i64 array")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<NamedArray> {
        vec![
            NamedArray::new("w", vec![2, 3], ArrayData::F32(vec![1.5, -0.0, f32::MIN_POSITIVE, 3.0, 4.0, 5.0])).unwrap(),
            NamedArray::new("x", vec![], ArrayData::F64(vec![std::f64::consts::PI])).unwrap(),
            NamedArray::text("meta", "hello = 1\n"),
            NamedArray::new("ids", vec![2], ArrayData::I64(vec![-1, i64::MAX])).unwrap(),
            NamedArray::new("empty", vec![0, 4], ArrayData::F64(vec![])).unwrap(),
        ]
    }

    #[test]
    fn exact_layout_of_a_tiny_container() {
        let a = vec![NamedArray::new("ab", vec![2], ArrayData::U8(vec![7, 9])).unwrap()];
        let bytes = encode(&a).unwrap();
        let mut expect = b"EEGARRS\0".to_vec();
        expect.extend([1, 0, 0, 0]); // version
        expect.extend([1, 0, 0, 0]); // count
        expect.extend([2, 0, 0, 0]); // name length
        expect.extend(b"ab");
        expect.push(2); // u8
        expect.extend([1, 0, 0, 0]); // rank
        expect.extend([2, 0, 0, 0, 0, 0, 0, 0]); // dim
        expect.extend([7, 9]);
        assert_eq!(bytes, expect);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let a = sample();
        let b = decode(&encode(&a).unwrap()).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!((&x.name, &x.dims), (&y.name, &y.dims));
            match (&x.data, &y.data) {
                (ArrayData::F32(p), ArrayData::F32(q)) => {
                    assert!(p.iter().zip(q).all(|(u, v)| u.to_bits() == v.to_bits()))
                }
                (ArrayData::F64(p), ArrayData::F64(q)) => {
                    assert!(p.iter().zip(q).all(|(u, v)| u.to_bits() == v.to_bits()))
                }
                (p, q) => assert_eq!(p, q),
            }
        }
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = encode(&sample()).unwrap();
        for cut in 0..bytes.len() {
            let err = decode(&bytes[..cut]).unwrap_err();
            assert!(
                matches!(err, ContainerError::ShapeCorruption(_) | ContainerError::BadMagic),
                "cut {cut}: {err}"
            );
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode(&long), Err(ContainerError::ShapeCorruption(_))));
    }

    #[test]
    fn version_and_names_checked() {
        let mut bytes = encode(&sample()).unwrap();
        bytes[8] = 2;
        assert!(matches!(
            decode(&bytes),
            Err(ContainerError::FormatVersionMismatch { found: 2, expected: 1 })
        ));
        let dup = vec![NamedArray::text("a", "x"), NamedArray::text("a", "y")];
        assert!(matches!(encode(&dup), Err(ContainerError::DuplicateName(_))));
        assert!(NamedArray::new("bad", vec![3], ArrayData::U8(vec![1])).is_err());
    }

    #[test]
    fn atomic_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.bin");
        write_container(&path, &sample()).unwrap();
        assert!(!dir.path().join("c.bin.tmp").exists());
        let map = ArrayMap::new(read_container(&path).unwrap());
        assert_eq!(map.text("meta").unwrap(), "hello = 1\n");
        assert_eq!(map.i64s("ids").unwrap().1, &[-1, i64::MAX]);
        assert!(matches!(map.f64s("meta"), Err(ContainerError::WrongKind { .. })));
        assert!(matches!(map.get("nope"), Err(ContainerError::Missing(_))));
        assert!(matches!(read_container(&dir.path().join("none")), Err(ContainerError::Io { .. })));
    }
}
