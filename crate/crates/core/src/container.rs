//! Flat binary container for named `f64` matrices.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic   8 bytes  "HSEQGEN\0"
//! version u32      = 1
//! count   u32      number of entries
//! entry*  name_len u32, name bytes (UTF-8), rows u64, cols u64,
//!         rows*cols f64 in row-major order
//! ```

use std::io::{Read, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"HSEQGEN\0";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    entries: Vec<(String, DMatrix<f64>)>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, matrix: DMatrix<f64>) {
        self.entries.push((name.into(), matrix));
    }

    pub fn push_vector(&mut self, name: impl Into<String>, values: &[f64]) {
        self.push(name, DMatrix::from_column_slice(values.len(), 1, values));
    }

    pub fn get(&self, name: &str) -> Result<&DMatrix<f64>> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::Artifact(format!("container has no entry '{name}'")))
    }

    pub fn get_vector(&self, name: &str) -> Result<Vec<f64>> {
        let m = self.get(name)?;
        if m.ncols() != 1 {
            return Err(Error::Artifact(format!("entry '{name}' is not a column vector")));
        }
        Ok(m.iter().copied().collect())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.entries.len() as u32).to_le_bytes())?;
        for (name, m) in &self.entries {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(m.nrows() as u64).to_le_bytes())?;
            w.write_all(&(m.ncols() as u64).to_le_bytes())?;
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    w.write_all(&m[(i, j)].to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Artifact("bad magic bytes".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Artifact(format!("unsupported container version {version}")));
        }
        let count = read_u32(r)? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u32(r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Artifact("entry name is not UTF-8".into()))?;
            let rows = read_u64(r)? as usize;
            let cols = read_u64(r)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            let mut buf = [0u8; 8];
            for _ in 0..rows * cols {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            entries.push((name, DMatrix::from_row_slice(rows, cols, &data)));
        }
        Ok(Self { entries })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(&mut &bytes[..])
    }
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_row_major_little_endian() {
        let mut c = Container::new();
        c.push("m", DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let bytes = c.to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 1);
        // name_len(4) + "m"(1) + rows(8) + cols(8)
        let data = 16 + 4 + 1 + 16;
        assert_eq!(f64::from_le_bytes(bytes[data..data + 8].try_into().unwrap()), 1.0);
        assert_eq!(f64::from_le_bytes(bytes[data + 8..data + 16].try_into().unwrap()), 2.0);
        assert_eq!(Container::from_bytes(&bytes).unwrap(), c);
    }

    #[test]
    fn rejects_bad_magic() {
        let mut bytes = Container::new().to_bytes();
        bytes[0] = b'X';
        assert!(Container::from_bytes(&bytes).is_err());
    }
}
