//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//! `"FNV1"`, `u32` section count, then per section: tag (`u32` length +
//! UTF-8), header (`u32` count + `u64` values), `u32` array count, and per
//! array: name (`u32` length + UTF-8), `u32` rank, `u64` dims, `f64` data.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::numkit::ParamStore;

pub const MAGIC: &[u8; 4] = b"FNV1";

#[derive(Clone, Debug, PartialEq)]
pub struct Array {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    pub tag: String,
    pub header: Vec<u64>,
    pub arrays: Vec<Array>,
}

impl Section {
    /// Section holding every parameter of `store`.
    pub fn from_store(tag: &str, header: Vec<u64>, store: &ParamStore) -> Self {
        let arrays = store
            .entries()
            .map(|(name, shape, data)| Array { name: name.to_string(), shape: shape.to_vec(), data: data.to_vec() })
            .collect();
        Self { tag: tag.to_string(), header, arrays }
    }

    /// Copies arrays into `store`, requiring identical names and shapes.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<()> {
        let ids: Vec<_> = store.ids().collect();
        if ids.len() != self.arrays.len() {
            return Err(Error::Checkpoint(format!(
                "section {} has {} arrays, model has {}",
                self.tag,
                self.arrays.len(),
                ids.len()
            )));
        }
        for (id, arr) in ids.into_iter().zip(&self.arrays) {
            if store.name(id) != arr.name || store.get(id).shape() != arr.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "array {} {:?} does not match parameter {} {:?}",
                    arr.name,
                    arr.shape,
                    store.name(id),
                    store.get(id).shape()
                )));
            }
            if arr.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Checkpoint(format!("array {} holds non-finite values", arr.name)));
            }
            store.get_mut(id).data_mut().copy_from_slice(&arr.data);
        }
        Ok(())
    }
}

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint("length exceeds u32".into()))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_str(w: &mut impl Write, s: &str) -> Result<()> {
    put_u32(w, s.len())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

pub fn write_container(mut w: impl Write, sections: &[Section]) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(&mut w, sections.len())?;
    for s in sections {
        put_str(&mut w, &s.tag)?;
        put_u32(&mut w, s.header.len())?;
        for h in &s.header {
            w.write_all(&h.to_le_bytes())?;
        }
        put_u32(&mut w, s.arrays.len())?;
        for a in &s.arrays {
            put_str(&mut w, &a.name)?;
            put_u32(&mut w, a.shape.len())?;
            for &d in &a.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in &a.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

struct Reader<R> {
    r: R,
}

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut b = [0u8; N];
        self.r.read_exact(&mut b).map_err(|e| Error::Checkpoint(format!("truncated container: {e}")))?;
        Ok(b)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        if n > 1 << 20 {
            return Err(Error::Checkpoint(format!("implausible string length {n}")));
        }
        let mut b = vec![0u8; n];
        self.r.read_exact(&mut b).map_err(|e| Error::Checkpoint(format!("truncated container: {e}")))?;
        String::from_utf8(b).map_err(|_| Error::Checkpoint("name is not UTF-8".into()))
    }
}

pub fn read_container(r: impl Read) -> Result<Vec<Section>> {
    let mut rd = Reader { r };
    if &rd.bytes::<4>()? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let n = rd.u32()?;
    let mut out = Vec::with_capacity(n.min(64));
    for _ in 0..n {
        let tag = rd.string()?;
        let nh = rd.u32()?;
        let header = (0..nh).map(|_| rd.u64()).collect::<Result<Vec<_>>>()?;
        let na = rd.u32()?;
        let mut arrays = Vec::with_capacity(na.min(1024));
        for _ in 0..na {
            let name = rd.string()?;
            let rank = rd.u32()?;
            let shape = (0..rank).map(|_| rd.u64().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let numel = numel.filter(|&n| n <= 1 << 28).ok_or_else(|| Error::Checkpoint("array too large".into()))?;
            let data = (0..numel).map(|_| rd.bytes::<8>().map(f64::from_le_bytes)).collect::<Result<Vec<_>>>()?;
            arrays.push(Array { name, shape, data });
        }
        out.push(Section { tag, header, arrays });
    }
    Ok(out)
}

/// The section with `tag`.
pub fn find<'a>(sections: &'a [Section], tag: &str) -> Result<&'a Section> {
    sections
        .iter()
        .find(|s| s.tag == tag)
        .ok_or_else(|| Error::Checkpoint(format!("no section {tag}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_bad_magic() {
        let s = Section {
            tag: "x".into(),
            header: vec![1, 2, 3],
            arrays: vec![Array { name: "w".into(), shape: vec![2, 1], data: vec![0.5, -1.25] }],
        };
        let mut buf = Vec::new();
        write_container(&mut buf, std::slice::from_ref(&s)).unwrap();
        assert_eq!(&buf[..4], b"FNV1");
        assert_eq!(read_container(&buf[..]).unwrap(), vec![s]);
        buf[0] = b'X';
        assert!(matches!(read_container(&buf[..]), Err(Error::Checkpoint(_))));
        assert!(read_container(&b"FNV1\x01\x00"[..]).is_err());
    }
}
