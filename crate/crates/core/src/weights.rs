//! Binary weight container.
//!
//! Little-endian layout: magic `NNWT`, version `u32 = 1`, layer count `u32`,
//! then per layer a `u16` name length, the UTF-8 name and a `u8` tensor count;
//! per tensor a `u8` rank, `rank` dims as `u32` and the `f32` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Tensor, MAX_RANK};

pub const MAGIC: &[u8; 4] = b"NNWT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct WeightRecord {
    pub name: String,
    pub tensors: Vec<Tensor<f32>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightFile {
    pub records: Vec<WeightRecord>,
}

impl WeightFile {
    pub fn get(&self, name: &str) -> Option<&WeightRecord> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.records.iter().map(|r| r.name.as_str()).collect()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e| Error::WeightFormat(format!("write failed: {e}"));
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
        let count = u32::try_from(self.records.len())
            .map_err(|_| Error::WeightFormat("too many layers".into()))?;
        w.write_all(&count.to_le_bytes()).map_err(io)?;
        for rec in &self.records {
            let name = rec.name.as_bytes();
            let len = u16::try_from(name.len())
                .map_err(|_| Error::WeightFormat(format!("layer name `{}` too long", rec.name)))?;
            w.write_all(&len.to_le_bytes()).map_err(io)?;
            w.write_all(name).map_err(io)?;
            let tc = u8::try_from(rec.tensors.len())
                .map_err(|_| Error::WeightFormat(format!("layer `{}` has too many tensors", rec.name)))?;
            w.write_all(&[tc]).map_err(io)?;
            for t in &rec.tensors {
                w.write_all(&[t.rank() as u8]).map_err(io)?;
                for &d in t.dims() {
                    let d = u32::try_from(d).map_err(|_| Error::WeightFormat(format!("dim {d} exceeds u32")))?;
                    w.write_all(&d.to_le_bytes()).map_err(io)?;
                }
                let mut buf = Vec::with_capacity(t.len() * 4);
                for v in t.data() {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
                w.write_all(&buf).map_err(io)?;
            }
        }
        w.flush().map_err(io)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to memory cannot fail");
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(f))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        read_records(&mut std::io::Cursor::new(bytes), |_| true).map(|(f, _)| f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::load_filtered(path, |_| true).map(|(f, _)| f)
    }

    /// Read only the records whose name passes `keep`; payloads of the other
    /// records are skipped. Also returns every record name in file order.
    pub fn load_filtered(path: &Path, keep: impl Fn(&str) -> bool) -> Result<(Self, Vec<String>)> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        read_records(&mut BufReader::new(f), keep)
    }
}

struct Reader<'a, R> {
    inner: &'a mut R,
    offset: u64,
}

impl<R: Read + Seek> Reader<'_, R> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.inner.read_exact(&mut buf).map_err(|_| {
            Error::WeightFormat(format!("truncated file: {what} at byte {}", self.offset))
        })?;
        self.offset += n as u64;
        Ok(buf)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.bytes(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.bytes(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn skip(&mut self, n: u64, what: &str) -> Result<()> {
        let end = self.inner.seek(SeekFrom::End(0)).map_err(|e| Error::WeightFormat(e.to_string()))?;
        if self.offset + n > end {
            return Err(Error::WeightFormat(format!(
                "truncated file: {what} at byte {}",
                self.offset
            )));
        }
        self.offset += n;
        self.inner
            .seek(SeekFrom::Start(self.offset))
            .map_err(|e| Error::WeightFormat(e.to_string()))?;
        Ok(())
    }
}

fn read_records<R: Read + Seek>(inner: &mut R, keep: impl Fn(&str) -> bool) -> Result<(WeightFile, Vec<String>)> {
    let mut r = Reader { inner, offset: 0 };
    let magic = r.bytes(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::WeightFormat(format!("bad magic {magic:?}, expected \"NNWT\"")));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::WeightFormat(format!("unsupported version {version}, expected {VERSION}")));
    }
    let count = r.u32("layer count")?;
    let mut records = Vec::new();
    let mut names = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = r.u16("name length")? as usize;
        let name = String::from_utf8(r.bytes(len, "layer name")?)
            .map_err(|_| Error::WeightFormat("layer name is not UTF-8".into()))?;
        if names.contains(&name) {
            return Err(Error::WeightFormat(format!("duplicate layer `{name}`")));
        }
        let wanted = keep(&name);
        let tc = r.u8("tensor count")?;
        let mut tensors = Vec::with_capacity(tc as usize);
        for _ in 0..tc {
            let rank = r.u8("tensor rank")? as usize;
            if rank > MAX_RANK {
                return Err(Error::WeightFormat(format!("layer `{name}`: rank {rank} exceeds {MAX_RANK}")));
            }
            let dims = (0..rank)
                .map(|_| r.u32("tensor dims").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = dims.iter().product();
            if wanted {
                let raw = r.bytes(n * 4, "tensor data")?;
                let data = raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                let t = Tensor::new(dims, data)
                    .map_err(|e| Error::WeightFormat(format!("layer `{name}`: {e}")))?;
                tensors.push(t);
            } else {
                r.skip(n as u64 * 4, "tensor data")?;
            }
        }
        if wanted {
            records.push(WeightRecord {
                name: name.clone(),
                tensors,
            });
        }
        names.push(name);
    }
    let mut probe = [0u8; 1];
    if r.inner.read(&mut probe).map_err(|e| Error::WeightFormat(e.to_string()))? != 0 {
        return Err(Error::WeightFormat(format!("trailing bytes after byte {}", r.offset)));
    }
    Ok((WeightFile { records }, names))
}
