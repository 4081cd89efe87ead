//! Binary cache for spectrum tables and triad tensors.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic      8 bytes  "NSMCACHE"
//! version    u32      1
//! kind       u8       0 = torus, 1 = sphere
//! cutoff     f64
//! quad       u64      sphere quadrature degree (0 on the torus)
//! modes      u64      number of modes, then per mode:
//!              tag u8 (0 torus, 1 sphere), a i32, b i32, c u8, eigenvalue f64
//!              (torus: a,b = wavevector, c = parity 0 cos / 1 sin; sphere: a = l, b = m)
//! product    u64 count, then (i u32, j u32, k u32, value f64) with i ≤ j ≤ k
//! advection  u64 count, then (i, j, k, value) with i < j < k
//! harmonic   u64 count, then (h, j, k, value) with j < k
//! ```
//!
//! Entries are written in sorted order, so encoding is a pure function of the
//! tensor and a cache hit reproduces fresh assembly bit for bit.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::spectrum::{ManifoldKind, ModeLabel, Parity, SpectrumTable};
use crate::triads::{build_triads_with_degree, default_quad_degree, Entry, TriadTensor};

const MAGIC: &[u8; 8] = b"NSMCACHE";
const VERSION: u32 = 1;

pub fn encode(table: &SpectrumTable, tensor: &TriadTensor) -> Result<Vec<u8>> {
    if tensor.table_id() != table.id() {
        return Err(Error::Assembly("tensor does not belong to table".into()));
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(match table.kind() {
        ManifoldKind::Torus => 0,
        ManifoldKind::Sphere => 1,
    });
    out.extend_from_slice(&table.config().cutoff.to_le_bytes());
    out.extend_from_slice(&(tensor.quad_degree() as u64).to_le_bytes());
    out.extend_from_slice(&(table.len() as u64).to_le_bytes());
    for m in table.modes() {
        let (tag, a, b, c) = match m.label {
            ModeLabel::Torus { n, parity } => (0u8, n[0], n[1], (parity == Parity::Sin) as u8),
            ModeLabel::Sphere { l, m } => (1u8, l as i32, m, 0u8),
        };
        out.push(tag);
        out.extend_from_slice(&a.to_le_bytes());
        out.extend_from_slice(&b.to_le_bytes());
        out.push(c);
        out.extend_from_slice(&m.eigenvalue.to_le_bytes());
    }
    for list in [
        tensor.product_entries(),
        tensor.advection_entries(),
        tensor.harmonic_entries(),
    ] {
        out.extend_from_slice(&(list.len() as u64).to_le_bytes());
        for e in list {
            for i in e.idx {
                out.extend_from_slice(&i.to_le_bytes());
            }
            out.extend_from_slice(&e.value.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format("truncated cache file".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Decode a cache image, checking it against the spectrum table it claims to describe.
pub fn decode(bytes: &[u8], table: &SpectrumTable) -> Result<TriadTensor> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported cache version {version}")));
    }
    let kind = match r.u8()? {
        0 => ManifoldKind::Torus,
        1 => ManifoldKind::Sphere,
        k => return Err(Error::Format(format!("unknown manifold tag {k}"))),
    };
    let cutoff = r.f64()?;
    if kind != table.kind() || cutoff.to_bits() != table.config().cutoff.to_bits() {
        return Err(Error::Format("cache key does not match the requested spectrum".into()));
    }
    let quad = r.u64()? as usize;
    let n = r.u64()? as usize;
    if n != table.len() {
        return Err(Error::Format(format!("cache holds {n} modes, table has {}", table.len())));
    }
    for m in table.modes() {
        let tag = r.u8()?;
        let a = r.i32()?;
        let b = r.i32()?;
        let c = r.u8()?;
        let ev = r.f64()?;
        let label = match tag {
            0 => ModeLabel::Torus {
                n: [a, b],
                parity: if c == 1 { Parity::Sin } else { Parity::Cos },
            },
            1 => ModeLabel::Sphere { l: a as u32, m: b },
            t => return Err(Error::Format(format!("unknown mode tag {t}"))),
        };
        if label != m.label || ev.to_bits() != m.eigenvalue.to_bits() {
            return Err(Error::Format(format!("mode {} differs from the table", m.id)));
        }
    }
    let mut lists = Vec::with_capacity(3);
    for _ in 0..3 {
        let count = r.u64()? as usize;
        if count > bytes.len() / 20 {
            return Err(Error::Format("entry count exceeds file size".into()));
        }
        let mut list = Vec::with_capacity(count);
        for _ in 0..count {
            let idx = [r.u32()?, r.u32()?, r.u32()?];
            let value = r.f64()?;
            list.push(Entry { idx, value });
        }
        lists.push(list);
    }
    if r.pos != bytes.len() {
        return Err(Error::Format("trailing bytes in cache file".into()));
    }
    let harmonic = lists.pop().unwrap();
    let advection = lists.pop().unwrap();
    let product = lists.pop().unwrap();
    TriadTensor::from_parts(table.id(), quad, product, advection, harmonic)
}

/// File name encoding the cache key `(kind, cutoff, quadrature degree)`.
pub fn cache_file_name(table: &SpectrumTable, quad_degree: usize) -> String {
    format!(
        "{}-cutoff{:016x}-q{}.nsmc",
        table.kind().name(),
        table.config().cutoff.to_bits(),
        quad_degree
    )
}

/// Outcome of [`load_or_build`].
#[derive(Debug)]
pub struct CacheOutcome {
    pub tensor: TriadTensor,
    pub path: PathBuf,
    pub hit: bool,
}

/// Load the triads for `table` from `dir`, assembling and storing them on a miss.
pub fn load_or_build(dir: &Path, table: &SpectrumTable) -> Result<CacheOutcome> {
    let quad = default_quad_degree(table);
    let path = dir.join(cache_file_name(table, quad));
    if path.exists() {
        let bytes = fs::read(&path)?;
        let tensor = decode(&bytes, table)?;
        return Ok(CacheOutcome {
            tensor,
            path,
            hit: true,
        });
    }
    let tensor = build_triads_with_degree(table, quad)?;
    fs::create_dir_all(dir)?;
    let bytes = encode(table, &tensor)?;
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, &path)?;
    Ok(CacheOutcome {
        tensor,
        path,
        hit: false,
    })
}
