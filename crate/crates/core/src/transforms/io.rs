//! CSV export and a versioned little-endian binary container for kernel and
//! gain tables.
//!
//! Binary layout (all integers little-endian):
//!
//! ```text
//! magic "BKST" | version u32 | kind u32 (1 kernel, 2 gain)
//! axis tag u32 (0 stationary, 1 periodic, 2 window) | start f64 | span f64 | nt u64
//! nx u64 | n u32 | m u32 | rows u32
//! hash length u32 | hash bytes
//! entry count u32, then per entry (row-major): i u32 | j u32 | flags u32
//! per entry: lower f64 × len [| upper f64 × len | own u8 × len]
//! kernel only, per pair (i, j) of an m × m grid: flag u8 [| ψ f64 × nt(nx+1)]
//! ```

use std::io::{Read, Write};

use super::gains::GainTable;
use super::kernel::{KernelEntry, KernelTable};
use crate::error::{Error, Result};
use crate::grid::{TimeAxis, TxTable, Uniform};

const MAGIC: &[u8; 4] = b"BKST";
pub const FORMAT_VERSION: u32 = 1;
const KIND_KERNEL: u32 = 1;
const KIND_GAIN: u32 = 2;

fn fmt(v: f64) -> String {
    format!("{:.16e}", v)
}

/// One row per stored node: `i,j,k,a,b,t,x,xi,value,sheet`.
pub fn kernel_to_csv(kernel: &KernelTable, hash: &str, mut out: impl Write) -> Result<()> {
    writeln!(out, "# config_hash={}", hash)?;
    writeln!(out, "i,j,k,a,b,t,x,xi,value,sheet")?;
    let nn = kernel.grid.nodes();
    for i in 0..kernel.rows {
        for j in 0..kernel.n {
            let e = kernel.entry(i, j);
            for k in 0..kernel.axis.len() {
                let t = kernel.axis.time(k);
                for a in 0..nn {
                    for b in 0..=a {
                        let idx = kernel.node_index(k, a, b);
                        let sheet = e.own_sheet.as_ref().map_or(0, |o| o[idx]);
                        writeln!(
                            out,
                            "{},{},{},{},{},{},{},{},{},{}",
                            i,
                            j,
                            k,
                            a,
                            b,
                            fmt(t),
                            fmt(kernel.grid.x(a)),
                            fmt(kernel.grid.x(b)),
                            fmt(kernel.node(i, j, k, a, b)),
                            sheet
                        )?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// One row per node: `i,j,k,b,t,xi,value`.
pub fn gain_to_csv(gain: &GainTable, hash: &str, mut out: impl Write) -> Result<()> {
    writeln!(out, "# config_hash={}", hash)?;
    writeln!(out, "i,j,k,b,t,xi,value")?;
    for i in 0..gain.m {
        for j in 0..gain.n {
            for k in 0..gain.axis.len() {
                for b in 0..gain.grid.nodes() {
                    writeln!(
                        out,
                        "{},{},{},{},{},{},{}",
                        i,
                        j,
                        k,
                        b,
                        fmt(gain.axis.time(k)),
                        fmt(gain.grid.x(b)),
                        fmt(gain.at(i, j, k, b))
                    )?;
                }
            }
        }
    }
    Ok(())
}

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> Result<()> {
        Ok(self.0.write_all(&[v])?)
    }
    fn u32(&mut self, v: u32) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn f64s(&mut self, v: &[f64]) -> Result<()> {
        let mut buf = Vec::with_capacity(8 * v.len());
        for x in v {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        Ok(self.0.write_all(&buf)?)
    }
    fn header(&mut self, kind: u32, axis: TimeAxis, grid: Uniform, n: usize, m: usize, rows: usize, hash: &str) -> Result<()> {
        self.0.write_all(MAGIC)?;
        self.u32(FORMAT_VERSION)?;
        self.u32(kind)?;
        let (tag, start, span, nt) = match axis {
            TimeAxis::Stationary => (0, 0.0, 0.0, 1),
            TimeAxis::Periodic { start, period, n } => (1, start, period, n),
            TimeAxis::Window { start, end, n } => (2, start, end, n),
        };
        self.u32(tag)?;
        self.f64s(&[start, span])?;
        self.u64(nt as u64)?;
        self.u64(grid.nx as u64)?;
        self.u32(n as u32)?;
        self.u32(m as u32)?;
        self.u32(rows as u32)?;
        self.u32(hash.len() as u32)?;
        Ok(self.0.write_all(hash.as_bytes())?)
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn bytes(&mut self, len: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; len];
        self.0.read_exact(&mut buf).map_err(|e| Error::Format(format!("truncated file: {}", e)))?;
        Ok(buf)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, len: usize) -> Result<Vec<f64>> {
        let raw = self.bytes(8 * len)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

struct Header {
    axis: TimeAxis,
    grid: Uniform,
    n: usize,
    m: usize,
    rows: usize,
    hash: String,
}

fn read_header<R: Read>(r: &mut Reader<R>, kind: u32) -> Result<Header> {
    if r.bytes(4)? != MAGIC {
        return Err(Error::Format("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported version {}", version)));
    }
    let got = r.u32()?;
    if got != kind {
        return Err(Error::Format(format!("expected table kind {}, found {}", kind, got)));
    }
    let tag = r.u32()?;
    let se = r.f64s(2)?;
    let nt = r.u64()? as usize;
    let axis = match tag {
        0 => TimeAxis::Stationary,
        1 => TimeAxis::Periodic { start: se[0], period: se[1], n: nt },
        2 => TimeAxis::Window { start: se[0], end: se[1], n: nt },
        other => return Err(Error::Format(format!("unknown time axis tag {}", other))),
    };
    if nt == 0 || nt > 1 << 24 {
        return Err(Error::Format(format!("implausible time node count {}", nt)));
    }
    let nx = r.u64()? as usize;
    if nx == 0 || nx > 1 << 16 {
        return Err(Error::Format(format!("implausible grid size {}", nx)));
    }
    let n = r.u32()? as usize;
    let m = r.u32()? as usize;
    let rows = r.u32()? as usize;
    if m == 0 || m >= n || rows > n || n > 64 {
        return Err(Error::Format(format!("inconsistent sizes n = {}, m = {}, rows = {}", n, m, rows)));
    }
    let hlen = r.u32()? as usize;
    if hlen > 4096 {
        return Err(Error::Format("hash too long".into()));
    }
    let hash = String::from_utf8(r.bytes(hlen)?).map_err(|_| Error::Format("hash is not UTF-8".into()))?;
    Ok(Header { axis, grid: Uniform::new(nx), n, m, rows, hash })
}

pub fn write_kernel(kernel: &KernelTable, hash: &str, out: impl Write) -> Result<()> {
    let mut w = Writer(out);
    w.header(KIND_KERNEL, kernel.axis, kernel.grid, kernel.n, kernel.m, kernel.rows, hash)?;
    w.u32(kernel.entries.len() as u32)?;
    for (e_idx, e) in kernel.entries.iter().enumerate() {
        w.u32((e_idx / kernel.n) as u32)?;
        w.u32((e_idx % kernel.n) as u32)?;
        w.u32(u32::from(e.is_two_sheet()))?;
    }
    for e in &kernel.entries {
        w.f64s(&e.lower)?;
        if let (Some(up), Some(own)) = (&e.upper, &e.own_sheet) {
            w.f64s(up)?;
            w.0.write_all(own)?;
        }
    }
    for p in &kernel.psi {
        match p {
            Some(table) => {
                w.u8(1)?;
                w.f64s(&table.data)?;
            }
            None => w.u8(0)?,
        }
    }
    Ok(())
}

/// Reads a kernel written by [`write_kernel`]; returns the table and the
/// embedded configuration hash.
pub fn read_kernel(input: impl Read) -> Result<(KernelTable, String)> {
    let mut r = Reader(input);
    let h = read_header(&mut r, KIND_KERNEL)?;
    let count = r.u32()? as usize;
    if count != h.rows * h.n {
        return Err(Error::Format(format!("expected {} entries, found {}", h.rows * h.n, count)));
    }
    let mut flags = Vec::with_capacity(count);
    for e_idx in 0..count {
        let (i, j, f) = (r.u32()? as usize, r.u32()? as usize, r.u32()?);
        if i != e_idx / h.n || j != e_idx % h.n || f > 1 {
            return Err(Error::Format(format!("entry order broken at {}", e_idx)));
        }
        flags.push(f == 1);
    }
    let len = h.axis.len() * h.grid.nodes() * h.grid.nodes();
    let mut entries = Vec::with_capacity(count);
    for two in flags {
        let lower = r.f64s(len)?;
        let (upper, own_sheet) = if two { (Some(r.f64s(len)?), Some(r.bytes(len)?)) } else { (None, None) };
        entries.push(KernelEntry { lower, upper, own_sheet });
    }
    let mut psi = Vec::with_capacity(h.m * h.m);
    for _ in 0..h.m * h.m {
        psi.push(match r.u8()? {
            0 => None,
            1 => Some(TxTable { axis: h.axis, grid: h.grid, data: r.f64s(h.axis.len() * h.grid.nodes())? }),
            other => return Err(Error::Format(format!("bad surface flag {}", other))),
        });
    }
    let table = KernelTable { axis: h.axis, grid: h.grid, n: h.n, m: h.m, rows: h.rows, entries, psi };
    Ok((table, h.hash))
}

pub fn write_gain(gain: &GainTable, hash: &str, out: impl Write) -> Result<()> {
    let mut w = Writer(out);
    w.header(KIND_GAIN, gain.axis, gain.grid, gain.n, gain.m, gain.m, hash)?;
    w.u32((gain.m * gain.n) as u32)?;
    for e_idx in 0..gain.m * gain.n {
        w.u32((e_idx / gain.n) as u32)?;
        w.u32((e_idx % gain.n) as u32)?;
        w.u32(0)?;
    }
    for e in &gain.data {
        w.f64s(&e.data)?;
    }
    Ok(())
}

pub fn read_gain(input: impl Read) -> Result<(GainTable, String)> {
    let mut r = Reader(input);
    let h = read_header(&mut r, KIND_GAIN)?;
    let count = r.u32()? as usize;
    if count != h.m * h.n {
        return Err(Error::Format(format!("expected {} entries, found {}", h.m * h.n, count)));
    }
    for e_idx in 0..count {
        let (i, j, f) = (r.u32()? as usize, r.u32()? as usize, r.u32()?);
        if i != e_idx / h.n || j != e_idx % h.n || f != 0 {
            return Err(Error::Format(format!("entry order broken at {}", e_idx)));
        }
    }
    let len = h.axis.len() * h.grid.nodes();
    let data = (0..count)
        .map(|_| Ok(TxTable { axis: h.axis, grid: h.grid, data: r.f64s(len)? }))
        .collect::<Result<Vec<_>>>()?;
    Ok((GainTable { axis: h.axis, grid: h.grid, m: h.m, n: h.n, data }, h.hash))
}
