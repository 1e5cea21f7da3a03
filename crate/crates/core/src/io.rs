//! Binary grid and observation files.
//!
//! ```text
//! grid file
//!   magic     8 bytes "PAGRID\0\x01"
//!   version   u32
//!   spec      5 × f64 (lat_min, lat_max, lon_min, lon_max, res), u8 flags (bit 0 periodic)
//!   day       i64
//!   vars      u32 count, then u32 length + UTF-8 name
//!   mask      ceil(H·W / 8) bytes, row-major, LSB first, 1 = ocean
//!   values    H·W·V × f32, row-major, cell-interleaved; NaN on land
//!   checksum  32 bytes SHA-256 of everything above
//!
//! observation file
//!   magic     8 bytes "PAOBSF\0\x01"
//!   version   u32
//!   source    u8 code
//!   day       i64
//!   n, C      u64, u32
//!   coords    n × (f64 lat, f64 lon)
//!   values    n·C × f64
//!   checksum  32 bytes SHA-256
//! ```
//!
//! All integers and floats are little-endian.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, Array3};
use sha2::{Digest, Sha256};

use crate::geo::{GridField, GridSpec, Var};
use crate::obs::{ObservationSet, SourceId};
use crate::{Error, Result};

pub const GRID_MAGIC: &[u8; 8] = b"PAGRID\0\x01";
pub const OBS_MAGIC: &[u8; 8] = b"PAOBSF\0\x01";
pub const VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Format("file truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid UTF-8".into()))
    }
}

/// Splits off and verifies the trailing checksum, returning the body.
fn verified_body<'a>(bytes: &'a [u8], magic: &[u8; 8]) -> Result<&'a [u8]> {
    if bytes.len() < magic.len() + 4 + 32 {
        return Err(Error::Format("file too short".into()));
    }
    if &bytes[..8] != magic {
        return Err(Error::Format("bad magic bytes".into()));
    }
    let (body, sum) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != sum {
        return Err(Error::Format("checksum mismatch".into()));
    }
    Ok(body)
}

fn seal(mut buf: Vec<u8>) -> Vec<u8> {
    let sum = Sha256::digest(&buf);
    buf.extend_from_slice(&sum);
    buf
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

pub fn grid_to_bytes(field: &GridField) -> Vec<u8> {
    let s = &field.spec;
    let mut buf = Vec::with_capacity(64 + field.values.len() * 4 + field.mask.len() / 8);
    buf.extend_from_slice(GRID_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for v in [s.lat_min, s.lat_max, s.lon_min, s.lon_max, s.res] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.push(s.periodic_lon as u8);
    buf.extend_from_slice(&field.day.to_le_bytes());
    buf.extend_from_slice(&(field.vars.len() as u32).to_le_bytes());
    for v in &field.vars {
        put_str(&mut buf, v.name());
    }
    let mut bits = vec![0u8; field.mask.len().div_ceil(8)];
    for (n, &m) in field.mask.iter().enumerate() {
        if m {
            bits[n / 8] |= 1 << (n % 8);
        }
    }
    buf.extend_from_slice(&bits);
    for &v in field.values.iter() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    seal(buf)
}

pub fn grid_from_bytes(bytes: &[u8]) -> Result<GridField> {
    let body = verified_body(bytes, GRID_MAGIC)?;
    let mut r = Reader { buf: body, pos: 8 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported grid file version {version}")));
    }
    let (lat_min, lat_max, lon_min, lon_max, res) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    let flags = r.u8()?;
    let spec = GridSpec::new((lat_min, lat_max), (lon_min, lon_max), res, flags & 1 == 1)
        .map_err(|e| Error::Format(format!("bad grid spec: {e}")))?;
    let day = r.i64()?;
    let nv = r.u32()? as usize;
    let mut vars = Vec::with_capacity(nv);
    for _ in 0..nv {
        let name = r.string()?;
        vars.push(Var::from_name(&name).ok_or_else(|| Error::Format(format!("unknown variable {name}")))?);
    }
    let (h, w) = spec.shape();
    let bits = r.take((h * w).div_ceil(8))?;
    let mask = Array2::from_shape_fn((h, w), |(i, j)| {
        let n = i * w + j;
        bits[n / 8] >> (n % 8) & 1 == 1
    });
    let mut vals = Vec::with_capacity(h * w * nv);
    for _ in 0..h * w * nv {
        vals.push(r.f32()? as f64);
    }
    if r.pos != body.len() {
        return Err(Error::Format("trailing bytes in grid file".into()));
    }
    let values = Array3::from_shape_vec((h, w, nv), vals).expect("sized above");
    GridField::new(spec, vars, values, mask, day).map_err(|e| Error::Format(format!("invalid grid contents: {e}")))
}

/// Rounds every value through the on-disk precision.
pub fn quantize(field: &GridField) -> GridField {
    let mut out = field.clone();
    out.values.mapv_inplace(|v| v as f32 as f64);
    out
}

pub fn write_grid(path: &Path, field: &GridField) -> Result<()> {
    write_atomic(path, &grid_to_bytes(field))
}

pub fn read_grid(path: &Path) -> Result<GridField> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    grid_from_bytes(&bytes).map_err(|e| annotate(path, e))
}

/// Human-readable summary of a grid file, values excluded.
pub fn grid_header_dump(path: &Path) -> Result<String> {
    let f = read_grid(path)?;
    let s = &f.spec;
    let mut out = String::new();
    let (h, w) = s.shape();
    writeln!(out, "format      PAGRID v{VERSION}").unwrap();
    writeln!(out, "lat         [{}, {}]", s.lat_min, s.lat_max).unwrap();
    writeln!(out, "lon         [{}, {}]{}", s.lon_min, s.lon_max, if s.periodic_lon { " periodic" } else { "" }).unwrap();
    writeln!(out, "res         {}", s.res).unwrap();
    writeln!(out, "shape       {h} x {w}").unwrap();
    writeln!(out, "day         {}", f.day).unwrap();
    writeln!(out, "ocean cells {} of {}", f.ocean_count(), h * w).unwrap();
    for (k, v) in f.vars.iter().enumerate() {
        let ch = f.values.index_axis(ndarray::Axis(2), k);
        let ocean: Vec<f64> = ch.iter().zip(f.mask.iter()).filter(|(_, &m)| m).map(|(&x, _)| x).collect();
        let lo = ocean.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ocean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = ocean.iter().sum::<f64>() / ocean.len().max(1) as f64;
        writeln!(out, "var {:<7} min {lo:.6} max {hi:.6} mean {mean:.6}", v.name()).unwrap();
    }
    Ok(out)
}

pub fn obs_to_bytes(obs: &ObservationSet) -> Vec<u8> {
    let (n, c) = obs.values.dim();
    let mut buf = Vec::with_capacity(40 + n * (16 + 8 * c));
    buf.extend_from_slice(OBS_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.push(obs.source.code());
    buf.extend_from_slice(&obs.day.to_le_bytes());
    buf.extend_from_slice(&(n as u64).to_le_bytes());
    buf.extend_from_slice(&(c as u32).to_le_bytes());
    for &(lat, lon) in &obs.coords {
        buf.extend_from_slice(&lat.to_le_bytes());
        buf.extend_from_slice(&lon.to_le_bytes());
    }
    for &v in obs.values.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    seal(buf)
}

pub fn obs_from_bytes(bytes: &[u8]) -> Result<ObservationSet> {
    let body = verified_body(bytes, OBS_MAGIC)?;
    let mut r = Reader { buf: body, pos: 8 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported observation file version {version}")));
    }
    let code = r.u8()?;
    let source = SourceId::from_code(code).ok_or_else(|| Error::Format(format!("unknown source code {code}")))?;
    let day = r.i64()?;
    let n = r.u64()? as usize;
    let c = r.u32()? as usize;
    if c != source.channels().len() {
        return Err(Error::Format(format!("{source} file declares {c} channels")));
    }
    if body.len().saturating_sub(r.pos) != n * (16 + 8 * c) {
        return Err(Error::Format("observation payload length does not match header".into()));
    }
    let mut coords = Vec::with_capacity(n);
    for _ in 0..n {
        coords.push((r.f64()?, r.f64()?));
    }
    let mut vals = Vec::with_capacity(n * c);
    for _ in 0..n * c {
        vals.push(r.f64()?);
    }
    let values = Array2::from_shape_vec((n, c), vals).expect("sized above");
    let obs = ObservationSet { source, day, coords, values };
    obs.validate()?;
    Ok(obs)
}

pub fn write_obs(path: &Path, obs: &ObservationSet) -> Result<()> {
    write_atomic(path, &obs_to_bytes(obs))
}

pub fn read_obs(path: &Path) -> Result<ObservationSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    obs_from_bytes(&bytes).map_err(|e| annotate(path, e))
}

/// One row per point: `lat,lon,<channel>...`.
pub fn obs_to_csv<W: std::io::Write>(obs: &ObservationSet, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["lat".to_string(), "lon".to_string()];
    header.extend(obs.source.channels().iter().map(|s| s.to_string()));
    let csv_err = |e: csv::Error| Error::Format(format!("CSV export failed: {e}"));
    w.write_record(&header).map_err(csv_err)?;
    for (&(lat, lon), row) in obs.coords.iter().zip(obs.values.rows()) {
        let mut rec = vec![lat.to_string(), lon.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Format(format!("CSV export failed: {e}")))?;
    Ok(())
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Hex SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn annotate(path: &Path, e: Error) -> Error {
    match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    }
}
