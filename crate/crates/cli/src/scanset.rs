//! Scan-set files: a text header terminated by `end`, then little-endian
//! `f64` blocks. The optional excitation block comes first, followed by one
//! block per present cell in row-major order.
//!
//! ```text
//! TELEGRAPH-SCANSET 1
//! dt 0.0025
//! n_samples 14000
//! t0 0
//! t_ex 11.8
//! grid 21 19
//! resolution 5 5
//! label synthetic seed=7
//! present 1111...
//! excitation 1
//! end
//! ```

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use telegraph_core::{AScan, ExcitationPulse, ScanSet, TimeGrid};

use crate::error::{CliError, Result};

pub const MAGIC: &str = "TELEGRAPH-SCANSET 1";

pub fn write_scan_set(set: &ScanSet, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode(set, &mut w).map_err(|e| CliError::io(path, e))?;
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn encode<W: Write>(set: &ScanSet, w: &mut W) -> std::io::Result<()> {
    let g = set.grid();
    let (nx, ny) = set.shape();
    let (rx, ry) = set.resolution();
    let present: String = set.cells().iter().map(|c| if c.is_some() { '1' } else { '0' }).collect();
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "dt {}", g.dt())?;
    writeln!(w, "n_samples {}", g.n_samples())?;
    writeln!(w, "t0 {}", g.t0())?;
    writeln!(w, "t_ex {}", set.t_ex())?;
    writeln!(w, "grid {nx} {ny}")?;
    writeln!(w, "resolution {rx} {ry}")?;
    writeln!(w, "label {}", set.label())?;
    writeln!(w, "present {present}")?;
    writeln!(w, "excitation {}", set.excitation().is_some() as u8)?;
    writeln!(w, "end")?;
    let mut block = |samples: &[f64]| -> std::io::Result<()> {
        for s in samples {
            w.write_all(&s.to_le_bytes())?;
        }
        Ok(())
    };
    if let Some(p) = set.excitation() {
        block(p.samples())?;
    }
    for scan in set.present() {
        block(scan.samples())?;
    }
    Ok(())
}

pub fn read_scan_set(path: &Path) -> Result<ScanSet> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    decode(&mut BufReader::new(file), path)
}

struct Header {
    grid: TimeGrid,
    t_ex: f64,
    shape: (usize, usize),
    resolution: (f64, f64),
    label: String,
    present: Vec<bool>,
    excitation: bool,
}

pub fn decode<R: BufRead>(r: &mut R, path: &Path) -> Result<ScanSet> {
    let (header, header_bytes) = read_header(r, path)?;
    let n = header.grid.n_samples();
    let mut set = ScanSet::new(header.grid, header.shape, header.resolution, header.t_ex, header.label)
        .map_err(|e| CliError::parse(path, 1, e.to_string()))?;
    let mut offset = header_bytes;
    let mut buf = vec![0u8; 8 * n];
    let mut block = |r: &mut R, offset: &mut u64| -> Result<Vec<f64>> {
        r.read_exact(&mut buf).map_err(|_| CliError::Payload {
            path: path.to_path_buf(),
            offset: *offset,
            message: format!("truncated sample block, expected {n} samples"),
        })?;
        let mut out = Vec::with_capacity(n);
        for (i, chunk) in buf.chunks_exact(8).enumerate() {
            let v = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
            if !v.is_finite() {
                return Err(CliError::Payload {
                    path: path.to_path_buf(),
                    offset: *offset + 8 * i as u64,
                    message: format!("non-finite sample {v}"),
                });
            }
            out.push(v);
        }
        *offset += 8 * n as u64;
        Ok(out)
    };
    if header.excitation {
        let samples = block(r, &mut offset)?;
        let pulse = ExcitationPulse::new(header.grid, samples, header.t_ex)?;
        set.set_excitation(Some(pulse))?;
    }
    let (nx, _) = header.shape;
    for (index, _) in header.present.iter().enumerate().filter(|(_, &p)| p) {
        let samples = block(r, &mut offset)?;
        let loc = set.location_of(index % nx, index / nx);
        set.insert(AScan::new(header.grid, samples, loc)?)?;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| CliError::io(path, e))? != 0 {
        return Err(CliError::Payload {
            path: path.to_path_buf(),
            offset,
            message: "trailing bytes after the last sample block".into(),
        });
    }
    Ok(set)
}

fn read_header<R: BufRead>(r: &mut R, path: &Path) -> Result<(Header, u64)> {
    let mut bytes = 0u64;
    let mut line_no = 0;
    let mut next = |r: &mut R| -> Result<(usize, String)> {
        let mut line = String::new();
        let got = r.read_line(&mut line).map_err(|_| CliError::parse(path, line_no + 1, "header is not valid text"))?;
        line_no += 1;
        if got == 0 {
            return Err(CliError::parse(path, line_no, "unexpected end of header"));
        }
        bytes += got as u64;
        Ok((line_no, line.trim_end_matches(['\n', '\r']).to_string()))
    };
    let (_, magic) = next(r)?;
    if magic != MAGIC {
        return Err(CliError::parse(path, 1, format!("expected '{MAGIC}'")));
    }
    let mut field = |r: &mut R, key: &str| -> Result<(usize, String)> {
        let (no, line) = next(r)?;
        match line.split_once(' ') {
            Some((k, v)) if k == key => Ok((no, v.to_string())),
            _ if line == key => Ok((no, String::new())),
            _ => Err(CliError::parse(path, no, format!("expected '{key}' field, got '{line}'"))),
        }
    };
    fn parse<T: std::str::FromStr>(path: &Path, (no, v): &(usize, String)) -> Result<T> {
        v.trim().parse().map_err(|_| CliError::parse(path, *no, format!("cannot parse '{v}'")))
    }
    fn pair<T: std::str::FromStr>(path: &Path, (no, v): &(usize, String)) -> Result<(T, T)> {
        let parts: Vec<&str> = v.split_whitespace().collect();
        if parts.len() != 2 {
            return Err(CliError::parse(path, *no, format!("expected two values, got '{v}'")));
        }
        Ok((parse(path, &(*no, parts[0].into()))?, parse(path, &(*no, parts[1].into()))?))
    }
    let dt: f64 = parse(path, &field(r, "dt")?)?;
    let n: usize = parse(path, &field(r, "n_samples")?)?;
    let t0_line = field(r, "t0")?;
    let t0: f64 = parse(path, &t0_line)?;
    let grid = TimeGrid::new(dt, n, t0).map_err(|e| CliError::parse(path, t0_line.0, e.to_string()))?;
    let t_ex: f64 = parse(path, &field(r, "t_ex")?)?;
    let shape: (usize, usize) = pair(path, &field(r, "grid")?)?;
    let resolution: (f64, f64) = pair(path, &field(r, "resolution")?)?;
    let (_, label) = field(r, "label")?;
    let (pno, bits) = field(r, "present")?;
    if bits.len() != shape.0 * shape.1 || !bits.bytes().all(|b| b == b'0' || b == b'1') {
        return Err(CliError::parse(path, pno, format!("expected {} presence flags", shape.0 * shape.1)));
    }
    let ex_line = field(r, "excitation")?;
    let excitation: u8 = parse(path, &ex_line)?;
    if excitation > 1 {
        return Err(CliError::parse(path, ex_line.0, "excitation flag must be 0 or 1"));
    }
    field(r, "end")?;
    let header = Header {
        grid,
        t_ex,
        shape,
        resolution,
        label,
        present: bits.bytes().map(|b| b == b'1').collect(),
        excitation: excitation == 1,
    };
    Ok((header, bytes))
}
