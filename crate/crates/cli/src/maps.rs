//! CSV matrices (row = y, column = x) and 8-bit graymaps.
//!
//! A single quantity is a header row `name [unit],0,1,...` followed by one
//! row per `y` that starts with the `y` index. Missing cells are empty.
//! Map files hold several such blocks separated by blank lines, preceded by
//! `#` metadata lines.

use std::fmt::Write as _;
use std::path::Path;

use telegraph_core::bayes::Kde;
use telegraph_core::calibrate::{CalibrationResult, ParameterMap};
use telegraph_core::damage::{ProbabilityMap, TestResult};
use telegraph_core::MaterialParams;

use crate::error::{CliError, Result};

/// One named quantity on the grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub name: String,
    pub unit: String,
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<Option<f64>>,
}

impl Matrix {
    pub fn new(name: &str, unit: &str, nx: usize, ny: usize, values: Vec<Option<f64>>) -> Self {
        assert_eq!(values.len(), nx * ny, "matrix size");
        Self { name: name.into(), unit: unit.into(), nx, ny, values }
    }

    pub fn get(&self, ix: usize, iy: usize) -> Option<f64> {
        self.values[iy * self.nx + ix]
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{} [{}]", self.name, self.unit);
        for ix in 0..self.nx {
            write!(s, ",{ix}").unwrap();
        }
        s.push('\n');
        for iy in 0..self.ny {
            write!(s, "{iy}").unwrap();
            for ix in 0..self.nx {
                s.push(',');
                if let Some(v) = self.get(ix, iy) {
                    write!(s, "{v}").unwrap();
                }
            }
            s.push('\n');
        }
        s
    }

    /// Min and max over present cells.
    pub fn range(&self) -> Option<(f64, f64)> {
        let mut it = self.values.iter().flatten();
        let first = *it.next()?;
        Some(it.fold((first, first), |(lo, hi), &v| (lo.min(v), hi.max(v))))
    }
}

fn parse_matrix(lines: &[(usize, &str)], path: &Path) -> Result<Matrix> {
    let (hno, header) = lines[0];
    let mut cols = header.split(',');
    let title = cols.next().unwrap_or("");
    let (name, unit) = match title.split_once(" [") {
        Some((n, u)) if u.ends_with(']') => (n.to_string(), u[..u.len() - 1].to_string()),
        _ => return Err(CliError::parse(path, hno, format!("expected 'name [unit]', got '{title}'"))),
    };
    let nx = cols.count();
    let ny = lines.len() - 1;
    if nx == 0 || ny == 0 {
        return Err(CliError::parse(path, hno, "empty matrix"));
    }
    let mut values = Vec::with_capacity(nx * ny);
    for (iy, &(no, row)) in lines[1..].iter().enumerate() {
        let fields: Vec<&str> = row.split(',').collect();
        if fields.len() != nx + 1 {
            return Err(CliError::parse(path, no, format!("expected {} columns, got {}", nx + 1, fields.len())));
        }
        if fields[0].trim().parse::<usize>().ok() != Some(iy) {
            return Err(CliError::parse(path, no, format!("expected row index {iy}")));
        }
        for f in &fields[1..] {
            let f = f.trim();
            if f.is_empty() {
                values.push(None);
            } else {
                let v: f64 = f.parse().map_err(|_| CliError::parse(path, no, format!("cannot parse '{f}'")))?;
                values.push(Some(v));
            }
        }
    }
    Ok(Matrix { name, unit, nx, ny, values })
}

/// Metadata lines and matrices of a map file.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MapFile {
    pub meta: Vec<String>,
    pub matrices: Vec<Matrix>,
}

impl MapFile {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for m in &self.meta {
            writeln!(s, "# {m}").unwrap();
        }
        for (i, m) in self.matrices.iter().enumerate() {
            if i > 0 {
                s.push('\n');
            }
            s.push_str(&m.to_csv());
        }
        s
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut out = MapFile::default();
        let mut block: Vec<(usize, &str)> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if let Some(m) = line.strip_prefix('#') {
                out.meta.push(m.trim_start().to_string());
            } else if line.trim().is_empty() {
                if !block.is_empty() {
                    out.matrices.push(parse_matrix(&block, path)?);
                    block.clear();
                }
            } else {
                block.push((i + 1, line));
            }
        }
        if !block.is_empty() {
            out.matrices.push(parse_matrix(&block, path)?);
        }
        Ok(out)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| CliError::io(path, e))
    }

    pub fn matrix(&self, name: &str) -> Option<&Matrix> {
        self.matrices.iter().find(|m| m.name == name)
    }

    /// Value of `key=value` in a metadata line starting with `kind`.
    pub fn meta_value(&self, kind: &str, key: &str) -> Option<&str> {
        self.meta.iter().filter(|m| m.split_whitespace().next() == Some(kind)).find_map(|m| {
            m.split_whitespace().find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        })
    }

    fn need(&self, name: &str, path: &Path) -> Result<&Matrix> {
        self.matrix(name).ok_or_else(|| CliError::parse(path, 0, format!("map has no '{name}' block")))
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n")
}

fn unescape(s: &str) -> String {
    let mut out = String::new();
    let mut it = s.chars();
    while let Some(c) = it.next() {
        match (c, it.clone().next()) {
            ('\\', Some('n')) => {
                out.push('\n');
                it.next();
            }
            ('\\', Some('\\')) => {
                out.push('\\');
                it.next();
            }
            _ => out.push(c),
        }
    }
    out
}

fn push_failures(meta: &mut Vec<String>, failures: &[(usize, String)]) {
    for (i, m) in failures {
        meta.push(format!("failure {i} {}", escape(m)));
    }
}

fn read_failures(file: &MapFile, path: &Path) -> Result<Vec<(usize, String)>> {
    file.meta
        .iter()
        .filter_map(|m| m.strip_prefix("failure "))
        .map(|rest| {
            let (i, msg) = rest.split_once(' ').unwrap_or((rest, ""));
            let i = i.parse().map_err(|_| CliError::parse(path, 0, format!("bad failure index '{i}'")))?;
            Ok((i, unescape(msg)))
        })
        .collect()
}

fn same_shape(ms: &[&Matrix], path: &Path) -> Result<(usize, usize)> {
    let (nx, ny) = (ms[0].nx, ms[0].ny);
    if ms.iter().any(|m| m.nx != nx || m.ny != ny) {
        return Err(CliError::parse(path, 0, "map blocks differ in shape"));
    }
    Ok((nx, ny))
}

pub const PARAMETER_MAP: &str = "parameter-map";

pub fn parameter_map_file(map: &ParameterMap) -> MapFile {
    let (nx, ny) = (map.nx, map.ny);
    let col = |f: &dyn Fn(&CalibrationResult) -> f64| map.cells.iter().map(|c| c.as_ref().map(f)).collect();
    let mut meta = vec![format!("{PARAMETER_MAP} nx={nx} ny={ny}"), format!("label {}", escape(&map.label))];
    push_failures(&mut meta, &map.failures);
    MapFile {
        meta,
        matrices: vec![
            Matrix::new("b", "1/us", nx, ny, col(&|r| r.params.b)),
            Matrix::new("c", "L/us", nx, ny, col(&|r| r.params.c)),
            Matrix::new("misfit", "L2", nx, ny, col(&|r| r.misfit)),
            Matrix::new("iterations", "count", nx, ny, col(&|r| r.iterations as f64)),
            Matrix::new("converged", "flag", nx, ny, col(&|r| r.converged as u8 as f64)),
        ],
    }
}

pub fn parameter_map_from_file(file: &MapFile, path: &Path) -> Result<ParameterMap> {
    let get = |n| file.need(n, path);
    let (b, c, misfit, iters, conv) = (get("b")?, get("c")?, get("misfit")?, get("iterations")?, get("converged")?);
    let (nx, ny) = same_shape(&[b, c, misfit, iters, conv], path)?;
    let mut cells = Vec::with_capacity(nx * ny);
    for i in 0..nx * ny {
        cells.push(match (b.values[i], c.values[i], misfit.values[i], iters.values[i], conv.values[i]) {
            (Some(b), Some(c), Some(m), Some(it), Some(cv)) => Some(CalibrationResult {
                params: MaterialParams { b, c },
                misfit: m,
                iterations: it as usize,
                converged: cv != 0.0,
            }),
            (None, None, None, None, None) => None,
            _ => return Err(CliError::parse(path, 0, format!("cell {i} is only partly present"))),
        });
    }
    let label = file.meta.iter().find_map(|m| m.strip_prefix("label ")).map(unescape).unwrap_or_default();
    Ok(ParameterMap { nx, ny, cells, failures: read_failures(file, path)?, label })
}

pub const PROBABILITY_MAP: &str = "probability-map";

/// Thresholds recorded in a probability-map header.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdInfo {
    pub b_crit: f64,
    pub c_crit: f64,
    pub quantile: f64,
}

pub fn probability_map_file(map: &ProbabilityMap, t: Option<ThresholdInfo>) -> MapFile {
    let (nx, ny) = (map.nx, map.ny);
    let col = |f: &dyn Fn(&TestResult) -> f64| map.cells.iter().map(|c| c.as_ref().map(f)).collect();
    let mut meta = vec![format!("{PROBABILITY_MAP} nx={nx} ny={ny} level={}", map.level)];
    if let Some(t) = t {
        meta.push(format!("thresholds b_crit={} c_crit={} quantile={}", t.b_crit, t.c_crit, t.quantile));
    }
    push_failures(&mut meta, &map.failures);
    MapFile {
        meta,
        matrices: vec![
            Matrix::new("p_null", "probability", nx, ny, col(&|r| r.p_null)),
            Matrix::new("rejected", "flag", nx, ny, col(&|r| r.rejected as u8 as f64)),
            Matrix::new("standard_error", "probability", nx, ny, col(&|r| r.standard_error)),
            Matrix::new("acceptance_rate", "fraction", nx, ny, col(&|r| r.acceptance_rate)),
            Matrix::new("unreliable", "flag", nx, ny, col(&|r| r.unreliable as u8 as f64)),
        ],
    }
}

pub fn probability_map_from_file(file: &MapFile, path: &Path) -> Result<ProbabilityMap> {
    let get = |n| file.need(n, path);
    let (p, rej, se, acc, unrel) =
        (get("p_null")?, get("rejected")?, get("standard_error")?, get("acceptance_rate")?, get("unreliable")?);
    let (nx, ny) = same_shape(&[p, rej, se, acc, unrel], path)?;
    let level: f64 = file
        .meta_value(PROBABILITY_MAP, "level")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| CliError::parse(path, 1, "missing level in header"))?;
    let mut cells = Vec::with_capacity(nx * ny);
    for i in 0..nx * ny {
        cells.push(match (p.values[i], rej.values[i], se.values[i], acc.values[i], unrel.values[i]) {
            (Some(p), Some(r), Some(s), Some(a), Some(u)) => Some(TestResult {
                p_null: p,
                rejected: r != 0.0,
                standard_error: s,
                acceptance_rate: a,
                unreliable: u != 0.0,
            }),
            (None, None, None, None, None) => None,
            _ => return Err(CliError::parse(path, 0, format!("cell {i} is only partly present"))),
        });
    }
    Ok(ProbabilityMap { nx, ny, level, cells, failures: read_failures(file, path)? })
}

pub fn threshold_info(file: &MapFile) -> Option<ThresholdInfo> {
    Some(ThresholdInfo {
        b_crit: file.meta_value("thresholds", "b_crit")?.parse().ok()?,
        c_crit: file.meta_value("thresholds", "c_crit")?.parse().ok()?,
        quantile: file.meta_value("thresholds", "quantile")?.parse().ok()?,
    })
}

/// Kernel density on cell centres of the prior box: header row of `b`
/// centres, then one row per `c` centre.
pub fn kde_grid_csv(kde: &Kde, nb: usize, nc: usize) -> String {
    let pb = kde.prior;
    let grid = kde.grid(nb, nc);
    let mut s = String::from("density [1/(us^-1 L/us)] c\\b");
    for i in 0..nb {
        write!(s, ",{}", pb.b_min + (i as f64 + 0.5) * pb.b_range() / nb as f64).unwrap();
    }
    s.push('\n');
    for (j, row) in grid.iter().enumerate() {
        write!(s, "{}", pb.c_min + (j as f64 + 0.5) * pb.c_range() / nc as f64).unwrap();
        for v in row {
            write!(s, ",{v}").unwrap();
        }
        s.push('\n');
    }
    s
}

/// Binary 8-bit graymap, `y = 0` in the top row. Values map linearly from
/// `[min, max]` to `[0, 255]`; missing cells are 0; a constant map is 128.
pub fn pgm(m: &Matrix, range: Option<(f64, f64)>) -> Vec<u8> {
    let (lo, hi) = range.or_else(|| m.range()).unwrap_or((0.0, 1.0));
    let mut out = format!(
        "P5\n# quantity={} unit={} min={lo} max={hi} missing=0\n{} {}\n255\n",
        m.name, m.unit, m.nx, m.ny
    )
    .into_bytes();
    for v in &m.values {
        out.push(match v {
            None => 0,
            Some(_) if hi <= lo => 128,
            Some(v) => (255.0 * ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).round() as u8,
        });
    }
    out
}
