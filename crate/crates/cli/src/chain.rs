//! Chain CSV: `#` header lines with everything needed to replay the run,
//! then `b,c` rows of the post-burn-in samples.

use std::fmt::Write as _;
use std::path::Path;

use telegraph_core::bayes::{ChainDiagnostics, PosteriorChain, ProposalSchedule, HIGH_ACCEPTANCE, LOW_ACCEPTANCE};
use telegraph_core::{MaterialParams, PriorBox};

use crate::error::{CliError, Result};

pub const MAGIC: &str = "telegraph-chain 1";

pub fn chain_to_csv(chain: &PosteriorChain) -> String {
    let p = &chain.prior;
    let s = &chain.schedule;
    let mut out = String::new();
    writeln!(out, "# {MAGIC}").unwrap();
    writeln!(out, "# seed={}", chain.seed).unwrap();
    writeln!(out, "# box={},{},{},{}", p.b_min, p.b_max, p.c_min, p.c_max).unwrap();
    writeln!(out, "# schedule={},{},{}", s.eps_early, s.eps_late, s.switch_step).unwrap();
    writeln!(out, "# burn_in={}", chain.burn_in).unwrap();
    writeln!(out, "# accepted={}", chain.accepted).unwrap();
    writeln!(out, "# evaluations={}", chain.diagnostics.evaluations).unwrap();
    out.push_str("b,c\n");
    for q in &chain.samples {
        writeln!(out, "{},{}", q.b, q.c).unwrap();
    }
    out
}

pub fn write_chain(chain: &PosteriorChain, path: &Path) -> Result<()> {
    std::fs::write(path, chain_to_csv(chain)).map_err(|e| CliError::io(path, e))
}

pub fn read_chain(path: &Path) -> Result<PosteriorChain> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_chain(&text, path)
}

fn floats(v: &str, n: usize, path: &Path, line: usize) -> Result<Vec<f64>> {
    let out: Vec<f64> = v
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| CliError::parse(path, line, format!("cannot parse '{v}'")))?;
    if out.len() != n {
        return Err(CliError::parse(path, line, format!("expected {n} values, got '{v}'")));
    }
    Ok(out)
}

pub fn parse_chain(text: &str, path: &Path) -> Result<PosteriorChain> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim_start_matches('#').trim() == MAGIC => {}
        _ => return Err(CliError::parse(path, 1, format!("expected '# {MAGIC}'"))),
    }
    let mut header = |key: &str| -> Result<(usize, String)> {
        let (no, l) = lines.next().ok_or_else(|| CliError::parse(path, 0, "truncated header"))?;
        let v = l
            .strip_prefix("# ")
            .and_then(|r| r.strip_prefix(key))
            .and_then(|r| r.strip_prefix('='))
            .ok_or_else(|| CliError::parse(path, no, format!("expected '# {key}=...'")))?;
        Ok((no, v.to_string()))
    };
    let int = |(no, v): (usize, String)| -> Result<u64> {
        v.parse().map_err(|_| CliError::parse(path, no, format!("cannot parse '{v}'")))
    };
    let seed = int(header("seed")?)?;
    let (bno, bv) = header("box")?;
    let b = floats(&bv, 4, path, bno)?;
    let prior = PriorBox::new(b[0], b[1], b[2], b[3]).map_err(|e| CliError::parse(path, bno, e.to_string()))?;
    let (sno, sv) = header("schedule")?;
    let parts: Vec<&str> = sv.split(',').collect();
    if parts.len() != 3 {
        return Err(CliError::parse(path, sno, "schedule needs eps_early,eps_late,switch_step"));
    }
    let e = floats(&parts[..2].join(","), 2, path, sno)?;
    let switch: usize = parts[2].trim().parse().map_err(|_| CliError::parse(path, sno, "bad switch step"))?;
    let schedule = ProposalSchedule::new(e[0], e[1], switch).map_err(|x| CliError::parse(path, sno, x.to_string()))?;
    let burn_in = int(header("burn_in")?)? as usize;
    let accepted = int(header("accepted")?)? as usize;
    let evaluations = int(header("evaluations")?)? as usize;
    match lines.next() {
        Some((_, "b,c")) => {}
        Some((no, _)) => return Err(CliError::parse(path, no, "expected 'b,c' column header")),
        None => return Err(CliError::parse(path, 0, "missing 'b,c' column header")),
    }
    let mut samples = Vec::new();
    for (no, l) in lines {
        if l.trim().is_empty() {
            continue;
        }
        let v = floats(l, 2, path, no)?;
        let q = MaterialParams { b: v[0], c: v[1] };
        if !prior.contains(q) {
            return Err(CliError::parse(path, no, "sample outside the recorded box"));
        }
        samples.push(q);
    }
    let total = burn_in + samples.len();
    if accepted > total {
        return Err(CliError::parse(path, 7, "more accepted moves than steps"));
    }
    let acceptance_rate = accepted as f64 / total.max(1) as f64;
    Ok(PosteriorChain {
        samples,
        accepted,
        burn_in,
        seed,
        schedule,
        prior,
        diagnostics: ChainDiagnostics {
            acceptance_rate,
            low_acceptance: acceptance_rate < LOW_ACCEPTANCE,
            high_acceptance: acceptance_rate > HIGH_ACCEPTANCE,
            evaluations,
        },
    })
}
