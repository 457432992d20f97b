//! `key = value` run configuration. Every physical constant of the
//! measurement setup has its default here.

use std::fmt::Write as _;
use std::path::Path;

use telegraph_core::bayes::{ChainOptions, ProposalSchedule};
use telegraph_core::calibrate::NelderMeadOptions;
use telegraph_core::features::EchoWindow;
use telegraph_core::synth::{Damage, Patch, SyntheticPlateSpec};
use telegraph_core::{make_time_grid, MaterialParams, PlateModel, PriorBox, TimeGrid};

use crate::error::{CliError, Result};

/// Rectangle of grid cells, written `x0,y0,width,height`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub width: usize,
    pub height: usize,
}

impl Rect {
    pub fn contains(&self, ix: usize, iy: usize) -> bool {
        ix >= self.x0 && ix < self.x0 + self.width && iy >= self.y0 && iy < self.y0 + self.height
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dt: f64,
    pub n_samples: usize,
    pub t_ex: f64,
    pub dz: f64,

    pub pulse_freq: f64,
    pub pulse_cycles: f64,
    pub pulse_amplitude: f64,
    pub pulse_start: f64,
    /// Low-pass applied to every excitation before solving.
    pub cutoff: f64,
    pub taper: f64,

    pub b_min: f64,
    pub b_max: f64,
    pub c_min: f64,
    pub c_max: f64,

    pub start_b: f64,
    pub start_c: f64,
    pub nm_step: f64,
    pub nm_tolerance: f64,
    pub nm_max_iterations: usize,

    pub window_start: f64,
    pub window_end: f64,
    /// Highest frequency considered when selecting feature bins.
    pub bin_cutoff: f64,
    /// Fixed feature bins; selected from the reference when `None`.
    pub bins: Option<[usize; 3]>,

    pub eps_early: f64,
    pub eps_late: f64,
    pub eps_switch: usize,
    pub burn_in: usize,
    pub n: usize,
    pub seed: u64,
    pub cache: bool,

    pub quantile: f64,
    pub level: f64,
    /// Cells known or suspected to be damaged; everything else is reference.
    pub reference_exclude: Option<Rect>,

    pub echo_jump: f64,
    pub excitation_jump: f64,

    pub nx: usize,
    pub ny: usize,
    pub res_x: f64,
    pub res_y: f64,
    pub base_b: f64,
    pub base_c: f64,
    pub jitter_b: f64,
    pub jitter_c: f64,
    pub damage: Option<Rect>,
    pub delta_b: f64,
    pub delta_c: f64,
    pub noise: f64,
    pub plate_seed: u64,

    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dt: 0.0025,
            n_samples: 14000,
            t_ex: 11.8,
            dz: 0.001,
            pulse_freq: 1.0,
            pulse_cycles: 4.0,
            pulse_amplitude: 1.0,
            pulse_start: 4.5,
            cutoff: 6.5,
            taper: 0.5,
            b_min: 0.05,
            b_max: 0.6,
            c_min: 0.2,
            c_max: 0.25,
            start_b: 0.2,
            start_c: 0.22,
            nm_step: 0.05,
            nm_tolerance: 1e-5,
            nm_max_iterations: 500,
            window_start: 11.8,
            window_end: 22.0,
            bin_cutoff: 6.5,
            bins: None,
            eps_early: 0.02,
            eps_late: 0.001,
            eps_switch: 100,
            burn_in: 100,
            n: 1000,
            seed: 1,
            cache: true,
            quantile: 0.99,
            level: 0.01,
            reference_exclude: None,
            echo_jump: 0.25,
            excitation_jump: 1.0,
            nx: 21,
            ny: 19,
            res_x: 5.0,
            res_y: 5.0,
            base_b: 0.12,
            base_c: 0.224,
            jitter_b: 0.015,
            jitter_c: 0.0015,
            damage: Some(Rect { x0: 8, y0: 7, width: 4, height: 4 }),
            delta_b: 0.15,
            delta_c: -0.01,
            noise: 0.0,
            plate_seed: 7,
            threads: 1,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
    v.parse().map_err(|_| format!("{key}: cannot parse '{v}'"))
}

fn flag(key: &str, v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("{key}: expected true or false, got '{v}'")),
    }
}

fn rect(key: &str, v: &str) -> std::result::Result<Option<Rect>, String> {
    if v == "none" {
        return Ok(None);
    }
    let parts: Vec<usize> = v.split(',').map(|p| num(key, p.trim())).collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [x0, y0, width, height] if width > 0 && height > 0 => Ok(Some(Rect { x0, y0, width, height })),
        _ => Err(format!("{key}: expected none or x0,y0,width,height, got '{v}'")),
    }
}

fn show_rect(r: &Option<Rect>) -> String {
    match r {
        None => "none".into(),
        Some(r) => format!("{},{},{},{}", r.x0, r.y0, r.width, r.height),
    }
}

impl RunConfig {
    /// Set one key from its text form.
    pub fn set(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        match key {
            "dt" => self.dt = num(key, v)?,
            "n_samples" => self.n_samples = num(key, v)?,
            "t_ex" => self.t_ex = num(key, v)?,
            "dz" => self.dz = num(key, v)?,
            "pulse_freq" => self.pulse_freq = num(key, v)?,
            "pulse_cycles" => self.pulse_cycles = num(key, v)?,
            "pulse_amplitude" => self.pulse_amplitude = num(key, v)?,
            "pulse_start" => self.pulse_start = num(key, v)?,
            "cutoff" => self.cutoff = num(key, v)?,
            "taper" => self.taper = num(key, v)?,
            "b_min" => self.b_min = num(key, v)?,
            "b_max" => self.b_max = num(key, v)?,
            "c_min" => self.c_min = num(key, v)?,
            "c_max" => self.c_max = num(key, v)?,
            "start_b" => self.start_b = num(key, v)?,
            "start_c" => self.start_c = num(key, v)?,
            "nm_step" => self.nm_step = num(key, v)?,
            "nm_tolerance" => self.nm_tolerance = num(key, v)?,
            "nm_max_iterations" => self.nm_max_iterations = num(key, v)?,
            "window_start" => self.window_start = num(key, v)?,
            "window_end" => self.window_end = num(key, v)?,
            "bin_cutoff" => self.bin_cutoff = num(key, v)?,
            "bins" => {
                self.bins = if v == "auto" {
                    None
                } else {
                    let b: Vec<usize> = v.split(',').map(|p| num(key, p.trim())).collect::<std::result::Result<_, _>>()?;
                    Some(b.try_into().map_err(|_| format!("{key}: expected auto or three bin indices"))?)
                }
            }
            "eps_early" => self.eps_early = num(key, v)?,
            "eps_late" => self.eps_late = num(key, v)?,
            "eps_switch" => self.eps_switch = num(key, v)?,
            "burn_in" => self.burn_in = num(key, v)?,
            "n" => self.n = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "cache" => self.cache = flag(key, v)?,
            "quantile" => self.quantile = num(key, v)?,
            "level" => self.level = num(key, v)?,
            "reference_exclude" => self.reference_exclude = rect(key, v)?,
            "echo_jump" => self.echo_jump = num(key, v)?,
            "excitation_jump" => self.excitation_jump = num(key, v)?,
            "nx" => self.nx = num(key, v)?,
            "ny" => self.ny = num(key, v)?,
            "res_x" => self.res_x = num(key, v)?,
            "res_y" => self.res_y = num(key, v)?,
            "base_b" => self.base_b = num(key, v)?,
            "base_c" => self.base_c = num(key, v)?,
            "jitter_b" => self.jitter_b = num(key, v)?,
            "jitter_c" => self.jitter_c = num(key, v)?,
            "damage" => self.damage = rect(key, v)?,
            "delta_b" => self.delta_b = num(key, v)?,
            "delta_c" => self.delta_c = num(key, v)?,
            "noise" => self.noise = num(key, v)?,
            "plate_seed" => self.plate_seed = num(key, v)?,
            "threads" => self.threads = num(key, v)?,
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    /// All keys with their values, in file order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let bins = match self.bins {
            None => "auto".to_string(),
            Some([a, b, c]) => format!("{a},{b},{c}"),
        };
        vec![
            ("dt", self.dt.to_string()),
            ("n_samples", self.n_samples.to_string()),
            ("t_ex", self.t_ex.to_string()),
            ("dz", self.dz.to_string()),
            ("pulse_freq", self.pulse_freq.to_string()),
            ("pulse_cycles", self.pulse_cycles.to_string()),
            ("pulse_amplitude", self.pulse_amplitude.to_string()),
            ("pulse_start", self.pulse_start.to_string()),
            ("cutoff", self.cutoff.to_string()),
            ("taper", self.taper.to_string()),
            ("b_min", self.b_min.to_string()),
            ("b_max", self.b_max.to_string()),
            ("c_min", self.c_min.to_string()),
            ("c_max", self.c_max.to_string()),
            ("start_b", self.start_b.to_string()),
            ("start_c", self.start_c.to_string()),
            ("nm_step", self.nm_step.to_string()),
            ("nm_tolerance", self.nm_tolerance.to_string()),
            ("nm_max_iterations", self.nm_max_iterations.to_string()),
            ("window_start", self.window_start.to_string()),
            ("window_end", self.window_end.to_string()),
            ("bin_cutoff", self.bin_cutoff.to_string()),
            ("bins", bins),
            ("eps_early", self.eps_early.to_string()),
            ("eps_late", self.eps_late.to_string()),
            ("eps_switch", self.eps_switch.to_string()),
            ("burn_in", self.burn_in.to_string()),
            ("n", self.n.to_string()),
            ("seed", self.seed.to_string()),
            ("cache", self.cache.to_string()),
            ("quantile", self.quantile.to_string()),
            ("level", self.level.to_string()),
            ("reference_exclude", show_rect(&self.reference_exclude)),
            ("echo_jump", self.echo_jump.to_string()),
            ("excitation_jump", self.excitation_jump.to_string()),
            ("nx", self.nx.to_string()),
            ("ny", self.ny.to_string()),
            ("res_x", self.res_x.to_string()),
            ("res_y", self.res_y.to_string()),
            ("base_b", self.base_b.to_string()),
            ("base_c", self.base_c.to_string()),
            ("jitter_b", self.jitter_b.to_string()),
            ("jitter_c", self.jitter_c.to_string()),
            ("damage", show_rect(&self.damage)),
            ("delta_b", self.delta_b.to_string()),
            ("delta_c", self.delta_c.to_string()),
            ("noise", self.noise.to_string()),
            ("plate_seed", self.plate_seed.to_string()),
            ("threads", self.threads.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }

    /// Apply `key = value` lines. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str, path: &Path) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::parse(path, i + 1, format!("expected key = value, got '{line}'")))?;
            self.set(k.trim(), v.trim()).map_err(|m| CliError::parse(path, i + 1, m))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        self.apply_text(&text, path)
    }

    /// Check every value against the constraints of the type it feeds.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Usage(format!("invalid configuration: {m}")));
        self.grid()?;
        self.plate()?;
        self.prior()?;
        self.window()?;
        self.schedule()?;
        if !self.prior()?.contains(self.start()?) {
            return bad("calibration start lies outside the box".into());
        }
        if !(self.quantile > 0.5 && self.quantile < 1.0) {
            return bad(format!("quantile {} must lie in (0.5, 1)", self.quantile));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return bad(format!("level {} must lie in (0, 1)", self.level));
        }
        if !(self.cutoff > 0.0) || !(self.taper > 0.0 && self.taper <= 1.0) {
            return bad("cutoff must be positive and taper in (0, 1]".into());
        }
        if !(self.echo_jump > 0.0) || !(self.excitation_jump > 0.0) {
            return bad("jump thresholds must be positive".into());
        }
        if self.n == 0 || self.threads == 0 {
            return bad("n and threads must be positive".into());
        }
        if !(self.nm_tolerance > 0.0) || !(self.nm_step > 0.0) {
            return bad("simplex step and tolerance must be positive".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        Ok(make_time_grid(self.dt, self.n_samples)?)
    }

    pub fn plate(&self) -> Result<PlateModel> {
        Ok(PlateModel::new(self.dz)?)
    }

    pub fn prior(&self) -> Result<PriorBox> {
        Ok(PriorBox::new(self.b_min, self.b_max, self.c_min, self.c_max)?)
    }

    pub fn start(&self) -> Result<MaterialParams> {
        Ok(MaterialParams::new(self.start_b, self.start_c)?)
    }

    pub fn window(&self) -> Result<EchoWindow> {
        Ok(EchoWindow::new(self.window_start, self.window_end)?)
    }

    pub fn schedule(&self) -> Result<ProposalSchedule> {
        Ok(ProposalSchedule::new(self.eps_early, self.eps_late, self.eps_switch)?)
    }

    pub fn chain_options(&self) -> Result<ChainOptions> {
        Ok(ChainOptions {
            burn_in: self.burn_in,
            n: self.n,
            schedule: self.schedule()?,
            cache: self.cache,
            hastings: false,
        })
    }

    pub fn simplex(&self) -> NelderMeadOptions {
        NelderMeadOptions {
            initial_step: self.nm_step,
            tolerance: self.nm_tolerance,
            max_iterations: self.nm_max_iterations,
            ..Default::default()
        }
    }

    pub fn plate_spec(&self) -> Result<SyntheticPlateSpec> {
        let spec = SyntheticPlateSpec {
            nx: self.nx,
            ny: self.ny,
            resolution_mm: (self.res_x, self.res_y),
            base: MaterialParams::new(self.base_b, self.base_c)?,
            jitter: (self.jitter_b, self.jitter_c),
            damage: self.damage.map(|r| Damage {
                patch: Patch { x0: r.x0, y0: r.y0, width: r.width, height: r.height },
                delta_b: self.delta_b,
                delta_c: self.delta_c,
            }),
            noise_sigma: self.noise,
            seed: self.plate_seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Row-major reference mask for an `nx x ny` grid.
    pub fn reference_mask(&self, nx: usize, ny: usize) -> Vec<bool> {
        let mut mask = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                mask.push(!self.reference_exclude.is_some_and(|r| r.contains(ix, iy)));
            }
        }
        mask
    }
}
