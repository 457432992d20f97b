#![allow(dead_code)]

use telegraph_core::preprocess::smooth_excitation;
use telegraph_core::synth::make_pulse;
use telegraph_core::*;

pub const T_EX: f64 = 11.8;

pub fn grid() -> TimeGrid {
    make_time_grid(0.0025, 14000).unwrap()
}

/// 1 MHz, 4-cycle burst starting at 4.5 us, low-passed at 6.5 MHz.
pub fn pulse() -> ExcitationPulse {
    let raw = make_pulse(1.0, 4.0, 1.0, 4.5, grid(), T_EX).unwrap();
    smooth_excitation(&raw, 6.5, 0.5).unwrap()
}

pub fn params(b: f64, c: f64) -> MaterialParams {
    MaterialParams::new(b, c).unwrap()
}

pub fn rel_linf(a: &[f64], b: &[f64]) -> f64 {
    let peak = b.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let err = a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
    err / peak
}
