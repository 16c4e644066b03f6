//! Arithmetic on the 24-hour clock and on angles.

use std::f64::consts::{PI, TAU};

pub const HOURS_PER_DAY: usize = 24;
pub const MINUTES_PER_DAY: i32 = 1440;

/// Hour of day (0..24) for an epoch-hour index.
#[inline]
pub fn hour_of_day(epoch_hour: i64) -> usize {
    epoch_hour.rem_euclid(HOURS_PER_DAY as i64) as usize
}

/// Wrap an angle into (-pi, pi].
pub fn wrap_angle(x: f64) -> f64 {
    let mut y = x.rem_euclid(TAU);
    if y > PI {
        y -= TAU;
    }
    y
}

/// Wrap a signed number of hours into (-12, 12].
pub fn wrap_hours(h: f64) -> f64 {
    let y = (h + 12.0).rem_euclid(24.0) - 12.0;
    if y <= -12.0 {
        y + 24.0
    } else {
        y
    }
}

/// Wrap a signed number of minutes into (-720, 720].
pub fn wrap_minutes(m: i32) -> i32 {
    let y = (m + 720).rem_euclid(MINUTES_PER_DAY) - 720;
    if y == -720 {
        720
    } else {
        y
    }
}

/// Mean direction of a set of angles, `None` when the resultant vanishes.
pub fn circular_mean(angles: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, c, n) = angles
        .into_iter()
        .fold((0.0, 0.0, 0usize), |(s, c, n), a| (s + a.sin(), c + a.cos(), n + 1));
    if n == 0 || (s * s + c * c).sqrt() < 1e-12 * n as f64 {
        return None;
    }
    Some(s.atan2(c))
}

/// Mean resultant length of a set of angles, in [0, 1].
pub fn resultant_length(angles: impl IntoIterator<Item = f64>) -> f64 {
    let (s, c, n) = angles
        .into_iter()
        .fold((0.0, 0.0, 0usize), |(s, c, n), a| (s + a.sin(), c + a.cos(), n + 1));
    if n == 0 {
        return 0.0;
    }
    ((s * s + c * c).sqrt() / n as f64).min(1.0)
}

/// Rotate a per-hour vector forward by `delta` positions: `out[(h + delta) % n] = v[h]`.
pub fn rotate<T: Clone>(v: &[T], delta: i64) -> Vec<T> {
    let n = v.len();
    if n == 0 {
        return Vec::new();
    }
    let shift = delta.rem_euclid(n as i64) as usize;
    let mut out = v.to_vec();
    out.rotate_right(shift);
    out
}

/// Round half away from zero to the nearest integer hour.
pub fn round_hour(hours: f64) -> i32 {
    hours.round() as i32
}

/// Integer-hour class for an offset in minutes, with -12 h folded onto +12 h.
pub fn hour_class(offset_minutes: i32) -> i32 {
    let h = round_hour(offset_minutes as f64 / 60.0);
    let w = (h + 12).rem_euclid(24) - 12;
    if w == -12 {
        12
    } else {
        w
    }
}
