//! Plain (ASCII, P2) portable graymap rendering of 2D fields.

use anyhow::{bail, Context, Result};
use lsrc_core::Field;
use std::fmt::Write as _;
use std::path::Path;

/// Maps `[lo, hi]` linearly onto `[0, 255]`, rounding to nearest and clamping
/// out-of-range values.
pub fn to_gray(v: f64, lo: f64, hi: f64) -> u8 {
    if hi <= lo {
        return 0;
    }
    let t = (v - lo) / (hi - lo) * 255.0;
    t.round().clamp(0.0, 255.0) as u8
}

pub fn render_pgm(field: &Field, lo: f64, hi: f64) -> Result<String> {
    if !field.is_finite() {
        bail!("refusing to render a non-finite field");
    }
    if hi <= lo {
        bail!("invalid gray range [{lo}, {hi}]");
    }
    let (nx, ny) = (field.nx(), field.ny());
    let mut out = String::new();
    writeln!(out, "P2")?;
    writeln!(out, "{ny} {nx}")?;
    writeln!(out, "255")?;
    for i in 0..nx {
        let mut line = String::new();
        for j in 0..ny {
            if j > 0 {
                line.push(' ');
            }
            write!(line, "{}", to_gray(field.get(i, j), lo, hi))?;
        }
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_pgm(path: &Path, field: &Field, lo: f64, hi: f64) -> Result<()> {
    let body = render_pgm(field, lo, hi)?;
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pixels(body: &str) -> Vec<u32> {
        body.lines()
            .skip(3)
            .flat_map(|l| l.split_whitespace().map(|t| t.parse().unwrap()))
            .collect()
    }

    #[test]
    fn constant_low_field_is_black() {
        let f = Field::from_fn(3, 3, |_, _| -0.5);
        let body = render_pgm(&f, -0.5, 1.5).unwrap();
        assert!(body.starts_with("P2\n3 3\n255\n"));
        assert!(pixels(&body).iter().all(|&p| p == 0));
    }

    #[test]
    fn constant_high_field_is_white() {
        let f = Field::from_fn(4, 2, |_, _| 1.0);
        let body = render_pgm(&f, 0.0, 1.0).unwrap();
        assert!(pixels(&body).iter().all(|&p| p == 255));
    }

    #[test]
    fn two_by_two_linear_map() {
        let lo = 0.2;
        let hi = 0.8;
        let mid = 0.5 * (lo + hi);
        let f = Field::from_vec(2, 2, vec![lo, hi, mid, mid]).unwrap();
        let px = pixels(&render_pgm(&f, lo, hi).unwrap());
        assert_eq!(px[0], 0);
        assert_eq!(px[1], 255);
        assert!(px[2].abs_diff(128) <= 1);
        assert!(px[3].abs_diff(128) <= 1);
    }

    #[test]
    fn out_of_range_values_clamped() {
        let f = Field::from_vec(1, 2, vec![-3.0, 7.0]).unwrap();
        let px = pixels(&render_pgm(&f, 0.0, 1.0).unwrap());
        assert_eq!(px, vec![0, 255]);
    }

    #[test]
    fn degenerate_range_rejected() {
        let f = Field::zeros(2, 2);
        assert!(render_pgm(&f, 1.0, 1.0).is_err());
    }
}
