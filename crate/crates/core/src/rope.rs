//! Rotary positional embedding numerics for checking a base-frequency change.

use std::f64::consts::PI;
use std::fmt::Write as _;

use thiserror::Error;

use crate::error::ConfigError;

/// Base used before the context-window extension.
pub const DEFAULT_BASE: f64 = 10_000.0;
/// Base after the extension.
pub const EXTENDED_BASE: f64 = 500_000.0;

#[derive(Debug, Error, PartialEq)]
pub enum RopeError {
    #[error("vector length {got} does not match head_dim {expected}")]
    LengthMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RopeConfig {
    pub base: f64,
    pub head_dim: usize,
}

impl RopeConfig {
    pub fn new(base: f64, head_dim: usize) -> Result<Self, ConfigError> {
        if !(base.is_finite() && base > 1.0) {
            return Err(ConfigError::Invalid(format!("rope base must be > 1, got {base}")));
        }
        if head_dim == 0 || !head_dim.is_multiple_of(2) {
            return Err(ConfigError::Invalid(format!("head_dim must be even and positive, got {head_dim}")));
        }
        Ok(Self { base, head_dim })
    }
}

/// Angular frequency of each rotated pair: `base^(-2i/head_dim)`.
pub fn rope_frequencies(cfg: &RopeConfig) -> Vec<f64> {
    let d = cfg.head_dim as f64;
    (0..cfg.head_dim / 2)
        .map(|i| cfg.base.powf(-2.0 * i as f64 / d))
        .collect()
}

/// Rotates each pair `(v[2i], v[2i+1])` by `position * omega_i`.
pub fn apply_rope(v: &[f64], position: i64, cfg: &RopeConfig) -> Result<Vec<f64>, RopeError> {
    if v.len() != cfg.head_dim {
        return Err(RopeError::LengthMismatch {
            expected: cfg.head_dim,
            got: v.len(),
        });
    }
    let mut out = vec![0.0; v.len()];
    for (i, w) in rope_frequencies(cfg).into_iter().enumerate() {
        let (s, c) = (position as f64 * w).sin_cos();
        let (x, y) = (v[2 * i], v[2 * i + 1]);
        out[2 * i] = x * c - y * s;
        out[2 * i + 1] = x * s + y * c;
    }
    Ok(out)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Attention logit between `q` at position `m` and `k` at position `n`.
pub fn relative_score(q: &[f64], k: &[f64], m: i64, n: i64, cfg: &RopeConfig) -> Result<f64, RopeError> {
    Ok(dot(&apply_rope(q, m, cfg)?, &apply_rope(k, n, cfg)?))
}

/// CSV of `i,omega,wavelength` rows, wavelength being `2*pi/omega` positions.
pub fn frequency_report(cfg: &RopeConfig) -> String {
    let mut out = String::from("i,omega,wavelength\n");
    for (i, w) in rope_frequencies(cfg).into_iter().enumerate() {
        writeln!(out, "{i},{w:e},{:e}", 2.0 * PI / w).expect("write to String");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(base: f64, d: usize) -> RopeConfig {
        RopeConfig::new(base, d).unwrap()
    }

    #[test]
    fn frequency_examples() {
        assert_eq!(rope_frequencies(&cfg(1e4, 2)), vec![1.0]);
        let w = rope_frequencies(&cfg(1e4, 4));
        assert_eq!(w[0], 1.0);
        assert!((w[1] - 0.01).abs() < 1e-15);
        let w = rope_frequencies(&cfg(5e5, 4));
        assert!((w[1] - 1.0 / 500_000f64.sqrt()).abs() < 1e-15);
        assert!((w[1] - 1.4142e-3).abs() < 1e-7);
    }

    #[test]
    fn frequencies_decrease_and_shrink_with_base() {
        let lo = rope_frequencies(&cfg(DEFAULT_BASE, 64));
        let hi = rope_frequencies(&cfg(EXTENDED_BASE, 64));
        for i in 1..32 {
            assert!(lo[i] < lo[i - 1]);
            assert!(hi[i] < lo[i]);
        }
        // Angle of the slowest pair at position 16384 shrinks by 50^(62/64).
        let ratio = (16384.0 * lo[31]) / (16384.0 * hi[31]);
        assert!((ratio - 50f64.powf(62.0 / 64.0)).abs() / ratio < 1e-12);
    }

    #[test]
    fn rotation_examples() {
        let c = cfg(1e4, 2);
        assert_eq!(apply_rope(&[0.3, -0.7], 0, &c).unwrap(), vec![0.3, -0.7]);
        let r = apply_rope(&[1.0, 0.0], 5, &c).unwrap();
        assert!((r[0] - 5f64.cos()).abs() < 1e-15 && (r[1] - 5f64.sin()).abs() < 1e-15);
        assert_eq!(
            apply_rope(&[1.0], 0, &c),
            Err(RopeError::LengthMismatch { expected: 2, got: 1 })
        );
    }

    #[test]
    fn invalid_configs() {
        assert!(RopeConfig::new(1.0, 4).is_err());
        assert!(RopeConfig::new(1e4, 3).is_err());
        assert!(RopeConfig::new(f64::NAN, 4).is_err());
    }

    #[test]
    fn norm_and_shift_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for base in [DEFAULT_BASE, EXTENDED_BASE] {
            let c = cfg(base, 64);
            for _ in 0..200 {
                let q: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let k: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let (m, n, t) = (rng.gen_range(0..16384), rng.gen_range(0..16384), rng.gen_range(0..16384));
                assert!((norm(&apply_rope(&q, m, &c).unwrap()) - norm(&q)).abs() <= 1e-12);
                let a = relative_score(&q, &k, m, n, &c).unwrap();
                let b = relative_score(&q, &k, m + t, n + t, &c).unwrap();
                assert!((a - b).abs() <= 1e-9);
                let same = relative_score(&q, &k, m, m, &c).unwrap();
                assert!((same - dot(&q, &k)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn report_has_one_row_per_pair() {
        let csv = frequency_report(&cfg(1e4, 8));
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "i,omega,wavelength");
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("0,1e0,6.283"));
    }
}
