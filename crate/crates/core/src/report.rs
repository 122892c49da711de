//! Formatting helpers shared by report writers.

/// Significance tier: `a` for p < 0.01, `b` for p < 0.05, `c` for p < 0.10.
pub fn significance_tier(p: f64) -> &'static str {
    if p < 0.01 {
        "a"
    } else if p < 0.05 {
        "b"
    } else if p < 0.10 {
        "c"
    } else {
        ""
    }
}

/// Rounds to `digits` decimals so that every output format carries the same
/// number. Negative zero is normalized.
pub fn round_to(v: f64, digits: i32) -> f64 {
    if !v.is_finite() {
        return v;
    }
    let f = 10f64.powi(digits);
    let r = (v * f).round() / f;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiers() {
        assert_eq!(significance_tier(0.009), "a");
        assert_eq!(significance_tier(0.01), "b");
        assert_eq!(significance_tier(0.07), "c");
        assert_eq!(significance_tier(0.5), "");
    }

    #[test]
    fn rounding() {
        assert_eq!(round_to(0.43078, 2), 0.43);
        assert_eq!(round_to(-0.0001, 2), 0.0);
        assert!(round_to(-0.0001, 2).is_sign_positive());
    }
}
