//! Float formatting for report artifacts.
//!
//! Intermediate tables use Rust's shortest round-trip representation so that
//! reloading reproduces the exact value. Reports meant for reading use six
//! significant digits, which keeps them stable across platforms whose last
//! few ulps may differ.

/// Six significant digits, plain notation for moderate magnitudes and
/// exponent notation otherwise. Trailing zeros are dropped.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa))
    }
}

pub fn sig6_opt(x: Option<f64>) -> String {
    x.map(sig6).unwrap_or_else(|| "NA".to_string())
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(0.0), "0");
        assert_eq!(sig6(1.0), "1");
        assert_eq!(sig6(-0.123456789), "-0.123457");
        assert_eq!(sig6(123456.7), "123457");
        assert_eq!(sig6(999999.7), "1e6");
        assert_eq!(sig6(1.5e-7), "1.5e-7");
        assert_eq!(sig6(0.000012345678), "0.0000123457");
        assert_eq!(sig6(2.0f64.sqrt()), "1.41421");
        assert_eq!(sig6_opt(None), "NA");
    }
}
