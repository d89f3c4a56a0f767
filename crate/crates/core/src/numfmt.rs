//! Decimal formatting shared by every CSV writer.

/// Formats `v` in plain decimal notation with 12 significant digits.
pub fn sig12(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return if v.is_nan() {
            "NaN".to_string()
        } else if v > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        };
    }
    // Round first so that 9.99999999999951 does not lose a digit.
    let exp = v.abs().log10().floor() as i32;
    let mut decimals = (11 - exp).max(0) as usize;
    let mut s = format!("{:.*}", decimals, v);
    let digits = s.chars().filter(|c| c.is_ascii_digit()).count();
    let leading = s
        .trim_start_matches('-')
        .chars()
        .take_while(|c| *c == '0' || *c == '.')
        .filter(|c| *c == '0')
        .count();
    if digits - leading > 12 && decimals > 0 {
        decimals -= 1;
        s = format!("{:.*}", decimals, v);
    }
    s
}
