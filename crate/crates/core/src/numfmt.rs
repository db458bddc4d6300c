//! Stable float rendering for every derived table.
//!
//! Values are rounded to six significant digits with ties going to the even
//! digit, then printed in plain decimal notation when the exponent is small
//! and in `1.5e-7` style otherwise. Missing values render as `NA`.

/// Token written for a missing (undefined) value.
pub const MISSING: &str = "NA";

/// Formats `v` with six significant digits.
pub fn sig6(v: f64) -> String {
    if v.is_nan() {
        return MISSING.to_string();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    // `{:.5e}` performs exact decimal expansion with round-half-even.
    let sci = format!("{:.5e}", v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    let negative = mantissa.starts_with('-');
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();

    let mut out = String::new();
    if negative {
        out.push('-');
    }
    if (-5..15).contains(&exp) {
        if exp >= 0 {
            let int_len = exp as usize + 1;
            if digits.len() <= int_len {
                out.push_str(&digits);
                out.extend(std::iter::repeat_n('0', int_len - digits.len()));
            } else {
                out.push_str(&digits[..int_len]);
                let frac = digits[int_len..].trim_end_matches('0');
                if !frac.is_empty() {
                    out.push('.');
                    out.push_str(frac);
                }
            }
        } else {
            out.push_str("0.");
            out.extend(std::iter::repeat_n('0', (-exp - 1) as usize));
            out.push_str(digits.trim_end_matches('0'));
        }
    } else {
        let frac = digits[1..].trim_end_matches('0');
        out.push_str(&digits[..1]);
        if !frac.is_empty() {
            out.push('.');
            out.push_str(frac);
        }
        out.push('e');
        out.push_str(&exp.to_string());
    }
    out
}

/// Formats an optional value, writing [`MISSING`] for `None`.
pub fn sig6_opt(v: Option<f64>) -> String {
    match v {
        Some(v) => sig6(v),
        None => MISSING.to_string(),
    }
}

/// Parses a value written by [`sig6_opt`]; empty fields also count as missing.
pub fn parse_opt(field: &str) -> Result<Option<f64>, std::num::ParseFloatError> {
    let field = field.trim();
    if field.is_empty() || field == MISSING {
        Ok(None)
    } else {
        field.parse::<f64>().map(Some)
    }
}
