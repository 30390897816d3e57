//! Fixed significant-digit formatting shared by the text outputs.

/// Formats `x` with `sig` significant digits in positional notation, like
/// `%.{sig}g` but never dropping trailing zeros. Zero prints as `0.` followed
/// by `sig - 1` zeros. Magnitudes outside `[1e-5, 10^sig)` use exponent form.
pub fn fmt_sig(x: f64, sig: usize) -> String {
    assert!(sig >= 1);
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return format!("{:.*}", sig - 1, 0.0);
    }
    // Round once in exponent form so a carry (9.99.. -> 10.0) moves the exponent.
    let sci = format!("{:.*e}", sig - 1, x);
    let exp: i32 = sci
        .rsplit_once('e')
        .and_then(|(_, e)| e.parse().ok())
        .expect("exponent");
    if exp < -5 || exp >= sig as i32 {
        return sci;
    }
    let decimals = (sig as i32 - 1 - exp).max(0) as usize;
    format!("{:.*}", decimals, x)
}
