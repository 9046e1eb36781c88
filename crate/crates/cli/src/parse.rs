//! Value parsers for command-line arguments.

use std::f64::consts::PI;

/// Angles in radians, `pi` multiples (`pi/3`, `2pi/3`, `-2*pi/3`) or degrees
/// (`60deg`).
pub fn angle(text: &str) -> Result<f64, String> {
    let s: String = text.chars().filter(|c| !c.is_whitespace()).collect::<String>().to_ascii_lowercase();
    if let Some(deg) = s.strip_suffix("deg") {
        return number(deg).map(f64::to_radians);
    }
    let (num, den) = match s.split_once('/') {
        Some((n, d)) => (n, number(d)?),
        None => (s.as_str(), 1.0),
    };
    if den == 0.0 {
        return Err(format!("angle {text:?} divides by zero"));
    }
    let value = match num.strip_suffix("pi") {
        Some(coef) => {
            let coef = coef.strip_suffix('*').unwrap_or(coef);
            let c = match coef {
                "" | "+" => 1.0,
                "-" => -1.0,
                c => number(c)?,
            };
            c * PI
        }
        None => number(num)?,
    };
    Ok(value / den)
}

fn number(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("invalid number {s:?}")),
    }
}

/// Three comma-separated components.
pub fn axis(text: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(format!("axis {text:?} needs three comma-separated components"));
    }
    let v = [number(parts[0])?, number(parts[1])?, number(parts[2])?];
    if v.iter().all(|&x| x == 0.0) {
        return Err("axis must be non-zero".into());
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn angles() {
        let close = |a: f64, b: f64| (a - b).abs() < 1e-15;
        assert!(close(angle("pi/3").unwrap(), PI / 3.0));
        assert!(close(angle("2pi/3").unwrap(), 2.0 * PI / 3.0));
        assert!(close(angle("2*pi/3").unwrap(), 2.0 * PI / 3.0));
        assert!(close(angle("-pi/4").unwrap(), -PI / 4.0));
        assert!(close(angle("PI").unwrap(), PI));
        assert!(close(angle("60deg").unwrap(), PI / 3.0));
        assert!(close(angle("0.5").unwrap(), 0.5));
        assert!(angle("pi/0").is_err());
        assert!(angle("tau").is_err());
        assert!(angle("").is_err());
    }

    #[test]
    fn axes() {
        assert_eq!(axis("0.46,0.68,0.56").unwrap(), [0.46, 0.68, 0.56]);
        assert_eq!(axis(" -1, 0 ,2").unwrap(), [-1.0, 0.0, 2.0]);
        assert!(axis("1,2").is_err());
        assert!(axis("0,0,0").is_err());
        assert!(axis("a,b,c").is_err());
    }
}
