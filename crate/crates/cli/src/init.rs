//! Initial configurations from short textual specs.
//!
//! - `point(x, count)`
//! - `block(x0, x1, count)`: `count` particles on every site of `x0..=x1`
//! - `tent(w, k)`, `box(w, k)`: `⌈f(x/√k)·√k⌉` particles at site `x` for the
//!   profile `f(y) = max(0, 1 - |y|/w)` or `f = 1` on `|y| ≤ w`
//! - `threshold(alpha)`: `⌈N^α⌉` particles over `⌈N^{α/2}⌉` sites
//! - `file(path)`: lines `site,count`; blank lines, `#` comments and a
//!   header line are skipped

use crate::CliError;
use critepi::coupling::threshold_initial;
use critepi::envelope::ParticleField;

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn parse_call(spec: &str) -> Result<(String, Vec<String>), CliError> {
    let spec = spec.trim();
    let open = spec.find('(').ok_or_else(|| bad(format!("expected name(args) in '{spec}'")))?;
    let args = spec[open + 1..]
        .strip_suffix(')')
        .ok_or_else(|| bad(format!("missing ')' in '{spec}'")))?;
    let name = spec[..open].trim().to_ascii_lowercase();
    let args = if args.trim().is_empty() {
        Vec::new()
    } else {
        args.split(',').map(|a| a.trim().to_string()).collect()
    };
    Ok((name, args))
}

fn num<T: std::str::FromStr>(spec: &str, arg: &str) -> Result<T, CliError> {
    arg.parse().map_err(|_| bad(format!("cannot parse '{arg}' in '{spec}'")))
}

fn arity(spec: &str, args: &[String], n: usize) -> Result<(), CliError> {
    if args.len() == n {
        Ok(())
    } else {
        Err(bad(format!("'{spec}' takes {n} arguments")))
    }
}

/// `⌈f(x/√k)·√k⌉` on the sites where `f` is positive.
pub fn scaled_profile(f: impl Fn(f64) -> f64, half_width: f64, k: f64) -> ParticleField {
    let s = k.sqrt();
    let reach = (half_width * s).ceil() as i64;
    let mut field = ParticleField::new();
    for x in -reach..=reach {
        let v = f(x as f64 / s);
        if v > 0.0 {
            field.add(x, (v * s).ceil() as u64);
        }
    }
    field
}

/// Build the initial field described by `spec` for village size `n`.
pub fn init_profile(spec: &str, n: u32) -> Result<ParticleField, CliError> {
    let (name, args) = parse_call(spec)?;
    match name.as_str() {
        "point" => {
            arity(spec, &args, 2)?;
            Ok(ParticleField::point(num(spec, &args[0])?, num(spec, &args[1])?))
        }
        "block" => {
            arity(spec, &args, 3)?;
            let (x0, x1): (i64, i64) = (num(spec, &args[0])?, num(spec, &args[1])?);
            if x1 < x0 {
                return Err(bad(format!("empty block in '{spec}'")));
            }
            Ok(ParticleField::block(x0, x1, num(spec, &args[2])?))
        }
        "tent" | "box" => {
            arity(spec, &args, 2)?;
            let (w, k): (f64, f64) = (num(spec, &args[0])?, num(spec, &args[1])?);
            if !(w > 0.0 && w.is_finite() && k > 0.0 && k.is_finite()) {
                return Err(bad(format!("width and scale must be positive and finite in '{spec}'")));
            }
            Ok(if name == "tent" {
                scaled_profile(|y| (1.0 - y.abs() / w).max(0.0), w, k)
            } else {
                scaled_profile(|y| if y.abs() <= w { 1.0 } else { 0.0 }, w, k)
            })
        }
        "threshold" => {
            arity(spec, &args, 1)?;
            threshold_initial(n, num(spec, &args[0])?).map_err(|e| bad(e.to_string()))
        }
        "file" => {
            arity(spec, &args, 1)?;
            let text = std::fs::read_to_string(&args[0]).map_err(|e| bad(format!("{}: {e}", args[0])))?;
            let mut field = ParticleField::new();
            for (i, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let mut parts = line.split(',').map(str::trim);
                let (Some(x), Some(c), None) = (parts.next(), parts.next(), parts.next()) else {
                    return Err(bad(format!("{}:{}: expected 'site,count'", args[0], i + 1)));
                };
                match (x.parse::<i64>(), c.parse::<u64>()) {
                    (Ok(x), Ok(c)) => field.add(x, c),
                    _ if i == 0 => continue,
                    _ => return Err(bad(format!("{}:{}: expected 'site,count'", args[0], i + 1))),
                }
            }
            Ok(field)
        }
        "gauss" | "gaussian" | "normal" | "exp" | "exponential" => {
            Err(bad(format!("'{name}' has unbounded support; initial profiles must be compactly supported")))
        }
        _ => Err(bad(format!("unknown initial profile '{name}'"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use critepi::rescale::density_snapshot;

    #[test]
    fn point_and_block() {
        assert_eq!(init_profile("point(0, 1)", 10).unwrap(), ParticleField::point(0, 1));
        let b = init_profile("block(0,0,27)", 10).unwrap();
        assert_eq!(density_snapshot(&b, 9.0, 0).unwrap().value(0.0), 9.0);
        assert_eq!(init_profile(" block(-1, 1, 2) ", 10).unwrap().total(), 6);
    }

    #[test]
    fn rejects_bad_specs() {
        for spec in ["gauss(1)", "point(0)", "block(2, 1, 3)", "tent(-1, 4)", "wave(1, 2)", "point 0 1"] {
            assert!(matches!(init_profile(spec, 10), Err(CliError::Config(_))), "{spec}");
        }
    }

    #[test]
    fn tent_rounding_error_vanishes() {
        let f = |y: f64| (1.0 - y.abs() / 2.0).max(0.0);
        for k in [64.0, 256.0] {
            let field = init_profile(&format!("tent(2, {k})"), 10).unwrap();
            let snap = density_snapshot(&field, k, 0).unwrap();
            let sup = snap.grid().map(|(x, v)| (v - f(x)).abs()).fold(0.0, f64::max);
            assert!(sup <= 1.0 / k.sqrt(), "k={k}: {sup}");
            assert!(snap.grid().all(|(x, _)| x.abs() < 2.0));
        }
    }

    #[test]
    fn threshold_and_file() {
        assert_eq!(init_profile("threshold(0.5)", 100).unwrap().total(), 10);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("init.csv");
        std::fs::write(&path, "site,count\n# comment\n-2,3\n5,1\n").unwrap();
        let f = init_profile(&format!("file({})", path.display()), 10).unwrap();
        assert_eq!(f, ParticleField::from_counts([(-2, 3), (5, 1)]));
        std::fs::write(&path, "1,2\nbad\n").unwrap();
        assert!(init_profile(&format!("file({})", path.display()), 10).is_err());
    }
}
