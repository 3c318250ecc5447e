//! Matrix source strings: `synth:<family>:<n>[:seed]`, `mm:<path>`, `oed`,
//! `identity:<n>` and `diag:<v1,v2,...>`.

use schatten::harness::MatrixSource;
use schatten::matgen::{Family, SyntheticSpec};
use schatten::oed_model::HeatParams;
use schatten::Error;

fn bad(src: &str, reason: impl std::fmt::Display) -> Error {
    Error::Plan(format!("bad matrix source `{src}`: {reason}"))
}

fn number<T: std::str::FromStr>(src: &str, field: &str, text: &str) -> Result<T, Error> {
    text.parse().map_err(|_| bad(src, format!("{field} `{text}` is not a valid number")))
}

pub fn parse_source(src: &str) -> Result<MatrixSource, Error> {
    let (scheme, rest) = src.split_once(':').unwrap_or((src, ""));
    match scheme {
        "synth" => {
            let parts: Vec<&str> = rest.split(':').collect();
            if !(2..=3).contains(&parts.len()) {
                return Err(bad(src, "expected synth:<family>:<n>[:seed]"));
            }
            let family: Family = parts[0].parse().map_err(|e| bad(src, e))?;
            let n = number(src, "n", parts[1])?;
            let seed = match parts.get(2) {
                Some(s) => number(src, "seed", s)?,
                None => 0,
            };
            Ok(MatrixSource::Synthetic(SyntheticSpec::new(family, n, seed)))
        }
        "mm" if !rest.is_empty() => Ok(MatrixSource::File { path: rest.into() }),
        "oed" if rest.is_empty() => Ok(MatrixSource::Oed(HeatParams::default())),
        "identity" => Ok(MatrixSource::Identity {
            n: number(src, "n", rest)?,
        }),
        "diag" => Ok(MatrixSource::Diagonal {
            values: rest
                .split(',')
                .map(|v| number(src, "entry", v.trim()))
                .collect::<Result<_, _>>()?,
        }),
        _ => Err(bad(
            src,
            "expected synth:<family>:<n>[:seed], mm:<path>, oed, identity:<n> or diag:<values>",
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_all_schemes() {
        assert_eq!(
            parse_source("synth:linear:100").unwrap(),
            MatrixSource::Synthetic(SyntheticSpec::new(Family::Linear, 100, 0))
        );
        assert_eq!(
            parse_source("synth:exponential:20:9").unwrap(),
            MatrixSource::Synthetic(SyntheticSpec::new(Family::Exponential, 20, 9))
        );
        assert_eq!(
            parse_source("mm:/tmp/a.mtx").unwrap(),
            MatrixSource::File { path: "/tmp/a.mtx".into() }
        );
        assert_eq!(parse_source("oed").unwrap(), MatrixSource::Oed(HeatParams::default()));
        assert_eq!(parse_source("identity:16").unwrap(), MatrixSource::Identity { n: 16 });
        assert_eq!(
            parse_source("diag:1,2,3").unwrap(),
            MatrixSource::Diagonal {
                values: vec![1.0, 2.0, 3.0]
            }
        );
    }

    #[test]
    fn rejects_malformed() {
        for s in ["", "synth:linear", "synth:nope:10", "synth:linear:x", "mm:", "identity:-1", "diag:1,a", "foo:1"] {
            assert!(parse_source(s).is_err(), "{s}");
        }
    }
}
