//! FieldGrid v1, the plain-text field format.
//!
//! ```text
//! FGRID 1
//! <dim> <nx> <ny> [<nz>]
//! torus <Lx> <Ly>            | <lo> <hi> <lo> <hi> [<lo> <hi>]
//! <t0> <tau> <seed>
//! <diagnostic tag>
//! <value>                     one per box, x fastest, then y, then z
//! ```
//!
//! Values use the shortest decimal form that parses back to the same
//! double. Missing values are written `nan`, infinities `inf` / `-inf`.
//! Sampling metadata goes to a JSON sidecar `<path>.meta.json`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::domain::Domain;
use crate::error::{Error, Result};
use crate::fields::ScalarField;

pub const MAGIC: &str = "FGRID 1";

fn format_value(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:e}")
    }
}

pub fn format_fieldgrid(field: &ScalarField) -> Result<String> {
    field.validate()?;
    let mut s = String::with_capacity(16 * field.values.len() + 128);
    s.push_str(MAGIC);
    s.push('\n');
    let counts: Vec<String> = field.counts.iter().map(|c| c.to_string()).collect();
    let _ = writeln!(s, "{} {}", field.dim(), counts.join(" "));
    match &field.domain {
        Domain::Torus2D { lx, ly } => {
            let _ = writeln!(s, "torus {lx} {ly}");
        }
        Domain::Box { bounds } => {
            let b: Vec<String> = bounds.iter().map(|(lo, hi)| format!("{lo} {hi}")).collect();
            let _ = writeln!(s, "{}", b.join(" "));
        }
        Domain::Unbounded { .. } => {
            return Err(Error::GridMismatch("fields need a torus or bounded box".into()));
        }
    }
    let _ = writeln!(s, "{} {} {}", field.t0, field.tau, field.seed);
    if field.tag.is_empty() || field.tag.contains('\n') {
        return Err(Error::InvalidConfig(format!("bad diagnostic tag {:?}", field.tag)));
    }
    s.push_str(&field.tag);
    s.push('\n');
    for v in &field.values {
        s.push_str(&format_value(*v));
        s.push('\n');
    }
    Ok(s)
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    tok.parse::<f64>().map_err(|_| parse_err(line, format!("`{tok}` is not a number")))
}

/// Parses the text of a FieldGrid v1 file; metadata is left empty.
pub fn parse_fieldgrid(text: &str) -> Result<ScalarField> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let mut next = |what: &str| lines.next().ok_or_else(|| parse_err(0, format!("missing {what} line")));

    let (n, magic) = next("header")?;
    if magic != MAGIC {
        return Err(parse_err(n, format!("expected `{MAGIC}`, found `{magic}`")));
    }

    let (n, shape) = next("shape")?;
    let nums: Vec<usize> = shape
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| parse_err(n, format!("`{t}` is not a count"))))
        .collect::<Result<_>>()?;
    let dim = *nums.first().ok_or_else(|| parse_err(n, "empty shape line"))?;
    if !(1..=3).contains(&dim) || nums.len() != dim + 1 {
        return Err(parse_err(n, format!("shape line `{shape}` does not match dimension {dim}")));
    }
    let counts = nums[1..].to_vec();
    if counts.contains(&0) {
        return Err(parse_err(n, "box counts must be positive"));
    }

    let (n, bounds_line) = next("bounds")?;
    let toks: Vec<&str> = bounds_line.split_whitespace().collect();
    let domain = if toks.first() == Some(&"torus") {
        if toks.len() != 3 || dim != 2 {
            return Err(parse_err(n, "torus line must be `torus Lx Ly` for a 2D field"));
        }
        Domain::Torus2D {
            lx: parse_f64(toks[1], n)?,
            ly: parse_f64(toks[2], n)?,
        }
    } else {
        if toks.len() != 2 * dim {
            return Err(parse_err(n, format!("expected {} bounds, found {}", 2 * dim, toks.len())));
        }
        let vals: Vec<f64> = toks.iter().map(|t| parse_f64(t, n)).collect::<Result<_>>()?;
        Domain::Box {
            bounds: vals.chunks(2).map(|c| (c[0], c[1])).collect(),
        }
    };
    domain.validate().map_err(|e| parse_err(n, e.to_string()))?;

    let (n, time) = next("time")?;
    let toks: Vec<&str> = time.split_whitespace().collect();
    if toks.len() != 3 {
        return Err(parse_err(n, "time line must be `t0 tau seed`"));
    }
    let t0 = parse_f64(toks[0], n)?;
    let tau = parse_f64(toks[1], n)?;
    let seed = toks[2].parse::<u64>().map_err(|_| parse_err(n, format!("`{}` is not a seed", toks[2])))?;

    let (n, tag) = next("diagnostic")?;
    if tag.is_empty() {
        return Err(parse_err(n, "empty diagnostic tag"));
    }
    let tag = tag.to_string();

    let expected: usize = counts.iter().product();
    let mut values = Vec::with_capacity(expected);
    for (n, l) in lines {
        if l.is_empty() {
            continue;
        }
        values.push(parse_f64(l, n)?);
    }
    if values.len() != expected {
        return Err(parse_err(0, format!("expected {expected} values, found {}", values.len())));
    }
    Ok(ScalarField {
        domain,
        counts,
        t0,
        tau,
        seed,
        tag,
        values,
        metadata: BTreeMap::new(),
    })
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Writes the field and, when it has metadata, its JSON sidecar.
pub fn write_fieldgrid(field: &ScalarField, path: &Path) -> Result<()> {
    fs::write(path, format_fieldgrid(field)?)?;
    if !field.metadata.is_empty() {
        let json = serde_json::to_string_pretty(&field.metadata).map_err(|e| Error::Io(e.to_string()))?;
        fs::write(sidecar_path(path), json + "\n")?;
    }
    Ok(())
}

/// Reads a field and its sidecar, if one exists.
pub fn read_fieldgrid(path: &Path) -> Result<ScalarField> {
    let mut field = parse_fieldgrid(&fs::read_to_string(path)?)?;
    let side = sidecar_path(path);
    if side.exists() {
        let meta: BTreeMap<String, Value> = serde_json::from_str(&fs::read_to_string(&side)?)
            .map_err(|e| Error::Io(format!("{}: {e}", side.display())))?;
        field.metadata = meta;
    }
    Ok(field)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use serde_json::json;

    fn sample() -> ScalarField {
        ScalarField {
            domain: Domain::Torus2D { lx: 2.0, ly: 1.0 },
            counts: vec![2, 2],
            t0: 0.0,
            tau: -8.0,
            seed: 42,
            tag: "ftdr:kl".into(),
            values: vec![1.5, f64::NAN, -0.1, 1e-300],
            metadata: BTreeMap::new(),
        }
    }

    #[test]
    fn layout() {
        let text = format_fieldgrid(&sample()).unwrap();
        assert_eq!(text, "FGRID 1\n2 2 2\ntorus 2 1\n0 -8 42\nftdr:kl\n1.5e0\nnan\n-1e-1\n1e-300\n");
    }

    #[test]
    fn file_round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.fgrid");
        let mut f = sample();
        f.metadata.insert("samples_per_box".into(), json!(25));
        write_fieldgrid(&f, &path).unwrap();
        assert!(sidecar_path(&path).exists());
        let back = read_fieldgrid(&path).unwrap();
        assert!(back.same_values(&f));
        assert_eq!(back.metadata, f.metadata);
        assert_eq!((back.t0, back.tau, back.seed, &back.tag), (f.t0, f.tau, f.seed, &f.tag));
    }

    #[test]
    fn slice_field_header() {
        let f = ScalarField {
            domain: Domain::Box { bounds: vec![(-3.0, 3.0), (-0.5, 0.5), (-3.0, 3.0)] },
            counts: vec![2, 1, 2],
            t0: 0.0,
            tau: 1.0,
            seed: 0,
            tag: "ftle:max".into(),
            values: vec![0.0, f64::INFINITY, f64::NEG_INFINITY, 2.0],
            metadata: BTreeMap::new(),
        };
        let text = format_fieldgrid(&f).unwrap();
        assert!(text.starts_with("FGRID 1\n3 2 1 2\n-3 3 -0.5 0.5 -3 3\n"));
        assert!(parse_fieldgrid(&text).unwrap().same_values(&f));
    }

    #[test]
    fn malformed_inputs() {
        let good = format_fieldgrid(&sample()).unwrap();
        let bad_magic = good.replacen("FGRID 1", "FGRID 2", 1);
        assert!(matches!(parse_fieldgrid(&bad_magic), Err(Error::Parse { line: 1, .. })));
        let short: String = good.lines().take(7).map(|l| format!("{l}\n")).collect();
        assert!(parse_fieldgrid(&short).is_err());
        let bad_value = good.replacen("nan", "abc", 1);
        assert!(matches!(parse_fieldgrid(&bad_value), Err(Error::Parse { line: 7, .. })));
        assert!(parse_fieldgrid("").is_err());
    }

    proptest! {
        #[test]
        fn text_round_trip(
            nx in 1usize..6,
            ny in 1usize..6,
            raw in proptest::collection::vec(prop_oneof![
                any::<f64>(),
                Just(f64::NAN),
                Just(f64::INFINITY),
                Just(-0.0),
            ], 36),
            t0 in -1e3f64..1e3,
            tau in -1e3f64..1e3,
            seed in any::<u64>(),
        ) {
            let f = ScalarField {
                domain: Domain::Box { bounds: vec![(-1.0, 1.0), (0.0, 0.25)] },
                counts: vec![nx, ny],
                t0,
                tau,
                seed,
                tag: "ftle:min".into(),
                values: raw[..nx * ny].to_vec(),
                metadata: BTreeMap::new(),
            };
            let back = parse_fieldgrid(&format_fieldgrid(&f).unwrap()).unwrap();
            prop_assert!(back.same_values(&f));
            prop_assert_eq!(back.t0.to_bits(), f.t0.to_bits());
            prop_assert_eq!(back.tau.to_bits(), f.tau.to_bits());
            prop_assert_eq!(back.seed, f.seed);
            prop_assert_eq!(back.counts, f.counts);
        }
    }
}
