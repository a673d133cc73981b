//! JSON-lines ingestion and emission.
//!
//! One object per line:
//! `{"atomic_numbers": [int], "cart": [[x,y,z]...], "cell": [[3×3]],
//!   "energy": float, "forces": [[x,y,z]...], "stress": [[3×3]]}`
//! with an optional `"frac"` array (derived from `cart` when absent).

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde_json::{Map, Value};

use crate::error::{Error, Result};

use super::lattice::{self, Mat3, Vec3};
use super::record::{MaterialRecord, DEFAULT_MAX_NUM_ELEMENTS};

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<MaterialRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_jsonl(BufReader::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn read_jsonl(reader: impl BufRead) -> Result<Vec<MaterialRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_record(i + 1, &line)?);
    }
    Ok(out)
}

/// Number of non-blank lines, without parsing them.
pub fn count_records(path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut n = 0;
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            n += 1;
        }
    }
    Ok(n)
}

pub fn write_jsonl(mut w: impl Write, records: &[MaterialRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io("<writer>", e))?;
    }
    Ok(())
}

pub fn save_jsonl(path: impl AsRef<Path>, records: &[MaterialRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_jsonl(&mut w, records)?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn perr(line: usize, field: &str, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

fn field<'a>(obj: &'a Map<String, Value>, line: usize, name: &str) -> Result<&'a Value> {
    obj.get(name)
        .ok_or_else(|| perr(line, name, "missing field"))
}

fn number(v: &Value, line: usize, name: &str) -> Result<f64> {
    v.as_f64()
        .ok_or_else(|| perr(line, name, "expected a number"))
}

fn vec3s(v: &Value, line: usize, name: &str) -> Result<Vec<Vec3>> {
    let rows = v
        .as_array()
        .ok_or_else(|| perr(line, name, "expected an array of [x,y,z]"))?;
    rows.iter()
        .map(|row| {
            let r = row
                .as_array()
                .filter(|r| r.len() == 3)
                .ok_or_else(|| perr(line, name, "each entry must have 3 components"))?;
            Ok([
                number(&r[0], line, name)?,
                number(&r[1], line, name)?,
                number(&r[2], line, name)?,
            ])
        })
        .collect()
}

fn mat3(v: &Value, line: usize, name: &str) -> Result<Mat3> {
    let rows = vec3s(v, line, name)?;
    if rows.len() != 3 {
        return Err(perr(line, name, "expected a 3×3 matrix"));
    }
    Ok([rows[0], rows[1], rows[2]])
}

/// Parse and validate one line; `line` is 1-based and used in errors.
pub fn parse_record(line: usize, text: &str) -> Result<MaterialRecord> {
    let value: Value =
        serde_json::from_str(text).map_err(|e| perr(line, "<json>", e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| perr(line, "<json>", "expected an object"))?;

    let numbers = field(obj, line, "atomic_numbers")?
        .as_array()
        .ok_or_else(|| perr(line, "atomic_numbers", "expected an array"))?
        .iter()
        .map(|z| {
            z.as_u64()
                .and_then(|z| u32::try_from(z).ok())
                .ok_or_else(|| perr(line, "atomic_numbers", "expected non-negative integers"))
        })
        .collect::<Result<Vec<u32>>>()?;
    let cart = vec3s(field(obj, line, "cart")?, line, "cart")?;
    let cell = mat3(field(obj, line, "cell")?, line, "cell")?;
    let energy = number(field(obj, line, "energy")?, line, "energy")?;
    let forces = vec3s(field(obj, line, "forces")?, line, "forces")?;
    let stress = mat3(field(obj, line, "stress")?, line, "stress")?;
    let frac = match obj.get("frac") {
        Some(v) => vec3s(v, line, "frac")?,
        None => {
            lattice::to_fractional(&cart, &cell).map_err(|e| perr(line, "cell", e.to_string()))?
        }
    };

    let rec = MaterialRecord {
        atomic_numbers: numbers,
        cart,
        frac,
        cell,
        energy,
        forces,
        stress,
    };
    rec.validate(DEFAULT_MAX_NUM_ELEMENTS)
        .map_err(|(f, msg)| perr(line, f, msg))?;
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;

    const VALID: &str = r#"{"atomic_numbers":[1,8],"cart":[[0.1,0.2,0.3],[1.0,1.5,0.25]],"cell":[[4.0,0.0,0.0],[0.0,4.0,0.0],[0.0,0.0,4.0]],"energy":-1.2345678901234567,"forces":[[0.1,-0.2,0.3],[-0.1,0.2,-0.3]],"stress":[[0.01,0.002,0.0],[0.002,0.02,0.0],[0.0,0.0,0.03]]}"#;

    #[test]
    fn empty_input() {
        assert!(read_jsonl("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn single_valid_record_round_trips() {
        let recs = read_jsonl(VALID.as_bytes()).unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].energy, -1.2345678901234567);
        assert_eq!(recs[0].frac[0], [0.025, 0.05, 0.075]);
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &recs).unwrap();
        let again = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(again, recs);
    }

    #[test]
    fn wrong_force_length_names_line_and_field() {
        let bad = VALID.replace(
            r#""forces":[[0.1,-0.2,0.3],[-0.1,0.2,-0.3]]"#,
            r#""forces":[[0.1,-0.2,0.3]]"#,
        );
        match read_jsonl(bad.as_bytes()).unwrap_err() {
            Error::Parse { line, field, .. } => {
                assert_eq!(line, 1);
                assert_eq!(field, "forces");
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn missing_field_and_asymmetric_stress() {
        let missing = VALID.replace(r#""energy":-1.2345678901234567,"#, "");
        let text = format!("{VALID}\n{missing}\n");
        match read_jsonl(text.as_bytes()).unwrap_err() {
            Error::Parse { line, field, .. } => {
                assert_eq!((line, field.as_str()), (2, "energy"));
            }
            e => panic!("unexpected {e:?}"),
        }
        let asym = VALID.replace("[0.002,0.02,0.0]", "[0.5,0.02,0.0]");
        match read_jsonl(asym.as_bytes()).unwrap_err() {
            Error::Parse { field, .. } => assert_eq!(field, "stress"),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn inconsistent_frac_rejected() {
        let with_frac = VALID.replace(
            r#""energy""#,
            r#""frac":[[0.5,0.5,0.5],[0.0,0.0,0.0]],"energy""#,
        );
        match read_jsonl(with_frac.as_bytes()).unwrap_err() {
            Error::Parse { field, .. } => assert_eq!(field, "frac"),
            e => panic!("unexpected {e:?}"),
        }
    }
}
