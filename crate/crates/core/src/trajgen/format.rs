//! JSON-lines trajectory files: a header object followed by one record per line.
//!
//! ```text
//! {"format":"viewrope-trajectory","version":1,"records":2}
//! {"frame":0,"c2w":[...16 row-major...],"euler":{"pitch":..,"roll":..,"yaw":..},"pos_cm":[x,y,z],"fov_v":..,"fov_h":..,"wasd":[w,a,s,d],"fps":[num,den]}
//! ```
//!
//! Floats are written with 17 significant digits, which round-trips `f64` exactly.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{Matrix4, Vector3};
use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use super::{Fps, TrajectoryRecord};
use crate::geometry::EulerUE5;
use crate::{Error, Result};

pub const FORMAT_NAME: &str = "viewrope-trajectory";
const VERSION: u64 = 1;
const RECORD_KEYS: [&str; 8] = ["frame", "c2w", "euler", "pos_cm", "fov_v", "fov_h", "wasd", "fps"];

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn num_list(xs: impl IntoIterator<Item = f64>) -> String {
    let parts: Vec<String> = xs.into_iter().map(num).collect();
    format!("[{}]", parts.join(","))
}

fn record_line(r: &TrajectoryRecord) -> String {
    // Row-major; nalgebra stores column-major.
    let c2w = (0..4).flat_map(|i| (0..4).map(move |j| (i, j))).map(|(i, j)| r.c2w[(i, j)]);
    format!(
        "{{\"frame\":{},\"c2w\":{},\"euler\":{{\"pitch\":{},\"roll\":{},\"yaw\":{}}},\"pos_cm\":{},\"fov_v\":{},\"fov_h\":{},\"wasd\":[{},{},{},{}],\"fps\":[{},{}]}}",
        r.frame,
        num_list(c2w),
        num(r.euler.pitch),
        num(r.euler.roll),
        num(r.euler.yaw),
        num_list(r.pos_cm.iter().copied()),
        num(r.fov_v),
        num(r.fov_h),
        r.wasd[0],
        r.wasd[1],
        r.wasd[2],
        r.wasd[3],
        r.fps.num,
        r.fps.den
    )
}

/// Writes `traj` in the JSON-lines format. Records must satisfy their invariants.
pub fn write_trajectory(traj: &[TrajectoryRecord], mut w: impl Write) -> Result<()> {
    writeln!(
        w,
        "{{\"format\":\"{FORMAT_NAME}\",\"version\":{VERSION},\"records\":{}}}",
        traj.len()
    )?;
    for (i, r) in traj.iter().enumerate() {
        r.validate()
            .map_err(|(field, msg)| Error::parse(i + 2, field, msg))?;
        writeln!(w, "{}", record_line(r))?;
    }
    Ok(())
}

pub fn serialize_trajectory(traj: &[TrajectoryRecord], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_trajectory(traj, &mut f)?;
    f.flush()?;
    Ok(())
}

fn take<T: DeserializeOwned>(map: &mut Map<String, Value>, key: &str, line: usize) -> Result<T> {
    let v = map
        .remove(key)
        .ok_or_else(|| Error::parse(line, key, "missing"))?;
    serde_json::from_value(v).map_err(|e| Error::parse(line, key, e.to_string()))
}

fn object(text: &str, line: usize) -> Result<Map<String, Value>> {
    match serde_json::from_str::<Value>(text) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(Error::parse(line, "line", "expected a JSON object")),
        Err(e) => Err(Error::parse(line, "line", e.to_string())),
    }
}

fn reject_extra(map: &Map<String, Value>, line: usize) -> Result<()> {
    match map.keys().next() {
        Some(k) => Err(Error::parse(line, k.as_str(), "unknown field")),
        None => Ok(()),
    }
}

fn parse_record(text: &str, line: usize) -> Result<TrajectoryRecord> {
    let mut m = object(text, line)?;
    let frame: u64 = take(&mut m, "frame", line)?;
    let c2w: [f64; 16] = take(&mut m, "c2w", line)?;
    let euler_value: Value = take(&mut m, "euler", line)?;
    let pos: [f64; 3] = take(&mut m, "pos_cm", line)?;
    let fov_v: f64 = take(&mut m, "fov_v", line)?;
    let fov_h: f64 = take(&mut m, "fov_h", line)?;
    let wasd: [bool; 4] = take(&mut m, "wasd", line)?;
    let fps: Fps = take(&mut m, "fps", line)?;
    reject_extra(&m, line)?;
    debug_assert!(RECORD_KEYS.iter().all(|k| !m.contains_key(*k)));

    let Value::Object(mut e) = euler_value else {
        return Err(Error::parse(line, "euler", "expected an object"));
    };
    let euler = EulerUE5::new(
        take(&mut e, "pitch", line).map_err(|_| Error::parse(line, "euler.pitch", "missing or not a number"))?,
        take(&mut e, "roll", line).map_err(|_| Error::parse(line, "euler.roll", "missing or not a number"))?,
        take(&mut e, "yaw", line).map_err(|_| Error::parse(line, "euler.yaw", "missing or not a number"))?,
    );
    if let Some(k) = e.keys().next() {
        return Err(Error::parse(line, format!("euler.{k}"), "unknown field"));
    }

    let rec = TrajectoryRecord {
        frame,
        c2w: Matrix4::from_row_slice(&c2w),
        euler,
        pos_cm: Vector3::from(pos),
        fov_v,
        fov_h,
        wasd,
        fps,
    };
    rec.validate().map_err(|(field, msg)| Error::parse(line, field, msg))?;
    Ok(rec)
}

/// Parses and validates a trajectory file's contents.
pub fn parse_trajectory(reader: impl BufRead) -> Result<Vec<TrajectoryRecord>> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .transpose()?
        .ok_or_else(|| Error::parse(1, "header", "empty file"))?;
    let mut h = object(&header, 1)?;
    let format: String = take(&mut h, "format", 1)?;
    if format != FORMAT_NAME {
        return Err(Error::parse(1, "format", format!("expected `{FORMAT_NAME}`, got `{format}`")));
    }
    let version: u64 = take(&mut h, "version", 1)?;
    if version != VERSION {
        return Err(Error::parse(1, "version", format!("unsupported version {version}")));
    }
    let expected: usize = take(&mut h, "records", 1)?;
    reject_extra(&h, 1)?;

    let mut out: Vec<TrajectoryRecord> = Vec::with_capacity(expected);
    for (n, text) in lines.enumerate() {
        let line = n + 2;
        let text = text?;
        if text.trim().is_empty() {
            return Err(Error::parse(line, "line", "blank line"));
        }
        let rec = parse_record(&text, line)?;
        if let Some(first) = out.first() {
            if rec.frame != first.frame + out.len() as u64 {
                return Err(Error::parse(
                    line,
                    "frame",
                    format!("expected {}, got {}", first.frame + out.len() as u64, rec.frame),
                ));
            }
            if rec.fps != first.fps {
                return Err(Error::parse(line, "fps", "frame rate changes within the trajectory"));
            }
        }
        out.push(rec);
    }
    if out.len() != expected {
        return Err(Error::parse(
            out.len() + 2,
            "records",
            format!("header announces {expected} records, found {}", out.len()),
        ));
    }
    Ok(out)
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    parse_trajectory(f)
}
