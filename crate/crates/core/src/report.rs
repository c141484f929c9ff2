//! JSON output with floats written to 17 significant digits, and
//! content-addressed grid payloads.

use std::io;
use std::path::Path;

use serde::Serialize;
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::Result;

/// Pretty JSON whose floats always carry 17 significant digits, so that
/// decimal round trips are bit-exact.
struct Fmt17<'a>(PrettyFormatter<'a>);

impl Formatter for Fmt17<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json_bytes<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, Fmt17(PrettyFormatter::new()));
    value.serialize(&mut ser).expect("in-memory serialization");
    out.push(b'\n');
    out
}

pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> String {
    String::from_utf8(to_json_bytes(value)).expect("JSON is UTF-8")
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json_bytes(value))?;
    Ok(())
}

/// Writes `bytes` to `dir/grids/<sha256>.bin` unless already present and
/// returns the reference `grids/<sha256>.bin`.
pub fn store_payload(dir: &Path, hash: &str, bytes: &[u8]) -> Result<String> {
    let rel = format!("grids/{hash}.bin");
    let path = dir.join(&rel);
    if !path.exists() {
        std::fs::create_dir_all(dir.join("grids"))?;
        std::fs::write(&path, bytes)?;
    }
    Ok(rel)
}

/// Two-column CSV `k,value`.
pub fn write_curve_csv(path: &Path, curve: &[(u32, f64)]) -> Result<()> {
    let mut s = String::from("k,value\n");
    for (k, v) in curve {
        s.push_str(&format!("{k},{v:.16e}\n"));
    }
    std::fs::write(path, s)?;
    Ok(())
}
