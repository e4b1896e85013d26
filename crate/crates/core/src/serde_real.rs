//! Serializers that write non-finite floats as the strings `"inf"`, `"-inf"` and `"nan"`.
//!
//! Use with `#[serde(serialize_with = "...")]` on fields that may be infinite.

use serde::ser::{SerializeSeq, Serializer};

fn write<S: Serializer>(v: f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

struct Real(f64);

impl serde::Serialize for Real {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        write(self.0, s)
    }
}

pub fn real<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    write(*v, s)
}

pub fn opt_real<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(v) => write(*v, s),
        None => s.serialize_none(),
    }
}

pub fn reals<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for x in v {
        seq.serialize_element(&Real(*x))?;
    }
    seq.end()
}

pub fn opt_reals<S: Serializer>(v: &Option<Vec<f64>>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(v) => reals(v, s),
        None => s.serialize_none(),
    }
}

pub fn labelled_reals<S: Serializer>(v: &[(Vec<usize>, f64)], s: S) -> Result<S::Ok, S::Error> {
    let mut seq = s.serialize_seq(Some(v.len()))?;
    for (j, x) in v {
        seq.serialize_element(&(j, Real(*x)))?;
    }
    seq.end()
}
