//! Serde helpers writing exact rationals as `"p/q"` strings.

use serde::{de::Error, Deserialize, Deserializer, Serializer};

use crate::Rational;

pub fn serialize<S: Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(r)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
    let text = String::deserialize(d)?;
    text.parse().map_err(|_| D::Error::custom(format!("bad rational {text:?}")))
}
