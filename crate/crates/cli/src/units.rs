//! Unit-tagged quantities for config files.
//!
//! A quantity is written either as a table `{ value = 20.92, unit = "ghz" }`
//! or as a string `"20.92 GHz"`. Bare numbers are rejected. Values are held
//! in SI (Hz, s, K, rad) and serialize back as `{ value, unit }` in SI.

use std::fmt;
use std::marker::PhantomData;

use serde::de::{self, MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub trait Dimension {
    const NAME: &'static str;
    const SI: &'static str;
    const UNITS: &'static [(&'static str, f64)];
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyDim;
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeDim;
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureDim;
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleDim;

impl Dimension for FrequencyDim {
    const NAME: &'static str = "frequency";
    const SI: &'static str = "hz";
    const UNITS: &'static [(&'static str, f64)] =
        &[("hz", 1.0), ("khz", 1e3), ("mhz", 1e6), ("ghz", 1e9)];
}

impl Dimension for TimeDim {
    const NAME: &'static str = "time";
    const SI: &'static str = "s";
    const UNITS: &'static [(&'static str, f64)] =
        &[("s", 1.0), ("ms", 1e-3), ("us", 1e-6), ("μs", 1e-6), ("ns", 1e-9)];
}

impl Dimension for TemperatureDim {
    const NAME: &'static str = "temperature";
    const SI: &'static str = "k";
    const UNITS: &'static [(&'static str, f64)] = &[("k", 1.0), ("mk", 1e-3)];
}

impl Dimension for AngleDim {
    const NAME: &'static str = "angle";
    const SI: &'static str = "rad";
    const UNITS: &'static [(&'static str, f64)] =
        &[("rad", 1.0), ("deg", std::f64::consts::PI / 180.0)];
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantity<D> {
    si: f64,
    _dim: PhantomData<D>,
}

pub type Frequency = Quantity<FrequencyDim>;
pub type Time = Quantity<TimeDim>;
pub type Temperature = Quantity<TemperatureDim>;
pub type Angle = Quantity<AngleDim>;

impl<D: Dimension> Quantity<D> {
    pub fn si(si: f64) -> Self {
        Self {
            si,
            _dim: PhantomData,
        }
    }

    pub fn value(&self) -> f64 {
        self.si
    }

    fn from_tagged(value: f64, unit: &str) -> Result<Self, String> {
        let u = unit.trim().to_lowercase();
        let scale = D::UNITS
            .iter()
            .find(|(name, _)| *name == u)
            .map(|(_, s)| *s)
            .ok_or_else(|| {
                let known: Vec<&str> = D::UNITS.iter().map(|(n, _)| *n).collect();
                format!("unknown {} unit {unit:?} (expected one of {known:?})", D::NAME)
            })?;
        if !value.is_finite() {
            return Err(format!("non-finite {} value", D::NAME));
        }
        Ok(Self::si(value * scale))
    }
}

impl<D: Dimension> Serialize for Quantity<D> {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("Quantity", 2)?;
        st.serialize_field("value", &self.si)?;
        st.serialize_field("unit", D::SI)?;
        st.end()
    }
}

struct QuantityVisitor<D>(PhantomData<D>);

impl<'de, D: Dimension> Visitor<'de> for QuantityVisitor<D> {
    type Value = Quantity<D>;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        write!(
            f,
            "a unit-tagged {} such as {{ value = 1.5, unit = \"{}\" }} or \"1.5 {}\"",
            D::NAME,
            D::UNITS[D::UNITS.len() - 1].0,
            D::UNITS[D::UNITS.len() - 1].0
        )
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<Self::Value, E> {
        Err(E::custom(format!(
            "missing unit tag on {} {v}; write {{ value = {v}, unit = \"...\" }}",
            D::NAME
        )))
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<Self::Value, E> {
        self.visit_f64(v as f64)
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<Self::Value, E> {
        self.visit_f64(v as f64)
    }

    fn visit_str<E: de::Error>(self, s: &str) -> Result<Self::Value, E> {
        let s = s.trim();
        let split = s
            .find(|c: char| c.is_alphabetic() || c == 'μ')
            .ok_or_else(|| E::custom(format!("missing unit tag in {s:?}")))?;
        let (num, unit) = s.split_at(split);
        let value: f64 = num
            .trim()
            .parse()
            .map_err(|_| E::custom(format!("cannot parse number in {s:?}")))?;
        Quantity::from_tagged(value, unit).map_err(E::custom)
    }

    fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
        let mut value: Option<f64> = None;
        let mut unit: Option<String> = None;
        while let Some(key) = map.next_key::<String>()? {
            match key.as_str() {
                "value" => value = Some(map.next_value()?),
                "unit" => unit = Some(map.next_value()?),
                other => {
                    return Err(de::Error::unknown_field(other, &["value", "unit"]));
                }
            }
        }
        let value = value.ok_or_else(|| de::Error::missing_field("value"))?;
        let unit = unit.ok_or_else(|| {
            de::Error::custom(format!("missing unit tag on {} {value}", D::NAME))
        })?;
        Quantity::from_tagged(value, &unit).map_err(de::Error::custom)
    }
}

impl<'de, D: Dimension> Deserialize<'de> for Quantity<D> {
    fn deserialize<De: Deserializer<'de>>(d: De) -> Result<Self, De::Error> {
        d.deserialize_any(QuantityVisitor(PhantomData))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, Deserialize, Serialize)]
    struct Holder {
        f: Frequency,
    }

    fn parse(text: &str) -> Result<Holder, toml::de::Error> {
        toml::from_str(text)
    }

    #[test]
    fn accepts_tables_and_strings() {
        assert_eq!(parse("f = { value = 20.92, unit = \"GHz\" }").unwrap().f.value(), 20.92e9);
        assert_eq!(parse("f = \"11.28 MHz\"").unwrap().f.value(), 11.28e6);
        assert_eq!(parse("f = \"500kHz\"").unwrap().f.value(), 5e5);
    }

    #[test]
    fn rejects_bare_numbers_and_wrong_units() {
        let e = parse("f = 20.92").unwrap_err().to_string();
        assert!(e.contains("missing unit tag"), "{e}");
        assert!(parse("f = { value = 1.0 }").is_err());
        assert!(parse("f = \"3 us\"").is_err());
    }

    #[test]
    fn serializes_in_si_and_reads_back() {
        let h = parse("f = \"5.36 GHz\"").unwrap();
        let text = toml::to_string(&h).unwrap();
        assert_eq!(parse(&text).unwrap().f, h.f);
        let json = serde_json::to_value(&h).unwrap();
        assert_eq!(json["f"]["unit"], "hz");
    }
}
