use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ReadoutError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IqShot {
    pub i: f64,
    pub q: f64,
}

impl IqShot {
    pub fn new(i: f64, q: f64) -> Self {
        Self { i, q }
    }

    pub fn rotated(self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            i: c * self.i - s * self.q,
            q: s * self.i + c * self.q,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preparation {
    G,
    E,
    F,
    H,
    Equilibrium,
}

impl Preparation {
    pub fn as_str(self) -> &'static str {
        match self {
            Preparation::G => "g",
            Preparation::E => "e",
            Preparation::F => "f",
            Preparation::H => "h",
            Preparation::Equilibrium => "equilibrium",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "g" => Preparation::G,
            "e" => Preparation::E,
            "f" => Preparation::F,
            "h" => Preparation::H,
            "equilibrium" => Preparation::Equilibrium,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotSet {
    pub shots: Vec<IqShot>,
    pub label: Preparation,
}

#[derive(Serialize, Deserialize)]
struct Row {
    i: f64,
    q: f64,
    label: String,
}

impl ShotSet {
    pub fn new(shots: Vec<IqShot>, label: Preparation) -> Result<Self, ReadoutError> {
        if shots.is_empty() {
            return Err(ReadoutError::InvalidInput("empty shot set".into()));
        }
        if shots.iter().any(|s| !s.i.is_finite() || !s.q.is_finite()) {
            return Err(ReadoutError::InvalidInput("non-finite shot".into()));
        }
        Ok(Self { shots, label })
    }

    pub fn len(&self) -> usize {
        self.shots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shots.is_empty()
    }

    pub fn rotated(&self, angle: f64) -> Self {
        Self {
            shots: self.shots.iter().map(|s| s.rotated(angle)).collect(),
            label: self.label,
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), ReadoutError> {
        let mut w = csv::Writer::from_writer(writer);
        for s in &self.shots {
            w.serialize(Row {
                i: s.i,
                q: s.q,
                label: self.label.as_str().to_string(),
            })?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `i,q,label` CSV (a file holds one preparation). An `i,q` file
    /// without labels is accepted and tagged with `default_label`.
    pub fn read_csv<R: Read>(reader: R, default_label: Preparation) -> Result<Self, ReadoutError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let labelled = match headers.iter().map(String::as_str).collect::<Vec<_>>()[..] {
            ["i", "q"] => false,
            ["i", "q", "label"] => true,
            _ => {
                return Err(ReadoutError::InvalidInput(format!(
                    "shot CSV header must be i,q[,label], found {headers:?}"
                )))
            }
        };
        let mut shots = Vec::new();
        let mut label: Option<Preparation> = None;
        if labelled {
            for row in rdr.deserialize::<Row>() {
                let row = row?;
                let l = Preparation::parse(&row.label).ok_or_else(|| {
                    ReadoutError::InvalidInput(format!("unknown label {:?}", row.label))
                })?;
                if label.is_some_and(|prev| prev != l) {
                    return Err(ReadoutError::InvalidInput(
                        "shot CSV mixes preparation labels".into(),
                    ));
                }
                label = Some(l);
                shots.push(IqShot::new(row.i, row.q));
            }
        } else {
            for row in rdr.deserialize::<(f64, f64)>() {
                let (i, q) = row?;
                shots.push(IqShot::new(i, q));
            }
        }
        Self::new(shots, label.unwrap_or(default_label))
    }

    pub fn read_csv_path(
        path: impl AsRef<Path>,
        default_label: Preparation,
    ) -> Result<Self, ReadoutError> {
        Self::read_csv(std::fs::File::open(path)?, default_label)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let s = ShotSet::new(
            vec![IqShot::new(0.1, -2.5e-3), IqShot::new(1.0 / 3.0, 7.0)],
            Preparation::E,
        )
        .unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert!(buf.starts_with(b"i,q,label\n"));
        assert_eq!(ShotSet::read_csv(&buf[..], Preparation::G).unwrap(), s);
    }

    #[test]
    fn unlabelled_csv_uses_default() {
        let s = ShotSet::read_csv("i,q\n1,2\n".as_bytes(), Preparation::H).unwrap();
        assert_eq!(s.label, Preparation::H);
    }
}
