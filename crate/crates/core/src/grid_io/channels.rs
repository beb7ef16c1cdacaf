use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::GridError;

pub const BAND_COUNT: usize = 16;

/// Himawari band identifier, B01 through B16.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct BandId(u8);

impl BandId {
    /// Panics unless `number` is in 1..=16.
    pub fn new(number: u8) -> Self {
        assert!((1..=16).contains(&number), "band number {number} out of range");
        Self(number)
    }

    pub fn from_index(index: usize) -> Self {
        Self::new(index as u8 + 1)
    }

    pub fn number(self) -> u8 {
        self.0
    }

    pub fn index(self) -> usize {
        self.0 as usize - 1
    }

    pub fn kind(self) -> ChannelKind {
        if self.0 <= 6 {
            ChannelKind::Albedo
        } else {
            ChannelKind::BrightnessTemperature
        }
    }

    pub fn all() -> impl Iterator<Item = BandId> {
        (1..=16).map(BandId)
    }
}

impl fmt::Display for BandId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "B{:02}", self.0)
    }
}

impl FromStr for BandId {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s
            .strip_prefix('B')
            .or_else(|| s.strip_prefix('b'))
            .unwrap_or(s);
        match digits.parse::<u8>() {
            Ok(n) if (1..=16).contains(&n) => Ok(Self(n)),
            _ => Err(GridError::InvalidSpecs(format!("unknown band id {s:?}"))),
        }
    }
}

impl TryFrom<String> for BandId {
    type Error = GridError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<BandId> for String {
    fn from(b: BandId) -> String {
        b.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    /// Reflectance in percent.
    Albedo,
    /// Kelvin.
    BrightnessTemperature,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub id: BandId,
    pub kind: ChannelKind,
    pub range_min: f64,
    pub range_max: f64,
    /// Micrometres; informational only.
    pub central_wavelength: f64,
}

/// Value ranges of the sixteen Himawari-8/9 AHI bands.
pub fn himawari_specs() -> Vec<ChannelSpec> {
    const TABLE: [(f64, f64, f64); BAND_COUNT] = [
        (0.455, 0.0, 100.0),
        (0.510, 0.0, 100.0),
        (0.645, 0.0, 100.0),
        (0.860, 0.0, 100.0),
        (1.610, 0.0, 100.0),
        (2.260, 0.0, 100.0),
        (3.85, 220.0, 335.0),
        (6.25, 200.0, 260.0),
        (6.95, 200.0, 270.0),
        (7.35, 200.0, 275.0),
        (8.60, 200.0, 320.0),
        (9.63, 210.0, 295.0),
        (10.45, 200.0, 330.0),
        (11.20, 200.0, 330.0),
        (12.35, 200.0, 320.0),
        (13.30, 200.0, 295.0),
    ];
    TABLE
        .iter()
        .enumerate()
        .map(|(i, &(wl, lo, hi))| {
            let id = BandId::from_index(i);
            ChannelSpec {
                id,
                kind: id.kind(),
                range_min: lo,
                range_max: hi,
                central_wavelength: wl,
            }
        })
        .collect()
}

/// Requires sixteen specs in band order with non-empty ranges.
pub fn validate_specs(specs: &[ChannelSpec]) -> Result<(), GridError> {
    if specs.len() != BAND_COUNT {
        return Err(GridError::InvalidSpecs(format!(
            "expected {BAND_COUNT} channel specs, got {}",
            specs.len()
        )));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.id.index() != i {
            return Err(GridError::InvalidSpecs(format!(
                "spec {i} has id {}, expected {}",
                s.id,
                BandId::from_index(i)
            )));
        }
        if s.kind != s.id.kind() {
            return Err(GridError::InvalidSpecs(format!("{} has the wrong kind", s.id)));
        }
        if !(s.range_min < s.range_max) {
            return Err(GridError::InvalidSpecs(format!(
                "{} range [{}, {}] is empty",
                s.id, s.range_min, s.range_max
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_ranges() {
        let specs = himawari_specs();
        validate_specs(&specs).unwrap();
        assert!(specs[..6]
            .iter()
            .all(|s| s.kind == ChannelKind::Albedo && s.range_min == 0.0 && s.range_max == 100.0));
        let b13 = specs[BandId::new(13).index()];
        assert_eq!((b13.range_min, b13.range_max), (200.0, 330.0));
        assert_eq!(specs[6].range_min, 220.0);
        assert_eq!(specs[6].range_max, 335.0);
    }

    #[test]
    fn band_id_text() {
        assert_eq!(BandId::new(7).to_string(), "B07");
        assert_eq!("B16".parse::<BandId>().unwrap(), BandId::new(16));
        assert!("B17".parse::<BandId>().is_err());
    }

    #[test]
    fn swapped_range_rejected() {
        let mut specs = himawari_specs();
        specs[3].range_min = 100.0;
        specs[3].range_max = 0.0;
        assert!(validate_specs(&specs).is_err());
    }
}
