use std::fmt;
use std::str::FromStr;

use super::{GridError, GridGeometry, Plane};

pub const CLASS_COUNT: usize = 10;

/// Code for cells without a reference class (nighttime).
pub const UNLABELED: u8 = 255;

/// Clear sky plus the nine ISCCP cloud types, in code order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum CloudClass {
    Clear = 0,
    Cirrus = 1,
    Cirrostratus = 2,
    DeepConvection = 3,
    Altocumulus = 4,
    Altostratus = 5,
    Nimbostratus = 6,
    Cumulus = 7,
    Stratocumulus = 8,
    Stratus = 9,
}

impl CloudClass {
    pub const ALL: [CloudClass; CLASS_COUNT] = [
        CloudClass::Clear,
        CloudClass::Cirrus,
        CloudClass::Cirrostratus,
        CloudClass::DeepConvection,
        CloudClass::Altocumulus,
        CloudClass::Altostratus,
        CloudClass::Nimbostratus,
        CloudClass::Cumulus,
        CloudClass::Stratocumulus,
        CloudClass::Stratus,
    ];

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn abbrev(self) -> &'static str {
        ["Cl", "Ci", "Cs", "Dc", "Ac", "As", "Ns", "Cu", "Sc", "St"][self as usize]
    }
}

impl fmt::Display for CloudClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.abbrev())
    }
}

impl FromStr for CloudClass {
    type Err = GridError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.abbrev().eq_ignore_ascii_case(s))
            .ok_or_else(|| GridError::InvalidConfig(format!("unknown class {s:?}")))
    }
}

/// Per-cell class codes: 0..=9 for [`CloudClass`], 255 for unlabeled.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudLabelGrid {
    pub geometry: GridGeometry,
    pub labels: Plane<u8>,
}

impl CloudLabelGrid {
    pub fn new(geometry: GridGeometry, labels: Vec<u8>) -> Result<Self, GridError> {
        if labels.len() != geometry.len() {
            return Err(GridError::GeometryMismatch(format!(
                "{} labels for a {}x{} grid",
                labels.len(),
                geometry.rows,
                geometry.cols
            )));
        }
        let grid = Self {
            geometry,
            labels: Plane::from_vec(geometry.rows, geometry.cols, labels),
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn filled(geometry: GridGeometry, code: u8) -> Self {
        Self {
            geometry,
            labels: Plane::filled(geometry.rows, geometry.cols, code),
        }
    }

    /// Rejects the first code outside {0..9, 255}.
    pub fn validate(&self) -> Result<(), GridError> {
        match self
            .labels
            .data
            .iter()
            .position(|&c| c as usize >= CLASS_COUNT && c != UNLABELED)
        {
            Some(index) => Err(GridError::InvalidLabel {
                index,
                code: self.labels.data[index],
            }),
            None => Ok(()),
        }
    }

    pub fn codes(&self) -> &[u8] {
        &self.labels.data
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.data.iter().filter(|&&c| c != UNLABELED).count()
    }

    pub fn crop(&self, row: usize, col: usize, rows: usize, cols: usize) -> Self {
        Self {
            geometry: self.geometry.window(row, col, rows, cols),
            labels: self.labels.crop(row, col, rows, cols),
        }
    }
}
