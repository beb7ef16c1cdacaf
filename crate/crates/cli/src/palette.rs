//! Class colours for rendered label maps.

use anyhow::{anyhow, bail, Result};
use kbdd::grid_io::{CloudClass, CLASS_COUNT, UNLABELED};

use crate::config::FlatConfig;

pub type Rgb = [u8; 3];

/// Ten class colours plus black for unlabeled cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderPalette {
    pub classes: [Rgb; CLASS_COUNT],
    pub unlabeled: Rgb,
}

impl Default for RenderPalette {
    fn default() -> Self {
        Self {
            classes: [
                [70, 130, 180],  // Cl
                [255, 255, 255], // Ci
                [200, 200, 255], // Cs
                [220, 20, 60],   // Dc
                [255, 215, 0],   // Ac
                [154, 205, 50],  // As
                [128, 0, 128],   // Ns
                [255, 140, 0],   // Cu
                [0, 206, 209],   // Sc
                [139, 69, 19],   // St
            ],
            unlabeled: [0, 0, 0],
        }
    }
}

fn parse_rgb(s: &str) -> Result<Rgb> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        bail!("colour {s:?} must be r,g,b");
    }
    let mut rgb = [0u8; 3];
    for (dst, p) in rgb.iter_mut().zip(parts) {
        *dst = p.parse().map_err(|_| anyhow!("colour component {p:?} is not 0-255"))?;
    }
    Ok(rgb)
}

impl RenderPalette {
    /// Applies `palette.<abbrev> = r,g,b` overrides.
    pub fn from_config(cfg: &FlatConfig) -> Result<Self> {
        let mut p = Self::default();
        for (key, value) in cfg.entries_with_prefix("palette.") {
            let rgb = parse_rgb(value)?;
            match CloudClass::ALL.iter().position(|c| c.abbrev().eq_ignore_ascii_case(key)) {
                Some(i) => p.classes[i] = rgb,
                None if key == "unlabeled" => bail!("the unlabeled colour is fixed to black"),
                None => bail!("unknown palette class {key:?}"),
            }
        }
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let all: Vec<Rgb> = self.classes.iter().copied().chain([self.unlabeled]).collect();
        for i in 0..all.len() {
            for j in 0..i {
                if all[i] == all[j] {
                    bail!("palette colours must be distinct ({:?} repeats)", all[i]);
                }
            }
        }
        Ok(())
    }

    pub fn color(&self, code: u8) -> Rgb {
        if code == UNLABELED {
            self.unlabeled
        } else {
            self.classes[code as usize]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_distinct_with_black_unlabeled() {
        let p = RenderPalette::default();
        p.validate().unwrap();
        assert_eq!(p.color(UNLABELED), [0, 0, 0]);
    }

    #[test]
    fn overrides() {
        let cfg = FlatConfig::parse("palette.St = 1,2,3").unwrap();
        assert_eq!(RenderPalette::from_config(&cfg).unwrap().color(9), [1, 2, 3]);
        let dup = FlatConfig::parse("palette.St = 0,0,0").unwrap();
        assert!(RenderPalette::from_config(&dup).is_err());
    }
}
