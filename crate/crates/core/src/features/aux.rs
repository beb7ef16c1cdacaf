use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};

use super::{satellite_view, solar_position, ChannelSource, FeatureError, FeatureStack};
use crate::grid_io::{GridGeometry, Plane};

/// Sub-satellite longitude of Himawari-8/9, degrees east.
pub const HIMAWARI_SUB_LONGITUDE: f64 = 140.7;

/// Auxiliary fields in their fixed append order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AuxField {
    SatelliteZenith,
    SatelliteAzimuth,
    SolarZenith,
    SolarAzimuth,
    Longitude,
    Latitude,
    Altitude,
    LandWater,
}

impl AuxField {
    pub const ALL: [AuxField; 8] = [
        AuxField::SatelliteZenith,
        AuxField::SatelliteAzimuth,
        AuxField::SolarZenith,
        AuxField::SolarAzimuth,
        AuxField::Longitude,
        AuxField::Latitude,
        AuxField::Altitude,
        AuxField::LandWater,
    ];

    pub fn key(self) -> &'static str {
        match self {
            AuxField::SatelliteZenith => "saz",
            AuxField::SatelliteAzimuth => "saa",
            AuxField::SolarZenith => "soz",
            AuxField::SolarAzimuth => "soa",
            AuxField::Longitude => "lon",
            AuxField::Latitude => "lat",
            AuxField::Altitude => "alt",
            AuxField::LandWater => "land",
        }
    }

    fn position(self) -> usize {
        self as usize
    }
}

impl fmt::Display for AuxField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for AuxField {
    type Err = FeatureError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        let alias = match s.as_str() {
            "longitude" => "lon",
            "latitude" => "lat",
            "altitude" => "alt",
            "land_water" | "landwater" => "land",
            other => other,
        };
        AuxField::ALL
            .iter()
            .copied()
            .find(|f| f.key() == alias)
            .ok_or_else(|| FeatureError::Aux(format!("unknown auxiliary field {s:?}")))
    }
}

/// One flag per [`AuxField`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct AuxSelection {
    flags: [bool; 8],
}

impl AuxSelection {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn all() -> Self {
        Self { flags: [true; 8] }
    }

    /// Satellite and solar zenith/azimuth angles.
    pub fn viewing_angles() -> Self {
        Self::from_fields([
            AuxField::SatelliteZenith,
            AuxField::SatelliteAzimuth,
            AuxField::SolarZenith,
            AuxField::SolarAzimuth,
        ])
    }

    pub fn from_fields(fields: impl IntoIterator<Item = AuxField>) -> Self {
        let mut s = Self::none();
        for f in fields {
            s.flags[f.position()] = true;
        }
        s
    }

    pub fn contains(&self, f: AuxField) -> bool {
        self.flags[f.position()]
    }

    pub fn fields(&self) -> impl Iterator<Item = AuxField> + '_ {
        AuxField::ALL.into_iter().filter(|f| self.contains(*f))
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }
}

impl fmt::Display for AuxSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.count() == 0 {
            return f.write_str("none");
        }
        let keys: Vec<&str> = self.fields().map(AuxField::key).collect();
        f.write_str(&keys.join(","))
    }
}

impl FromStr for AuxSelection {
    type Err = FeatureError;

    /// Comma-separated field keys, or `none` / `all` / `angles`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "" | "none" => Ok(Self::none()),
            "all" => Ok(Self::all()),
            "angles" => Ok(Self::viewing_angles()),
            list => list
                .split(',')
                .map(str::parse)
                .collect::<Result<Vec<AuxField>, _>>()
                .map(Self::from_fields),
        }
    }
}

/// Static surface grids sharing a scene's geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticGrids {
    /// Metres.
    pub altitude: Plane<f32>,
    /// 0 water, 1 land.
    pub land_water: Plane<f32>,
}

/// Per-cell auxiliary values in physical units (degrees, metres).
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryGrid {
    pub rows: usize,
    pub cols: usize,
    pub saz: Vec<f32>,
    pub saa: Vec<f32>,
    pub soz: Vec<f32>,
    pub soa: Vec<f32>,
    pub longitude: Vec<f32>,
    pub latitude: Vec<f32>,
    pub altitude: Vec<f32>,
    pub land_water: Vec<f32>,
    /// Cell is inside the satellite's visible disk.
    pub satellite_visible: Vec<bool>,
}

impl AuxiliaryGrid {
    fn field(&self, f: AuxField) -> &[f32] {
        match f {
            AuxField::SatelliteZenith => &self.saz,
            AuxField::SatelliteAzimuth => &self.saa,
            AuxField::SolarZenith => &self.soz,
            AuxField::SolarAzimuth => &self.soa,
            AuxField::Longitude => &self.longitude,
            AuxField::Latitude => &self.latitude,
            AuxField::Altitude => &self.altitude,
            AuxField::LandWater => &self.land_water,
        }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        let n = self.rows * self.cols;
        for f in AuxField::ALL {
            if self.field(f).len() != n {
                return Err(FeatureError::Shape(format!("aux field {f} has wrong length")));
            }
        }
        let bad = |name: &str| FeatureError::Aux(format!("{name} out of range"));
        if self.saz.iter().chain(&self.soz).any(|z| !(0.0..=180.0).contains(z)) {
            return Err(bad("zenith angle"));
        }
        if self.saa.iter().chain(&self.soa).any(|a| !(0.0..360.0).contains(a)) {
            return Err(bad("azimuth angle"));
        }
        if self.latitude.iter().any(|p| !(-90.0..=90.0).contains(p)) {
            return Err(bad("latitude"));
        }
        if self.land_water.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(bad("land_water"));
        }
        Ok(())
    }

    /// Fraction of cells where the sun is below the horizon.
    pub fn night_fraction(&self) -> f64 {
        if self.soz.is_empty() {
            return 0.0;
        }
        self.soz.iter().filter(|&&z| z > 90.0).count() as f64 / self.soz.len() as f64
    }
}

/// Computes viewing geometry for every cell of `geometry` at time `t`.
pub fn auxiliary_grid(
    geometry: &GridGeometry,
    t: DateTime<Utc>,
    statics: Option<&StaticGrids>,
    sub_longitude: f64,
) -> Result<AuxiliaryGrid, FeatureError> {
    auxiliary_window(geometry, t, statics, sub_longitude, (0, 0, geometry.rows, geometry.cols))
}

/// Like [`auxiliary_grid`] but only for the `(row, col, rows, cols)` window.
///
/// Coordinates come from the full geometry, so every cell is bit-identical
/// to the same cell of the full grid.
pub fn auxiliary_window(
    geometry: &GridGeometry,
    t: DateTime<Utc>,
    statics: Option<&StaticGrids>,
    sub_longitude: f64,
    window: (usize, usize, usize, usize),
) -> Result<AuxiliaryGrid, FeatureError> {
    let (r0, c0, rows, cols) = window;
    if r0 + rows > geometry.rows || c0 + cols > geometry.cols {
        return Err(FeatureError::Shape(format!(
            "window {rows}x{cols} at ({r0}, {c0}) exceeds the {}x{} grid",
            geometry.rows, geometry.cols
        )));
    }
    let n = rows * cols;
    if let Some(s) = statics {
        for p in [&s.altitude, &s.land_water] {
            if p.rows != geometry.rows || p.cols != geometry.cols {
                return Err(FeatureError::Shape(format!(
                    "static grid {}x{} vs scene {}x{}",
                    p.rows, p.cols, geometry.rows, geometry.cols
                )));
            }
        }
    }
    let statics = statics.map(|s| StaticGrids {
        altitude: s.altitude.crop(r0, c0, rows, cols),
        land_water: s.land_water.crop(r0, c0, rows, cols),
    });
    let statics = statics.as_ref();
    let mut g = AuxiliaryGrid {
        rows,
        cols,
        saz: Vec::with_capacity(n),
        saa: Vec::with_capacity(n),
        soz: Vec::with_capacity(n),
        soa: Vec::with_capacity(n),
        longitude: Vec::with_capacity(n),
        latitude: Vec::with_capacity(n),
        altitude: statics.map_or_else(|| vec![0.0; n], |s| s.altitude.data.clone()),
        land_water: statics.map_or_else(|| vec![0.0; n], |s| s.land_water.data.clone()),
        satellite_visible: Vec::with_capacity(n),
    };
    for r in r0..r0 + rows {
        let lat = geometry.latitude(r);
        for c in c0..c0 + cols {
            let lon = geometry.longitude(c);
            let sun = solar_position(t, lat, lon);
            let sat = satellite_view(sub_longitude, lat, lon);
            g.saz.push(sat.zenith as f32);
            g.saa.push(sat.azimuth as f32);
            g.soz.push(sun.zenith as f32);
            g.soa.push(sun.azimuth as f32);
            g.longitude.push(lon as f32);
            g.latitude.push(lat as f32);
            g.satellite_visible.push(sat.visible);
        }
    }
    // f32 rounding can push an azimuth just below 360 up to 360
    for a in g.saa.iter_mut().chain(g.soa.iter_mut()) {
        if *a >= 360.0 {
            *a = 0.0;
        }
    }
    Ok(g)
}

fn normalize(f: AuxField, v: f32) -> f32 {
    match f {
        AuxField::SatelliteZenith | AuxField::SolarZenith => (v / 90.0).clamp(0.0, 2.0) / 2.0,
        AuxField::SatelliteAzimuth | AuxField::SolarAzimuth => v / 360.0,
        AuxField::Longitude => {
            let l = (v as f64).rem_euclid(360.0);
            let l = if l >= 180.0 { l - 360.0 } else { l };
            ((l + 180.0) / 360.0) as f32
        }
        AuxField::Latitude => (v + 90.0) / 180.0,
        AuxField::Altitude => (v / 9000.0).clamp(0.0, 1.0),
        AuxField::LandWater => v,
    }
}

/// Appends the selected auxiliary fields, normalized to [0, 1], after the
/// existing channels.
pub fn concat_aux(
    mut stack: FeatureStack,
    aux: &AuxiliaryGrid,
    sel: &AuxSelection,
) -> Result<FeatureStack, FeatureError> {
    if aux.rows != stack.rows || aux.cols != stack.cols {
        return Err(FeatureError::Shape(format!(
            "aux grid {}x{} vs stack {}x{}",
            aux.rows, aux.cols, stack.rows, stack.cols
        )));
    }
    aux.validate()?;
    stack.data.reserve(sel.count() * stack.plane_len());
    for f in sel.fields() {
        stack.data.extend(aux.field(f).iter().map(|&v| normalize(f, v)));
        stack.layout.push(ChannelSource::Aux(f));
    }
    Ok(stack)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{apply_mask, base_layout, MaskConfig};
    use chrono::TimeZone;

    fn stack(rows: usize, cols: usize) -> FeatureStack {
        let layout = base_layout();
        FeatureStack {
            rows,
            cols,
            data: (0..layout.len() * rows * cols).map(|i| (i % 7) as f32 / 7.0).collect(),
            layout,
        }
    }

    fn aux(rows: usize, cols: usize) -> AuxiliaryGrid {
        let geo = GridGeometry::new(30.0, 130.0, 0.5, rows, cols);
        let t = Utc.with_ymd_and_hms(2022, 9, 23, 3, 0, 0).unwrap();
        auxiliary_grid(&geo, t, None, HIMAWARI_SUB_LONGITUDE).unwrap()
    }

    #[test]
    fn channel_counts_per_selection() {
        let a = aux(4, 4);
        assert_eq!(concat_aux(stack(4, 4), &a, &AuxSelection::viewing_angles()).unwrap().channels(), 80);
        assert_eq!(concat_aux(stack(4, 4), &a, &AuxSelection::none()).unwrap(), stack(4, 4));
        assert_eq!(concat_aux(stack(4, 4), &a, &AuxSelection::all()).unwrap().channels(), 84);
    }

    #[test]
    fn appended_values_are_normalized() {
        let a = aux(3, 5);
        let s = concat_aux(stack(3, 5), &a, &AuxSelection::all()).unwrap();
        for c in 76..84 {
            assert!(s.channel(c).iter().all(|v| (0.0..=1.0).contains(v)), "channel {c}");
        }
        assert_eq!(s.layout[76], ChannelSource::Aux(AuxField::SatelliteZenith));
        assert_eq!(s.layout[83], ChannelSource::Aux(AuxField::LandWater));
        assert_eq!(s.channel(81)[0], (30.0 + 90.0) / 180.0);
    }

    #[test]
    fn shape_mismatch_rejected() {
        assert!(concat_aux(stack(3, 3), &aux(3, 4), &AuxSelection::all()).is_err());
    }

    #[test]
    fn mask_commutes_with_aux() {
        let a = aux(3, 3);
        let cfg = MaskConfig::vis_nir();
        let sel = AuxSelection::all();
        let x = concat_aux(apply_mask(stack(3, 3), &cfg).unwrap(), &a, &sel).unwrap();
        let y = apply_mask(concat_aux(stack(3, 3), &a, &sel).unwrap(), &cfg).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn selection_text() {
        let s: AuxSelection = "saz,saa,soz,soa".parse().unwrap();
        assert_eq!(s, AuxSelection::viewing_angles());
        assert_eq!(s.to_string(), "saz,saa,soz,soa");
        assert_eq!("all".parse::<AuxSelection>().unwrap().count(), 8);
        assert!("saz,foo".parse::<AuxSelection>().is_err());
    }

    #[test]
    fn grid_invariants_hold() {
        let a = aux(6, 6);
        a.validate().unwrap();
        assert!(a.satellite_visible.iter().all(|&v| v));
        // 03 UTC is near local noon at 130 E
        assert_eq!(a.night_fraction(), 0.0);
    }
}
