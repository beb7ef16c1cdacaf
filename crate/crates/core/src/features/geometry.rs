//! Sun and geostationary-satellite look angles on a spherical Earth.

use chrono::{DateTime, Datelike, Timelike, Utc};

pub const EARTH_RADIUS_KM: f64 = 6378.137;
/// Geostationary orbit radius: 35,786 km above the equator.
pub const GEO_RADIUS_KM: f64 = EARTH_RADIUS_KM + 35_786.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolarAngles {
    /// Degrees from the local vertical, [0, 180].
    pub zenith: f64,
    /// Degrees clockwise from north, [0, 360).
    pub azimuth: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SatelliteView {
    pub zenith: f64,
    pub azimuth: f64,
    /// False when the point lies outside the satellite's visible disk.
    pub visible: bool,
}

fn wrap_longitude(lon: f64) -> f64 {
    let l = lon.rem_euclid(360.0);
    if l >= 180.0 {
        l - 360.0
    } else {
        l
    }
}

/// Low-precision solar position (fractional-year Fourier series for the
/// declination and the equation of time), good to a few tenths of a degree.
pub fn solar_position(t: DateTime<Utc>, lat: f64, lon: f64) -> SolarAngles {
    let lon = wrap_longitude(lon);
    let days_in_year = if t.date_naive().leap_year() { 366.0 } else { 365.0 };
    let hour = t.hour() as f64 + t.minute() as f64 / 60.0 + t.second() as f64 / 3600.0;
    let g = 2.0 * std::f64::consts::PI / days_in_year * (t.ordinal0() as f64 + (hour - 12.0) / 24.0);

    let eqtime = 229.18
        * (0.000075 + 0.001868 * g.cos()
            - 0.032077 * g.sin()
            - 0.014615 * (2.0 * g).cos()
            - 0.040849 * (2.0 * g).sin());
    let decl = 0.006918 - 0.399912 * g.cos() + 0.070257 * g.sin() - 0.006758 * (2.0 * g).cos()
        + 0.000907 * (2.0 * g).sin()
        - 0.002697 * (3.0 * g).cos()
        + 0.00148 * (3.0 * g).sin();

    let true_solar_minutes = hour * 60.0 + eqtime + 4.0 * lon;
    let h = (true_solar_minutes / 4.0 - 180.0).to_radians();
    let phi = lat.to_radians();

    let cos_zen = (phi.sin() * decl.sin() + phi.cos() * decl.cos() * h.cos()).clamp(-1.0, 1.0);
    let east = -decl.cos() * h.sin();
    let north = decl.sin() * phi.cos() - decl.cos() * phi.sin() * h.cos();
    SolarAngles {
        zenith: cos_zen.acos().to_degrees(),
        azimuth: azimuth_deg(east, north),
    }
}

fn azimuth_deg(east: f64, north: f64) -> f64 {
    if east == 0.0 && north == 0.0 {
        return 0.0;
    }
    let a = east.atan2(north).to_degrees().rem_euclid(360.0);
    if a >= 360.0 {
        0.0
    } else {
        a
    }
}

/// Look angles from a ground point to a geostationary satellite above
/// `sub_lon` on the equator.
pub fn satellite_view(sub_lon: f64, lat: f64, lon: f64) -> SatelliteView {
    let phi = lat.to_radians();
    let dlon = wrap_longitude(sub_lon - lon).to_radians();
    let cos_central = (phi.cos() * dlon.cos()).clamp(-1.0, 1.0);
    let central = cos_central.acos();
    let zenith = (GEO_RADIUS_KM * central.sin())
        .atan2(GEO_RADIUS_KM * cos_central - EARTH_RADIUS_KM)
        .to_degrees();
    let horizon = (EARTH_RADIUS_KM / GEO_RADIUS_KM).acos();
    SatelliteView {
        zenith,
        azimuth: azimuth_deg(dlon.sin(), -phi.sin() * dlon.cos()),
        visible: central <= horizon,
    }
}
