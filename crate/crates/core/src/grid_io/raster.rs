//! Raster files: one JSON header line followed by the raw planes.
//!
//! Scene planes are row-major, north to south, 32-bit IEEE-754 little
//! endian, one after another in band order. Label rasters carry a single
//! plane of unsigned bytes; "plane" rasters carry one `f32` plane
//! (static altitude/land-water grids, density maps, probabilities).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use super::{io_err, BandId, CloudLabelGrid, GridError, GridGeometry, Plane, SceneGrid, BAND_COUNT};

const MAGIC: &str = "kbdd-raster";
const VERSION: u32 = 1;
const MAX_HEADER: u64 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RasterKind {
    Scene,
    Labels,
    Plane,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterHeader {
    pub format: String,
    pub version: u32,
    pub kind: RasterKind,
    pub dtype: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    pub geometry: GridGeometry,
    pub bands: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub missing_value: Option<f32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub night: Option<bool>,
}

impl RasterHeader {
    fn new(kind: RasterKind, dtype: &str, geometry: GridGeometry, bands: Vec<String>) -> Self {
        Self {
            format: MAGIC.into(),
            version: VERSION,
            kind,
            dtype: dtype.into(),
            timestamp: None,
            geometry,
            bands,
            missing_value: None,
            night: None,
        }
    }

    fn expect(&self, kind: RasterKind, dtype: &str) -> Result<(), GridError> {
        if self.format != MAGIC || self.version != VERSION {
            return Err(GridError::MalformedHeader(format!(
                "unsupported format {:?} v{}",
                self.format, self.version
            )));
        }
        if self.kind != kind {
            return Err(GridError::MalformedHeader(format!(
                "expected a {kind:?} raster, found {:?}",
                self.kind
            )));
        }
        if self.dtype != dtype {
            return Err(GridError::MalformedHeader(format!(
                "expected dtype {dtype}, found {}",
                self.dtype
            )));
        }
        Ok(())
    }
}

fn read_raw(path: &Path) -> Result<(RasterHeader, Vec<u8>), GridError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = BufReader::new(file);
    let mut line = Vec::new();
    (&mut reader)
        .take(MAX_HEADER)
        .read_until(b'\n', &mut line)
        .map_err(io_err(path))?;
    if line.last() != Some(&b'\n') {
        return Err(GridError::MalformedHeader("header line not terminated".into()));
    }
    let header: RasterHeader = serde_json::from_slice(&line[..line.len() - 1])
        .map_err(|e| GridError::MalformedHeader(e.to_string()))?;
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload).map_err(io_err(path))?;
    Ok((header, payload))
}

fn write_raw(path: &Path, header: &RasterHeader, payload: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), GridError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let text = serde_json::to_string(header).map_err(|e| GridError::MalformedHeader(e.to_string()))?;
    w.write_all(text.as_bytes()).map_err(io_err(path))?;
    w.write_all(b"\n").map_err(io_err(path))?;
    payload(&mut w).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

fn f32_planes(
    payload: &[u8],
    geometry: &GridGeometry,
    bands: &[String],
) -> Result<Vec<Plane<f32>>, GridError> {
    let cells = geometry.len();
    let plane_bytes = cells * 4;
    let expected = plane_bytes * bands.len();
    if cells == 0 {
        return Err(GridError::MalformedHeader("empty grid".into()));
    }
    if payload.len() != expected {
        let full = payload.len() / plane_bytes;
        let (band, found) = if full < bands.len() {
            (bands[full].clone(), payload.len() - full * plane_bytes)
        } else {
            let last = bands.len() - 1;
            (bands[last].clone(), payload.len() - last * plane_bytes)
        };
        return Err(GridError::PlaneSize {
            band,
            expected: plane_bytes,
            found,
        });
    }
    Ok(payload
        .chunks_exact(plane_bytes)
        .take(bands.len())
        .map(|chunk| {
            let data = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            Plane::from_vec(geometry.rows, geometry.cols, data)
        })
        .collect())
}

fn write_f32(w: &mut dyn Write, data: &[f32]) -> std::io::Result<()> {
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn parse_timestamp(text: Option<&str>) -> Result<DateTime<Utc>, GridError> {
    let text = text.ok_or_else(|| GridError::MalformedHeader("scene has no timestamp".into()))?;
    DateTime::parse_from_rfc3339(text)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| GridError::MalformedHeader(format!("timestamp {text:?}: {e}")))
}

/// Reads and validates a sixteen-band scene.
pub fn load_scene(path: impl AsRef<Path>) -> Result<SceneGrid, GridError> {
    let (header, payload) = read_raw(path.as_ref())?;
    header.expect(RasterKind::Scene, "f32le")?;
    if header.bands.len() != BAND_COUNT {
        return Err(GridError::BandCount {
            found: header.bands.len(),
            expected: BAND_COUNT,
        });
    }
    for (i, name) in header.bands.iter().enumerate() {
        let id: BandId = name.parse()?;
        if id.index() != i {
            return Err(GridError::MalformedHeader(format!(
                "band {i} is {name}, expected {}",
                BandId::from_index(i)
            )));
        }
    }
    let planes = f32_planes(&payload, &header.geometry, &header.bands)?;
    let scene = SceneGrid {
        timestamp: parse_timestamp(header.timestamp.as_deref())?,
        geometry: header.geometry,
        planes,
        missing_value: header
            .missing_value
            .ok_or_else(|| GridError::MalformedHeader("scene has no missing_value".into()))?,
        night: header.night,
    };
    scene.validate()?;
    Ok(scene)
}

pub fn write_scene(path: impl AsRef<Path>, scene: &SceneGrid) -> Result<(), GridError> {
    scene.validate()?;
    let mut header = RasterHeader::new(
        RasterKind::Scene,
        "f32le",
        scene.geometry,
        BandId::all().map(|b| b.to_string()).collect(),
    );
    header.timestamp = Some(scene.timestamp.to_rfc3339_opts(SecondsFormat::AutoSi, true));
    header.missing_value = Some(scene.missing_value);
    header.night = scene.night;
    write_raw(path.as_ref(), &header, |w| {
        scene.planes.iter().try_for_each(|p| write_f32(w, &p.data))
    })
}

/// Reads a label raster and validates every code.
pub fn load_labels(path: impl AsRef<Path>) -> Result<CloudLabelGrid, GridError> {
    let (header, payload) = read_raw(path.as_ref())?;
    header.expect(RasterKind::Labels, "u8")?;
    if header.bands.len() != 1 {
        return Err(GridError::BandCount {
            found: header.bands.len(),
            expected: 1,
        });
    }
    if payload.len() != header.geometry.len() {
        return Err(GridError::PlaneSize {
            band: header.bands[0].clone(),
            expected: header.geometry.len(),
            found: payload.len(),
        });
    }
    CloudLabelGrid::new(header.geometry, payload)
}

pub fn write_labels(path: impl AsRef<Path>, grid: &CloudLabelGrid) -> Result<(), GridError> {
    grid.validate()?;
    let header = RasterHeader::new(RasterKind::Labels, "u8", grid.geometry, vec!["class".into()]);
    write_raw(path.as_ref(), &header, |w| w.write_all(&grid.labels.data))
}

/// Reads a single `f32` plane; returns the header for its name and sentinel.
pub fn load_plane(path: impl AsRef<Path>) -> Result<(RasterHeader, Plane<f32>), GridError> {
    let (header, payload) = read_raw(path.as_ref())?;
    header.expect(RasterKind::Plane, "f32le")?;
    if header.bands.len() != 1 {
        return Err(GridError::BandCount {
            found: header.bands.len(),
            expected: 1,
        });
    }
    let mut planes = f32_planes(&payload, &header.geometry, &header.bands)?;
    Ok((header, planes.remove(0)))
}

pub fn write_plane(
    path: impl AsRef<Path>,
    geometry: GridGeometry,
    name: &str,
    plane: &Plane<f32>,
    missing_value: Option<f32>,
) -> Result<(), GridError> {
    if plane.rows != geometry.rows || plane.cols != geometry.cols {
        return Err(GridError::GeometryMismatch(format!(
            "plane {}x{} vs geometry {}x{}",
            plane.rows, plane.cols, geometry.rows, geometry.cols
        )));
    }
    let mut header = RasterHeader::new(RasterKind::Plane, "f32le", geometry, vec![name.into()]);
    header.missing_value = missing_value;
    write_raw(path.as_ref(), &header, |w| write_f32(w, &plane.data))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_io::{synthetic_scene, SynthConfig, UNLABELED};
    use proptest::prelude::*;

    fn sample(rows: usize, cols: usize, seed: u64) -> SceneGrid {
        let cfg = SynthConfig {
            rows,
            cols,
            ..SynthConfig::default()
        };
        synthetic_scene(&cfg, seed, 0).scene
    }

    #[test]
    fn scene_header_geometry() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.raster");
        let s = sample(48, 40, 1);
        write_scene(&p, &s).unwrap();
        let back = load_scene(&p).unwrap();
        assert_eq!(back.geometry.rows, 48);
        assert_eq!(back.geometry.cols, 40);
        assert_eq!(back, s);
    }

    #[test]
    fn fifteen_planes_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.raster");
        let s = sample(32, 32, 2);
        let mut header = RasterHeader::new(
            RasterKind::Scene,
            "f32le",
            s.geometry,
            BandId::all().take(15).map(|b| b.to_string()).collect(),
        );
        header.timestamp = Some("2022-01-01T00:00:00Z".into());
        header.missing_value = Some(-999.0);
        write_raw(&p, &header, |w| {
            s.planes[..15].iter().try_for_each(|pl| write_f32(w, &pl.data))
        })
        .unwrap();
        let err = load_scene(&p).unwrap_err();
        assert_eq!(err.to_string(), "band count 15 \u{2260} 16");
    }

    #[test]
    fn truncated_payload_names_band() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.raster");
        write_scene(&p, &sample(32, 32, 3)).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() - 32 * 32 * 4 - 8]).unwrap();
        let err = load_scene(&p).unwrap_err();
        assert!(err.to_string().contains("B15"), "{err}");
    }

    #[test]
    fn non_finite_value_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.raster");
        write_scene(&p, &sample(32, 32, 4)).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::INFINITY.to_le_bytes());
        std::fs::write(&p, &bytes).unwrap();
        let err = load_scene(&p).unwrap_err();
        assert!(err.to_string().contains("B16"), "{err}");
    }

    #[test]
    fn label_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.raster");
        let g = GridGeometry::new(10.0, 120.0, 0.05, 3, 4);
        let all_unlabeled = CloudLabelGrid::filled(g, UNLABELED);
        write_labels(&p, &all_unlabeled).unwrap();
        assert_eq!(load_labels(&p).unwrap().labeled_count(), 0);

        let mut bytes = std::fs::read(&p).unwrap();
        let n = bytes.len();
        bytes[n - 5] = 17;
        std::fs::write(&p, &bytes).unwrap();
        let err = load_labels(&p).unwrap_err();
        assert!(matches!(err, GridError::InvalidLabel { index: 7, code: 17 }), "{err}");
    }

    #[test]
    fn plane_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("alt.raster");
        let g = GridGeometry::new(10.0, 120.0, 0.05, 2, 3);
        let plane = Plane::from_vec(2, 3, vec![0.0, 1.5, -2.0, 8848.0, 0.25, 3.0]);
        write_plane(&p, g, "altitude", &plane, None).unwrap();
        let (h, back) = load_plane(&p).unwrap();
        assert_eq!(h.bands, vec!["altitude".to_string()]);
        assert_eq!(back, plane);
        assert!(load_scene(&p).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn scene_round_trip_is_bit_exact(seed in any::<u64>(), bits in proptest::collection::vec(any::<u32>(), 16)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("s.raster");
            let mut s = sample(32, 32, seed);
            // arbitrary finite bit patterns, including subnormals and negative zero
            for (b, raw) in bits.iter().enumerate() {
                let v = f32::from_bits(*raw);
                if v.is_finite() {
                    s.planes[b].data[b] = v;
                }
            }
            write_scene(&p, &s).unwrap();
            let back = load_scene(&p).unwrap();
            for (a, b) in s.planes.iter().zip(&back.planes) {
                let x: Vec<u32> = a.data.iter().map(|v| v.to_bits()).collect();
                let y: Vec<u32> = b.data.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(x, y);
            }
            prop_assert_eq!(back.timestamp, s.timestamp);
            prop_assert_eq!(back.geometry, s.geometry);
        }

        #[test]
        fn label_round_trip(codes in proptest::collection::vec(prop_oneof![0u8..10, Just(UNLABELED)], 12)) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("l.raster");
            let g = GridGeometry::new(0.0, 140.0, 0.05, 3, 4);
            let grid = CloudLabelGrid::new(g, codes).unwrap();
            write_labels(&p, &grid).unwrap();
            prop_assert_eq!(load_labels(&p).unwrap(), grid);
        }
    }
}
