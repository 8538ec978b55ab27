//! Detection-matrix files, truncation and dataset export.
//!
//! Files hold one row per call and one column per sensor under a header of
//! sensor labels. Bearings are degrees in files and radians in memory;
//! missing values are empty fields.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{wrap_angle, Point, SensorArray};
use crate::likelihood::Dataset;

/// Call-by-sensor matrices as read from disk, before truncation.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDetections {
    pub sensors: Vec<String>,
    pub detections: Vec<Vec<bool>>,
    /// Degrees in `[0, 360)`.
    pub bearings: Vec<Vec<Option<f64>>>,
    /// dB.
    pub received: Vec<Vec<Option<f64>>>,
}

/// Locations of the three matrix files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionFiles {
    pub detections: PathBuf,
    pub bearings: PathBuf,
    pub received: PathBuf,
}

impl DetectionFiles {
    /// `detections.csv`, `bearings.csv` and `received.csv` inside `dir`.
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            detections: dir.join("detections.csv"),
            bearings: dir.join("bearings.csv"),
            received: dir.join("received.csv"),
        }
    }
}

struct Matrix {
    header: Vec<String>,
    rows: Vec<Vec<Option<f64>>>,
}

fn load_error(path: &Path, message: String) -> Error {
    Error::Load { path: path.display().to_string(), message }
}

fn read_optional_matrix(path: &Path) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| load_error(path, e.to_string()))?;
    let header: Vec<String> = reader.headers().map_err(|e| load_error(path, e.to_string()))?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| load_error(path, e.to_string()))?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, v)| {
                if v.is_empty() {
                    Ok(None)
                } else {
                    v.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .map(Some)
                        .ok_or_else(|| load_error(path, format!("row {}, column {}: not a number: {v:?}", i + 1, j + 1)))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(Matrix { header, rows })
}

impl RawDetections {
    pub fn read(files: &DetectionFiles) -> Result<Self> {
        let det = read_optional_matrix(&files.detections)?;
        let bear = read_optional_matrix(&files.bearings)?;
        let recv = read_optional_matrix(&files.received)?;
        let k = det.header.len();
        for (path, m) in [(&files.bearings, &bear), (&files.received, &recv)] {
            if m.header.len() != k {
                return Err(load_error(path, format!("{} sensor columns, detections have {k}", m.header.len())));
            }
            if m.rows.len() != det.rows.len() {
                return Err(load_error(path, format!("{} rows, detections have {}", m.rows.len(), det.rows.len())));
            }
        }
        let mut detections = Vec::with_capacity(det.rows.len());
        for (i, row) in det.rows.iter().enumerate() {
            let flags = row
                .iter()
                .enumerate()
                .map(|(j, v)| match v {
                    Some(x) if *x == 0.0 => Ok(false),
                    Some(x) if *x == 1.0 => Ok(true),
                    _ => Err(load_error(&files.detections, format!("row {}, column {}: expected 0 or 1", i + 1, j + 1))),
                })
                .collect::<Result<Vec<bool>>>()?;
            detections.push(flags);
        }
        let raw = Self { sensors: det.header, detections, bearings: bear.rows, received: recv.rows };
        raw.validate().map_err(|(which, msg)| {
            let path = if which == 0 { &files.bearings } else { &files.received };
            load_error(path, msg)
        })?;
        Ok(raw)
    }

    /// Checks shapes, presence pattern and bearing range. The error names
    /// the offending matrix (0 bearings, 1 levels) and cell.
    fn validate(&self) -> std::result::Result<(), (usize, String)> {
        let k = self.sensors.len();
        for (i, w) in self.detections.iter().enumerate() {
            for (which, m) in [(0, &self.bearings), (1, &self.received)] {
                if w.len() != k || m[i].len() != k {
                    return Err((which, format!("row {} does not have {k} columns", i + 1)));
                }
                for j in 0..k {
                    if w[j] != m[i][j].is_some() {
                        let what = if w[j] { "missing where detected" } else { "present where not detected" };
                        return Err((which, format!("row {}, column {}: value {what}", i + 1, j + 1)));
                    }
                }
            }
            for j in 0..k {
                if let Some(b) = self.bearings[i][j] {
                    if !(0.0..360.0).contains(&b) {
                        return Err((0, format!("row {}, column {}: bearing {b} outside [0, 360)", i + 1, j + 1)));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n_calls(&self) -> usize {
        self.detections.len()
    }

    pub fn write(&self, files: &DetectionFiles) -> Result<()> {
        let det: Vec<Vec<Option<f64>>> =
            self.detections.iter().map(|r| r.iter().map(|&w| Some(if w { 1.0 } else { 0.0 })).collect()).collect();
        write_optional_matrix(&files.detections, &self.sensors, &det)?;
        write_optional_matrix(&files.bearings, &self.sensors, &self.bearings)?;
        write_optional_matrix(&files.received, &self.sensors, &self.received)
    }

    /// Raw matrices equivalent to a dataset, with bearings in degrees chosen
    /// so that reading them back reproduces the radians exactly.
    pub fn from_dataset(data: &Dataset, sensors: Vec<String>) -> Result<Self> {
        if sensors.len() != data.n_sensors() {
            return Err(Error::Dimension { expected: data.n_sensors(), got: sensors.len() });
        }
        let n = data.n_calls();
        Ok(Self {
            sensors,
            detections: (0..n).map(|i| data.omega(i).to_vec()).collect(),
            bearings: (0..n).map(|i| data.bearings(i).iter().map(|b| b.map(exact_degrees)).collect()).collect(),
            received: (0..n).map(|i| data.received(i).to_vec()).collect(),
        })
    }
}

fn write_optional_matrix(path: &Path, header: &[String], rows: &[Vec<Option<f64>>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()))?;
    }
    w.flush()?;
    Ok(())
}

/// Radians from file degrees, wrapped into `[0, 2π)`.
pub fn file_radians(degrees: f64) -> f64 {
    wrap_angle(degrees.to_radians())
}

/// A degree value whose conversion back to radians is exactly `radians`,
/// found among the floats nearest the naive conversion. Any angle read
/// from a file has one.
pub fn exact_degrees(radians: f64) -> f64 {
    let guess = radians.to_degrees();
    let mut candidates = vec![guess];
    let (mut up, mut down) = (guess, guess);
    for _ in 0..8 {
        up = next_up(up);
        down = next_down(down);
        candidates.push(up);
        candidates.push(down);
    }
    candidates
        .into_iter()
        .find(|d| (0.0..360.0).contains(d) && file_radians(*d) == radians)
        .unwrap_or(guess)
}

fn next_up(x: f64) -> f64 {
    if x == 0.0 {
        return f64::from_bits(1);
    }
    if x > 0.0 {
        f64::from_bits(x.to_bits() + 1)
    } else {
        f64::from_bits(x.to_bits() - 1)
    }
}

fn next_down(x: f64) -> f64 {
    -next_up(-x)
}

/// Call counts at each truncation stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub raw_calls: usize,
    /// Detections whose received level fell below the threshold.
    pub detections_removed: usize,
    /// Calls after the level threshold, equal to `raw_calls`.
    pub post_threshold_calls: usize,
    /// Calls left with no detections.
    pub dropped_empty: usize,
    /// Calls left with at least one but fewer than `m_min` detections.
    pub dropped_singletons: usize,
    pub retained: usize,
    /// Raw row index of every retained call.
    pub retained_rows: Vec<usize>,
}

/// Drops detections below `t_r`, then calls with fewer than `m_min` detections.
pub fn load_and_truncate(raw: &RawDetections, t_r: f64, m_min: usize, period: f64) -> Result<(Dataset, TruncationReport)> {
    raw.validate().map_err(|(_, msg)| Error::Data(msg))?;
    if t_r.is_nan() {
        return Err(Error::Config("threshold is NaN".into()));
    }
    let k = raw.sensors.len();
    let mut report = TruncationReport {
        raw_calls: raw.n_calls(),
        detections_removed: 0,
        post_threshold_calls: raw.n_calls(),
        dropped_empty: 0,
        dropped_singletons: 0,
        retained: 0,
        retained_rows: Vec::new(),
    };
    let (mut omega, mut bearings, mut received) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..raw.n_calls() {
        let mut w = vec![false; k];
        let mut b = vec![None; k];
        let mut r = vec![None; k];
        for j in 0..k {
            if !raw.detections[i][j] {
                continue;
            }
            let level = raw.received[i][j].expect("validated");
            if level < t_r {
                report.detections_removed += 1;
                continue;
            }
            w[j] = true;
            b[j] = raw.bearings[i][j].map(file_radians);
            r[j] = Some(level);
        }
        let hits = w.iter().filter(|&&x| x).count();
        if hits == 0 {
            report.dropped_empty += 1;
        } else if hits < m_min {
            report.dropped_singletons += 1;
        } else {
            report.retained_rows.push(i);
            omega.push(w);
            bearings.push(b);
            received.push(r);
        }
    }
    report.retained = omega.len();
    let data = Dataset::new(omega, bearings, received, k, t_r, m_min, period)?;
    Ok((data, report))
}

/// Writes a dataset as the three matrix files.
pub fn write_dataset(files: &DetectionFiles, data: &Dataset, sensors: &[String]) -> Result<()> {
    RawDetections::from_dataset(data, sensors.to_vec())?.write(files)
}

/// Default sensor labels `s1..sK`.
pub fn sensor_labels(k: usize) -> Vec<String> {
    (1..=k).map(|j| format!("s{j}")).collect()
}

/// Reads `sensor,easting,northing` rows.
pub fn read_sensors(path: &Path) -> Result<(Vec<String>, SensorArray)> {
    #[derive(Deserialize)]
    struct Row {
        sensor: String,
        easting: f64,
        northing: f64,
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| load_error(path, e.to_string()))?;
    let mut labels = Vec::new();
    let mut positions = Vec::new();
    for (i, row) in reader.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| load_error(path, format!("row {}: {e}", i + 1)))?;
        labels.push(row.sensor);
        positions.push(Point::new(row.easting, row.northing));
    }
    let array = SensorArray::new(positions).map_err(|e| load_error(path, e.to_string()))?;
    Ok((labels, array))
}

pub fn write_sensors(path: &Path, labels: &[String], array: &SensorArray) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sensor", "easting", "northing"])?;
    for (label, p) in labels.iter().zip(array.positions()) {
        w.write_record([label.clone(), p.easting.to_string(), p.northing.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes any serializable value as pretty JSON.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw() -> RawDetections {
        RawDetections {
            sensors: sensor_labels(3),
            detections: vec![vec![true, true, true], vec![true, false, false], vec![false, true, true], vec![true, false, true]],
            bearings: vec![
                vec![Some(10.0), Some(200.0), Some(359.5)],
                vec![Some(5.0), None, None],
                vec![None, Some(90.0), Some(91.0)],
                vec![Some(0.0), None, Some(45.0)],
            ],
            received: vec![
                vec![Some(100.0), Some(95.0), Some(110.0)],
                vec![Some(120.0), None, None],
                vec![None, Some(97.0), Some(96.0)],
                vec![Some(90.0), None, Some(91.0)],
            ],
        }
    }

    #[test]
    fn sub_threshold_detection_becomes_non_detection() {
        let (data, report) = load_and_truncate(&raw(), 96.0, 2, 1.0).unwrap();
        assert_eq!(data.n_calls(), 2);
        assert_eq!(data.omega(0), &[true, false, true]);
        assert_eq!(data.bearings(0)[1], None);
        assert_eq!(report.detections_removed, 3);
        assert_eq!(report.dropped_singletons, 1);
        assert_eq!(report.dropped_empty, 1);
        assert_eq!(report.retained_rows, vec![0, 2]);
        assert_eq!(report.retained + report.dropped_singletons + report.dropped_empty, report.post_threshold_calls);
    }

    #[test]
    fn no_op_filter_keeps_everything() {
        let (data, report) = load_and_truncate(&raw(), f64::NEG_INFINITY, 1, 1.0).unwrap();
        assert_eq!(data.n_calls(), 4);
        assert_eq!(report.detections_removed, 0);
        assert_eq!(data.received(3)[0], Some(90.0));
        assert_eq!(data.bearings(0)[2], Some(359.5f64.to_radians()));
    }

    #[test]
    fn presence_mismatch_is_rejected() {
        let mut r = raw();
        r.bearings[1][1] = Some(3.0);
        assert!(load_and_truncate(&r, 96.0, 2, 1.0).is_err());
        let mut r = raw();
        r.bearings[0][0] = Some(360.0);
        assert!(load_and_truncate(&r, 96.0, 2, 1.0).is_err());
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let files = DetectionFiles::in_dir(dir.path());
        raw().write(&files).unwrap();
        assert_eq!(RawDetections::read(&files).unwrap(), raw());
    }

    #[test]
    fn bad_cells_name_row_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let files = DetectionFiles::in_dir(dir.path());
        raw().write(&files).unwrap();
        std::fs::write(&files.received, "s1,s2,s3\n100,95,110\n120,,\n,97,x\n90,,91\n").unwrap();
        let err = RawDetections::read(&files).unwrap_err().to_string();
        assert!(err.contains("row 3, column 3"), "{err}");
        raw().write(&files).unwrap();
        std::fs::write(&files.detections, "s1,s2,s3\n1,1,1\n1,0,0\n0,1,2\n1,0,1\n").unwrap();
        let err = RawDetections::read(&files).unwrap_err().to_string();
        assert!(err.contains("expected 0 or 1"), "{err}");
    }

    #[test]
    fn sensors_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sensors.csv");
        let array = SensorArray::new(vec![Point::new(0.0, 0.0), Point::new(1500.5, -20.25)]).unwrap();
        write_sensors(&path, &sensor_labels(2), &array).unwrap();
        let (labels, back) = read_sensors(&path).unwrap();
        assert_eq!(labels, sensor_labels(2));
        assert_eq!(back.positions(), array.positions());
    }

    proptest! {
        #[test]
        fn exact_degrees_inverts(d in 0.0f64..360.0) {
            let r = file_radians(d);
            prop_assert_eq!(file_radians(exact_degrees(r)), r);
        }

        #[test]
        fn dataset_round_trips_bit_exactly(seed in 0u64..200) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let k = rng.gen_range(2..6);
            let mut rows = (Vec::new(), Vec::new(), Vec::new());
            for _ in 0..rng.gen_range(0..12) {
                let w: Vec<bool> = loop {
                    let w: Vec<bool> = (0..k).map(|_| rng.gen_bool(0.6)).collect();
                    if w.iter().filter(|x| **x).count() >= 2 { break w; }
                };
                rows.1.push(w.iter().map(|&d| d.then(|| file_radians(rng.gen_range(0.0..360.0)))).collect());
                rows.2.push(w.iter().map(|&d| d.then(|| rng.gen_range(96.0..140.0))).collect());
                rows.0.push(w);
            }
            let data = Dataset::new(rows.0, rows.1, rows.2, k, 96.0, 2, 1.0).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let files = DetectionFiles::in_dir(dir.path());
            write_dataset(&files, &data, &sensor_labels(k)).unwrap();
            let (back, _) = load_and_truncate(&RawDetections::read(&files).unwrap(), 96.0, 2, 1.0).unwrap();
            prop_assert_eq!(back, data);
        }
    }
}
