//! Planar survey geometry: sensor positions, distances and bearings.
//!
//! Coordinates are easting/northing in metres on a projected plane. Bearings
//! are radians clockwise from north (+northing) in `[0, 2π)`.

use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::error::{Error, Result};

/// Lower clamp on sensor distances, in metres. Keeps `log10(d)` finite.
pub const MIN_DISTANCE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub easting: f64,
    pub northing: f64,
}

impl Point {
    pub const fn new(easting: f64, northing: f64) -> Self {
        Self { easting, northing }
    }

    pub fn is_finite(&self) -> bool {
        self.easting.is_finite() && self.northing.is_finite()
    }

    pub fn euclid(&self, other: &Point) -> f64 {
        (self.easting - other.easting).hypot(self.northing - other.northing)
    }

    /// Point reached from `self` travelling `distance` along `bearing`.
    pub fn offset(&self, bearing: f64, distance: f64) -> Point {
        Point::new(
            self.easting + distance * bearing.sin(),
            self.northing + distance * bearing.cos(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorArray {
    positions: Vec<Point>,
}

impl SensorArray {
    pub fn new(positions: Vec<Point>) -> Result<Self> {
        if positions.len() < 2 {
            return Err(Error::Geometry(format!(
                "need at least two sensors, got {}",
                positions.len()
            )));
        }
        Self::with_positions(positions)
    }

    /// Like [`SensorArray::new`] but accepts a single sensor, for diagnostics
    /// such as singleton rates.
    pub fn with_positions(positions: Vec<Point>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Geometry("empty sensor array".into()));
        }
        for (i, p) in positions.iter().enumerate() {
            if !p.is_finite() {
                return Err(Error::Geometry(format!("sensor {i} has non-finite coordinates")));
            }
            if positions[..i].contains(p) {
                return Err(Error::Geometry(format!("sensor {i} duplicates an earlier position")));
            }
        }
        Ok(Self { positions })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Point] {
        &self.positions
    }

    pub fn sensor(&self, j: usize) -> Result<Point> {
        self.positions.get(j).copied().ok_or(Error::SensorIndex {
            index: j,
            count: self.positions.len(),
        })
    }

    /// Distance from sensor `j` to `x`, clamped below at [`MIN_DISTANCE`].
    pub fn distance(&self, j: usize, x: Point) -> Result<f64> {
        Ok(self.sensor(j)?.euclid(&x).max(MIN_DISTANCE))
    }

    /// Bearing from sensor `j` towards `x`.
    pub fn true_bearing(&self, j: usize, x: Point) -> Result<f64> {
        let s = self.sensor(j)?;
        let de = x.easting - s.easting;
        let dn = x.northing - s.northing;
        if de == 0.0 && dn == 0.0 {
            return Err(Error::CoincidentPoint(j));
        }
        Ok(wrap_angle(de.atan2(dn)))
    }

    /// Distance from `x` to the closest sensor (unclamped).
    pub fn nearest_distance(&self, x: Point) -> f64 {
        self.positions
            .iter()
            .map(|p| p.euclid(&x))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn centroid(&self) -> Point {
        let n = self.positions.len() as f64;
        let (e, no) = self
            .positions
            .iter()
            .fold((0.0, 0.0), |(e, n), p| (e + p.easting, n + p.northing));
        Point::new(e / n, no / n)
    }

    /// Median pairwise sensor distance.
    pub fn median_spacing(&self) -> f64 {
        let mut d = Vec::new();
        for i in 0..self.positions.len() {
            for j in (i + 1)..self.positions.len() {
                d.push(self.positions[i].euclid(&self.positions[j]));
            }
        }
        if d.is_empty() {
            return MIN_DISTANCE;
        }
        d.sort_by(f64::total_cmp);
        let mid = d.len() / 2;
        if d.len() % 2 == 0 {
            0.5 * (d[mid - 1] + d[mid])
        } else {
            d[mid]
        }
    }

    pub fn translated(&self, de: f64, dn: f64) -> Self {
        Self {
            positions: self
                .positions
                .iter()
                .map(|p| Point::new(p.easting + de, p.northing + dn))
                .collect(),
        }
    }
}

/// Maps an angle into `[0, 2π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

pub fn degrees_to_radians(deg: f64) -> f64 {
    wrap_angle(deg.to_radians())
}

pub fn radians_to_degrees(rad: f64) -> f64 {
    let d = rad.to_degrees().rem_euclid(360.0);
    if d >= 360.0 {
        0.0
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn array() -> SensorArray {
        SensorArray::new(vec![Point::new(0.0, 0.0), Point::new(5000.0, 0.0)]).unwrap()
    }

    #[test]
    fn distance_examples() {
        let a = array();
        assert_eq!(a.distance(0, Point::new(3000.0, 4000.0)).unwrap(), 5000.0);
        assert_eq!(a.distance(0, Point::new(0.0, 0.0)).unwrap(), 1.0);
        assert_eq!(a.distance(0, Point::new(1.0, 0.0)).unwrap(), 1.0);
        assert!(matches!(a.distance(2, Point::new(1.0, 0.0)), Err(Error::SensorIndex { .. })));
    }

    #[test]
    fn bearing_examples() {
        let a = array();
        assert_eq!(a.true_bearing(0, Point::new(0.0, 1000.0)).unwrap(), 0.0);
        assert_relative_eq!(a.true_bearing(0, Point::new(1000.0, 0.0)).unwrap(), FRAC_PI_2);
        assert_relative_eq!(a.true_bearing(0, Point::new(0.0, -1000.0)).unwrap(), PI);
        assert_relative_eq!(a.true_bearing(0, Point::new(-1000.0, 0.0)).unwrap(), 1.5 * PI);
        assert!(matches!(a.true_bearing(0, Point::new(0.0, 0.0)), Err(Error::CoincidentPoint(0))));
    }

    #[test]
    fn array_validation() {
        assert!(SensorArray::new(vec![Point::new(0.0, 0.0)]).is_err());
        assert!(SensorArray::new(vec![Point::new(0.0, 0.0), Point::new(0.0, 0.0)]).is_err());
        assert!(SensorArray::new(vec![Point::new(0.0, 0.0), Point::new(f64::NAN, 0.0)]).is_err());
    }

    proptest! {
        #[test]
        fn bearing_and_distance_invert(e in -5e4f64..5e4, n in -5e4f64..5e4) {
            prop_assume!(e.hypot(n) > 10.0);
            let a = array();
            let x = Point::new(e, n);
            let b = a.true_bearing(0, x).unwrap();
            let d = a.distance(0, x).unwrap();
            prop_assert!((0.0..TAU).contains(&b));
            let back = Point::new(0.0, 0.0).offset(b, d);
            let scale = d.max(1.0);
            prop_assert!((back.easting - e).abs() <= 1e-9 * scale);
            prop_assert!((back.northing - n).abs() <= 1e-9 * scale);
        }

        #[test]
        fn distance_is_a_metric(
            ax in -1e4f64..1e4, ay in -1e4f64..1e4,
            bx in -1e4f64..1e4, by in -1e4f64..1e4,
            cx in -1e4f64..1e4, cy in -1e4f64..1e4,
        ) {
            let (a, b, c) = (Point::new(ax, ay), Point::new(bx, by), Point::new(cx, cy));
            prop_assert!(a.euclid(&b) >= 0.0);
            prop_assert_eq!(a.euclid(&b), b.euclid(&a));
            prop_assert!(a.euclid(&c) <= a.euclid(&b) + b.euclid(&c) + 1e-9);
        }
    }
}
