use serde::{Deserialize, Serialize};

use crate::error::{invalid, SimError};

/// Piecewise-linear curve through `(x, y)` points, clamped outside its ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<(f64, f64)>", into = "Vec<(f64, f64)>")]
pub struct PiecewiseLinear {
    points: Vec<(f64, f64)>,
}

impl PiecewiseLinear {
    /// Points must be non-empty with strictly increasing x.
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, SimError> {
        if points.is_empty() {
            return Err(invalid("table", "needs at least one point"));
        }
        if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(invalid("table", "non-finite point"));
        }
        if let Some(i) = points.windows(2).position(|w| w[1].0 <= w[0].0) {
            return Err(invalid(
                "table",
                format!("x must be strictly increasing (index {})", i + 1),
            ));
        }
        Ok(PiecewiseLinear { points })
    }

    pub fn constant(y: f64) -> Self {
        PiecewiseLinear { points: vec![(0.0, y)] }
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn eval(&self, x: f64) -> f64 {
        let pts = &self.points;
        let first = pts[0];
        let last = pts[pts.len() - 1];
        if x <= first.0 {
            return first.1;
        }
        if x >= last.0 {
            return last.1;
        }
        let i = pts.partition_point(|p| p.0 <= x);
        let (x0, y0) = pts[i - 1];
        let (x1, y1) = pts[i];
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }

    pub fn min_y(&self) -> f64 {
        self.points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min)
    }

    pub fn max_y(&self) -> f64 {
        self.points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_non_decreasing(&self) -> bool {
        self.points.windows(2).all(|w| w[1].1 >= w[0].1)
    }
}

impl TryFrom<Vec<(f64, f64)>> for PiecewiseLinear {
    type Error = SimError;
    fn try_from(v: Vec<(f64, f64)>) -> Result<Self, SimError> {
        PiecewiseLinear::new(v)
    }
}

impl From<PiecewiseLinear> for Vec<(f64, f64)> {
    fn from(t: PiecewiseLinear) -> Self {
        t.points
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_and_clamps() {
        let t = PiecewiseLinear::new(vec![(0.0, 21.5), (30e6, 23.5)]).unwrap();
        assert_eq!(t.eval(-5.0), 21.5);
        assert_eq!(t.eval(0.0), 21.5);
        assert_eq!(t.eval(15e6), 22.5);
        assert_eq!(t.eval(30e6), 23.5);
        assert_eq!(t.eval(1e9), 23.5);
    }

    #[test]
    fn rejects_bad_x() {
        assert!(PiecewiseLinear::new(vec![]).is_err());
        assert!(PiecewiseLinear::new(vec![(1.0, 0.0), (1.0, 2.0)]).is_err());
        assert!(PiecewiseLinear::new(vec![(2.0, 0.0), (1.0, 2.0)]).is_err());
    }

    #[test]
    fn serde_as_pairs() {
        let t = PiecewiseLinear::new(vec![(0.0, 1.0), (2.0, 3.0)]).unwrap();
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(s, "[[0.0,1.0],[2.0,3.0]]");
        let back: PiecewiseLinear = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
        assert!(serde_json::from_str::<PiecewiseLinear>("[[1.0,0.0],[0.0,1.0]]").is_err());
    }
}
