use crate::error::{Error, Result};

/// Colored point cloud: positions in meters, colors in `[0, 1]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<[f64; 3]>,
    colors: Vec<[f32; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>, colors: Vec<[f32; 3]>) -> Result<Self> {
        let cloud = PointCloud { points, colors };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn empty() -> Self {
        PointCloud::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        PointCloud {
            points: Vec::with_capacity(n),
            colors: Vec::with_capacity(n),
        }
    }

    /// Append a point. Colors are clamped into `[0, 1]`.
    pub fn push(&mut self, point: [f64; 3], color: [f32; 3]) {
        debug_assert!(point.iter().all(|c| c.is_finite()));
        self.points.push(point);
        self.colors.push(color.map(|c| c.clamp(0.0, 1.0)));
    }

    pub fn extend(&mut self, other: &PointCloud) {
        self.points.extend_from_slice(&other.points);
        self.colors.extend_from_slice(&other.colors);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn colors(&self) -> &[[f32; 3]] {
        &self.colors
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.len() != self.colors.len() {
            return Err(Error::Invariant(format!(
                "{} points but {} colors",
                self.points.len(),
                self.colors.len()
            )));
        }
        for (i, p) in self.points.iter().enumerate() {
            if p.iter().any(|c| !c.is_finite()) {
                return Err(Error::Invariant(format!("point {i} is not finite")));
            }
        }
        for (i, c) in self.colors.iter().enumerate() {
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Invariant(format!("color {i} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Axis-aligned bounds, `None` for an empty cloud.
    pub fn bounds(&self) -> Option<([f64; 3], [f64; 3])> {
        let first = *self.points.first()?;
        Some(self.points.iter().fold((first, first), |(mut lo, mut hi), p| {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
            (lo, hi)
        }))
    }
}
