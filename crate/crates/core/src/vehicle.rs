use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VehicleKind {
    Car,
    Truck,
}

impl VehicleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VehicleKind::Car => "car",
            VehicleKind::Truck => "truck",
        }
    }
}

/// State of one vehicle at one instant.
///
/// `x` is the longitudinal position of the front bumper, `y` the lateral
/// position of the vehicle centerline. Lanes are numbered from 1 with `y`
/// increasing towards higher lane indices (to the left).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub id: u32,
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub a: f64,
    pub heading: f64,
    pub lane: i32,
    pub length: f64,
    pub width: f64,
    pub kind: VehicleKind,
}

impl VehicleState {
    pub fn car(id: u32, x: f64, y: f64, v: f64, lane: i32) -> Self {
        Self {
            id,
            x,
            y,
            v,
            a: 0.0,
            heading: 0.0,
            lane,
            length: 5.0,
            width: 1.8,
            kind: VehicleKind::Car,
        }
    }

    pub fn truck(id: u32, x: f64, y: f64, v: f64, lane: i32) -> Self {
        Self {
            length: 12.0,
            width: 2.5,
            kind: VehicleKind::Truck,
            ..Self::car(id, x, y, v, lane)
        }
    }

    pub fn rear(&self) -> f64 {
        self.x - self.length
    }

    pub fn is_finite(&self) -> bool {
        [
            self.x,
            self.y,
            self.v,
            self.a,
            self.heading,
            self.length,
            self.width,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Straight multi-lane road; lane `k` (1-based) is centered at `(k - 1) * lane_width`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneGeometry {
    pub lanes: i32,
    pub lane_width: f64,
}

impl Default for LaneGeometry {
    fn default() -> Self {
        Self {
            lanes: 3,
            lane_width: 3.5,
        }
    }
}

impl LaneGeometry {
    pub fn center(&self, lane: i32) -> f64 {
        (lane - 1) as f64 * self.lane_width
    }

    /// Nearest lane center, clamped to the road.
    pub fn lane_of(&self, y: f64) -> i32 {
        let idx = (y / self.lane_width).round() as i32 + 1;
        idx.clamp(1, self.lanes.max(1))
    }

    pub fn offset_from_center(&self, y: f64) -> f64 {
        y - self.center(self.lane_of(y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lane_lookup() {
        let g = LaneGeometry::default();
        assert_eq!(g.lane_of(0.0), 1);
        assert_eq!(g.lane_of(3.4), 2);
        assert_eq!(g.lane_of(5.3), 3);
        assert_eq!(g.lane_of(50.0), 3);
        assert!((g.offset_from_center(3.9) - 0.4).abs() < 1e-12);
    }
}
