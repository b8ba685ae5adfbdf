/// One exact constant-acceleration step with a standstill floor.
///
/// Returns `(x, v, applied_accel)`; when the vehicle would reverse it stops
/// within the step and the applied acceleration is zero afterwards.
pub fn integrate_longitudinal(x: f64, v: f64, accel: f64, dt: f64) -> (f64, f64, f64) {
    let v_next = v + accel * dt;
    if v_next >= 0.0 {
        (x + v * dt + 0.5 * accel * dt * dt, v_next, accel)
    } else if v > 0.0 {
        // stops inside the step
        (x + v * v / (2.0 * -accel), 0.0, accel)
    } else {
        (x, 0.0, 0.0)
    }
}

/// Piecewise-constant acceleration schedule: `(start_time, accel)` pairs,
/// sorted by start time. Before the first breakpoint the acceleration is 0.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct AccelSchedule {
    pub segments: Vec<(f64, f64)>,
}

impl AccelSchedule {
    pub fn constant(accel: f64) -> Self {
        Self {
            segments: vec![(0.0, accel)],
        }
    }

    pub fn new(mut segments: Vec<(f64, f64)>) -> Self {
        segments.sort_by(|a, b| a.0.total_cmp(&b.0));
        Self { segments }
    }

    pub fn at(&self, t: f64) -> f64 {
        // small tolerance so a breakpoint at k·dt is picked up at tick k
        let idx = self.segments.partition_point(|(start, _)| *start <= t + 1e-9);
        if idx == 0 {
            0.0
        } else {
            self.segments[idx - 1].1
        }
    }
}
