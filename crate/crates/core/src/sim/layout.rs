//! Tray geometry: bounds, interior walls, start and goal regions.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{SimError, Vec2};

/// Axis-aligned rectangular wall, corners in meters (tray frame).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Wall {
    pub min: Vec2,
    pub max: Vec2,
}

impl Wall {
    pub fn new(min: Vec2, max: Vec2) -> Self {
        Self { min, max }
    }

    /// The wall grown by `r` on every side: the set of ball centers that
    /// would overlap the wall's bounding square.
    pub fn inflated(&self, r: f64) -> Wall {
        Wall {
            min: [self.min[0] - r, self.min[1] - r],
            max: [self.max[0] + r, self.max[1] + r],
        }
    }

    pub fn contains_strict(&self, p: Vec2) -> bool {
        p[0] > self.min[0] && p[0] < self.max[0] && p[1] > self.min[1] && p[1] < self.max[1]
    }

    /// Euclidean distance from `p` to the rectangle (0 inside).
    pub fn distance(&self, p: Vec2) -> f64 {
        let dx = (self.min[0] - p[0]).max(0.0).max(p[0] - self.max[0]);
        let dy = (self.min[1] - p[1]).max(0.0).max(p[1] - self.max[1]);
        dx.hypot(dy)
    }

    /// Slab test of the segment `a -> b` against the open rectangle.
    /// Returns the entry parameter in `[0, 1]` and the axis of the entered face
    /// (ties go to x). `None` if the segment never enters the interior.
    pub fn segment_entry(&self, a: Vec2, b: Vec2) -> Option<(f64, usize)> {
        let mut t_near = [f64::NEG_INFINITY; 2];
        let mut t_far = [f64::INFINITY; 2];
        for i in 0..2 {
            let d = b[i] - a[i];
            if d == 0.0 {
                if a[i] <= self.min[i] || a[i] >= self.max[i] {
                    return None;
                }
            } else {
                let t1 = (self.min[i] - a[i]) / d;
                let t2 = (self.max[i] - a[i]) / d;
                t_near[i] = t1.min(t2);
                t_far[i] = t1.max(t2);
            }
        }
        let enter = t_near[0].max(t_near[1]);
        let exit = t_far[0].min(t_far[1]);
        if enter >= exit || exit <= 0.0 || enter > 1.0 {
            return None;
        }
        let axis = if t_near[0] >= t_near[1] { 0 } else { 1 };
        Some((enter, axis))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartRegion {
    pub center: Vec2,
    pub radius: f64,
}

/// Tray geometry in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrayLayout {
    pub width: f64,
    pub height: f64,
    pub ball_radius: f64,
    pub walls: Vec<Wall>,
    pub goal_center: Vec2,
    pub goal_radius: f64,
    pub start_region: StartRegion,
    /// Route through the channel from start to goal used by scripted
    /// partners. Computed from the geometry when left empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub waypoints: Vec<Vec2>,
}

/// Built-in Z-channel layout.
///
/// Two horizontal walls split the tray into three corridors. The lower wall
/// leaves a gap at the east edge, the upper wall a gap at the west edge, so
/// the ball has to travel east, rise, travel west, rise, then travel east to
/// the goal in the north-east corner.
pub fn default_layout() -> TrayLayout {
    TrayLayout {
        width: 0.5,
        height: 0.5,
        ball_radius: 0.02,
        walls: vec![
            Wall::new([0.0, 0.155], [0.34, 0.175]),
            Wall::new([0.16, 0.325], [0.5, 0.345]),
        ],
        goal_center: [0.45, 0.45],
        goal_radius: 0.04,
        start_region: StartRegion {
            center: [0.06, 0.06],
            radius: 0.03,
        },
        waypoints: vec![
            [0.06, 0.07],
            [0.42, 0.07],
            [0.42, 0.25],
            [0.08, 0.25],
            [0.08, 0.43],
            [0.45, 0.45],
        ],
    }
}

impl TrayLayout {
    pub fn from_toml_str(text: &str) -> Result<Self, SimError> {
        let mut layout: TrayLayout =
            toml::from_str(text).map_err(|e| SimError::LayoutParse(e.to_string()))?;
        layout.validate()?;
        if layout.waypoints.is_empty() {
            layout.waypoints = plan_waypoints(&layout)?;
        }
        Ok(layout)
    }

    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::LayoutParse(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("layout serializes")
    }

    pub fn half_extent(&self) -> Vec2 {
        [0.5 * self.width, 0.5 * self.height]
    }

    /// Walls grown by the ball radius: the forbidden region for the ball center.
    pub fn inflated_walls(&self) -> impl Iterator<Item = Wall> + '_ {
        let r = self.ball_radius;
        self.walls.iter().map(move |w| w.inflated(r))
    }

    /// True when the straight segment between two ball-center positions
    /// stays clear of every wall.
    pub fn line_of_sight(&self, a: Vec2, b: Vec2) -> bool {
        self.inflated_walls().all(|w| w.segment_entry(a, b).is_none())
    }

    /// Distance from `p` to the nearest wall or tray edge.
    pub fn clearance(&self, p: Vec2) -> f64 {
        let edge = p[0].min(self.width - p[0]).min(p[1]).min(self.height - p[1]);
        self.walls
            .iter()
            .map(|w| w.distance(p))
            .fold(edge, f64::min)
    }

    /// Checks the geometric invariants every layout must satisfy.
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidLayout(m.to_string()));
        if !(self.width > 0.0 && self.height > 0.0) {
            return bad("tray dimensions must be positive");
        }
        if !(self.ball_radius > 0.0 && self.goal_radius > 0.0 && self.start_region.radius >= 0.0)
        {
            return bad("radii must be positive");
        }
        for w in &self.walls {
            if !(w.min[0] < w.max[0] && w.min[1] < w.max[1]) {
                return bad("wall with empty extent");
            }
        }
        let inside = |c: Vec2, r: f64| {
            c[0] - r >= 0.0 && c[0] + r <= self.width && c[1] - r >= 0.0 && c[1] + r <= self.height
        };
        if !inside(self.goal_center, self.goal_radius) {
            return bad("goal region leaves the tray");
        }
        let s = self.start_region;
        if !inside(s.center, s.radius + self.ball_radius) {
            return bad("start region leaves the tray");
        }
        for w in &self.walls {
            if w.distance(self.goal_center) <= self.goal_radius {
                return bad("goal region intersects a wall");
            }
            if w.distance(s.center) <= s.radius + self.ball_radius {
                return bad("start region intersects a wall");
            }
        }
        if self
            .walls
            .iter()
            .all(|w| w.segment_entry(s.center, self.goal_center).is_none())
        {
            return bad("no wall separates start from goal");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Node {
    cost: f64,
    idx: usize,
}

impl Eq for Node {}

impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .partial_cmp(&self.cost)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Plans a waypoint chain from the start center to the goal center.
///
/// Runs Dijkstra on a 100x100 grid, with step cost inflated near walls so the
/// path runs down the middle of each channel, then keeps only the points where
/// straight-line visibility (at the path's own bottleneck clearance) breaks.
pub fn plan_waypoints(layout: &TrayLayout) -> Result<Vec<Vec2>, SimError> {
    const N: usize = 100;
    let cell = [layout.width / N as f64, layout.height / N as f64];
    let center = |i: usize, j: usize| [(i as f64 + 0.5) * cell[0], (j as f64 + 0.5) * cell[1]];
    let to_cell = |p: Vec2| {
        let i = ((p[0] / cell[0]) as usize).min(N - 1);
        let j = ((p[1] / cell[1]) as usize).min(N - 1);
        (i, j)
    };
    let min_clear = layout.ball_radius;
    let clear: Vec<f64> = (0..N * N)
        .map(|k| layout.clearance(center(k % N, k / N)))
        .collect();

    let (si, sj) = to_cell(layout.start_region.center);
    let (gi, gj) = to_cell(layout.goal_center);
    let start = sj * N + si;
    let goal = gj * N + gi;

    let mut dist = vec![f64::INFINITY; N * N];
    let mut prev = vec![usize::MAX; N * N];
    let mut heap = BinaryHeap::new();
    dist[start] = 0.0;
    heap.push(Node {
        cost: 0.0,
        idx: start,
    });
    while let Some(Node { cost, idx }) = heap.pop() {
        if idx == goal {
            break;
        }
        if cost > dist[idx] {
            continue;
        }
        let (i, j) = ((idx % N) as isize, (idx / N) as isize);
        for (di, dj) in [
            (1, 0),
            (-1, 0),
            (0, 1),
            (0, -1),
            (1, 1),
            (1, -1),
            (-1, 1),
            (-1, -1),
        ] {
            let (ni, nj) = (i + di, j + dj);
            if ni < 0 || nj < 0 || ni >= N as isize || nj >= N as isize {
                continue;
            }
            let nidx = nj as usize * N + ni as usize;
            if clear[nidx] < min_clear && nidx != goal {
                continue;
            }
            let step = ((di * di + dj * dj) as f64).sqrt();
            let c = cost + step * (1.0 + 4.0 * layout.ball_radius / clear[nidx].max(1e-6));
            if c < dist[nidx] {
                dist[nidx] = c;
                prev[nidx] = idx;
                heap.push(Node { cost: c, idx: nidx });
            }
        }
    }
    if !dist[goal].is_finite() {
        return Err(SimError::InvalidLayout(
            "goal is unreachable from the start region".into(),
        ));
    }

    let mut path = vec![layout.goal_center];
    let mut k = prev[goal];
    while k != start && k != usize::MAX {
        path.push(center(k % N, k / N));
        k = prev[k];
    }
    path.push(layout.start_region.center);
    path.reverse();

    let bottleneck = path[1..path.len() - 1]
        .iter()
        .map(|&p| layout.clearance(p))
        .fold(f64::INFINITY, f64::min);
    let need = 0.8 * bottleneck.min(4.0 * layout.ball_radius);
    let segment_clear = |a: Vec2, b: Vec2| {
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        let n = (len / (0.25 * cell[0].min(cell[1]))).ceil().max(1.0) as usize;
        (0..=n).all(|s| {
            let t = s as f64 / n as f64;
            let p = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
            layout.clearance(p) >= need
        }) && layout.line_of_sight(a, b)
    };

    let mut waypoints = vec![path[0]];
    let mut cur = 0;
    while cur < path.len() - 1 {
        let mut next = cur + 1;
        for cand in (cur + 1..path.len()).rev() {
            if segment_clear(path[cur], path[cand]) {
                next = cand;
                break;
            }
        }
        waypoints.push(path[next]);
        cur = next;
    }
    Ok(waypoints)
}
