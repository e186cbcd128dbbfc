//! Occupancy-grid scenes, procedural layouts and grid geodesics.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{FeatureMap, FeatureSpec};
use super::SimError;

/// Side length of one grid cell in metres.
pub const CELL_M: f64 = 0.25;
pub const MIN_SIDE: usize = 8;
/// Doorway width in cells. Kept below 3 so rooms stay separable by erosion.
pub const DOOR_CELLS: usize = 2;
/// Lane width of the corridor layout, in cells.
pub const LANE_CELLS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, o: &Pose) -> f64 {
        (self.x - o.x).hypot(self.y - o.y)
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.x, self.y]
    }
}

/// Grid coordinate: column `x`, row `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    /// Pose at the cell centre.
    pub fn center(&self) -> Pose {
        Pose::new((self.x as f64 + 0.5) * CELL_M, (self.y as f64 + 0.5) * CELL_M)
    }

    pub fn of_pose(p: &Pose) -> Option<Cell> {
        if p.x < 0.0 || p.y < 0.0 || !p.x.is_finite() || !p.y.is_finite() {
            return None;
        }
        Some(Cell::new(
            (p.x / CELL_M).floor() as usize,
            (p.y / CELL_M).floor() as usize,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    OpenRoom,
    Corridor,
    Maze,
}

impl std::str::FromStr for SceneKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "open_room" | "open-room" | "open" => Ok(SceneKind::OpenRoom),
            "corridor" => Ok(SceneKind::Corridor),
            "maze" => Ok(SceneKind::Maze),
            _ => Err(format!("unknown scene kind {s:?}")),
        }
    }
}

fn default_room() -> usize {
    12
}
fn default_wall() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub kind: SceneKind,
    pub seed: u64,
    /// Room side in cells (maze layout).
    #[serde(default = "default_room")]
    pub room: usize,
    /// Wall thickness in cells between rooms and lanes.
    #[serde(default = "default_wall")]
    pub wall: usize,
    #[serde(default)]
    pub features: FeatureSpec,
}

impl SceneSpec {
    pub fn new(width: usize, height: usize, kind: SceneKind, seed: u64) -> Self {
        Self {
            width,
            height,
            kind,
            seed,
            room: default_room(),
            wall: default_wall(),
            features: FeatureSpec::default(),
        }
    }

    /// Distance between corresponding points of neighbouring rooms, metres.
    pub fn room_pitch_m(&self) -> f64 {
        (self.room + self.wall) as f64 * CELL_M
    }
}

/// Navigable grid plus the scene's feature map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SceneFile", into = "SceneFile")]
pub struct Scene {
    pub scene_id: String,
    pub width: usize,
    pub height: usize,
    /// Row-major, `true` = free.
    free: Vec<bool>,
    pub features: FeatureMap,
}

/// On-disk form: `cells` is row-major occupancy, 1 = wall, 0 = free.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneFile {
    pub scene_id: String,
    pub width: usize,
    pub height: usize,
    pub cells: Vec<u8>,
    pub rff_seed: u64,
    pub sigma: f64,
    pub dim: usize,
    pub aliasing: bool,
    #[serde(default = "super::features::default_alias_fraction")]
    pub alias_fraction: f64,
    #[serde(default = "super::features::default_alias_period")]
    pub alias_period: f64,
    #[serde(default = "super::features::default_alias_sigma")]
    pub alias_sigma: f64,
}

impl TryFrom<SceneFile> for Scene {
    type Error = SimError;
    fn try_from(f: SceneFile) -> Result<Self, SimError> {
        if f.cells.len() != f.width * f.height {
            return Err(SimError::BadScene("cell count does not match width × height".into()));
        }
        let spec = FeatureSpec {
            dim: f.dim,
            sigma: f.sigma,
            aliasing: f.aliasing,
            alias_fraction: f.alias_fraction,
            alias_period: f.alias_period,
            alias_sigma: f.alias_sigma,
        };
        let scene = Scene {
            scene_id: f.scene_id,
            width: f.width,
            height: f.height,
            free: f.cells.iter().map(|&c| c == 0).collect(),
            features: FeatureMap::new(&spec, f.rff_seed)?,
        };
        if scene.free_count() == 0 {
            return Err(SimError::BadScene("no navigable cell".into()));
        }
        Ok(scene)
    }
}

impl From<Scene> for SceneFile {
    fn from(s: Scene) -> Self {
        let spec = s.features.spec();
        SceneFile {
            scene_id: s.scene_id,
            width: s.width,
            height: s.height,
            cells: s.free.iter().map(|&f| u8::from(!f)).collect(),
            rff_seed: s.features.seed(),
            sigma: spec.sigma,
            dim: spec.dim,
            aliasing: spec.aliasing,
            alias_fraction: spec.alias_fraction,
            alias_period: spec.alias_period,
            alias_sigma: spec.alias_sigma,
        }
    }
}

pub const NEIGHBOUR_OFFSETS: [(isize, isize); 4] = [(0, -1), (0, 1), (1, 0), (-1, 0)];

impl Scene {
    /// Build from an explicit free-cell mask (row-major).
    pub fn from_mask(
        scene_id: impl Into<String>,
        width: usize,
        height: usize,
        free: Vec<bool>,
        features: FeatureMap,
    ) -> Result<Self, SimError> {
        if free.len() != width * height {
            return Err(SimError::BadScene("mask size".into()));
        }
        if !free.iter().any(|&f| f) {
            return Err(SimError::BadScene("no navigable cell".into()));
        }
        Ok(Self {
            scene_id: scene_id.into(),
            width,
            height,
            free,
            features,
        })
    }

    /// Parse an ASCII map: `#` wall, anything else free. Rows top to bottom.
    pub fn from_ascii(scene_id: &str, rows: &[&str], features: FeatureMap) -> Result<Self, SimError> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != width) {
            return Err(SimError::BadScene("ragged ascii map".into()));
        }
        let free = rows.iter().flat_map(|r| r.bytes().map(|b| b != b'#')).collect();
        Self::from_mask(scene_id, width, height, free, features)
    }

    #[inline]
    pub fn index(&self, c: Cell) -> usize {
        c.y * self.width + c.x
    }

    pub fn cell_at(&self, idx: usize) -> Cell {
        Cell::new(idx % self.width, idx / self.width)
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x < self.width && c.y < self.height
    }

    pub fn is_free(&self, c: Cell) -> bool {
        self.in_bounds(c) && self.free[self.index(c)]
    }

    pub fn is_navigable(&self, p: &Pose) -> bool {
        Cell::of_pose(p).is_some_and(|c| self.is_free(c))
    }

    pub fn free_cells(&self) -> Vec<Cell> {
        (0..self.free.len())
            .filter(|&i| self.free[i])
            .map(|i| self.cell_at(i))
            .collect()
    }

    pub fn free_count(&self) -> usize {
        self.free.iter().filter(|&&f| f).count()
    }

    /// Free 4-neighbours in N, S, E, W order.
    pub fn neighbours(&self, c: Cell) -> impl Iterator<Item = (usize, Cell)> + '_ {
        NEIGHBOUR_OFFSETS.iter().enumerate().filter_map(move |(k, &(dx, dy))| {
            let x = c.x.checked_add_signed(dx)?;
            let y = c.y.checked_add_signed(dy)?;
            let n = Cell::new(x, y);
            self.is_free(n).then_some((k, n))
        })
    }

    /// BFS step counts from `from` to every cell (`u32::MAX` = unreachable).
    pub fn distance_field(&self, from: Cell) -> DistanceField {
        let mut dist = vec![u32::MAX; self.free.len()];
        if self.is_free(from) {
            let mut q = VecDeque::new();
            dist[self.index(from)] = 0;
            q.push_back(from);
            while let Some(c) = q.pop_front() {
                let d = dist[self.index(c)];
                for (_, n) in self.neighbours(c) {
                    let i = self.index(n);
                    if dist[i] == u32::MAX {
                        dist[i] = d + 1;
                        q.push_back(n);
                    }
                }
            }
        }
        DistanceField {
            width: self.width,
            dist,
        }
    }

    /// One shortest cell path from `from` to `to` (inclusive), choosing among
    /// equally short continuations with `pick`.
    pub fn geodesic_path_with(&self, from: Cell, to: Cell, mut pick: impl FnMut(&[Cell]) -> Cell) -> Option<Vec<Cell>> {
        let field = self.distance_field(to);
        let mut d = field.steps(from)?;
        let mut path = vec![from];
        let mut cur = from;
        let mut options = Vec::with_capacity(4);
        while d > 0 {
            options.clear();
            options.extend(
                self.neighbours(cur)
                    .map(|(_, n)| n)
                    .filter(|&n| field.steps(n) == Some(d - 1)),
            );
            cur = pick(&options);
            path.push(cur);
            d -= 1;
        }
        Some(path)
    }

    /// Shortest cell path taking the first candidate in N, S, E, W order.
    pub fn geodesic_path(&self, from: Cell, to: Cell) -> Option<Vec<Cell>> {
        self.geodesic_path_with(from, to, |opts| opts[0])
    }
}

/// Result of a grid BFS.
#[derive(Debug, Clone)]
pub struct DistanceField {
    width: usize,
    dist: Vec<u32>,
}

impl DistanceField {
    pub fn steps(&self, c: Cell) -> Option<u32> {
        if c.x >= self.width {
            return None;
        }
        self.dist
            .get(c.y * self.width + c.x)
            .copied()
            .filter(|&d| d != u32::MAX)
    }

    pub fn meters(&self, c: Cell) -> Option<f64> {
        self.steps(c).map(|s| s as f64 * CELL_M)
    }
}

/// Geodesic distance in metres between two poses, `None` if unreachable
/// or either pose is off the free space.
pub fn geodesic(scene: &Scene, a: &Pose, b: &Pose) -> Option<f64> {
    let (ca, cb) = (Cell::of_pose(a)?, Cell::of_pose(b)?);
    if !scene.is_free(ca) || !scene.is_free(cb) {
        return None;
    }
    scene.distance_field(cb).meters(ca)
}

/// Procedurally generate a scene. Deterministic in `spec.seed`.
pub fn synth_scene(spec: &SceneSpec, scene_id: impl Into<String>) -> Result<Scene, SimError> {
    if spec.width < MIN_SIDE || spec.height < MIN_SIDE {
        return Err(SimError::BadScene(format!(
            "scene must be at least {MIN_SIDE}×{MIN_SIDE} cells, got {}×{}",
            spec.width, spec.height
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (w, h) = (spec.width, spec.height);
    let mut free = vec![false; w * h];
    let mut carve = |x0: usize, y0: usize, x1: usize, y1: usize| {
        for y in y0..y1.min(h - 1) {
            for x in x0..x1.min(w - 1) {
                free[y * w + x] = true;
            }
        }
    };
    match spec.kind {
        SceneKind::OpenRoom => carve(1, 1, w - 1, h - 1),
        SceneKind::Corridor => {
            if spec.wall == 0 {
                return Err(SimError::BadScene("corridor layout needs wall ≥ 1".into()));
            }
            let pitch = LANE_CELLS + spec.wall;
            let lanes = (h - 2 + spec.wall) / pitch;
            if lanes == 0 {
                return Err(SimError::BadScene("scene too short for a corridor lane".into()));
            }
            for l in 0..lanes {
                let y0 = 1 + l * pitch;
                carve(1, y0, w - 1, y0 + LANE_CELLS);
                if l + 1 < lanes {
                    // connector on alternating ends
                    let x0 = if l % 2 == 0 { w - 1 - LANE_CELLS } else { 1 };
                    carve(x0, y0 + LANE_CELLS, x0 + LANE_CELLS, y0 + pitch);
                }
            }
        }
        SceneKind::Maze => {
            if spec.room < DOOR_CELLS + 1 || spec.wall == 0 {
                return Err(SimError::BadScene(
                    "maze rooms must exceed the door width and walls must be ≥ 1".into(),
                ));
            }
            let pitch = spec.room + spec.wall;
            let nx = (w - 2 + spec.wall) / pitch;
            let ny = (h - 2 + spec.wall) / pitch;
            if nx * ny < 2 {
                return Err(SimError::BadScene("maze needs room for at least two rooms".into()));
            }
            for ry in 0..ny {
                for rx in 0..nx {
                    let (x0, y0) = (1 + rx * pitch, 1 + ry * pitch);
                    carve(x0, y0, x0 + spec.room, y0 + spec.room);
                }
            }
            for (a, b) in maze_links(nx, ny, &mut rng) {
                let (ax, ay) = (a % nx, a / nx);
                let (bx, by) = (b % nx, b / nx);
                let off = rng.random_range(0..=spec.room - DOOR_CELLS);
                if ay == by {
                    let x0 = 1 + ax.min(bx) * pitch + spec.room;
                    let y0 = 1 + ay * pitch + off;
                    carve(x0, y0, x0 + spec.wall, y0 + DOOR_CELLS);
                } else {
                    let x0 = 1 + ax * pitch + off;
                    let y0 = 1 + ay.min(by) * pitch + spec.room;
                    carve(x0, y0, x0 + DOOR_CELLS, y0 + spec.wall);
                }
            }
        }
    }
    let features = FeatureMap::new(&spec.features, spec.seed ^ 0x5eed_fea7)?;
    Scene::from_mask(scene_id, w, h, free, features)
}

/// Random spanning tree over the room lattice plus a few extra links.
fn maze_links(nx: usize, ny: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, usize)> {
    let n = nx * ny;
    let adjacent = |r: usize| {
        let (x, y) = (r % nx, r / nx);
        let mut v = Vec::with_capacity(4);
        if x > 0 {
            v.push(r - 1);
        }
        if x + 1 < nx {
            v.push(r + 1);
        }
        if y > 0 {
            v.push(r - nx);
        }
        if y + 1 < ny {
            v.push(r + nx);
        }
        v
    };
    let mut visited = vec![false; n];
    let mut links = Vec::new();
    let mut stack = vec![rng.random_range(0..n)];
    visited[stack[0]] = true;
    while let Some(&top) = stack.last() {
        let mut next: Vec<usize> = adjacent(top).into_iter().filter(|&r| !visited[r]).collect();
        if next.is_empty() {
            stack.pop();
            continue;
        }
        next.shuffle(rng);
        let r = next[0];
        visited[r] = true;
        links.push((top.min(r), top.max(r)));
        stack.push(r);
    }
    for r in 0..n {
        for s in adjacent(r) {
            if r < s && !links.contains(&(r, s)) && rng.random_bool(0.15) {
                links.push((r, s));
            }
        }
    }
    links.sort_unstable();
    links
}
