//! Procedural indoor-style 2D environments.
//!
//! A [`WorldMap`] is an occupancy grid with rectangular rooms joined by
//! corridors and furniture objects drawn from a 15-category palette.
//! Agents move with atomic actions (rotate by a fixed granularity, step
//! ahead) and perceive the world through a 90-degree raycast sweep that
//! yields per-column shade, depth, and semantic instance ids.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const NUM_CATEGORIES: usize = 15;

/// Stand-in furniture palette. The names double as caption nouns.
pub const CATEGORY_NAMES: [&str; NUM_CATEGORIES] = [
    "bed", "chair", "table", "sofa", "plant", "lamp", "television", "shelf", "sink", "toilet",
    "mirror", "cushion", "desk", "dresser", "stool",
];

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("unsatisfiable generation config: {0}")]
    Unsatisfiable(String),
    #[error("invalid pose: ({0}, {1}) is not in free space")]
    InvalidPose(f32, f32),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cell {
    Free,
    Wall,
    /// Occupied by the object with this instance id (1-based).
    Object(u16),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Action {
    Forward,
    Left,
    Right,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Forward, Action::Left, Action::Right];

    pub fn index(self) -> usize {
        match self {
            Action::Forward => 0,
            Action::Left => 1,
            Action::Right => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Forward => "FORWARD",
            Action::Left => "LEFT",
            Action::Right => "RIGHT",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|a| a.name() == s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorldObject {
    /// Instance id, 1-based; 0 means structure.
    pub id: u16,
    pub category: u8,
    /// Footprint in cells: (x, y, width, height).
    pub rect: (usize, usize, usize, usize),
    /// Vertical extent proxy used for image-area computation, in (0, 1].
    pub height_weight: f32,
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    /// Grid side length in cells (1 cell = 1 m).
    pub grid_size: usize,
    pub rooms: usize,
    pub min_objects_per_room: usize,
    pub max_objects_per_room: usize,
    /// Raycast clamp distance in meters.
    pub max_range: f32,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            grid_size: 64,
            rooms: 5,
            min_objects_per_room: 1,
            max_objects_per_room: 3,
            max_range: 12.0,
        }
    }
}

#[derive(Clone, Copy, Debug, serde::Serialize, serde::Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct MotionConfig {
    /// Rotation granularity in degrees.
    pub rotate_deg: f32,
    /// Forward step length in meters.
    pub forward_m: f32,
}

impl Default for MotionConfig {
    fn default() -> Self {
        Self {
            rotate_deg: 15.0,
            forward_m: 0.25,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentPose {
    pub x: f32,
    pub y: f32,
    /// Heading in degrees, in [0, 360), a multiple of the rotation
    /// granularity.
    pub heading_deg: f32,
}

#[derive(Clone, Debug)]
pub struct WorldMap {
    grid_size: usize,
    cells: Vec<Cell>,
    objects: Vec<WorldObject>,
    pub max_range: f32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VisibleObject {
    pub instance: u16,
    pub category: u8,
    /// Fraction of the image this object occupies, in [0, 1].
    pub area_frac: f32,
}

/// One egocentric sensor frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    /// Grayscale shade per column, in [0, 1].
    pub shade: Vec<f32>,
    /// Depth per column in meters, clamped to `max_range`.
    pub depth: Vec<f32>,
    /// Depth normalized to [0, 1] by `max_range`.
    pub depth_norm: Vec<f32>,
    /// Semantic instance id per column; 0 = structure (or out of range).
    pub semantic: Vec<u16>,
    pub visible: Vec<VisibleObject>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSpec {
    pub world_seed: u64,
    pub start: AgentPose,
    pub length: usize,
}

/// Horizontal field of view of the raycast sweep, degrees.
pub const FOV_DEG: f32 = 90.0;
/// Columns in an observation.
pub const OBS_WIDTH: usize = 64;

impl WorldMap {
    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    pub fn cell(&self, x: usize, y: usize) -> Cell {
        self.cells[y * self.grid_size + x]
    }

    pub fn objects(&self) -> &[WorldObject] {
        &self.objects
    }

    pub fn is_free_cell(&self, x: usize, y: usize) -> bool {
        x < self.grid_size && y < self.grid_size && self.cell(x, y) == Cell::Free
    }

    /// Whether a continuous position lies in free space.
    pub fn is_free(&self, x: f32, y: f32) -> bool {
        if x < 0.0 || y < 0.0 {
            return false;
        }
        self.is_free_cell(x as usize, y as usize)
    }

    pub fn free_cell_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c == Cell::Free).count()
    }

    /// A deterministic valid start pose: center of the first free cell
    /// scanning row-major, facing east.
    pub fn default_start(&self) -> AgentPose {
        for y in 0..self.grid_size {
            for x in 0..self.grid_size {
                if self.is_free_cell(x, y) {
                    return AgentPose {
                        x: x as f32 + 0.5,
                        y: y as f32 + 0.5,
                        heading_deg: 0.0,
                    };
                }
            }
        }
        unreachable!("generated worlds always have free cells")
    }

    /// A seeded random valid start pose.
    pub fn random_start(&self, seed: u64) -> AgentPose {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let free: Vec<(usize, usize)> = (0..self.grid_size * self.grid_size)
            .filter(|i| self.cells[*i] == Cell::Free)
            .map(|i| (i % self.grid_size, i / self.grid_size))
            .collect();
        let (x, y) = free[rng.gen_range(0..free.len())];
        let steps = rng.gen_range(0..24u32);
        AgentPose {
            x: x as f32 + 0.5,
            y: y as f32 + 0.5,
            heading_deg: (steps as f32) * 15.0 % 360.0,
        }
    }
}

/// Deterministically generate a world from `(seed, config)`.
pub fn generate_world(seed: u64, config: &GenConfig) -> Result<WorldMap, WorldError> {
    if config.grid_size < 16 {
        return Err(WorldError::Unsatisfiable(format!(
            "grid size {} < 16",
            config.grid_size
        )));
    }
    if config.rooms < 2 {
        return Err(WorldError::Unsatisfiable(format!(
            "room count {} < 2",
            config.rooms
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _attempt in 0..64 {
        if let Some(map) = try_generate(&mut rng, config) {
            return Ok(map);
        }
    }
    Err(WorldError::Unsatisfiable(format!(
        "could not fit {} rooms on a {}x{} grid",
        config.rooms, config.grid_size, config.grid_size
    )))
}

fn try_generate(rng: &mut ChaCha8Rng, config: &GenConfig) -> Option<WorldMap> {
    let g = config.grid_size;
    let mut cells = vec![Cell::Wall; g * g];
    // room interiors, kept off the border
    let mut rooms: Vec<(usize, usize, usize, usize)> = Vec::new();
    let max_side = ((g - 2) / 2).clamp(4, 12);
    let mut tries = 0;
    while rooms.len() < config.rooms && tries < 500 {
        tries += 1;
        let w = rng.gen_range(4..=max_side);
        let h = rng.gen_range(4..=max_side);
        if g < w + 2 || g < h + 2 {
            continue;
        }
        let x = rng.gen_range(1..g - w);
        let y = rng.gen_range(1..g - h);
        let overlaps = rooms.iter().any(|&(rx, ry, rw, rh)| {
            x < rx + rw + 1 && rx < x + w + 1 && y < ry + rh + 1 && ry < y + h + 1
        });
        if overlaps {
            continue;
        }
        rooms.push((x, y, w, h));
    }
    if rooms.len() < config.rooms {
        return None;
    }
    for &(x, y, w, h) in &rooms {
        for yy in y..y + h {
            for xx in x..x + w {
                cells[yy * g + xx] = Cell::Free;
            }
        }
    }
    // connect consecutive room centers with L-shaped corridors
    let centers: Vec<(usize, usize)> = rooms
        .iter()
        .map(|&(x, y, w, h)| (x + w / 2, y + h / 2))
        .collect();
    for i in 1..centers.len() {
        let (x0, y0) = centers[i - 1];
        let (x1, y1) = centers[i];
        let bend_horizontal_first = rng.gen_bool(0.5);
        let carve = |cells: &mut Vec<Cell>, x: usize, y: usize| {
            if x > 0 && x < g - 1 && y > 0 && y < g - 1 {
                cells[y * g + x] = Cell::Free;
            }
        };
        if bend_horizontal_first {
            for x in x0.min(x1)..=x0.max(x1) {
                carve(&mut cells, x, y0);
            }
            for y in y0.min(y1)..=y0.max(y1) {
                carve(&mut cells, x1, y);
            }
        } else {
            for y in y0.min(y1)..=y0.max(y1) {
                carve(&mut cells, x0, y);
            }
            for x in x0.min(x1)..=x0.max(x1) {
                carve(&mut cells, x, y1);
            }
        }
    }
    // furniture: cells on a room rim (adjacent to structure), never in a
    // corridor, so connectivity is preserved by construction for rooms of
    // width >= 4 -- still verified below
    let mut objects: Vec<WorldObject> = Vec::new();
    for &(x, y, w, h) in &rooms {
        let count = rng.gen_range(config.min_objects_per_room..=config.max_objects_per_room);
        let mut placed = 0;
        let mut attempts = 0;
        while placed < count && attempts < 50 {
            attempts += 1;
            // rim cell of the room interior
            let (ox, oy) = match rng.gen_range(0..4u8) {
                0 => (x + rng.gen_range(0..w), y),
                1 => (x + rng.gen_range(0..w), y + h - 1),
                2 => (x, y + rng.gen_range(0..h)),
                _ => (x + w - 1, y + rng.gen_range(0..h)),
            };
            if cells[oy * g + ox] != Cell::Free {
                continue;
            }
            let touches_wall = neighbors4(ox, oy, g)
                .iter()
                .any(|&(nx, ny)| cells[ny * g + nx] == Cell::Wall);
            if !touches_wall {
                continue;
            }
            let id = (objects.len() + 1) as u16;
            cells[oy * g + ox] = Cell::Object(id);
            objects.push(WorldObject {
                id,
                category: rng.gen_range(0..NUM_CATEGORIES as u8),
                rect: (ox, oy, 1, 1),
                height_weight: 0.3 + 0.7 * rng.gen::<f32>(),
            });
            placed += 1;
        }
        if placed < config.min_objects_per_room {
            return None;
        }
    }
    let map = WorldMap {
        grid_size: g,
        cells,
        objects,
        max_range: config.max_range,
    };
    if free_space_connected(&map) {
        Some(map)
    } else {
        None
    }
}

fn neighbors4(x: usize, y: usize, g: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(4);
    if x > 0 {
        out.push((x - 1, y));
    }
    if x + 1 < g {
        out.push((x + 1, y));
    }
    if y > 0 {
        out.push((x, y - 1));
    }
    if y + 1 < g {
        out.push((x, y + 1));
    }
    out
}

/// Flood-fill check that all free cells form one region.
pub fn free_space_connected(map: &WorldMap) -> bool {
    let g = map.grid_size;
    let total = map.free_cell_count();
    if total == 0 {
        return false;
    }
    let start = (0..g * g).find(|&i| map.cells[i] == Cell::Free).unwrap();
    let mut seen = vec![false; g * g];
    let mut stack = vec![start];
    seen[start] = true;
    let mut reached = 0usize;
    while let Some(i) = stack.pop() {
        reached += 1;
        let (x, y) = (i % g, i / g);
        for (nx, ny) in neighbors4(x, y, g) {
            let j = ny * g + nx;
            if !seen[j] && map.cells[j] == Cell::Free {
                seen[j] = true;
                stack.push(j);
            }
        }
    }
    reached == total
}

/// Apply an atomic action. Collisions are silent no-ops.
pub fn step(map: &WorldMap, pose: &AgentPose, action: Action, motion: &MotionConfig) -> AgentPose {
    match action {
        Action::Left => AgentPose {
            heading_deg: wrap_deg(pose.heading_deg + motion.rotate_deg),
            ..*pose
        },
        Action::Right => AgentPose {
            heading_deg: wrap_deg(pose.heading_deg - motion.rotate_deg),
            ..*pose
        },
        Action::Forward => {
            let (dx, dy) = heading_vec(pose.heading_deg);
            let (nx, ny) = (pose.x + dx * motion.forward_m, pose.y + dy * motion.forward_m);
            // sample the swept segment finely; reject if any sample leaves
            // free space
            let samples = 8;
            for s in 1..=samples {
                let t = s as f32 / samples as f32;
                let (sx, sy) = (pose.x + dx * motion.forward_m * t, pose.y + dy * motion.forward_m * t);
                if !map.is_free(sx, sy) {
                    return *pose;
                }
            }
            AgentPose {
                x: nx,
                y: ny,
                ..*pose
            }
        }
    }
}

fn wrap_deg(d: f32) -> f32 {
    let mut d = d;
    while d >= 360.0 {
        d -= 360.0;
    }
    while d < 0.0 {
        d += 360.0;
    }
    d
}

fn heading_vec(deg: f32) -> (f32, f32) {
    let r = deg.to_radians();
    (r.cos(), r.sin())
}

/// Exact grid traversal: distance to the first non-free cell along the
/// ray, plus what was hit.
fn cast_ray(map: &WorldMap, x: f32, y: f32, angle_deg: f32) -> (f32, Cell) {
    let (dx, dy) = heading_vec(angle_deg);
    let g = map.grid_size as isize;
    let mut cx = x.floor() as isize;
    let mut cy = y.floor() as isize;
    let step_x: isize = if dx > 0.0 { 1 } else { -1 };
    let step_y: isize = if dy > 0.0 { 1 } else { -1 };
    let inv_dx = if dx.abs() < 1e-9 { f32::INFINITY } else { 1.0 / dx.abs() };
    let inv_dy = if dy.abs() < 1e-9 { f32::INFINITY } else { 1.0 / dy.abs() };
    let mut t_max_x = if dx > 0.0 {
        ((cx + 1) as f32 - x) * inv_dx
    } else {
        (x - cx as f32) * inv_dx
    };
    let mut t_max_y = if dy > 0.0 {
        ((cy + 1) as f32 - y) * inv_dy
    } else {
        (y - cy as f32) * inv_dy
    };
    loop {
        let t;
        if t_max_x < t_max_y {
            t = t_max_x;
            t_max_x += inv_dx;
            cx += step_x;
        } else {
            t = t_max_y;
            t_max_y += inv_dy;
            cy += step_y;
        }
        if t > map.max_range {
            return (map.max_range, Cell::Free);
        }
        if cx < 0 || cy < 0 || cx >= g || cy >= g {
            return (map.max_range, Cell::Free);
        }
        let cell = map.cell(cx as usize, cy as usize);
        if cell != Cell::Free {
            return (t.min(map.max_range), cell);
        }
    }
}

/// Raycast sweep: one ray per column across a 90-degree field of view,
/// leftmost column first.
pub fn render_observation(map: &WorldMap, pose: &AgentPose) -> Observation {
    let w = OBS_WIDTH;
    let mut shade = Vec::with_capacity(w);
    let mut depth = Vec::with_capacity(w);
    let mut depth_norm = Vec::with_capacity(w);
    let mut semantic = Vec::with_capacity(w);
    let mut column_hits: Vec<u16> = Vec::with_capacity(w);
    for i in 0..w {
        let offset = FOV_DEG / 2.0 - (i as f32 + 0.5) * FOV_DEG / w as f32;
        let (d, cell) = cast_ray(map, pose.x, pose.y, pose.heading_deg + offset);
        let (instance, base_shade) = match cell {
            Cell::Free => (0u16, 0.0),
            Cell::Wall => (0u16, 0.85),
            Cell::Object(id) => {
                let cat = map.objects[(id - 1) as usize].category;
                (id, 0.25 + 0.035 * cat as f32)
            }
        };
        let atten = 1.0 - 0.6 * (d / map.max_range);
        shade.push((base_shade * atten).clamp(0.0, 1.0));
        depth.push(d);
        depth_norm.push((d / map.max_range).clamp(0.0, 1.0));
        semantic.push(instance);
        column_hits.push(instance);
    }
    let mut visible: Vec<VisibleObject> = Vec::new();
    for obj in &map.objects {
        let cols = column_hits.iter().filter(|&&h| h == obj.id).count();
        if cols > 0 {
            visible.push(VisibleObject {
                instance: obj.id,
                category: obj.category,
                area_frac: cols as f32 * obj.height_weight / w as f32,
            });
        }
    }
    Observation {
        shade,
        depth,
        depth_norm,
        semantic,
        visible,
    }
}

/// Fraction of free cells whose center lies within one cell (Chebyshev)
/// of any trajectory position.
pub fn visited_coverage(map: &WorldMap, trajectory: &[AgentPose]) -> f32 {
    let free = map.free_cell_count();
    if free == 0 || trajectory.is_empty() {
        return 0.0;
    }
    let g = map.grid_size;
    let mut touched = vec![false; g * g];
    for pose in trajectory {
        let cx = pose.x as isize;
        let cy = pose.y as isize;
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                let (x, y) = (cx + dx, cy + dy);
                if x >= 0 && y >= 0 && (x as usize) < g && (y as usize) < g {
                    touched[y as usize * g + x as usize] = true;
                }
            }
        }
    }
    let covered = (0..g * g)
        .filter(|&i| touched[i] && map.cells[i] == Cell::Free)
        .count();
    covered as f32 / free as f32
}

/// Structured text export: grid rows, then one object per line.
pub fn export_world(map: &WorldMap) -> String {
    let g = map.grid_size;
    let mut out = String::new();
    for y in 0..g {
        for x in 0..g {
            out.push(match map.cell(x, y) {
                Cell::Free => '.',
                Cell::Wall => '#',
                Cell::Object(_) => 'o',
            });
        }
        out.push('\n');
    }
    for obj in &map.objects {
        let (x, y, w, h) = obj.rect;
        out.push_str(&format!(
            "object {} {} {} {} {} {} {:.4}\n",
            obj.id,
            obj.category,
            CATEGORY_NAMES[obj.category as usize],
            x,
            y,
            format!("{w}x{h}"),
            obj.height_weight,
        ));
    }
    out
}

/// Render a top-down trajectory map as a binary P5 graymap, `scale`
/// pixels per cell. Walls are black, free space white, the trajectory a
/// gray ramp by time, the start cell dark gray.
pub fn render_trajectory_map(map: &WorldMap, trajectory: &[AgentPose], scale: usize) -> Vec<u8> {
    let g = map.grid_size;
    let side = g * scale;
    let mut pix = vec![0u8; side * side];
    for y in 0..g {
        for x in 0..g {
            let v = match map.cell(x, y) {
                Cell::Free => 255u8,
                Cell::Wall => 0,
                Cell::Object(_) => 60,
            };
            fill_cell(&mut pix, side, x, y, scale, v);
        }
    }
    let n = trajectory.len();
    for (i, pose) in trajectory.iter().enumerate() {
        let (x, y) = (pose.x as usize, pose.y as usize);
        if x < g && y < g {
            let ramp = if n <= 1 {
                128
            } else {
                (200 - (i * 110 / (n - 1))) as u8
            };
            fill_cell(&mut pix, side, x, y, scale, ramp);
        }
    }
    if let Some(start) = trajectory.first() {
        let (x, y) = (start.x as usize, start.y as usize);
        if x < g && y < g {
            fill_cell(&mut pix, side, x, y, scale, 30);
        }
    }
    let mut out = format!("P5\n{side} {side}\n255\n").into_bytes();
    out.extend(pix);
    out
}

fn fill_cell(pix: &mut [u8], side: usize, x: usize, y: usize, scale: usize, v: u8) {
    for py in y * scale..(y + 1) * scale {
        for px in x * scale..(x + 1) * scale {
            pix[py * side + px] = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> GenConfig {
        GenConfig {
            grid_size: 32,
            rooms: 3,
            ..GenConfig::default()
        }
    }

    fn check_invariants(map: &WorldMap) {
        let g = map.grid_size();
        for i in 0..g {
            assert_eq!(map.cell(i, 0), Cell::Wall);
            assert_eq!(map.cell(i, g - 1), Cell::Wall);
            assert_eq!(map.cell(0, i), Cell::Wall);
            assert_eq!(map.cell(g - 1, i), Cell::Wall);
        }
        assert!(free_space_connected(map));
        for obj in map.objects() {
            let (x, y, w, h) = obj.rect;
            let mut touches = false;
            for yy in y..y + h {
                for xx in x..x + w {
                    assert_eq!(map.cell(xx, yy), Cell::Object(obj.id));
                    touches |= neighbors4(xx, yy, g)
                        .iter()
                        .any(|&(nx, ny)| map.cell(nx, ny) == Cell::Wall);
                }
            }
            assert!(touches, "object {} not adjacent to structure", obj.id);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_world(7, &small_config()).unwrap();
        let b = generate_world(7, &small_config()).unwrap();
        assert_eq!(a.cells, b.cells);
        assert_eq!(a.objects, b.objects);
        assert_eq!(export_world(&a), export_world(&b));
    }

    #[test]
    fn sixteen_by_sixteen_two_rooms_is_connected() {
        let cfg = GenConfig {
            grid_size: 16,
            rooms: 2,
            ..GenConfig::default()
        };
        let map = generate_world(3, &cfg).unwrap();
        assert!(free_space_connected(&map));
    }

    #[test]
    fn invariant_sweep_over_100_seeds() {
        for seed in 0..100u64 {
            let map = generate_world(seed, &small_config()).unwrap();
            check_invariants(&map);
        }
    }

    #[test]
    fn too_many_rooms_is_generation_error() {
        let cfg = GenConfig {
            grid_size: 16,
            rooms: 40,
            ..GenConfig::default()
        };
        assert!(matches!(
            generate_world(0, &cfg),
            Err(WorldError::Unsatisfiable(_))
        ));
    }

    fn empty_room_map(g: usize) -> WorldMap {
        let mut cells = vec![Cell::Free; g * g];
        for i in 0..g {
            cells[i] = Cell::Wall;
            cells[(g - 1) * g + i] = Cell::Wall;
            cells[i * g] = Cell::Wall;
            cells[i * g + g - 1] = Cell::Wall;
        }
        WorldMap {
            grid_size: g,
            cells,
            objects: vec![],
            max_range: 12.0,
        }
    }

    #[test]
    fn forward_into_wall_is_a_no_op() {
        let map = empty_room_map(8);
        let motion = MotionConfig::default();
        // directly adjacent to the east wall, facing it
        let pose = AgentPose {
            x: 6.9,
            y: 4.0,
            heading_deg: 0.0,
        };
        let next = step(&map, &pose, Action::Forward, &motion);
        assert_eq!(next, pose);
    }

    #[test]
    fn left_then_right_restores_pose() {
        let map = empty_room_map(8);
        let motion = MotionConfig::default();
        let pose = AgentPose {
            x: 4.0,
            y: 4.0,
            heading_deg: 45.0,
        };
        let p1 = step(&map, &pose, Action::Left, &motion);
        let p2 = step(&map, &p1, Action::Right, &motion);
        assert_eq!(p2, pose);
    }

    #[test]
    fn twenty_four_lefts_is_a_full_rotation() {
        let map = empty_room_map(8);
        let motion = MotionConfig::default();
        let mut pose = AgentPose {
            x: 4.0,
            y: 4.0,
            heading_deg: 30.0,
        };
        for _ in 0..24 {
            pose = step(&map, &pose, Action::Left, &motion);
        }
        assert_eq!(pose.heading_deg, 30.0);
    }

    #[test]
    fn center_depth_matches_distance_to_flat_wall() {
        let map = empty_room_map(16);
        // east wall starts at x = 15; stand 2 m away from its face
        let pose = AgentPose {
            x: 13.0,
            y: 8.0,
            heading_deg: 0.0,
        };
        let obs = render_observation(&map, &pose);
        let mid = OBS_WIDTH / 2;
        assert!(
            (obs.depth[mid] - 2.0).abs() < 0.01,
            "depth {}",
            obs.depth[mid]
        );
    }

    #[test]
    fn long_corridor_clamps_to_max_range() {
        let map = empty_room_map(40);
        let pose = AgentPose {
            x: 2.0,
            y: 20.5,
            heading_deg: 0.0,
        };
        let obs = render_observation(&map, &pose);
        let mid = OBS_WIDTH / 2;
        assert_eq!(obs.depth[mid], map.max_range);
        assert_eq!(obs.depth_norm[mid], 1.0);
        assert_eq!(obs.semantic[mid], 0);
    }

    #[test]
    fn object_filling_the_view_has_high_area_fraction() {
        let g = 16;
        let mut map = empty_room_map(g);
        // wall of object cells spanning the whole north-south extent right
        // in front of the agent
        let id = 1u16;
        for y in 1..g - 1 {
            map.cells[y * g + 10] = Cell::Object(id);
        }
        map.objects.push(WorldObject {
            id,
            category: 3,
            rect: (10, 1, 1, g - 2),
            height_weight: 1.0,
        });
        let pose = AgentPose {
            x: 9.0,
            y: 8.0,
            heading_deg: 0.0,
        };
        let obs = render_observation(&map, &pose);
        let area: f32 = obs
            .visible
            .iter()
            .find(|v| v.instance == id)
            .map(|v| v.area_frac)
            .unwrap();
        assert!(area >= 0.9, "area {area}");
    }

    #[test]
    fn area_fractions_sum_to_at_most_one() {
        for seed in 0..20u64 {
            let map = generate_world(seed, &small_config()).unwrap();
            let pose = map.random_start(seed);
            let obs = render_observation(&map, &pose);
            let total: f32 = obs.visible.iter().map(|v| v.area_frac).sum();
            assert!(total <= 1.0 + 1e-6, "total {total}");
        }
    }

    #[test]
    fn single_pose_coverage_is_small_but_positive() {
        let map = empty_room_map(16);
        let pose = AgentPose {
            x: 8.5,
            y: 8.5,
            heading_deg: 0.0,
        };
        let cov = visited_coverage(&map, &[pose]);
        let expected = 9.0 / map.free_cell_count() as f32;
        assert!((cov - expected).abs() < 1e-6);
    }

    #[test]
    fn full_sweep_coverage_saturates_at_one() {
        let map = empty_room_map(16);
        let mut traj = Vec::new();
        for y in 1..15 {
            for x in 1..15 {
                traj.push(AgentPose {
                    x: x as f32 + 0.5,
                    y: y as f32 + 0.5,
                    heading_deg: 0.0,
                });
            }
        }
        assert_eq!(visited_coverage(&map, &traj), 1.0);
    }

    #[test]
    fn l_shaped_path_matches_hand_count() {
        // 16x16 empty room; path along (2..=6, 2) then (6, 3..=5).
        // Touched 3x3 blocks: x 1..=7 x y 1..=3  (21 cells)
        //                  plus x 5..=7 x y 4..=6 (9 cells), all free.
        let map = empty_room_map(16);
        let mut traj = Vec::new();
        for x in 2..=6 {
            traj.push(AgentPose {
                x: x as f32 + 0.5,
                y: 2.5,
                heading_deg: 0.0,
            });
        }
        for y in 3..=5 {
            traj.push(AgentPose {
                x: 6.5,
                y: y as f32 + 0.5,
                heading_deg: 0.0,
            });
        }
        let cov = visited_coverage(&map, &traj);
        let expected = 30.0 / map.free_cell_count() as f32;
        assert!((cov - expected).abs() < 1e-6, "cov {cov}");
    }

    #[test]
    fn coverage_is_monotone_in_trajectory_extension() {
        let map = generate_world(11, &small_config()).unwrap();
        let motion = MotionConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut pose = map.default_start();
        let mut traj = vec![pose];
        let mut last = 0.0f32;
        for _ in 0..300 {
            let a = Action::ALL[rng.gen_range(0..3)];
            pose = step(&map, &pose, a, &motion);
            traj.push(pose);
            let cov = visited_coverage(&map, &traj);
            assert!(cov >= last);
            last = cov;
        }
    }

    #[test]
    fn random_walks_never_enter_occupied_space() {
        let map = generate_world(2, &small_config()).unwrap();
        let motion = MotionConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut pose = map.default_start();
        for _ in 0..100_000 {
            pose = step(&map, &pose, Action::ALL[rng.gen_range(0..3)], &motion);
            assert!(map.is_free(pose.x, pose.y));
        }
    }

    #[test]
    fn forward_toward_wall_strictly_decreases_center_depth() {
        let map = empty_room_map(14);
        let motion = MotionConfig::default();
        let mut pose = AgentPose {
            x: 2.5,
            y: 7.0,
            heading_deg: 0.0,
        };
        let mut last = render_observation(&map, &pose).depth[OBS_WIDTH / 2];
        loop {
            let next = step(&map, &pose, Action::Forward, &motion);
            if next == pose {
                break;
            }
            pose = next;
            let d = render_observation(&map, &pose).depth[OBS_WIDTH / 2];
            assert!(d < last, "{d} !< {last}");
            last = d;
        }
    }

    #[test]
    fn trajectory_map_is_valid_pgm() {
        let map = empty_room_map(16);
        let img = render_trajectory_map(&map, &[map.default_start()], 4);
        assert!(img.starts_with(b"P5\n64 64\n255\n"));
        assert_eq!(img.len(), 13 + 64 * 64);
    }
}
