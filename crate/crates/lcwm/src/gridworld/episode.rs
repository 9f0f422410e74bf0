use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::maze::{generate_maze, Action, AgentPose, Cell, MazeGrid, MazeSpec, ACTION_ORDER};
use super::render::{render_observation, Observation};
use crate::error::{Error, Result};

/// Forward actions in a canonical episode; the full episode mirrors these.
pub const FORWARD_STEPS: usize = 50;
/// Markers to tour per episode.
pub const TOUR_MARKERS: usize = 40;
/// Episodes in the Simple recall dataset.
pub const SIMPLE_DATASET_LEN: usize = 34;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMeta {
    pub spec: MazeSpec,
    pub episode_seed: u64,
    pub midpoint: usize,
}

/// Aligned observations / actions / poses with a mirrored second half:
/// `|observations| = |actions| + 1 = |poses|` and, for canonical episodes,
/// `poses[mid+k] == poses[mid-k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub observations: Vec<Observation>,
    pub actions: Vec<Action>,
    pub poses: Vec<AgentPose>,
    pub grid: MazeGrid,
    pub meta: EpisodeMeta,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

/// One environment step: move one cell in the compass direction, or stay put
/// when the target cell is a wall. Tour-planned episodes never bump.
pub fn step(grid: &MazeGrid, pose: &AgentPose, action: Action) -> AgentPose {
    let (dr, dc) = action.delta();
    let (nr, nc) = (pose.row as i64 + dr, pose.col as i64 + dc);
    if grid.at(nr, nc).is_walkable() {
        AgentPose { row: nr as usize, col: nc as usize }
    } else {
        *pose
    }
}

/// Reverses the action list and inverts each action, so that executing
/// `actions` then `mirror_actions(actions)` returns to the starting pose.
pub fn mirror_actions(actions: &[Action]) -> Vec<Action> {
    actions.iter().rev().map(|a| a.inverse()).collect()
}

/// BFS shortest path from `start` to `goal`; ties broken by the fixed
/// N, E, S, W direction order. Walls are impassable.
fn bfs_path(grid: &MazeGrid, start: AgentPose, goal: AgentPose) -> Option<Vec<Action>> {
    if start == goal {
        return Some(Vec::new());
    }
    let n = grid.size;
    let idx = |p: &AgentPose| p.row * n + p.col;
    let mut prev: Vec<Option<(usize, Action)>> = vec![None; n * n];
    let mut seen = vec![false; n * n];
    let mut queue = VecDeque::new();
    seen[idx(&start)] = true;
    queue.push_back(start);
    while let Some(pose) = queue.pop_front() {
        for a in ACTION_ORDER {
            let next = step(grid, &pose, a);
            if next == pose || seen[idx(&next)] {
                continue;
            }
            seen[idx(&next)] = true;
            prev[idx(&next)] = Some((idx(&pose), a));
            if next == goal {
                let mut path = Vec::new();
                let mut cur = idx(&next);
                while let Some((p, act)) = prev[cur] {
                    path.push(act);
                    cur = p;
                }
                path.reverse();
                return Some(path);
            }
            queue.push_back(next);
        }
    }
    None
}

/// Concatenated BFS shortest paths through `n_markers` randomly sampled
/// markers (without replacement until the markers are exhausted, then with
/// replacement).
pub fn plan_marker_tour(
    grid: &MazeGrid,
    start: &AgentPose,
    n_markers: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Action>> {
    let markers = grid.marker_positions();
    if markers.is_empty() {
        return Err(Error::Invalid("no markers in grid".into()));
    }
    let mut order = markers.clone();
    order.shuffle(rng);
    let mut actions = Vec::new();
    let mut pose = *start;
    for i in 0..n_markers {
        let goal = if i < order.len() {
            order[i]
        } else {
            *markers.choose(rng).expect("non-empty")
        };
        let path = bfs_path(grid, pose, goal)
            .ok_or_else(|| Error::Invalid("maze is not connected".into()))?;
        for a in &path {
            pose = step(grid, &pose, *a);
        }
        actions.extend(path);
    }
    Ok(actions)
}

fn run_actions(
    grid: &MazeGrid,
    spec: &MazeSpec,
    start: AgentPose,
    actions: &[Action],
) -> (Vec<AgentPose>, Vec<Observation>) {
    let mut poses = vec![start];
    let mut obs = vec![render_observation(grid, &start, spec)];
    let mut pose = start;
    for &a in actions {
        pose = step(grid, &pose, a);
        poses.push(pose);
        obs.push(render_observation(grid, &pose, spec));
    }
    (poses, obs)
}

/// Builds one canonical mirrored episode: a 40-marker tour truncated or
/// extended to exactly 50 forward actions, followed by their mirror, giving
/// 101 observations with the midpoint at index 50.
pub fn build_episode(spec: &MazeSpec, episode_seed: u64) -> Result<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(episode_seed);
    let maze_spec = MazeSpec { seed: rng.gen(), ..spec.clone() };
    let grid = generate_maze(&maze_spec)?;
    let walkable = grid.walkable_positions();
    let start = walkable[rng.gen_range(0..walkable.len())];

    let mut forward = plan_marker_tour(&grid, &start, TOUR_MARKERS, &mut rng)?;
    // Keep touring extra markers until the forward half is long enough.
    while forward.len() < FORWARD_STEPS {
        let mut pose = start;
        for &a in &forward {
            pose = step(&grid, &pose, a);
        }
        let extra = plan_marker_tour(&grid, &pose, 1, &mut rng)?;
        if extra.is_empty() {
            // Lone marker under the agent; nudge with any legal move.
            let a = ACTION_ORDER
                .into_iter()
                .find(|&a| step(&grid, &pose, a) != pose)
                .ok_or_else(|| Error::Invalid("agent is boxed in".into()))?;
            forward.push(a);
        } else {
            forward.extend(extra);
        }
    }
    forward.truncate(FORWARD_STEPS);

    let mut actions = forward.clone();
    actions.extend(mirror_actions(&forward));
    let (poses, observations) = run_actions(&grid, &maze_spec, start, &actions);
    Ok(Episode {
        observations,
        actions,
        poses,
        grid,
        meta: EpisodeMeta { spec: maze_spec, episode_seed, midpoint: FORWARD_STEPS },
    })
}

/// Window of `len+1` observations centered on the episode midpoint, so the
/// slice is itself mirrored about its own center. `len` must be even.
pub fn slice_context(episode: &Episode, len: usize) -> Result<Episode> {
    if len % 2 != 0 {
        return Err(Error::Invalid(format!("context length must be even, got {len}")));
    }
    let mid = episode.meta.midpoint;
    let half = len / 2;
    if half > mid || mid + half >= episode.len() {
        return Err(Error::Invalid(format!(
            "context length {len} does not fit episode of {} observations",
            episode.len()
        )));
    }
    let lo = mid - half;
    let hi = mid + half;
    Ok(Episode {
        observations: episode.observations[lo..=hi].to_vec(),
        actions: episode.actions[lo..hi].to_vec(),
        poses: episode.poses[lo..=hi].to_vec(),
        grid: episode.grid.clone(),
        meta: EpisodeMeta { midpoint: half, ..episode.meta.clone() },
    })
}


pub fn build_simple_dataset() -> Vec<Episode> {
    let size = 15;
    let start = AgentPose { row: 7, col: 7 };
    let mut episodes = Vec::new();
    'outer: for color in 0..6u8 {
        for dir in ACTION_ORDER {
            for lateral in [0i64, -1, 1] {
                if episodes.len() == SIMPLE_DATASET_LEN {
                    break 'outer;
                }
                let spec = MazeSpec {
                    size,
                    marker_count: 1,
                    difficulty: 1,
                    palette: super::maze::DEFAULT_PALETTE.to_vec(),
                    seed: episodes.len() as u64,
                };
                let mut grid = MazeGrid::filled(size, Cell::Empty);
                for i in 0..size {
                    grid.set(0, i, Cell::Wall);
                    grid.set(size - 1, i, Cell::Wall);
                    grid.set(i, 0, Cell::Wall);
                    grid.set(i, size - 1, Cell::Wall);
                }
                let (dr, dc) = dir.delta();
                // Marker 3 cells behind the start (plus a sideways offset):
                // inside the 7x7 window at the start, outside it at the midpoint.
                let (mr, mc) = (
                    start.row as i64 - 3 * dr + lateral * dc.abs(),
                    start.col as i64 - 3 * dc + lateral * dr.abs(),
                );
                grid.set(mr as usize, mc as usize, Cell::Marker(color));
                let forward = vec![dir; 3];
                let mut actions = forward.clone();
                actions.extend(mirror_actions(&forward));
                let (poses, observations) = run_actions(&grid, &spec, start, &actions);
                episodes.push(Episode {
                    observations,
                    actions,
                    poses,
                    grid,
                    meta: EpisodeMeta { spec, episode_seed: episodes.len() as u64, midpoint: 3 },
                });
            }
        }
    }
    episodes
}
