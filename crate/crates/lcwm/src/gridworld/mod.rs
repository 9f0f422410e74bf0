//! Procedural gridworld: partially observed mazes with colored markers and
//! mirrored forward-backward episodes.
//!
//! An agent walks a maze visiting random markers along BFS-shortest paths,
//! then retraces its steps, so `obs[mid+k] == obs[mid-k]` holds bit-exactly
//! for every generated episode. The agent only ever sees a 7x7 cell window
//! centered on itself, rendered to a small RGB image.

mod archive;
mod episode;
mod maze;
mod render;

pub use archive::{read_dataset, read_episode, write_dataset, write_episode, DatasetIndex};
pub use episode::{
    build_episode, build_simple_dataset, mirror_actions, plan_marker_tour, slice_context, step,
    Episode, EpisodeMeta, SIMPLE_DATASET_LEN,
};
pub use maze::{generate_maze, Action, AgentPose, Cell, MazeGrid, MazeSpec, DEFAULT_PALETTE};
pub use render::{cell_window, render_observation, Observation, CELL_PX, OBS_SIZE, WINDOW};
