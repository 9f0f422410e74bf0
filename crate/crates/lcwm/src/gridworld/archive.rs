use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::episode::{Episode, EpisodeMeta};
use super::maze::{Action, AgentPose, Cell, MazeGrid};
use super::render::{Observation, OBS_SIZE};
use crate::error::{Error, Result};

/// On-disk layout: one directory per episode with `manifest.json`,
/// `frames.rgb8` (raw row-major 8-bit RGB, frame-major) and `actions.json`;
/// the dataset root holds `index.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub episodes: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    meta: EpisodeMeta,
    obs_height: usize,
    obs_width: usize,
    num_frames: usize,
    poses: Vec<AgentPose>,
    grid: GridManifest,
}

#[derive(Debug, Serialize, Deserialize)]
struct GridManifest {
    size: usize,
    /// 'W' wall, '.' empty, '0'-'9' marker color index; row-major string.
    cells: String,
}

fn grid_to_manifest(grid: &MazeGrid) -> GridManifest {
    let cells = grid
        .cells()
        .iter()
        .map(|c| match c {
            Cell::Wall => 'W',
            Cell::Empty => '.',
            Cell::Marker(i) => char::from_digit(*i as u32, 10).unwrap_or('?'),
        })
        .collect();
    GridManifest { size: grid.size, cells }
}

fn grid_from_manifest(m: &GridManifest) -> Result<MazeGrid> {
    let mut grid = MazeGrid::filled(m.size, Cell::Wall);
    if m.cells.chars().count() != m.size * m.size {
        return Err(Error::Invalid("grid manifest size mismatch".into()));
    }
    for (i, ch) in m.cells.chars().enumerate() {
        let cell = match ch {
            'W' => Cell::Wall,
            '.' => Cell::Empty,
            d => Cell::Marker(
                d.to_digit(10)
                    .ok_or_else(|| Error::Invalid(format!("bad grid cell char {d:?}")))?
                    as u8,
            ),
        };
        grid.set(i / m.size, i % m.size, cell);
    }
    Ok(grid)
}

pub fn write_episode(dir: &Path, episode: &Episode) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = Manifest {
        meta: episode.meta.clone(),
        obs_height: OBS_SIZE,
        obs_width: OBS_SIZE,
        num_frames: episode.observations.len(),
        poses: episode.poses.clone(),
        grid: grid_to_manifest(&episode.grid),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    let mut frames = Vec::with_capacity(episode.observations.len() * OBS_SIZE * OBS_SIZE * 3);
    for obs in &episode.observations {
        frames.extend_from_slice(&obs.pixels);
    }
    fs::write(dir.join("frames.rgb8"), frames)?;
    let codes: Vec<&str> = episode.actions.iter().map(|a| a.code()).collect();
    fs::write(dir.join("actions.json"), serde_json::to_vec(&codes)?)?;
    Ok(())
}

pub fn read_episode(dir: &Path) -> Result<Episode> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    let frames = fs::read(dir.join("frames.rgb8"))?;
    let frame_len = manifest.obs_height * manifest.obs_width * 3;
    if frames.len() != manifest.num_frames * frame_len {
        return Err(Error::Invalid(format!(
            "frames.rgb8 has {} bytes, expected {}",
            frames.len(),
            manifest.num_frames * frame_len
        )));
    }
    let observations = frames
        .chunks_exact(frame_len)
        .map(|c| Observation { pixels: c.to_vec() })
        .collect();
    let codes: Vec<String> = serde_json::from_slice(&fs::read(dir.join("actions.json"))?)?;
    let actions = codes
        .iter()
        .map(|c| {
            Action::from_code(c).ok_or_else(|| Error::Invalid(format!("bad action code {c:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Episode {
        observations,
        actions,
        poses: manifest.poses.clone(),
        grid: grid_from_manifest(&manifest.grid)?,
        meta: manifest.meta,
    })
}

pub fn write_dataset(root: &Path, episodes: &[Episode]) -> Result<()> {
    fs::create_dir_all(root)?;
    let mut names = Vec::new();
    for (i, ep) in episodes.iter().enumerate() {
        let name = format!("ep_{i:05}");
        write_episode(&root.join(&name), ep)?;
        names.push(name);
    }
    let index = DatasetIndex { episodes: names };
    fs::write(root.join("index.json"), serde_json::to_vec_pretty(&index)?)?;
    Ok(())
}

pub fn read_dataset(root: &Path) -> Result<Vec<Episode>> {
    let index: DatasetIndex = serde_json::from_slice(
        &fs::read(root.join("index.json")).map_err(|_| {
            Error::MissingArtifact(format!("dataset index at {}", root.display()))
        })?,
    )?;
    index.episodes.iter().map(|name| read_episode(&root.join(name))).collect()
}
