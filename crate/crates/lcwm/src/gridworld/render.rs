use serde::{Deserialize, Serialize};

use super::maze::{AgentPose, Cell, MazeGrid, MazeSpec};

/// Cells per observation window side.
pub const WINDOW: usize = 7;
/// Pixels per cell.
pub const CELL_PX: usize = 4;
/// Observation side in pixels: 7 cells * 4 px = 28, padded to 32 with wall color.
pub const OBS_SIZE: usize = 32;

const PAD: usize = (OBS_SIZE - WINDOW * CELL_PX) / 2;
const WALL_COLOR: [u8; 3] = [60, 60, 60];
const FLOOR_COLOR: [u8; 3] = [0, 0, 0];
const AGENT_COLOR: [u8; 3] = [255, 255, 255];

// 4x4 agent glyph (diamond), drawn over the center cell.
const AGENT_GLYPH: [[bool; 4]; 4] = [
    [false, true, true, false],
    [true, true, true, true],
    [true, true, true, true],
    [false, true, true, false],
];

/// One rendered agent view: OBS_SIZE x OBS_SIZE RGB, row-major u8.
/// Stored as bytes so bit-equality checks (the mirror invariant) are exact;
/// [`Observation::to_f32`] yields the [0,1] float image models consume.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub pixels: Vec<u8>,
}

impl Observation {
    pub fn to_f32(&self) -> Vec<f32> {
        self.pixels.iter().map(|&p| p as f32 / 255.0).collect()
    }

    pub fn from_f32(vals: &[f32]) -> Observation {
        let pixels = vals
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        Observation { pixels }
    }

    /// Writes the observation as a PNG image.
    pub fn save_png(&self, path: &std::path::Path) -> crate::error::Result<()> {
        let img = image::RgbImage::from_raw(OBS_SIZE as u32, OBS_SIZE as u32, self.pixels.clone())
            .ok_or_else(|| crate::error::Error::Shape("observation has wrong pixel count".into()))?;
        img.save(path)
            .map_err(|e| crate::error::Error::Io(std::io::Error::other(e)))?;
        Ok(())
    }

    /// Mean RGB (in [0,1]) over the pixel block of window cell (wr, wc).
    pub fn cell_mean_rgb(&self, wr: usize, wc: usize) -> [f64; 3] {
        let mut acc = [0f64; 3];
        for pr in 0..CELL_PX {
            for pc in 0..CELL_PX {
                let row = PAD + wr * CELL_PX + pr;
                let col = PAD + wc * CELL_PX + pc;
                let base = (row * OBS_SIZE + col) * 3;
                for ch in 0..3 {
                    acc[ch] += self.pixels[base + ch] as f64 / 255.0;
                }
            }
        }
        let n = (CELL_PX * CELL_PX) as f64;
        [acc[0] / n, acc[1] / n, acc[2] / n]
    }

    /// Index of the palette color closest (in RGB) to the mean of the given
    /// window cell. Used for marker-recall classification.
    pub fn nearest_palette_color(&self, wr: usize, wc: usize, palette: &[[u8; 3]]) -> usize {
        let mean = self.cell_mean_rgb(wr, wc);
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, c) in palette.iter().enumerate() {
            let d: f64 = (0..3)
                .map(|ch| {
                    let diff = mean[ch] - c[ch] as f64 / 255.0;
                    diff * diff
                })
                .sum();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

/// The 7x7 cell window centered on the agent; out-of-grid cells read as walls.
pub fn cell_window(grid: &MazeGrid, pose: &AgentPose) -> [[Cell; WINDOW]; WINDOW] {
    let mut out = [[Cell::Wall; WINDOW]; WINDOW];
    let half = (WINDOW / 2) as i64;
    for (wr, row) in out.iter_mut().enumerate() {
        for (wc, cell) in row.iter_mut().enumerate() {
            *cell = grid.at(
                pose.row as i64 + wr as i64 - half,
                pose.col as i64 + wc as i64 - half,
            );
        }
    }
    out
}

/// Rasterizes the agent's 7x7 cell window to a 32x32 RGB observation.
/// Deterministic in (grid, pose); the agent is drawn as a glyph on the
/// center cell.
pub fn render_observation(grid: &MazeGrid, pose: &AgentPose, spec: &MazeSpec) -> Observation {
    let window = cell_window(grid, pose);
    let mut pixels = Vec::with_capacity(OBS_SIZE * OBS_SIZE * 3);
    for _ in 0..OBS_SIZE * OBS_SIZE {
        pixels.extend_from_slice(&WALL_COLOR);
    }
    let mut put = |row: usize, col: usize, color: [u8; 3]| {
        let base = (row * OBS_SIZE + col) * 3;
        pixels[base..base + 3].copy_from_slice(&color);
    };
    for (wr, row) in window.iter().enumerate() {
        for (wc, cell) in row.iter().enumerate() {
            let color = match cell {
                Cell::Wall => WALL_COLOR,
                Cell::Empty => FLOOR_COLOR,
                Cell::Marker(i) => spec.palette[*i as usize],
            };
            for pr in 0..CELL_PX {
                for pc in 0..CELL_PX {
                    put(PAD + wr * CELL_PX + pr, PAD + wc * CELL_PX + pc, color);
                }
            }
        }
    }
    // Agent glyph on the center cell.
    let center = WINDOW / 2;
    for (pr, row) in AGENT_GLYPH.iter().enumerate() {
        for (pc, &on) in row.iter().enumerate() {
            if on {
                put(PAD + center * CELL_PX + pr, PAD + center * CELL_PX + pc, AGENT_COLOR);
            }
        }
    }
    Observation { pixels }
}
