//! File formats: CGW1 snapshots, trajectory directories, CSV tables.
//!
//! A CGW1 file is little-endian: the magic `CGW1`, `nx` and `ny` as `u32`,
//! `lx` and `ly` as `f64`, then `nx * ny` cell values as `f64` in grid
//! index order. Every file is written to a temporary sibling first and then
//! renamed into place.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use caginalp_core::state::{StateTrajectory, StepStats, TimeGrid};
use caginalp_core::{Field, GridSpec};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 4] = b"CGW1";
const HEADER_LEN: usize = 4 + 4 + 4 + 8 + 8;

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn encode_cgw(grid: &GridSpec, field: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * field.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(grid.nx as u32).to_le_bytes());
    out.extend_from_slice(&(grid.ny as u32).to_le_bytes());
    out.extend_from_slice(&grid.lx.to_le_bytes());
    out.extend_from_slice(&grid.ly.to_le_bytes());
    for x in field {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_cgw(path: &Path, bytes: &[u8]) -> Result<(GridSpec, Field)> {
    if bytes.len() < HEADER_LEN {
        return Err(CliError::format(path, "truncated header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(CliError::format(path, "bad magic, expected CGW1"));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    let (nx, ny) = (u32_at(4), u32_at(8));
    let (lx, ly) = (f64_at(12), f64_at(20));
    let grid = GridSpec::new(lx, ly, nx, ny).map_err(|e| CliError::format(path, e.to_string()))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() != 8 * grid.cells() {
        return Err(CliError::format(
            path,
            format!("expected {} values for a {nx}x{ny} grid, found {} bytes", grid.cells(), body.len()),
        ));
    }
    let values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((grid, Field::from_vec(values)))
}

pub fn write_cgw(path: &Path, grid: &GridSpec, field: &[f64]) -> Result<()> {
    write_atomic(path, &encode_cgw(grid, field))
}

pub fn read_cgw(path: &Path) -> Result<(GridSpec, Field)> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_cgw(path, &bytes)
}

/// Reads a snapshot and checks that it lives on `grid`.
pub fn read_cgw_on(path: &Path, grid: &GridSpec) -> Result<Field> {
    let (g, f) = read_cgw(path)?;
    if g != *grid {
        return Err(CliError::format(
            path,
            format!("snapshot grid {}x{} ({} x {}) does not match {}x{} ({} x {})", g.nx, g.ny, g.lx, g.ly, grid.nx, grid.ny, grid.lx, grid.ly),
        ));
    }
    Ok(f)
}

pub fn node_file(dir: &Path, prefix: &str, node: usize) -> PathBuf {
    dir.join(format!("{prefix}_{node:05}.cgw"))
}

/// Writes `fields[n]` as `<prefix>_<n>.cgw` for every listed node.
pub fn write_series(dir: &Path, prefix: &str, grid: &GridSpec, fields: &[Field], nodes: &[usize]) -> Result<()> {
    for &n in nodes {
        write_cgw(&node_file(dir, prefix, n), grid, &fields[n])?;
    }
    Ok(())
}

pub fn read_series(dir: &Path, prefix: &str, grid: &GridSpec, nodes: impl Iterator<Item = usize>) -> Result<Vec<Field>> {
    nodes.map(|n| read_cgw_on(&node_file(dir, prefix, n), grid)).collect()
}

/// Nodes `0, s, 2s, ...` up to `nt`.
pub fn stored_nodes(nt: usize, stride: usize) -> Vec<usize> {
    (0..=nt).step_by(stride.max(1)).collect()
}

/// Snapshots of a trajectory read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredTrajectory {
    pub grid: GridSpec,
    /// Number of nodes of the original run (`nt + 1`).
    pub node_count: usize,
    pub stride: usize,
    pub tau: f64,
    /// Node indices present in `phi`, `w` and `v`.
    pub nodes: Vec<usize>,
    pub phi: Vec<Field>,
    pub w: Vec<Field>,
    pub v: Vec<Field>,
}

impl StoredTrajectory {
    /// The full trajectory, available when every node was stored.
    /// Solver statistics are not persisted and come back zeroed.
    pub fn into_full(self) -> Option<StateTrajectory> {
        if self.stride != 1 {
            return None;
        }
        let nt = self.node_count - 1;
        let time = TimeGrid::new(self.tau * nt as f64, nt).ok()?;
        Some(StateTrajectory {
            grid: self.grid,
            time,
            phi: self.phi,
            w: self.w,
            v: self.v,
            steps: vec![StepStats::default(); nt],
        })
    }
}

pub fn persist_trajectory(traj: &StateTrajectory, dir: &Path, stride: usize) -> Result<()> {
    if stride == 0 {
        return Err(CliError::Validation("output.stride must be >= 1".into()));
    }
    let nodes = stored_nodes(traj.time.nt, stride);
    for (prefix, series) in [("phi", &traj.phi), ("w", &traj.w), ("v", &traj.v)] {
        write_series(dir, prefix, &traj.grid, series, &nodes)?;
    }
    let index = format!("nodes {}\nstride {}\ntau {}\n", traj.nodes(), stride, traj.time.tau());
    write_atomic(&dir.join("index.txt"), index.as_bytes())
}

pub fn load_trajectory(dir: &Path) -> Result<StoredTrajectory> {
    let index_path = dir.join("index.txt");
    let text = fs::read_to_string(&index_path).map_err(|e| CliError::io(&index_path, e))?;
    let mut node_count = None;
    let mut stride = None;
    let mut tau = None;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let bad = || CliError::format(&index_path, format!("bad line `{line}`"));
        let (key, value) = line.split_once(' ').ok_or_else(bad)?;
        match key {
            "nodes" => node_count = Some(value.trim().parse::<usize>().map_err(|_| bad())?),
            "stride" => stride = Some(value.trim().parse::<usize>().map_err(|_| bad())?),
            "tau" => tau = Some(value.trim().parse::<f64>().map_err(|_| bad())?),
            _ => return Err(bad()),
        }
    }
    let (Some(node_count), Some(stride), Some(tau)) = (node_count, stride, tau) else {
        return Err(CliError::format(&index_path, "missing nodes, stride or tau"));
    };
    if node_count == 0 || stride == 0 || !(tau > 0.0) {
        return Err(CliError::format(&index_path, "nodes, stride and tau must be positive"));
    }
    let nodes = stored_nodes(node_count - 1, stride);
    let (grid, first) = read_cgw(&node_file(dir, "phi", 0))?;
    let mut phi = vec![first];
    phi.extend(read_series(dir, "phi", &grid, nodes[1..].iter().copied())?);
    let w = read_series(dir, "w", &grid, nodes.iter().copied())?;
    let v = read_series(dir, "v", &grid, nodes.iter().copied())?;
    Ok(StoredTrajectory { grid, node_count, stride, tau, nodes, phi, w, v })
}

/// Comma-separated table with a header row; numbers use the shortest
/// representation that parses back to the same `f64`.
#[derive(Debug, Clone)]
pub struct Csv {
    text: String,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Csv { text: header.join(",") + "\n" }
    }

    pub fn row(&mut self, cells: &[Cell]) {
        let mut first = true;
        for c in cells {
            if !first {
                self.text.push(',');
            }
            first = false;
            match c {
                Cell::F(x) => write!(self.text, "{x:?}").unwrap(),
                Cell::I(x) => write!(self.text, "{x}").unwrap(),
                Cell::S(s) => self.text.push_str(s),
                Cell::Empty => {}
            }
        }
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.text.as_bytes())
    }
}

#[derive(Debug, Clone)]
pub enum Cell {
    F(f64),
    I(u64),
    S(String),
    Empty,
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::F(x)
    }
}

impl From<usize> for Cell {
    fn from(x: usize) -> Self {
        Cell::I(x as u64)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::S(s.to_string())
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::F)
    }
}
