//! Solution archives: one `i,j,value` CSV per slice, a `grid.json` sidecar
//! and a `meta.json` describing the run.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};
use crate::grid::{GridField, SpaceTimeField, TimeMesh, TorusGrid};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSidecar {
    pub n_side: usize,
    pub h: f64,
}

#[derive(Serialize, Deserialize)]
struct Row {
    i: usize,
    j: usize,
    value: f64,
}

pub fn write_field_csv(path: &Path, field: &GridField) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let grid = field.grid();
    for (k, &value) in field.values().iter().enumerate() {
        let (i, j) = grid.coords(k);
        w.serialize(Row { i, j, value })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an `i,j,value` file; every node must appear exactly once.
pub fn read_field_csv(path: &Path, grid: TorusGrid) -> Result<GridField> {
    let mut r = csv::Reader::from_path(path)?;
    let mut values = vec![f64::NAN; grid.len()];
    let mut seen = vec![false; grid.len()];
    let n = grid.n_side();
    for row in r.deserialize() {
        let row: Row = row?;
        if row.i >= n || row.j >= n {
            return Err(MfgError::GridMismatch {
                expected: n,
                found: row.i.max(row.j) + 1,
            });
        }
        let k = row.i * n + row.j;
        if seen[k] {
            return Err(MfgError::Config {
                field: path.display().to_string(),
                message: format!("node ({}, {}) appears twice", row.i, row.j),
            });
        }
        seen[k] = true;
        values[k] = row.value;
    }
    let count = seen.iter().filter(|&&s| s).count();
    if count != grid.len() {
        let found = (count as f64).sqrt().round() as usize;
        return Err(MfgError::GridMismatch { expected: n, found });
    }
    GridField::from_values(grid, values)
}

pub fn slice_name(prefix: &str, n: usize) -> String {
    format!("{prefix}_slice_{n:04}.csv")
}

pub fn write_sidecar(dir: &Path, grid: TorusGrid) -> Result<()> {
    let side = GridSidecar {
        n_side: grid.n_side(),
        h: grid.h(),
    };
    fs::write(dir.join("grid.json"), serde_json::to_string_pretty(&side)?)?;
    Ok(())
}

pub fn read_sidecar(dir: &Path) -> Result<GridSidecar> {
    Ok(serde_json::from_str(&fs::read_to_string(dir.join("grid.json"))?)?)
}

/// Writes `u_slice_####.csv` and `m_slice_####.csv` for every time level.
pub fn write_trajectories(dir: &Path, u: &SpaceTimeField, m: &SpaceTimeField) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_sidecar(dir, u.grid())?;
    for (n, s) in u.slices().iter().enumerate() {
        write_field_csv(&dir.join(slice_name("u", n)), s)?;
    }
    for (n, s) in m.slices().iter().enumerate() {
        write_field_csv(&dir.join(slice_name("m", n)), s)?;
    }
    Ok(())
}

pub fn read_trajectory(dir: &Path, prefix: &str, mesh: TimeMesh) -> Result<SpaceTimeField> {
    let side = read_sidecar(dir)?;
    let grid = TorusGrid::new(side.n_side)?;
    let slices = (0..=mesh.n_steps())
        .map(|n| read_field_csv(&dir.join(slice_name(prefix, n)), grid))
        .collect::<Result<Vec<_>>>()?;
    SpaceTimeField::from_slices(mesh, slices)
}

pub fn write_stationary(dir: &Path, u: &GridField, m: &GridField) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_sidecar(dir, u.grid())?;
    write_field_csv(&dir.join("u.csv"), u)?;
    write_field_csv(&dir.join("m.csv"), m)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let grid = TorusGrid::new(5).unwrap();
        let f = GridField::from_fn(grid, |x, y| (x * 7.1).sin() / (1.0 + y) * 1e-7);
        let path = dir.path().join("f.csv");
        write_field_csv(&path, &f).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("i,j,value\n0,0,"));
        assert_eq!(read_field_csv(&path, grid).unwrap(), f);
    }

    #[test]
    fn wrong_size_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        write_field_csv(&path, &GridField::zeros(TorusGrid::new(4).unwrap())).unwrap();
        assert!(matches!(
            read_field_csv(&path, TorusGrid::new(8).unwrap()),
            Err(MfgError::GridMismatch { expected: 8, found: 4 })
        ));
        assert!(read_field_csv(&path, TorusGrid::new(2).unwrap()).is_err());
    }
}
