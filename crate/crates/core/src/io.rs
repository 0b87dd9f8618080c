//! Plain-text file formats: event lists (CSV) and pixel grids.

use std::fmt::Display;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::geometry::{Grid, GridSpec, MapBounds, PhotonEvent};

pub const EVENT_HEADER: &str = "x_deg,y_deg,energy_gev";

pub(crate) fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Read an event CSV and validate every event against `bounds`.
pub fn read_event_list(path: impl AsRef<Path>, bounds: &MapBounds<f64>) -> Result<Vec<PhotonEvent<f64>>> {
    let path = path.as_ref();
    let reader = open(path)?;
    let mut events = Vec::new();
    let mut saw_header = false;
    for (n, line) in reader.lines().enumerate() {
        let lineno = n + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if !saw_header {
            if line != EVENT_HEADER {
                return Err(Error::parse(path, lineno, format!("expected header `{EVENT_HEADER}`")));
            }
            saw_header = true;
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::parse(path, lineno, format!("expected 3 fields, found {}", fields.len())));
        }
        let mut vals = [0.0f64; 3];
        for (v, f) in vals.iter_mut().zip(&fields) {
            *v = f.parse().map_err(|_| Error::parse(path, lineno, format!("bad number `{f}`")))?;
        }
        let ev = PhotonEvent::new(vals[0], vals[1], vals[2]);
        ev.check(bounds, events.len())?;
        events.push(ev);
    }
    if !saw_header {
        return Err(Error::parse(path, 1, format!("missing header `{EVENT_HEADER}`")));
    }
    Ok(events)
}

/// Write an event CSV. Floats use the shortest representation that round-trips.
pub fn write_event_list(path: impl AsRef<Path>, events: &[PhotonEvent<f64>]) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let res: std::io::Result<()> = (|| {
        writeln!(w, "{EVENT_HEADER}")?;
        for e in events {
            writeln!(w, "{},{},{}", e.x, e.y, e.energy)?;
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

/// Write a grid: `nx ny x_min x_max y_min y_max`, then `ny` rows of `nx` values.
pub fn write_grid<V: Display + Copy>(path: impl AsRef<Path>, grid: &Grid<V>) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    let s = &grid.spec;
    let res: std::io::Result<()> = (|| {
        writeln!(w, "{} {} {} {} {} {}", s.nx, s.ny, s.bounds.x_min, s.bounds.x_max, s.bounds.y_min, s.bounds.y_max)?;
        for row in grid.values.chunks(s.nx) {
            let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

/// Read a grid file. Energy bounds are not part of the format; pass the ones to attach.
pub fn read_grid<V: FromStr + Copy>(path: impl AsRef<Path>, e_min: f64, e_max: f64) -> Result<Grid<V>> {
    let path = path.as_ref();
    let reader = open(path)?;
    let mut lines = reader.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty grid file"))?;
    let header = header.map_err(|e| Error::io(path, e))?;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 6 {
        return Err(Error::parse(path, 1, "grid header must be `nx ny x_min x_max y_min y_max`"));
    }
    let nx: usize = h[0].parse().map_err(|_| Error::parse(path, 1, "bad nx"))?;
    let ny: usize = h[1].parse().map_err(|_| Error::parse(path, 1, "bad ny"))?;
    let mut b = [0.0f64; 4];
    for (k, v) in b.iter_mut().enumerate() {
        *v = h[2 + k].parse().map_err(|_| Error::parse(path, 1, "bad bound"))?;
    }
    let bounds = MapBounds::new(b[0], b[1], b[2], b[3], e_min, e_max)?;
    let px = (b[1] - b[0]) / nx as f64;
    let py = (b[3] - b[2]) / ny as f64;
    if nx == 0 || ny == 0 || ((px - py) / px).abs() > 1e-9 {
        return Err(Error::parse(path, 1, "grid must have square, non-empty pixels"));
    }
    let spec = GridSpec { bounds, pixel_size: px, nx, ny };
    let mut values = Vec::with_capacity(nx * ny);
    for (n, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<&str> = line.split_whitespace().collect();
        if row.len() != nx {
            return Err(Error::parse(path, n + 1, format!("expected {nx} values, found {}", row.len())));
        }
        for f in row {
            values.push(f.parse().map_err(|_| Error::parse(path, n + 1, format!("bad value `{f}`")))?);
        }
    }
    if values.len() != nx * ny {
        return Err(Error::parse(path, 1, format!("expected {ny} rows, found {}", values.len() / nx)));
    }
    Ok(Grid { spec, values })
}
