//! Field and artifact formats.
//!
//! Cell fields are CSV with header `x_index,y_index,value[,value2]`, one row
//! per masked cell in row-major order. Boundary traces add a `side` column.
//! Every CSV comes with a JSON sidecar describing the lattice.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{BoundaryTrace, Grid, ScalarField, VectorField};
use crate::grid::{rle_decode, rle_encode, Dir, GridSpec};
use crate::levelset::LevelSet;
use crate::scalar::Scalar;
use crate::solver::TraceRow;

pub const FORMAT_VERSION: u32 = 1;

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// Shortest round-trip decimal representation, so output is stable across runs.
fn num<T: Scalar>(v: T) -> String {
    format!("{}", v.to_f64_lossy())
}

pub fn side_name(d: Dir) -> &'static str {
    match d {
        Dir::East => "east",
        Dir::West => "west",
        Dir::North => "north",
        Dir::South => "south",
    }
}

fn parse_side(s: &str) -> Option<Dir> {
    Some(match s {
        "east" => Dir::East,
        "west" => Dir::West,
        "north" => Dir::North,
        "south" => Dir::South,
        _ => return None,
    })
}

pub fn write_scalar_csv<T: Scalar, W: Write>(out: W, u: &ScalarField<T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x_index", "y_index", "value"]).map_err(csv_err)?;
    for (c, v) in u.values().iter().enumerate() {
        let (i, j) = u.grid().coords(c);
        w.write_record([i.to_string(), j.to_string(), num(*v)]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_vector_csv<T: Scalar, W: Write>(out: W, b: &VectorField<T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x_index", "y_index", "value", "value2"]).map_err(csv_err)?;
    for (c, v) in b.values().iter().enumerate() {
        let (i, j) = b.grid().coords(c);
        w.write_record([i.to_string(), j.to_string(), num(v[0]), num(v[1])]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_boundary_csv<T: Scalar, W: Write>(out: W, f: &BoundaryTrace<T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x_index", "y_index", "side", "value"]).map_err(csv_err)?;
    for (e, v) in f.values().iter().enumerate() {
        let edge = f.grid().boundary_edges()[e];
        let (i, j) = f.grid().coords(edge.cell);
        w.write_record([i.to_string(), j.to_string(), side_name(edge.dir).to_string(), num(*v)])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Level set as a 0/1 cell field.
pub fn write_level_set_csv<T: Scalar, W: Write>(out: W, e: &LevelSet<T>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x_index", "y_index", "value"]).map_err(csv_err)?;
    for (c, m) in e.members().iter().enumerate() {
        let (i, j) = e.grid().coords(c);
        w.write_record([i.to_string(), j.to_string(), (*m as u8).to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_csv<T: Scalar, W: Write>(out: W, rows: &[TraceRow<T>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iter", "primal", "dual", "gap", "r_div", "r_trace"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([r.iter.to_string(), num(r.primal), num(r.dual), num(r.gap), num(r.r_div), num(r.r_trace)])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn records<R: Read>(input: R, expect: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().collect::<Vec<_>>() != expect {
        return Err(Error::Format(format!("expected CSV header {:?}, found {:?}", expect.join(","), header.iter().collect::<Vec<_>>().join(","))));
    }
    r.records().collect::<std::result::Result<_, _>>().map_err(csv_err)
}

fn parse_index(s: &str, what: &str, line: usize) -> Result<i64> {
    s.trim().parse().map_err(|_| Error::Format(format!("row {line}: bad {what} '{s}'")))
}

fn parse_value<T: Scalar>(s: &str, line: usize) -> Result<T> {
    let v: f64 = s.trim().parse().map_err(|_| Error::Format(format!("row {line}: bad value '{s}'")))?;
    if !v.is_finite() {
        return Err(Error::Format(format!("row {line}: value is not finite")));
    }
    Ok(T::lit(v))
}

/// Reads `ncols` values per masked cell; every masked cell must appear exactly once.
fn read_cells<T: Scalar, R: Read>(input: R, grid: &GridSpec<T>, ncols: usize) -> Result<Vec<Vec<T>>> {
    let header: &[&str] =
        if ncols == 1 { &["x_index", "y_index", "value"] } else { &["x_index", "y_index", "value", "value2"] };
    let mut out: Vec<Option<Vec<T>>> = vec![None; grid.len()];
    for (k, rec) in records(input, header)?.iter().enumerate() {
        let line = k + 2;
        let i = parse_index(&rec[0], "x_index", line)?;
        let j = parse_index(&rec[1], "y_index", line)?;
        let c = grid
            .cell_at(i, j)
            .ok_or_else(|| Error::Format(format!("row {line}: ({i}, {j}) is not a masked cell")))?;
        if out[c].is_some() {
            return Err(Error::Format(format!("row {line}: cell ({i}, {j}) listed twice")));
        }
        out[c] = Some((0..ncols).map(|n| parse_value(&rec[2 + n], line)).collect::<Result<_>>()?);
    }
    out.into_iter()
        .enumerate()
        .map(|(c, v)| {
            v.ok_or_else(|| {
                let (i, j) = grid.coords(c);
                Error::Format(format!("cell ({i}, {j}) missing from CSV"))
            })
        })
        .collect()
}

pub fn read_scalar_csv<T: Scalar, R: Read>(input: R, grid: &Grid<T>) -> Result<ScalarField<T>> {
    let v = read_cells(input, grid, 1)?;
    ScalarField::new(grid.clone(), v.into_iter().map(|r| r[0]).collect())
}

pub fn read_vector_csv<T: Scalar, R: Read>(input: R, grid: &Grid<T>) -> Result<VectorField<T>> {
    let v = read_cells(input, grid, 2)?;
    VectorField::new(grid.clone(), v.into_iter().map(|r| [r[0], r[1]]).collect())
}

pub fn read_boundary_csv<T: Scalar, R: Read>(input: R, grid: &Grid<T>) -> Result<BoundaryTrace<T>> {
    let edges = grid.boundary_edges();
    let mut out: Vec<Option<T>> = vec![None; edges.len()];
    for (k, rec) in records(input, &["x_index", "y_index", "side", "value"])?.iter().enumerate() {
        let line = k + 2;
        let i = parse_index(&rec[0], "x_index", line)?;
        let j = parse_index(&rec[1], "y_index", line)?;
        let side = parse_side(rec[2].trim())
            .ok_or_else(|| Error::Format(format!("row {line}: side must be east, west, north or south")))?;
        let c = grid
            .cell_at(i, j)
            .ok_or_else(|| Error::Format(format!("row {line}: ({i}, {j}) is not a masked cell")))?;
        let e = grid
            .edges_of(c)
            .find(|e| edges[*e].dir == side)
            .ok_or_else(|| Error::Format(format!("row {line}: ({i}, {j}) has no boundary face on its {} side", rec[2].trim())))?;
        if out[e].is_some() {
            return Err(Error::Format(format!("row {line}: edge listed twice")));
        }
        out[e] = Some(parse_value(&rec[3], line)?);
    }
    let values = out
        .into_iter()
        .enumerate()
        .map(|(e, v)| {
            v.ok_or_else(|| {
                let (i, j) = grid.coords(edges[e].cell);
                Error::Format(format!("boundary face ({i}, {j}, {}) missing from CSV", side_name(edges[e].dir)))
            })
        })
        .collect::<Result<Vec<T>>>()?;
    BoundaryTrace::new(grid.clone(), values)
}

/// JSON description of the lattice a CSV artifact lives on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format_version: u32,
    pub nx: usize,
    pub ny: usize,
    pub h: f64,
    pub origin: [f64; 2],
    /// Run lengths over the lattice, row-major, starting with unmasked cells.
    pub mask_rle: Vec<usize>,
    /// What the values mean, e.g. `u`, `N`, `lift`.
    pub role: String,
    pub columns: Vec<String>,
}

impl Sidecar {
    pub fn new<T: Scalar>(grid: &GridSpec<T>, role: &str, columns: &[&str]) -> Self {
        Sidecar {
            format_version: FORMAT_VERSION,
            nx: grid.nx(),
            ny: grid.ny(),
            h: grid.h().to_f64_lossy(),
            origin: grid.origin().map(|o| o.to_f64_lossy()),
            mask_rle: rle_encode(grid.mask()),
            role: role.to_string(),
            columns: columns.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Rebuilds the grid, checking the version and the mask length.
    pub fn grid<T: Scalar>(&self) -> Result<GridSpec<T>> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format_version {}", self.format_version)));
        }
        let mask = rle_decode(&self.mask_rle, self.nx * self.ny)?;
        GridSpec::with_origin(self.nx, self.ny, T::lit(self.h), self.origin.map(T::lit), mask)
    }
}

/// Level set membership as a lattice run-length encoding.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelSetJson {
    pub format_version: u32,
    pub nx: usize,
    pub ny: usize,
    pub lambda: Option<f64>,
    pub members_rle: Vec<usize>,
    pub count: usize,
}

impl LevelSetJson {
    pub fn new<T: Scalar>(e: &LevelSet<T>) -> Self {
        LevelSetJson {
            format_version: FORMAT_VERSION,
            nx: e.grid().nx(),
            ny: e.grid().ny(),
            lambda: e.lambda().map(|l| l.to_f64_lossy()),
            members_rle: rle_encode(&lattice_bits(e.grid(), e.members())),
            count: e.count(),
        }
    }

    pub fn level_set<T: Scalar>(&self, grid: &Grid<T>) -> Result<LevelSet<T>> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported format_version {}", self.format_version)));
        }
        if (self.nx, self.ny) != (grid.nx(), grid.ny()) {
            return Err(Error::Format("level set lattice does not match the grid".into()));
        }
        let bits = rle_decode(&self.members_rle, self.nx * self.ny)?;
        let mut member = vec![false; grid.len()];
        for (k, b) in bits.iter().enumerate() {
            if *b {
                let c = grid
                    .cell_at((k % self.nx) as i64, (k / self.nx) as i64)
                    .ok_or_else(|| Error::Format("level set contains an unmasked cell".into()))?;
                member[c] = true;
            }
        }
        LevelSet::new(grid.clone(), member)
    }
}

/// Spreads a per-cell flag onto the full lattice (unmasked cells are `false`).
pub fn lattice_bits<T: Scalar>(grid: &GridSpec<T>, cells: &[bool]) -> Vec<bool> {
    let mut out = vec![false; grid.nx() * grid.ny()];
    for (c, b) in cells.iter().enumerate() {
        let (i, j) = grid.coords(c);
        out[j * grid.nx() + i] = *b;
    }
    out
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;

    fn grid() -> Grid<f64> {
        let mut mask = vec![true; 20];
        mask[0] = false;
        Arc::new(GridSpec::new(5, 4, 0.25, mask).unwrap())
    }

    #[test]
    fn scalar_round_trip_is_exact() {
        let g = grid();
        let u = ScalarField::from_fn(&g, |p| (p[0] * 7.3).sin() / 3.0 + p[1]);
        let mut buf = Vec::new();
        write_scalar_csv(&mut buf, &u).unwrap();
        assert!(buf.starts_with(b"x_index,y_index,value\n1,0,"));
        let back = read_scalar_csv(buf.as_slice(), &g).unwrap();
        assert_eq!(back.values(), u.values());
    }

    #[test]
    fn vector_and_boundary_round_trip() {
        let g = grid();
        let b = VectorField::from_fn(&g, |p| [p[0] / 3.0, -p[1]]);
        let mut buf = Vec::new();
        write_vector_csv(&mut buf, &b).unwrap();
        assert_eq!(read_vector_csv(buf.as_slice(), &g).unwrap().values(), b.values());

        let f = BoundaryTrace::from_fn(&g, |p| p[0] - 2.0 * p[1]);
        let mut buf = Vec::new();
        write_boundary_csv(&mut buf, &f).unwrap();
        assert_eq!(read_boundary_csv(buf.as_slice(), &g).unwrap().values(), f.values());
    }

    #[test]
    fn missing_and_duplicate_rows_are_rejected() {
        let g = grid();
        let text = "x_index,y_index,value\n1,0,1.0\n";
        assert!(read_scalar_csv(text.as_bytes(), &g).is_err());
        let text = "x_index,y_index,value\n0,0,1.0\n";
        assert!(matches!(read_scalar_csv(text.as_bytes(), &g), Err(Error::Format(_))));
        let text = "x,y,value\n1,0,1.0\n";
        assert!(read_scalar_csv(text.as_bytes(), &g).is_err());
    }

    #[test]
    fn sidecar_rebuilds_grid() {
        let g = grid();
        let s = Sidecar::new(&g, "u", &["value"]);
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("\"format_version\":1"));
        let back: Sidecar = serde_json::from_str(&json).unwrap();
        let g2: GridSpec<f64> = back.grid().unwrap();
        assert_eq!(g2.mask(), g.mask());
        let mut bad = back.clone();
        bad.mask_rle.push(3);
        assert!(bad.grid::<f64>().is_err());
    }

    #[test]
    fn level_set_json_round_trip() {
        let g = grid();
        let member: Vec<bool> = (0..g.len()).map(|c| c % 3 == 0).collect();
        let e = LevelSet::new(g.clone(), member).unwrap();
        let j = LevelSetJson::new(&e);
        assert_eq!(j.level_set(&g).unwrap().members(), e.members());
    }
}
