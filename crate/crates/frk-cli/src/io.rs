//! File formats: point-list and raster grids, diagnostics, and result
//! tables.
//!
//! Point grids are CSV with an `x,y,value` header; an empty or `NaN` value
//! field marks a missing observation. Rasters are CSV with the header line
//! `ncols,nrows,x0,y0,dx,dy`, a line of those six values, then `nrows`
//! row-major data lines of `ncols` fields each (empty or `NaN` = missing).
//! All result tables are plain CSV; scan and fit traces are additionally
//! emitted as whitespace-separated `.dat` files for gnuplot.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use frk_core::{BinSummary, FitTraceRow, Grid, Location, Predictions, ScanPoint};

use crate::crossval::CvReport;
use crate::HarnessError;

fn parse_value(field: &str) -> Result<Option<f64>, HarnessError> {
    let trimmed = field.trim();
    if trimmed.is_empty() || trimmed.eq_ignore_ascii_case("nan") {
        return Ok(None);
    }
    let v: f64 = trimmed
        .parse()
        .map_err(|_| HarnessError::Format(format!("unparseable value field {trimmed:?}")))?;
    if v.is_nan() {
        Ok(None)
    } else {
        Ok(Some(v))
    }
}

fn parse_coord(field: &str, what: &str) -> Result<f64, HarnessError> {
    field
        .trim()
        .parse()
        .map_err(|_| HarnessError::Format(format!("unparseable {what} field {field:?}")))
}

/// Read a point-list grid from `x,y,value` CSV.
pub fn read_grid_csv(path: &Path) -> Result<Grid, HarnessError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    let expect = ["x", "y", "value"];
    for (i, name) in expect.iter().enumerate() {
        if headers.get(i).map(str::trim) != Some(*name) {
            return Err(HarnessError::Format(format!(
                "grid CSV must start with header x,y,value; found {headers:?}"
            )));
        }
    }
    let mut locations = Vec::new();
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record?;
        if record.len() < 3 {
            return Err(HarnessError::Format(format!(
                "grid CSV row has {} fields, expected 3",
                record.len()
            )));
        }
        locations.push(Location::new(
            parse_coord(&record[0], "x")?,
            parse_coord(&record[1], "y")?,
        ));
        values.push(parse_value(&record[2])?);
    }
    Grid::new(locations, values).map_err(HarnessError::Core)
}

/// Write a point-list grid as `x,y,value` CSV (missing values as empty
/// fields).
pub fn write_grid_csv(path: &Path, grid: &Grid) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y", "value"])?;
    for (i, loc) in grid.locations().iter().enumerate() {
        let value = grid
            .value(i)
            .map(|v| format!("{v}"))
            .unwrap_or_default();
        w.write_record([format!("{}", loc.x), format!("{}", loc.y), value])?;
    }
    w.flush()?;
    Ok(())
}

/// Geometry of a rectangular raster. Cell `(col i, row j)` sits at
/// `(x0 + i dx, y0 + j dy)`; values are stored row-major.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RasterMeta {
    pub ncols: usize,
    pub nrows: usize,
    pub x0: f64,
    pub y0: f64,
    pub dx: f64,
    pub dy: f64,
}

/// Read a raster grid. Returns the grid (row-major locations) and its
/// geometry.
pub fn read_raster_csv(path: &Path) -> Result<(Grid, RasterMeta), HarnessError> {
    let file = BufReader::new(File::open(path)?);
    let mut lines = file.lines();
    let header = lines
        .next()
        .ok_or_else(|| HarnessError::Format("empty raster file".into()))??;
    if header.trim() != "ncols,nrows,x0,y0,dx,dy" {
        return Err(HarnessError::Format(format!(
            "raster header must be ncols,nrows,x0,y0,dx,dy; found {header:?}"
        )));
    }
    let meta_line = lines
        .next()
        .ok_or_else(|| HarnessError::Format("raster file missing geometry line".into()))??;
    let fields: Vec<&str> = meta_line.split(',').collect();
    if fields.len() != 6 {
        return Err(HarnessError::Format(format!(
            "raster geometry line needs 6 fields, found {}",
            fields.len()
        )));
    }
    let meta = RasterMeta {
        ncols: fields[0].trim().parse().map_err(|_| {
            HarnessError::Format(format!("unparseable ncols {:?}", fields[0]))
        })?,
        nrows: fields[1].trim().parse().map_err(|_| {
            HarnessError::Format(format!("unparseable nrows {:?}", fields[1]))
        })?,
        x0: parse_coord(fields[2], "x0")?,
        y0: parse_coord(fields[3], "y0")?,
        dx: parse_coord(fields[4], "dx")?,
        dy: parse_coord(fields[5], "dy")?,
    };
    let mut values = Vec::with_capacity(meta.ncols * meta.nrows);
    for (j, line) in lines.enumerate() {
        let line = line?;
        if j >= meta.nrows {
            if line.trim().is_empty() {
                continue;
            }
            return Err(HarnessError::Format(format!(
                "raster has more than {} data rows",
                meta.nrows
            )));
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != meta.ncols {
            return Err(HarnessError::Format(format!(
                "raster row {j} has {} fields, expected {}",
                fields.len(),
                meta.ncols
            )));
        }
        for field in fields {
            values.push(parse_value(field)?);
        }
    }
    if values.len() != meta.ncols * meta.nrows {
        return Err(HarnessError::Format(format!(
            "raster has {} values, expected {}",
            values.len(),
            meta.ncols * meta.nrows
        )));
    }
    let mut locations = Vec::with_capacity(values.len());
    for j in 0..meta.nrows {
        for i in 0..meta.ncols {
            locations.push(Location::new(
                meta.x0 + i as f64 * meta.dx,
                meta.y0 + j as f64 * meta.dy,
            ));
        }
    }
    let grid = Grid::new(locations, values).map_err(HarnessError::Core)?;
    Ok((grid, meta))
}

/// Write a raster grid; `values[j * ncols + i]` is cell `(i, j)`.
pub fn write_raster_csv(
    path: &Path,
    meta: &RasterMeta,
    values: &[Option<f64>],
) -> Result<(), HarnessError> {
    if values.len() != meta.ncols * meta.nrows {
        return Err(HarnessError::Format(format!(
            "raster write got {} values, expected {}",
            values.len(),
            meta.ncols * meta.nrows
        )));
    }
    let mut out = File::create(path)?;
    writeln!(out, "ncols,nrows,x0,y0,dx,dy")?;
    writeln!(
        out,
        "{},{},{},{},{},{}",
        meta.ncols, meta.nrows, meta.x0, meta.y0, meta.dx, meta.dy
    )?;
    for j in 0..meta.nrows {
        let row: Vec<String> = (0..meta.ncols)
            .map(|i| {
                values[j * meta.ncols + i]
                    .map(|v| format!("{v}"))
                    .unwrap_or_default()
            })
            .collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Read a per-location measurement-variance file (`x,y,v` CSV) and align
/// it with a grid by exact coordinate match.
pub fn read_variance_csv(path: &Path, grid: &Grid) -> Result<Vec<f64>, HarnessError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    for (i, name) in ["x", "y", "v"].iter().enumerate() {
        if headers.get(i).map(str::trim) != Some(*name) {
            return Err(HarnessError::Format(format!(
                "variance CSV must start with header x,y,v; found {headers:?}"
            )));
        }
    }
    use std::collections::HashMap;
    let mut lookup: HashMap<(u64, u64), f64> = HashMap::new();
    for record in reader.records() {
        let record = record?;
        let x = parse_coord(&record[0], "x")?;
        let y = parse_coord(&record[1], "y")?;
        let v = parse_coord(&record[2], "v")?;
        lookup.insert((x.to_bits(), y.to_bits()), v);
    }
    grid.locations()
        .iter()
        .enumerate()
        .map(|(i, loc)| {
            lookup
                .get(&(loc.x.to_bits(), loc.y.to_bits()))
                .copied()
                .ok_or_else(|| {
                    HarnessError::Format(format!(
                        "variance file has no entry for grid row {i} at ({}, {})",
                        loc.x, loc.y
                    ))
                })
        })
        .collect()
}

/// Bin diagnostics: center, member count, binned mean, binned mean square.
pub fn write_bin_diagnostics(path: &Path, summary: &BinSummary) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["center_x", "center_y", "count", "dbar", "vd"])?;
    for b in 0..summary.n_bins() {
        w.write_record([
            format!("{}", summary.centers[b].x),
            format!("{}", summary.centers[b].y),
            format!("{}", summary.counts[b]),
            format!("{}", summary.mean_residuals[b]),
            format!("{}", summary.binned_cov[(b, b)]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Fit trace as CSV (`g,sigma2,lambda_min,neg_eigs,sse`).
pub fn write_trace_csv(path: &Path, trace: &[FitTraceRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["g", "sigma2", "lambda_min", "neg_eigs", "sse"])?;
    for row in trace {
        w.write_record([
            format!("{}", row.iteration),
            format!("{}", row.sigma2),
            format!("{}", row.min_eigenvalue),
            format!("{}", row.negative_eigenvalues),
            format!("{}", row.sse),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Read back a fit-trace CSV.
pub fn read_trace_csv(path: &Path) -> Result<Vec<FitTraceRow>, HarnessError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record?;
        out.push(FitTraceRow {
            iteration: record[0]
                .trim()
                .parse()
                .map_err(|_| HarnessError::Format("bad iteration field".into()))?,
            sigma2: parse_coord(&record[1], "sigma2")?,
            min_eigenvalue: parse_coord(&record[2], "lambda_min")?,
            negative_eigenvalues: record[3]
                .trim()
                .parse()
                .map_err(|_| HarnessError::Format("bad neg_eigs field".into()))?,
            sse: parse_coord(&record[4], "sse")?,
        });
    }
    Ok(out)
}

/// Fit trace as a gnuplot-friendly `.dat` file.
pub fn write_trace_dat(path: &Path, trace: &[FitTraceRow]) -> Result<(), HarnessError> {
    let mut out = File::create(path)?;
    writeln!(out, "# g sigma2 lambda_min neg_eigs sse")?;
    for row in trace {
        writeln!(
            out,
            "{} {} {} {} {}",
            row.iteration, row.sigma2, row.min_eigenvalue, row.negative_eigenvalues, row.sse
        )?;
    }
    Ok(())
}

/// Scan table as CSV (`sigma2,lambda_min,sse`).
pub fn write_scan_csv(path: &Path, scan: &[ScanPoint]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sigma2", "lambda_min", "sse"])?;
    for p in scan {
        w.write_record([
            format!("{}", p.sigma2),
            format!("{}", p.min_eigenvalue),
            format!("{}", p.sse),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Scan table as a gnuplot-friendly `.dat` file.
pub fn write_scan_dat(path: &Path, scan: &[ScanPoint]) -> Result<(), HarnessError> {
    let mut out = File::create(path)?;
    writeln!(out, "# sigma2 lambda_min sse")?;
    for p in scan {
        writeln!(out, "{} {} {}", p.sigma2, p.min_eigenvalue, p.sse)?;
    }
    Ok(())
}

/// Predictions as CSV (`x,y,Hhat,se`).
pub fn write_predictions_csv(
    path: &Path,
    points: &[Location],
    predictions: &Predictions,
) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y", "Hhat", "se"])?;
    let se = predictions.standard_errors();
    for (i, loc) in points.iter().enumerate() {
        w.write_record([
            format!("{}", loc.x),
            format!("{}", loc.y),
            format!("{}", predictions.hhat[i]),
            format!("{}", se[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Cross-validation reports as CSV.
pub fn write_cv_csv(path: &Path, reports: &[CvReport]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "method",
        "fraction",
        "reps",
        "failed",
        "mean_mspe",
        "std_mspe",
        "wall_seconds",
    ])?;
    for r in reports {
        w.write_record([
            r.method.clone(),
            format!("{}", r.fraction),
            format!("{}", r.reps),
            format!("{}", r.failed),
            format!("{}", r.mean_mspe),
            format!("{}", r.std_mspe),
            format!("{}", r.wall.as_secs_f64()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use tempfile::tempdir;

    #[test]
    fn grid_csv_round_trip_with_missing() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("grid.csv");
        let locs = Grid::lattice_locations(3, 2, 1.0, 2.0);
        let values = vec![Some(1.5), None, Some(-0.25), Some(0.0), None, Some(7.0)];
        let grid = Grid::new(locs, values).unwrap();
        write_grid_csv(&path, &grid).unwrap();
        let back = read_grid_csv(&path).unwrap();
        assert_eq!(back.len(), grid.len());
        for i in 0..grid.len() {
            assert_eq!(back.location(i), grid.location(i));
            assert_eq!(back.value(i), grid.value(i));
        }
    }

    #[test]
    fn grid_csv_accepts_nan_as_missing() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("grid.csv");
        std::fs::write(&path, "x,y,value\n0,0,1.0\n1,0,NaN\n2,0,\n").unwrap();
        let grid = read_grid_csv(&path).unwrap();
        assert_eq!(grid.value(0), Some(1.0));
        assert_eq!(grid.value(1), None);
        assert_eq!(grid.value(2), None);
    }

    #[test]
    fn grid_csv_rejects_wrong_header() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("grid.csv");
        std::fs::write(&path, "lon,lat,chl\n0,0,1.0\n").unwrap();
        assert!(read_grid_csv(&path).is_err());
    }

    #[test]
    fn raster_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("field.raster.csv");
        let meta = RasterMeta {
            ncols: 3,
            nrows: 2,
            x0: 10.0,
            y0: -5.0,
            dx: 0.5,
            dy: 0.25,
        };
        let values = vec![Some(1.0), None, Some(3.0), Some(4.0), Some(5.0), None];
        write_raster_csv(&path, &meta, &values).unwrap();
        let (grid, back_meta) = read_raster_csv(&path).unwrap();
        assert_eq!(back_meta, meta);
        assert_eq!(grid.len(), 6);
        // Row-major: cell (1, 0) is index 1.
        assert_eq!(grid.location(1), Location::new(10.5, -5.0));
        assert_eq!(grid.value(1), None);
        assert_eq!(grid.location(5), Location::new(11.0, -4.75));
        assert_relative_eq!(grid.value(3).unwrap(), 4.0);
    }

    #[test]
    fn variance_csv_aligns_by_coordinates() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("v.csv");
        let locs = Grid::lattice_locations(2, 1, 1.0, 1.0);
        let grid = Grid::fully_observed(locs, vec![0.0, 1.0]).unwrap();
        std::fs::write(&path, "x,y,v\n1,0,2.5\n0,0,1.5\n").unwrap();
        let v = read_variance_csv(&path, &grid).unwrap();
        assert_eq!(v, vec![1.5, 2.5]);
        std::fs::write(&path, "x,y,v\n0,0,1.5\n").unwrap();
        assert!(read_variance_csv(&path, &grid).is_err());
    }

    #[test]
    fn trace_csv_round_trip() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let trace = vec![
            FitTraceRow {
                iteration: 0,
                sigma2: 2.5,
                min_eigenvalue: -0.75,
                negative_eigenvalues: 3,
                sse: 10.0,
            },
            FitTraceRow {
                iteration: 1,
                sigma2: 1.25,
                min_eigenvalue: 0.5,
                negative_eigenvalues: 0,
                sse: 12.5,
            },
        ];
        write_trace_csv(&path, &trace).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("g,sigma2,lambda_min,neg_eigs,sse\n"));
        let back = read_trace_csv(&path).unwrap();
        assert_eq!(back, trace);
    }
}
