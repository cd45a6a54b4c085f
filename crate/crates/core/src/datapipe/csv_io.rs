//! Dataset files: `series.csv` (`date,p_1..p_L,r_1..r_L,discharge`) and its
//! companion `grid.csv` (`grid_id,x,y,dist_km`).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use super::{GridSpec, SeriesTable};
use crate::error::{Error, Result};

pub const SERIES_FILE: &str = "series.csv";
pub const GRID_FILE: &str = "grid.csv";

fn parse_err(path: &Path, line: u64, reason: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, reason: reason.into() }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    parse_err(path, line, e.to_string())
}

fn number(path: &Path, line: u64, column: &str, cell: &str) -> Result<f64> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("column {column}: {cell:?} is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, format!("column {column}: non-finite value {cell:?}")));
    }
    Ok(v)
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(input)
}

/// Parses a series file. The grid count is inferred from the header.
pub fn parse_series<R: Read>(input: R, path: &Path) -> Result<SeriesTable> {
    let mut rdr = reader(input);
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols.len() < 4 || cols.len() % 2 != 0 {
        return Err(parse_err(path, 1, format!("expected date, p_1..p_L, r_1..r_L, discharge; got {} columns", cols.len())));
    }
    let l = (cols.len() - 2) / 2;
    let mut expected = vec!["date".to_string()];
    expected.extend((1..=l).map(|i| format!("p_{i}")));
    expected.extend((1..=l).map(|i| format!("r_{i}")));
    expected.push("discharge".into());
    if let Some((got, want)) = cols.iter().zip(&expected).find(|(g, w)| *g != w) {
        return Err(parse_err(path, 1, format!("header column {got:?} where {want:?} was expected")));
    }

    let mut dates: Vec<NaiveDate> = Vec::new();
    let (mut precip, mut runoff, mut discharge) = (Vec::new(), Vec::new(), Vec::new());
    for record in rdr.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != cols.len() {
            return Err(parse_err(path, line, format!("{} fields, header has {}", record.len(), cols.len())));
        }
        let date = NaiveDate::parse_from_str(record[0].trim(), "%Y-%m-%d")
            .map_err(|_| parse_err(path, line, format!("bad date {:?}", &record[0])))?;
        if let Some(prev) = dates.last().copied() {
            if prev.succ_opt() != Some(date) {
                return Err(parse_err(path, line, format!("date {date} does not follow {prev}")));
            }
        }
        let mut p = Vec::with_capacity(l);
        let mut r = Vec::with_capacity(l);
        for j in 0..l {
            p.push(number(path, line, &expected[1 + j], &record[1 + j])?);
            r.push(number(path, line, &expected[1 + l + j], &record[1 + l + j])?);
        }
        discharge.push(number(path, line, "discharge", &record[2 * l + 1])?);
        dates.push(date);
        precip.push(p);
        runoff.push(r);
    }
    if dates.is_empty() {
        return Err(parse_err(path, 2, "no data rows"));
    }
    SeriesTable::new(dates, precip, runoff, discharge)
}

pub fn parse_grid<R: Read>(input: R, path: &Path) -> Result<GridSpec> {
    let mut rdr = reader(input);
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let cols: Vec<&str> = header.iter().map(str::trim).collect();
    if cols != ["grid_id", "x", "y", "dist_km"] {
        return Err(parse_err(path, 1, format!("expected header grid_id,x,y,dist_km; got {}", cols.join(","))));
    }
    let (mut ids, mut coords, mut dist) = (Vec::<String>::new(), Vec::new(), Vec::new());
    let mut seen = std::collections::HashSet::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 4 {
            return Err(parse_err(path, line, format!("{} fields, expected 4", record.len())));
        }
        let id = record[0].trim().to_string();
        if id.is_empty() || !seen.insert(id.clone()) {
            return Err(parse_err(path, line, format!("grid id {id:?} is empty or repeated")));
        }
        let x = number(path, line, "x", &record[1])?;
        let y = number(path, line, "y", &record[2])?;
        let d = number(path, line, "dist_km", &record[3])?;
        if d < 0.0 {
            return Err(parse_err(path, line, format!("negative distance {d}")));
        }
        ids.push(id);
        coords.push((x, y));
        dist.push(d);
    }
    if ids.is_empty() {
        return Err(parse_err(path, 2, "no grid rows"));
    }
    GridSpec::new(ids, coords, dist)
}

pub fn write_series<W: Write>(series: &SeriesTable, out: W) -> Result<()> {
    let l = series.grid_count();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["date".to_string()];
    header.extend((1..=l).map(|i| format!("p_{i}")));
    header.extend((1..=l).map(|i| format!("r_{i}")));
    header.push("discharge".into());
    let io = |e: csv::Error| Error::Config(format!("writing series: {e}"));
    w.write_record(&header).map_err(io)?;
    for t in 0..series.len() {
        let mut row = Vec::with_capacity(2 * l + 2);
        row.push(series.dates[t].format("%Y-%m-%d").to_string());
        row.extend(series.precip[t].iter().map(|v| v.to_string()));
        row.extend(series.runoff[t].iter().map(|v| v.to_string()));
        row.push(series.discharge[t].to_string());
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| Error::Config(format!("writing series: {e}")))?;
    Ok(())
}

pub fn write_grid<W: Write>(grid: &GridSpec, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Config(format!("writing grid: {e}"));
    w.write_record(["grid_id", "x", "y", "dist_km"]).map_err(io)?;
    for i in 0..grid.len() {
        let (x, y) = grid.coords[i];
        w.write_record([grid.ids[i].clone(), x.to_string(), y.to_string(), grid.distances_km[i].to_string()])
            .map_err(io)?;
    }
    w.flush().map_err(|e| Error::Config(format!("writing grid: {e}")))?;
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

/// Reads a series file plus the `grid.csv` sitting next to it.
pub fn load_series_csv(path: &Path) -> Result<(GridSpec, SeriesTable)> {
    let grid_path = path.with_file_name(GRID_FILE);
    let grid = parse_grid(open(&grid_path)?, &grid_path)?;
    let series = parse_series(open(path)?, path)?;
    if grid.len() != series.grid_count() {
        return Err(parse_err(
            path,
            1,
            format!("{} lists {} grids but the series has {}", grid_path.display(), grid.len(), series.grid_count()),
        ));
    }
    Ok((grid, series))
}

pub fn load_dataset(dir: &Path) -> Result<(GridSpec, SeriesTable)> {
    load_series_csv(&dir.join(SERIES_FILE))
}

pub fn save_dataset(dir: &Path, grid: &GridSpec, series: &SeriesTable) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let create = |name: &str| -> Result<(PathBuf, BufWriter<File>)> {
        let p = dir.join(name);
        let f = File::create(&p).map_err(|e| Error::io(&p, e))?;
        Ok((p, BufWriter::new(f)))
    };
    let (_, g) = create(GRID_FILE)?;
    write_grid(grid, g)?;
    let (_, s) = create(SERIES_FILE)?;
    write_series(series, s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("mem.csv")
    }

    const GOOD: &str = "date,p_1,p_2,r_1,r_2,discharge\n\
        2000-01-01,1,2,0.5,0.25,10\n\
        2000-01-02,0,0,0.1,0.2,9.5\n";

    #[test]
    fn parses_good_file() {
        let s = parse_series(GOOD.as_bytes(), p()).unwrap();
        assert_eq!(s.grid_count(), 2);
        assert_eq!(s.len(), 2);
        assert_eq!(s.runoff[0], vec![0.5, 0.25]);
        assert_eq!(s.discharge[1], 9.5);
    }

    fn line_of(e: Error) -> u64 {
        match e {
            Error::Parse { line, .. } => line,
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reports_line_numbers() {
        let ragged = "date,p_1,r_1,discharge\n2000-01-01,1,2,3\n2000-01-02,1,2\n";
        assert_eq!(line_of(parse_series(ragged.as_bytes(), p()).unwrap_err()), 3);
        let nan = "date,p_1,r_1,discharge\n2000-01-01,1,2,3\n2000-01-02,NaN,2,3\n";
        assert_eq!(line_of(parse_series(nan.as_bytes(), p()).unwrap_err()), 3);
        let order = "date,p_1,r_1,discharge\n2000-01-02,1,2,3\n2000-01-01,1,2,3\n";
        assert_eq!(line_of(parse_series(order.as_bytes(), p()).unwrap_err()), 3);
        let gap = "date,p_1,r_1,discharge\n2000-01-01,1,2,3\n2000-01-03,1,2,3\n";
        assert_eq!(line_of(parse_series(gap.as_bytes(), p()).unwrap_err()), 3);
        let header = "date,p_1,q_1,discharge\n";
        assert_eq!(line_of(parse_series(header.as_bytes(), p()).unwrap_err()), 1);
    }

    #[test]
    fn grid_parsing() {
        let g = parse_grid("grid_id,x,y,dist_km\na,0,0,1.5\nb,1,2,0\n".as_bytes(), p()).unwrap();
        assert_eq!(g.distances_km, vec![1.5, 0.0]);
        assert!(parse_grid("grid_id,x,y,dist_km\na,0,0,-1\n".as_bytes(), p()).is_err());
        assert!(parse_grid("grid_id,x,y,dist_km\na,0,0,1\na,0,0,1\n".as_bytes(), p()).is_err());
        assert!(parse_grid("grid_id,x,y\n".as_bytes(), p()).is_err());
    }

    #[test]
    fn write_then_read() {
        let s = parse_series(GOOD.as_bytes(), p()).unwrap();
        let mut buf = Vec::new();
        write_series(&s, &mut buf).unwrap();
        assert_eq!(parse_series(&buf[..], p()).unwrap(), s);
    }
}
