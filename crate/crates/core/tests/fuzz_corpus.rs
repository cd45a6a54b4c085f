//! Replays the fuzz seed corpora through the same entry points and
//! properties as the fuzz targets, so they are exercised on stable.

use std::fs;
use std::path::{Path, PathBuf};

use hydrodeep::cli::RunConfig;
use hydrodeep::datapipe::{parse_grid, parse_series, write_grid, write_series};
use hydrodeep::models::{read_checkpoint, write_checkpoint};

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus").join(target);
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .map(|p| {
            let bytes = fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

#[test]
fn series_seeds() {
    let mut accepted = 0;
    for (path, data) in seeds("series_csv") {
        let Ok(table) = parse_series(data.as_slice(), &path) else { continue };
        let mut out = Vec::new();
        write_series(&table, &mut out).unwrap();
        assert_eq!(parse_series(out.as_slice(), &path).unwrap(), table, "{}", path.display());
        accepted += 1;
    }
    assert!(accepted > 0);
}

#[test]
fn grid_seeds() {
    let mut accepted = 0;
    for (path, data) in seeds("grid_csv") {
        let Ok(grid) = parse_grid(data.as_slice(), &path) else { continue };
        let mut out = Vec::new();
        write_grid(&grid, &mut out).unwrap();
        assert_eq!(parse_grid(out.as_slice(), &path).unwrap(), grid, "{}", path.display());
        accepted += 1;
    }
    assert!(accepted > 0);
}

#[test]
fn checkpoint_seeds() {
    let mut accepted = 0;
    for (path, data) in seeds("checkpoint") {
        let Ok(model) = read_checkpoint(&data) else { continue };
        let bytes = write_checkpoint(&model);
        assert_eq!(write_checkpoint(&read_checkpoint(&bytes).unwrap()), bytes, "{}", path.display());
        accepted += 1;
    }
    assert!(accepted > 0);
}

#[test]
fn run_config_seeds() {
    let mut accepted = 0;
    for (path, data) in seeds("run_config") {
        let Ok(text) = std::str::from_utf8(&data) else { continue };
        let Ok(cfg) = RunConfig::parse(text) else { continue };
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg, "{}", path.display());
        accepted += 1;
    }
    assert!(accepted > 0);
}
