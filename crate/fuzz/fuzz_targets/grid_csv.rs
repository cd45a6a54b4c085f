#![no_main]

use std::path::Path;

use hydrodeep::datapipe::{parse_grid, write_grid};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(grid) = parse_grid(data, Path::new("grid.csv")) else { return };
    assert_eq!(grid.ids.len(), grid.distances_km.len());
    let mut out = Vec::new();
    write_grid(&grid, &mut out).unwrap();
    assert_eq!(parse_grid(out.as_slice(), Path::new("grid.csv")).unwrap(), grid);
});
