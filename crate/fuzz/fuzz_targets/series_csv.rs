#![no_main]

use std::path::Path;

use hydrodeep::datapipe::{parse_series, write_series};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(table) = parse_series(data, Path::new("fuzz.csv")) else { return };
    // anything accepted must survive a write/read cycle unchanged
    let mut out = Vec::new();
    write_series(&table, &mut out).unwrap();
    let again = parse_series(out.as_slice(), Path::new("fuzz.csv")).unwrap();
    assert_eq!(again, table);
});
