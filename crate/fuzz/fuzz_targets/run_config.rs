#![no_main]

use hydrodeep::cli::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let Ok(cfg) = RunConfig::parse(text) else { return };
    // the echoed form must parse back to the same value
    let echoed = cfg.to_toml();
    assert_eq!(RunConfig::parse(&echoed).unwrap(), cfg);
});
