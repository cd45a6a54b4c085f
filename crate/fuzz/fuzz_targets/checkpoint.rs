#![no_main]

use hydrodeep::models::{read_checkpoint, write_checkpoint};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(model) = read_checkpoint(data) else { return };
    let bytes = write_checkpoint(&model);
    let again = read_checkpoint(&bytes).unwrap();
    assert_eq!(write_checkpoint(&again), bytes);
});
