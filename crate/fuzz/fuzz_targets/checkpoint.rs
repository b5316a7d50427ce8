#![no_main]

use aircode::io::{checkpoint_from_slice, checkpoint_to_bytes};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(params) = checkpoint_from_slice(data) else {
        return;
    };
    let canonical = checkpoint_to_bytes(&params);
    let reparsed = checkpoint_from_slice(&canonical).expect("parse canonical form");
    assert_eq!(
        canonical,
        checkpoint_to_bytes(&reparsed),
        "canonical form is not a fixed point"
    );
});
