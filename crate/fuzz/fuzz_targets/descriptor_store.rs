#![no_main]

use aircode::io::{store_from_slice, store_to_bytes};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(records) = store_from_slice(data) else {
        return;
    };
    // The header width is unrecoverable from an empty record list.
    let Some(first) = records.first() else {
        return;
    };
    let n_o = first.descriptor.len();
    let canonical = store_to_bytes(n_o, &records).expect("reserialize parsed store");
    let reparsed = store_from_slice(&canonical).expect("parse canonical form");
    let again = store_to_bytes(n_o, &reparsed).expect("reserialize again");
    assert_eq!(canonical, again, "canonical form is not a fixed point");
});
