#![no_main]

use aircode::io::{keypoints_from_slice, keypoints_to_bytes};
use libfuzzer_sys::fuzz_target;

// Accepted inputs must re-serialize to a canonical form that parses back to
// itself; arbitrary bytes must only ever produce an error, never a panic.
fuzz_target!(|data: &[u8]| {
    let Ok(file) = keypoints_from_slice(data) else {
        return;
    };
    let canonical = keypoints_to_bytes(file.n_p, &file.objects).expect("reserialize parsed file");
    let reparsed = keypoints_from_slice(&canonical).expect("parse canonical form");
    let again = keypoints_to_bytes(reparsed.n_p, &reparsed.objects).expect("reserialize again");
    assert_eq!(canonical, again, "canonical form is not a fixed point");
});
