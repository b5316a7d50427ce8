#![no_main]

use aircode::io::RunConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(config) = RunConfig::from_toml_str(text) else {
        return;
    };
    // Compare rendered text, not structs: TOML admits `nan` floats and NaN
    // breaks PartialEq even when serialization is faithful.
    let canonical = config.to_toml_string();
    let reparsed = RunConfig::from_toml_str(&canonical).expect("parse canonical form");
    assert_eq!(canonical, reparsed.to_toml_string(), "canonical form is not a fixed point");
});
