#![no_main]

use apid::formats::{controllers_to_json, parse_controllers_json};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(assignment) = parse_controllers_json(text) {
        let again = parse_controllers_json(&controllers_to_json(&assignment)).expect("written controllers parse");
        assert_eq!(assignment, again);
    }
});
