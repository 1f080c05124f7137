#![no_main]

use apid::formats::{parse_scenario_json, scenario_to_json};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(scenario) = parse_scenario_json(text) {
        let again = parse_scenario_json(&scenario_to_json(&scenario)).expect("written scenario parses");
        assert_eq!(scenario, again);
    }
});
