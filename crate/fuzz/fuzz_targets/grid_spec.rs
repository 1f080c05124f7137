#![no_main]

use apid::formats::{grid_points, parse_grid_spec, MAX_GRID_POINTS};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(spec) = std::str::from_utf8(data) else { return };
    if let Ok(axes) = parse_grid_spec(spec) {
        // Keep each run cheap; the cap itself is checked by the parser.
        let total: usize = axes.iter().map(|a| a.count).product();
        assert!(total <= MAX_GRID_POINTS);
        if total <= 4096 {
            let points = grid_points(&axes);
            assert_eq!(points.len(), total);
            assert!(points.iter().all(|p| p.len() == axes.len() && p.iter().all(|v| v.is_finite())));
        }
    }
});
