#![no_main]

use bilevel_core::report::{parse_metrics, render_metrics};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(file) = parse_metrics(text) {
        let rendered = render_metrics(&file);
        let again = parse_metrics(&rendered).expect("re-parse of rendered metrics");
        assert_eq!(again.rows.len(), file.rows.len());
        assert_eq!(render_metrics(&again), rendered);
    }
});
