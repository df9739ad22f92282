//! Fuzzes the key/value configuration parser. Accepted configurations must
//! pass their own validation.

#![no_main]

use libfuzzer_sys::fuzz_target;
use strativ::data::AnalysisConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = AnalysisConfig::parse_str(text) {
            assert!(cfg.validate().is_ok());
            assert!(cfg.strata_count > 1);
            let (lo, hi) = cfg.knot_quantile_range;
            assert!(lo < hi);
        }
    }
});
