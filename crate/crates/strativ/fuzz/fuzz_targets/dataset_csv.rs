//! Fuzzes the dataset reader: arbitrary bytes through both delimiters and
//! a remapped header. Parsing must never panic, and accepted datasets must
//! satisfy the container invariants (equal column lengths, finite values).

#![no_main]

use libfuzzer_sys::fuzz_target;
use strativ::data::{ColumnMap, Dataset};

fuzz_target!(|data: &[u8]| {
    for delimiter in [b',', b'\t'] {
        if let Ok(parsed) = Dataset::from_reader(data, &ColumnMap::default(), delimiter) {
            assert!(!parsed.is_empty());
            assert_eq!(parsed.z.len(), parsed.x.len());
            assert_eq!(parsed.z.len(), parsed.y.len());
            assert!(parsed.z.iter().all(|v| v.is_finite()));
            assert!(parsed.x.iter().all(|v| v.is_finite()));
            assert!(parsed.y.iter().all(|v| v.is_finite()));
        }
    }
    let remapped = ColumnMap {
        z: "instrument".into(),
        x: "exposure".into(),
        y: "outcome".into(),
    };
    let _ = Dataset::from_reader(data, &remapped, b',');
});
