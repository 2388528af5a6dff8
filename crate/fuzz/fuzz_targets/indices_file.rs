#![no_main]
use dpkit::subset::IndicesFile;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(f) = IndicesFile::from_json_str(data) {
        assert_eq!(f.indices.len(), f.k);
        assert!(IndicesFile::from_json_str(&f.to_json_string()).is_ok());
    }
});
