#![no_main]
use dpkit::LabelSpace;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(space) = LabelSpace::from_json_str(data) {
        assert!(space.k() >= 2);
        assert_eq!(LabelSpace::from_json_str(&space.to_json_string()).unwrap(), space);
    }
});
