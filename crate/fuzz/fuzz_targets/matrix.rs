#![no_main]
use dpkit::applier::{Matrices, Orientation};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(m) = Matrices::from_json_str(data) {
        for o in [Orientation::Instances, Orientation::Lfs] {
            assert_eq!(Matrices::from_json_str(&m.to_json_string(o)).unwrap(), m);
        }
    }
});
