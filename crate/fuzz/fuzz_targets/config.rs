#![no_main]
use dpkit::config::Config;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(c) = Config::from_json_str(data) {
        assert!(Config::from_json_str(&c.to_json_string()).is_ok());
    }
});
