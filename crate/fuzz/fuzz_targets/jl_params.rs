#![no_main]
use dpkit::jointlearn::JlParams;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(p) = JlParams::from_json_str(data) {
        let x = vec![0.25; p.fm.d];
        let _ = p.predict_fm_proba(&x, p.fm.d);
        assert!(JlParams::from_json_str(&p.to_json_string()).is_ok());
    }
});
