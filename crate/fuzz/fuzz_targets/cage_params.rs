#![no_main]
use dpkit::labelmodels::CageParams;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(p) = CageParams::from_json_str(data) {
        let _ = p.posterior(&vec![0; p.m()], &vec![None; p.m()]);
        let _ = p.regularizer();
        assert!(CageParams::from_json_str(&p.to_json_string()).is_ok());
    }
});
