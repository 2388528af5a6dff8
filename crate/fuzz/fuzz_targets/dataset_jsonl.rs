#![no_main]
use dpkit::{types::validate_dataset, DataSplit, LabelSpace, Role};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let Ok(split) = DataSplit::from_jsonl_str(Role::U, data) else {
        return;
    };
    let space = LabelSpace::from_names(["a", "b", "c"]).unwrap();
    let _ = validate_dataset(&split, &space);
    let _ = split.require_features();
    // re-parse must succeed and agree, NaN aside
    let back = DataSplit::from_jsonl_str(Role::U, &split.to_jsonl_string()).unwrap();
    assert_eq!(back.len(), split.len());
});
