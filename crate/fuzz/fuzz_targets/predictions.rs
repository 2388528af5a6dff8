#![no_main]
use dpkit::labelmodels::{predictions_from_jsonl, predictions_to_jsonl};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&k, rest)) = data.split_first() else {
        return;
    };
    let Ok(text) = std::str::from_utf8(rest) else {
        return;
    };
    if let Ok(p) = predictions_from_jsonl(text, usize::from(k % 6)) {
        assert_eq!(predictions_from_jsonl(&predictions_to_jsonl(&p), usize::from(k % 6)).unwrap(), p);
    }
});
