#![no_main]
use dpkit::lfkit::{LabelingFunction, RuleSet};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    let Ok(set) = RuleSet::from_json_str(data) else {
        return;
    };
    for rule in &set.rules {
        if let Ok(vote) = rule.evaluate("Free PRIZE, call now!", Some(&[0.5, -1.0])) {
            assert!(vote.label == 0 || vote.label == rule.target());
        }
    }
    assert!(RuleSet::from_json_str(&set.to_json_string()).is_ok());
});
