#![no_main]

use libfuzzer_sys::fuzz_target;
use soc_icnn::io::{model_from_json, model_to_json};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(params) = model_from_json(text) else {
        return;
    };
    let again = model_from_json(&model_to_json(&params)).expect("serialized model reparses");
    assert_eq!(params, again);
});
