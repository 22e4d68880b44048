#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(params) = soc_icnn::io::model_from_json(text) {
            // Accepted documents must describe a model that evaluates.
            let x = soc_icnn::Vector::zeros(params.input_dim());
            let _ = params.forward(&x);
        }
    }
});
