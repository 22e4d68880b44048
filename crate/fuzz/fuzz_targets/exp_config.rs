#![no_main]

use libfuzzer_sys::fuzz_target;
use soc_icnn_cli::config::{parse_config, Exp1Config, Exp2Config, Exp3Config, Exp4Config};

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = parse_config::<Exp1Config>(text);
        let _ = parse_config::<Exp2Config>(text);
        let _ = parse_config::<Exp3Config>(text);
        let _ = parse_config::<Exp4Config>(text);
    }
});
