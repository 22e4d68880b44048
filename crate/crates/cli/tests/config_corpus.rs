//! Replays the checked-in fuzz corpus through the config parsers.

use std::path::PathBuf;

use soc_icnn_cli::config::{parse_config, Exp1Config, Exp2Config, Exp3Config, Exp4Config};

#[test]
fn config_seeds_parse_for_some_experiment() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fuzz/corpus/exp_config");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let text = std::fs::read_to_string(entry.unwrap().path()).unwrap();
        let ok = [
            parse_config::<Exp1Config>(&text).is_ok(),
            parse_config::<Exp2Config>(&text).is_ok(),
            parse_config::<Exp3Config>(&text).is_ok(),
            parse_config::<Exp4Config>(&text).is_ok(),
        ];
        assert!(ok.iter().any(|&b| b), "{text}");
        n += 1;
    }
    assert!(n >= 5);
}

#[test]
fn truncated_configs_are_errors() {
    for text in ["", "{", "{\"seed\": ", "[]", "null", "{\"seed\": -1}"] {
        assert!(parse_config::<Exp1Config>(text).is_err(), "{text}");
    }
}
