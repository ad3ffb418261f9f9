#![no_main]

use libfuzzer_sys::fuzz_target;
use vecluster::pipeline::PipelineConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = PipelineConfig::parse(text) {
            assert_eq!(PipelineConfig::parse(&cfg.to_config_text()).unwrap(), cfg);
        }
    }
});
