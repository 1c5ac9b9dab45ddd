#![no_main]

use libfuzzer_sys::fuzz_target;
use qnnlv_cli::config::RunConfig;

// Config text, then NUL-separated `--set` overrides.
fuzz_target!(|data: &[u8]| {
    let Ok(s) = std::str::from_utf8(data) else { return };
    let mut parts = s.split('\0');
    let text = parts.next().unwrap_or("");
    let overrides: Vec<String> = parts.map(str::to_owned).collect();
    if let Ok(cfg) = RunConfig::load(Some(text), &overrides, None) {
        let _ = cfg.resolved_text();
    }
});
