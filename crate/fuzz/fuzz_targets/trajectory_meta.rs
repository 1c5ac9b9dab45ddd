#![no_main]

use libfuzzer_sys::fuzz_target;
use qnnlv_core::training::TrajectoryMeta;

fuzz_target!(|data: &[u8]| {
    let _ = serde_json::from_slice::<TrajectoryMeta>(data);
});
