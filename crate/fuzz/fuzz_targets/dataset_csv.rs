#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = flowmap::datagen::read_dataset_from(data) {
        assert!(ds.pairs.iter().all(|p| p.s_in.len() == ds.n_s && p.p.len() == ds.n_par));
    }
});
