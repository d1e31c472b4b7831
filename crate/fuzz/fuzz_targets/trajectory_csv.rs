#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((traj, names)) = flowmap::harness::read_trajectory_from(data) {
        assert_eq!(traj.times.len(), traj.states.len());
        assert!(traj.states.iter().all(|s| s.len() == names.len()));
    }
});
