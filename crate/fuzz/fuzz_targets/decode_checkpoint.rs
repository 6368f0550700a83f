#![no_main]

use libfuzzer_sys::fuzz_target;
use tkgc_core::checkpoint::{AnyCheckpoint, Checkpoint};

fuzz_target!(|data: &[u8]| {
    match AnyCheckpoint::decode(data) {
        Ok(AnyCheckpoint::F32(c)) => {
            let again = Checkpoint::<f32>::decode(&c.encode().unwrap()).unwrap();
            assert_eq!(again.params.names(), c.params.names());
        }
        Ok(AnyCheckpoint::F64(c)) => {
            let again = Checkpoint::<f64>::decode(&c.encode().unwrap()).unwrap();
            assert_eq!(again.params.names(), c.params.names());
        }
        Err(_) => {}
    }
});
