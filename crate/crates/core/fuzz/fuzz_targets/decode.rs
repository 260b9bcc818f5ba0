#![no_main]

use libfuzzer_sys::fuzz_target;
use sketchstream::sketches::codec::{decode, encode, merge_encoded};

fuzz_target!(|data: &[u8]| {
    let Ok(sketch) = decode(data) else {
        return;
    };
    let bytes = encode(&sketch);
    let again = decode(&bytes).expect("encoded sketch decodes");
    assert_eq!(encode(&again), bytes);
    let _ = merge_encoded(&bytes, data);
});
