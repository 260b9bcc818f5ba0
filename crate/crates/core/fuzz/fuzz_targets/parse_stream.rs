#![no_main]

use libfuzzer_sys::fuzz_target;
use sketchstream::stream::{parse_stream, render_stream};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(s) = parse_stream(text) else {
        return;
    };
    // Rendering is lossless for turnstile streams.
    if let Ok(out) = render_stream(&s) {
        let back = parse_stream(&out).expect("rendered stream reparses");
        assert_eq!((back.n, back.d), (s.n, s.d));
        if back.mode == s.mode && matches!(s.mode, sketchstream::stream::StreamMode::Turnstile) {
            assert_eq!(back.updates, s.updates);
        }
    }
});
