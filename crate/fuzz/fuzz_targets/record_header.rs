#![no_main]
use alarmsift::records::parse_header;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(header) = parse_header(data) {
        let bytes = serde_json::to_vec(&header).expect("header serializes");
        let again = parse_header(&bytes).expect("serialized header must parse");
        assert_eq!(header, again);
    }
});
