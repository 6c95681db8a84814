use mmreact_core::experts::Detection;
use mmreact_core::serialize::{parse_detections, serialize_detections};
use proptest::prelude::*;

fn detection() -> impl Strategy<Value = Detection> {
    ("[a-zA-Z][a-zA-Z ,'-]{0,20}[a-zA-Z]", 0u32..4000, 0u32..4000, 1u32..4000, 1u32..4000)
        .prop_map(|(label, x, y, w, h)| Detection::new(label, x, y, x + w, y + h))
}

proptest! {
    #[test]
    fn serialize_then_parse_is_identity(boxes in proptest::collection::vec(detection(), 0..12)) {
        let text = serialize_detections(&boxes);
        prop_assert_eq!(parse_detections(&text).unwrap(), boxes);
    }
}

#[test]
fn box_line_format() {
    let text = serialize_detections(&[Detection::new("dog", 1, 2, 3, 4)]);
    assert_eq!(text.lines().last(), Some("<dog, 1, 2, 3, 4>"));
}
