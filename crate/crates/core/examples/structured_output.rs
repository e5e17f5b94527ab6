//! Recover a JSON object from model output that ignored the format.

use r2c::llm::extract_structured;

fn main() {
    let replies = [
        r#"{"is_caused_by_you": true, "hints": "x"}"#,
        "```json\n{\"is_caused_by_you\": false, \"hints\": \"\"}\n```",
        "Sure! Here is my answer: {\"verdict\": {\"ok\": true}} Let me know if you need more.",
        "I could not decide.",
    ];
    for text in replies {
        match extract_structured(text) {
            Ok(s) => println!("step {} -> {}", s.step.number(), serde_json::Value::Object(s.value)),
            Err(e) => println!("no payload in {:?}", e.raw),
        }
    }
}
