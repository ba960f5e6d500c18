//! Encode a CoAP request, decode it back and print both forms.
//!
//! cargo run --example coap_codec [PATH]

use iat::coap::{decode, Code, Message, MessageType};

fn main() {
    let path = std::env::args().nth(1).unwrap_or_else(|| "/16663/0/0".into());
    let mut msg = Message::request(MessageType::Con, Code::GET, &path).with_token(&[0xab]);
    msg.message_id = 0x1234;
    msg.set_observe(0);

    let bytes = msg.encode().expect("encode");
    let hex: Vec<String> = bytes.iter().map(|b| format!("{b:02x}")).collect();
    println!("{}", hex.join(" "));

    let back = decode(&bytes).expect("decode");
    println!("{:?} {} mid={:#06x} path=/{} observe={:?}", back.mtype, back.code, back.message_id, back.uri_path().join("/"), back.observe());
    assert_eq!(back, msg);

    // Truncated input is rejected, never a panic.
    println!("first 3 bytes: {:?}", decode(&bytes[..3]));
}
