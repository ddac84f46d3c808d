//! Line-protocol resolver: one "RESOLVE <app>" request and one response per
//! TCP connection. A functional stand-in for a rotating name server, not a
//! DNS wire implementation.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::sync::{Arc, Mutex};

use gslb_core::selector::{SelectorError, SelectorNode};

use crate::service::{spawn_tcp_service, ServiceHandle};
use crate::WireError;

const MAX_LINE: u64 = 512;

/// Serve `node` on `listen`. Every well-formed request line gets exactly one
/// response line; malformed input gets "ERR MALFORMED" and a close.
pub fn serve_resolver(
    name: impl Into<String>,
    node: Arc<Mutex<SelectorNode>>,
    listen: &str,
) -> Result<ServiceHandle, WireError> {
    spawn_tcp_service(name, listen, move |mut stream: TcpStream| {
        let reply = answer(&node, &mut stream);
        let _ = stream.write_all(reply.as_bytes());
        let _ = stream.flush();
    })
}

fn answer(node: &Mutex<SelectorNode>, stream: &mut TcpStream) -> String {
    let mut line = String::new();
    let mut reader = BufReader::new(&mut *stream).take(MAX_LINE);
    if reader.read_line(&mut line).is_err() {
        return "ERR MALFORMED\n".to_string();
    }
    let line = line.trim_end_matches(['\r', '\n']);
    let Some(app_id) = line.strip_prefix("RESOLVE ") else {
        return "ERR MALFORMED\n".to_string();
    };
    let app_id = app_id.trim();
    if app_id.is_empty() || !app_id.is_ascii() {
        return "ERR MALFORMED\n".to_string();
    }
    match node.lock().expect("resolver lock").resolve_app(app_id) {
        Ok(address) => format!("OK {address}\n"),
        Err(SelectorError::UnknownApp(_)) => "ERR UNKNOWN_APP\n".to_string(),
        Err(_) => "ERR NO_BALANCER\n".to_string(),
    }
}
