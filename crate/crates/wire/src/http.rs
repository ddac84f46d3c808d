//! Minimal HTTP/1.1 subset: GET requests, Content-Length responses, one
//! request per connection (Connection: close). Enough for static pages and
//! health probes; anything else is out of scope here.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;

use crate::WireError;

/// Parsed request head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestHead {
    pub method: String,
    pub path: String,
    /// Raw header lines, without the trailing blank line.
    pub headers: Vec<String>,
    /// Bytes the head occupied on the wire.
    pub wire_bytes: u64,
}

const MAX_HEAD_BYTES: usize = 8192;

/// Read a request head (request line + headers + blank line).
pub fn read_request_head(stream: &mut TcpStream) -> Result<RequestHead, WireError> {
    let mut reader = BufReader::new(stream);
    let mut lines = Vec::new();
    let mut total = 0usize;
    loop {
        let mut line = String::new();
        let n = reader
            .read_line(&mut line)
            .map_err(|e| WireError::Io(format!("reading request head: {e}")))?;
        if n == 0 {
            return Err(WireError::Protocol("connection closed mid-head".to_string()));
        }
        total += n;
        if total > MAX_HEAD_BYTES {
            return Err(WireError::Protocol("request head too large".to_string()));
        }
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.is_empty() {
            break;
        }
        lines.push(trimmed.to_string());
    }
    if lines.is_empty() {
        return Err(WireError::Protocol("empty request".to_string()));
    }
    let mut parts = lines[0].split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();
    let version = parts.next().unwrap_or_default();
    if method.is_empty() || path.is_empty() || !version.starts_with("HTTP/1.") {
        return Err(WireError::Protocol(format!("malformed request line: {}", lines[0])));
    }
    Ok(RequestHead {
        method,
        path,
        headers: lines[1..].to_vec(),
        wire_bytes: total as u64,
    })
}

/// Write a full response with Content-Length and Connection: close.
pub fn write_response(
    stream: &mut TcpStream,
    status: u16,
    reason: &str,
    body: &[u8],
) -> Result<(), WireError> {
    let head = format!(
        "HTTP/1.1 {status} {reason}\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    );
    stream
        .write_all(head.as_bytes())
        .and_then(|_| stream.write_all(body))
        .and_then(|_| stream.flush())
        .map_err(|e| WireError::Io(format!("writing response: {e}")))
}

/// A response as received by the client side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
    /// The exact bytes that arrived, head included.
    pub raw: Vec<u8>,
}

/// Parse a raw HTTP response (read until EOF by the caller).
pub fn parse_response(raw: Vec<u8>) -> Result<HttpResponse, WireError> {
    let head_end = raw
        .windows(4)
        .position(|w| w == b"\r\n\r\n")
        .ok_or_else(|| WireError::Protocol("response without header terminator".to_string()))?;
    let head = std::str::from_utf8(&raw[..head_end])
        .map_err(|_| WireError::Protocol("non-ASCII response head".to_string()))?;
    let status_line = head.lines().next().unwrap_or_default();
    let status: u16 = status_line
        .split_whitespace()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| WireError::Protocol(format!("malformed status line: {status_line}")))?;
    let mut body = raw[head_end + 4..].to_vec();
    // Trust Content-Length when present; EOF delimits otherwise.
    for line in head.lines().skip(1) {
        if let Some(value) = line
            .to_ascii_lowercase()
            .strip_prefix("content-length:")
            .map(|v| v.trim().to_string())
        {
            if let Ok(len) = value.parse::<usize>() {
                if body.len() >= len {
                    body.truncate(len);
                }
            }
        }
    }
    Ok(HttpResponse { status, body, raw })
}

/// Read the peer's full response (Connection: close semantics).
pub fn read_response(stream: &mut TcpStream) -> Result<HttpResponse, WireError> {
    let mut raw = Vec::new();
    stream
        .read_to_end(&mut raw)
        .map_err(|e| WireError::Io(format!("reading response: {e}")))?;
    parse_response(raw)
}
