//! Client-side plumbing: resolve an application through the master/slave
//! resolver pair and fetch pages from balancers.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream};
use std::time::Duration;

use crate::http::{read_response, HttpResponse};
use crate::WireError;

/// Default connect timeout before a client gives up on the master resolver
/// and asks the slave.
pub const DEFAULT_RESOLVE_TIMEOUT: Duration = Duration::from_millis(200);

fn connect(addr: &str, timeout: Duration) -> Result<TcpStream, WireError> {
    let sock: SocketAddr = addr
        .parse()
        .map_err(|_| WireError::Protocol(format!("bad address {addr}")))?;
    let stream = TcpStream::connect_timeout(&sock, timeout)
        .map_err(|e| WireError::Io(format!("connect {addr}: {e}")))?;
    stream
        .set_read_timeout(Some(timeout.max(Duration::from_millis(500))))
        .and_then(|_| stream.set_write_timeout(Some(timeout.max(Duration::from_millis(500)))))
        .map_err(|e| WireError::Io(e.to_string()))?;
    Ok(stream)
}

/// One resolution round trip against a single resolver.
pub fn resolve_once(resolver: &str, app_id: &str, timeout: Duration) -> Result<String, WireError> {
    let mut stream = connect(resolver, timeout)?;
    stream
        .write_all(format!("RESOLVE {app_id}\n").as_bytes())
        .and_then(|_| stream.flush())
        .map_err(|e| WireError::Io(format!("send resolve: {e}")))?;
    let mut line = String::new();
    BufReader::new(stream)
        .read_line(&mut line)
        .map_err(|e| WireError::Io(format!("read resolve reply: {e}")))?;
    let line = line.trim_end_matches(['\r', '\n']);
    if let Some(address) = line.strip_prefix("OK ") {
        return Ok(address.to_string());
    }
    Err(WireError::Protocol(format!("resolver said: {line}")))
}

/// Try the master, then the slave. An unreachable master (the HA test stops
/// it) costs one connect timeout before the slave answers.
pub fn live_resolve_with_failover(
    master: &str,
    slave: &str,
    app_id: &str,
    timeout: Duration,
) -> Result<String, WireError> {
    match resolve_once(master, app_id, timeout) {
        Ok(address) => Ok(address),
        Err(WireError::Protocol(msg)) if msg.contains("UNKNOWN_APP") => {
            Err(WireError::Protocol(msg))
        }
        Err(_) => resolve_once(slave, app_id, timeout).map_err(|_| WireError::AllSelectorsDown),
    }
}

/// Plain GET; the response is read to EOF (Connection: close).
pub fn http_get(addr: &str, path: &str, timeout: Duration) -> Result<HttpResponse, WireError> {
    let mut stream = connect(addr, timeout)?;
    stream
        .set_read_timeout(Some(timeout))
        .map_err(|e| WireError::Io(e.to_string()))?;
    stream
        .write_all(format!("GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").as_bytes())
        .and_then(|_| stream.flush())
        .map_err(|e| WireError::Io(format!("send request: {e}")))?;
    read_response(&mut stream)
}

/// Pull the serving backend's id out of a page body ("SERVER=web-<id>").
pub fn backend_token(body: &[u8]) -> Option<u32> {
    let text = std::str::from_utf8(body).ok()?;
    let start = text.find("SERVER=web-")? + "SERVER=web-".len();
    let digits: String = text[start..].chars().take_while(|c| c.is_ascii_digit()).collect();
    digits.parse().ok()
}
