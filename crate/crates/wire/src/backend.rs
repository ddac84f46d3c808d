//! Static-content backend: GET / answers with this backend's unique body,
//! GET /health answers "ok".

use std::net::TcpStream;

use gslb_core::model::BackendId;

use crate::http::{read_request_head, write_response};
use crate::service::{spawn_tcp_service, ServiceHandle};
use crate::WireError;

/// One backend's served page. The body always contains the
/// "SERVER=web-<id>" token so clients can tell the five sites apart.
#[derive(Debug, Clone)]
pub struct StaticSite {
    pub backend_id: BackendId,
    pub body: String,
}

impl StaticSite {
    /// Build a body of (at least) `page_size` bytes around the id token.
    pub fn new(backend_id: BackendId, page_size: u64) -> Self {
        let token = format!("SERVER=web-{backend_id}\n");
        let mut body = token.clone();
        while (body.len() as u64) < page_size {
            let missing = (page_size as usize) - body.len();
            let filler = "content-filler-line-for-static-page\n";
            if missing >= filler.len() {
                body.push_str(filler);
            } else {
                body.push_str(&filler[..missing]);
            }
        }
        StaticSite { backend_id, body }
    }
}

/// Serve `site` on `listen`.
pub fn serve_backend(site: StaticSite, listen: &str) -> Result<ServiceHandle, WireError> {
    let name = format!("backend-{}", site.backend_id);
    spawn_tcp_service(name, listen, move |mut stream: TcpStream| {
        let head = match read_request_head(&mut stream) {
            Ok(head) => head,
            Err(_) => {
                let _ = write_response(&mut stream, 400, "Bad Request", b"bad request\n");
                return;
            }
        };
        if head.method != "GET" {
            let _ = write_response(&mut stream, 405, "Method Not Allowed", b"GET only\n");
            return;
        }
        match head.path.as_str() {
            "/" => {
                let _ = write_response(&mut stream, 200, "OK", site.body.as_bytes());
            }
            "/health" => {
                let _ = write_response(&mut stream, 200, "OK", b"ok");
            }
            _ => {
                let _ = write_response(&mut stream, 404, "Not Found", b"not found\n");
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn body_contains_token_and_reaches_page_size() {
        let site = StaticSite::new(3, 4096);
        assert!(site.body.contains("SERVER=web-3"));
        assert_eq!(site.body.len(), 4096);

        let tiny = StaticSite::new(7, 4);
        assert!(tiny.body.contains("SERVER=web-7"));
    }
}
