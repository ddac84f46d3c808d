//! TCP accept loops with clean shutdown: stop accepting, wait for in-flight
//! handlers, then join.

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crate::WireError;

/// A running TCP service. Dropping the handle stops it.
pub struct ServiceHandle {
    pub name: String,
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    in_flight: Arc<AtomicUsize>,
    thread: Option<JoinHandle<()>>,
}

impl ServiceHandle {
    /// Stop accepting, wait briefly for in-flight connections, join the
    /// accept loop.
    pub fn stop(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        // Wake the blocking accept.
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(200));
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
        let deadline = Instant::now() + Duration::from_secs(2);
        while self.in_flight.load(Ordering::SeqCst) > 0 && Instant::now() < deadline {
            thread::sleep(Duration::from_millis(5));
        }
    }

    pub fn is_stopped(&self) -> bool {
        self.stop.load(Ordering::SeqCst)
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Bind a listen address, naming it in the error on failure.
pub fn bind(listen: &str) -> Result<TcpListener, WireError> {
    TcpListener::bind(listen).map_err(|e| WireError::BindFailure(listen.to_string(), e.to_string()))
}

/// Bind `listen` and serve each accepted connection on its own thread.
pub fn spawn_tcp_service<F>(
    name: impl Into<String>,
    listen: &str,
    handler: F,
) -> Result<ServiceHandle, WireError>
where
    F: Fn(TcpStream) + Send + Sync + 'static,
{
    spawn_tcp_service_on(name, bind(listen)?, handler)
}

/// Serve connections accepted on an already-bound listener.
pub fn spawn_tcp_service_on<F>(
    name: impl Into<String>,
    listener: TcpListener,
    handler: F,
) -> Result<ServiceHandle, WireError>
where
    F: Fn(TcpStream) + Send + Sync + 'static,
{
    let name = name.into();
    let addr = listener
        .local_addr()
        .map_err(|e| WireError::Io(e.to_string()))?;
    let stop = Arc::new(AtomicBool::new(false));
    let in_flight = Arc::new(AtomicUsize::new(0));
    let handler = Arc::new(handler);

    let accept_stop = Arc::clone(&stop);
    let accept_in_flight = Arc::clone(&in_flight);
    let thread_name = name.clone();
    let thread = thread::Builder::new()
        .name(thread_name)
        .spawn(move || {
            for stream in listener.incoming() {
                if accept_stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let _ = stream.set_read_timeout(Some(Duration::from_secs(10)));
                let _ = stream.set_write_timeout(Some(Duration::from_secs(10)));
                let handler = Arc::clone(&handler);
                let counter = Arc::clone(&accept_in_flight);
                counter.fetch_add(1, Ordering::SeqCst);
                let _ = thread::Builder::new().spawn(move || {
                    handler(stream);
                    counter.fetch_sub(1, Ordering::SeqCst);
                });
            }
        })
        .map_err(|e| io_error(&e))?;

    Ok(ServiceHandle {
        name,
        addr,
        stop,
        in_flight,
        thread: Some(thread),
    })
}

fn io_error(e: &io::Error) -> WireError {
    WireError::Io(e.to_string())
}

/// A periodic background task (probe loops). Dropping stops it.
pub struct TaskHandle {
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl TaskHandle {
    pub fn stop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(thread) = self.thread.take() {
            let _ = thread.join();
        }
    }
}

impl Drop for TaskHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Run `tick` every `interval` until stopped.
pub fn spawn_periodic<F>(name: &str, interval: Duration, tick: F) -> TaskHandle
where
    F: FnMut() + Send + 'static,
{
    let stop = Arc::new(AtomicBool::new(false));
    let task_stop = Arc::clone(&stop);
    let mut tick = tick;
    let thread = thread::Builder::new()
        .name(name.to_string())
        .spawn(move || {
            while !task_stop.load(Ordering::SeqCst) {
                thread::sleep(interval);
                if task_stop.load(Ordering::SeqCst) {
                    break;
                }
                tick();
            }
        })
        .expect("spawn periodic task");
    TaskHandle {
        stop,
        thread: Some(thread),
    }
}
