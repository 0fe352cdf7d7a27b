//! HTTP plumbing shared by the CA and OCSP endpoints: a pausable server (for
//! outage injection) and a byte-counting HTTP/1.1 client.

use std::io;
use std::net::SocketAddr;
use std::pin::Pin;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::task::{Context, Poll};
use std::time::Duration;

use axum::Router;
use bytes::Bytes;
use http_body_util::{BodyExt, Full};
use hyper::client::conn::http1::SendRequest;
use hyper::{header, Request, StatusCode, Uri};
pub use hyper::Method;
use hyper_util::rt::TokioIo;
use thiserror::Error;
use tokio::io::{AsyncRead, AsyncWrite, ReadBuf};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{oneshot, Mutex};
use tokio::task::JoinHandle;

#[derive(Debug, Error)]
#[error("cannot bind {addr}: {source}")]
pub struct BindError {
    pub addr: SocketAddr,
    #[source]
    pub source: io::Error,
}

struct Running {
    stop: oneshot::Sender<()>,
    task: JoinHandle<()>,
}

/// A server whose listener can be closed and reopened on the same port.
/// While paused, connection attempts are refused by the kernel.
pub struct HttpServer {
    addr: SocketAddr,
    router: Router,
    running: Mutex<Option<Running>>,
}

impl HttpServer {
    pub async fn bind(addr: SocketAddr, router: Router) -> Result<Self, BindError> {
        let listener = TcpListener::bind(addr).await.map_err(|source| BindError { addr, source })?;
        let addr = listener.local_addr().map_err(|source| BindError { addr, source })?;
        let server = Self { addr, router, running: Mutex::new(None) };
        *server.running.lock().await = Some(server.start(listener));
        Ok(server)
    }

    fn start(&self, listener: TcpListener) -> Running {
        let (stop, stopped) = oneshot::channel::<()>();
        let router = self.router.clone();
        let task = tokio::spawn(async move {
            let shutdown = async move {
                let _ = stopped.await;
            };
            if let Err(e) = axum::serve(listener, router).with_graceful_shutdown(shutdown).await {
                tracing::warn!(error = %e, "server loop ended with error");
            }
        });
        Running { stop, task }
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self, path: &str) -> String {
        format!("http://{}{}", self.addr, path)
    }

    pub async fn is_running(&self) -> bool {
        self.running.lock().await.is_some()
    }

    /// Stop accepting and release the port. In-flight requests get up to a
    /// second to finish.
    pub async fn pause(&self) {
        let running = self.running.lock().await.take();
        if let Some(Running { stop, mut task }) = running {
            let _ = stop.send(());
            if tokio::time::timeout(Duration::from_secs(1), &mut task).await.is_err() {
                task.abort();
            }
        }
    }

    pub async fn resume(&self) -> Result<(), BindError> {
        let mut running = self.running.lock().await;
        if running.is_none() {
            let listener = TcpListener::bind(self.addr)
                .await
                .map_err(|source| BindError { addr: self.addr, source })?;
            *running = Some(self.start(listener));
        }
        Ok(())
    }

    pub async fn shutdown(&self) {
        self.pause().await;
    }
}

#[derive(Debug, Error)]
pub enum HttpError {
    #[error("invalid URL {0}")]
    InvalidUrl(String),
    #[error("connect failed: {0}")]
    Connect(#[source] io::Error),
    #[error("request timed out")]
    Timeout,
    #[error("HTTP protocol error: {0}")]
    Protocol(String),
}

/// One request/response pair with on-the-wire byte counts (start line,
/// headers and body in both directions).
#[derive(Debug, Clone)]
pub struct Exchange {
    pub status: StatusCode,
    pub content_type: Option<String>,
    pub body: Bytes,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

impl Exchange {
    pub fn total_bytes(&self) -> u64 {
        self.bytes_sent + self.bytes_received
    }
}

#[derive(Default)]
struct Counters {
    sent: AtomicU64,
    received: AtomicU64,
}

struct CountingStream<S> {
    inner: S,
    counters: Arc<Counters>,
}

impl<S: AsyncRead + Unpin> AsyncRead for CountingStream<S> {
    fn poll_read(mut self: Pin<&mut Self>, cx: &mut Context<'_>, buf: &mut ReadBuf<'_>) -> Poll<io::Result<()>> {
        let before = buf.filled().len();
        let res = Pin::new(&mut self.inner).poll_read(cx, buf);
        let n = buf.filled().len() - before;
        self.counters.received.fetch_add(n as u64, Ordering::Relaxed);
        res
    }
}

impl<S: AsyncWrite + Unpin> AsyncWrite for CountingStream<S> {
    fn poll_write(mut self: Pin<&mut Self>, cx: &mut Context<'_>, buf: &[u8]) -> Poll<io::Result<usize>> {
        let res = Pin::new(&mut self.inner).poll_write(cx, buf);
        if let Poll::Ready(Ok(n)) = &res {
            self.counters.sent.fetch_add(*n as u64, Ordering::Relaxed);
        }
        res
    }

    fn poll_flush(mut self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<io::Result<()>> {
        Pin::new(&mut self.inner).poll_flush(cx)
    }

    fn poll_shutdown(mut self: Pin<&mut Self>, cx: &mut Context<'_>) -> Poll<io::Result<()>> {
        Pin::new(&mut self.inner).poll_shutdown(cx)
    }
}

struct Target {
    authority: String,
    path: String,
}

fn parse_target(url: &str) -> Result<Target, HttpError> {
    let uri: Uri = url.parse().map_err(|_| HttpError::InvalidUrl(url.to_string()))?;
    if uri.scheme_str() != Some("http") {
        return Err(HttpError::InvalidUrl(url.to_string()));
    }
    let authority = uri.authority().ok_or_else(|| HttpError::InvalidUrl(url.to_string()))?;
    let authority = if authority.port().is_some() { authority.to_string() } else { format!("{authority}:80") };
    let path = uri.path_and_query().map(|p| p.to_string()).unwrap_or_else(|| "/".into());
    Ok(Target { authority, path })
}

/// A single HTTP/1.1 connection that can carry many requests.
pub struct Connection {
    sender: SendRequest<Full<Bytes>>,
    target: Target,
    counters: Arc<Counters>,
    driver: JoinHandle<()>,
}

impl Connection {
    pub async fn open(url: &str) -> Result<Self, HttpError> {
        let target = parse_target(url)?;
        let stream = TcpStream::connect(&target.authority).await.map_err(HttpError::Connect)?;
        let _ = stream.set_nodelay(true);
        let counters = Arc::new(Counters::default());
        let io = TokioIo::new(CountingStream { inner: stream, counters: counters.clone() });
        let (sender, conn) = hyper::client::conn::http1::handshake(io)
            .await
            .map_err(|e| HttpError::Protocol(e.to_string()))?;
        let driver = tokio::spawn(async move {
            let _ = conn.await;
        });
        Ok(Self { sender, target, counters, driver })
    }

    /// Send one request and collect the whole response. Byte counts are the
    /// deltas attributable to this exchange.
    pub async fn send(
        &mut self,
        method: Method,
        content_type: Option<&str>,
        body: Bytes,
        close: bool,
    ) -> Result<Exchange, HttpError> {
        let sent0 = self.counters.sent.load(Ordering::Relaxed);
        let recv0 = self.counters.received.load(Ordering::Relaxed);
        let mut builder = Request::builder()
            .method(method.clone())
            .uri(self.target.path.as_str())
            .header(header::HOST, self.target.authority.as_str());
        if let Some(ct) = content_type {
            builder = builder.header(header::CONTENT_TYPE, ct);
        }
        if method == Method::POST {
            builder = builder.header(header::CONTENT_LENGTH, body.len());
        }
        if close {
            builder = builder.header(header::CONNECTION, "close");
        }
        let request = builder.body(Full::new(body)).map_err(|e| HttpError::Protocol(e.to_string()))?;
        self.sender.ready().await.map_err(|e| HttpError::Protocol(e.to_string()))?;
        let response = self.sender.send_request(request).await.map_err(|e| HttpError::Protocol(e.to_string()))?;
        let status = response.status();
        let content_type = response
            .headers()
            .get(header::CONTENT_TYPE)
            .and_then(|v| v.to_str().ok())
            .map(str::to_string);
        let body = response
            .into_body()
            .collect()
            .await
            .map_err(|e| HttpError::Protocol(e.to_string()))?
            .to_bytes();
        Ok(Exchange {
            status,
            content_type,
            body,
            bytes_sent: self.counters.sent.load(Ordering::Relaxed) - sent0,
            bytes_received: self.counters.received.load(Ordering::Relaxed) - recv0,
        })
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        self.driver.abort();
    }
}

async fn one_shot(url: &str, method: Method, content_type: Option<&str>, body: Bytes) -> Result<Exchange, HttpError> {
    let mut conn = Connection::open(url).await?;
    conn.send(method, content_type, body, true).await
}

pub async fn get(url: &str, timeout: Duration) -> Result<Exchange, HttpError> {
    tokio::time::timeout(timeout, one_shot(url, Method::GET, None, Bytes::new()))
        .await
        .map_err(|_| HttpError::Timeout)?
}

pub async fn post(url: &str, content_type: &str, body: Bytes, timeout: Duration) -> Result<Exchange, HttpError> {
    tokio::time::timeout(timeout, one_shot(url, Method::POST, Some(content_type), body))
        .await
        .map_err(|_| HttpError::Timeout)?
}
