//! Starts the annotation endpoint on a generated folder, uploads a scribble
//! and tags over HTTP, and reads back the manifest it builds.
//!
//! ```text
//! cargo run --example annotate_server
//! ```

use std::io::{Read, Write};
use std::net::TcpStream;

use scribsal::dataset::{encode_scribble_mask, ManifestFile};
use scribsal::pipeline::annotate::AnnotateServer;
use scribsal::synthetic::{synthetic_sample, Shape};

fn request(port: u16, method: &str, path: &str, body: &[u8]) -> (u16, Vec<u8>) {
    let mut s = TcpStream::connect(("127.0.0.1", port)).expect("server reachable");
    write!(s, "{method} {path} HTTP/1.1\r\nHost: localhost\r\nContent-Length: {}\r\nConnection: close\r\n\r\n", body.len()).unwrap();
    s.write_all(body).unwrap();
    let mut reply = Vec::new();
    s.read_to_end(&mut reply).unwrap();
    let split = reply.windows(4).position(|w| w == b"\r\n\r\n").expect("header end");
    let status = String::from_utf8_lossy(&reply[9..12]).parse().unwrap();
    (status, reply[split + 4..].to_vec())
}

fn main() -> scribsal::Result<()> {
    let dir = tempfile_dir();
    let images = dir.join("images");
    std::fs::create_dir_all(&images).map_err(|e| scribsal::Error::io(&images, e))?;
    let sample = synthetic_sample(48, Shape::Square, 0);
    sample.image.save(images.join("ship_01.png"))?;
    std::fs::write(dir.join("categories.json"), r#"["square", "disk"]"#).map_err(|e| scribsal::Error::io(&dir, e))?;

    let server = AnnotateServer::bind(&dir, 0)?.spawn();
    let port = server.port;
    println!("serving {} on port {port}", dir.display());
    let (code, body) = request(port, "GET", "/api/tasks", b"");
    println!("GET /api/tasks -> {code} {}", String::from_utf8_lossy(&body));
    let (code, _) = request(port, "PUT", "/api/scribbles/ship_01", &encode_scribble_mask(&sample.scribble));
    println!("PUT scribble -> {code}");
    let (code, _) = request(port, "PUT", "/api/tags/ship_01", br#"["square"]"#);
    println!("PUT tags -> {code}");
    let (code, body) = request(port, "GET", "/api/manifest", b"");
    let manifest: ManifestFile = serde_json::from_slice(&body).expect("manifest json");
    println!("GET /api/manifest -> {code}, {} sample(s), categories {:?}", manifest.samples.len(), manifest.categories);
    server.stop();
    Ok(())
}

fn tempfile_dir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("scribsal-annotate-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}
