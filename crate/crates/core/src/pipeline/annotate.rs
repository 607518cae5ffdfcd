//! Local HTTP endpoint backing the browser annotator.
//!
//! Layout under the served directory: `images/` (inputs), `scribbles/`
//! (uploaded masks), `tags/<id>.json` (category names) and an optional
//! `categories.json` listing the category table.
//!
//! | Route | Effect |
//! |---|---|
//! | `GET /` | `index.html` from the directory, if present |
//! | `GET /api/tasks` | categories and per-image annotation state |
//! | `GET /files/<path>` | a file below the directory |
//! | `PUT /api/scribbles/<id>` | store a palette PNG after decoding it |
//! | `PUT /api/tags/<id>` | store a JSON list of category names |
//! | `GET /api/manifest` | manifest covering every annotated image |

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use tiny_http::{Header, Method, Request, Response, Server};

use crate::dataset::{decode_scribble_mask, ManifestFile, SampleEntry, Split};
use crate::error::{Error, Result};
use crate::metrics::images_by_id;

pub struct AnnotateServer {
    dir: PathBuf,
    server: Arc<Server>,
}

#[derive(Serialize)]
struct Task {
    id: String,
    image: String,
    scribble: Option<String>,
    tags: Vec<String>,
}

#[derive(Serialize)]
struct Tasks {
    categories: Vec<String>,
    tasks: Vec<Task>,
}

type Reply = Response<Cursor<Vec<u8>>>;

fn json_reply(status: u16, body: &impl Serialize) -> Reply {
    let text = serde_json::to_vec(body).expect("reply serialises");
    Response::from_data(text)
        .with_status_code(status)
        .with_header(Header::from_bytes("Content-Type", "application/json").expect("static header"))
}

fn error_reply(status: u16, msg: impl Into<String>) -> Reply {
    json_reply(status, &serde_json::json!({ "error": msg.into() }))
}

fn content_type(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).unwrap_or("") {
        "png" => "image/png",
        "jpg" | "jpeg" => "image/jpeg",
        "json" => "application/json",
        "html" => "text/html; charset=utf-8",
        "js" => "text/javascript",
        "css" => "text/css",
        _ => "application/octet-stream",
    }
}

fn valid_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) && !id.starts_with('.')
}

impl AnnotateServer {
    /// Binds `127.0.0.1:<port>`; port 0 picks a free one.
    pub fn bind(dir: &Path, port: u16) -> Result<Self> {
        if !dir.is_dir() {
            return Err(Error::validation(format!("{} is not a directory", dir.display())));
        }
        let server = Server::http(("127.0.0.1", port))
            .map_err(|e| Error::io(dir, std::io::Error::other(e.to_string())))?;
        Ok(AnnotateServer {
            dir: dir.to_path_buf(),
            server: Arc::new(server),
        })
    }

    pub fn port(&self) -> u16 {
        self.server.server_addr().to_ip().map_or(0, |a| a.port())
    }

    /// Handles requests until the server is unblocked from another thread.
    pub fn run(&self) {
        for req in self.server.incoming_requests() {
            self.handle(req);
        }
    }

    /// Runs the server on a background thread.
    pub fn spawn(self) -> RunningServer {
        let server = self.server.clone();
        let port = self.port();
        let thread = std::thread::spawn(move || self.run());
        RunningServer { server, port, thread: Some(thread) }
    }

    fn images_dir(&self) -> PathBuf {
        let d = self.dir.join("images");
        if d.is_dir() {
            d
        } else {
            self.dir.clone()
        }
    }

    fn categories(&self) -> Vec<String> {
        for name in ["categories.json", "manifest.json"] {
            let Ok(text) = std::fs::read_to_string(self.dir.join(name)) else { continue };
            let Ok(v) = serde_json::from_str::<serde_json::Value>(&text) else { continue };
            let list = if v.is_array() { Some(&v) } else { v.get("categories") };
            if let Some(list) = list.and_then(|l| l.as_array()) {
                return list.iter().filter_map(|c| c.as_str().map(String::from)).collect();
            }
        }
        Vec::new()
    }

    fn rel(&self, path: &Path) -> String {
        path.strip_prefix(&self.dir).unwrap_or(path).to_string_lossy().replace('\\', "/")
    }

    fn tasks(&self) -> Result<Tasks> {
        let images: BTreeMap<String, PathBuf> = images_by_id(&self.images_dir())?;
        let tasks = images
            .into_iter()
            .map(|(id, path)| {
                let scribble = self.dir.join("scribbles").join(format!("{id}.png"));
                let tags = std::fs::read_to_string(self.dir.join("tags").join(format!("{id}.json")))
                    .ok()
                    .and_then(|t| serde_json::from_str(&t).ok())
                    .unwrap_or_default();
                Task {
                    image: self.rel(&path),
                    scribble: scribble.is_file().then(|| self.rel(&scribble)),
                    tags,
                    id,
                }
            })
            .collect();
        Ok(Tasks {
            categories: self.categories(),
            tasks,
        })
    }

    /// A manifest over the annotated images, loadable from the served directory.
    pub fn manifest_fragment(&self) -> Result<ManifestFile> {
        let t = self.tasks()?;
        let samples = t
            .tasks
            .into_iter()
            .filter(|task| task.scribble.is_some())
            .map(|task| SampleEntry {
                id: task.id,
                image: task.image,
                scribble: task.scribble,
                tags: (!task.tags.is_empty()).then_some(task.tags),
                split: Split::Train,
            })
            .collect();
        Ok(ManifestFile {
            name: "annotations".into(),
            root: ".".into(),
            categories: t.categories,
            samples,
        })
    }

    fn write_atomic(&self, sub: &str, name: &str, bytes: &[u8]) -> Result<()> {
        let dir = self.dir.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let tmp = dir.join(format!(".{name}.tmp"));
        let dst = dir.join(name);
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, &dst).map_err(|e| Error::io(&dst, e))
    }

    fn put_scribble(&self, id: &str, body: &[u8]) -> Reply {
        let Some(image) = images_by_id(&self.images_dir()).ok().and_then(|m| m.get(id).cloned()) else {
            return error_reply(404, format!("no image `{id}`"));
        };
        let mask = match decode_scribble_mask(body) {
            Ok(m) => m,
            Err(e) => return error_reply(400, e.to_string()),
        };
        let dims = image::image_dimensions(&image).map(|(w, h)| (w as usize, h as usize));
        if dims.ok() != Some((mask.width(), mask.height())) {
            return error_reply(400, "mask size does not match the image");
        }
        if mask.labeled_count() == 0 {
            return error_reply(422, "mask has no strokes");
        }
        if let Err(e) = self.write_atomic("scribbles", &format!("{id}.png"), body) {
            return error_reply(500, e.to_string());
        }
        use crate::dataset::ScribbleLabel::{Background, Foreground};
        json_reply(
            200,
            &serde_json::json!({
                "id": id,
                "foreground": mask.count(Foreground),
                "background": mask.count(Background),
            }),
        )
    }

    fn put_tags(&self, id: &str, body: &[u8]) -> Reply {
        let tags: Vec<String> = match serde_json::from_slice(body) {
            Ok(t) => t,
            Err(e) => return error_reply(400, format!("expected a JSON list of category names: {e}")),
        };
        let cats = self.categories();
        if let Some(bad) = tags.iter().find(|t| !cats.contains(t)) {
            return error_reply(400, format!("unknown category `{bad}`"));
        }
        let text = serde_json::to_vec(&tags).expect("tags serialise");
        match self.write_atomic("tags", &format!("{id}.json"), &text) {
            Ok(()) => json_reply(200, &serde_json::json!({ "id": id, "tags": tags })),
            Err(e) => error_reply(500, e.to_string()),
        }
    }

    fn get_file(&self, rel: &str) -> Reply {
        let rel = Path::new(rel);
        if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
            return error_reply(400, "invalid path");
        }
        let path = self.dir.join(rel);
        match std::fs::read(&path) {
            Ok(bytes) => Response::from_data(bytes)
                .with_header(Header::from_bytes("Content-Type", content_type(&path)).expect("static header")),
            Err(_) => error_reply(404, "not found"),
        }
    }

    fn route(&self, method: &Method, url: &str, body: &[u8]) -> Reply {
        let path = url.split('?').next().unwrap_or("");
        match (method, path) {
            (Method::Get, "/") => match std::fs::read(self.dir.join("index.html")) {
                Ok(b) => Response::from_data(b)
                    .with_header(Header::from_bytes("Content-Type", "text/html; charset=utf-8").expect("static header")),
                Err(_) => error_reply(404, "no index.html in the served directory; use /api/tasks"),
            },
            (Method::Get, "/api/tasks") => match self.tasks() {
                Ok(t) => json_reply(200, &t),
                Err(e) => error_reply(500, e.to_string()),
            },
            (Method::Get, "/api/manifest") => match self.manifest_fragment() {
                Ok(m) => json_reply(200, &m),
                Err(e) => error_reply(500, e.to_string()),
            },
            (Method::Get, p) if p.starts_with("/files/") => self.get_file(&p["/files/".len()..]),
            (Method::Put | Method::Post, p) if p.starts_with("/api/scribbles/") => {
                let id = &p["/api/scribbles/".len()..];
                if valid_id(id) {
                    self.put_scribble(id, body)
                } else {
                    error_reply(400, "invalid id")
                }
            }
            (Method::Put | Method::Post, p) if p.starts_with("/api/tags/") => {
                let id = &p["/api/tags/".len()..];
                if valid_id(id) {
                    self.put_tags(id, body)
                } else {
                    error_reply(400, "invalid id")
                }
            }
            _ => error_reply(404, "not found"),
        }
    }

    fn handle(&self, mut req: Request) {
        let mut body = Vec::new();
        let reply = match req.as_reader().read_to_end(&mut body) {
            Ok(_) => self.route(req.method(), req.url(), &body),
            Err(e) => error_reply(400, e.to_string()),
        };
        if let Err(e) = req.respond(reply) {
            log::warn!("failed to send response: {e}");
        }
    }
}

pub struct RunningServer {
    server: Arc<Server>,
    pub port: u16,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl RunningServer {
    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for RunningServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{encode_scribble_mask, load_manifest, ScribbleLabel, ScribbleMask};
    use crate::raster::RasterImage;
    use std::io::{Read, Write};
    use std::net::TcpStream;

    fn request(port: u16, method: &str, path: &str, body: &[u8]) -> (u16, Vec<u8>) {
        let mut s = TcpStream::connect(("127.0.0.1", port)).unwrap();
        write!(s, "{method} {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\nContent-Length: {}\r\n\r\n", body.len())
            .unwrap();
        s.write_all(body).unwrap();
        let mut out = Vec::new();
        s.read_to_end(&mut out).unwrap();
        let split = out.windows(4).position(|w| w == b"\r\n\r\n").unwrap();
        let head = String::from_utf8_lossy(&out[..split]).to_string();
        let status = head.split_whitespace().nth(1).unwrap().parse().unwrap();
        (status, out[split + 4..].to_vec())
    }

    #[test]
    fn upload_round_trip_and_manifest_fragment() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir_all(dir.path().join("images")).unwrap();
        RasterImage::from_fn(8, 6, |x, _| [x as f64 / 8.0; 3]).save(dir.path().join("images/a.png")).unwrap();
        RasterImage::from_fn(8, 6, |_, y| [y as f64 / 6.0; 3]).save(dir.path().join("images/b.png")).unwrap();
        std::fs::write(dir.path().join("categories.json"), r#"["cat","dog"]"#).unwrap();
        let running = AnnotateServer::bind(dir.path(), 0).unwrap().spawn();
        let port = running.port;

        let (st, body) = request(port, "GET", "/api/tasks", b"");
        assert_eq!(st, 200);
        let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
        assert_eq!(v["tasks"].as_array().unwrap().len(), 2);
        assert_eq!(v["categories"][1], "dog");

        let mut mask = ScribbleMask::unlabeled(8, 6);
        mask.set(1, 1, ScribbleLabel::Foreground);
        mask.set(2, 1, ScribbleLabel::Foreground);
        mask.set(7, 5, ScribbleLabel::Background);
        let png = encode_scribble_mask(&mask);
        let (st, body) = request(port, "PUT", "/api/scribbles/a", &png);
        assert_eq!(st, 200, "{}", String::from_utf8_lossy(&body));
        let v: serde_json::Value = serde_json::from_slice(&body).unwrap();
        assert_eq!((v["foreground"].as_u64(), v["background"].as_u64()), (Some(2), Some(1)));
        assert_eq!(request(port, "PUT", "/api/tags/a", br#"["dog"]"#).0, 200);
        assert_eq!(request(port, "PUT", "/api/tags/a", br#"["cow"]"#).0, 400);

        assert_eq!(request(port, "PUT", "/api/scribbles/b", &encode_scribble_mask(&ScribbleMask::unlabeled(8, 6))).0, 422);
        assert_eq!(request(port, "PUT", "/api/scribbles/b", &encode_scribble_mask(&ScribbleMask::unlabeled(4, 4))).0, 400);
        assert_eq!(request(port, "PUT", "/api/scribbles/zzz", &png).0, 404);
        assert_eq!(request(port, "PUT", "/api/scribbles/b", b"junk").0, 400);

        let (st, served) = request(port, "GET", "/files/scribbles/a.png", b"");
        assert_eq!(st, 200);
        assert_eq!(decode_scribble_mask(&served).unwrap(), mask);
        assert_eq!(request(port, "GET", "/files/../etc/passwd", b"").0, 400);

        let (st, body) = request(port, "GET", "/api/manifest", b"");
        assert_eq!(st, 200);
        std::fs::write(dir.path().join("fragment.json"), &body).unwrap();
        let m = load_manifest(dir.path().join("fragment.json")).unwrap();
        assert_eq!(m.samples.len(), 1);
        assert_eq!(m.samples[0].id, "a");
        assert_eq!(m.samples[0].tags.as_ref().unwrap().tags, [1].into());
        running.stop();
    }
}
