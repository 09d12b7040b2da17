#![allow(dead_code)]

use std::collections::{HashMap, VecDeque};
use std::io::Cursor;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use tiny_http::{Header, Response, Server};

/// Color of global pixel (gx, gy) in the synthetic tile world.
pub fn world_pixel(gx: u64, gy: u64) -> [u8; 3] {
    let (tx, ty) = (gx / 256, gy / 256);
    [(gx % 256) as u8, (gy % 256) as u8, ((tx * 7 + ty * 13) % 256) as u8]
}

pub fn world_tile_png(x: u32, y: u32) -> Vec<u8> {
    let img = image::RgbImage::from_fn(256, 256, |c, r| {
        image::Rgb(world_pixel(u64::from(x) * 256 + u64::from(c), u64::from(y) * 256 + u64::from(r)))
    });
    encode(img)
}

pub fn solid_png(rgb: [u8; 3]) -> Vec<u8> {
    encode(image::RgbImage::from_pixel(256, 256, image::Rgb(rgb)))
}

fn encode(img: image::RgbImage) -> Vec<u8> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png).unwrap();
    out.into_inner()
}

#[derive(Clone)]
pub struct Scripted {
    pub status: u16,
    pub body: Vec<u8>,
}

type Script = Arc<Mutex<HashMap<String, VecDeque<Scripted>>>>;

/// Local tile server. Paths `/{z}/{x}/{y}.png` serve [`world_tile_png`]
/// unless a scripted response queue exists for the path.
pub struct TileServer {
    server: Arc<Server>,
    pub port: u16,
    script: Script,
    pub requests: Arc<AtomicUsize>,
    in_flight: Arc<AtomicUsize>,
    pub max_in_flight: Arc<AtomicUsize>,
    handlers: Vec<thread::JoinHandle<()>>,
}

impl TileServer {
    pub fn start(delay: Duration) -> Self {
        let server = Arc::new(Server::http("127.0.0.1:0").unwrap());
        let port = server.server_addr().to_ip().unwrap().port();
        let script: Script = Arc::default();
        let requests = Arc::new(AtomicUsize::new(0));
        let in_flight = Arc::new(AtomicUsize::new(0));
        let max_in_flight = Arc::new(AtomicUsize::new(0));
        let handlers = (0..16)
            .map(|_| {
                let (server, script) = (server.clone(), script.clone());
                let (requests, in_flight, max_in_flight) = (requests.clone(), in_flight.clone(), max_in_flight.clone());
                thread::spawn(move || {
                    while let Ok(req) = server.recv() {
                        requests.fetch_add(1, Ordering::SeqCst);
                        let now = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                        max_in_flight.fetch_max(now, Ordering::SeqCst);
                        thread::sleep(delay);
                        let path = req.url().to_string();
                        let scripted = script.lock().unwrap().get_mut(&path).and_then(VecDeque::pop_front);
                        let reply = scripted.unwrap_or_else(|| default_reply(&path));
                        in_flight.fetch_sub(1, Ordering::SeqCst);
                        let header = Header::from_bytes("Content-Type", "image/png").unwrap();
                        let _ = req.respond(Response::from_data(reply.body).with_status_code(reply.status).with_header(header));
                    }
                })
            })
            .collect();
        Self {
            server,
            port,
            script,
            requests,
            in_flight,
            max_in_flight,
            handlers,
        }
    }

    pub fn url_template(&self) -> String {
        format!("http://127.0.0.1:{}/{{z}}/{{x}}/{{y}}.png", self.port)
    }

    pub fn script(&self, path: &str, replies: Vec<Scripted>) {
        self.script.lock().unwrap().insert(path.to_string(), replies.into());
    }

    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

fn default_reply(path: &str) -> Scripted {
    let parts: Vec<&str> = path.trim_start_matches('/').trim_end_matches(".png").split('/').collect();
    match parts[..] {
        [_, x, y] => match (x.parse(), y.parse()) {
            (Ok(x), Ok(y)) => Scripted {
                status: 200,
                body: world_tile_png(x, y),
            },
            _ => Scripted { status: 404, body: vec![] },
        },
        _ => Scripted { status: 404, body: vec![] },
    }
}

impl Drop for TileServer {
    fn drop(&mut self) {
        self.server.unblock();
        for _ in 0..self.handlers.len() {
            self.server.unblock();
        }
        for h in self.handlers.drain(..) {
            let _ = h.join();
        }
    }
}

pub fn temp_dir(name: &str) -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("urbanform-tf-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    std::fs::create_dir_all(&d).unwrap();
    d
}
