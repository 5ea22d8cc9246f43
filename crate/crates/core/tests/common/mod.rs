//! Shared fixtures: a small synthetic cytology dataset, config files and a
//! loopback server hosting the reference backends over HTTP.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use saic::backends::server::dispatch;
use saic::backends::BackendSet;
use saic::cellbank::CellType;
use saic::dataio::{export_dataset, Annotation, BoxF, Dataset, DatasetFormat, ImageEntry, MaskShape};
use saic::Raster;

pub const CATEGORIES: [&str; 3] = ["asch", "hsil", "lsil"];
pub const IMAGE_SIZE: u32 = 96;

fn hash(mut x: u64) -> u64 {
    x ^= x >> 33;
    x = x.wrapping_mul(0xff51afd7ed558ccd);
    x ^= x >> 33;
    x = x.wrapping_mul(0xc4ceb9fe1a85ec53);
    x ^ (x >> 33)
}

struct Cell {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    category: usize,
    cell_type: CellType,
}

fn ellipse_polygon(c: &Cell) -> Vec<f64> {
    (0..24)
        .flat_map(|k| {
            let t = k as f64 / 24.0 * std::f64::consts::TAU;
            [c.cx + c.rx * t.cos(), c.cy + c.ry * t.sin()]
        })
        .collect()
}

fn cells_for(image: usize) -> Vec<Cell> {
    let slots = [(24.0, 24.0), (70.0, 30.0), (44.0, 70.0)];
    slots
        .iter()
        .enumerate()
        .map(|(k, &(cx, cy))| {
            let h = hash((image * 31 + k) as u64);
            Cell {
                cx,
                cy,
                rx: 7.0 + (h % 6) as f64,
                ry: 6.0 + ((h >> 8) % 6) as f64,
                category: (image + k) % CATEGORIES.len(),
                cell_type: if (h >> 16).is_multiple_of(3) {
                    CellType::Clumps
                } else {
                    CellType::SingleCell
                },
            }
        })
        .collect()
}

/// Background tint alternates between two "staining styles".
fn render(image: usize, cells: &[Cell]) -> Raster {
    let style = image % 2;
    Raster::from_fn(IMAGE_SIZE, IMAGE_SIZE, 3, |x, y, c| {
        let n = (hash((image as u64) << 32 | (y as u64) << 16 | (x as u64) << 2 | c as u64) % 23) as i32;
        for cell in cells {
            let dx = (x as f64 + 0.5 - cell.cx) / cell.rx;
            let dy = (y as f64 + 0.5 - cell.cy) / cell.ry;
            if dx * dx + dy * dy <= 1.0 {
                let base = [[120, 60, 150], [90, 50, 120], [150, 90, 170]][cell.category][c as usize];
                let ring = if dx * dx + dy * dy < 0.3 { -40 } else { 0 };
                return (base + ring + n * 2 + style as i32 * 15).clamp(0, 255) as u8;
            }
        }
        let bg = if style == 0 { [226, 190, 215] } else { [205, 200, 232] }[c as usize];
        (bg + n - 11).clamp(0, 255) as u8
    })
}

/// Writes `dataset.json` plus `images/*.png` under `dir`; returns the
/// dataset path.
pub fn write_dataset(dir: &Path, images: usize) -> PathBuf {
    let mut ds = Dataset::new(CATEGORIES.iter().map(|s| s.to_string()).collect());
    std::fs::create_dir_all(dir.join("images")).unwrap();
    for i in 0..images {
        let cells = cells_for(i);
        let id = format!("img{i:03}");
        render(i, &cells)
            .save_png(&dir.join(format!("images/{id}.png")))
            .unwrap();
        ds.images.push(ImageEntry {
            id: id.clone(),
            path: format!("images/{id}.png"),
            width: IMAGE_SIZE,
            height: IMAGE_SIZE,
        });
        for c in &cells {
            ds.annotations.push(Annotation {
                image_id: id.clone(),
                bbox: BoxF {
                    x: c.cx - c.rx,
                    y: c.cy - c.ry,
                    w: 2.0 * c.rx,
                    h: 2.0 * c.ry,
                },
                category: CATEGORIES[c.category].to_string(),
                cell_type: c.cell_type,
                mask: Some(MaskShape::Polygon(vec![ellipse_polygon(c)])),
                area: (std::f64::consts::PI * c.rx * c.ry).round(),
            });
        }
    }
    let path = dir.join("dataset.json");
    export_dataset(&ds, DatasetFormat::CanonicalJson, &path).unwrap();
    path
}

pub struct ConfigOptions<'a> {
    pub seed: u64,
    pub expand_ratio: f64,
    pub workers: usize,
    pub backend: &'a str,
    pub endpoint: Option<&'a str>,
    pub extra: &'a str,
}

impl Default for ConfigOptions<'_> {
    fn default() -> Self {
        ConfigOptions {
            seed: 42,
            expand_ratio: 1.0,
            workers: 2,
            backend: "reference",
            endpoint: None,
            extra: "",
        }
    }
}

/// Writes `saic.toml` next to the dataset; returns its path.
pub fn write_config(dir: &Path, opts: &ConfigOptions) -> PathBuf {
    let http = opts
        .endpoint
        .map(|e| format!("[backend.http]\nendpoint = \"{e}\"\nretries = 0\nbackoff_ms = 1\ntimeout_secs = 20\n"))
        .unwrap_or_default();
    let text = format!(
        r#"[dataset]
path = "dataset.json"

[run]
seed = {seed}
output_dir = "run"
workers = {workers}

[bank]
min_per_category = 6
max_per_category = 10

[backend]
kind = "{backend}"
embed_dim = 32
{http}
[plan]
expand_ratio = {ratio}
{extra}
"#,
        seed = opts.seed,
        workers = opts.workers,
        backend = opts.backend,
        ratio = opts.expand_ratio,
        extra = opts.extra,
    );
    let path = dir.join("saic.toml");
    std::fs::write(&path, text).unwrap();
    path
}

/// Every file under `root` (relative path → bytes), skipping names in `skip`.
pub fn snapshot(root: &Path, skip: &[&str]) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                if !skip.contains(&rel.as_str()) {
                    out.insert(rel, std::fs::read(&p).unwrap());
                }
            }
        }
    }
    out
}

/// Optional override: given (path, attempt number for that path), return a
/// canned (status, body) instead of dispatching.
pub type Fault = dyn Fn(&str, usize) -> Option<(u16, String)> + Send + Sync;

/// Loopback HTTP server dispatching `/v1/*` to the reference backends.
pub struct FixtureServer {
    server: Arc<tiny_http::Server>,
    handle: Option<JoinHandle<()>>,
    pub url: String,
    hits: Arc<Mutex<BTreeMap<String, usize>>>,
    pub auth_headers: Arc<Mutex<Vec<Option<String>>>>,
    in_flight: Arc<AtomicUsize>,
    pub max_in_flight: Arc<AtomicUsize>,
}

impl FixtureServer {
    pub fn start(fault: Option<Box<Fault>>) -> FixtureServer {
        Self::start_with(BackendSet::reference(32), fault)
    }

    pub fn start_with(backends: BackendSet, fault: Option<Box<Fault>>) -> FixtureServer {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
        let port = server.server_addr().to_ip().unwrap().port();
        let hits: Arc<Mutex<BTreeMap<String, usize>>> = Arc::default();
        let auth: Arc<Mutex<Vec<Option<String>>>> = Arc::default();
        let in_flight = Arc::new(AtomicUsize::new(0));
        let max_in_flight = Arc::new(AtomicUsize::new(0));
        let fault: Arc<Option<Box<Fault>>> = Arc::new(fault);
        let handle = {
            let server = server.clone();
            let (hits, auth, in_flight, max_in_flight) =
                (hits.clone(), auth.clone(), in_flight.clone(), max_in_flight.clone());
            std::thread::spawn(move || {
                for mut request in server.incoming_requests() {
                    let backends = backends.clone();
                    let (hits, auth, fault) = (hits.clone(), auth.clone(), fault.clone());
                    let (in_flight, max_in_flight) = (in_flight.clone(), max_in_flight.clone());
                    std::thread::spawn(move || {
                        let now = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                        max_in_flight.fetch_max(now, Ordering::SeqCst);
                        let path = request.url().to_string();
                        let attempt = {
                            let mut h = hits.lock().unwrap();
                            let n = h.entry(path.clone()).or_insert(0);
                            *n += 1;
                            *n
                        };
                        auth.lock().unwrap().push(
                            request
                                .headers()
                                .iter()
                                .find(|h| h.field.equiv("Authorization"))
                                .map(|h| h.value.to_string()),
                        );
                        let mut body = Vec::new();
                        request.as_reader().read_to_end(&mut body).unwrap();
                        let (status, text) = match fault.as_ref().as_ref().and_then(|f| f(&path, attempt)) {
                            Some(r) => r,
                            None => dispatch(&backends, &path, &body),
                        };
                        let header =
                            tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).unwrap();
                        let response = tiny_http::Response::from_string(text)
                            .with_status_code(status)
                            .with_header(header);
                        let _ = request.respond(response);
                        in_flight.fetch_sub(1, Ordering::SeqCst);
                    });
                }
            })
        };
        FixtureServer {
            server,
            handle: Some(handle),
            url: format!("http://127.0.0.1:{port}"),
            hits,
            auth_headers: auth,
            in_flight,
            max_in_flight,
        }
    }

    pub fn hits(&self, path: &str) -> usize {
        self.hits.lock().unwrap().get(path).copied().unwrap_or(0)
    }
}

impl Drop for FixtureServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// Path to the compiled `saic` binary.
pub fn saic_bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_saic"))
}

pub fn run_saic(config: &Path, args: &[&str]) -> std::process::Output {
    std::process::Command::new(saic_bin())
        .arg("--config")
        .arg(config)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}
