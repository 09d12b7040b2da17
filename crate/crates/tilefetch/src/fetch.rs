use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use urbanform_core::tilemath::TileCoord;

use crate::{FetchError, TileCache, TileSource};

/// Bytes of one tile and how they were obtained.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchedTile {
    pub coord: TileCoord,
    pub bytes: Vec<u8>,
    /// HTTP attempts made; zero for a cache hit.
    pub attempts: u32,
    pub from_cache: bool,
}

/// HTTP client bound to one [`TileSource`], enforcing its politeness settings.
pub struct Fetcher {
    source: TileSource,
    agent: ureq::Agent,
    next_slot: Mutex<Instant>,
    requests: AtomicU64,
}

enum Attempt {
    Done(Vec<u8>),
    Permanent(Option<u16>, String),
    Retry(String),
}

impl Fetcher {
    pub fn new(source: TileSource) -> Result<Self, FetchError> {
        source.validate()?;
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_millis(source.timeout_ms)))
            .build()
            .into();
        Ok(Self {
            source,
            agent,
            next_slot: Mutex::new(Instant::now()),
            requests: AtomicU64::new(0),
        })
    }

    pub fn source(&self) -> &TileSource {
        &self.source
    }

    /// Network requests issued so far.
    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }

    fn wait_for_slot(&self) {
        let delay = Duration::from_millis(self.source.min_delay_ms);
        if delay.is_zero() {
            return;
        }
        let wait = {
            let mut next = self.next_slot.lock().expect("politeness lock poisoned");
            let now = Instant::now();
            let start = (*next).max(now);
            *next = start + delay;
            start - now
        };
        if !wait.is_zero() {
            thread::sleep(wait);
        }
    }

    fn attempt(&self, url: &str) -> Attempt {
        self.wait_for_slot();
        self.requests.fetch_add(1, Ordering::SeqCst);
        let mut req = self.agent.get(url);
        for (k, v) in &self.source.headers {
            req = req.header(k, v);
        }
        match req.call() {
            Ok(mut resp) => {
                let status = resp.status().as_u16();
                match status {
                    200..=299 => match resp.body_mut().read_to_vec() {
                        Ok(bytes) => Attempt::Done(bytes),
                        Err(e) => Attempt::Retry(format!("reading body: {e}")),
                    },
                    400..=499 => Attempt::Permanent(Some(status), format!("HTTP {status}")),
                    _ => Attempt::Retry(format!("HTTP {status}")),
                }
            }
            Err(e) => Attempt::Retry(e.to_string()),
        }
    }

    /// Returns the tile from `cache` if present, otherwise downloads, verifies
    /// and caches it. 4xx responses fail at once; 5xx and transport errors are
    /// retried with exponential backoff.
    pub fn fetch_tile(&self, coord: TileCoord, cache: &TileCache) -> Result<FetchedTile, FetchError> {
        self.source.check_zoom(coord)?;
        let (id, ext) = (&self.source.id, &self.source.format);
        if let Some(entry) = cache.get(id, coord, ext)? {
            return Ok(FetchedTile {
                coord,
                bytes: entry.bytes,
                attempts: 0,
                from_cache: true,
            });
        }
        let url = self.source.url(coord);
        let policy = self.source.retry;
        let mut last = String::new();
        for attempt in 1..=policy.max_attempts {
            if attempt > 1 {
                let backoff = policy.backoff_base_ms.saturating_mul(1 << (attempt - 2).min(16));
                thread::sleep(Duration::from_millis(backoff));
            }
            match self.attempt(&url) {
                Attempt::Done(bytes) => {
                    if let Err(e) = image::load_from_memory(&bytes) {
                        return Err(FetchError::Content {
                            coord,
                            reason: format!("payload is not a decodable image: {e}"),
                        });
                    }
                    cache.put(id, coord, ext, &bytes)?;
                    return Ok(FetchedTile {
                        coord,
                        bytes,
                        attempts: attempt,
                        from_cache: false,
                    });
                }
                Attempt::Permanent(status, reason) => {
                    return Err(FetchError::Permanent {
                        coord,
                        status,
                        reason,
                        attempts: attempt,
                    })
                }
                Attempt::Retry(reason) => last = reason,
            }
        }
        Err(FetchError::Transient {
            coord,
            reason: last,
            attempts: policy.max_attempts,
        })
    }

    /// Fetches every coordinate with at most `max_parallel` requests in flight.
    /// Results come back in input order.
    pub fn fetch_all(&self, coords: &[TileCoord], cache: &TileCache) -> Vec<Result<FetchedTile, FetchError>> {
        let next = AtomicUsize::new(0);
        let results: Vec<Mutex<Option<Result<FetchedTile, FetchError>>>> = coords.iter().map(|_| Mutex::new(None)).collect();
        let workers = self.source.max_parallel.min(coords.len()).max(1);
        thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&coord) = coords.get(i) else { break };
                    let r = self.fetch_tile(coord, cache);
                    *results[i].lock().expect("result slot poisoned") = Some(r);
                });
            }
        });
        results
            .into_iter()
            .map(|m| m.into_inner().expect("result slot poisoned").expect("every slot filled"))
            .collect()
    }
}
