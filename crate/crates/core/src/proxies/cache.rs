use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use super::learner::{FrameTag, SceneProxySet};
use crate::error::{Error, Result};

/// What the cache keeps per frame: world-frame proxies, plus the frame's
/// world-frame points so that global queries can be resampled over the
/// growing scene.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub proxies: Arc<SceneProxySet>,
    pub points: Arc<Vec<[f64; 3]>>,
}

/// Per-stream store of already extracted frames, keyed by frame index.
#[derive(Debug, Default)]
pub struct ProxyCache {
    streams: HashMap<String, BTreeMap<usize, CacheEntry>>,
}

impl ProxyCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores a frame's world-frame proxies. Indices must strictly increase.
    pub fn cache_put(&mut self, stream: &str, frame_index: usize, proxies: SceneProxySet) -> Result<()> {
        self.put_entry(stream, frame_index, proxies, Vec::new())
    }

    pub fn put_entry(
        &mut self,
        stream: &str,
        frame_index: usize,
        proxies: SceneProxySet,
        points: Vec<[f64; 3]>,
    ) -> Result<()> {
        if proxies.frame != FrameTag::World {
            return Err(Error::State("cache holds world-frame proxies only".into()));
        }
        let frames = self.streams.entry(stream.to_string()).or_default();
        if let Some((&last, _)) = frames.last_key_value() {
            if frame_index <= last {
                return Err(Error::Ordering { stream: stream.to_string(), last, got: frame_index });
            }
        }
        frames.insert(frame_index, CacheEntry { proxies: Arc::new(proxies), points: Arc::new(points) });
        Ok(())
    }

    /// Every stored set with index ≤ `upto`, in index order.
    pub fn cache_collect(&self, stream: &str, upto: usize) -> Result<Vec<Arc<SceneProxySet>>> {
        Ok(self.entries(stream, upto)?.into_iter().map(|e| e.proxies.clone()).collect())
    }

    pub fn entries(&self, stream: &str, upto: usize) -> Result<Vec<&CacheEntry>> {
        let frames = self
            .streams
            .get(stream)
            .ok_or_else(|| Error::Lookup(format!("unknown stream '{stream}'")))?;
        Ok(frames.range(..=upto).map(|(_, e)| e).collect())
    }

    pub fn len(&self, stream: &str) -> usize {
        self.streams.get(stream).map_or(0, BTreeMap::len)
    }

    pub fn last_index(&self, stream: &str) -> Option<usize> {
        self.streams.get(stream).and_then(|f| f.last_key_value().map(|(k, _)| *k))
    }

    pub fn proxy_count(&self, stream: &str) -> usize {
        self.streams.get(stream).map_or(0, |f| f.values().map(|e| e.proxies.len()).sum())
    }

    pub fn clear(&mut self, stream: &str) {
        self.streams.remove(stream);
    }
}
