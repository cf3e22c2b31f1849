//! Shared helpers: stable hashing, slug keys, seed derivation, worker pool.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Hex-encoded SHA-256 of arbitrary bytes. Used for request fingerprints,
/// manifest hashes, and similarity memo keys; stable across platforms.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let digest = hasher.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

/// SHA-256 of a file's contents.
pub fn file_sha256(path: &std::path::Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    Ok(sha256_hex(&bytes))
}

/// Lowercase, underscore-separated key from free text.
/// Non-alphanumeric runs collapse to a single `_`; leading/trailing `_` trimmed.
pub fn slugify(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last_sep = true;
    for ch in text.chars() {
        if ch.is_ascii_alphanumeric() {
            out.push(ch.to_ascii_lowercase());
            last_sep = false;
        } else if !last_sep {
            out.push('_');
            last_sep = true;
        }
    }
    while out.ends_with('_') {
        out.pop();
    }
    if out.is_empty() {
        out.push_str("item");
    }
    out
}

/// Derive a child seed from a root seed and a label path.
///
/// All pipeline randomness flows from one root seed; children are keyed per
/// stage and per dialogue so results do not depend on batch ordering.
pub fn derive_seed(root: u64, labels: &[&str]) -> u64 {
    let digest = derive_digest(root, labels);
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Deterministic, platform-independent RNG for a label path under a root seed.
pub fn derive_rng(root: u64, labels: &[&str]) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(derive_digest(root, labels))
}

fn derive_digest(root: u64, labels: &[&str]) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    for label in labels {
        hasher.update([0x1f]);
        hasher.update(label.as_bytes());
    }
    hasher.finalize().into()
}

/// Extract the first JSON value from model output: direct parse, fenced
/// code block, or the first `{`/`[` onward. Prose without JSON yields None.
pub fn parse_json_lenient(text: &str) -> Option<serde_json::Value> {
    let mut body = text.trim();
    if let Some(start) = body.find("```") {
        let after = &body[start + 3..];
        let after = after.strip_prefix("json").unwrap_or(after);
        if let Some(end) = after.find("```") {
            body = after[..end].trim();
        }
    }
    if let Ok(value) = serde_json::from_str(body) {
        return Some(value);
    }
    let start = body.find(['{', '['])?;
    let mut stream = serde_json::Deserializer::from_str(&body[start..]).into_iter();
    match stream.next() {
        Some(Ok(value)) => Some(value),
        _ => None,
    }
}

/// Milliseconds since the Unix epoch, for audit timestamps.
pub fn now_ms() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Map `items` through `f` on a pool of `workers` threads, preserving input
/// order in the output. `workers <= 1` runs inline.
pub fn parallel_map<T, R, F>(items: Vec<T>, workers: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(T) -> R + Sync + Send,
{
    if workers <= 1 || items.len() <= 1 {
        return items.into_iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("worker pool construction");
    pool.install(|| {
        use rayon::prelude::*;
        items.into_par_iter().map(f).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::RngCore;

    #[test]
    fn slugify_collapses_and_trims() {
        assert_eq!(slugify("Verify Identity!"), "verify_identity");
        assert_eq!(slugify("  book -- flight  "), "book_flight");
        assert_eq!(slugify("___"), "item");
    }

    #[test]
    fn derived_seeds_differ_by_label() {
        assert_ne!(derive_seed(7, &["a"]), derive_seed(7, &["b"]));
        assert_eq!(derive_seed(7, &["a", "b"]), derive_seed(7, &["a", "b"]));
    }

    #[test]
    fn derived_rng_is_stable() {
        let mut a = derive_rng(42, &["stage", "3"]);
        let mut b = derive_rng(42, &["stage", "3"]);
        assert_eq!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn parallel_map_preserves_order() {
        let items: Vec<u32> = (0..100).collect();
        let out = parallel_map(items.clone(), 4, |x| x * 2);
        assert_eq!(out, items.iter().map(|x| x * 2).collect::<Vec<_>>());
    }

    #[test]
    fn sha256_is_stable() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn lenient_json_handles_fences_and_prose() {
        assert!(parse_json_lenient("plain prose, no structure").is_none());
        assert_eq!(
            parse_json_lenient("```json\n[1, 2]\n```").unwrap(),
            serde_json::json!([1, 2])
        );
        assert_eq!(
            parse_json_lenient("Sure! {\"a\": 1} hope that helps").unwrap(),
            serde_json::json!({"a": 1})
        );
    }
}
