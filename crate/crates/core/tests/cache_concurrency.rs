use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use attnsum_core::context::DatasetKind;
use attnsum_core::pipeline::{
    CacheKey, CompressedProfile, Method, ModelLabels, ProfileCache, ProfileConfig, PutOutcome,
};

fn config(max_tokens: usize) -> ProfileConfig {
    ProfileConfig {
        alpha: None,
        layer: None,
        max_tokens,
        seed: None,
        template_id: None,
        models: ModelLabels::default(),
        temperature: None,
    }
}

fn profile(user: &str, text: &str) -> CompressedProfile {
    CompressedProfile {
        user_id: user.into(),
        method: Method::Truncate,
        config: config(50),
        text: text.into(),
        token_count: text.split_whitespace().count(),
        audit: vec![],
        flags: BTreeSet::new(),
        created_at: "1970-01-01T00:00:00Z".into(),
    }
}

#[test]
fn thousand_concurrent_puts_keep_first_write() {
    let dir = tempfile::tempdir().unwrap();
    let cache = ProfileCache::open(dir.path()).unwrap();
    let hash = config(50).hash(DatasetKind::Selection, Method::Truncate);
    let key = |u: usize| CacheKey {
        user_id: format!("u{u}"),
        method: Method::Truncate,
        config_hash: hash.clone(),
    };
    let written: Mutex<BTreeMap<String, String>> = Mutex::new(BTreeMap::new());
    std::thread::scope(|s| {
        for t in 0..10 {
            let (cache, written, key) = (&cache, &written, &key);
            s.spawn(move || {
                for i in 0..100 {
                    let u = (t * 100 + i) % 500;
                    let text = format!("text from thread {t}");
                    let p = profile(&format!("u{u}"), &text);
                    if cache.put(&key(u), &p).unwrap() == PutOutcome::Written {
                        let prev = written.lock().unwrap().insert(p.user_id.clone(), text);
                        assert!(prev.is_none(), "second write for u{u}");
                    }
                }
            });
        }
    });
    let written = written.into_inner().unwrap();
    assert_eq!(written.len(), 500);

    let files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(files.len(), 1);
    let body = std::fs::read_to_string(dir.path().join(key(0).file_name())).unwrap();
    assert_eq!(body.lines().count(), 500);

    let reopened = ProfileCache::open(dir.path()).unwrap();
    for (u, text) in &written {
        let k = CacheKey {
            user_id: u.clone(),
            method: Method::Truncate,
            config_hash: hash.clone(),
        };
        assert_eq!(&reopened.get(&k).unwrap().unwrap().text, text);
    }
    assert_eq!(reopened.entries().unwrap().len(), 500);
}
