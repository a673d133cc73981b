//! Wall-clock comparison, kept in its own binary so no other test competes
//! for the CPU while it is measured. Uses the allocator the CLI ships with.

mod common;

use matscale::data::{save_jsonl, JsonlDataset};
use matscale::models::{Model, ModelConfig};
use matscale::training::{train_from_source, TrainConfig};

use common::records;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[test]
fn cached_epochs_beat_uncached_on_10k_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("10k.jsonl");
    save_jsonl(&path, &records(10_000, (2, 8), 12)).unwrap();
    let cfg = TrainConfig {
        batch_size: 256,
        epochs: 6,
        ..TrainConfig::default()
    };
    let fastest_later_epoch = |caching: bool| {
        let mut source = JsonlDataset::open(&path, caching).unwrap();
        let mut model = Model::new(ModelConfig::transformer(8, 0, 2, 8), 0).unwrap();
        let (rec, _) = train_from_source(&mut model, &mut source, &[], &cfg).unwrap();
        assert_eq!(source.parse_count(), if caching { 1 } else { 6 });
        // the first epoch parses in both modes; the minimum damps scheduler noise
        rec.epoch_times_s[1..]
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    };
    // alternate modes so warm-up effects hit both equally
    let (mut cached, mut uncached) = (f64::INFINITY, f64::INFINITY);
    for _ in 0..2 {
        cached = cached.min(fastest_later_epoch(true));
        uncached = uncached.min(fastest_later_epoch(false));
    }
    assert!(
        cached < uncached,
        "cached {cached}s vs uncached {uncached}s"
    );
}
