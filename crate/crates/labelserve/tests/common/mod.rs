#![allow(dead_code)]

use std::collections::BTreeMap;

use malkit::datagen::Dataset;
use malkit::engine::{ExperimentConfig, TrainConfig};
use malkit_labelserve::{AuditLog, Session};

/// K=4 blobs, 96 training rows, 4 initially labeled, 3 labels per round.
pub const SMALL: &str = "
dataset = blobs
classes = 4
per_class = 30
dim = 4
spread = 0.2
test_fraction = 0.2
initial_fraction = 0.05
budget = 3
epochs = 2
task_epochs = 2
batch_size = 16
entropy_weight = 0.1
timing = false
";

pub fn setup() -> (TrainConfig, Dataset) {
    let cfg = ExperimentConfig::parse(SMALL).unwrap();
    let data = cfg.data.load().unwrap();
    (cfg.train, data)
}

pub fn session() -> Session {
    let (cfg, data) = setup();
    Session::open(cfg, &data, 7, AuditLog::in_memory()).unwrap()
}

/// True labels for `ids`, looked up among the training rows.
pub fn truth(data: &Dataset, ids: &[usize]) -> BTreeMap<usize, usize> {
    let train = data.train();
    ids.iter().map(|&i| (i, train.labels[i])).collect()
}
