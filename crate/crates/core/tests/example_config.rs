use std::path::PathBuf;

use dimnmt::RunConfig;

#[test]
fn example_config_documents_the_defaults() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/example.toml");
    let mut run = RunConfig::load(path.as_ref()).unwrap();
    assert_eq!(run.data.train_source, Some(PathBuf::from("data/train.src")));
    run.data.train_source = None;
    run.data.train_target = None;
    run.seed = 0;
    assert_eq!(run, RunConfig::default());
}
