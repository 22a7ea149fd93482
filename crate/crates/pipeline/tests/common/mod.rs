#![allow(dead_code)]

use std::path::{Path, PathBuf};

use ltg_pipeline::{Profile, RunConfig};

pub fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/fixture50.txt")
}

/// Overrides that shrink every stage to a few seconds on the 50-sentence
/// fixture.
pub fn tiny_toml(train: &Path) -> String {
    format!(
        r#"seed = 11

[corpus]
train = "{}"
dev_fraction = 0.2
test_fraction = 0.2

[seqvae]
embed_dim = 8
hidden_dim = 16
latent_dim = 8
max_len = 16
epochs = 3
batch_size = 8

[latentgan]
selection_samples = 10

[latentgan.architecture]
noise_dim = 4
hidden_dim = 16
blocks = 1

[latentgan.training]
epochs = 3
batch_size = 8

[value_head]
hidden_dims = [8]
epochs = 3
batch_size = 8
samples = 40

[rlfinetune]
epochs = 3
batch_size = 8

[evalmetrics]
samples = 20

[ablation]
vae_epochs = 1
short_epochs = 2
long_epochs = 10
eval_samples = 20
"#,
        train.display()
    )
}

pub fn tiny_config() -> RunConfig {
    RunConfig::overlay(Profile::Desk, &tiny_toml(&fixture())).unwrap()
}

/// Desk settings with the 50-sentence fixture as the corpus.
pub fn fixture_desk_config() -> RunConfig {
    let toml = format!(
        "[corpus]\ntrain = \"{}\"\ndev_fraction = 0.2\ntest_fraction = 0.2\n",
        fixture().display()
    );
    RunConfig::overlay(Profile::Desk, &toml).unwrap()
}
