//! Writes the synthetic fixture: corpus, seeded weights and a run config.

use std::path::{Path, PathBuf};

use icono_core::fixture::{calibration_images, generate_corpus, generate_weights, FixtureSpec};

use crate::error::{CliError, ResultExt};

pub const CONFIG_FILE: &str = "fixture.toml";
pub const DATA_DIR: &str = "data";
pub const WEIGHTS_DIR: &str = "weights";
/// Backbone input side used by the fixture config.
pub const FIXTURE_INPUT_SIZE: u32 = 112;
pub const FIXTURE_STYLE_SIDE: u32 = 64;

/// Run configuration for the fixture, tuned to finish quickly on one CPU.
pub fn fixture_config(seed: u64) -> String {
    format!(
        r#"seed = {seed}
data_root = "{DATA_DIR}"
output_root = "runs"

[data]
annotated_manifest = "annotated.csv"
content_manifest = "content.csv"
test_per_class = 8

[style]
method = "adain"
encoder_weights = "{WEIGHTS_DIR}/adain_encoder.safetensors"
decoder_weights = "{WEIGHTS_DIR}/adain_decoder.safetensors"
short_side = {FIXTURE_STYLE_SIDE}
alpha = 1.0
per_gender = 4
test_fraction = 0.25

[features]
object_weights = "{WEIGHTS_DIR}/resnet50_object_recognition.safetensors"
face_weights = "{WEIGHTS_DIR}/resnet50_face_identification.safetensors"
input_size = {FIXTURE_INPUT_SIZE}
batch_size = 16

[bench]
c = [0.1, 1.0, 10.0]
gamma = [0.0001, 0.001]
n_estimators = [10, 30]
logistic_c = [1.0]
cv_folds = 3
standardize = true

[train]
learning_rate = 0.001
momentum = 0.9
batch_size = 8
val_fraction = 0.2
early_stop_tolerance = 0.001
early_stop_patience = 8
max_epochs = 30
shear_range = 0.1
shift_range = 0.05
rotation_range = 5.0
horizontal_flip = true
trainable = "head"

[cam]
only_correct = true
pipelines = ["A", "C"]
"#
    )
}

/// Generates corpus, weights and config under `dir`; returns the config path.
pub fn write_fixture(dir: &Path, spec: &FixtureSpec) -> Result<PathBuf, CliError> {
    let s = "fixture";
    let data = dir.join(DATA_DIR);
    let corpus = generate_corpus(&data, spec).in_stage(s)?;
    let calibration = calibration_images(&corpus, 32).in_stage(s)?;
    generate_weights(
        &data.join(WEIGHTS_DIR),
        spec.seed,
        FIXTURE_INPUT_SIZE,
        FIXTURE_STYLE_SIDE,
        &calibration,
    )
    .in_stage(s)?;
    let cfg = dir.join(CONFIG_FILE);
    std::fs::write(&cfg, fixture_config(spec.seed)).in_stage(s)?;
    Ok(cfg)
}
