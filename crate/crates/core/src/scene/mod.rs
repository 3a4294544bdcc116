//! Scene representation learned from pseudo scene labels: pool construction,
//! triplet sampling, the bilinear scorer, the encoder and its training loop.

mod model;
mod pools;
mod train;

pub use model::{
    bilinear_score, bilinear_score_rows, contrastive_loss, contrastive_loss_tape, encode_rows,
    extract_scene_feature, raw_scene_input, BilinearScorer, ContrastLoss, EncoderIds,
    SceneEncoderParams, ENCODER_BIAS, ENCODER_WEIGHT, SCORER_WEIGHT,
};
pub use pools::{
    build_pools, labels_from_records, ContrastPools, PoolConfig, PseudoSceneLabels, SkipRecord,
    Triplet,
};
pub use train::{
    evaluate_triplets, holdout_split, initial_params, train_contrast, ContrastConfig, ContrastEpoch,
    ContrastState,
};
