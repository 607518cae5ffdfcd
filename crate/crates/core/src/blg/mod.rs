//! Boundary pseudo-label generation from image-level tags: an attention-
//! pooled classifier, class probability maps, trimaps and a sliding-window
//! boundary test.

mod attention;
mod classifier;
mod labels;
mod train;

pub use attention::{attention_pool, attention_pool_backward, multilabel_bce, AttentionPool};
pub use classifier::{Classifier, ClassifierSpec};
pub use labels::{
    boundary_from_trimap, cam_probabilities, is_boundary, trimap_from_cam, BoundaryCode, BoundaryConfig,
    BoundaryLabelMap, ProbabilityMaps, TriMap, TRIMAP_BACKGROUND, TRIMAP_UNCERTAIN,
};
pub use train::{
    boundary_for_image, generate_boundary_labels, generate_for_records, tag_accuracy, train_classifier,
    train_on_images, BlgTrainConfig, TaggedImage, TrainedClassifier,
};
