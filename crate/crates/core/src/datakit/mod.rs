//! Synthetic multi-view garment data, grouped-directory ingestion and sample construction.

pub mod dataset;
pub mod image;
pub mod pairs;
pub mod render;
pub mod view;

pub use dataset::{
    dataset_scenes, generate_dataset, load_grouped_dataset, DatasetManifest, Exclusion, ImageGroup,
    ImageSource, LoadedDataset, ManifestGroup, DATASET_IMAGE_SIZE, MANIFEST_FILE,
};
pub use image::{stack_images, ImageTensor};
pub use pairs::{make_all_pairs, make_pairs, split_dataset, PairingTask, TrainingSample};
pub use render::{render_scene, silhouette_mask, SceneSpec, ShapeClass, NUM_SHAPE_CLASSES};
pub use view::ViewLabel;
