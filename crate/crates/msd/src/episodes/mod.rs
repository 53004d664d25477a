//! Episodic data layer: dataset construction (synthetic generator and PPM
//! folder ingestion), N-way K-shot task sampling, and support-only
//! augmentation pipelines.

pub mod augment;
pub mod dataset;
pub mod image;
pub mod ppm;
pub mod synthetic;

pub use augment::{augment_batch, augment_views, AugmentationSpec, AugmentedTaskSet, ImageAugParams};
pub use dataset::{sample_task, Dataset, Modality, SyntheticInfo, Task};
pub use ppm::{load_image_folder, parse_ppm, write_ppm};
pub use synthetic::{generate_synthetic, SyntheticSpec};
