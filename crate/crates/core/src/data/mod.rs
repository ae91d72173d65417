//! Image I/O, paired datasets, patch sampling and synthetic degradations.

pub mod dataset;
pub mod degrade;
pub mod image_io;
pub mod patch;

pub use dataset::{load_pairs, Dataset, DatasetSpec, Task};
pub use degrade::{add_gaussian_noise, bicubic_down_up, dual_pixel_views, synthetic_scene, Degradation};
pub use image_io::{load_image, quantize, save_image};
pub use patch::{
    crop, dual_pixel_concat, flip_augment, flip_horizontal, flip_vertical, pad_to_multiple, sample_patch, stack,
    ImagePair,
};
