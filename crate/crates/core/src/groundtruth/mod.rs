//! Dot annotations to ground-truth density maps, plus image ingestion.

mod annotation;
mod dataset;
mod density;
mod dmap;
mod image;

pub use annotation::{parse_annotations, write_annotations, DotAnnotation, Point};
pub use dataset::{load_dataset, load_sample, Sample};
pub use density::{
    density_map_from_points, downsample_gt, generate_density_map, DensityMap, Resolution,
};
pub use dmap::{
    dmap_from_bytes, dmap_to_bytes, heat_pixels, read_dmap, write_density_csv, write_dmap,
    write_heat_pgm, DMAP_MAGIC,
};
pub use image::{load_image, normalize_image, write_image};
