//! File formats: voxel archives, checkpoints, rasters and text tables.

mod archive;
mod checkpoint;
mod raster;
mod text;

pub use archive::VoxelArchive;
pub use checkpoint::{sha256_hex, Checkpoint};
pub use raster::{
    render_height_map, render_label_map, render_side_view, render_top_view, GrayImage, RgbImage,
};
pub use text::{
    csv_string, format_prompt_table, format_segment_map, pair_manifest, parse_numeric_csv,
    parse_prompt_table, parse_segment_map, read_segment_map, write_csv, PAIR_MANIFEST_HEADER,
};
