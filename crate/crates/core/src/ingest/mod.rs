//! File formats: ENVI rasters in, cluster maps / CSV / JSON out.

pub mod envi;
pub mod output;

pub use envi::{
    read_envi, read_envi_with_grid, read_header, read_labels, read_mask, read_raster,
    read_wavelength_sidecar, write_envi, write_labels, write_mask, write_raster, DataType,
    EnviHeader, Interleave, LabelRaster,
};
pub use output::{
    header_path_for, match_palette, read_cluster_map, write_cluster_map, write_json,
    write_means_csv, NO_DATA_U16,
};
