//! Cluster-map rendering, palette matching and tabular outputs.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::Serialize;

use super::envi::{read_raster, write_raster, DataType, EnviHeader};
use crate::cluster::map::{cycle_color, ClusterMap, Rgb, NO_DATA};
use crate::error::{Error, Result};
use crate::hsi::WavelengthGrid;

/// Raw-label value standing for [`NO_DATA`] in 16-bit label rasters.
pub const NO_DATA_U16: u16 = u16::MAX;

/// Header path paired with an ENVI data file (`x.img` -> `x.hdr`).
pub fn header_path_for(data_path: &Path) -> PathBuf {
    data_path.with_extension("hdr")
}

/// Writes the map as an 8-bit RGB PNG (no-data black) and as a 16-bit
/// unsigned BSQ ENVI raster of raw labels (no-data = 65535). The ENVI header
/// goes next to `envi_path` with a `.hdr` extension.
pub fn write_cluster_map(map: &ClusterMap, png_path: &Path, envi_path: &Path) -> Result<()> {
    if map.palette.len() < map.k {
        return Err(Error::domain(format!(
            "palette has {} colors for {} clusters",
            map.palette.len(),
            map.k
        )));
    }
    write_png(map, png_path)?;

    let values: Vec<f64> = map
        .labels
        .iter()
        .map(|&l| if l == NO_DATA { NO_DATA_U16 as f64 } else { l as f64 })
        .collect();
    let data = Array3::from_shape_vec((map.rows, map.cols, 1), values).expect("label shape");
    let mut header = EnviHeader::new(map.cols, map.rows, 1, DataType::U16);
    header.data_ignore_value = Some(NO_DATA_U16 as f64);
    write_raster(&header, &data, header_path_for(envi_path), envi_path)
}

fn write_png(map: &ClusterMap, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), map.cols as u32, map.rows as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut pixels = Vec::with_capacity(map.rows * map.cols * 3);
    for &l in &map.labels {
        let rgb = if l < 0 { [0, 0, 0] } else { map.palette[l as usize] };
        pixels.extend_from_slice(&rgb);
    }
    let png_err = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut writer = encoder.write_header().map_err(png_err)?;
    writer.write_image_data(&pixels).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

/// Reads a label raster written by [`write_cluster_map`].
pub fn read_cluster_map(header_path: &Path, data_path: &Path) -> Result<ClusterMap> {
    let (header, data) = read_raster(header_path, data_path)?;
    if header.bands != 1 {
        return Err(Error::parse("bands", "cluster map must have 1 band"));
    }
    let labels = data
        .iter()
        .map(|&v| if v == NO_DATA_U16 as f64 { NO_DATA } else { v as i32 })
        .collect();
    ClusterMap::from_labels(header.lines, header.samples, labels)
}

/// Colors for `current`, chosen to agree with `reference`.
///
/// Clusters of `current` are visited largest first; each takes the color of
/// the not-yet-used reference cluster it overlaps most. Clusters with no
/// remaining overlapping reference cluster get the next fixed-cycle color not
/// already in use.
pub fn match_palette(current: &ClusterMap, reference: &ClusterMap) -> Result<Vec<Rgb>> {
    if (current.rows, current.cols) != (reference.rows, reference.cols) {
        return Err(Error::shape(
            "cluster map dimensions",
            format!("{}x{}", reference.rows, reference.cols),
            format!("{}x{}", current.rows, current.cols),
        ));
    }
    let (kc, kr) = (current.k, reference.k);
    let mut overlap = vec![vec![0usize; kr]; kc];
    let mut sizes = vec![0usize; kc];
    for (&a, &b) in current.labels.iter().zip(&reference.labels) {
        if a >= 0 {
            sizes[a as usize] += 1;
            if b >= 0 {
                overlap[a as usize][b as usize] += 1;
            }
        }
    }
    let mut order: Vec<usize> = (0..kc).collect();
    order.sort_by(|&x, &y| sizes[y].cmp(&sizes[x]).then(x.cmp(&y)));

    let mut consumed = vec![false; kr];
    let mut palette: Vec<Option<Rgb>> = vec![None; kc];
    for &c in &order {
        let best = (0..kr)
            .filter(|&q| !consumed[q] && overlap[c][q] > 0)
            .max_by(|&x, &y| overlap[c][x].cmp(&overlap[c][y]).then(y.cmp(&x)));
        if let Some(q) = best {
            consumed[q] = true;
            palette[c] = Some(reference.palette[q]);
        }
    }

    let mut used: Vec<Rgb> = palette.iter().flatten().copied().collect();
    let mut next = 0;
    for &c in &order {
        if palette[c].is_none() {
            let color = loop {
                let candidate = cycle_color(next);
                next += 1;
                if !used.contains(&candidate) {
                    break candidate;
                }
            };
            used.push(color);
            palette[c] = Some(color);
        }
    }
    Ok(palette.into_iter().map(|c| c.expect("every cluster colored")).collect())
}

/// One row per cluster: id, pixel count, then the mean reflectance at each
/// wavelength (column headers are the band centers in nm).
pub fn write_means_csv(map: &ClusterMap, grid: &WavelengthGrid, path: &Path) -> Result<()> {
    if map.cluster_means.ncols() != grid.len() {
        return Err(Error::shape("cluster mean width", grid.len(), map.cluster_means.ncols()));
    }
    let csv_err = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header = vec!["cluster".to_string(), "pixels".to_string()];
    header.extend(grid.centers().iter().map(|c| format!("{c}")));
    writer.write_record(&header).map_err(csv_err)?;
    for (i, row) in map.cluster_means.rows().into_iter().enumerate() {
        let mut record = vec![i.to_string(), map.cluster_sizes[i].to_string()];
        record.extend(row.iter().map(|v| format!("{v}")));
        writer.write_record(&record).map_err(csv_err)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(rows: usize, cols: usize, labels: Vec<i32>) -> ClusterMap {
        ClusterMap::from_labels(rows, cols, labels).unwrap()
    }

    fn read_png(path: &Path) -> (u32, u32, Vec<u8>) {
        let decoder = png::Decoder::new(std::io::BufReader::new(File::open(path).unwrap()));
        let mut reader = decoder.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut buf).unwrap();
        buf.truncate(info.buffer_size());
        (info.width, info.height, buf)
    }

    #[test]
    fn single_cluster_png_is_uniform() {
        let dir = tempfile::tempdir().unwrap();
        let m = map(3, 4, vec![0; 12]);
        let png_path = dir.path().join("map.png");
        write_cluster_map(&m, &png_path, &dir.path().join("map.img")).unwrap();
        let (w, h, px) = read_png(&png_path);
        assert_eq!((w, h), (4, 3));
        assert!(px.chunks(3).all(|c| c == m.palette[0]));
    }

    #[test]
    fn no_data_rendered_black_and_labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = map(2, 3, vec![0, -1, 1, 2, -1, 0]);
        let png_path = dir.path().join("map.png");
        let img = dir.path().join("map.img");
        write_cluster_map(&m, &png_path, &img).unwrap();
        let (_, _, px) = read_png(&png_path);
        assert_eq!(&px[3..6], &[0, 0, 0]);
        assert_eq!(&px[12..15], &[0, 0, 0]);
        let back = read_cluster_map(&header_path_for(&img), &img).unwrap();
        assert_eq!(back.labels, m.labels);

        // the label raster is an ordinary 16-bit ENVI file
        let (header, _) = read_raster(header_path_for(&img), &img).unwrap();
        assert_eq!(header.data_type, DataType::U16);
    }

    #[test]
    fn palette_identity() {
        let m = map(2, 2, vec![0, 0, 1, 2]);
        assert_eq!(match_palette(&m, &m).unwrap(), m.palette);
    }

    #[test]
    fn palette_follows_renumbering() {
        let reference = map(2, 3, vec![0, 0, 0, 1, 1, 2]);
        let current = map(2, 3, vec![2, 2, 2, 0, 0, 1]);
        let p = match_palette(&current, &reference).unwrap();
        assert_eq!(p, vec![reference.palette[1], reference.palette[2], reference.palette[0]]);
    }

    #[test]
    fn dimension_mismatch() {
        assert!(match_palette(&map(1, 2, vec![0, 0]), &map(2, 1, vec![0, 0])).is_err());
    }

    #[test]
    fn colors_never_reused() {
        let reference = map(1, 6, vec![0, 0, 1, 1, 2, 2]);
        let current = map(1, 6, vec![0, 1, 2, 3, 4, 5]);
        let p = match_palette(&current, &reference).unwrap();
        let mut uniq = p.clone();
        uniq.sort();
        uniq.dedup();
        assert_eq!(uniq.len(), 6);
    }
}
