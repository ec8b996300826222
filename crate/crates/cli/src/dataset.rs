//! Resolving `--dataset` values into measures and instances.

use std::path::{Path, PathBuf};

use otws_core::data::{decode_raw_grid, gen_random_r3, parse_idx_images, DEFAULT_FLOOR};
use otws_core::{build_cost, CostMatrix, DatasetSpec, DiscreteMeasure, Error, Result};

use crate::args::Pairing;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub measures: Vec<DiscreteMeasure>,
    /// File the measures were read from, if any.
    pub path: Option<PathBuf>,
}

pub fn side_of(n: usize) -> Result<usize> {
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n || n == 0 {
        return Err(Error::invalid(format!("n = {n} is not a square grid size")));
    }
    Ok(side)
}

/// `random` (or `random_r3`) generates `count` measures on an `n`-point grid;
/// anything else is read as an IDX3 or raw_grid file.
pub fn load(spec: &str, n: usize, count: usize, seed: u64) -> Result<Dataset> {
    if spec == "random" || spec == "random_r3" {
        let measures = gen_random_r3(&DatasetSpec::random_r3(side_of(n)?, count, seed))?;
        return Ok(Dataset {
            name: "random".into(),
            measures,
            path: None,
        });
    }
    let path = Path::new(spec);
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut measures = if bytes.starts_with(&[0, 0, 8, 3]) {
        parse_idx_images(&bytes, DEFAULT_FLOOR, count)?
    } else if bytes.starts_with(b"OTG1") {
        decode_raw_grid(&bytes, DEFAULT_FLOOR)?
    } else {
        return Err(Error::Format {
            offset: 0,
            reason: format!("{spec}: neither an IDX3 nor a raw_grid file"),
        });
    };
    if measures.len() < count {
        return Err(Error::invalid(format!(
            "{spec} holds {} measures, {count} needed",
            measures.len()
        )));
    }
    measures.truncate(count);
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| spec.to_string());
    Ok(Dataset {
        name,
        measures,
        path: Some(path.to_path_buf()),
    })
}

/// Measures needed for `instances` instances under `pairing`.
pub fn measures_needed(instances: usize, pairing: Pairing) -> usize {
    match pairing {
        Pairing::Consecutive => 2 * instances,
        Pairing::Identical => instances,
    }
}

pub fn instances(d: &Dataset, pairing: Pairing) -> Vec<(&DiscreteMeasure, &DiscreteMeasure)> {
    match pairing {
        Pairing::Consecutive => d.measures.chunks_exact(2).map(|p| (&p[0], &p[1])).collect(),
        Pairing::Identical => d.measures.iter().map(|m| (m, m)).collect(),
    }
}

/// Squared Euclidean cost on the dataset's grid.
pub fn cost_for(d: &Dataset) -> Result<CostMatrix> {
    let first = d
        .measures
        .first()
        .ok_or_else(|| Error::invalid("empty dataset"))?;
    let g = first.geometry();
    if d.measures
        .iter()
        .any(|m| m.geometry().rows() != g.rows() || m.geometry().cols() != g.cols())
    {
        return Err(Error::invalid(format!(
            "{}: measures on different grids",
            d.name
        )));
    }
    build_cost(g, g, 2.0)
}
