//! Landmark CSV files: header `structure,index,x,y`, one row per landmark.
//!
//! Structures appear as contiguous row blocks; their order in the file
//! defines the order of the shape's contours. `index` counts from zero
//! within each structure.

use std::path::Path;

use super::{Shape, Structure};
use crate::error::{Error, Result};

pub const HEADER: [&str; 4] = ["structure", "index", "x", "y"];

pub fn write_csv(path: &Path, shape: &Shape) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let mut write = || -> std::result::Result<(), csv::Error> {
        w.write_record(HEADER)?;
        for s in shape.structures() {
            for (k, p) in shape.points()[s.start..s.end].iter().enumerate() {
                // `{}` on f64 prints the shortest string that parses back to the same bits
                w.write_record([s.name.clone(), k.to_string(), format!("{}", p[0]), format!("{}", p[1])])?;
            }
        }
        w.flush()?;
        Ok(())
    };
    write().map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_csv(path: &Path, spacing_mm: f64) -> Result<Shape> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let header = r.headers().map_err(|e| Error::format(path, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(Error::format(path, format!("line 1: expected header {}", HEADER.join(","))));
    }
    let mut points = Vec::new();
    let mut structures: Vec<Structure> = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let line = row + 2;
        let rec = rec.map_err(|e| Error::format(path, format!("line {line}: {e}")))?;
        if rec.len() != 4 {
            return Err(Error::format(path, format!("line {line}: expected 4 fields, got {}", rec.len())));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|_| Error::format(path, format!("line {line}: bad number {:?}", &rec[i])))
        };
        let index: usize = rec[1]
            .parse()
            .map_err(|_| Error::format(path, format!("line {line}: bad index {:?}", &rec[1])))?;
        let (x, y) = (num(2)?, num(3)?);
        let name = &rec[0];
        match structures.last_mut() {
            Some(s) if s.name == name => {
                if index != s.len() {
                    return Err(Error::format(path, format!("line {line}: index {index}, expected {}", s.len())));
                }
                s.end += 1;
            }
            _ => {
                if structures.iter().any(|s| s.name == name) {
                    return Err(Error::format(path, format!("line {line}: structure {name} is not contiguous")));
                }
                if index != 0 {
                    return Err(Error::format(path, format!("line {line}: structure {name} must start at index 0")));
                }
                structures.push(Structure {
                    name: name.to_string(),
                    start: points.len(),
                    end: points.len() + 1,
                });
            }
        }
        points.push([x, y]);
    }
    Shape::new(points, structures, spacing_mm).map_err(|e| Error::format(path, e.to_string()))
}
