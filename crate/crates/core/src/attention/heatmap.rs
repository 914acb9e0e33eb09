use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use super::{BlockAffinity, BlockMask};
use crate::{Error, Result};

/// Row-normalised affinity weights with the selection overlay.
/// Masked cells have `weight == None`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapTable {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<Option<f64>>,
    pub selected: Vec<bool>,
}

impl HeatmapTable {
    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        self.weights[i * self.cols + j]
    }

    pub fn is_selected(&self, i: usize, j: usize) -> bool {
        self.selected[i * self.cols + j]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("i,j,weight,selected\n");
        for i in 0..self.rows {
            for j in 0..self.cols {
                let w = self.weight(i, j).map(|w| w.to_string()).unwrap_or_default();
                let _ = writeln!(s, "{i},{j},{w},{}", u8::from(self.is_selected(i, j)));
            }
        }
        s
    }
}

/// Softmax over the finite entries of each row, with the mask overlay.
pub fn export_affinity_heatmap(affinity: &BlockAffinity, selection: &BlockMask) -> Result<HeatmapTable> {
    selection.check_shape(affinity.rows, affinity.cols, "heatmap selection")?;
    let mut weights = vec![None; affinity.rows * affinity.cols];
    for i in 0..affinity.rows {
        let row = affinity.row(i);
        let max = row.iter().copied().filter(|x| x.is_finite()).fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            continue;
        }
        let sum: f64 = row.iter().filter(|x| x.is_finite()).map(|&x| (x - max).exp()).sum();
        for (j, &x) in row.iter().enumerate() {
            if x.is_finite() {
                weights[i * affinity.cols + j] = Some((x - max).exp() / sum);
            }
        }
    }
    let selected = (0..affinity.rows)
        .flat_map(|i| selection.row(i).to_vec())
        .collect();
    Ok(HeatmapTable {
        rows: affinity.rows,
        cols: affinity.cols,
        weights,
        selected,
    })
}

/// Writes the heatmap CSV to `path`.
pub fn write_heatmap_csv(table: &HeatmapTable, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(table.to_csv().as_bytes())?;
    Ok(())
}

/// Parses the CSV produced by [`HeatmapTable::to_csv`].
pub fn parse_heatmap_csv(reader: impl BufRead) -> Result<HeatmapTable> {
    let mut cells = Vec::new();
    let mut lines = reader.lines().enumerate();
    let header = lines.next().map(|(_, l)| l).transpose()?;
    if header.as_deref().map(str::trim) != Some("i,j,weight,selected") {
        return Err(Error::parse(1, "header", "expected `i,j,weight,selected`"));
    }
    for (n, line) in lines {
        let line = line?;
        let lineno = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::parse(lineno, "row", format!("expected 4 fields, got {}", fields.len())));
        }
        let idx = |k: usize, name: &str| {
            fields[k]
                .parse::<usize>()
                .map_err(|e| Error::parse(lineno, name, e.to_string()))
        };
        let (i, j) = (idx(0, "i")?, idx(1, "j")?);
        let weight = match fields[2] {
            "" => None,
            w => Some(w.parse::<f64>().map_err(|e| Error::parse(lineno, "weight", e.to_string()))?),
        };
        let selected = match fields[3] {
            "0" => false,
            "1" => true,
            other => return Err(Error::parse(lineno, "selected", format!("expected 0 or 1, got `{other}`"))),
        };
        cells.push((lineno, i, j, weight, selected));
    }
    let rows = cells.iter().map(|c| c.1 + 1).max().unwrap_or(0);
    let cols = cells.iter().map(|c| c.2 + 1).max().unwrap_or(0);
    if cells.len() != rows * cols {
        return Err(Error::parse(0, "row", format!("{} cells for a {rows}x{cols} grid", cells.len())));
    }
    let mut weights = vec![None; rows * cols];
    let mut selected = vec![false; rows * cols];
    for (k, &(lineno, i, j, w, s)) in cells.iter().enumerate() {
        if i * cols + j != k {
            return Err(Error::parse(lineno, "row", "cells out of row-major order"));
        }
        weights[k] = w;
        selected[k] = s;
    }
    Ok(HeatmapTable {
        rows,
        cols,
        weights,
        selected,
    })
}
