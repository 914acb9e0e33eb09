use std::io::{BufRead, Read, Write};
use std::path::Path;

use crate::geometry::CameraPose;
use crate::{Error, Result};

/// Magic prefix of the binary grid format.
pub const GRID_MAGIC: &[u8; 4] = b"VRKD";

/// Row-major single-precision grid, the on-disk exchange format.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatGrid {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FloatGrid {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Dimension(format!(
                "{} values for a {height}x{width} grid",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    /// `VRKD`, height and width as little-endian u32, then little-endian f32 values.
    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        let dim = |n: usize| {
            u32::try_from(n).map_err(|_| Error::Dimension(format!("grid dimension {n} exceeds u32")))
        };
        w.write_all(GRID_MAGIC)?;
        w.write_all(&dim(self.height)?.to_le_bytes())?;
        w.write_all(&dim(self.width)?.to_le_bytes())?;
        for x in &self.data {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(mut r: impl Read) -> Result<Self> {
        let mut header = [0u8; 12];
        r.read_exact(&mut header)?;
        if &header[..4] != GRID_MAGIC {
            return Err(Error::parse(0, "magic", "not a VRKD grid"));
        }
        let height = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let width = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != height * width * 4 {
            return Err(Error::parse(
                0,
                "data",
                format!("expected {} bytes, found {}", height * width * 4, bytes.len()),
            ));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(height, width, data)
    }

    /// One line per row, comma separated.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        for row in self.data.chunks(self.width.max(1)) {
            let line: Vec<String> = row.iter().map(|x| x.to_string()).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv(r: impl BufRead) -> Result<Self> {
        let mut data = Vec::new();
        let mut width = None;
        let mut height = 0;
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<f32> = line
                .split(',')
                .enumerate()
                .map(|(c, s)| {
                    s.trim()
                        .parse::<f32>()
                        .map_err(|e| Error::parse(n + 1, format!("column {c}"), e.to_string()))
                })
                .collect::<Result<_>>()?;
            match width {
                None => width = Some(row.len()),
                Some(w) if w != row.len() => {
                    return Err(Error::parse(n + 1, "row", format!("expected {w} values, got {}", row.len())))
                }
                _ => {}
            }
            data.extend(row);
            height += 1;
        }
        Self::new(height, width.unwrap_or(0), data)
    }

    /// Binary for `.vrkd`, CSV for `.csv`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        match extension(path).as_deref() {
            Some("csv") => self.write_csv(f),
            _ => self.write_binary(f),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let parsed = match extension(path).as_deref() {
            Some("csv") => Self::read_csv(f),
            _ => Self::read_binary(f),
        };
        parsed.map_err(|e| match e {
            Error::Parse { message, field, .. } => Error::Format {
                path: path.to_path_buf(),
                message: format!("{field}: {message}"),
            },
            other => other,
        })
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase())
}

/// Multi-channel image, row-major `[H × W × C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels || channels == 0 {
            return Err(Error::Dimension(format!(
                "{} values for a {height}x{width}x{channels} image",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_fn(height: usize, width: usize, channels: usize, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut img = Self::zeros(height, width, channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    img.data[(r * width + c) * channels + ch] = f(r, c, ch);
                }
            }
        }
        img
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let i = (row * self.width + col) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Bilinear sample at `(u, v)`; `None` outside `[0, W−1] × [0, H−1]`.
    pub fn sample_bilinear(&self, u: f64, v: f64, out: &mut [f64]) -> Option<()> {
        if !(u >= 0.0 && v >= 0.0 && u <= (self.width - 1) as f64 && v <= (self.height - 1) as f64) {
            return None;
        }
        let (c0, r0) = (u.floor() as usize, v.floor() as usize);
        let (c1, r1) = ((c0 + 1).min(self.width - 1), (r0 + 1).min(self.height - 1));
        let (fu, fv) = (u - c0 as f64, v - r0 as f64);
        let (p00, p01, p10, p11) = (self.pixel(r0, c0), self.pixel(r0, c1), self.pixel(r1, c0), self.pixel(r1, c1));
        for ch in 0..self.channels {
            // Difference form keeps constant regions exact.
            let top = p00[ch] + fu * (p01[ch] - p00[ch]);
            let bottom = p10[ch] + fu * (p11[ch] - p10[ch]);
            out[ch] = top + fv * (bottom - top);
        }
        Some(())
    }

    /// Nearest pixel to `(u, v)`, if inside the grid.
    pub fn sample_nearest(&self, u: f64, v: f64) -> Option<&[f64]> {
        let (c, r) = (u.round(), v.round());
        if c < 0.0 || r < 0.0 || c > (self.width - 1) as f64 || r > (self.height - 1) as f64 {
            return None;
        }
        Some(self.pixel(r as usize, c as usize))
    }

    /// Channel `ch` as a grid.
    pub fn channel_grid(&self, ch: usize) -> FloatGrid {
        FloatGrid {
            height: self.height,
            width: self.width,
            data: self.data.iter().skip(ch).step_by(self.channels).map(|&x| x as f32).collect(),
        }
    }

    pub fn from_grid(grid: &FloatGrid) -> Self {
        Self {
            height: grid.height,
            width: grid.width,
            channels: 1,
            data: grid.data.iter().map(|&x| x as f64).collect(),
        }
    }
}

/// Per-pixel z-depth of one posed view. NaN marks pixels without depth.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
    pub pose: CameraPose,
}

impl DepthMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>, pose: CameraPose) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Dimension(format!(
                "{} depth values for a {height}x{width} grid",
                values.len()
            )));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_nan() || (v.is_finite() && **v > 0.0))) {
            return Err(Error::InvalidDepth(format!(
                "pixel ({}, {}) has depth {v}",
                i / width.max(1),
                i % width.max(1)
            )));
        }
        Ok(Self {
            height,
            width,
            values,
            pose,
        })
    }

    pub fn from_fn(height: usize, width: usize, pose: CameraPose, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let values = (0..height * width).map(|i| f(i / width, i % width)).collect();
        Self::new(height, width, values, pose)
    }

    pub fn from_grid(grid: &FloatGrid, pose: CameraPose) -> Result<Self> {
        Self::new(grid.height, grid.width, grid.data.iter().map(|&x| x as f64).collect(), pose)
    }

    pub fn to_grid(&self) -> FloatGrid {
        FloatGrid {
            height: self.height,
            width: self.width,
            data: self.values.iter().map(|&x| x as f32).collect(),
        }
    }

    /// Depth at a pixel; `None` when invalid.
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let d = self.values[row * self.width + col];
        (!d.is_nan()).then_some(d)
    }

    pub fn nearest(&self, u: f64, v: f64) -> Option<f64> {
        let (c, r) = (u.round(), v.round());
        if c < 0.0 || r < 0.0 || c > (self.width as f64 - 1.0) || r > (self.height as f64 - 1.0) {
            return None;
        }
        self.get(r as usize, c as usize)
    }
}
