//! Bit-exact binary file formats and the metrics stream.
//!
//! Grid files share one little-endian header: 4-byte magic (`VELM` for
//! velocity rasters, `CFLD` for complex fields), version `u8`, `nx: u32`,
//! `nz: u32`, `dx: f64`, `dz: f64`, `x_min: f64`, `z_min: f64`. The payload
//! is `f32` little-endian, row-major with `nx` columns: the velocity
//! raster, or the real plane followed by the imaginary plane. Geometry is
//! stored at full precision; payloads are visualization/validation
//! artifacts and round-trip at `f32` precision.
//!
//! Checkpoints carry magic `LSGD`, version, an architecture header and all
//! parameters as `f64` little-endian, layer by layer (weights row-major,
//! then bias), output weights last.

use crate::error::{Error, Result};
use crate::field::ComplexField;
use crate::medium::VelocityModel;
use crate::network::{Architecture, NetworkParams};
use crate::train::MetricsRecord;
use ndarray::{Array1, Array2};
use std::io::{Read, Write};
use std::path::Path;

const GRID_VERSION: u8 = 1;
const CHECKPOINT_VERSION: u8 = 1;

struct Reader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Reader<R> {
    fn new(inner: R) -> Self {
        Reader { inner, offset: 0 }
    }

    fn take(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let at = self.offset;
        self.inner.read_exact(buf).map_err(|_| Error::Format {
            offset: at,
            message: format!("truncated while reading {what}"),
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        let mut b = [0u8; 1];
        self.take(&mut b, what)?;
        Ok(b[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.take(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let mut b = [0u8; 8];
        self.take(&mut b, what)?;
        Ok(f64::from_le_bytes(b))
    }

    fn f32(&mut self, what: &str) -> Result<f32> {
        let mut b = [0u8; 4];
        self.take(&mut b, what)?;
        Ok(f32::from_le_bytes(b))
    }

    fn expect_eof(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.inner.read(&mut probe) {
            Ok(0) => Ok(()),
            Ok(_) => Err(Error::Format {
                offset: self.offset,
                message: "trailing bytes after payload".into(),
            }),
            Err(e) => Err(Error::Io(e)),
        }
    }
}

struct GridHeader {
    nx: usize,
    nz: usize,
    dx: f64,
    dz: f64,
    x_min: f64,
    z_min: f64,
}

fn write_grid_header<W: Write>(w: &mut W, magic: &[u8; 4], h: &GridHeader) -> Result<()> {
    w.write_all(magic)?;
    w.write_all(&[GRID_VERSION])?;
    w.write_all(&(h.nx as u32).to_le_bytes())?;
    w.write_all(&(h.nz as u32).to_le_bytes())?;
    for v in [h.dx, h.dz, h.x_min, h.z_min] {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_grid_header<R: Read>(r: &mut Reader<R>, magic: &[u8; 4]) -> Result<GridHeader> {
    let mut got = [0u8; 4];
    r.take(&mut got, "magic")?;
    if &got != magic {
        return Err(Error::Format {
            offset: 0,
            message: format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&got),
                String::from_utf8_lossy(magic)
            ),
        });
    }
    let version = r.u8("version")?;
    if version != GRID_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let nx = r.u32("nx")? as usize;
    let nz = r.u32("nz")? as usize;
    let dx = r.f64("dx")?;
    let dz = r.f64("dz")?;
    let x_min = r.f64("x_min")?;
    let z_min = r.f64("z_min")?;
    if nx < 2 || nz < 2 || !(dx > 0.0) || !(dz > 0.0) {
        return Err(Error::Format {
            offset: 5,
            message: format!("implausible grid header: {nx} x {nz}, spacing {dx} x {dz}"),
        });
    }
    Ok(GridHeader {
        nx,
        nz,
        dx,
        dz,
        x_min,
        z_min,
    })
}

fn read_plane<R: Read>(r: &mut Reader<R>, nx: usize, nz: usize, what: &str) -> Result<Array2<f64>> {
    let mut plane = Array2::zeros((nz, nx));
    for iz in 0..nz {
        for ix in 0..nx {
            plane[[iz, ix]] = r.f32(what)? as f64;
        }
    }
    Ok(plane)
}

/// Save a velocity raster (`VELM`).
pub fn save_velocity(path: &Path, model: &VelocityModel) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_grid_header(
        &mut w,
        b"VELM",
        &GridHeader {
            nx: model.nx,
            nz: model.nz,
            dx: model.dx,
            dz: model.dz,
            x_min: model.x0,
            z_min: model.z0,
        },
    )?;
    for v in model.values.iter() {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Load a velocity raster (`VELM`).
pub fn load_velocity(path: &Path) -> Result<VelocityModel> {
    let mut r = Reader::new(std::io::BufReader::new(std::fs::File::open(path)?));
    let h = read_grid_header(&mut r, b"VELM")?;
    let values = read_plane(&mut r, h.nx, h.nz, "velocity payload")?;
    r.expect_eof()?;
    VelocityModel::new(h.nx, h.nz, h.dx, h.dz, h.x_min, h.z_min, values)
}

/// Save a complex field (`CFLD`): real plane then imaginary plane.
pub fn save_field(path: &Path, field: &ComplexField) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_grid_header(
        &mut w,
        b"CFLD",
        &GridHeader {
            nx: field.nx,
            nz: field.nz,
            dx: field.dx,
            dz: field.dz,
            x_min: field.x_min,
            z_min: field.z_min,
        },
    )?;
    for plane in [&field.re, &field.im] {
        for v in plane.iter() {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Load a complex field (`CFLD`).
pub fn load_field(path: &Path) -> Result<ComplexField> {
    let mut r = Reader::new(std::io::BufReader::new(std::fs::File::open(path)?));
    let h = read_grid_header(&mut r, b"CFLD")?;
    let re = read_plane(&mut r, h.nx, h.nz, "real plane")?;
    let im = read_plane(&mut r, h.nx, h.nz, "imaginary plane")?;
    r.expect_eof()?;
    Ok(ComplexField {
        nx: h.nx,
        nz: h.nz,
        dx: h.dx,
        dz: h.dz,
        x_min: h.x_min,
        z_min: h.z_min,
        re,
        im,
    })
}

/// Save network parameters (`LSGD` checkpoint).
pub fn save_checkpoint(path: &Path, params: &NetworkParams) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(b"LSGD")?;
    w.write_all(&[CHECKPOINT_VERSION])?;
    let arch = &params.arch;
    w.write_all(&(arch.k_max as u32).to_le_bytes())?;
    w.write_all(&(arch.hidden.len() as u32).to_le_bytes())?;
    for &h in &arch.hidden {
        w.write_all(&(h as u32).to_le_bytes())?;
    }
    w.write_all(&arch.coord_scale.to_le_bytes())?;
    for (wt, b) in params.weights.iter().zip(&params.biases) {
        for v in wt.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in b.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    for v in params.w_out.iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Load network parameters (`LSGD` checkpoint).
pub fn load_checkpoint(path: &Path) -> Result<NetworkParams> {
    let mut r = Reader::new(std::io::BufReader::new(std::fs::File::open(path)?));
    let mut magic = [0u8; 4];
    r.take(&mut magic, "magic")?;
    if &magic != b"LSGD" {
        return Err(Error::Format {
            offset: 0,
            message: "bad checkpoint magic".into(),
        });
    }
    let version = r.u8("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let k_max = r.u32("k_max")? as usize;
    let n_hidden = r.u32("hidden layer count")? as usize;
    if n_hidden == 0 || n_hidden > 64 {
        return Err(Error::Format {
            offset: r.offset,
            message: format!("implausible hidden layer count {n_hidden}"),
        });
    }
    let mut hidden = Vec::with_capacity(n_hidden);
    for _ in 0..n_hidden {
        hidden.push(r.u32("hidden width")? as usize);
    }
    let coord_scale = r.f64("coord_scale")?;
    let arch = Architecture {
        k_max,
        hidden,
        coord_scale,
    };
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    let mut fan_in = arch.encoder_dim();
    for &width in &arch.hidden {
        let mut w = Array2::zeros((width, fan_in));
        for i in 0..width {
            for j in 0..fan_in {
                w[[i, j]] = r.f64("weight")?;
            }
        }
        let mut b = Array1::zeros(width);
        for i in 0..width {
            b[i] = r.f64("bias")?;
        }
        weights.push(w);
        biases.push(b);
        fan_in = width;
    }
    let p = arch.penultimate();
    let mut w_out = Array2::zeros((p, 2));
    for i in 0..p {
        for j in 0..2 {
            w_out[[i, j]] = r.f64("output weight")?;
        }
    }
    r.expect_eof()?;
    Ok(NetworkParams {
        weights,
        biases,
        w_out,
        arch,
    })
}

pub const METRICS_HEADER: &str = "epoch,loss,val_rel_l2,lr,epsilon,seconds";

/// Append-only metrics writer.
pub struct MetricsWriter {
    file: std::io::BufWriter<std::fs::File>,
}

impl MetricsWriter {
    /// Create the file and write the header.
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(file, "{METRICS_HEADER}")?;
        file.flush()?;
        Ok(MetricsWriter { file })
    }

    pub fn append(&mut self, rec: &MetricsRecord) -> Result<()> {
        writeln!(
            self.file,
            "{},{:.12e},{},{:.12e},{:.12e},{:.3}",
            rec.epoch,
            rec.loss,
            if rec.val_rel_l2.is_nan() {
                "NaN".to_string()
            } else {
                format!("{:.12e}", rec.val_rel_l2)
            },
            rec.lr,
            rec.epsilon,
            rec.seconds
        )?;
        self.file.flush()?;
        Ok(())
    }
}

/// Parse a metrics CSV back into records.
pub fn load_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == METRICS_HEADER => {}
        other => {
            return Err(Error::Format {
                offset: 0,
                message: format!("bad metrics header: {other:?}"),
            })
        }
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Format {
                offset: (i + 2) as u64,
                message: format!("expected 6 columns, got {}", fields.len()),
            });
        }
        let parse = |s: &str| -> Result<f64> {
            s.trim().parse::<f64>().map_err(|_| Error::Format {
                offset: (i + 2) as u64,
                message: format!("bad number {s:?}"),
            })
        };
        out.push(MetricsRecord {
            epoch: parse(fields[0])? as usize,
            loss: parse(fields[1])?,
            val_rel_l2: parse(fields[2])?,
            lr: parse(fields[3])?,
            epsilon: parse(fields[4])?,
            seconds: parse(fields[5])?,
        });
    }
    Ok(out)
}
