//! The "MDLG" binary field container: a fixed little-endian header
//! (magic, version, grid geometry, field kind, time) followed by the
//! row-major payload — plain f64 for real fields, interleaved
//! (re, im) pairs for complex ones. Round trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{MadelungError, Result};
use crate::grid::{ComplexField, GridSpec, RealField};

const MAGIC: [u8; 4] = *b"MDLG";
const VERSION: u16 = 1;

const KIND_REAL: u8 = 0;
const KIND_COMPLEX: u8 = 1;

/// A field as stored on disk.
#[derive(Debug, Clone)]
pub enum FieldData {
    Real(RealField),
    Complex(ComplexField),
}

impl FieldData {
    pub fn grid(&self) -> &GridSpec {
        match self {
            FieldData::Real(f) => f.grid(),
            FieldData::Complex(f) => f.grid(),
        }
    }

    pub fn time(&self) -> f64 {
        match self {
            FieldData::Real(f) => f.time(),
            FieldData::Complex(f) => f.time(),
        }
    }
}

/// Serializes a field into any writer.
pub fn write_field_to(out: &mut impl Write, field: &FieldData) -> Result<()> {
    let grid = field.grid();
    let dim = grid.dim();
    out.write_all(&MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&[dim as u8])?;
    for a in 0..dim {
        out.write_all(&(grid.n(a) as u32).to_le_bytes())?;
    }
    for a in 0..dim {
        out.write_all(&grid.lower(a).to_le_bytes())?;
        out.write_all(&grid.upper(a).to_le_bytes())?;
    }
    for a in 0..dim {
        out.write_all(&[grid.periodic(a) as u8])?;
    }
    match field {
        FieldData::Real(f) => {
            out.write_all(&[KIND_REAL])?;
            out.write_all(&field.time().to_le_bytes())?;
            for v in f.values() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        FieldData::Complex(f) => {
            out.write_all(&[KIND_COMPLEX])?;
            out.write_all(&field.time().to_le_bytes())?;
            for z in f.values() {
                out.write_all(&z.re.to_le_bytes())?;
                out.write_all(&z.im.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_exact<const N: usize>(input: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    input.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_f64(input: &mut impl Read) -> Result<f64> {
    Ok(f64::from_le_bytes(read_exact::<8>(input)?))
}

/// Parses a field from any reader.
pub fn read_field_from(input: &mut impl Read) -> Result<FieldData> {
    let magic = read_exact::<4>(input)?;
    if magic != MAGIC {
        return Err(MadelungError::BadFieldFile(format!(
            "bad magic {magic:?}, expected \"MDLG\""
        )));
    }
    let version = u16::from_le_bytes(read_exact::<2>(input)?);
    if version != VERSION {
        return Err(MadelungError::BadFieldFile(format!(
            "unsupported version {version}"
        )));
    }
    let dim = read_exact::<1>(input)?[0] as usize;
    if !(1..=3).contains(&dim) {
        return Err(MadelungError::BadFieldFile(format!("bad dimension {dim}")));
    }
    let mut n = Vec::with_capacity(dim);
    for _ in 0..dim {
        n.push(u32::from_le_bytes(read_exact::<4>(input)?) as usize);
    }
    let mut lower = Vec::with_capacity(dim);
    let mut upper = Vec::with_capacity(dim);
    for _ in 0..dim {
        lower.push(read_f64(input)?);
        upper.push(read_f64(input)?);
    }
    let mut periodic = Vec::with_capacity(dim);
    for _ in 0..dim {
        periodic.push(match read_exact::<1>(input)?[0] {
            0 => false,
            1 => true,
            b => {
                return Err(MadelungError::BadFieldFile(format!(
                    "bad periodic flag {b}"
                )))
            }
        });
    }
    let kind = read_exact::<1>(input)?[0];
    let time = read_f64(input)?;
    let grid = GridSpec::new(dim, &n, &lower, &upper, &periodic)?;
    match kind {
        KIND_REAL => {
            let mut values = Vec::with_capacity(grid.len());
            for _ in 0..grid.len() {
                values.push(read_f64(input)?);
            }
            Ok(FieldData::Real(RealField::new(grid, values, time)?))
        }
        KIND_COMPLEX => {
            let mut values = Vec::with_capacity(grid.len());
            for _ in 0..grid.len() {
                let re = read_f64(input)?;
                let im = read_f64(input)?;
                values.push(Complex64::new(re, im));
            }
            Ok(FieldData::Complex(ComplexField::new(grid, values, time)?))
        }
        k => Err(MadelungError::BadFieldFile(format!("bad field kind {k}"))),
    }
}

pub fn write_field(path: impl AsRef<Path>, field: &FieldData) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_field_to(&mut out, field)?;
    out.flush()?;
    Ok(())
}

pub fn read_field(path: impl AsRef<Path>) -> Result<FieldData> {
    read_field_from(&mut BufReader::new(File::open(path)?))
}
