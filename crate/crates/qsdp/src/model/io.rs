//! Bit-packed network file format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset size  field
//! 0      4     magic "QSDP"
//! 4      2     version (currently 1)
//! 6      1     kind: 0 = bilinear, 1 = poly, 2 = quadratic
//! 7      1     flags: bit 0 = uniform alpha, bit 1 = lifted input kind
//! 8      4     m  (rows per weight plane)
//! 12     4     d  (input dimension; poly planes have d*M columns)
//! 16     4     M  (quantization / lifting level, 0 when unused)
//! 20     24    activation coefficients a, b, c as f64
//! 44     ...   U bit plane, then V bit plane (1 bit per entry, +1 -> 1,
//!              row-major, LSB-first within each byte, each plane padded to a
//!              byte boundary)
//! ...    8|8m  alpha: one f64 when the uniform flag is set, else m f64 values
//! ```
//!
//! Bilinear sign planes are stored directly. A poly network stores the
//! canonical sign decomposition of its integer weights in both planes
//! (`U = V`), so a file always carries exactly two planes. A quadratic
//! network's {−1, 0, +1} weights are stored as the sign pair `(u, v)` with
//! `w = (u + v)/2` (zero encodes as `(+1, -1)`).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{canonical_signs, BilinearNetwork, InputKind, PolyNetwork, QuadraticNetwork};
use crate::error::QsdpError;
use crate::Result;

const MAGIC: &[u8; 4] = b"QSDP";
const VERSION: u16 = 1;
const FLAG_UNIFORM_ALPHA: u8 = 1;
const FLAG_LIFTED: u8 = 2;

const KIND_BILINEAR: u8 = 0;
const KIND_POLY: u8 = 1;
const KIND_QUADRATIC: u8 = 2;

/// Any network the file format can carry.
#[derive(Debug, Clone, PartialEq)]
pub enum Network {
    Bilinear(BilinearNetwork),
    Poly(PolyNetwork),
    Quadratic(QuadraticNetwork),
}

impl From<BilinearNetwork> for Network {
    fn from(n: BilinearNetwork) -> Self {
        Network::Bilinear(n)
    }
}

impl From<PolyNetwork> for Network {
    fn from(n: PolyNetwork) -> Self {
        Network::Poly(n)
    }
}

impl From<QuadraticNetwork> for Network {
    fn from(n: QuadraticNetwork) -> Self {
        Network::Quadratic(n)
    }
}

pub fn write_network_file(network: &Network, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_network(network, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn read_network_file(path: &Path) -> Result<Network> {
    let mut r = BufReader::new(File::open(path)?);
    read_network(&mut r)
}

pub fn write_network<W: Write>(network: &Network, out: &mut W) -> Result<()> {
    let (kind, rows, d, levels, coeffs, input_kind, alpha) = match network {
        Network::Bilinear(n) => (
            KIND_BILINEAR,
            n.neurons(),
            n.weight_dim(),
            lifted_levels(n.input_kind()),
            lifted_coeffs(n.input_kind()),
            n.input_kind(),
            n.alpha().clone(),
        ),
        Network::Poly(n) => (
            KIND_POLY,
            n.neurons(),
            n.input_dim(),
            n.levels(),
            (n.a, n.b, n.c),
            InputKind::Raw,
            n.alpha().clone(),
        ),
        Network::Quadratic(n) => (
            KIND_QUADRATIC,
            n.neurons(),
            n.weight_dim(),
            lifted_levels(n.input_kind()),
            lifted_coeffs(n.input_kind()),
            n.input_kind(),
            n.alpha().clone(),
        ),
    };

    let uniform = uniform_value(&alpha);
    let mut flags = 0u8;
    if uniform.is_some() {
        flags |= FLAG_UNIFORM_ALPHA;
    }
    if matches!(input_kind, InputKind::Lifted { .. }) {
        flags |= FLAG_LIFTED;
    }

    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&[kind, flags])?;
    out.write_all(&u32::try_from(rows).map_err(too_big)?.to_le_bytes())?;
    out.write_all(&u32::try_from(d).map_err(too_big)?.to_le_bytes())?;
    out.write_all(&levels.to_le_bytes())?;
    out.write_all(&coeffs.0.to_le_bytes())?;
    out.write_all(&coeffs.1.to_le_bytes())?;
    out.write_all(&coeffs.2.to_le_bytes())?;

    match network {
        Network::Bilinear(n) => {
            write_sign_plane(out, n.u())?;
            write_sign_plane(out, n.v())?;
        }
        Network::Poly(n) => {
            let plane = poly_sign_plane(n);
            write_sign_plane(out, &plane)?;
            write_sign_plane(out, &plane)?;
        }
        Network::Quadratic(n) => {
            let (u, v) = quadratic_sign_planes(n.w());
            write_sign_plane(out, &u)?;
            write_sign_plane(out, &v)?;
        }
    }

    match uniform {
        Some(a) => out.write_all(&a.to_le_bytes())?,
        None => {
            for a in alpha.iter() {
                out.write_all(&a.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_network<R: Read>(input: &mut R) -> Result<Network> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(QsdpError::Format(format!("bad magic bytes {magic:?}")));
    }
    let version = u16::from_le_bytes(read_array(input)?);
    if version != VERSION {
        return Err(QsdpError::Format(format!("unsupported version {version}")));
    }
    let mut kind_flags = [0u8; 2];
    input.read_exact(&mut kind_flags)?;
    let [kind, flags] = kind_flags;
    let rows = u32::from_le_bytes(read_array(input)?) as usize;
    let d = u32::from_le_bytes(read_array(input)?) as usize;
    let levels = u32::from_le_bytes(read_array(input)?);
    let a = f64::from_le_bytes(read_array(input)?);
    let b = f64::from_le_bytes(read_array(input)?);
    let c = f64::from_le_bytes(read_array(input)?);

    let cols = match kind {
        KIND_POLY => {
            if levels == 0 {
                return Err(QsdpError::Format("poly network with M = 0".into()));
            }
            d * levels as usize
        }
        KIND_BILINEAR | KIND_QUADRATIC => d,
        other => return Err(QsdpError::Format(format!("unknown network kind {other}"))),
    };

    let u = read_sign_plane(input, rows, cols)?;
    let v = read_sign_plane(input, rows, cols)?;

    let alpha = if flags & FLAG_UNIFORM_ALPHA != 0 {
        DVector::from_element(rows, f64::from_le_bytes(read_array(input)?))
    } else {
        let mut vals = Vec::with_capacity(rows);
        for _ in 0..rows {
            vals.push(f64::from_le_bytes(read_array(input)?));
        }
        DVector::from_vec(vals)
    };

    let input_kind = if flags & FLAG_LIFTED != 0 {
        InputKind::Lifted { levels, a, b, c }
    } else {
        InputKind::Raw
    };

    match kind {
        KIND_BILINEAR => Ok(Network::Bilinear(BilinearNetwork::new(u, v, alpha, input_kind)?)),
        KIND_POLY => {
            let ml = levels as usize;
            let weights = DMatrix::from_fn(rows, d, |j, i| {
                let mut q = 0i64;
                for k in 0..ml {
                    q += if u[(j, i * ml + k)] > 0.0 { 1 } else { -1 };
                }
                q
            });
            Ok(Network::Poly(PolyNetwork::new(weights, levels, a, b, c, alpha)?))
        }
        KIND_QUADRATIC => {
            let w = DMatrix::from_fn(rows, d, |j, i| 0.5 * (u[(j, i)] + v[(j, i)]));
            Ok(Network::Quadratic(QuadraticNetwork::new(w, alpha, input_kind)?))
        }
        _ => unreachable!(),
    }
}

fn lifted_levels(kind: InputKind) -> u32 {
    match kind {
        InputKind::Raw => 0,
        InputKind::Lifted { levels, .. } => levels,
    }
}

fn lifted_coeffs(kind: InputKind) -> (f64, f64, f64) {
    match kind {
        InputKind::Raw => (0.0, 0.0, 0.0),
        InputKind::Lifted { a, b, c, .. } => (a, b, c),
    }
}

fn uniform_value(alpha: &DVector<f64>) -> Option<f64> {
    let first = *alpha.get(0)?;
    alpha.iter().all(|&a| a.to_bits() == first.to_bits()).then_some(first)
}

fn poly_sign_plane(n: &PolyNetwork) -> DMatrix<f64> {
    let ml = n.levels() as usize;
    let mut plane = DMatrix::zeros(n.neurons(), n.input_dim() * ml);
    for j in 0..n.neurons() {
        for i in 0..n.input_dim() {
            for (k, s) in canonical_signs(n.weights()[(j, i)], n.levels()).enumerate() {
                plane[(j, i * ml + k)] = s;
            }
        }
    }
    plane
}

fn quadratic_sign_planes(w: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let u = w.map(|e| if e >= 0.0 { 1.0 } else { -1.0 });
    let v = w.map(|e| if e > 0.0 { 1.0 } else { -1.0 });
    (u, v)
}

fn write_sign_plane<W: Write>(out: &mut W, plane: &DMatrix<f64>) -> Result<()> {
    let bits = plane.nrows() * plane.ncols();
    let mut bytes = vec![0u8; bits.div_ceil(8)];
    let mut idx = 0;
    for r in 0..plane.nrows() {
        for c in 0..plane.ncols() {
            if plane[(r, c)] > 0.0 {
                bytes[idx / 8] |= 1 << (idx % 8);
            }
            idx += 1;
        }
    }
    out.write_all(&bytes)?;
    Ok(())
}

fn read_sign_plane<R: Read>(input: &mut R, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let bits = rows * cols;
    let mut bytes = vec![0u8; bits.div_ceil(8)];
    input.read_exact(&mut bytes)?;
    let mut plane = DMatrix::zeros(rows, cols);
    let mut idx = 0;
    for r in 0..rows {
        for c in 0..cols {
            plane[(r, c)] = if bytes[idx / 8] & (1 << (idx % 8)) != 0 { 1.0 } else { -1.0 };
            idx += 1;
        }
    }
    Ok(plane)
}

fn read_array<const N: usize, R: Read>(input: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    input.read_exact(&mut buf)?;
    Ok(buf)
}

fn too_big(_: std::num::TryFromIntError) -> QsdpError {
    QsdpError::InvalidInput("dimension exceeds u32 range".into())
}
