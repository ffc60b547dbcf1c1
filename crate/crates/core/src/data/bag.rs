//! Portable bag container.
//!
//! Layout, all little-endian:
//!
//! | field    | type        |
//! |----------|-------------|
//! | magic    | `b"EMIL"`   |
//! | version  | u16 (= 1)   |
//! | flags    | u8 (bit 0: coords present, bit 1: labeled) |
//! | label    | u8          |
//! | n        | u32         |
//! | d        | u32         |
//! | features | n·d × f32, row-major |
//! | coords   | n·2 × i32 (only when bit 0 is set) |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 4] = b"EMIL";
pub const VERSION: u16 = 1;
const FLAG_COORDS: u8 = 1;
const FLAG_LABELED: u8 = 1 << 1;
const HEADER_LEN: usize = 4 + 2 + 1 + 1 + 4 + 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Bag {
    pub id: String,
    n: usize,
    d: usize,
    features: Vec<f32>,
    pub label: Option<bool>,
    coords: Option<Vec<[i32; 2]>>,
}

impl Bag {
    pub fn new(
        id: impl Into<String>,
        n: usize,
        d: usize,
        features: Vec<f32>,
        label: Option<bool>,
    ) -> Result<Bag> {
        if n == 0 {
            return Err(Error::EmptyBag);
        }
        if features.len() != n * d {
            return Err(Error::shape("bag features", (n, d), (features.len(), 1)));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("bag features must be finite".into()));
        }
        Ok(Bag {
            id: id.into(),
            n,
            d,
            features,
            label,
            coords: None,
        })
    }

    pub fn from_matrix(id: impl Into<String>, m: &Matrix, label: Option<bool>) -> Result<Bag> {
        let features = m.data().iter().map(|&v| v as f32).collect();
        Bag::new(id, m.rows(), m.cols(), features, label)
    }

    pub fn with_coords(mut self, coords: Vec<[i32; 2]>) -> Result<Bag> {
        if coords.len() != self.n {
            return Err(Error::shape("bag coords", (self.n, 2), (coords.len(), 2)));
        }
        self.coords = Some(coords);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn coords(&self) -> Option<&[[i32; 2]]> {
        self.coords.as_deref()
    }

    /// Features widened to `f64`.
    pub fn matrix(&self) -> Matrix {
        Matrix::from_vec(
            self.n,
            self.d,
            self.features.iter().map(|&v| f64::from(v)).collect(),
        )
        .expect("validated shape")
    }

    /// Label as `0.0`/`1.0`, or a configuration error for unlabeled bags.
    pub fn target(&self) -> Result<f64> {
        self.label
            .map(|l| if l { 1.0 } else { 0.0 })
            .ok_or_else(|| Error::Config(format!("bag {} is unlabeled", self.id)))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.features.len() * 4 + self.n * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let mut flags = 0u8;
        if self.coords.is_some() {
            flags |= FLAG_COORDS;
        }
        if self.label.is_some() {
            flags |= FLAG_LABELED;
        }
        out.push(flags);
        out.push(u8::from(self.label.unwrap_or(false)));
        out.extend_from_slice(&(self.n as u32).to_le_bytes());
        out.extend_from_slice(&(self.d as u32).to_le_bytes());
        for v in &self.features {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(coords) = &self.coords {
            for [x, y] in coords {
                out.extend_from_slice(&x.to_le_bytes());
                out.extend_from_slice(&y.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(id: impl Into<String>, bytes: &[u8]) -> Result<Bag> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Format {
                offset: 0,
                message: format!("bad magic {:?}", String::from_utf8_lossy(magic)),
            });
        }
        let version = u16::from_le_bytes(r.array()?);
        if version != VERSION {
            return Err(Error::Format {
                offset: 4,
                message: format!("unsupported version {version}"),
            });
        }
        let flags = r.take(1)?[0];
        if flags & !(FLAG_COORDS | FLAG_LABELED) != 0 {
            return Err(Error::Format {
                offset: 6,
                message: format!("unknown flag bits {flags:#04x}"),
            });
        }
        let label_byte = r.take(1)?[0];
        let label = if flags & FLAG_LABELED != 0 {
            match label_byte {
                0 => Some(false),
                1 => Some(true),
                other => {
                    return Err(Error::Format {
                        offset: 7,
                        message: format!("label must be 0 or 1, got {other}"),
                    })
                }
            }
        } else {
            None
        };
        let n = u32::from_le_bytes(r.array()?) as usize;
        let d = u32::from_le_bytes(r.array()?) as usize;
        if n == 0 {
            return Err(Error::Format {
                offset: 8,
                message: "bag has zero instances".into(),
            });
        }
        let feature_offset = r.pos as u64;
        let raw = r.take(n * d * 4)?;
        let features: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::Format {
                offset: feature_offset + 4 * i as u64,
                message: "non-finite feature value".into(),
            });
        }
        let coords = if flags & FLAG_COORDS != 0 {
            let raw = r.take(n * 8)?;
            Some(
                raw.chunks_exact(8)
                    .map(|c| {
                        [
                            i32::from_le_bytes(c[..4].try_into().expect("4 bytes")),
                            i32::from_le_bytes(c[4..].try_into().expect("4 bytes")),
                        ]
                    })
                    .collect(),
            )
        } else {
            None
        };
        if r.pos != bytes.len() {
            return Err(Error::Format {
                offset: r.pos as u64,
                message: format!("{} trailing bytes", bytes.len() - r.pos),
            });
        }
        Ok(Bag {
            id: id.into(),
            n,
            d,
            features,
            label,
            coords,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < len {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!(
                    "truncated: need {len} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            });
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
}

/// Reads a bag; its id is the file stem.
pub fn read_bag(path: impl AsRef<Path>) -> Result<Bag> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Bag::from_bytes(id, &bytes)
}

pub fn write_bag(bag: &Bag, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, bag.to_bytes()).map_err(|e| Error::io(path, e))
}
