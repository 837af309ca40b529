//! Field files and plot data.
//!
//! Binary layout, little-endian throughout:
//!
//! ```text
//! magic  b"GCYF"
//! u32    version (1)
//! u32    number of axes, then one u32 resolution per axis
//! u32    form degree
//! u32    number of components
//! u8     dtype tag: 0 = f64, 1 = complex f64 (re, im)
//! body   component-major, each component row-major over the grid
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::GridChart;

const MAGIC: &[u8; 4] = b"GCYF";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    Real,
    Complex,
}

impl DType {
    fn tag(self) -> u8 {
        match self {
            DType::Real => 0,
            DType::Complex => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FieldData {
    Real(Vec<Vec<f64>>),
    Complex(Vec<Vec<Complex64>>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldFile {
    pub dims: Vec<usize>,
    pub degree: usize,
    pub data: FieldData,
}

impl FieldFile {
    pub fn real(chart: &GridChart, degree: usize, comps: Vec<Vec<f64>>) -> Self {
        Self {
            dims: chart.resolution().to_vec(),
            degree,
            data: FieldData::Real(comps),
        }
    }

    pub fn complex(chart: &GridChart, degree: usize, comps: Vec<Vec<Complex64>>) -> Self {
        Self {
            dims: chart.resolution().to_vec(),
            degree,
            data: FieldData::Complex(comps),
        }
    }

    pub fn dtype(&self) -> DType {
        match self.data {
            FieldData::Real(_) => DType::Real,
            FieldData::Complex(_) => DType::Complex,
        }
    }

    fn ncomp(&self) -> usize {
        match &self.data {
            FieldData::Real(c) => c.len(),
            FieldData::Complex(c) => c.len(),
        }
    }

    /// The single real component of a scalar field.
    pub fn into_scalar(self) -> Result<Vec<f64>> {
        match self.data {
            FieldData::Real(mut c) if self.degree == 0 && c.len() == 1 => Ok(c.remove(0)),
            _ => Err(Error::Shape("field file does not hold a real scalar".into())),
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        let points: usize = self.dims.iter().product();
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.dims.len() as u32).to_le_bytes())?;
        for &n in &self.dims {
            w.write_all(&(n as u32).to_le_bytes())?;
        }
        w.write_all(&(self.degree as u32).to_le_bytes())?;
        w.write_all(&(self.ncomp() as u32).to_le_bytes())?;
        w.write_all(&[self.dtype().tag()])?;
        match &self.data {
            FieldData::Real(comps) => {
                for c in comps {
                    check_points(c.len(), points)?;
                    for v in c {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
            }
            FieldData::Complex(comps) => {
                for c in comps {
                    check_points(c.len(), points)?;
                    for v in c {
                        w.write_all(&v.re.to_le_bytes())?;
                        w.write_all(&v.im.to_le_bytes())?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Parse("not a field file (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Parse(format!("unsupported field file version {version}")));
        }
        let naxes = read_u32(r)? as usize;
        if naxes == 0 || naxes > 6 {
            return Err(Error::Parse(format!("implausible axis count {naxes}")));
        }
        let dims = (0..naxes)
            .map(|_| read_u32(r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let degree = read_u32(r)? as usize;
        let ncomp = read_u32(r)? as usize;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let points: usize = dims.iter().product();
        let data = match tag[0] {
            0 => FieldData::Real(
                (0..ncomp)
                    .map(|_| (0..points).map(|_| read_f64(r)).collect())
                    .collect::<Result<_>>()?,
            ),
            1 => FieldData::Complex(
                (0..ncomp)
                    .map(|_| {
                        (0..points)
                            .map(|_| Ok(Complex64::new(read_f64(r)?, read_f64(r)?)))
                            .collect()
                    })
                    .collect::<Result<_>>()?,
            ),
            t => return Err(Error::Parse(format!("unknown dtype tag {t}"))),
        };
        Ok(Self { dims, degree, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

fn check_points(len: usize, points: usize) -> Result<()> {
    if len != points {
        return Err(Error::Shape(format!(
            "component has {len} values, grid has {points} points"
        )));
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// CSV with columns `point, i1..i2n, <names>` and one row per grid point.
pub fn write_point_csv(path: &Path, chart: &GridChart, columns: &[(&str, &[f64])]) -> Result<()> {
    for (name, c) in columns {
        if c.len() != chart.len() {
            return Err(Error::Shape(format!("column `{name}` has wrong length")));
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    let mut header = vec!["point".to_string()];
    header.extend((1..=chart.dim()).map(|a| format!("i{a}")));
    header.extend(columns.iter().map(|(n, _)| n.to_string()));
    writeln!(w, "{}", header.join(","))?;
    for p in 0..chart.len() {
        let mut row = vec![p.to_string()];
        row.extend(chart.coords(p).iter().map(|c| c.to_string()));
        row.extend(columns.iter().map(|(_, c)| format!("{:e}", c[p])));
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

/// CSV table from a header and rows of numbers.
pub fn write_table_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{}", header.join(","))?;
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| format!("{v:e}")).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip() {
        let c = GridChart::new(2, &[8, 8, 8, 10]).unwrap();
        let real = FieldFile::real(&c, 1, (0..4).map(|k| c.sample(|x| x[k] + k as f64)).collect());
        let cplx = FieldFile::complex(
            &c,
            2,
            vec![(0..c.len()).map(|p| Complex64::new(p as f64, -0.5)).collect()],
        );
        for f in [real, cplx] {
            let mut buf = vec![];
            f.write_to(&mut buf).unwrap();
            assert_eq!(&buf[..4], b"GCYF");
            let back = FieldFile::read_from(&mut buf.as_slice()).unwrap();
            assert_eq!(back, f);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(
            FieldFile::read_from(&mut &b"NOPE...."[..]),
            Err(Error::Parse(_))
        ));
        let c = GridChart::uniform(2, 8).unwrap();
        let f = FieldFile::real(&c, 0, vec![vec![0.0; 3]]);
        assert!(f.write_to(&mut vec![]).is_err());
    }

    #[test]
    fn csv_has_one_row_per_point() {
        let c = GridChart::uniform(2, 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.csv");
        let v = vec![1.5; c.len()];
        write_point_csv(&path, &c, &[("F", &v)]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), c.len() + 1);
        assert_eq!(lines[0], "point,i1,i2,i3,i4,F");
        assert_eq!(lines[1], "0,0,0,0,0,1.5e0");
    }
}
