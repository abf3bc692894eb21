//! Little-endian binary helpers shared by the PNKT / PNKD / PNKU formats.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::numeric::Real;

pub(crate) struct BinWriter {
    path: PathBuf,
    out: BufWriter<File>,
}

impl BinWriter {
    pub fn create(path: &Path, magic: &[u8; 4], version: u32) -> Result<Self> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
        };
        w.bytes(magic)?;
        w.u32(version)?;
        Ok(w)
    }

    fn wrap<T>(&self, r: std::io::Result<T>) -> Result<T> {
        r.map_err(|e| Error::io(&self.path, e))
    }

    pub fn bytes(&mut self, b: &[u8]) -> Result<()> {
        let r = self.out.write_all(b);
        self.wrap(r)
    }

    pub fn u32(&mut self, x: u32) -> Result<()> {
        let r = self.out.write_u32::<LittleEndian>(x);
        self.wrap(r)
    }

    pub fn u64(&mut self, x: u64) -> Result<()> {
        let r = self.out.write_u64::<LittleEndian>(x);
        self.wrap(r)
    }

    pub fn f64(&mut self, x: f64) -> Result<()> {
        let r = self.out.write_f64::<LittleEndian>(x);
        self.wrap(r)
    }

    pub fn reals<T: Real>(&mut self, xs: &[T]) -> Result<()> {
        for &x in xs {
            self.f64(x.to_f64_lossy())?;
        }
        Ok(())
    }

    /// Length-prefixed node list.
    pub fn axis<T: Real>(&mut self, nodes: &[T]) -> Result<()> {
        self.u64(nodes.len() as u64)?;
        self.reals(nodes)
    }

    pub fn finish(mut self) -> Result<()> {
        let r = self.out.flush();
        self.wrap(r)
    }
}

pub(crate) struct BinReader {
    path: PathBuf,
    inp: BufReader<File>,
}

impl BinReader {
    pub fn open(path: &Path, magic: &[u8; 4], version: u32) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = Self {
            path: path.to_path_buf(),
            inp: BufReader::new(file),
        };
        let mut m = [0u8; 4];
        r.inp
            .read_exact(&mut m)
            .map_err(|_| Error::format(path, "truncated header"))?;
        if &m != magic {
            return Err(Error::format(
                path,
                format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(&m), String::from_utf8_lossy(magic)),
            ));
        }
        let v = r.u32()?;
        if v != version {
            return Err(Error::format(path, format!("unsupported version {v}")));
        }
        Ok(r)
    }

    fn wrap<T>(&self, r: std::io::Result<T>) -> Result<T> {
        r.map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::format(&self.path, "unexpected end of file"),
            _ => Error::io(&self.path, e),
        })
    }

    pub fn u32(&mut self) -> Result<u32> {
        let r = self.inp.read_u32::<LittleEndian>();
        self.wrap(r)
    }

    pub fn u64(&mut self) -> Result<u64> {
        let r = self.inp.read_u64::<LittleEndian>();
        self.wrap(r)
    }

    pub fn count(&mut self, cap: u64) -> Result<usize> {
        let n = self.u64()?;
        if n > cap {
            return Err(Error::format(&self.path, format!("implausible count {n}")));
        }
        Ok(n as usize)
    }

    pub fn f64(&mut self) -> Result<f64> {
        let r = self.inp.read_f64::<LittleEndian>();
        self.wrap(r)
    }

    pub fn reals<T: Real>(&mut self, n: usize) -> Result<Vec<T>> {
        (0..n).map(|_| self.f64().map(T::lit)).collect()
    }

    pub fn axis<T: Real>(&mut self) -> Result<Vec<T>> {
        let n = self.count(1 << 32)?;
        self.reals(n)
    }

    /// Errors unless the stream is exhausted.
    pub fn expect_end(mut self) -> Result<()> {
        let mut b = [0u8; 1];
        match self.inp.read(&mut b) {
            Ok(0) => Ok(()),
            Ok(_) => Err(Error::format(&self.path, "trailing bytes")),
            Err(e) => Err(Error::io(&self.path, e)),
        }
    }
}
