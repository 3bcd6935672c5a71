//! Little-endian primitives shared by the sample cache and checkpoints.

use std::io::{self, Read, Write};

pub struct LeWriter<W: Write>(pub W);

impl<W: Write> LeWriter<W> {
    pub fn bytes(&mut self, b: &[u8]) -> io::Result<()> {
        self.0.write_all(b)
    }

    pub fn u8(&mut self, v: u8) -> io::Result<()> {
        self.bytes(&[v])
    }

    pub fn u32(&mut self, v: u32) -> io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn u64(&mut self, v: u64) -> io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn i64(&mut self, v: i64) -> io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn f64(&mut self, v: f64) -> io::Result<()> {
        self.bytes(&v.to_le_bytes())
    }

    pub fn len(&mut self, n: usize) -> io::Result<()> {
        let n = u32::try_from(n).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "length exceeds u32"))?;
        self.u32(n)
    }

    /// u32 byte length followed by UTF-8.
    pub fn str(&mut self, s: &str) -> io::Result<()> {
        self.len(s.len())?;
        self.bytes(s.as_bytes())
    }

    pub fn f64s(&mut self, v: &[f64]) -> io::Result<()> {
        v.iter().try_for_each(|&x| self.f64(x))
    }

    pub fn flags(&mut self, v: &[bool]) -> io::Result<()> {
        v.iter().try_for_each(|&b| self.u8(u8::from(b)))
    }
}

pub struct LeReader<R: Read>(pub R);

fn corrupt(msg: impl Into<String>) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg.into())
}

impl<R: Read> LeReader<R> {
    pub fn array<const N: usize>(&mut self) -> io::Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b)?;
        Ok(b)
    }

    pub fn u8(&mut self) -> io::Result<u8> {
        Ok(self.array::<1>()?[0])
    }

    pub fn u32(&mut self) -> io::Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> io::Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn i64(&mut self) -> io::Result<i64> {
        Ok(i64::from_le_bytes(self.array()?))
    }

    pub fn f64(&mut self) -> io::Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    pub fn len(&mut self, limit: usize) -> io::Result<usize> {
        let n = self.u32()? as usize;
        if n > limit {
            return Err(corrupt(format!("length {n} exceeds limit {limit}")));
        }
        Ok(n)
    }

    pub fn str(&mut self) -> io::Result<String> {
        let n = self.len(1 << 20)?;
        let mut b = vec![0u8; n];
        self.0.read_exact(&mut b)?;
        String::from_utf8(b).map_err(|_| corrupt("string is not UTF-8"))
    }

    pub fn f64s(&mut self, n: usize) -> io::Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn flag(&mut self) -> io::Result<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(corrupt(format!("flag byte {b}"))),
        }
    }

    pub fn flags(&mut self, n: usize) -> io::Result<Vec<bool>> {
        (0..n).map(|_| self.flag()).collect()
    }
}
