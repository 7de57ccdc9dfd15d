//! MELSPEC1 binary container: 8-byte magic, u32 LE frame count, u32 LE band
//! count, u32 LE frame shift in microseconds, then T*M f32 LE values in
//! row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{MssError, Result};

use super::MelSpectrogram;

pub const MEL_MAGIC: &[u8; 8] = b"MELSPEC1";

pub fn write_mel(path: &Path, mel: &MelSpectrogram) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MEL_MAGIC)?;
    w.write_u32::<LittleEndian>(mel.n_frames() as u32)?;
    w.write_u32::<LittleEndian>(mel.n_mels() as u32)?;
    w.write_u32::<LittleEndian>((mel.frame_shift_ms() * 1000.0).round() as u32)?;
    for &v in mel.data() {
        w.write_f32::<LittleEndian>(v as f32)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_mel(path: &Path) -> Result<MelSpectrogram> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MEL_MAGIC {
        return Err(MssError::FormatError(format!(
            "{}: bad magic, not a MELSPEC1 file",
            path.display()
        )));
    }
    let t = r.read_u32::<LittleEndian>()? as usize;
    let m = r.read_u32::<LittleEndian>()? as usize;
    let shift_us = r.read_u32::<LittleEndian>()?;
    if t == 0 || m == 0 {
        return Err(MssError::FormatError(format!(
            "{}: zero dimension ({t} x {m})",
            path.display()
        )));
    }
    let mut data = Vec::with_capacity(t * m);
    for _ in 0..t * m {
        data.push(r.read_f32::<LittleEndian>()? as f64);
    }
    MelSpectrogram::from_vec(data, m, shift_us as f64 / 1000.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn save_load_save_is_bit_exact() {
        let dir = tempdir().unwrap();
        let p1 = dir.path().join("a.mel");
        let p2 = dir.path().join("b.mel");
        let data: Vec<f64> = (0..6 * 4).map(|i| (i as f64) * 0.25 - 3.0).collect();
        let mel = MelSpectrogram::from_vec(data, 4, 12.5).unwrap();
        write_mel(&p1, &mel).unwrap();
        let loaded = read_mel(&p1).unwrap();
        write_mel(&p2, &loaded).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        // Values above are exactly representable in f32.
        assert_eq!(loaded, mel);
        assert_eq!(loaded.frame_shift_ms(), 12.5);
    }

    #[test]
    fn corrupted_magic_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.mel");
        let mel = MelSpectrogram::from_vec(vec![0.5; 8], 4, 12.5).unwrap();
        write_mel(&path, &mel).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] ^= 0xFF;
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(read_mel(&path), Err(MssError::FormatError(_))));
    }
}
