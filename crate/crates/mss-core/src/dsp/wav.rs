//! RIFF WAV reader/writer restricted to 16-bit PCM mono.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{MssError, Result};

use super::AudioClip;

pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let mut r = BufReader::new(File::open(path)?);

    let mut riff = [0u8; 4];
    r.read_exact(&mut riff)?;
    if &riff != b"RIFF" {
        return Err(MssError::FormatError(format!(
            "{}: missing RIFF header",
            path.display()
        )));
    }
    let _riff_size = r.read_u32::<LittleEndian>()?;
    let mut wave = [0u8; 4];
    r.read_exact(&mut wave)?;
    if &wave != b"WAVE" {
        return Err(MssError::FormatError(format!(
            "{}: not a WAVE file",
            path.display()
        )));
    }

    let mut sample_rate = 0u32;
    let mut data: Option<Vec<u8>> = None;
    let mut have_fmt = false;

    loop {
        let mut id = [0u8; 4];
        match r.read_exact(&mut id) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let size = r.read_u32::<LittleEndian>()? as usize;
        match &id {
            b"fmt " => {
                let mut fmt = vec![0u8; size];
                r.read_exact(&mut fmt)?;
                let audio_format = u16::from_le_bytes([fmt[0], fmt[1]]);
                let channels = u16::from_le_bytes([fmt[2], fmt[3]]);
                sample_rate = u32::from_le_bytes([fmt[4], fmt[5], fmt[6], fmt[7]]);
                let bits = u16::from_le_bytes([fmt[14], fmt[15]]);
                if audio_format != 1 || bits != 16 {
                    return Err(MssError::FormatError(format!(
                        "{}: only 16-bit PCM is supported",
                        path.display()
                    )));
                }
                if channels != 1 {
                    return Err(MssError::FormatError(format!(
                        "{}: only mono is supported (got {channels} channels)",
                        path.display()
                    )));
                }
                have_fmt = true;
            }
            b"data" => {
                let mut buf = vec![0u8; size];
                r.read_exact(&mut buf)?;
                data = Some(buf);
            }
            _ => {
                // Skip unknown chunks (word aligned).
                let skip = size + (size & 1);
                std::io::copy(&mut r.by_ref().take(skip as u64), &mut std::io::sink())?;
            }
        }
        if size & 1 == 1 && id == *b"data" {
            let mut pad = [0u8; 1];
            let _ = r.read_exact(&mut pad);
        }
    }

    if !have_fmt {
        return Err(MssError::FormatError(format!(
            "{}: missing fmt chunk",
            path.display()
        )));
    }
    let bytes = data.ok_or_else(|| {
        MssError::FormatError(format!("{}: missing data chunk", path.display()))
    })?;
    let samples: Vec<f64> = bytes
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32_768.0)
        .collect();
    AudioClip::new(samples, sample_rate)
}

pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let n = clip.len() as u32;
    let data_bytes = n * 2;
    let sr = clip.sample_rate();

    w.write_all(b"RIFF")?;
    w.write_u32::<LittleEndian>(36 + data_bytes)?;
    w.write_all(b"WAVE")?;

    w.write_all(b"fmt ")?;
    w.write_u32::<LittleEndian>(16)?;
    w.write_u16::<LittleEndian>(1)?; // PCM
    w.write_u16::<LittleEndian>(1)?; // mono
    w.write_u32::<LittleEndian>(sr)?;
    w.write_u32::<LittleEndian>(sr * 2)?; // byte rate
    w.write_u16::<LittleEndian>(2)?; // block align
    w.write_u16::<LittleEndian>(16)?; // bits per sample

    w.write_all(b"data")?;
    w.write_u32::<LittleEndian>(data_bytes)?;
    for &s in clip.samples() {
        let v = (s.clamp(-1.0, 1.0) * 32_767.0).round() as i16;
        w.write_i16::<LittleEndian>(v)?;
    }
    w.flush()?;
    Ok(())
}
