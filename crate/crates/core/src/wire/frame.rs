//! Length-prefixed framing for stream transports: a big-endian `u32` byte
//! count followed by that many bytes of canonical encoding.

use std::io::{self, Read, Write};

/// Largest frame accepted from a peer.
pub const MAX_FRAME_LEN: usize = 1 << 20;

pub fn write_frame<W: Write>(w: &mut W, body: &[u8]) -> io::Result<()> {
    let len = u32::try_from(body.len())
        .ok()
        .filter(|&n| n as usize <= MAX_FRAME_LEN)
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_be_bytes())?;
    w.write_all(body)?;
    w.flush()
}

pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME_LEN {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "frame too large"));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(body)
}

pub fn frame(body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(body.len() + 4);
    write_frame(&mut out, body).expect("in-memory write");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_several_frames() {
        let mut buf = Vec::new();
        write_frame(&mut buf, b"abc").unwrap();
        write_frame(&mut buf, b"").unwrap();
        assert_eq!(&buf[..7], &[0, 0, 0, 3, b'a', b'b', b'c']);
        let mut r = &buf[..];
        assert_eq!(read_frame(&mut r).unwrap(), b"abc");
        assert_eq!(read_frame(&mut r).unwrap(), b"");
        assert!(read_frame(&mut r).is_err());
    }

    #[test]
    fn oversized_length_is_refused() {
        let buf = (MAX_FRAME_LEN as u32 + 1).to_be_bytes();
        assert_eq!(
            read_frame(&mut &buf[..]).unwrap_err().kind(),
            io::ErrorKind::InvalidData
        );
    }

    #[test]
    fn short_body_is_an_error() {
        let buf = [0, 0, 0, 5, 1, 2];
        assert!(read_frame(&mut &buf[..]).is_err());
    }
}
