// Tensor blob: u32 rank, rank × u32 extents, then product(extents) × f32,
// all little-endian. Values are narrowed to f32 on write.

use std::io::{self, Read, Write};

use super::Tensor;

const MAX_RANK: u32 = 16;

pub fn write_blob<W: Write>(w: &mut W, t: &Tensor) -> io::Result<()> {
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &e in t.shape() {
        w.write_all(&(e as u32).to_le_bytes())?;
    }
    let data = t.data();
    let mut buf = Vec::with_capacity(data.len() * 4);
    for &v in data.iter() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_blob<R: Read>(r: &mut R) -> io::Result<Tensor> {
    let invalid = |msg: String| io::Error::new(io::ErrorKind::InvalidData, msg);
    let rank = read_u32(r)?;
    if rank > MAX_RANK {
        return Err(invalid(format!("tensor rank {rank} exceeds {MAX_RANK}")));
    }
    let mut shape = Vec::with_capacity(rank as usize);
    for _ in 0..rank {
        shape.push(read_u32(r)? as usize);
    }
    let n: usize = shape.iter().product();
    let mut raw = vec![0u8; n * 4];
    r.read_exact(&mut raw)?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Tensor::new(data, &shape).map_err(|e| invalid(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_little_endian() {
        let t = Tensor::new(vec![1.0, -2.5], &[2, 1]).unwrap();
        let mut buf = Vec::new();
        write_blob(&mut buf, &t).unwrap();
        assert_eq!(&buf[..12], &[2, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&buf[12..16], &1.0f32.to_le_bytes());
        assert_eq!(buf.len(), 12 + 8);
    }

    #[test]
    fn truncated_blob_is_an_error() {
        let t = Tensor::new(vec![1.0; 4], &[4]).unwrap();
        let mut buf = Vec::new();
        write_blob(&mut buf, &t).unwrap();
        buf.truncate(buf.len() - 1);
        assert!(read_blob(&mut buf.as_slice()).is_err());
    }

    proptest! {
        #[test]
        fn blob_round_trip_is_exact_for_f32_values(
            dims in prop::collection::vec(1usize..5, 0..4),
            seed in any::<u32>(),
        ) {
            let n: usize = dims.iter().product();
            let data: Vec<f64> = (0..n)
                .map(|i| ((seed as f64 + i as f64) * 0.731).sin() as f32 as f64)
                .collect();
            let t = Tensor::new(data.clone(), &dims).unwrap();
            let mut buf = Vec::new();
            write_blob(&mut buf, &t).unwrap();
            let back = read_blob(&mut buf.as_slice()).unwrap();
            prop_assert_eq!(back.shape(), &dims[..]);
            prop_assert_eq!(back.to_vec(), data);
        }
    }
}
