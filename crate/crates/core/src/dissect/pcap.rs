//! Minimal classic pcap reader/writer (Ethernet link type only).

use thiserror::Error;

const MAGIC_USEC: u32 = 0xa1b2_c3d4;
const MAGIC_NSEC: u32 = 0xa1b2_3c4d;
pub const LINKTYPE_ETHERNET: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PcapError {
    #[error("truncated pcap file")]
    Truncated,
    #[error("bad pcap magic {0:#010x}")]
    BadMagic(u32),
    #[error("unsupported link type {0}")]
    LinkType(u32),
}

/// Returns the captured bytes of every record.
pub fn read_pcap(data: &[u8]) -> Result<Vec<Vec<u8>>, PcapError> {
    if data.len() < 24 {
        return Err(PcapError::Truncated);
    }
    let magic_le = u32::from_le_bytes(data[0..4].try_into().expect("4 bytes"));
    let little = match magic_le {
        MAGIC_USEC | MAGIC_NSEC => true,
        _ => {
            let be = u32::from_be_bytes(data[0..4].try_into().expect("4 bytes"));
            if be != MAGIC_USEC && be != MAGIC_NSEC {
                return Err(PcapError::BadMagic(magic_le));
            }
            false
        }
    };
    let read_u32 = |at: usize| -> u32 {
        let b: [u8; 4] = data[at..at + 4].try_into().expect("4 bytes");
        if little {
            u32::from_le_bytes(b)
        } else {
            u32::from_be_bytes(b)
        }
    };
    let link = read_u32(20);
    if link != LINKTYPE_ETHERNET {
        return Err(PcapError::LinkType(link));
    }
    let mut frames = Vec::new();
    let mut at = 24;
    while at < data.len() {
        if at + 16 > data.len() {
            return Err(PcapError::Truncated);
        }
        let incl = read_u32(at + 8) as usize;
        at += 16;
        let end = at.checked_add(incl).filter(|e| *e <= data.len()).ok_or(PcapError::Truncated)?;
        frames.push(data[at..end].to_vec());
        at = end;
    }
    Ok(frames)
}

pub fn write_pcap(frames: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend(MAGIC_USEC.to_le_bytes());
    out.extend(2u16.to_le_bytes());
    out.extend(4u16.to_le_bytes());
    out.extend(0i32.to_le_bytes());
    out.extend(0u32.to_le_bytes());
    out.extend(65535u32.to_le_bytes());
    out.extend(LINKTYPE_ETHERNET.to_le_bytes());
    for (i, frame) in frames.iter().enumerate() {
        out.extend((i as u32).to_le_bytes());
        out.extend(0u32.to_le_bytes());
        out.extend((frame.len() as u32).to_le_bytes());
        out.extend((frame.len() as u32).to_le_bytes());
        out.extend_from_slice(frame);
    }
    out
}
