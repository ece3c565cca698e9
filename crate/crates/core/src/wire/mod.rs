//! EEG packets on the wire.
//!
//! One UDP datagram carries one JSON object:
//!
//! ```json
//! {"type":"bandPower","seq":12,"ts":1700000000000,"channels":16,"data":[[...],...]}
//! ```
//!
//! `type` is `raw`, `fft` or `bandPower`; `data` has one row per channel.
//! See `docs/wire.md` for the full schema.

mod layout;
pub mod synth;
pub mod udp;

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use layout::{ChannelLayout, Lobe, Side};
pub use synth::{AmplitudeGroup, Segment, StateScript, SynthConfig, SynthFrame, Synthesizer};
pub use udp::{Latest, LatestCell, ReceiverHandle, ReceiverStats, UdpReceiver, UdpSender};

/// IPv4 UDP payload limit.
pub const MAX_DATAGRAM: usize = 65_507;

#[derive(Debug, Error)]
pub enum WireError {
    #[error("malformed packet: {0}")]
    Parse(String),
    #[error("unknown packet type {0:?}")]
    UnknownKind(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{kind} packet holds negative value {value} at channel {channel}")]
    NegativeValue {
        kind: PacketKind,
        channel: usize,
        value: f64,
    },
    #[error("non-finite value in payload")]
    NonFinite,
    #[error("encoded datagram is {0} bytes, limit is {MAX_DATAGRAM}")]
    DatagramTooLarge(usize),
    #[error("bad channel layout: {0}")]
    Layout(String),
    #[error("bad state script: {0}")]
    Script(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PacketKind {
    #[serde(rename = "raw")]
    RawWindow,
    #[serde(rename = "fft")]
    FftFrame,
    #[serde(rename = "bandPower")]
    BandPowerFrame,
}

impl PacketKind {
    pub fn wire_name(self) -> &'static str {
        match self {
            PacketKind::RawWindow => "raw",
            PacketKind::FftFrame => "fft",
            PacketKind::BandPowerFrame => "bandPower",
        }
    }

    pub fn from_wire(name: &str) -> Option<Self> {
        match name {
            "raw" => Some(PacketKind::RawWindow),
            "fft" => Some(PacketKind::FftFrame),
            "bandPower" => Some(PacketKind::BandPowerFrame),
            _ => None,
        }
    }
}

impl std::fmt::Display for PacketKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.wire_name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WirePacket {
    pub kind: PacketKind,
    pub seq: u64,
    pub timestamp_ms: u64,
    /// `channels × K` rows.
    pub payload: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct Datagram<'a> {
    #[serde(rename = "type")]
    kind: std::borrow::Cow<'a, str>,
    seq: u64,
    ts: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    channels: Option<usize>,
    data: std::borrow::Cow<'a, [Vec<f64>]>,
}

impl WirePacket {
    pub fn new(kind: PacketKind, seq: u64, timestamp_ms: u64, payload: Vec<Vec<f64>>) -> Self {
        WirePacket {
            kind,
            seq,
            timestamp_ms,
            payload,
        }
    }

    pub fn channels(&self) -> usize {
        self.payload.len()
    }

    /// Row length K (window length, bin count or band count).
    pub fn width(&self) -> usize {
        self.payload.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<(), WireError> {
        if self.payload.is_empty() {
            return Err(WireError::ShapeMismatch("packet has no channels".into()));
        }
        let k = self.width();
        if k == 0 {
            return Err(WireError::ShapeMismatch("channel rows are empty".into()));
        }
        for (channel, row) in self.payload.iter().enumerate() {
            if row.len() != k {
                return Err(WireError::ShapeMismatch(format!(
                    "channel {channel} has {} values, expected {k}",
                    row.len()
                )));
            }
            for &value in row {
                if !value.is_finite() {
                    return Err(WireError::NonFinite);
                }
                if value < 0.0 && self.kind != PacketKind::RawWindow {
                    return Err(WireError::NegativeValue {
                        kind: self.kind,
                        channel,
                        value,
                    });
                }
            }
        }
        Ok(())
    }
}

pub fn parse_packet(bytes: &[u8]) -> Result<WirePacket, WireError> {
    let dg: Datagram<'_> =
        serde_json::from_slice(bytes).map_err(|e| WireError::Parse(e.to_string()))?;
    let kind = PacketKind::from_wire(&dg.kind)
        .ok_or_else(|| WireError::UnknownKind(dg.kind.to_string()))?;
    let payload = dg.data.into_owned();
    if let Some(declared) = dg.channels {
        if declared != payload.len() {
            return Err(WireError::ShapeMismatch(format!(
                "declared {declared} channels, data has {} rows",
                payload.len()
            )));
        }
    }
    let packet = WirePacket {
        kind,
        seq: dg.seq,
        timestamp_ms: dg.ts,
        payload,
    };
    packet.validate()?;
    Ok(packet)
}

pub fn encode_packet(p: &WirePacket) -> Result<Vec<u8>, WireError> {
    p.validate()?;
    let dg = Datagram {
        kind: p.kind.wire_name().into(),
        seq: p.seq,
        ts: p.timestamp_ms,
        channels: Some(p.channels()),
        data: std::borrow::Cow::Borrowed(&p.payload),
    };
    let bytes = serde_json::to_vec(&dg).map_err(|e| WireError::Parse(e.to_string()))?;
    if bytes.len() > MAX_DATAGRAM {
        return Err(WireError::DatagramTooLarge(bytes.len()));
    }
    Ok(bytes)
}

/// Rounds to six significant digits, the precision the synthesizer streams at.
/// Keeps a 16 × 256-bin FFT frame inside one datagram.
pub fn quantize(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.5e}").parse().unwrap_or(v)
}

/// Writes packets as JSON lines, one datagram per line.
pub fn write_trace<W: Write>(mut out: W, packets: &[WirePacket]) -> Result<(), WireError> {
    for p in packets {
        let mut line = serde_json::to_vec(&Datagram {
            kind: p.kind.wire_name().into(),
            seq: p.seq,
            ts: p.timestamp_ms,
            channels: Some(p.channels()),
            data: std::borrow::Cow::Borrowed(&p.payload),
        })
        .map_err(|e| WireError::Parse(e.to_string()))?;
        line.push(b'\n');
        out.write_all(&line)?;
    }
    Ok(())
}

pub fn read_trace<R: BufRead>(input: R) -> Result<Vec<WirePacket>, WireError> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_packet(line.as_bytes())?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn band_frame(seq: u64) -> WirePacket {
        let payload = (0..16)
            .map(|c| (0..5).map(|b| (c * 5 + b) as f64 * 0.5).collect())
            .collect();
        WirePacket::new(PacketKind::BandPowerFrame, seq, 0, payload)
    }

    #[test]
    fn parses_band_power_datagram_without_channel_key() {
        let rows: Vec<String> = (0..16).map(|_| "[1,2,3,4,5]".to_string()).collect();
        let text = format!(r#"{{"type":"bandPower","seq":1,"ts":0,"data":[{}]}}"#, rows.join(","));
        let p = parse_packet(text.as_bytes()).unwrap();
        assert_eq!(p.kind, PacketKind::BandPowerFrame);
        assert_eq!(p.seq, 1);
        assert_eq!((p.channels(), p.width()), (16, 5));
    }

    #[test]
    fn rejects_declared_channel_mismatch() {
        let rows: Vec<String> = (0..15).map(|_| "[1,2,3,4,5]".to_string()).collect();
        let text = format!(
            r#"{{"type":"bandPower","seq":1,"ts":0,"channels":16,"data":[{}]}}"#,
            rows.join(",")
        );
        assert!(matches!(
            parse_packet(text.as_bytes()),
            Err(WireError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(parse_packet(b"{not json"), Err(WireError::Parse(_))));
        assert!(matches!(
            parse_packet(br#"{"type":"eeg","seq":1,"ts":0,"data":[[1]]}"#),
            Err(WireError::UnknownKind(k)) if k == "eeg"
        ));
        assert!(matches!(
            parse_packet(br#"{"type":"fft","seq":1,"ts":0,"data":[[1,-2]]}"#),
            Err(WireError::NegativeValue { .. })
        ));
        assert!(matches!(
            parse_packet(br#"{"type":"fft","seq":1,"ts":0,"data":[[1,2],[3]]}"#),
            Err(WireError::ShapeMismatch(_))
        ));
        // raw samples may be negative
        assert!(parse_packet(br#"{"type":"raw","seq":1,"ts":0,"data":[[1,-2]]}"#).is_ok());
    }

    #[test]
    fn encoded_band_frame_is_small() {
        let bytes = encode_packet(&band_frame(3)).unwrap();
        assert!(bytes.len() < 4096);
        assert_eq!(parse_packet(&bytes).unwrap(), band_frame(3));
    }

    #[test]
    fn full_fft_frame_fits_in_one_datagram() {
        // µV² bins spanning several decades, at streaming precision
        let payload: Vec<Vec<f64>> = (0..16)
            .map(|c| {
                (0..256)
                    .map(|k| quantize(1234.5678 / (1.0 + k as f64) * (1.0 + c as f64 * 0.37)))
                    .collect()
            })
            .collect();
        let p = WirePacket::new(PacketKind::FftFrame, 9, 1_700_000_000_000, payload);
        let bytes = encode_packet(&p).unwrap();
        assert!(bytes.len() <= MAX_DATAGRAM, "{} bytes", bytes.len());
        assert_eq!(parse_packet(&bytes).unwrap(), p);
    }

    #[test]
    fn oversized_payload_is_refused() {
        let payload = vec![vec![0.123456789012345_f64; 2000]; 16];
        let p = WirePacket::new(PacketKind::FftFrame, 1, 0, payload);
        assert!(matches!(encode_packet(&p), Err(WireError::DatagramTooLarge(_))));
    }

    #[test]
    fn trace_round_trip() {
        let packets = vec![band_frame(1), band_frame(2)];
        let mut buf = Vec::new();
        write_trace(&mut buf, &packets).unwrap();
        assert_eq!(read_trace(buf.as_slice()).unwrap(), packets);
    }

    fn arb_packet() -> impl Strategy<Value = WirePacket> {
        (0usize..3, any::<u64>(), any::<u64>(), 1usize..17, 1usize..40).prop_flat_map(
            |(k, seq, ts, ch, width)| {
                let kind = [PacketKind::RawWindow, PacketKind::FftFrame, PacketKind::BandPowerFrame][k];
                let lo = if kind == PacketKind::RawWindow { -1e9 } else { 0.0 };
                prop::collection::vec(prop::collection::vec(lo..1e9f64, width), ch)
                    .prop_map(move |payload| WirePacket::new(kind, seq, ts, payload))
            },
        )
    }

    proptest! {
        #[test]
        fn encode_parse_identity(p in arb_packet()) {
            let bytes = encode_packet(&p).unwrap();
            prop_assert_eq!(parse_packet(&bytes).unwrap(), p);
        }

        #[test]
        fn parser_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
            let _ = parse_packet(&bytes);
        }
    }
}
