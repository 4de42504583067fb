//! Binary model files.
//!
//! ```text
//! header:  magic "PTQM" | version u16 | section_count u16
//! section: kind u8 | scheme u8 | rows u32 | cols u32 | norm_param_count u32
//!          | norm_params f64[norm_param_count] | payload
//! ```
//!
//! Everything is little-endian. The payload is a LSB-first bit stream of
//! `rows * cols` fields of `bits_per_weight` bits, zero-padded to a byte:
//! int4 codes are stored offset-binary (`code + 8`, so the low nibble holds
//! the even index), int8 codes as two's-complement bytes, histogram and
//! codebook codes as unsigned indices, and float64 tensors as raw
//! little-endian doubles.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::bytes::Reader;
use crate::error::{Error, Result};
use crate::quant::{Payload, QuantScheme, QuantizedTensor};

pub const MAGIC: &[u8; 4] = b"PTQM";
pub const VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SectionKind {
    XdawnFilters,
    Blda,
    ElmInput,
    ElmBias,
    ElmOutput,
    Standardizer,
}

impl SectionKind {
    pub const ALL: [SectionKind; 6] = [
        SectionKind::XdawnFilters,
        SectionKind::Blda,
        SectionKind::ElmInput,
        SectionKind::ElmBias,
        SectionKind::ElmOutput,
        SectionKind::Standardizer,
    ];

    pub fn tag(self) -> u8 {
        Self::ALL.iter().position(|&k| k == self).unwrap() as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.get(tag as usize).copied()
    }

    pub fn is_filter(self) -> bool {
        self == SectionKind::XdawnFilters
    }
}

impl fmt::Display for SectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SectionKind::XdawnFilters => "xdawn_filters",
            SectionKind::Blda => "blda",
            SectionKind::ElmInput => "elm_input",
            SectionKind::ElmBias => "elm_bias",
            SectionKind::ElmOutput => "elm_output",
            SectionKind::Standardizer => "standardizer",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Section {
    pub kind: SectionKind,
    pub tensor: QuantizedTensor,
}

impl Section {
    pub fn new(kind: SectionKind, tensor: QuantizedTensor) -> Self {
        Self { kind, tensor }
    }

    /// Logical size: codes plus float64 normalization parameters.
    pub fn logical_bits(&self) -> u64 {
        self.tensor.size_bits()
    }

    pub fn payload_bytes(&self) -> usize {
        payload_len(self.tensor.len(), self.tensor.scheme)
    }
}

pub fn payload_len(count: usize, scheme: QuantScheme) -> usize {
    (count * scheme.bits_per_weight() as usize).div_ceil(8)
}

fn stored_field(scheme: QuantScheme, code: i32) -> u32 {
    match scheme {
        QuantScheme::SymMaxInt4 | QuantScheme::AffineMinMaxInt4 => (code + 8) as u32,
        QuantScheme::SymMaxInt8 | QuantScheme::AffineMinMaxInt8 => code as i8 as u8 as u32,
        _ => code as u32,
    }
}

fn code_from_field(scheme: QuantScheme, field: u32) -> i32 {
    match scheme {
        QuantScheme::SymMaxInt4 | QuantScheme::AffineMinMaxInt4 => field as i32 - 8,
        QuantScheme::SymMaxInt8 | QuantScheme::AffineMinMaxInt8 => field as u8 as i8 as i32,
        _ => field as i32,
    }
}

/// Packs `width`-bit fields LSB-first.
pub fn pack_bits(fields: impl IntoIterator<Item = u32>, width: u32, out: &mut Vec<u8>) {
    let mut acc: u64 = 0;
    let mut filled = 0;
    for f in fields {
        debug_assert!(f < (1 << width));
        acc |= (f as u64) << filled;
        filled += width;
        while filled >= 8 {
            out.push(acc as u8);
            acc >>= 8;
            filled -= 8;
        }
    }
    if filled > 0 {
        out.push(acc as u8);
    }
}

/// Inverse of [`pack_bits`]; returns `None` if any padding bit is set.
pub fn unpack_bits(bytes: &[u8], width: u32, count: usize) -> Option<Vec<u32>> {
    let mask = (1u64 << width) - 1;
    let mut out = Vec::with_capacity(count);
    let mut acc: u64 = 0;
    let mut filled = 0;
    let mut it = bytes.iter();
    while out.len() < count {
        while filled < width {
            acc |= (*it.next()? as u64) << filled;
            filled += 8;
        }
        out.push((acc & mask) as u32);
        acc >>= width;
        filled -= width;
    }
    (acc == 0 && it.next().is_none()).then_some(out)
}

pub fn encode_section(section: &Section, out: &mut Vec<u8>) -> Result<()> {
    let t = &section.tensor;
    t.validate()?;
    let (Ok(rows), Ok(cols), Ok(np)) = (u32::try_from(t.rows), u32::try_from(t.cols), u32::try_from(t.norm_params.len()))
    else {
        return Err(Error::Config(format!("section {} too large", section.kind)));
    };
    out.push(section.kind.tag());
    out.push(t.scheme.tag());
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    out.extend_from_slice(&np.to_le_bytes());
    for p in &t.norm_params {
        out.extend_from_slice(&p.to_le_bytes());
    }
    match &t.payload {
        Payload::Raw(values) => values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        Payload::Codes(codes) => {
            pack_bits(codes.iter().map(|&c| stored_field(t.scheme, c)), t.scheme.bits_per_weight(), out)
        }
    }
    Ok(())
}

pub fn encode_model(sections: &[Section]) -> Result<Vec<u8>> {
    let count = u16::try_from(sections.len()).map_err(|_| Error::Config("too many sections".into()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for s in sections {
        encode_section(s, &mut out)?;
    }
    Ok(out)
}

fn decode_section(r: &mut Reader<'_>, index: usize) -> Result<Section> {
    let start = r.offset();
    let name = format!("section {index}");
    let kind_tag = r.u8(&name)?;
    let kind = SectionKind::from_tag(kind_tag)
        .ok_or_else(|| Error::format(start, format!("{name}: unknown kind {kind_tag}")))?;
    let name = format!("section {index} ({kind})");
    let scheme_tag = r.u8(&name)?;
    let scheme = QuantScheme::from_tag(scheme_tag)
        .ok_or_else(|| Error::format(start + 1, format!("{name}: unknown scheme {scheme_tag}")))?;
    let rows = r.u32(&name)? as usize;
    let cols = r.u32(&name)? as usize;
    let np_at = r.offset();
    let np = r.u32(&name)? as usize;
    if np != scheme.norm_param_count() {
        return Err(Error::format(
            np_at,
            format!("{name}: {scheme} needs {} normalization parameters, header says {np}", scheme.norm_param_count()),
        ));
    }
    let norm_params = (0..np).map(|_| r.f64(&name)).collect::<Result<Vec<_>>>()?;
    let count = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::format(start, format!("{name}: dims overflow")))?;
    let payload_at = r.offset();
    let bytes = r.take(payload_len(count, scheme), &format!("{name} payload"))?;
    let payload = if scheme == QuantScheme::Float64 {
        Payload::Raw(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    } else {
        let fields = unpack_bits(bytes, scheme.bits_per_weight(), count)
            .ok_or_else(|| Error::format(payload_at, format!("{name}: nonzero padding bits")))?;
        Payload::Codes(fields.into_iter().map(|f| code_from_field(scheme, f)).collect())
    };
    let tensor = QuantizedTensor { scheme, rows, cols, norm_params, payload };
    tensor.validate().map_err(|e| match e {
        Error::Format { message, .. } => Error::format(payload_at, format!("{name}: {message}")),
        other => other,
    })?;
    Ok(Section { kind, tensor })
}

pub fn decode_model(bytes: &[u8]) -> Result<Vec<Section>> {
    let mut r = Reader::new(bytes);
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(Error::format(0, format!("bad magic {magic:?}, expected \"PTQM\"")));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let count = r.u16("section count")? as usize;
    let sections = (0..count).map(|i| decode_section(&mut r, i)).collect::<Result<Vec<_>>>()?;
    if r.remaining() != 0 {
        return Err(Error::format(r.offset(), format!("{} trailing bytes after last section", r.remaining())));
    }
    Ok(sections)
}

/// Writes the model and returns the file size in bytes.
pub fn save_model(sections: &[Section], path: &Path) -> Result<usize> {
    let bytes = encode_model(sections)?;
    fs::write(path, &bytes)?;
    Ok(bytes.len())
}

pub fn load_model(path: &Path) -> Result<Vec<Section>> {
    decode_model(&fs::read(path)?)
}

/// Sum of logical section sizes, split into filter and classifier parts.
pub fn logical_size(sections: &[Section]) -> crate::quant::SizeBreakdown {
    use crate::quant::{model_size_bits, TensorDescriptor, TensorRole};
    let descs: Vec<TensorDescriptor> = sections
        .iter()
        .map(|s| TensorDescriptor {
            role: if s.kind.is_filter() { TensorRole::Filter } else { TensorRole::Classifier },
            count: s.tensor.len() as u64,
            scheme: s.tensor.scheme,
        })
        .collect();
    model_size_bits(&descs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::quantize;
    use proptest::prelude::*;

    fn int4_section(n: usize) -> Section {
        let w: Vec<f64> = (0..n).map(|i| ((i * 37) % 17) as f64 - 8.0).collect();
        Section::new(SectionKind::Blda, quantize(&w, QuantScheme::SymMaxInt4).unwrap())
    }

    #[test]
    fn int4_payload_lengths() {
        assert_eq!(int4_section(256).payload_bytes(), 128);
        assert_eq!(int4_section(1025).payload_bytes(), 513);
        let mut buf = Vec::new();
        encode_section(&int4_section(1025), &mut buf).unwrap();
        assert_eq!(buf.len(), 14 + 8 + 513);
        assert_eq!(buf.last().unwrap() >> 4, 0);
    }

    #[test]
    fn nibble_layout() {
        let t = QuantizedTensor {
            scheme: QuantScheme::AffineMinMaxInt4,
            rows: 1,
            cols: 3,
            norm_params: vec![0.0, 1.0],
            payload: Payload::Codes(vec![-8, 7, -1]),
        };
        let mut buf = Vec::new();
        encode_section(&Section::new(SectionKind::Blda, t), &mut buf).unwrap();
        // -8 -> 0 (low), 7 -> 15 (high); -1 -> 7 then zero padding.
        assert_eq!(&buf[buf.len() - 2..], &[0xF0, 0x07]);
    }

    #[test]
    fn round_trip_and_fixed_point() {
        let sections = vec![
            Section::new(SectionKind::XdawnFilters, quantize(&[0.5; 256], QuantScheme::AffineMinMaxInt8).unwrap().with_dims(8, 32)),
            int4_section(1025),
            Section::new(SectionKind::ElmInput, quantize(&[1.0, -1.0, 1.0], QuantScheme::Codebook1Pm).unwrap()),
            Section::new(SectionKind::Standardizer, QuantizedTensor::float64(vec![1.5, -2.0])),
        ];
        let bytes = encode_model(&sections).unwrap();
        let back = decode_model(&bytes).unwrap();
        assert_eq!(back, sections);
        assert_eq!(encode_model(&back).unwrap(), bytes);
    }

    #[test]
    fn format_errors() {
        let bytes = encode_model(&[int4_section(1025)]).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'Q';
        assert!(matches!(decode_model(&bad), Err(Error::Format { offset: 0, .. })));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(decode_model(&bad), Err(Error::Format { offset: 4, .. })));

        let err = decode_model(&bytes[..bytes.len() - 10]).unwrap_err();
        assert!(matches!(&err, Error::Truncated { message, .. } if message.contains("section 0 (blda)")), "{err}");

        let mut bad = bytes.clone();
        *bad.last_mut().unwrap() |= 0x30;
        assert!(matches!(decode_model(&bad), Err(Error::Format { .. })));

        let mut bad = bytes.clone();
        bad.push(0);
        assert!(matches!(decode_model(&bad), Err(Error::Format { .. })));

        // Nibble 0 decodes to -8, outside the symmetric int4 range.
        let mut bad = bytes;
        let n = bad.len();
        bad[n - 5] = 0x00;
        assert!(matches!(decode_model(&bad), Err(Error::Format { .. })));
    }

    #[test]
    fn condition_one_one_sizes() {
        let sections = vec![
            Section::new(SectionKind::XdawnFilters, quantize(&vec![0.3; 256], QuantScheme::SymMaxInt4).unwrap()),
            int4_section(1025),
        ];
        let size = logical_size(&sections);
        assert_eq!(size.total_bits, 5252);
        let bytes = encode_model(&sections).unwrap();
        let header_bits = (8 + 2 * 14 + 2 * 8) * 8;
        let payload_bits = (bytes.len() * 8 - header_bits) as u64 + 2 * 64;
        assert!(payload_bits >= 5252 && payload_bits - 5252 < 8 * 2);
    }

    fn tensor() -> impl Strategy<Value = QuantizedTensor> {
        (prop::collection::vec(-100.0f64..100.0, 1..200), 0usize..10).prop_map(|(w, s)| {
            let mut w = w;
            let scheme = QuantScheme::ALL[s];
            if let Some(levels) = scheme.codebook() {
                w = w.iter().map(|v| levels[(v.abs() as usize) % levels.len()]).collect();
            }
            quantize(&w, scheme).unwrap()
        })
    }

    proptest! {
        #[test]
        fn random_models_round_trip(tensors in prop::collection::vec((tensor(), 0usize..6), 1..5)) {
            let sections: Vec<Section> = tensors.into_iter().map(|(t, k)| Section::new(SectionKind::ALL[k], t)).collect();
            let bytes = encode_model(&sections).unwrap();
            let back = decode_model(&bytes).unwrap();
            prop_assert_eq!(&back, &sections);
            let payload: usize = sections.iter().map(|s| s.payload_bytes()).sum();
            let norm: usize = sections.iter().map(|s| s.tensor.norm_params.len() * 8).sum();
            prop_assert_eq!(bytes.len(), 8 + 14 * sections.len() + norm + payload);
        }
    }
}
