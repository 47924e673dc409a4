//! BER encoding of SNMP v2c messages (RFC 3416 PDUs, RFC 1157 framing).
//! Only definite-length, single-byte-tag forms are produced or accepted.

use super::Oid;

pub const VERSION_2C: i64 = 1;

const TAG_INTEGER: u8 = 0x02;
const TAG_OCTET_STRING: u8 = 0x04;
const TAG_NULL: u8 = 0x05;
const TAG_OID: u8 = 0x06;
const TAG_SEQUENCE: u8 = 0x30;
const TAG_IP_ADDRESS: u8 = 0x40;
const TAG_COUNTER32: u8 = 0x41;
const TAG_GAUGE32: u8 = 0x42;
const TAG_TIMETICKS: u8 = 0x43;
const TAG_COUNTER64: u8 = 0x46;
const TAG_NO_SUCH_OBJECT: u8 = 0x80;
const TAG_NO_SUCH_INSTANCE: u8 = 0x81;
const TAG_END_OF_MIB_VIEW: u8 = 0x82;

/// error-status values used here (RFC 3416 section 3).
pub mod error_status {
    pub const NO_ERROR: i64 = 0;
    pub const TOO_BIG: i64 = 1;
    pub const NO_SUCH_NAME: i64 = 2;
    pub const GEN_ERR: i64 = 5;
    pub const AUTHORIZATION_ERROR: i64 = 16;
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("truncated input")]
    Truncated,
    #[error("unexpected tag 0x{found:02x}, wanted 0x{wanted:02x}")]
    UnexpectedTag { wanted: u8, found: u8 },
    #[error("unsupported tag 0x{0:02x}")]
    UnsupportedTag(u8),
    #[error("bad length encoding")]
    BadLength,
    #[error("integer out of range")]
    IntegerRange,
    #[error("bad object identifier")]
    BadOid,
    #[error("trailing bytes after message")]
    Trailing,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Value {
    Integer(i64),
    OctetString(Vec<u8>),
    Null,
    ObjectId(Oid),
    IpAddress([u8; 4]),
    Counter32(u32),
    Gauge32(u32),
    TimeTicks(u32),
    Counter64(u64),
    NoSuchObject,
    NoSuchInstance,
    EndOfMibView,
}

impl Value {
    pub fn is_exception(&self) -> bool {
        matches!(self, Value::NoSuchObject | Value::NoSuchInstance | Value::EndOfMibView)
    }

    /// Integer-like values widened to i64.
    pub fn as_integer(&self) -> Option<i64> {
        match *self {
            Value::Integer(v) => Some(v),
            Value::Counter32(v) | Value::Gauge32(v) | Value::TimeTicks(v) => Some(v as i64),
            _ => None,
        }
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            Value::OctetString(b) => Some(b),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PduKind {
    Get,
    GetNext,
    Response,
    Set,
    GetBulk,
}

impl PduKind {
    fn tag(self) -> u8 {
        match self {
            PduKind::Get => 0xa0,
            PduKind::GetNext => 0xa1,
            PduKind::Response => 0xa2,
            PduKind::Set => 0xa3,
            PduKind::GetBulk => 0xa5,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0xa0 => PduKind::Get,
            0xa1 => PduKind::GetNext,
            0xa2 => PduKind::Response,
            0xa3 => PduKind::Set,
            0xa5 => PduKind::GetBulk,
            _ => return None,
        })
    }
}

/// A PDU. For GetBulk, `error_status` and `error_index` carry
/// non-repeaters and max-repetitions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pdu {
    pub kind: PduKind,
    pub request_id: i32,
    pub error_status: i64,
    pub error_index: i64,
    pub varbinds: Vec<(Oid, Value)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub version: i64,
    pub community: Vec<u8>,
    pub pdu: Pdu,
}

impl Message {
    pub fn encode(&self) -> Vec<u8> {
        let mut body = Vec::new();
        put_integer(&mut body, TAG_INTEGER, self.version);
        put_tlv(&mut body, TAG_OCTET_STRING, &self.community);
        encode_pdu(&mut body, &self.pdu);
        let mut out = Vec::with_capacity(body.len() + 4);
        put_tlv(&mut out, TAG_SEQUENCE, &body);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut outer = Reader::new(bytes);
        let body = outer.expect(TAG_SEQUENCE)?;
        if !outer.is_empty() {
            return Err(DecodeError::Trailing);
        }
        let mut r = Reader::new(body);
        let version = decode_integer(r.expect(TAG_INTEGER)?)?;
        let community = r.expect(TAG_OCTET_STRING)?.to_vec();
        let (tag, pdu_body) = r.tlv()?;
        let kind = PduKind::from_tag(tag).ok_or(DecodeError::UnsupportedTag(tag))?;
        let pdu = decode_pdu(kind, pdu_body)?;
        Ok(Message { version, community, pdu })
    }
}

fn encode_pdu(out: &mut Vec<u8>, pdu: &Pdu) {
    let mut body = Vec::new();
    put_integer(&mut body, TAG_INTEGER, pdu.request_id as i64);
    put_integer(&mut body, TAG_INTEGER, pdu.error_status);
    put_integer(&mut body, TAG_INTEGER, pdu.error_index);
    let mut list = Vec::new();
    for (oid, value) in &pdu.varbinds {
        let mut vb = Vec::new();
        put_oid(&mut vb, oid);
        put_value(&mut vb, value);
        put_tlv(&mut list, TAG_SEQUENCE, &vb);
    }
    put_tlv(&mut body, TAG_SEQUENCE, &list);
    put_tlv(out, pdu.kind.tag(), &body);
}

fn decode_pdu(kind: PduKind, body: &[u8]) -> Result<Pdu, DecodeError> {
    let mut r = Reader::new(body);
    let request_id = decode_integer(r.expect(TAG_INTEGER)?)?;
    let request_id = i32::try_from(request_id).map_err(|_| DecodeError::IntegerRange)?;
    let error_status = decode_integer(r.expect(TAG_INTEGER)?)?;
    let error_index = decode_integer(r.expect(TAG_INTEGER)?)?;
    let mut list = Reader::new(r.expect(TAG_SEQUENCE)?);
    let mut varbinds = Vec::new();
    while !list.is_empty() {
        let mut vb = Reader::new(list.expect(TAG_SEQUENCE)?);
        let oid = decode_oid(vb.expect(TAG_OID)?)?;
        let (tag, content) = vb.tlv()?;
        varbinds.push((oid, decode_value(tag, content)?));
    }
    Ok(Pdu { kind, request_id, error_status, error_index, varbinds })
}

fn put_length(out: &mut Vec<u8>, len: usize) {
    if len < 0x80 {
        out.push(len as u8);
    } else {
        let bytes = (len as u64).to_be_bytes();
        let skip = bytes.iter().take_while(|b| **b == 0).count();
        out.push(0x80 | (8 - skip) as u8);
        out.extend_from_slice(&bytes[skip..]);
    }
}

fn put_tlv(out: &mut Vec<u8>, tag: u8, content: &[u8]) {
    out.push(tag);
    put_length(out, content.len());
    out.extend_from_slice(content);
}

fn put_integer(out: &mut Vec<u8>, tag: u8, v: i64) {
    let bytes = v.to_be_bytes();
    // Drop redundant leading sign octets.
    let mut start = 0;
    while start < 7 {
        let (b, next) = (bytes[start], bytes[start + 1]);
        if (b == 0x00 && next & 0x80 == 0) || (b == 0xff && next & 0x80 != 0) {
            start += 1;
        } else {
            break;
        }
    }
    put_tlv(out, tag, &bytes[start..]);
}

fn put_unsigned(out: &mut Vec<u8>, tag: u8, v: u64) {
    let bytes = v.to_be_bytes();
    let mut content = Vec::with_capacity(9);
    let skip = bytes.iter().take_while(|b| **b == 0).count().min(7);
    if bytes[skip] & 0x80 != 0 {
        content.push(0);
    }
    content.extend_from_slice(&bytes[skip..]);
    put_tlv(out, tag, &content);
}

fn put_oid(out: &mut Vec<u8>, oid: &Oid) {
    let arcs = oid.arcs();
    let mut content = Vec::new();
    put_base128(&mut content, arcs[0] as u64 * 40 + arcs[1] as u64);
    for &arc in &arcs[2..] {
        put_base128(&mut content, arc as u64);
    }
    put_tlv(out, TAG_OID, &content);
}

fn put_base128(out: &mut Vec<u8>, mut v: u64) {
    let mut tmp = [0u8; 10];
    let mut i = tmp.len();
    loop {
        i -= 1;
        tmp[i] = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            break;
        }
    }
    let last = tmp.len() - 1;
    for (j, b) in tmp[i..].iter().enumerate() {
        out.push(if i + j == last { *b } else { b | 0x80 });
    }
}

fn put_value(out: &mut Vec<u8>, value: &Value) {
    match value {
        Value::Integer(v) => put_integer(out, TAG_INTEGER, *v),
        Value::OctetString(b) => put_tlv(out, TAG_OCTET_STRING, b),
        Value::Null => put_tlv(out, TAG_NULL, &[]),
        Value::ObjectId(oid) => put_oid(out, oid),
        Value::IpAddress(ip) => put_tlv(out, TAG_IP_ADDRESS, ip),
        Value::Counter32(v) => put_unsigned(out, TAG_COUNTER32, *v as u64),
        Value::Gauge32(v) => put_unsigned(out, TAG_GAUGE32, *v as u64),
        Value::TimeTicks(v) => put_unsigned(out, TAG_TIMETICKS, *v as u64),
        Value::Counter64(v) => put_unsigned(out, TAG_COUNTER64, *v),
        Value::NoSuchObject => put_tlv(out, TAG_NO_SUCH_OBJECT, &[]),
        Value::NoSuchInstance => put_tlv(out, TAG_NO_SUCH_INSTANCE, &[]),
        Value::EndOfMibView => put_tlv(out, TAG_END_OF_MIB_VIEW, &[]),
    }
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf }
    }

    fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    fn tlv(&mut self) -> Result<(u8, &'a [u8]), DecodeError> {
        let (&tag, rest) = self.buf.split_first().ok_or(DecodeError::Truncated)?;
        if tag & 0x1f == 0x1f {
            return Err(DecodeError::UnsupportedTag(tag));
        }
        let (&first, mut rest) = rest.split_first().ok_or(DecodeError::Truncated)?;
        let len = if first < 0x80 {
            first as usize
        } else {
            let n = (first & 0x7f) as usize;
            if n == 0 || n > 4 || rest.len() < n {
                return Err(DecodeError::BadLength);
            }
            let len = rest[..n].iter().fold(0usize, |acc, b| (acc << 8) | *b as usize);
            rest = &rest[n..];
            len
        };
        if rest.len() < len {
            return Err(DecodeError::Truncated);
        }
        let (content, tail) = rest.split_at(len);
        self.buf = tail;
        Ok((tag, content))
    }

    fn expect(&mut self, wanted: u8) -> Result<&'a [u8], DecodeError> {
        let (found, content) = self.tlv()?;
        if found != wanted {
            return Err(DecodeError::UnexpectedTag { wanted, found });
        }
        Ok(content)
    }
}

fn decode_integer(content: &[u8]) -> Result<i64, DecodeError> {
    if content.is_empty() || content.len() > 8 {
        return Err(DecodeError::IntegerRange);
    }
    let negative = content[0] & 0x80 != 0;
    let mut v: i64 = if negative { -1 } else { 0 };
    for b in content {
        v = (v << 8) | *b as i64;
    }
    Ok(v)
}

fn decode_unsigned(content: &[u8], max: u64) -> Result<u64, DecodeError> {
    if content.is_empty() || content.len() > 9 || (content.len() == 9 && content[0] != 0) {
        return Err(DecodeError::IntegerRange);
    }
    let v = content.iter().fold(0u128, |acc, b| (acc << 8) | *b as u128);
    if v > max as u128 {
        return Err(DecodeError::IntegerRange);
    }
    Ok(v as u64)
}

fn decode_oid(content: &[u8]) -> Result<Oid, DecodeError> {
    let mut subids = Vec::new();
    let mut acc: u64 = 0;
    let mut in_progress = false;
    for &b in content {
        if acc > (u64::MAX >> 7) {
            return Err(DecodeError::BadOid);
        }
        acc = (acc << 7) | (b & 0x7f) as u64;
        in_progress = b & 0x80 != 0;
        if !in_progress {
            subids.push(acc);
            acc = 0;
        }
    }
    if in_progress || subids.is_empty() {
        return Err(DecodeError::BadOid);
    }
    let first = subids[0];
    let (a, b) = match first {
        0..=39 => (0, first),
        40..=79 => (1, first - 40),
        _ => (2, first - 80),
    };
    let mut arcs = Vec::with_capacity(subids.len() + 1);
    arcs.push(a as u32);
    for v in std::iter::once(b).chain(subids[1..].iter().copied()) {
        arcs.push(u32::try_from(v).map_err(|_| DecodeError::BadOid)?);
    }
    Oid::new(arcs).map_err(|_| DecodeError::BadOid)
}

fn decode_value(tag: u8, content: &[u8]) -> Result<Value, DecodeError> {
    Ok(match tag {
        TAG_INTEGER => Value::Integer(decode_integer(content)?),
        TAG_OCTET_STRING => Value::OctetString(content.to_vec()),
        TAG_NULL => Value::Null,
        TAG_OID => Value::ObjectId(decode_oid(content)?),
        TAG_IP_ADDRESS => {
            Value::IpAddress(<[u8; 4]>::try_from(content).map_err(|_| DecodeError::BadLength)?)
        }
        TAG_COUNTER32 => Value::Counter32(decode_unsigned(content, u32::MAX as u64)? as u32),
        TAG_GAUGE32 => Value::Gauge32(decode_unsigned(content, u32::MAX as u64)? as u32),
        TAG_TIMETICKS => Value::TimeTicks(decode_unsigned(content, u32::MAX as u64)? as u32),
        TAG_COUNTER64 => Value::Counter64(decode_unsigned(content, u64::MAX)?),
        TAG_NO_SUCH_OBJECT => Value::NoSuchObject,
        TAG_NO_SUCH_INSTANCE => Value::NoSuchInstance,
        TAG_END_OF_MIB_VIEW => Value::EndOfMibView,
        other => return Err(DecodeError::UnsupportedTag(other)),
    })
}
