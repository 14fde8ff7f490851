//! Line parsers. Each returns a [`Record`] with the raw device name; device
//! interning and timestamp normalization happen in the loader.
//!
//! Layouts:
//! - MSR Cambridge: `Timestamp,Hostname,DiskNumber,Type,Offset,Size,ResponseTime`
//!   with Windows filetime timestamps (100 ns ticks); device `<host>_<disk>`.
//! - Alibaba block traces: `device_id,opcode,offset,length,timestamp` with
//!   microsecond timestamps; device `vd<device_id>`.
//! - Systor '17: `Timestamp,Response,IOType,LUN,Offset,Size` with fractional
//!   second timestamps; device `lun<LUN>`.

use super::OpKind;
use crate::error::ParseError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub device: String,
    pub op: OpKind,
    pub offset: u64,
    pub length: u64,
    pub timestamp_ns: u64,
}

fn bad(line: u64, reason: impl Into<String>) -> ParseError {
    ParseError::Malformed { line, reason: reason.into() }
}

fn fields(text: &str, want: usize, line: u64) -> Result<Vec<&str>, ParseError> {
    let f: Vec<&str> = text.split(',').map(str::trim).collect();
    if f.len() < want {
        return Err(bad(line, format!("expected {want} fields, found {}", f.len())));
    }
    Ok(f)
}

fn num(field: &str, what: &str, line: u64) -> Result<u64, ParseError> {
    field.parse().map_err(|_| bad(line, format!("{what} `{field}` is not a non-negative integer")))
}

fn op(field: &str, line: u64) -> Result<OpKind, ParseError> {
    match field.to_ascii_lowercase().as_str() {
        "r" | "read" => Ok(OpKind::Read),
        "w" | "write" => Ok(OpKind::Write),
        _ => Err(bad(line, format!("unknown operation `{field}`"))),
    }
}

fn length(field: &str, line: u64) -> Result<u64, ParseError> {
    match num(field, "size", line)? {
        0 => Err(bad(line, "zero-length request")),
        n => Ok(n),
    }
}

pub fn parse_msr(text: &str, line: u64) -> Result<Record, ParseError> {
    let f = fields(text, 7, line)?;
    let ticks = num(f[0], "timestamp", line)?;
    let disk = num(f[2], "disk number", line)?;
    if f[1].is_empty() {
        return Err(bad(line, "empty hostname"));
    }
    Ok(Record {
        device: format!("{}_{}", f[1], disk),
        op: op(f[3], line)?,
        offset: num(f[4], "offset", line)?,
        length: length(f[5], line)?,
        timestamp_ns: ticks.saturating_mul(100),
    })
}

pub fn parse_alibaba(text: &str, line: u64) -> Result<Record, ParseError> {
    let f = fields(text, 5, line)?;
    let dev = num(f[0], "device id", line)?;
    let us = num(f[4], "timestamp", line)?;
    Ok(Record {
        device: format!("vd{dev}"),
        op: op(f[1], line)?,
        offset: num(f[2], "offset", line)?,
        length: length(f[3], line)?,
        timestamp_ns: us.saturating_mul(1000),
    })
}

/// `seconds[.fraction]` to nanoseconds without going through floating point.
fn seconds_to_ns(field: &str, line: u64) -> Result<u64, ParseError> {
    let (whole, frac) = field.split_once('.').unwrap_or((field, ""));
    let secs = num(whole, "timestamp", line)?;
    if frac.len() > 9 || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return Err(bad(line, format!("timestamp `{field}` is not decimal seconds")));
    }
    let nanos: u64 = if frac.is_empty() { 0 } else { format!("{frac:0<9}").parse().unwrap() };
    Ok(secs.saturating_mul(1_000_000_000).saturating_add(nanos))
}

pub fn parse_systor(text: &str, line: u64) -> Result<Record, ParseError> {
    let f = fields(text, 6, line)?;
    let lun = num(f[3], "LUN", line)?;
    Ok(Record {
        device: format!("lun{lun}"),
        op: op(f[2], line)?,
        offset: num(f[4], "offset", line)?,
        length: length(f[5], line)?,
        timestamp_ns: seconds_to_ns(f[0], line)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn msr_write_line() {
        let r = parse_msr("128166372016382155,prn,1,Write,3154124800,8192,2041", 1).unwrap();
        assert_eq!(
            r,
            Record {
                device: "prn_1".into(),
                op: OpKind::Write,
                offset: 3154124800,
                length: 8192,
                timestamp_ns: 12816637201638215500,
            }
        );
    }

    #[test]
    fn msr_errors_carry_line() {
        let e = parse_msr("1,prn,1,Read,abc,4096,1", 17).unwrap_err();
        assert!(matches!(e, ParseError::Malformed { line: 17, .. }));
        assert!(e.to_string().contains("offset"));
        assert!(parse_msr("1,prn,1,Read,0", 1).is_err());
        assert!(parse_msr("1,prn,1,Trim,0,4096,1", 1).is_err());
        assert!(parse_msr("1,prn,1,Read,0,0,1", 1).is_err());
        assert!(parse_msr("1,prn,1,Read,-5,4096,1", 1).is_err());
    }

    #[test]
    fn alibaba_line() {
        let r = parse_alibaba("49,W,3922723840,4096,1577808000000012", 1).unwrap();
        assert_eq!(r.device, "vd49");
        assert_eq!(r.op, OpKind::Write);
        assert_eq!(r.offset, 3922723840);
        assert_eq!(r.timestamp_ns, 1577808000000012000);
        assert!(parse_alibaba("x,W,0,4096,1", 1).is_err());
    }

    #[test]
    fn systor_line() {
        let r = parse_systor("1483228800.000119,0.000340,R,4,1883504640,8192", 1).unwrap();
        assert_eq!(r.device, "lun4");
        assert_eq!(r.op, OpKind::Read);
        assert_eq!(r.timestamp_ns, 1_483_228_800_000_119_000);
        assert_eq!(parse_systor("5,0,W,1,0,512", 1).unwrap().timestamp_ns, 5_000_000_000);
        assert!(parse_systor("1.2e3,0,R,1,0,512", 1).is_err());
    }
}
