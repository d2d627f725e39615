//! Scalar values: INT64, DECIMAL (scaled i64), TEXT, TIMESTAMP (epoch micros).

use alloc::format;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use core::cmp::Ordering;
use core::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScalarType {
    Int,
    Decimal { scale: u8 },
    Text,
    Timestamp,
}

impl ScalarType {
    pub fn tag(&self) -> u8 {
        match self {
            ScalarType::Int => 1,
            ScalarType::Decimal { .. } => 2,
            ScalarType::Text => 3,
            ScalarType::Timestamp => 4,
        }
    }
}

impl fmt::Display for ScalarType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarType::Int => f.write_str("INT"),
            ScalarType::Decimal { scale } => write!(f, "DECIMAL(18,{})", scale),
            ScalarType::Text => f.write_str("TEXT"),
            ScalarType::Timestamp => f.write_str("TIMESTAMP"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Value {
    Null,
    Int(i64),
    Decimal { mantissa: i64, scale: u8 },
    Text(Arc<str>),
    Timestamp(i64),
}

fn pow10(n: u8) -> Option<i64> {
    10i64.checked_pow(n as u32)
}

/// Rescale a decimal mantissa; fails on overflow or when precision would be lost.
pub fn rescale(mantissa: i64, from: u8, to: u8) -> Option<i64> {
    match from.cmp(&to) {
        Ordering::Equal => Some(mantissa),
        Ordering::Less => mantissa.checked_mul(pow10(to - from)?),
        Ordering::Greater => {
            let d = pow10(from - to)?;
            if mantissa % d != 0 {
                // round half away from zero
                let q = mantissa / d;
                let r = (mantissa % d).abs() * 2;
                if r >= d {
                    Some(if mantissa < 0 { q - 1 } else { q + 1 })
                } else {
                    Some(q)
                }
            } else {
                Some(mantissa / d)
            }
        }
    }
}

impl Value {
    pub fn text(s: &str) -> Value {
        Value::Text(Arc::from(s))
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    pub fn type_tag(&self) -> u8 {
        match self {
            Value::Null => 0,
            Value::Int(_) => 1,
            Value::Decimal { .. } => 2,
            Value::Text(_) => 3,
            Value::Timestamp(_) => 4,
        }
    }

    /// Numeric view as (mantissa, scale).
    pub fn as_numeric(&self) -> Option<(i64, u8)> {
        match self {
            Value::Int(i) => Some((*i, 0)),
            Value::Decimal { mantissa, scale } => Some((*mantissa, *scale)),
            _ => None,
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            Value::Decimal { mantissa, scale } => {
                let d = pow10(*scale)?;
                if mantissa % d == 0 {
                    Some(mantissa / d)
                } else {
                    None
                }
            }
            _ => None,
        }
    }

    /// SQL comparison; `None` when either side is NULL or types are incomparable.
    pub fn sql_cmp(&self, other: &Value) -> Option<Ordering> {
        match (self, other) {
            (Value::Null, _) | (_, Value::Null) => None,
            (Value::Text(a), Value::Text(b)) => Some(a.as_ref().cmp(b.as_ref())),
            (Value::Timestamp(a), Value::Timestamp(b)) => Some(a.cmp(b)),
            (Value::Timestamp(a), Value::Text(b)) => parse_timestamp(b).map(|b| a.cmp(&b)),
            (Value::Text(a), Value::Timestamp(b)) => parse_timestamp(a).map(|a| a.cmp(b)),
            _ => {
                let (am, asc) = self.as_numeric()?;
                let (bm, bsc) = other.as_numeric()?;
                let s = asc.max(bsc);
                let a = (am as i128) * 10i128.pow((s - asc) as u32);
                let b = (bm as i128) * 10i128.pow((s - bsc) as u32);
                Some(a.cmp(&b))
            }
        }
    }

    /// Coerce into a column type. `None` when the value cannot be represented.
    pub fn coerce(&self, ty: ScalarType) -> Option<Value> {
        match (self, ty) {
            (Value::Null, _) => Some(Value::Null),
            (Value::Int(i), ScalarType::Int) => Some(Value::Int(*i)),
            (Value::Decimal { .. }, ScalarType::Int) => self.as_int().map(Value::Int),
            (v, ScalarType::Decimal { scale }) => {
                let (m, s) = v.as_numeric()?;
                Some(Value::Decimal { mantissa: rescale(m, s, scale)?, scale })
            }
            (Value::Text(t), ScalarType::Text) => Some(Value::Text(t.clone())),
            (Value::Int(i), ScalarType::Text) => Some(Value::Text(Arc::from(i.to_string().as_str()))),
            (Value::Timestamp(t), ScalarType::Timestamp) => Some(Value::Timestamp(*t)),
            (Value::Text(t), ScalarType::Timestamp) => parse_timestamp(t).map(Value::Timestamp),
            (Value::Int(i), ScalarType::Timestamp) => Some(Value::Timestamp(*i)),
            _ => None,
        }
    }

    /// Total order used for deterministic storage order (not SQL semantics).
    pub fn storage_cmp(&self, other: &Value) -> Ordering {
        match (self, other) {
            (Value::Null, Value::Null) => Ordering::Equal,
            (Value::Int(a), Value::Int(b)) => a.cmp(b),
            (Value::Text(a), Value::Text(b)) => a.as_ref().cmp(b.as_ref()),
            (Value::Timestamp(a), Value::Timestamp(b)) => a.cmp(b),
            (
                Value::Decimal { mantissa: a, scale: sa },
                Value::Decimal { mantissa: b, scale: sb },
            ) => (sa, a).cmp(&(sb, b)),
            _ => self.type_tag().cmp(&other.type_tag()),
        }
    }

    /// Render as a SQL literal.
    pub fn to_sql(&self) -> String {
        match self {
            Value::Null => "NULL".into(),
            Value::Text(t) => format!("'{}'", t.replace('\'', "''")),
            Value::Timestamp(t) => format!("TIMESTAMP '{}'", format_timestamp(*t)),
            v => v.to_string(),
        }
    }
}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        self.storage_cmp(other)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("NULL"),
            Value::Int(i) => write!(f, "{}", i),
            Value::Decimal { mantissa, scale } => f.write_str(&format_decimal(*mantissa, *scale)),
            Value::Text(t) => f.write_str(t),
            Value::Timestamp(t) => f.write_str(&format_timestamp(*t)),
        }
    }
}

pub fn format_decimal(mantissa: i64, scale: u8) -> String {
    if scale == 0 {
        return mantissa.to_string();
    }
    let neg = mantissa < 0;
    let digits = (mantissa as i128).abs().to_string();
    let s = scale as usize;
    let padded = if digits.len() <= s {
        let mut p = String::new();
        for _ in 0..(s + 1 - digits.len()) {
            p.push('0');
        }
        p.push_str(&digits);
        p
    } else {
        digits
    };
    let (int, frac) = padded.split_at(padded.len() - s);
    format!("{}{}.{}", if neg { "-" } else { "" }, int, frac)
}

/// Parse "123", "-1.50" into (mantissa, scale).
pub fn parse_decimal(s: &str) -> Option<(i64, u8)> {
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s),
    };
    let (int, frac) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    if !int.bytes().all(|b| b.is_ascii_digit()) || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if frac.len() > 18 {
        return None;
    }
    let mut m: i64 = 0;
    for b in int.bytes().chain(frac.bytes()) {
        m = m.checked_mul(10)?.checked_add((b - b'0') as i64)?;
    }
    Some((if neg { -m } else { m }, frac.len() as u8))
}

fn days_from_civil(y: i64, m: i64, d: i64) -> i64 {
    let y = if m <= 2 { y - 1 } else { y };
    let era = if y >= 0 { y } else { y - 399 } / 400;
    let yoe = y - era * 400;
    let mp = (m + 9) % 12;
    let doy = (153 * mp + 2) / 5 + d - 1;
    let doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    era * 146097 + doe - 719468
}

fn civil_from_days(z: i64) -> (i64, i64, i64) {
    let z = z + 719468;
    let era = if z >= 0 { z } else { z - 146096 } / 146097;
    let doe = z - era * 146097;
    let yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    let y = yoe + era * 400;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = doy - (153 * mp + 2) / 5 + 1;
    let m = if mp < 10 { mp + 3 } else { mp - 9 };
    (if m <= 2 { y + 1 } else { y }, m, d)
}

fn num(s: &str) -> Option<i64> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

/// Parse "YYYY-MM-DD[ T]HH:MM:SS[.ffffff][Z|±HH:MM]" (or a bare date) into epoch micros.
pub fn parse_timestamp(s: &str) -> Option<i64> {
    let s = s.trim();
    if s.len() < 10 {
        return None;
    }
    let (date, rest) = s.split_at(10);
    let mut dp = date.split('-');
    let y = num(dp.next()?)?;
    let mo = num(dp.next()?)?;
    let d = num(dp.next()?)?;
    if !(1..=12).contains(&mo) || !(1..=31).contains(&d) {
        return None;
    }
    let mut micros = days_from_civil(y, mo, d) * 86_400_000_000;
    if rest.is_empty() {
        return Some(micros);
    }
    let rest = rest.strip_prefix('T').or_else(|| rest.strip_prefix(' '))?;
    if rest.len() < 8 {
        return None;
    }
    let (hms, mut tail) = rest.split_at(8);
    let mut tp = hms.split(':');
    let h = num(tp.next()?)?;
    let mi = num(tp.next()?)?;
    let se = num(tp.next()?)?;
    if h > 23 || mi > 59 || se > 60 {
        return None;
    }
    micros += ((h * 60 + mi) * 60 + se) * 1_000_000;
    if let Some(t) = tail.strip_prefix('.') {
        let n = t.bytes().take_while(|b| b.is_ascii_digit()).count();
        if n == 0 || n > 9 {
            return None;
        }
        let mut frac = num(&t[..n])?;
        for _ in n..6 {
            frac *= 10;
        }
        for _ in 6..n {
            frac /= 10;
        }
        micros += frac;
        tail = &t[n..];
    }
    match tail {
        "" | "Z" | "z" => Some(micros),
        _ => {
            let sign = match tail.as_bytes()[0] {
                b'+' => 1,
                b'-' => -1,
                _ => return None,
            };
            let off = &tail[1..];
            let (oh, om) = off.split_once(':')?;
            let offset = (num(oh)? * 60 + num(om)?) * 60_000_000;
            Some(micros - sign * offset)
        }
    }
}

pub fn format_timestamp(micros: i64) -> String {
    let days = micros.div_euclid(86_400_000_000);
    let rem = micros.rem_euclid(86_400_000_000);
    let (y, m, d) = civil_from_days(days);
    let secs = rem / 1_000_000;
    let frac = rem % 1_000_000;
    let base = format!(
        "{:04}-{:02}-{:02} {:02}:{:02}:{:02}",
        y,
        m,
        d,
        secs / 3600,
        (secs / 60) % 60,
        secs % 60
    );
    if frac == 0 {
        base
    } else {
        format!("{}.{:06}", base, frac)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timestamp_roundtrip() {
        let t = parse_timestamp("2023-03-01T10:20:30Z").unwrap();
        assert_eq!(format_timestamp(t), "2023-03-01 10:20:30");
        assert_eq!(parse_timestamp("1970-01-01"), Some(0));
        assert_eq!(parse_timestamp("1970-01-01T00:00:01+00:00"), Some(1_000_000));
        assert_eq!(parse_timestamp("1969-12-31 23:59:59.5"), Some(-500_000));
        assert_eq!(format_timestamp(-500_000), "1969-12-31 23:59:59.500000");
        assert!(parse_timestamp("2023-13-01").is_none());
    }

    #[test]
    fn decimal_parse_format() {
        assert_eq!(parse_decimal("-1.50"), Some((-150, 2)));
        assert_eq!(format_decimal(-150, 2), "-1.50");
        assert_eq!(format_decimal(5, 3), "0.005");
        assert_eq!(rescale(155, 2, 1), Some(16));
        assert_eq!(rescale(-155, 2, 1), Some(-16));
        assert!(parse_decimal("1.2.3").is_none());
    }

    #[test]
    fn mixed_numeric_compare() {
        let a = Value::Int(2);
        let b = Value::Decimal { mantissa: 150, scale: 2 };
        assert_eq!(a.sql_cmp(&b), Some(Ordering::Greater));
        assert_eq!(Value::Null.sql_cmp(&a), None);
    }
}
