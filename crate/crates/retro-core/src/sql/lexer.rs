use alloc::string::String;
use alloc::vec::Vec;

use crate::error::SqlError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    /// Backquoted identifier, never a keyword.
    Quoted(String),
    Number(String),
    Str(String),
    Sym(&'static str),
}

#[derive(Debug, Clone)]
pub struct Token {
    pub tok: Tok,
    pub pos: usize,
}

const SYMS: [&str; 16] = [
    "<>", "!=", "<=", ">=", "(", ")", ",", ";", ".", "*", "=", "<", ">", "+", "-", "/",
];

pub fn lex(src: &str) -> Result<Vec<Token>, SqlError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        if c == b'-' && bytes.get(i + 1) == Some(&b'-') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        if c.is_ascii_alphabetic() || c == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token { tok: Tok::Ident(src[start..i].into()), pos: start });
        } else if c.is_ascii_digit() {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            out.push(Token { tok: Tok::Number(src[start..i].into()), pos: start });
        } else if c == b'\'' {
            let mut s = String::new();
            i += 1;
            loop {
                match src[i..].chars().next() {
                    None => return Err(SqlError::Syntax { pos: start, expected: "closing quote".into() }),
                    Some('\'') => {
                        if bytes.get(i + 1) == Some(&b'\'') {
                            s.push('\'');
                            i += 2;
                        } else {
                            i += 1;
                            break;
                        }
                    }
                    Some(ch) => {
                        s.push(ch);
                        i += ch.len_utf8();
                    }
                }
            }
            out.push(Token { tok: Tok::Str(s), pos: start });
        } else if c == b'`' {
            let end = src[i + 1..]
                .find('`')
                .ok_or(SqlError::Syntax { pos: start, expected: "closing backquote".into() })?;
            out.push(Token { tok: Tok::Quoted(src[i + 1..i + 1 + end].into()), pos: start });
            i += end + 2;
        } else if c == b'%' {
            out.push(Token { tok: Tok::Sym("%"), pos: start });
            i += 1;
        } else {
            let rest = &src[i..];
            match SYMS.iter().find(|s| rest.starts_with(**s)) {
                Some(s) => {
                    out.push(Token { tok: Tok::Sym(if *s == "!=" { "<>" } else { s }), pos: start });
                    i += s.len();
                }
                None => {
                    return Err(SqlError::Syntax { pos: start, expected: "a token".into() });
                }
            }
        }
    }
    Ok(out)
}
