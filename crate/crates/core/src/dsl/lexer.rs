use super::{CmpOp, ParseError, ParseErrorKind};

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    Ident(String),
    Str(String),
    /// Unsigned numeric text; the parser applies any sign and picks the type.
    Number {
        text: String,
        real: bool,
    },
    Param(usize),
    Cmp(CmpOp),
    Plus,
    Minus,
    Star,
    Slash,
    LParen,
    RParen,
    LBrace,
    RBrace,
    Comma,
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    /// 1-based character column of the first character.
    pub column: usize,
}

const OPERATOR_CHARS: &str = "=!<>&|^%~";

pub(crate) fn tokenize(text: &str) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let column = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let simple = match c {
            '(' => Some(Tok::LParen),
            ')' => Some(Tok::RParen),
            '{' => Some(Tok::LBrace),
            '}' => Some(Tok::RBrace),
            ',' => Some(Tok::Comma),
            '+' => Some(Tok::Plus),
            '-' => Some(Tok::Minus),
            '*' => Some(Tok::Star),
            '/' => Some(Tok::Slash),
            _ => None,
        };
        if let Some(tok) = simple {
            tokens.push(Token { tok, column });
            i += 1;
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            let word: String = chars[start..i].iter().collect();
            tokens.push(Token {
                tok: Tok::Ident(word),
                column,
            });
            continue;
        }
        if c.is_ascii_digit() {
            let (tok, next) = lex_number(&chars, i)?;
            tokens.push(Token { tok, column });
            i = next;
            continue;
        }
        if c == '"' {
            let (s, next) = lex_string(&chars, i)?;
            tokens.push(Token {
                tok: Tok::Str(s),
                column,
            });
            i = next;
            continue;
        }
        if c == '$' {
            let start = i + 1;
            let mut j = start;
            while j < chars.len() && chars[j].is_ascii_digit() {
                j += 1;
            }
            if j == start {
                return Err(ParseError::new(column, ParseErrorKind::BadParameter));
            }
            let digits: String = chars[start..j].iter().collect();
            let index: usize = digits
                .parse()
                .map_err(|_| ParseError::new(column, ParseErrorKind::BadParameter))?;
            if index == 0 {
                return Err(ParseError::new(column, ParseErrorKind::ParameterZero));
            }
            tokens.push(Token {
                tok: Tok::Param(index),
                column,
            });
            i = j;
            continue;
        }
        if OPERATOR_CHARS.contains(c) {
            let start = i;
            while i < chars.len() && OPERATOR_CHARS.contains(chars[i]) {
                i += 1;
            }
            let op: String = chars[start..i].iter().collect();
            let cmp = match op.as_str() {
                "==" => CmpOp::Eq,
                "!=" => CmpOp::Ne,
                "<" => CmpOp::Lt,
                "<=" => CmpOp::Le,
                ">" => CmpOp::Gt,
                ">=" => CmpOp::Ge,
                _ => return Err(ParseError::new(column, ParseErrorKind::UnknownOperator(op))),
            };
            tokens.push(Token {
                tok: Tok::Cmp(cmp),
                column,
            });
            continue;
        }
        return Err(ParseError::new(column, ParseErrorKind::UnexpectedChar(c)));
    }
    Ok(tokens)
}

fn lex_number(chars: &[char], start: usize) -> Result<(Tok, usize), ParseError> {
    let mut i = start;
    let digits = |i: &mut usize| {
        let s = *i;
        while *i < chars.len() && chars[*i].is_ascii_digit() {
            *i += 1;
        }
        *i - s
    };
    digits(&mut i);
    let mut real = false;
    if i < chars.len() && chars[i] == '.' {
        i += 1;
        if digits(&mut i) == 0 {
            return Err(ParseError::new(i + 1, ParseErrorKind::BadNumber));
        }
        real = true;
    }
    if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
        i += 1;
        if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
            i += 1;
        }
        if digits(&mut i) == 0 {
            return Err(ParseError::new(i + 1, ParseErrorKind::BadNumber));
        }
        real = true;
    }
    if i < chars.len() && (chars[i].is_ascii_alphabetic() || chars[i] == '_') {
        return Err(ParseError::new(i + 1, ParseErrorKind::BadNumber));
    }
    let text: String = chars[start..i].iter().collect();
    Ok((Tok::Number { text, real }, i))
}

fn lex_string(chars: &[char], start: usize) -> Result<(String, usize), ParseError> {
    let mut out = String::new();
    let mut i = start + 1;
    loop {
        let Some(&c) = chars.get(i) else {
            return Err(ParseError::new(
                start + 1,
                ParseErrorKind::UnterminatedString,
            ));
        };
        match c {
            '"' => return Ok((out, i + 1)),
            '\\' => {
                let Some(&e) = chars.get(i + 1) else {
                    return Err(ParseError::new(
                        start + 1,
                        ParseErrorKind::UnterminatedString,
                    ));
                };
                match e {
                    '"' => out.push('"'),
                    '\\' => out.push('\\'),
                    'n' => out.push('\n'),
                    't' => out.push('\t'),
                    'r' => out.push('\r'),
                    'u' => {
                        // \u{XXXX}
                        if chars.get(i + 2) != Some(&'{') {
                            return Err(ParseError::new(i + 1, ParseErrorKind::BadEscape(e)));
                        }
                        let hex_start = i + 3;
                        let mut j = hex_start;
                        while j < chars.len() && chars[j] != '}' {
                            j += 1;
                        }
                        let hex: String = chars[hex_start..j.min(chars.len())].iter().collect();
                        let decoded = u32::from_str_radix(&hex, 16).ok().and_then(char::from_u32);
                        match (chars.get(j), decoded) {
                            (Some('}'), Some(ch)) if !hex.is_empty() => out.push(ch),
                            _ => return Err(ParseError::new(i + 1, ParseErrorKind::BadEscape(e))),
                        }
                        i = j + 1;
                        continue;
                    }
                    other => return Err(ParseError::new(i + 1, ParseErrorKind::BadEscape(other))),
                }
                i += 2;
            }
            _ => {
                out.push(c);
                i += 1;
            }
        }
    }
}

/// Quotes `s` so that [`tokenize`] reads it back unchanged.
pub(crate) fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if c.is_control() => out.push_str(&format!("\\u{{{:x}}}", c as u32)),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}
