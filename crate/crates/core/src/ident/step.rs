//! ISO 10303-21 (STEP physical file) header parsing and syntax verification.
//!
//! Only the clear-text exchange structure is handled: the HEADER section is
//! parsed into a [`StepHeader`] and the DATA section is checked at token
//! level. No EXPRESS schema knowledge is involved.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::report::{CheckOutcome, VerificationReport};

pub const LEADING_TOKEN: &[u8] = b"ISO-10303-21;";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StepErrorKind {
    MissingLeadingToken,
    MissingHeader,
    MissingEntity { entity: String },
    UnterminatedString,
    UnterminatedComment,
    UnexpectedByte { byte: u8 },
    UnexpectedToken { expected: String, found: String },
    UnexpectedEof { expected: String },
    BadParameter { entity: String, detail: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub struct StepError {
    pub kind: StepErrorKind,
    pub offset: usize,
}

impl fmt::Display for StepError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at byte {}: ", self.offset)?;
        match &self.kind {
            StepErrorKind::MissingLeadingToken => {
                write!(f, "file does not start with ISO-10303-21;")
            }
            StepErrorKind::MissingHeader => write!(f, "expected HEADER;"),
            StepErrorKind::MissingEntity { entity } => write!(f, "header has no {entity}"),
            StepErrorKind::UnterminatedString => write!(f, "unterminated string"),
            StepErrorKind::UnterminatedComment => write!(f, "unterminated comment"),
            StepErrorKind::UnexpectedByte { byte } => write!(f, "unexpected byte 0x{byte:02X}"),
            StepErrorKind::UnexpectedToken { expected, found } => {
                write!(f, "expected {expected}, found {found}")
            }
            StepErrorKind::UnexpectedEof { expected } => {
                write!(f, "unexpected end of input, expected {expected}")
            }
            StepErrorKind::BadParameter { entity, detail } => write!(f, "{entity}: {detail}"),
        }
    }
}

fn err(kind: StepErrorKind, offset: usize) -> StepError {
    StepError { kind, offset }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Keyword(String),
    EntityRef(u64),
    Str(String),
    Number(String),
    Enum(String),
    Binary(String),
    LParen,
    RParen,
    Comma,
    Semi,
    Eq,
    Dollar,
    Star,
    Eof,
}

impl Tok {
    fn describe(&self) -> String {
        match self {
            Tok::Keyword(k) => k.clone(),
            Tok::EntityRef(n) => format!("#{n}"),
            Tok::Str(_) => "string".into(),
            Tok::Number(n) => n.clone(),
            Tok::Enum(e) => format!(".{e}."),
            Tok::Binary(_) => "binary".into(),
            Tok::LParen => "'('".into(),
            Tok::RParen => "')'".into(),
            Tok::Comma => "','".into(),
            Tok::Semi => "';'".into(),
            Tok::Eq => "'='".into(),
            Tok::Dollar => "'$'".into(),
            Tok::Star => "'*'".into(),
            Tok::Eof => "end of input".into(),
        }
    }
}

struct Lexer<'a> {
    data: &'a [u8],
    pos: usize,
    peeked: Option<(usize, Tok)>,
}

fn is_keyword_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_' || b == b'!'
}

fn is_keyword_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_' || b == b'-'
}

impl<'a> Lexer<'a> {
    fn new(data: &'a [u8], pos: usize) -> Self {
        Self {
            data,
            pos,
            peeked: None,
        }
    }

    fn skip_trivia(&mut self) -> Result<(), StepError> {
        loop {
            while self.pos < self.data.len() && self.data[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.data[self.pos..].starts_with(b"/*") {
                let start = self.pos;
                match self.data[start + 2..].windows(2).position(|w| w == b"*/") {
                    Some(i) => self.pos = start + 2 + i + 2,
                    None => return Err(err(StepErrorKind::UnterminatedComment, start)),
                }
            } else {
                return Ok(());
            }
        }
    }

    fn take_while(&mut self, f: impl Fn(u8) -> bool) -> &'a str {
        let start = self.pos;
        while self.pos < self.data.len() && f(self.data[self.pos]) {
            self.pos += 1;
        }
        // only ASCII predicates are used, so the slice is valid UTF-8
        std::str::from_utf8(&self.data[start..self.pos]).unwrap_or_default()
    }

    fn peek(&mut self) -> Result<&(usize, Tok), StepError> {
        if self.peeked.is_none() {
            let t = self.lex()?;
            self.peeked = Some(t);
        }
        Ok(self.peeked.as_ref().expect("just filled"))
    }

    fn next(&mut self) -> Result<(usize, Tok), StepError> {
        match self.peeked.take() {
            Some(t) => Ok(t),
            None => self.lex(),
        }
    }

    fn lex(&mut self) -> Result<(usize, Tok), StepError> {
        self.skip_trivia()?;
        let start = self.pos;
        let Some(&b) = self.data.get(start) else {
            return Ok((start, Tok::Eof));
        };
        let single = |t| Ok((start, t));
        match b {
            b'(' | b')' | b',' | b';' | b'=' | b'$' | b'*' => {
                self.pos += 1;
                single(match b {
                    b'(' => Tok::LParen,
                    b')' => Tok::RParen,
                    b',' => Tok::Comma,
                    b';' => Tok::Semi,
                    b'=' => Tok::Eq,
                    b'$' => Tok::Dollar,
                    _ => Tok::Star,
                })
            }
            b'\'' => {
                let mut out = Vec::new();
                let mut i = start + 1;
                loop {
                    match self.data.get(i) {
                        None => return Err(err(StepErrorKind::UnterminatedString, start)),
                        Some(b'\'') if self.data.get(i + 1) == Some(&b'\'') => {
                            out.push(b'\'');
                            i += 2;
                        }
                        Some(b'\'') => {
                            self.pos = i + 1;
                            return Ok((
                                start,
                                Tok::Str(String::from_utf8_lossy(&out).into_owned()),
                            ));
                        }
                        Some(&c) => {
                            out.push(c);
                            i += 1;
                        }
                    }
                }
            }
            b'"' => {
                self.pos += 1;
                let hex = self.take_while(|c| c.is_ascii_hexdigit()).to_owned();
                if self.data.get(self.pos) != Some(&b'"') {
                    return Err(match self.data.get(self.pos) {
                        None => err(StepErrorKind::UnterminatedString, start),
                        Some(&byte) => err(StepErrorKind::UnexpectedByte { byte }, self.pos),
                    });
                }
                self.pos += 1;
                Ok((start, Tok::Binary(hex)))
            }
            b'#' => {
                self.pos += 1;
                let digits = self.take_while(|c| c.is_ascii_digit());
                match digits.parse::<u64>() {
                    Ok(n) => Ok((start, Tok::EntityRef(n))),
                    Err(_) => Err(err(StepErrorKind::UnexpectedByte { byte: b'#' }, start)),
                }
            }
            b'.' if self
                .data
                .get(start + 1)
                .is_some_and(|c| c.is_ascii_alphabetic() || *c == b'_') =>
            {
                self.pos += 1;
                let name = self
                    .take_while(|c| c.is_ascii_alphanumeric() || c == b'_')
                    .to_owned();
                if self.data.get(self.pos) != Some(&b'.') {
                    return Err(match self.data.get(self.pos) {
                        None => err(
                            StepErrorKind::UnexpectedEof {
                                expected: "'.' closing enumeration".into(),
                            },
                            self.pos,
                        ),
                        Some(&byte) => err(StepErrorKind::UnexpectedByte { byte }, self.pos),
                    });
                }
                self.pos += 1;
                Ok((start, Tok::Enum(name)))
            }
            b'+' | b'-' | b'.' | b'0'..=b'9' => {
                let text = self
                    .take_while(|c| {
                        c.is_ascii_digit() || matches!(c, b'+' | b'-' | b'.' | b'E' | b'e')
                    })
                    .to_owned();
                if text.bytes().any(|c| c.is_ascii_digit()) {
                    Ok((start, Tok::Number(text)))
                } else {
                    Err(err(StepErrorKind::UnexpectedByte { byte: b }, start))
                }
            }
            c if is_keyword_start(c) => {
                self.pos += 1;
                let rest = self.take_while(is_keyword_byte);
                let mut kw = String::with_capacity(rest.len() + 1);
                kw.push(c as char);
                kw.push_str(rest);
                Ok((start, Tok::Keyword(kw)))
            }
            byte => Err(err(StepErrorKind::UnexpectedByte { byte }, start)),
        }
    }

    fn expect(&mut self, want: &Tok, expected: &str) -> Result<usize, StepError> {
        let (at, tok) = self.next()?;
        if &tok == want {
            Ok(at)
        } else {
            Err(unexpected(at, &tok, expected))
        }
    }
}

fn unexpected(at: usize, found: &Tok, expected: &str) -> StepError {
    match found {
        Tok::Eof => err(
            StepErrorKind::UnexpectedEof {
                expected: expected.to_owned(),
            },
            at,
        ),
        other => err(
            StepErrorKind::UnexpectedToken {
                expected: expected.to_owned(),
                found: other.describe(),
            },
            at,
        ),
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Param {
    Str(String),
    Null,
    Other,
    List(Vec<Param>),
}

/// Parses a parenthesised parameter list; the opening '(' has been consumed.
fn parse_params(lx: &mut Lexer<'_>) -> Result<Vec<Param>, StepError> {
    let mut out = Vec::new();
    if lx.peek()?.1 == Tok::RParen {
        lx.next()?;
        return Ok(out);
    }
    loop {
        out.push(parse_param(lx)?);
        let (at, tok) = lx.next()?;
        match tok {
            Tok::Comma => continue,
            Tok::RParen => return Ok(out),
            other => return Err(unexpected(at, &other, "',' or ')'")),
        }
    }
}

fn parse_param(lx: &mut Lexer<'_>) -> Result<Param, StepError> {
    let (at, tok) = lx.next()?;
    Ok(match tok {
        Tok::Str(s) => Param::Str(s),
        Tok::Dollar => Param::Null,
        Tok::Star | Tok::Number(_) | Tok::Enum(_) | Tok::Binary(_) | Tok::EntityRef(_) => {
            Param::Other
        }
        Tok::LParen => Param::List(parse_params(lx)?),
        Tok::Keyword(_) => {
            // typed parameter such as IFCLABEL('x')
            lx.expect(&Tok::LParen, "'(' after type name")?;
            parse_params(lx)?;
            Param::Other
        }
        other => return Err(unexpected(at, &other, "parameter")),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDescription {
    pub description: Vec<String>,
    pub implementation_level: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileName {
    pub name: String,
    pub timestamp: String,
    pub authors: Vec<String>,
    pub organizations: Vec<String>,
    pub preprocessor: String,
    pub system: String,
    pub authorization: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepHeader {
    pub file_description: FileDescription,
    pub file_name: FileName,
    pub file_schema: Vec<String>,
}

fn quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

fn quote_list(items: &[String]) -> String {
    let parts: Vec<String> = items.iter().map(|s| quote(s)).collect();
    format!("({})", parts.join(","))
}

impl StepHeader {
    /// Serializes the leading token and HEADER section.
    pub fn to_spf(&self) -> String {
        let d = &self.file_description;
        let n = &self.file_name;
        format!(
            "ISO-10303-21;\nHEADER;\nFILE_DESCRIPTION({},{});\nFILE_NAME({},{},{},{},{},{},{});\nFILE_SCHEMA({});\nENDSEC;\n",
            quote_list(&d.description),
            quote(&d.implementation_level),
            quote(&n.name),
            quote(&n.timestamp),
            quote_list(&n.authors),
            quote_list(&n.organizations),
            quote(&n.preprocessor),
            quote(&n.system),
            quote(&n.authorization),
            quote_list(&self.file_schema),
        )
    }
}

struct HeaderEntity {
    name: String,
    offset: usize,
    params: Vec<Param>,
}

struct ParsedHeader {
    header: StepHeader,
    /// Offset of the FILE_SCHEMA keyword.
    schema_offset: usize,
    /// Offset just past the header's ENDSEC;
    end: usize,
}

fn leading_token_mismatch(data: &[u8]) -> Option<usize> {
    (0..LEADING_TOKEN.len()).find(|&i| data.get(i) != Some(&LEADING_TOKEN[i]))
}

fn string_param(entity: &HeaderEntity, p: &Param, what: &str) -> Result<String, StepError> {
    match p {
        Param::Str(s) => Ok(s.clone()),
        Param::Null => Ok(String::new()),
        _ => Err(err(
            StepErrorKind::BadParameter {
                entity: entity.name.clone(),
                detail: format!("{what} must be a string"),
            },
            entity.offset,
        )),
    }
}

fn string_list(entity: &HeaderEntity, p: &Param, what: &str) -> Result<Vec<String>, StepError> {
    match p {
        Param::List(items) => items
            .iter()
            .filter(|i| **i != Param::Null)
            .map(|i| string_param(entity, i, what))
            .collect(),
        Param::Null => Ok(Vec::new()),
        _ => Err(err(
            StepErrorKind::BadParameter {
                entity: entity.name.clone(),
                detail: format!("{what} must be a list of strings"),
            },
            entity.offset,
        )),
    }
}

fn arity(entity: &HeaderEntity, n: usize) -> Result<(), StepError> {
    if entity.params.len() == n {
        Ok(())
    } else {
        Err(err(
            StepErrorKind::BadParameter {
                entity: entity.name.clone(),
                detail: format!("expected {n} parameters, found {}", entity.params.len()),
            },
            entity.offset,
        ))
    }
}

fn parse_header_section(data: &[u8]) -> Result<ParsedHeader, StepError> {
    if let Some(at) = leading_token_mismatch(data) {
        return Err(err(StepErrorKind::MissingLeadingToken, at));
    }
    let mut lx = Lexer::new(data, LEADING_TOKEN.len());
    let (at, tok) = lx.next()?;
    if tok != Tok::Keyword("HEADER".into()) {
        return Err(err(StepErrorKind::MissingHeader, at));
    }
    lx.expect(&Tok::Semi, "';' after HEADER")?;

    let mut entities: Vec<HeaderEntity> = Vec::new();
    let endsec_at = loop {
        let (at, tok) = lx.next()?;
        match tok {
            Tok::Keyword(k) if k == "ENDSEC" => {
                lx.expect(&Tok::Semi, "';' after ENDSEC")?;
                break at;
            }
            Tok::Keyword(name) => {
                lx.expect(&Tok::LParen, "'(' after header entity name")?;
                let params = parse_params(&mut lx)?;
                lx.expect(&Tok::Semi, "';' after header entity")?;
                entities.push(HeaderEntity {
                    name,
                    offset: at,
                    params,
                });
            }
            other => return Err(unexpected(at, &other, "header entity or ENDSEC")),
        }
    };
    let end = lx.pos;

    let find = |name: &str| {
        entities.iter().find(|e| e.name == name).ok_or_else(|| {
            err(
                StepErrorKind::MissingEntity {
                    entity: name.to_owned(),
                },
                endsec_at,
            )
        })
    };

    let fd = find("FILE_DESCRIPTION")?;
    arity(fd, 2)?;
    let file_description = FileDescription {
        description: string_list(fd, &fd.params[0], "description")?,
        implementation_level: string_param(fd, &fd.params[1], "implementation_level")?,
    };

    let fname = find("FILE_NAME")?;
    arity(fname, 7)?;
    let p = &fname.params;
    let file_name = FileName {
        name: string_param(fname, &p[0], "name")?,
        timestamp: string_param(fname, &p[1], "time_stamp")?,
        authors: string_list(fname, &p[2], "author")?,
        organizations: string_list(fname, &p[3], "organization")?,
        preprocessor: string_param(fname, &p[4], "preprocessor_version")?,
        system: string_param(fname, &p[5], "originating_system")?,
        authorization: string_param(fname, &p[6], "authorization")?,
    };

    let fs = find("FILE_SCHEMA")?;
    arity(fs, 1)?;
    let file_schema = string_list(fs, &fs.params[0], "schema_identifiers")?;

    Ok(ParsedHeader {
        header: StepHeader {
            file_description,
            file_name,
            file_schema,
        },
        schema_offset: fs.offset,
        end,
    })
}

/// Parses the HEADER section of a STEP physical file. The DATA section is
/// not read.
pub fn parse_step_header(data: &[u8]) -> Result<StepHeader, StepError> {
    parse_header_section(data).map(|p| p.header)
}

/// Parenthesis balance per instance across the DATA section(s). Returns the
/// offset of the first imbalance.
fn check_balance(data: &[u8], start: usize) -> Result<(), StepError> {
    let mut lx = Lexer::new(data, start);
    let mut depth: i64 = 0;
    loop {
        let (at, tok) = lx.next()?;
        match tok {
            Tok::LParen => depth += 1,
            Tok::RParen => {
                depth -= 1;
                if depth < 0 {
                    return Err(err(
                        StepErrorKind::UnexpectedToken {
                            expected: "balanced parentheses".into(),
                            found: "')'".into(),
                        },
                        at,
                    ));
                }
            }
            Tok::Semi if depth != 0 => {
                return Err(err(
                    StepErrorKind::UnexpectedToken {
                        expected: "')'".into(),
                        found: "';'".into(),
                    },
                    at,
                ))
            }
            Tok::Eof if depth != 0 => {
                return Err(err(
                    StepErrorKind::UnexpectedEof {
                        expected: "')'".into(),
                    },
                    at,
                ))
            }
            Tok::Eof => return Ok(()),
            _ => {}
        }
    }
}

/// Structure of everything after the header: one or more DATA sections of
/// `#<int> = <KEYWORD>(...);` instances, then `END-ISO-10303-21;`.
fn check_data_sections(data: &[u8], start: usize) -> Result<usize, StepError> {
    let mut lx = Lexer::new(data, start);
    let mut instances = 0usize;
    let mut sections = 0usize;
    loop {
        let (at, tok) = lx.next()?;
        match tok {
            Tok::Keyword(k) if k == "DATA" => {
                // edition 3 allows DATA('name',(schema));
                if lx.peek()?.1 == Tok::LParen {
                    lx.next()?;
                    parse_params(&mut lx)?;
                }
                lx.expect(&Tok::Semi, "';' after DATA")?;
                sections += 1;
                loop {
                    let (at, tok) = lx.next()?;
                    match tok {
                        Tok::Keyword(k) if k == "ENDSEC" => {
                            lx.expect(&Tok::Semi, "';' after ENDSEC")?;
                            break;
                        }
                        Tok::EntityRef(_) => {
                            lx.expect(&Tok::Eq, "'=' after instance name")?;
                            let (kat, ktok) = lx.next()?;
                            if !matches!(ktok, Tok::Keyword(_)) {
                                return Err(unexpected(kat, &ktok, "entity type name"));
                            }
                            lx.expect(&Tok::LParen, "'(' after entity type")?;
                            parse_params(&mut lx)?;
                            lx.expect(&Tok::Semi, "';' after instance")?;
                            instances += 1;
                        }
                        other => return Err(unexpected(at, &other, "instance '#<n>=' or ENDSEC")),
                    }
                }
            }
            Tok::Keyword(k) if k == "END-ISO-10303-21" && sections > 0 => {
                lx.expect(&Tok::Semi, "';' after END-ISO-10303-21")?;
                let (at, tok) = lx.next()?;
                if tok != Tok::Eof {
                    return Err(unexpected(at, &tok, "end of input"));
                }
                return Ok(instances);
            }
            other => {
                let expected = if sections == 0 {
                    "DATA"
                } else {
                    "DATA or END-ISO-10303-21"
                };
                return Err(unexpected(at, &other, expected));
            }
        }
    }
}

pub const CHECK_LEADING_TOKEN: &str = "leading-token";
pub const CHECK_HEADER: &str = "header-section";
pub const CHECK_FILE_SCHEMA: &str = "file-schema";
pub const CHECK_DATA_PARENTHESES: &str = "data-parentheses";
pub const CHECK_DATA_INSTANCES: &str = "data-instances";

fn skipped(name: &str, because: &str) -> CheckOutcome {
    CheckOutcome::fail(name, format!("not checked: {because} failed"))
}

/// Syntax-level verification of a STEP physical file. Every check appears
/// in the report; checks that depend on a failed one are reported as failed
/// without an offset.
pub fn verify_step(data: &[u8]) -> VerificationReport {
    let mut checks = Vec::with_capacity(5);
    let leading = leading_token_mismatch(data);
    checks.push(match leading {
        None => CheckOutcome::pass(CHECK_LEADING_TOKEN),
        Some(at) => CheckOutcome::fail(
            CHECK_LEADING_TOKEN,
            "file does not start with ISO-10303-21;",
        )
        .at(at as u64),
    });
    if leading.is_some() {
        for name in [
            CHECK_HEADER,
            CHECK_FILE_SCHEMA,
            CHECK_DATA_PARENTHESES,
            CHECK_DATA_INSTANCES,
        ] {
            checks.push(skipped(name, CHECK_LEADING_TOKEN));
        }
        return VerificationReport::from_checks(checks);
    }

    let parsed = match parse_header_section(data) {
        Ok(p) => {
            checks.push(CheckOutcome::pass(CHECK_HEADER));
            p
        }
        Err(e) => {
            let missing_schema = matches!(&e.kind, StepErrorKind::MissingEntity { entity } if entity == "FILE_SCHEMA");
            checks.push(CheckOutcome::fail(CHECK_HEADER, e.to_string()).at(e.offset as u64));
            checks.push(if missing_schema {
                CheckOutcome::fail(CHECK_FILE_SCHEMA, "FILE_SCHEMA missing").at(e.offset as u64)
            } else {
                skipped(CHECK_FILE_SCHEMA, CHECK_HEADER)
            });
            checks.push(skipped(CHECK_DATA_PARENTHESES, CHECK_HEADER));
            checks.push(skipped(CHECK_DATA_INSTANCES, CHECK_HEADER));
            return VerificationReport::from_checks(checks);
        }
    };

    let schema = &parsed.header.file_schema;
    checks.push(
        if !schema.is_empty() && schema.iter().all(|s| !s.trim().is_empty()) {
            CheckOutcome::pass(CHECK_FILE_SCHEMA)
        } else {
            CheckOutcome::fail(CHECK_FILE_SCHEMA, "FILE_SCHEMA lists no schema")
                .at(parsed.schema_offset as u64)
        },
    );

    checks.push(match check_balance(data, parsed.end) {
        Ok(()) => CheckOutcome::pass(CHECK_DATA_PARENTHESES),
        Err(e) => CheckOutcome::fail(CHECK_DATA_PARENTHESES, e.to_string()).at(e.offset as u64),
    });
    checks.push(match check_data_sections(data, parsed.end) {
        Ok(n) => {
            let mut c = CheckOutcome::pass(CHECK_DATA_INSTANCES);
            c.detail = Some(format!("{n} instances"));
            c
        }
        Err(e) => CheckOutcome::fail(CHECK_DATA_INSTANCES, e.to_string()).at(e.offset as u64),
    });
    VerificationReport::from_checks(checks)
}
