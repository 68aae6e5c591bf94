//! Hand-rolled parser and canonical serializer for the line-oriented model
//! definition format.
//!
//! The format has three scalar keys (`nc`, `depth_multiple`,
//! `width_multiple`) and three list sections (`anchors`, `backbone`,
//! `head`) whose items are two-space-indented `- [...]` lines. `#` starts
//! a comment anywhere on a line. Every rejection carries the line and
//! column it happened at.

use super::{FromRef, LayerEntry, ModelConfig, Value};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("line {line}, col {col}: {kind}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseErrorKind {
    #[error("expected {0}")]
    Expected(&'static str),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("duplicate key `{0}`")]
    DuplicateKey(String),
    #[error("missing required key `{0}`")]
    MissingKey(&'static str),
    #[error("unknown module name `{0}`")]
    UnknownModule(String),
    #[error("{module} takes {expected} args, got {got}")]
    ArityMismatch {
        module: String,
        expected: &'static str,
        got: usize,
    },
    #[error("bad argument for {module}: {what}")]
    BadArg { module: String, what: String },
    #[error("indentation must be exactly two spaces, got {0}")]
    BadIndent(usize),
    #[error("malformed number `{0}`")]
    BadNumber(String),
    #[error("unexpected character `{0}`")]
    UnexpectedChar(char),
    #[error("{0}")]
    OutOfRange(String),
    #[error("expected end of line")]
    TrailingInput,
    #[error("list item outside of a section")]
    ItemOutsideSection,
}

use ParseErrorKind as Kind;

/// Parse a model definition. The result is structurally canonical:
/// serializing it and parsing again yields an equal value.
pub fn parse_model_config(text: &str) -> Result<ModelConfig, ParseError> {
    Parser::new().run(text)
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    Anchors,
    Backbone,
    Head,
}

#[derive(Default)]
struct Parser {
    nc: Option<(i64, usize)>,
    depth_multiple: Option<(f64, usize)>,
    width_multiple: Option<(f64, usize)>,
    anchors: Option<(Vec<Vec<i64>>, usize)>,
    backbone: Option<(Vec<LayerEntry>, usize)>,
    head: Option<(Vec<LayerEntry>, usize)>,
    section: Option<Section>,
}

impl Parser {
    fn new() -> Self {
        Self::default()
    }

    fn run(mut self, text: &str) -> Result<ModelConfig, ParseError> {
        let mut last_line = 0;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            last_line = line_no;
            let content = match raw.find('#') {
                Some(at) => &raw[..at],
                None => raw,
            };
            if content.trim().is_empty() {
                continue;
            }
            let mut cur = Cursor::new(content, line_no);
            let indent = cur.count_leading_spaces()?;
            match indent {
                0 => self.top_level_line(&mut cur)?,
                2 => self.item_line(&mut cur)?,
                n => return Err(cur.err_at(1, Kind::BadIndent(n))),
            }
        }
        self.finish(last_line + 1)
    }

    fn top_level_line(&mut self, cur: &mut Cursor) -> Result<(), ParseError> {
        self.section = None;
        let key_col = cur.col();
        let key = cur.ident()?;
        cur.expect(':')?;
        cur.skip_spaces();
        match key.as_str() {
            "nc" => {
                let v = cur.int()?;
                cur.end_of_line()?;
                self.store_scalar(cur, key_col, "nc")?;
                self.nc = Some((v, cur.line));
            }
            "depth_multiple" | "width_multiple" => {
                let v = cur.float()?;
                cur.end_of_line()?;
                self.store_scalar(cur, key_col, &key)?;
                if key == "depth_multiple" {
                    self.depth_multiple = Some((v, cur.line));
                } else {
                    self.width_multiple = Some((v, cur.line));
                }
            }
            "anchors" | "backbone" | "head" => {
                cur.end_of_line()?;
                self.store_scalar(cur, key_col, &key)?;
                let line = cur.line;
                self.section = Some(match key.as_str() {
                    "anchors" => {
                        self.anchors = Some((Vec::new(), line));
                        Section::Anchors
                    }
                    "backbone" => {
                        self.backbone = Some((Vec::new(), line));
                        Section::Backbone
                    }
                    _ => {
                        self.head = Some((Vec::new(), line));
                        Section::Head
                    }
                });
            }
            _ => return Err(cur.err_at(key_col, Kind::UnknownKey(key))),
        }
        Ok(())
    }

    fn store_scalar(&mut self, cur: &Cursor, col: usize, key: &str) -> Result<(), ParseError> {
        let taken = match key {
            "nc" => self.nc.is_some(),
            "depth_multiple" => self.depth_multiple.is_some(),
            "width_multiple" => self.width_multiple.is_some(),
            "anchors" => self.anchors.is_some(),
            "backbone" => self.backbone.is_some(),
            _ => self.head.is_some(),
        };
        if taken {
            return Err(cur.err_at(col, Kind::DuplicateKey(key.to_string())));
        }
        Ok(())
    }

    fn item_line(&mut self, cur: &mut Cursor) -> Result<(), ParseError> {
        let section = match self.section {
            Some(s) => s,
            None => return Err(cur.err_at(1, Kind::ItemOutsideSection)),
        };
        cur.expect('-')?;
        cur.expect(' ')?;
        cur.skip_spaces();
        match section {
            Section::Anchors => {
                let item_col = cur.col();
                let pairs = cur.int_list()?;
                cur.end_of_line()?;
                validate_anchor_scale(&pairs, cur, item_col)?;
                self.anchors.as_mut().unwrap().0.push(pairs);
            }
            Section::Backbone | Section::Head => {
                let entry = parse_layer_entry(cur)?;
                cur.end_of_line()?;
                let list = match section {
                    Section::Backbone => &mut self.backbone.as_mut().unwrap().0,
                    _ => &mut self.head.as_mut().unwrap().0,
                };
                list.push(entry);
            }
        }
        Ok(())
    }

    fn finish(self, eof_line: usize) -> Result<ModelConfig, ParseError> {
        let missing = |key| ParseError {
            line: eof_line,
            col: 1,
            kind: Kind::MissingKey(key),
        };
        let (nc, nc_line) = self.nc.ok_or_else(|| missing("nc"))?;
        let (dm, dm_line) = self.depth_multiple.ok_or_else(|| missing("depth_multiple"))?;
        let (wm, wm_line) = self.width_multiple.ok_or_else(|| missing("width_multiple"))?;
        let (anchors, anchors_line) = self.anchors.ok_or_else(|| missing("anchors"))?;
        let (backbone, backbone_line) = self.backbone.ok_or_else(|| missing("backbone"))?;
        let (head, head_line) = self.head.ok_or_else(|| missing("head"))?;

        let range = |line, msg: String| ParseError {
            line,
            col: 1,
            kind: Kind::OutOfRange(msg),
        };
        if nc < 1 {
            return Err(range(nc_line, format!("nc must be >= 1, got {nc}")));
        }
        if !(dm > 0.0 && dm <= 2.0) {
            return Err(range(dm_line, format!("depth_multiple must be in (0, 2], got {dm}")));
        }
        if !(wm > 0.0 && wm <= 2.0) {
            return Err(range(wm_line, format!("width_multiple must be in (0, 2], got {wm}")));
        }
        if anchors.len() != 3 {
            return Err(range(
                anchors_line,
                format!("anchors must list exactly 3 scales, got {}", anchors.len()),
            ));
        }
        if backbone.is_empty() {
            return Err(range(backbone_line, "backbone must not be empty".into()));
        }
        if head.is_empty() {
            return Err(range(head_line, "head must not be empty".into()));
        }
        Ok(ModelConfig {
            nc,
            depth_multiple: dm,
            width_multiple: wm,
            anchors,
            backbone,
            head,
        })
    }
}

fn validate_anchor_scale(pairs: &[i64], cur: &Cursor, col: usize) -> Result<(), ParseError> {
    if pairs.len() != 6 {
        return Err(cur.err_at(
            col,
            Kind::OutOfRange(format!(
                "anchor scale needs 6 values (3 w,h pairs), got {}",
                pairs.len()
            )),
        ));
    }
    for &v in pairs {
        if v < 1 {
            return Err(cur.err_at(
                col,
                Kind::OutOfRange(format!("anchor values must be >= 1, got {v}")),
            ));
        }
    }
    Ok(())
}

fn parse_layer_entry(cur: &mut Cursor) -> Result<LayerEntry, ParseError> {
    let open_col = cur.col();
    cur.expect('[')?;
    cur.skip_spaces();

    let from = if cur.peek() == Some('[') {
        let refs = cur.int_list()?;
        FromRef::Multi(refs)
    } else {
        FromRef::Single(cur.int()?)
    };
    cur.list_comma()?;

    let repeats_col = cur.col();
    let repeats = cur.int()?;
    if repeats < 1 {
        return Err(cur.err_at(
            repeats_col,
            Kind::OutOfRange(format!("repeats must be >= 1, got {repeats}")),
        ));
    }
    cur.list_comma()?;

    let module_col = cur.col();
    let module = cur.ident()?;
    cur.list_comma()?;

    let args_col = cur.col();
    let args = match cur.value()? {
        Value::List(items) => items,
        _ => return Err(cur.err_at(args_col, Kind::Expected("args list"))),
    };
    cur.skip_spaces();
    cur.expect(']')?;

    validate_module_args(&module, &from, &args, cur, module_col, args_col)?;
    let _ = open_col;
    Ok(LayerEntry {
        from,
        repeats,
        module,
        args,
    })
}

fn validate_module_args(
    module: &str,
    from: &FromRef,
    args: &[Value],
    cur: &Cursor,
    module_col: usize,
    args_col: usize,
) -> Result<(), ParseError> {
    let arity = |expected: &'static str| {
        cur.err_at(
            args_col,
            Kind::ArityMismatch {
                module: module.to_string(),
                expected,
                got: args.len(),
            },
        )
    };
    let bad = |what: String| {
        cur.err_at(
            args_col,
            Kind::BadArg {
                module: module.to_string(),
                what,
            },
        )
    };
    let channel = |v: &Value, what: &str| match v {
        Value::Int(c) if *c >= 1 => Ok(()),
        other => Err(bad(format!("{what} must be a positive int, got {other:?}"))),
    };
    let dim = |v: &Value, what: &str, min: i64| match v {
        Value::Int(c) if *c >= min => Ok(()),
        other => Err(bad(format!("{what} must be an int >= {min}, got {other:?}"))),
    };
    let flag = |v: &Value| match v {
        Value::Ident(s) if s == "true" || s == "false" => Ok(()),
        other => Err(bad(format!("shortcut must be true or false, got {other:?}"))),
    };

    match module {
        "Conv" => {
            if !(3..=4).contains(&args.len()) {
                return Err(arity("[c_out, k, s] or [c_out, k, s, p]"));
            }
            channel(&args[0], "c_out")?;
            dim(&args[1], "kernel", 1)?;
            dim(&args[2], "stride", 1)?;
            if let Some(p) = args.get(3) {
                dim(p, "padding", 0)?;
            }
        }
        "C3" | "C3Ghost" | "C3Faster" | "Bottleneck" => {
            if !(1..=2).contains(&args.len()) {
                return Err(arity("[c_out] or [c_out, shortcut]"));
            }
            channel(&args[0], "c_out")?;
            if let Some(s) = args.get(1) {
                flag(s)?;
            }
        }
        "SPPF" => {
            if args.len() != 2 {
                return Err(arity("[c_out, k]"));
            }
            channel(&args[0], "c_out")?;
            dim(&args[1], "pool kernel", 1)?;
        }
        "GhostConv" => {
            if !(1..=3).contains(&args.len()) {
                return Err(arity("[c_out], [c_out, k], or [c_out, k, s]"));
            }
            channel(&args[0], "c_out")?;
            if let Some(k) = args.get(1) {
                dim(k, "kernel", 1)?;
            }
            if let Some(s) = args.get(2) {
                dim(s, "stride", 1)?;
            }
        }
        "GhostBottleneck" | "FasterBlock" => {
            if args.len() != 1 {
                return Err(arity("[c_out]"));
            }
            channel(&args[0], "c_out")?;
        }
        "PConv" => {
            if !(1..=2).contains(&args.len()) {
                return Err(arity("[c_out] or [c_out, k]"));
            }
            channel(&args[0], "c_out")?;
            if let Some(k) = args.get(1) {
                dim(k, "kernel", 1)?;
            }
        }
        "Upsample" => {
            if args.len() != 2 {
                return Err(arity("[2, nearest]"));
            }
            match &args[0] {
                Value::Int(2) => {}
                other => return Err(bad(format!("scale must be 2, got {other:?}"))),
            }
            match &args[1] {
                Value::Ident(m) if m == "nearest" => {}
                other => return Err(bad(format!("mode must be nearest, got {other:?}"))),
            }
        }
        "Concat" => {
            if args.len() != 1 {
                return Err(arity("[1]"));
            }
            match &args[0] {
                Value::Int(1) => {}
                other => return Err(bad(format!("concat dim must be 1, got {other:?}"))),
            }
            if from.refs().len() < 2 {
                return Err(bad("Concat needs at least two inputs".into()));
            }
        }
        "Detect" => {
            if args.len() != 2 {
                return Err(arity("[nc, anchors]"));
            }
            let ok = matches!(&args[0], Value::Ident(a) if a == "nc")
                && matches!(&args[1], Value::Ident(b) if b == "anchors");
            if !ok {
                return Err(bad("Detect args must be the idents nc and anchors".into()));
            }
        }
        _ => {
            return Err(cur.err_at(module_col, Kind::UnknownModule(module.to_string())));
        }
    }
    Ok(())
}

/// Character cursor over a single (comment-stripped) line.
struct Cursor {
    chars: Vec<char>,
    pos: usize,
    line: usize,
}

impl Cursor {
    fn new(content: &str, line: usize) -> Self {
        Cursor {
            chars: content.trim_end().chars().collect(),
            pos: 0,
            line,
        }
    }

    fn col(&self) -> usize {
        self.pos + 1
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek();
        if c.is_some() {
            self.pos += 1;
        }
        c
    }

    fn err(&self, kind: ParseErrorKind) -> ParseError {
        self.err_at(self.col(), kind)
    }

    fn err_at(&self, col: usize, kind: ParseErrorKind) -> ParseError {
        ParseError {
            line: self.line,
            col,
            kind,
        }
    }

    fn count_leading_spaces(&mut self) -> Result<usize, ParseError> {
        let mut n = 0;
        while let Some(c) = self.peek() {
            match c {
                ' ' => {
                    n += 1;
                    self.pos += 1;
                }
                '\t' => return Err(self.err(Kind::UnexpectedChar('\t'))),
                _ => break,
            }
        }
        Ok(n)
    }

    fn skip_spaces(&mut self) {
        while self.peek() == Some(' ') {
            self.pos += 1;
        }
    }

    fn expect(&mut self, want: char) -> Result<(), ParseError> {
        match self.peek() {
            Some(c) if c == want => {
                self.pos += 1;
                Ok(())
            }
            Some(c) => Err(self.err(Kind::UnexpectedChar(c))),
            None => Err(self.err(Kind::Expected(match want {
                ':' => "`:`",
                '[' => "`[`",
                ']' => "`]`",
                '-' => "`-`",
                ' ' => "a space",
                _ => "more input",
            }))),
        }
    }

    fn end_of_line(&mut self) -> Result<(), ParseError> {
        self.skip_spaces();
        if self.pos < self.chars.len() {
            return Err(self.err(Kind::TrailingInput));
        }
        Ok(())
    }

    /// Comma separator between elements of a bracketed list.
    fn list_comma(&mut self) -> Result<(), ParseError> {
        self.skip_spaces();
        match self.peek() {
            Some(',') => {
                self.pos += 1;
                self.skip_spaces();
                Ok(())
            }
            Some(c) => Err(self.err(Kind::UnexpectedChar(c))),
            None => Err(self.err(Kind::Expected("`,`"))),
        }
    }

    fn ident(&mut self) -> Result<String, ParseError> {
        match self.peek() {
            Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
            Some(c) => return Err(self.err(Kind::UnexpectedChar(c))),
            None => return Err(self.err(Kind::Expected("an identifier"))),
        }
        let start = self.pos;
        while let Some(c) = self.peek() {
            if c.is_ascii_alphanumeric() || c == '_' {
                self.pos += 1;
            } else {
                break;
            }
        }
        Ok(self.chars[start..self.pos].iter().collect())
    }

    fn number_token(&mut self) -> Result<(String, usize), ParseError> {
        let start_col = self.col();
        let start = self.pos;
        if self.peek() == Some('-') {
            self.pos += 1;
        }
        let digits_begin = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == digits_begin {
            return Err(self.err_at(start_col, Kind::Expected("a number")));
        }
        if self.peek() == Some('.') {
            self.pos += 1;
            let frac_begin = self.pos;
            while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                self.pos += 1;
            }
            if self.pos == frac_begin {
                let tok: String = self.chars[start..self.pos].iter().collect();
                return Err(self.err_at(start_col, Kind::BadNumber(tok)));
            }
        }
        if matches!(self.peek(), Some('e') | Some('E')) {
            self.pos += 1;
            if matches!(self.peek(), Some('+') | Some('-')) {
                self.pos += 1;
            }
            let exp_begin = self.pos;
            while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                self.pos += 1;
            }
            if self.pos == exp_begin {
                let tok: String = self.chars[start..self.pos].iter().collect();
                return Err(self.err_at(start_col, Kind::BadNumber(tok)));
            }
        }
        Ok((self.chars[start..self.pos].iter().collect(), start_col))
    }

    fn number(&mut self) -> Result<Value, ParseError> {
        let (tok, col) = self.number_token()?;
        if tok.contains(['.', 'e', 'E']) {
            tok.parse::<f64>()
                .map(Value::Float)
                .map_err(|_| self.err_at(col, Kind::BadNumber(tok)))
        } else {
            tok.parse::<i64>()
                .map(Value::Int)
                .map_err(|_| self.err_at(col, Kind::BadNumber(tok)))
        }
    }

    fn int(&mut self) -> Result<i64, ParseError> {
        let col = self.col();
        match self.number()? {
            Value::Int(v) => Ok(v),
            Value::Float(v) => Err(self.err_at(
                col,
                Kind::OutOfRange(format!("expected an integer, got float {v}")),
            )),
            _ => unreachable!(),
        }
    }

    fn float(&mut self) -> Result<f64, ParseError> {
        match self.number()? {
            Value::Int(v) => Ok(v as f64),
            Value::Float(v) => Ok(v),
            _ => unreachable!(),
        }
    }

    /// Flat bracketed list of integers.
    fn int_list(&mut self) -> Result<Vec<i64>, ParseError> {
        self.expect('[')?;
        self.skip_spaces();
        let mut items = Vec::new();
        loop {
            items.push(self.int()?);
            self.skip_spaces();
            match self.bump() {
                Some(',') => self.skip_spaces(),
                Some(']') => return Ok(items),
                Some(c) => return Err(self.err_at(self.col() - 1, Kind::UnexpectedChar(c))),
                None => return Err(self.err(Kind::Expected("`]`"))),
            }
        }
    }

    /// Any value: number, identifier, or bracketed list.
    fn value(&mut self) -> Result<Value, ParseError> {
        match self.peek() {
            Some('[') => {
                self.pos += 1;
                self.skip_spaces();
                let mut items = Vec::new();
                loop {
                    items.push(self.value()?);
                    self.skip_spaces();
                    match self.bump() {
                        Some(',') => self.skip_spaces(),
                        Some(']') => return Ok(Value::List(items)),
                        Some(c) => {
                            return Err(self.err_at(self.col() - 1, Kind::UnexpectedChar(c)))
                        }
                        None => return Err(self.err(Kind::Expected("`]`"))),
                    }
                }
            }
            Some(c) if c.is_ascii_digit() || c == '-' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == '_' => Ok(Value::Ident(self.ident()?)),
            Some(c) => Err(self.err(Kind::UnexpectedChar(c))),
            None => Err(self.err(Kind::Expected("a value"))),
        }
    }
}

/// Render a config in canonical form. Parsing the result reproduces the
/// config exactly.
pub fn serialize_model_config(cfg: &ModelConfig) -> String {
    let mut out = String::new();
    out.push_str(&format!("nc: {}\n", cfg.nc));
    out.push_str(&format!("depth_multiple: {}\n", fmt_float(cfg.depth_multiple)));
    out.push_str(&format!("width_multiple: {}\n", fmt_float(cfg.width_multiple)));
    out.push_str("anchors:\n");
    for scale in &cfg.anchors {
        let vals: Vec<String> = scale.iter().map(|v| v.to_string()).collect();
        out.push_str(&format!("  - [{}]\n", vals.join(", ")));
    }
    for (name, entries) in [("backbone", &cfg.backbone), ("head", &cfg.head)] {
        out.push_str(&format!("{name}:\n"));
        for e in entries {
            out.push_str(&format!("  - {}\n", fmt_entry(e)));
        }
    }
    out
}

fn fmt_entry(e: &LayerEntry) -> String {
    let from = match &e.from {
        FromRef::Single(v) => v.to_string(),
        FromRef::Multi(refs) => {
            let vals: Vec<String> = refs.iter().map(|v| v.to_string()).collect();
            format!("[{}]", vals.join(", "))
        }
    };
    let args: Vec<String> = e.args.iter().map(fmt_value).collect();
    format!(
        "[{}, {}, {}, [{}]]",
        from,
        e.repeats,
        e.module,
        args.join(", ")
    )
}

fn fmt_value(v: &Value) -> String {
    match v {
        Value::Int(i) => i.to_string(),
        Value::Float(f) => fmt_float(*f),
        Value::Ident(s) => s.clone(),
        Value::List(items) => {
            let vals: Vec<String> = items.iter().map(fmt_value).collect();
            format!("[{}]", vals.join(", "))
        }
    }
}

/// Format a float so it reparses as a float: integral values keep one
/// decimal place, everything else uses the shortest round-trip form.
fn fmt_float(f: f64) -> String {
    if f.fract() == 0.0 && f.is_finite() && f.abs() < 1e15 {
        format!("{f:.1}")
    } else {
        format!("{f}")
    }
}
