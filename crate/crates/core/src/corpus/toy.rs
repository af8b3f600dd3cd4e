//! Four tiny renderings of one imperative DSL.
//!
//! ```text
//! toyA  set x = 1 + 2 ;       show x ;        repeat 3 { ... }
//! toyB  x := add ( 1 , 2 )    emit ( x )      loop 3 do ... end
//! toyC  1 2 plus -> x .       x out .         3 times [ ... ]
//! toyD  ( def x ( sum 1 2 ) ) ( say x )       ( rep 3 ... )
//! ```
//!
//! Identifiers `a b c x y z`, digits and parentheses are shared; every
//! other token belongs to exactly one language.

use rand::Rng;

use super::{CorpusError, Result};

pub const IDENTIFIERS: [&str; 6] = ["a", "b", "c", "x", "y", "z"];
pub const DIGITS: [&str; 10] = ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9"];
pub const SHARED_PUNCT: [&str; 2] = ["(", ")"];
pub const TOY_LANGUAGES: [&str; 4] = ["toyA", "toyB", "toyC", "toyD"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Expr {
    Num(u8),
    Var(u8),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Stmt {
    Assign(u8, Expr),
    Print(Expr),
    Loop(u8, Vec<Stmt>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TaskProfile {
    Arith,
    Loop,
}

impl TaskProfile {
    pub const ALL: [TaskProfile; 2] = [TaskProfile::Arith, TaskProfile::Loop];

    pub fn tag(self) -> &'static str {
        match self {
            TaskProfile::Arith => "arith",
            TaskProfile::Loop => "loop",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.tag() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SemanticProgram {
    pub body: Vec<Stmt>,
    pub profile: TaskProfile,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ToyLang {
    A,
    B,
    C,
    D,
}

impl ToyLang {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "toyA" => Ok(ToyLang::A),
            "toyB" => Ok(ToyLang::B),
            "toyC" => Ok(ToyLang::C),
            "toyD" => Ok(ToyLang::D),
            _ => Err(CorpusError::UnknownLanguage(name.to_string())),
        }
    }

    pub fn name(self) -> &'static str {
        TOY_LANGUAGES[self as usize]
    }

    pub fn keywords(self) -> &'static [&'static str] {
        match self {
            ToyLang::A => &["set", "=", ";", "show", "repeat", "{", "}", "+", "-", "*"],
            ToyLang::B => &[":=", "emit", "loop", "do", "end", "add", "sub", "mul", ","],
            ToyLang::C => &["->", ".", "out", "times", "[", "]", "plus", "minus", "prod"],
            ToyLang::D => &["def", "say", "rep", "sum", "diff", "mult"],
        }
    }

    fn op(self, op: BinOp) -> &'static str {
        let i = op as usize;
        match self {
            ToyLang::A => ["+", "-", "*"][i],
            ToyLang::B => ["add", "sub", "mul"][i],
            ToyLang::C => ["plus", "minus", "prod"][i],
            ToyLang::D => ["sum", "diff", "mult"][i],
        }
    }

    fn parse_op(self, tok: &str) -> Option<BinOp> {
        [BinOp::Add, BinOp::Sub, BinOp::Mul].into_iter().find(|o| self.op(*o) == tok)
    }
}

/// Tokens any toy rendering may use besides its own keywords.
pub fn shared_tokens() -> impl Iterator<Item = &'static str> {
    IDENTIFIERS.into_iter().chain(DIGITS).chain(SHARED_PUNCT)
}

pub fn render(p: &SemanticProgram, lang: &str) -> Result<Vec<String>> {
    let l = ToyLang::from_name(lang)?;
    let mut out = Vec::new();
    for s in &p.body {
        render_stmt(s, l, &mut out);
    }
    Ok(out.into_iter().map(str::to_string).collect())
}

fn ident(v: u8) -> &'static str {
    IDENTIFIERS[v as usize]
}

fn render_stmt(s: &Stmt, l: ToyLang, out: &mut Vec<&'static str>) {
    match (l, s) {
        (ToyLang::A, Stmt::Assign(v, e)) => {
            out.extend(["set", ident(*v), "="]);
            render_expr(e, l, out, false);
            out.push(";");
        }
        (ToyLang::A, Stmt::Print(e)) => {
            out.push("show");
            render_expr(e, l, out, false);
            out.push(";");
        }
        (ToyLang::A, Stmt::Loop(n, body)) => {
            out.extend(["repeat", DIGITS[*n as usize], "{"]);
            body.iter().for_each(|b| render_stmt(b, l, out));
            out.push("}");
        }
        (ToyLang::B, Stmt::Assign(v, e)) => {
            out.extend([ident(*v), ":="]);
            render_expr(e, l, out, false);
        }
        (ToyLang::B, Stmt::Print(e)) => {
            out.extend(["emit", "("]);
            render_expr(e, l, out, false);
            out.push(")");
        }
        (ToyLang::B, Stmt::Loop(n, body)) => {
            out.extend(["loop", DIGITS[*n as usize], "do"]);
            body.iter().for_each(|b| render_stmt(b, l, out));
            out.push("end");
        }
        (ToyLang::C, Stmt::Assign(v, e)) => {
            render_expr(e, l, out, false);
            out.extend(["->", ident(*v), "."]);
        }
        (ToyLang::C, Stmt::Print(e)) => {
            render_expr(e, l, out, false);
            out.extend(["out", "."]);
        }
        (ToyLang::C, Stmt::Loop(n, body)) => {
            out.extend([DIGITS[*n as usize], "times", "["]);
            body.iter().for_each(|b| render_stmt(b, l, out));
            out.push("]");
        }
        (ToyLang::D, Stmt::Assign(v, e)) => {
            out.extend(["(", "def", ident(*v)]);
            render_expr(e, l, out, false);
            out.push(")");
        }
        (ToyLang::D, Stmt::Print(e)) => {
            out.extend(["(", "say"]);
            render_expr(e, l, out, false);
            out.push(")");
        }
        (ToyLang::D, Stmt::Loop(n, body)) => {
            out.extend(["(", "rep", DIGITS[*n as usize]]);
            body.iter().for_each(|b| render_stmt(b, l, out));
            out.push(")");
        }
    }
}

fn render_expr(e: &Expr, l: ToyLang, out: &mut Vec<&'static str>, nested: bool) {
    match e {
        Expr::Num(n) => out.push(DIGITS[*n as usize]),
        Expr::Var(v) => out.push(ident(*v)),
        Expr::Bin(op, a, b) => match l {
            ToyLang::A => {
                if nested {
                    out.push("(");
                }
                render_expr(a, l, out, true);
                out.push(l.op(*op));
                render_expr(b, l, out, true);
                if nested {
                    out.push(")");
                }
            }
            ToyLang::B => {
                out.extend([l.op(*op), "("]);
                render_expr(a, l, out, true);
                out.push(",");
                render_expr(b, l, out, true);
                out.push(")");
            }
            ToyLang::C => {
                render_expr(a, l, out, true);
                render_expr(b, l, out, true);
                out.push(l.op(*op));
            }
            ToyLang::D => {
                out.extend(["(", l.op(*op)]);
                render_expr(a, l, out, true);
                render_expr(b, l, out, true);
                out.push(")");
            }
        },
    }
}

struct Parser<'a> {
    toks: &'a [String],
    pos: usize,
    lang: ToyLang,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&'a str> {
        self.toks.get(self.pos).map(String::as_str)
    }

    fn peek_at(&self, off: usize) -> Option<&'a str> {
        self.toks.get(self.pos + off).map(String::as_str)
    }

    fn err(&self, what: &str) -> CorpusError {
        CorpusError::ParseError { line: 0, detail: format!("{}: {what} at token {}", self.lang.name(), self.pos) }
    }

    fn next(&mut self) -> Result<&'a str> {
        let t = self.peek().ok_or_else(|| self.err("unexpected end"))?;
        self.pos += 1;
        Ok(t)
    }

    fn expect(&mut self, tok: &str) -> Result<()> {
        let got = self.next()?;
        if got == tok {
            Ok(())
        } else {
            self.pos -= 1;
            Err(self.err(&format!("expected {tok:?}, found {got:?}")))
        }
    }

    fn ident(&mut self) -> Result<u8> {
        let t = self.next()?;
        IDENTIFIERS
            .iter()
            .position(|i| *i == t)
            .map(|i| i as u8)
            .ok_or_else(|| self.err(&format!("expected identifier, found {t:?}")))
    }

    fn digit(&mut self) -> Result<u8> {
        let t = self.next()?;
        digit_of(t).ok_or_else(|| self.err(&format!("expected digit, found {t:?}")))
    }

    fn atom(&mut self) -> Result<Expr> {
        let t = self.next()?;
        if let Some(d) = digit_of(t) {
            return Ok(Expr::Num(d));
        }
        if let Some(v) = IDENTIFIERS.iter().position(|i| *i == t) {
            return Ok(Expr::Var(v as u8));
        }
        self.pos -= 1;
        Err(self.err(&format!("expected operand, found {t:?}")))
    }

    fn program(&mut self) -> Result<Vec<Stmt>> {
        let mut body = Vec::new();
        while self.peek().is_some() {
            body.push(self.stmt()?);
        }
        Ok(body)
    }

    fn block(&mut self, close: &str) -> Result<Vec<Stmt>> {
        let mut body = Vec::new();
        while self.peek() != Some(close) {
            if self.peek().is_none() {
                return Err(self.err(&format!("unterminated block, expected {close:?}")));
            }
            body.push(self.stmt()?);
        }
        self.pos += 1;
        Ok(body)
    }

    fn stmt(&mut self) -> Result<Stmt> {
        match self.lang {
            ToyLang::A => match self.peek() {
                Some("set") => {
                    self.pos += 1;
                    let v = self.ident()?;
                    self.expect("=")?;
                    let e = self.expr_a()?;
                    self.expect(";")?;
                    Ok(Stmt::Assign(v, e))
                }
                Some("show") => {
                    self.pos += 1;
                    let e = self.expr_a()?;
                    self.expect(";")?;
                    Ok(Stmt::Print(e))
                }
                Some("repeat") => {
                    self.pos += 1;
                    let n = self.digit()?;
                    self.expect("{")?;
                    Ok(Stmt::Loop(n, self.block("}")?))
                }
                _ => Err(self.err("expected statement")),
            },
            ToyLang::B => match self.peek() {
                Some("emit") => {
                    self.pos += 1;
                    self.expect("(")?;
                    let e = self.expr_b()?;
                    self.expect(")")?;
                    Ok(Stmt::Print(e))
                }
                Some("loop") => {
                    self.pos += 1;
                    let n = self.digit()?;
                    self.expect("do")?;
                    Ok(Stmt::Loop(n, self.block("end")?))
                }
                _ => {
                    let v = self.ident()?;
                    self.expect(":=")?;
                    Ok(Stmt::Assign(v, self.expr_b()?))
                }
            },
            ToyLang::C => {
                if self.peek_at(1) == Some("times") {
                    let n = self.digit()?;
                    self.pos += 1;
                    self.expect("[")?;
                    return Ok(Stmt::Loop(n, self.block("]")?));
                }
                let e = self.expr_c()?;
                match self.next()? {
                    "->" => {
                        let v = self.ident()?;
                        self.expect(".")?;
                        Ok(Stmt::Assign(v, e))
                    }
                    "out" => {
                        self.expect(".")?;
                        Ok(Stmt::Print(e))
                    }
                    t => Err(self.err(&format!("expected -> or out, found {t:?}"))),
                }
            }
            ToyLang::D => {
                self.expect("(")?;
                let s = match self.next()? {
                    "def" => {
                        let v = self.ident()?;
                        Stmt::Assign(v, self.expr_d()?)
                    }
                    "say" => Stmt::Print(self.expr_d()?),
                    "rep" => {
                        let n = self.digit()?;
                        return Ok(Stmt::Loop(n, self.block(")")?));
                    }
                    t => return Err(self.err(&format!("expected def, say or rep, found {t:?}"))),
                };
                self.expect(")")?;
                Ok(s)
            }
        }
    }

    // infix: operand (op operand)? with parenthesized nested operands
    fn expr_a(&mut self) -> Result<Expr> {
        let a = self.operand_a()?;
        if let Some(op) = self.peek().and_then(|t| self.lang.parse_op(t)) {
            self.pos += 1;
            let b = self.operand_a()?;
            return Ok(Expr::Bin(op, Box::new(a), Box::new(b)));
        }
        Ok(a)
    }

    fn operand_a(&mut self) -> Result<Expr> {
        if self.peek() == Some("(") {
            self.pos += 1;
            let e = self.expr_a()?;
            self.expect(")")?;
            return Ok(e);
        }
        self.atom()
    }

    fn expr_b(&mut self) -> Result<Expr> {
        if let Some(op) = self.peek().and_then(|t| self.lang.parse_op(t)) {
            self.pos += 1;
            self.expect("(")?;
            let a = self.expr_b()?;
            self.expect(",")?;
            let b = self.expr_b()?;
            self.expect(")")?;
            return Ok(Expr::Bin(op, Box::new(a), Box::new(b)));
        }
        self.atom()
    }

    fn expr_c(&mut self) -> Result<Expr> {
        let mut stack: Vec<Expr> = Vec::new();
        while let Some(t) = self.peek() {
            if let Some(op) = self.lang.parse_op(t) {
                self.pos += 1;
                let b = stack.pop().ok_or_else(|| self.err("operator without operands"))?;
                let a = stack.pop().ok_or_else(|| self.err("operator without operands"))?;
                stack.push(Expr::Bin(op, Box::new(a), Box::new(b)));
            } else if digit_of(t).is_some() || IDENTIFIERS.contains(&t) {
                stack.push(self.atom()?);
            } else {
                break;
            }
        }
        match (stack.pop(), stack.is_empty()) {
            (Some(e), true) => Ok(e),
            _ => Err(self.err("malformed postfix expression")),
        }
    }

    fn expr_d(&mut self) -> Result<Expr> {
        if self.peek() == Some("(") {
            self.pos += 1;
            let t = self.next()?;
            let op = self.lang.parse_op(t).ok_or_else(|| self.err(&format!("expected operator, found {t:?}")))?;
            let a = self.expr_d()?;
            let b = self.expr_d()?;
            self.expect(")")?;
            return Ok(Expr::Bin(op, Box::new(a), Box::new(b)));
        }
        self.atom()
    }
}

fn digit_of(t: &str) -> Option<u8> {
    DIGITS.iter().position(|d| *d == t).map(|d| d as u8)
}

/// Parses a rendering back into statements.
pub fn parse(tokens: &[String], lang: &str) -> Result<Vec<Stmt>> {
    let lang = ToyLang::from_name(lang)?;
    Parser { toks: tokens, pos: 0, lang }.program()
}

/// Random well-formed program: every read variable is assigned earlier.
pub fn random_program(rng: &mut impl Rng, profile: TaskProfile) -> SemanticProgram {
    let mut assigned: Vec<u8> = Vec::new();
    let mut body = Vec::new();
    match profile {
        TaskProfile::Arith => {
            let n = rng.random_range(2..=3);
            for k in 0..n {
                body.push(random_simple(rng, &mut assigned, k + 1 == n));
            }
        }
        TaskProfile::Loop => {
            body.push(random_assign(rng, &mut assigned));
            let count = rng.random_range(2..=9);
            let inner = random_simple(rng, &mut assigned, false);
            body.push(Stmt::Loop(count, vec![inner]));
            if rng.random_bool(0.5) {
                body.push(Stmt::Print(Expr::Var(*pick(rng, &assigned))));
            }
        }
    }
    SemanticProgram { body, profile }
}

fn pick<'a, T>(rng: &mut impl Rng, xs: &'a [T]) -> &'a T {
    &xs[rng.random_range(0..xs.len())]
}

fn random_simple(rng: &mut impl Rng, assigned: &mut Vec<u8>, last: bool) -> Stmt {
    if !assigned.is_empty() && (last || rng.random_bool(0.25)) {
        Stmt::Print(random_expr(rng, assigned))
    } else {
        random_assign(rng, assigned)
    }
}

fn random_assign(rng: &mut impl Rng, assigned: &mut Vec<u8>) -> Stmt {
    let e = random_expr(rng, assigned);
    let v = rng.random_range(0..IDENTIFIERS.len() as u8);
    if !assigned.contains(&v) {
        assigned.push(v);
    }
    Stmt::Assign(v, e)
}

fn random_atom(rng: &mut impl Rng, assigned: &[u8]) -> Expr {
    if !assigned.is_empty() && rng.random_bool(0.5) {
        Expr::Var(*pick(rng, assigned))
    } else {
        Expr::Num(rng.random_range(0..10))
    }
}

fn random_expr(rng: &mut impl Rng, assigned: &[u8]) -> Expr {
    if rng.random_bool(0.3) {
        return random_atom(rng, assigned);
    }
    let op = *pick(rng, &[BinOp::Add, BinOp::Sub, BinOp::Mul]);
    let a = random_atom(rng, assigned);
    let b = if rng.random_bool(0.2) {
        let inner = *pick(rng, &[BinOp::Add, BinOp::Sub, BinOp::Mul]);
        Expr::Bin(inner, Box::new(random_atom(rng, assigned)), Box::new(random_atom(rng, assigned)))
    } else {
        random_atom(rng, assigned)
    };
    Expr::Bin(op, Box::new(a), Box::new(b))
}

/// Checks that every variable is assigned before it is read.
pub fn well_formed(body: &[Stmt]) -> bool {
    fn expr_ok(e: &Expr, env: &[u8]) -> bool {
        match e {
            Expr::Num(n) => *n < 10,
            Expr::Var(v) => env.contains(v),
            Expr::Bin(_, a, b) => expr_ok(a, env) && expr_ok(b, env),
        }
    }
    fn stmts_ok(body: &[Stmt], env: &mut Vec<u8>) -> bool {
        body.iter().all(|s| match s {
            Stmt::Assign(v, e) => {
                let ok = expr_ok(e, env) && (*v as usize) < IDENTIFIERS.len();
                env.push(*v);
                ok
            }
            Stmt::Print(e) => expr_ok(e, env),
            Stmt::Loop(n, b) => *n < 10 && stmts_ok(b, env),
        })
    }
    stmts_ok(body, &mut Vec::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    fn x_is_1_plus_2() -> SemanticProgram {
        let e = Expr::Bin(BinOp::Add, Box::new(Expr::Num(1)), Box::new(Expr::Num(2)));
        SemanticProgram { body: vec![Stmt::Assign(3, e)], profile: TaskProfile::Arith }
    }

    #[test]
    fn documented_renderings() {
        let p = x_is_1_plus_2();
        assert_eq!(render(&p, "toyA").unwrap(), toks("set x = 1 + 2 ;"));
        assert_eq!(render(&p, "toyB").unwrap(), toks("x := add ( 1 , 2 )"));
        assert_eq!(render(&p, "toyC").unwrap(), toks("1 2 plus -> x ."));
        assert_eq!(render(&p, "toyD").unwrap(), toks("( def x ( sum 1 2 ) )"));
        assert!(matches!(render(&p, "cobol"), Err(CorpusError::UnknownLanguage(_))));
    }

    #[test]
    fn random_programs_round_trip_in_every_language() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in 0..300 {
            let p = random_program(&mut rng, TaskProfile::ALL[k % 2]);
            assert!(well_formed(&p.body));
            for lang in TOY_LANGUAGES {
                let r = render(&p, lang).unwrap();
                let back = parse(&r, lang).unwrap();
                assert_eq!(back, p.body, "{lang}: {r:?}");
                let again = render(&SemanticProgram { body: back, profile: p.profile }, lang).unwrap();
                assert_eq!(again, r);
            }
        }
    }

    #[test]
    fn keyword_sets_are_disjoint_from_each_other_and_shared_tokens() {
        let langs = [ToyLang::A, ToyLang::B, ToyLang::C, ToyLang::D];
        for (i, a) in langs.iter().enumerate() {
            for kw in a.keywords() {
                assert!(!shared_tokens().any(|s| s == *kw));
                for b in &langs[i + 1..] {
                    assert!(!b.keywords().contains(kw), "{kw}");
                }
            }
        }
    }

    #[test]
    fn parse_errors_are_reported() {
        assert!(parse(&toks("set x = ;"), "toyA").is_err());
        assert!(parse(&toks("1 plus -> x ."), "toyC").is_err());
        assert!(parse(&toks("( def x 1"), "toyD").is_err());
    }
}
