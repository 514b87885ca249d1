//! Recursive-descent parser over the token stream. Collects every syntax error it can
//! recover from instead of stopping at the first one.

use super::lexer::{lex, Pos, Tok, Token};
use super::{Diagnostic, Element, ExperimentAst, RunBlock};

#[derive(Debug, Clone, Default)]
pub(crate) struct ElementSpan {
    pub at: Pos,
    /// Positions of the port names, in field order.
    pub ports: Vec<Pos>,
    /// Positions of the numeric arguments, in field order.
    pub numbers: Vec<Pos>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Spans {
    pub name: Pos,
    pub source: Pos,
    pub elements: Vec<ElementSpan>,
    pub run: Pos,
}

struct Parser {
    tokens: Vec<Token>,
    i: usize,
    diags: Vec<Diagnostic>,
}

type Step<T> = Result<T, ()>;

impl Parser {
    fn peek(&self) -> &Token {
        &self.tokens[self.i.min(self.tokens.len() - 1)]
    }

    fn bump(&mut self) -> Token {
        let t = self.peek().clone();
        if self.i < self.tokens.len() - 1 {
            self.i += 1;
        }
        t
    }

    fn fail<T>(&mut self, pos: Pos, msg: String) -> Step<T> {
        self.diags.push(Diagnostic::error(pos, msg));
        Err(())
    }

    fn unexpected<T>(&mut self, wanted: &str) -> Step<T> {
        let t = self.peek().clone();
        self.fail(t.pos, format!("expected {wanted}, found {}", t.tok.describe()))
    }

    fn expect(&mut self, tok: Tok) -> Step<Pos> {
        if self.peek().tok == tok {
            Ok(self.bump().pos)
        } else {
            self.unexpected(&tok.describe())
        }
    }

    fn ident(&mut self, what: &str) -> Step<(String, Pos)> {
        match self.peek().tok.clone() {
            Tok::Ident(s) => Ok((s, self.bump().pos)),
            _ => self.unexpected(what),
        }
    }

    fn keyword(&mut self, kw: &str) -> Step<Pos> {
        match &self.peek().tok {
            Tok::Ident(s) if s == kw => Ok(self.bump().pos),
            _ => self.unexpected(&format!("`{kw}`")),
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == kw)
    }

    fn float(&mut self, what: &str) -> Step<(f64, Pos)> {
        match self.peek().tok.clone() {
            Tok::Number(s) => {
                let pos = self.bump().pos;
                match s.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok((v, pos)),
                    _ => self.fail(pos, format!("malformed {what} `{s}`")),
                }
            }
            _ => self.unexpected(what),
        }
    }

    fn int(&mut self, what: &str) -> Step<(u64, Pos)> {
        match self.peek().tok.clone() {
            Tok::Number(s) => {
                let pos = self.bump().pos;
                match s.parse::<u64>() {
                    Ok(v) => Ok((v, pos)),
                    Err(_) => self.fail(pos, format!("{what} must be a non-negative integer, found `{s}`")),
                }
            }
            _ => self.unexpected(what),
        }
    }

    fn pair(&mut self) -> Step<([String; 2], [Pos; 2])> {
        self.expect(Tok::LParen)?;
        let (a, pa) = self.ident("port name")?;
        self.expect(Tok::Comma)?;
        let (b, pb) = self.ident("port name")?;
        self.expect(Tok::RParen)?;
        Ok(([a, b], [pa, pb]))
    }

    /// Skips to the next statement boundary.
    fn recover(&mut self) {
        let start = self.i;
        loop {
            let t = self.peek();
            match t.tok {
                Tok::Eof | Tok::RBrace => return,
                Tok::Semi => {
                    self.bump();
                    return;
                }
                _ if t.line_start && self.i > start => return,
                _ => {
                    self.bump();
                }
            }
        }
    }

    fn run_block(&mut self) -> Step<RunBlock> {
        let open = self.expect(Tok::LBrace)?;
        let (mut trials, mut seed, mut cycles, mut subsample) = (None, None, None, None);
        loop {
            while self.peek().tok == Tok::Semi {
                self.bump();
            }
            let t = self.peek().clone();
            match &t.tok {
                Tok::RBrace => {
                    self.bump();
                    break;
                }
                Tok::Ident(k) if matches!(k.as_str(), "trials" | "seed" | "cycles") => {
                    self.bump();
                    let (v, _) = self.int(k)?;
                    let slot = match k.as_str() {
                        "trials" => &mut trials,
                        "seed" => &mut seed,
                        _ => &mut cycles,
                    };
                    if slot.replace(v).is_some() {
                        return self.fail(t.pos, format!("`{k}` given twice"));
                    }
                }
                Tok::Ident(k) if k == "subsample" => {
                    self.bump();
                    let (v, _) = self.float("subsample fraction")?;
                    if subsample.replace(v).is_some() {
                        return self.fail(t.pos, "`subsample` given twice".into());
                    }
                }
                _ => return self.unexpected("`trials`, `seed`, `cycles`, `subsample` or `}`"),
            }
        }
        let Some(trials) = trials else {
            return self.fail(open, "run block needs `trials`".into());
        };
        let Some(seed) = seed else {
            return self.fail(open, "run block needs `seed`".into());
        };
        Ok(RunBlock { trials, seed, cycles, subsample })
    }

    fn statement(&mut self, ast: &mut ExperimentAst, spans: &mut Spans, seen_source: &mut bool) -> Step<()> {
        let (kw, at) = self.ident("a statement")?;
        match kw.as_str() {
            "source" => {
                let (p, pos) = self.ident("port name")?;
                if *seen_source {
                    return self.fail(at, "`source` declared twice".into());
                }
                *seen_source = true;
                ast.source = p;
                spans.source = pos;
            }
            "beamsplitter" => {
                let (name, _) = self.ident("beam splitter name")?;
                let (inputs, pi) = self.pair()?;
                self.expect(Tok::Arrow)?;
                let (outputs, po) = self.pair()?;
                let mut numbers = vec![];
                let theta = if self.at_keyword("theta") {
                    self.bump();
                    let (v, p) = self.float("mixing angle")?;
                    numbers.push(p);
                    Some(v)
                } else {
                    None
                };
                ast.elements.push(Element::BeamSplitter { name, inputs, outputs, theta });
                spans.elements.push(ElementSpan { at, ports: [pi, po].concat(), numbers });
            }
            "probe" => {
                let (id, _) = self.ident("probe name")?;
                self.keyword("on")?;
                let (port, pp) = self.ident("port name")?;
                self.keyword("strength")?;
                let (strength, ps) = self.float("strength")?;
                let mut numbers = vec![ps];
                let width = if self.at_keyword("width") {
                    self.bump();
                    let (v, p) = self.float("width")?;
                    numbers.push(p);
                    Some(v)
                } else {
                    None
                };
                ast.elements.push(Element::Probe { id, port, strength, width });
                spans.elements.push(ElementSpan { at, ports: vec![pp], numbers });
            }
            "block" => {
                let (port, pp) = self.ident("port name")?;
                ast.elements.push(Element::Block { port });
                spans.elements.push(ElementSpan { at, ports: vec![pp], numbers: vec![] });
            }
            "detect" => {
                let (ports, pp) = self.pair()?;
                ast.elements.push(Element::Detect { ports });
                spans.elements.push(ElementSpan { at, ports: pp.to_vec(), numbers: vec![] });
            }
            "run" => {
                let run = self.run_block()?;
                if ast.run.is_some() {
                    return self.fail(at, "only one run block is allowed".into());
                }
                ast.run = Some(run);
                spans.run = at;
            }
            other => {
                return self.fail(
                    at,
                    format!("unknown statement `{other}`; expected source, beamsplitter, probe, block, detect or run"),
                )
            }
        }
        Ok(())
    }
}

pub(crate) fn parse_syntax(text: &str) -> (Option<(ExperimentAst, Spans)>, Vec<Diagnostic>) {
    let (tokens, lex_diags) = lex(text);
    let mut p = Parser { tokens, i: 0, diags: lex_diags };
    let mut spans = Spans::default();
    let mut ast = ExperimentAst {
        name: String::new(),
        source: String::new(),
        elements: vec![],
        run: None,
    };

    let header = (|| -> Step<()> {
        p.keyword("experiment")?;
        let (name, pos) = p.ident("experiment name")?;
        ast.name = name;
        spans.name = pos;
        p.expect(Tok::LBrace)?;
        Ok(())
    })();
    if header.is_err() {
        return (None, p.diags);
    }

    let mut seen_source = false;
    let mut closed = false;
    loop {
        while p.peek().tok == Tok::Semi {
            p.bump();
        }
        match p.peek().tok {
            Tok::RBrace => {
                p.bump();
                closed = true;
                break;
            }
            Tok::Eof => {
                let pos = p.peek().pos;
                p.diags.push(Diagnostic::error(pos, "missing `}` closing the experiment".into()));
                break;
            }
            _ => {
                if p.statement(&mut ast, &mut spans, &mut seen_source).is_err() {
                    p.recover();
                }
            }
        }
    }
    if closed && p.peek().tok != Tok::Eof {
        let t = p.peek().clone();
        p.diags.push(Diagnostic::error(t.pos, format!("unexpected {} after the experiment", t.tok.describe())));
    }
    if !seen_source {
        p.diags.push(Diagnostic::error(spans.name, "experiment has no `source`".into()));
    }
    (Some((ast, spans)), p.diags)
}
