"""Recursive-descent parser for `.space` files.

The grammar is the one the printed listings use: `//` comments, `$`
sigils on quantified variables, `end`-terminated declarations (except
`require`, whose body ends with its last disjunct), and `...` elisions
wherever a listing leaves text out.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from . import ir


@dataclass(frozen=True)
class Diagnostic:
    line: int
    col: int
    code: str
    message: str

    def __str__(self):
        return f"{self.line}:{self.col}: {self.code}: {self.message}"


class ParseError(Exception):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(str(d) for d in diagnostics))


@dataclass(frozen=True)
class Token:
    kind: str  # NAME VAR STRING INT OP EOF
    text: str
    line: int
    col: int


_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>//[^\n]*)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<var>\$[A-Za-z_][A-Za-z_0-9]*)
  | (?P<int>\d+)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>\.\.\.|->|\|\||&&|==|!=|<=|>=|[():,=|/!<>])
    """,
    re.VERBOSE,
)


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            raise ParseError([Diagnostic(line, col, "SYNTAX", f"unexpected character {text[pos]!r}")])
        kind = m.lastgroup
        s = m.group()
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind == "string":
            tokens.append(Token("STRING", bytes(s[1:-1], "utf-8").decode("unicode_escape"), line, col))
        elif kind == "var":
            tokens.append(Token("VAR", s[1:], line, col))
        elif kind == "int":
            tokens.append(Token("INT", s, line, col))
        elif kind == "name":
            tokens.append(Token("NAME", s, line, col))
        elif kind == "op":
            tokens.append(Token("OP", s, line, col))
        pos = m.end()
    tokens.append(Token("EOF", "", line, pos - line_start + 1))
    return tokens


DECL_KEYWORDS = {"set", "choice", "require", "quotient", "trigger"}


class Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0
        self.seen: dict[tuple[str, str], Token] = {}

    # -- token helpers -----------------------------------------------------
    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k=1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at(self, text, kind=None) -> bool:
        t = self.tok
        return t.text == text and (kind is None or t.kind == kind) and t.kind != "STRING"

    def error(self, msg, tok=None, code="SYNTAX"):
        tok = tok or self.tok
        raise ParseError([Diagnostic(tok.line, tok.col, code, msg)])

    def expect(self, text) -> Token:
        if not self.at(text):
            shown = self.tok.text or "end of input"
            self.error(f"expected {text!r}, found {shown!r}")
        t = self.tok
        self.i += 1
        return t

    def expect_kind(self, kind) -> Token:
        if self.tok.kind != kind:
            shown = self.tok.text or "end of input"
            self.error(f"expected {kind.lower()}, found {shown!r}")
        t = self.tok
        self.i += 1
        return t

    def accept(self, text) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def name(self) -> str:
        return self.expect_kind("NAME").text

    def declare(self, kind, name, tok):
        key = (kind, name)
        if key in self.seen:
            self.error(f"duplicate {kind} {name!r}", tok, code="DUPLICATE")
        self.seen[key] = tok

    # -- top level ---------------------------------------------------------
    def parse(self) -> ir.SpaceDefinition:
        decls = []
        while self.tok.kind != "EOF":
            t = self.tok
            if t.kind != "NAME" or t.text not in DECL_KEYWORDS:
                self.error(f"expected a declaration, found {t.text!r}")
            decl = getattr(self, "p_" + t.text)()
            object.__setattr__(decl, "line", t.line)
            decls.append(decl)
        return ir.SpaceDefinition(tuple(decls))

    def inline_elision(self, colon: Token) -> bool:
        """`X: ...` on one line: a declaration with no body and no `end`."""
        if self.at("...") and self.tok.line == colon.line:
            self.i += 1
            return True
        return False

    def skip_elisions(self) -> bool:
        seen = False
        while self.accept("..."):
            seen = True
        return seen

    # -- sets --------------------------------------------------------------
    def setref(self) -> ir.SetRef:
        name = self.name()
        args = []
        if self.accept("("):
            args.append(self.expect_kind("VAR").text)
            while self.accept(","):
                args.append(self.expect_kind("VAR").text)
            self.expect(")")
        return ir.SetRef(name, tuple(args))

    def binding(self) -> ir.Forall:
        var = self.expect_kind("VAR").text
        self.expect("in")
        return ir.Forall(var, self.setref())

    def p_set(self) -> ir.SetDecl:
        self.expect("set")
        t = self.tok
        name = self.name()
        self.declare("set", name, t)
        param = None
        if self.accept("("):
            param = self.binding()
            self.expect(")")
        superset = self.name() if self.accept("subsetof") else None
        colon = self.expect(":")
        if self.inline_elision(colon):
            return ir.SetDecl(name, param, superset, (), elided=True, inline=True)
        keys, elided = [], False
        while not self.at("end"):
            if self.accept("..."):
                elided = True
                continue
            key = self.name()
            self.expect("=")
            if self.accept("..."):
                keys.append((key, None))
            else:
                keys.append((key, self.expect_kind("STRING").text))
        self.expect("end")
        return ir.SetDecl(name, param, superset, tuple(keys), elided=elided)

    # -- choices -----------------------------------------------------------
    def p_choice(self) -> ir.ChoiceDecl:
        self.expect("choice")
        kind_tok = self.tok
        kind = self.name()
        if kind not in ("enum", "integer", "counter"):
            self.error(f"unknown choice kind {kind!r}", kind_tok)
        t = self.tok
        name = self.name()
        self.declare("choice", name, t)
        self.expect("(")
        params = []
        if not self.at(")"):
            params.append(self.binding())
            while self.accept(","):
                params.append(self.binding())
        self.expect(")")
        colon = self.expect(":")
        if self.inline_elision(colon):
            return ir.ChoiceDecl(name, kind, tuple(params), None, elided=True, inline=True)
        domain, elided = getattr(self, "body_" + kind)()
        self.expect("end")
        return ir.ChoiceDecl(name, kind, tuple(params), domain, elided=elided)

    def body_enum(self):
        values, anti, elided = [], [], False
        while not self.at("end"):
            if self.accept("..."):
                elided = True
            elif self.accept("value"):
                values.append(self.name())
                self.expect(":")
            elif self.accept("antisymmetric"):
                self.expect(":")
                while self.tok.kind == "NAME" and self.peek().text == "->":
                    a = self.name()
                    self.expect("->")
                    anti.append((a, self.name()))
            else:
                self.error(f"unexpected {self.tok.text!r} in enum body")
        if not values and not anti:
            return None, elided
        return ir.EnumDomain(tuple(values), tuple(anti)), elided

    def body_integer(self):
        if self.skip_elisions():
            return None, True
        universe = self.expect_kind("STRING").text
        return ir.IntegerDomain(universe), self.skip_elisions()

    def body_counter(self):
        if self.skip_elisions():
            return None, True
        foralls = []
        while self.accept("forall"):
            foralls.append(self.binding())
            self.expect(":")
        op_tok = self.tok
        op = self.name()
        if op not in ("sum", "mul"):
            self.error(f"expected 'sum' or 'mul', found {op!r}", op_tok)
        term = self.operand()
        guard, colon = (), False
        if self.accept("when"):
            colon = self.accept(":")
            guard = self.conjunction()
        dom = ir.CounterDomain(op, tuple(foralls), term, guard, colon)
        return dom, self.skip_elisions()

    # -- conditions --------------------------------------------------------
    def choiceref(self) -> ir.ChoiceRef:
        name = self.name()
        self.expect("(")
        args = []
        if not self.at(")"):
            args.append(self.expect_kind("VAR").text)
            while self.accept(","):
                args.append(self.expect_kind("VAR").text)
        self.expect(")")
        return ir.ChoiceRef(name, tuple(args))

    def operand(self):
        t = self.tok
        if t.kind == "STRING":
            self.i += 1
            return ir.CodeAtom(t.text)
        if t.kind == "INT":
            self.i += 1
            return ir.IntLit(int(t.text))
        return self.choiceref()

    def atom(self) -> ir.Atom:
        t = self.tok
        if t.kind == "OP" and t.text == "!":
            self.i += 1
            return ir.CodeAtom(self.expect_kind("STRING").text, negated=True)
        if t.kind == "STRING":
            self.i += 1
            return ir.CodeAtom(t.text)
        if t.kind == "NAME" and t.text in ("true", "false"):
            self.i += 1
            return ir.BoolAtom(t.text == "true")
        ref = self.choiceref()
        if self.accept("is"):
            negated = self.accept("not")
            values = [self.name()]
            while self.accept("|"):
                values.append(self.name())
            return ir.IsAtom(ref, tuple(values), negated)
        if self.tok.kind == "OP" and self.tok.text in ir.CMP_OPS:
            op = self.tok.text
            self.i += 1
            return ir.CmpAtom(ref, op, self.operand())
        return ir.BareRefAtom(ref)

    def disjunction(self) -> tuple:
        atoms = [self.atom()]
        while self.accept("||"):
            atoms.append(self.atom())
        return tuple(atoms)

    def conjunction(self) -> tuple:
        atoms = [self.atom()]
        while self.accept("&&"):
            atoms.append(self.atom())
        return tuple(atoms)

    # -- constraints, quotients, triggers ----------------------------------
    def p_require(self) -> ir.ConstraintDecl:
        self.expect("require")
        foralls = []
        while self.accept("forall"):
            foralls.append(self.binding())
            self.expect(":")
        return ir.ConstraintDecl(tuple(foralls), self.disjunction())

    def p_quotient(self) -> ir.QuotientDecl:
        self.expect("quotient")
        t = self.tok
        name = self.name()
        self.declare("quotient", name, t)
        param = None
        if self.accept("("):
            param = self.binding()
            self.expect(")")
        self.expect("of")
        var = self.expect_kind("VAR").text
        of_in = self.accept("in")
        base = self.setref()
        self.expect(":")
        flag = member = equiv_choice = equiv_value = None
        elided = False
        if self.tok.kind == "NAME" and self.peek().text == "=":
            flag = self.name()
            self.expect("=")
            member = self.conjunction()
            self.expect("/")
            equiv_choice = self.name()
            self.expect("is")
            equiv_value = self.name()
        elided = self.skip_elisions()
        self.expect("end")
        return ir.QuotientDecl(name, param, var, base, flag, member or (),
                               equiv_choice, equiv_value, elided, of_in)

    def p_trigger(self) -> ir.TriggerDecl:
        self.expect("trigger")
        t = self.tok
        name = self.name()
        self.declare("trigger", name, t)
        self.expect(":")
        foralls = []
        while self.accept("forall"):
            foralls.append(self.binding())
            self.expect(":")
        self.expect("when")
        when = self.conjunction()
        self.expect("call")
        callback = self.expect_kind("STRING").text
        self.expect("end")
        return ir.TriggerDecl(name, tuple(foralls), when, callback)


def parse(text: str) -> ir.SpaceDefinition:
    """Parse `.space` source; raises ParseError carrying diagnostics."""
    return Parser(text).parse()


def parse_file(path) -> ir.SpaceDefinition:
    with open(path, encoding="utf-8") as f:
        return parse(f.read())
