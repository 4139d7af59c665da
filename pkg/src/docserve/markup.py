"""XML-like markup trees, their byte-level transfer syntax, and typed-value codecs.

Trees are transferred as raw bytes using two reserved control bytes (0x05 and
0x06), so text payloads never need quoting.  The wire grammar:

    element open   X Y name (Y key "=" value)* X
    element close  X Y X
    text           raw bytes (may not contain X or Y)

where X = 0x05 and Y = 0x06.  Attribute values may contain "=" (only the
first "=" splits key from value).  Decoding is total over arbitrary byte
input: it either yields a forest or raises a positioned `DecodeError`.

Round-tripping ``decode(encode(t)) == [t]`` holds for canonical trees: text
nodes are non-empty and no two text nodes are adjacent siblings (the decoder
only ever produces canonical forests).

Typed values (ints, bools, strings, pairs, lists, options, tagged variants)
are mapped onto tree forests by small codec combinators; composition keeps
``decode . encode`` the identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, TypeVar, Union

X = 0x05
Y = 0x06
_X = bytes([X])
_Y = bytes([Y])
_XY = bytes([X, Y])


class MarkupError(ValueError):
    pass


class EncodeError(MarkupError):
    pass


class DecodeError(MarkupError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class ShapeError(MarkupError):
    """Typed decoding found a forest of unexpected shape."""


@dataclass(frozen=True)
class Text:
    content: str

    def __post_init__(self):
        if "\x05" in self.content or "\x06" in self.content:
            raise EncodeError(f"text contains reserved control byte: {self.content!r}")


@dataclass(frozen=True)
class Elem:
    name: str
    attrs: tuple[tuple[str, str], ...] = ()
    body: tuple["MarkupTree", ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "attrs", tuple((k, v) for k, v in self.attrs))
        object.__setattr__(self, "body", tuple(self.body))
        _check_name(self.name, "element name")
        seen = set()
        for key, value in self.attrs:
            _check_name(key, "attribute key")
            if key in seen:
                raise EncodeError(f"duplicate attribute key {key!r} in element {self.name!r}")
            seen.add(key)
            if "\x05" in value or "\x06" in value:
                raise EncodeError(f"attribute value contains reserved control byte: {value!r}")

    def attr(self, key: str, default: str | None = None) -> str | None:
        for k, v in self.attrs:
            if k == key:
                return v
        return default


MarkupTree = Union[Text, Elem]


def _check_name(name: str, what: str) -> None:
    if not name:
        raise EncodeError(f"empty {what}")
    if "\x05" in name or "\x06" in name or "=" in name:
        raise EncodeError(f"{what} contains reserved byte or '=': {name!r}")


def _enc(s: str) -> bytes:
    return s.encode("utf-8", "surrogateescape")


def _dec(b: bytes) -> str:
    return b.decode("utf-8", "surrogateescape")


# -- transfer syntax ---------------------------------------------------------


def yxml_encode(tree: MarkupTree) -> bytes:
    """Serialize one tree to its byte form."""
    out = bytearray()
    _encode_into(tree, out)
    return bytes(out)


def yxml_encode_forest(trees: Iterable[MarkupTree]) -> bytes:
    out = bytearray()
    for tree in trees:
        _encode_into(tree, out)
    return bytes(out)


def _encode_into(tree: MarkupTree, out: bytearray) -> None:
    if isinstance(tree, Text):
        out += _enc(tree.content)
    elif isinstance(tree, Elem):
        out += _XY
        out += _enc(tree.name)
        for key, value in tree.attrs:
            out += _Y
            out += _enc(key)
            out += b"="
            out += _enc(value)
        out += _X
        for sub in tree.body:
            _encode_into(sub, out)
        out += _XY
        out += _X
    else:
        raise EncodeError(f"not a markup tree: {tree!r}")


def yxml_decode(data: bytes) -> list[MarkupTree]:
    """Parse a byte string into a markup forest.

    Total over arbitrary input: malformed markup raises `DecodeError` with
    the byte offset of the offending construct.
    """
    # (name, attrs, children, open offset); the sentinel holds the top forest
    stack: list[tuple[str | None, tuple, list, int]] = [(None, (), [], 0)]
    i = 0
    n = len(data)
    while i < n:
        x = data.find(X, i)
        if x != i:
            end = n if x < 0 else x
            chunk = data[i:end]
            stray = chunk.find(Y)
            if stray >= 0:
                raise DecodeError("stray control byte in text", i + stray)
            stack[-1][2].append(Text(_dec(chunk)))
            if x < 0:
                i = n
                break
            i = x
            continue
        # markup begins at i
        if i + 1 >= n or data[i + 1] != Y:
            raise DecodeError("stray control byte", i)
        close = data.find(X, i + 2)
        if close < 0:
            raise DecodeError("unterminated markup", i)
        segment = data[i + 2 : close]
        if not segment:
            if len(stack) == 1:
                raise DecodeError("element close without open", i)
            name, attrs, children, _ = stack.pop()
            stack[-1][2].append(Elem(name, attrs, tuple(children)))
        else:
            parts = segment.split(_Y)
            raw_name = parts[0]
            if not raw_name:
                raise DecodeError("empty element name", i + 2)
            if b"=" in raw_name:
                raise DecodeError("'=' in element name", i + 2)
            attrs = []
            pos = i + 2 + len(raw_name) + 1
            for part in parts[1:]:
                eq = part.find(b"=")
                if eq < 0:
                    raise DecodeError("malformed attribute (missing '=')", pos)
                if eq == 0:
                    raise DecodeError("empty attribute key", pos)
                attrs.append((_dec(part[:eq]), _dec(part[eq + 1 :])))
                pos += len(part) + 1
            try:
                elem_attrs = tuple(attrs)
                stack.append((_dec(raw_name), elem_attrs, [], i))
                # validate via Elem invariants (duplicate keys etc.)
                Elem(_dec(raw_name), elem_attrs, ())
            except EncodeError as exc:
                raise DecodeError(str(exc), i + 2) from None
        i = close + 1
    if len(stack) > 1:
        raise DecodeError(f"unclosed element {stack[-1][0]!r}", stack[-1][3])
    return stack[0][2]


# -- typed-value codecs ------------------------------------------------------

T = TypeVar("T")
A = TypeVar("A")
B = TypeVar("B")

Encoder = Callable[[T], list]
Decoder = Callable[[list], T]

_WRAP = ":"


def _wrap(forest: list) -> Elem:
    return Elem(_WRAP, (), tuple(forest))


def _unwrap(tree: MarkupTree, expected: str) -> list:
    if not isinstance(tree, Elem) or tree.name != _WRAP or tree.attrs:
        raise ShapeError(f"expected {expected}, found {_describe(tree)}")
    return list(tree.body)


def _describe(tree: MarkupTree) -> str:
    if isinstance(tree, Text):
        return f"text {tree.content!r}"
    return f"element {tree.name!r}"


def encode_unit(_value: None) -> list:
    return []


def decode_unit(forest: list) -> None:
    if forest:
        raise ShapeError(f"expected empty forest, found {len(forest)} nodes")
    return None


def encode_string(value: str) -> list:
    return [Text(value)] if value else []


def decode_string(forest: list) -> str:
    if not forest:
        return ""
    if len(forest) == 1 and isinstance(forest[0], Text):
        return forest[0].content
    raise ShapeError(f"expected a text node, found {_describe(forest[0])}")


def encode_int(value: int) -> list:
    return [Text(str(int(value)))]


def decode_int(forest: list) -> int:
    body = decode_string(forest)
    try:
        return int(body)
    except ValueError:
        raise ShapeError(f"expected decimal integer, found {body!r}") from None


def encode_bool(value: bool) -> list:
    return [Text("1" if value else "0")]


def decode_bool(forest: list) -> bool:
    body = decode_string(forest)
    if body == "1":
        return True
    if body == "0":
        return False
    raise ShapeError(f"expected boolean '0'/'1', found {body!r}")


def encode_pair(first: Encoder, second: Encoder) -> Encoder:
    def enc(value) -> list:
        a, b = value
        return [_wrap(first(a)), _wrap(second(b))]

    return enc


def decode_pair(first: Decoder, second: Decoder) -> Decoder:
    def dec(forest: list):
        if len(forest) != 2:
            raise ShapeError(f"expected pair, found {len(forest)} nodes")
        return (first(_unwrap(forest[0], "pair component")),
                second(_unwrap(forest[1], "pair component")))

    return dec


def encode_list(item: Encoder) -> Encoder:
    def enc(values) -> list:
        return [_wrap(item(v)) for v in values]

    return enc


def decode_list(item: Decoder) -> Decoder:
    def dec(forest: list) -> list:
        return [item(_unwrap(tree, "list item")) for tree in forest]

    return dec


def encode_option(item: Encoder) -> Encoder:
    def enc(value) -> list:
        return [] if value is None else [_wrap(item(value))]

    return enc


def decode_option(item: Decoder) -> Decoder:
    def dec(forest: list):
        if not forest:
            return None
        if len(forest) == 1:
            return item(_unwrap(forest[0], "option payload"))
        raise ShapeError(f"expected option, found {len(forest)} nodes")

    return dec


def encode_variant(encoders: dict[str, Encoder]) -> Encoder:
    """Encode a (tag, payload) pair as a single tagged element."""

    def enc(value) -> list:
        tag, payload = value
        if tag not in encoders:
            raise EncodeError(f"unknown variant tag {tag!r}")
        return [Elem(tag, (), tuple(encoders[tag](payload)))]

    return enc


def decode_variant(decoders: dict[str, Decoder]) -> Decoder:
    def dec(forest: list):
        if len(forest) != 1 or not isinstance(forest[0], Elem):
            found = "empty forest" if not forest else _describe(forest[0])
            raise ShapeError(f"expected tagged variant, found {found}")
        tree = forest[0]
        if tree.name not in decoders:
            raise ShapeError(f"unknown variant tag {tree.name!r}")
        return (tree.name, decoders[tree.name](list(tree.body)))

    return dec
