"""English cardinals (American style, no "and") and the matching reverse parser."""
import re

ONES = ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
        "ten", "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen",
        "seventeen", "eighteen", "nineteen"]
TENS = ["", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety"]
SCALES = ["", "thousand", "million", "billion", "trillion", "quadrillion", "quintillion",
          "sextillion", "septillion", "octillion", "nonillion"]

LIMIT = 10 ** (3 * len(SCALES))

_SMALL = {w: i for i, w in enumerate(ONES)}
_TENS = {w: i * 10 for i, w in enumerate(TENS) if w}
_SCALE = {w: 1000 ** i for i, w in enumerate(SCALES) if w}
NUMBER_WORDS = frozenset(_SMALL) | frozenset(_TENS) | frozenset(_SCALE) | {"hundred"}


def _below_thousand(n):
    h, r = divmod(n, 100)
    parts = []
    if h:
        parts.append(ONES[h] + " hundred")
    if r >= 20:
        t, u = divmod(r, 10)
        parts.append(TENS[t] + ("-" + ONES[u] if u else ""))
    elif r:
        parts.append(ONES[r])
    return " ".join(parts)


def to_words(n: int) -> str:
    """Cardinal for ``0 <= n < 10**33``, e.g. 2499 -> 'two thousand four hundred ninety-nine'."""
    n = int(n)
    if n < 0 or n >= LIMIT:
        raise ValueError(f"to_words supports 0 <= n < 10**{3 * len(SCALES)}, got {n}")
    if n == 0:
        return "zero"
    groups = []
    i = 0
    while n:
        n, g = divmod(n, 1000)
        if g:
            groups.append(_below_thousand(g) + (" " + SCALES[i] if i else ""))
        i += 1
    return " ".join(reversed(groups))


def word_tokens(text: str) -> list:
    return [t for t in re.split(r"[\s\-]+", text.strip().lower()) if t]


def parse_words(text: str) -> int:
    """Inverse of :func:`to_words`. Rejects unknown tokens and malformed groups."""
    tokens = word_tokens(text)
    if not tokens:
        raise ValueError("empty number phrase")
    if tokens == ["zero"]:
        return 0
    total = 0
    group = 0
    last_scale = None
    seen_any = False
    # state inside a group: 0 start, 1 after hundreds digit, 2 after 'hundred', 3 after tens, 4 after unit/teen
    state = 0
    for tok in tokens:
        if tok in _SMALL and tok != "zero":
            v = _SMALL[tok]
            if state == 0 and v < 10:
                group, state = v, 1
            elif state == 0:
                group, state = v, 4
            elif state == 2:
                group += v
                state = 4
            elif state == 3 and v < 10:
                group += v
                state = 4
            else:
                raise ValueError(f"unexpected {tok!r} in {text!r}")
        elif tok in _TENS:
            if state == 0:
                group, state = _TENS[tok], 3
            elif state == 2:
                group += _TENS[tok]
                state = 3
            else:
                raise ValueError(f"unexpected {tok!r} in {text!r}")
        elif tok == "hundred":
            if state != 1:
                raise ValueError(f"'hundred' must follow a digit word in {text!r}")
            group *= 100
            state = 2
        elif tok in _SCALE:
            s = _SCALE[tok]
            if state == 0 or group == 0 or (last_scale is not None and s >= last_scale):
                raise ValueError(f"misplaced scale {tok!r} in {text!r}")
            total += group * s
            group, state, last_scale = 0, 0, s
        else:
            raise ValueError(f"not a number word: {tok!r}")
        seen_any = True
    if not seen_any:
        raise ValueError(f"no number in {text!r}")
    if state == 0 and last_scale is None:
        raise ValueError(f"incomplete number phrase {text!r}")
    if last_scale is not None and group >= 1000:
        raise ValueError(f"malformed number phrase {text!r}")
    return total + group
