"""Few-shot prompt assembly and model-answer normalization.

Templates are plain UTF-8 text files with three sections::

    [instruction]
    Answer the question.
    [exemplar]
    Q: {question}
    A: {answer}
    [query]
    Q: {query}
    A:

Rendering is pure text substitution: the instruction, then one exemplar block
per in-context example in selection order, then the unanswered query block.
Defaults ship for every (L1|L2|L3) x (en, fr, de, ro) combination.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass
from importlib import resources

from .corpus import CANONICAL_MONTHS, MONTH_TABLES
from .errors import DataError
from .retriever import ContextSet

_SECTION_RE = re.compile(r"^\[(instruction|exemplar|query)\]\s*$")
# Leading sequential indicators only ("1)", "a)", "(2)"); anchored to the
# string start so answers containing ")" internally are untouched.
_ENUMERATOR_RE = re.compile(r"^\s*\(?(?:\d{1,2}|[a-z])[\)\]]\s*")


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    instruction: str
    exemplar_block: str
    query_block: str

    def __post_init__(self) -> None:
        if "{question}" not in self.exemplar_block or "{answer}" not in self.exemplar_block:
            raise DataError(
                f"template {self.template_id!r}: exemplar block must contain "
                "{question} and {answer}"
            )
        if "{query}" not in self.query_block:
            raise DataError(f"template {self.template_id!r}: query block must contain {{query}}")

    @classmethod
    def parse(cls, text: str, template_id: str) -> "PromptTemplate":
        sections: dict[str, list[str]] = {}
        current = None
        for line in text.splitlines():
            m = _SECTION_RE.match(line)
            if m:
                current = m.group(1)
                sections[current] = []
                continue
            if current is not None:
                sections[current].append(line)
        missing = {"instruction", "exemplar", "query"} - sections.keys()
        if missing:
            raise DataError(f"template {template_id!r}: missing sections {sorted(missing)}")
        block = lambda name: "\n".join(sections[name]).strip("\n")
        return cls(
            template_id=template_id,
            instruction=block("instruction"),
            exemplar_block=block("exemplar"),
            query_block=block("query"),
        )

    @classmethod
    def default(cls, level: str, language: str) -> "PromptTemplate":
        primary = language.split("-")[0].casefold()
        name = f"{level.casefold()}_{primary}.txt"
        ref = resources.files("tempalign").joinpath("templates", name)
        try:
            text = ref.read_text(encoding="utf-8")
        except FileNotFoundError:
            raise DataError(f"no default template for level {level!r}, language {language!r}") from None
        return cls.parse(text, template_id=f"{level.casefold()}_{primary}")

    @classmethod
    def load(cls, path) -> "PromptTemplate":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.parse(fh.read(), template_id=str(path))


@dataclass(frozen=True)
class AssembledPrompt:
    text: str
    k: int
    query_id: str
    strategy: str
    template_id: str


def assemble_prompt(context: ContextSet, query_question: str, template: PromptTemplate,
                    query_id: str | None = None) -> AssembledPrompt:
    """Instruction, K exemplar blocks in context order, one unanswered query."""
    if len(context) == 0:
        raise DataError("context set is empty")
    blocks = [template.instruction] if template.instruction else []
    for ex in context.examples:
        blocks.append(
            template.exemplar_block.replace("{question}", ex.question).replace(
                "{answer}", ex.answer
            )
        )
    blocks.append(template.query_block.replace("{query}", query_question))
    return AssembledPrompt(
        text="\n\n".join(blocks),
        k=len(context),
        query_id=query_id if query_id is not None else context.query_id,
        strategy=context.strategy,
        template_id=template.template_id,
    )


def _strip_marks(text: str) -> str:
    # Drop punctuation and symbol characters; keep hyphens so hyphenated
    # entities survive. Letters (including accented ones) pass through.
    kept = []
    for ch in text:
        cat = unicodedata.category(ch)
        if (cat.startswith("P") or cat.startswith("S")) and ch != "-":
            continue
        kept.append(ch)
    return "".join(kept)


def normalize_answer(raw: str, level: str, language: str = "en") -> str:
    """Canonical comparison form of a model answer.

    Lowercases, strips leading enumerators ("1)", "a)"), removes punctuation
    and symbols, collapses whitespace, and for L1 maps month names (in the
    query language or English) to canonical English month tokens so
    cross-language answers compare equal. Idempotent.
    """
    text = raw.casefold()
    while True:
        stripped = _ENUMERATOR_RE.sub("", text, count=1)
        if stripped == text:
            break
        text = stripped
    text = _strip_marks(text)
    tokens = text.split()
    if level == "L1":
        primary = language.split("-")[0].casefold()
        table = dict(MONTH_TABLES.get(primary, {}))
        table.update(MONTH_TABLES["en"])
        tokens = [
            CANONICAL_MONTHS[table[tok] - 1] if tok in table else tok for tok in tokens
        ]
    return " ".join(tokens)
