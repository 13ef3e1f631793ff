"""
Versioned instruction templates for the synthetic multimodal corpus.

Templates are immutable; the corpus generators render them instead of
building strings inline, and every rendered question and answer is plain
text that the byte-level vocabulary encodes without unknown ids.
"""

from __future__ import annotations

from dataclasses import dataclass, field

# ── Byte budget ──────────────────────────────────────────────────
# Text tokens are UTF-8 bytes, so the token count of a string is its byte length.


def estimate_tokens(text: str) -> int:
    return len(text.encode("utf-8"))


def truncate_to_tokens(text: str, max_tokens: int) -> str:
    """Cut ``text`` to at most ``max_tokens`` bytes, at a word boundary when one is close."""
    if estimate_tokens(text) <= max_tokens:
        return text
    raw = text.encode("utf-8")
    cut = raw[:max_tokens].decode("utf-8", errors="ignore")
    last_space = cut.rfind(" ")
    if last_space > max_tokens * 0.8:
        cut = cut[:last_space]
    return cut


# ── Template ─────────────────────────────────────────────────────


@dataclass(frozen=True)
class PromptTemplate:
    """
    One question/answer turn.

    Attributes:
        name:            Registry key.
        version:         Bumped whenever the rendered text changes.
        question:        Question template with {variable} placeholders.
        answer:          Answer template; empty for turns whose answer is visual tokens.
        max_tokens:      Byte budget for the rendered question.
        tags:            Free-form categorization.
    """

    name: str
    version: str
    question: str
    answer: str = ""
    max_tokens: int = 96
    tags: tuple[str, ...] = field(default_factory=tuple)

    def render(self, **kwargs: str) -> tuple[str, str]:
        question = truncate_to_tokens(self.question.format(**kwargs), self.max_tokens)
        return question, self.answer.format(**kwargs)


# ── Caption grammar ──────────────────────────────────────────────

CAPTION = PromptTemplate(
    name="caption",
    version="1.0.0",
    question="{size} {color} {shape} on {background}",
    tags=("caption",),
)

DESCRIBE_SCENE = PromptTemplate(
    name="describe_scene",
    version="1.0.0",
    question="describe the image.",
    answer="a {caption}.",
    tags=("vqa", "caption"),
)

ASK_COLOR = PromptTemplate(
    name="ask_color",
    version="1.1.0",
    question="what color is the {shape}?",
    answer="{color}.",
    tags=("vqa", "color"),
)

ASK_SHAPE = PromptTemplate(
    name="ask_shape",
    version="1.0.0",
    question="what shape is shown?",
    answer="a {shape}.",
    tags=("vqa", "shape"),
)

ASK_BACKGROUND = PromptTemplate(
    name="ask_background",
    version="1.0.0",
    question="what is the background color?",
    answer="{background}.",
    tags=("vqa", "background"),
)

GENERATE_IMAGE = PromptTemplate(
    name="generate_image",
    version="1.0.0",
    question="draw a {caption}",
    tags=("text-to-image",),
)

STATEMENT = PromptTemplate(
    name="statement",
    version="1.0.0",
    question="the {shape} is {size} and {color}, on a {background} background.",
    tags=("text",),
)


# ── Rendering Helpers ────────────────────────────────────────────


def render_caption(size: str, color: str, shape: str, background: str) -> str:
    question, _ = CAPTION.render(size=size, color=color, shape=shape, background=background)
    return question


# ── Prompt Registry ──────────────────────────────────────────────

PROMPT_REGISTRY: dict[str, PromptTemplate] = {
    t.name: t
    for t in (CAPTION, DESCRIBE_SCENE, ASK_COLOR, ASK_SHAPE, ASK_BACKGROUND, GENERATE_IMAGE, STATEMENT)
}

VQA_TEMPLATES: tuple[str, ...] = tuple(
    name for name, t in PROMPT_REGISTRY.items() if "vqa" in t.tags
)


def get_prompt(name: str) -> PromptTemplate:
    """Retrieve a template by name. Raises KeyError if not found."""
    if name not in PROMPT_REGISTRY:
        raise KeyError(f"Prompt '{name}' not found. Available: {list(PROMPT_REGISTRY.keys())}")
    return PROMPT_REGISTRY[name]
