import re

from pydantic import BaseModel, ConfigDict

from project.errors import ChunkingError

Token = str

_TOKEN_PATTERN = re.compile(r"[^\W_]+")

_SENTENCE_BOUNDARY = re.compile(r"(?<=[.?!])\s+")


class Sentence(BaseModel):
    """
    A sentence of a passage body together with its token count under tokenize.
    """

    model_config = ConfigDict(frozen=True)

    text: str
    token_count: int

    @classmethod
    def of(cls, text: str) -> "Sentence":
        return cls(text=text, token_count=len(tokenize(text)))


def tokenize(text: str) -> list[Token]:
    """
    Lowercases the text and returns its maximal alphanumeric runs.

    Any run of characters that are not letters or digits separates tokens,
    so "Friedreich's ataxia" becomes ["friedreich", "s", "ataxia"].

    Args:
        text (str): Raw text, possibly empty.

    Returns:
        list[Token]: Non-empty, whitespace-free lowercase tokens in text order.
    """
    return _TOKEN_PATTERN.findall(text.lower())


def split_sentences(text: str) -> list[Sentence]:
    """
    Splits text after '.', '?' or '!' when the mark is followed by whitespace.

    Abbreviations are not special-cased. Splits only happen at whitespace so a
    token never straddles two sentences, which means the sentence tokens
    concatenate back to tokenize(text).

    Args:
        text (str): Passage body.

    Returns:
        list[Sentence]: Trimmed, non-empty sentences in order.
    """
    pieces = (piece.strip() for piece in _SENTENCE_BOUNDARY.split(text))
    return [Sentence.of(piece) for piece in pieces if piece]


def chunk_passage(title: str, body: str, max_tokens: int) -> list[tuple[str, str]]:
    """
    Greedily packs consecutive body sentences into chunks that fit next to the title.

    A chunk of whole sentences never exceeds max_tokens once the title tokens
    are counted. A sentence that is too long on its own becomes a chunk by
    itself, cut down to the first tokens that fit.

    Args:
        title (str): Title repeated in front of every chunk; may be empty.
        body (str): Text to split.
        max_tokens (int): Token budget for title plus chunk.

    Returns:
        list[tuple[str, str]]: (title, chunk_text) pairs in body order.

    Raises:
        ChunkingError: If max_tokens leaves no room after the title.
    """
    if max_tokens < 1:
        raise ChunkingError(f"max_tokens must be positive, got {max_tokens}")
    title_len = len(tokenize(title))
    if max_tokens <= title_len:
        raise ChunkingError(
            f"max_tokens={max_tokens} leaves no room for content after a "
            f"{title_len}-token title"
        )
    budget = max_tokens - title_len

    chunks: list[tuple[str, str]] = []
    current: list[str] = []
    current_len = 0

    def flush() -> None:
        nonlocal current, current_len
        if current:
            chunks.append((title, " ".join(current)))
        current = []
        current_len = 0

    for sentence in split_sentences(body):
        if sentence.token_count > budget:
            flush()
            truncated = tokenize(sentence.text)[:budget]
            chunks.append((title, " ".join(truncated)))
        elif current_len + sentence.token_count > budget:
            flush()
            current.append(sentence.text)
            current_len = sentence.token_count
        else:
            current.append(sentence.text)
            current_len += sentence.token_count
    flush()
    return chunks
