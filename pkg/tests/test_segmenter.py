import numpy as np
import pytest

from seqdistill.records import TokenSpan
from seqdistill.segmenter import (
    AlignmentError,
    SegmentationError,
    SentenceSpan,
    assign_tokens,
    segment,
)


def spans_tuple(spans):
    return [(s.char_start, s.char_end) for s in spans]


def check_partition(text, spans):
    """Naive character-walk oracle: spans are ordered, non-empty,
    non-overlapping and cover every character exactly once."""
    assert spans, "no spans returned"
    pos = 0
    for i, span in enumerate(spans):
        assert span.index == i
        assert span.char_start == pos
        assert span.char_end > span.char_start
        pos = span.char_end
    assert pos == len(text)


def char_tokens(text, logprob=-0.3):
    return [TokenSpan(text=c, logprob=logprob, char_start=i, char_end=i + 1)
            for i, c in enumerate(text)]


def chunk_tokens(text, rng):
    """Greedy pseudo-subword tokenization: chunks of 1-3 characters."""
    tokens = []
    i = 0
    while i < len(text):
        size = min(int(rng.integers(1, 4)), len(text) - i)
        tokens.append(TokenSpan(text=text[i:i + size], logprob=-0.2,
                                char_start=i, char_end=i + size))
        i += size
    return tokens


class TestSegment:
    def test_two_short_sentences_before_merging(self):
        assert spans_tuple(segment("A. B.", min_chars=1)) == [(0, 3), (3, 5)]

    def test_short_fragments_merge_forward(self):
        assert spans_tuple(segment("A. B.", min_chars=12)) == [(0, 5)]

    def test_no_punctuation_single_span(self):
        text = "this text has no terminal punctuation at all"
        assert spans_tuple(segment(text)) == [(0, len(text))]

    def test_empty_text_is_an_error(self):
        with pytest.raises(SegmentationError):
            segment("")

    def test_decimal_points_do_not_split(self):
        text = "The value 3.14159 appears mid-sentence. And again here."
        spans = segment(text, min_chars=5)
        assert len(spans) == 2
        assert text[spans[0].char_start:spans[0].char_end].startswith("The value 3.14159")

    def test_boundary_requires_whitespace_after_punctuation(self):
        assert spans_tuple(segment("a.b.c.d", min_chars=1)) == [(0, 7)]

    def test_blank_line_is_a_boundary(self):
        text = "first paragraph without punct\n\nsecond paragraph here"
        spans = segment(text, min_chars=5)
        assert len(spans) == 2
        assert text[spans[1].char_start:spans[1].char_end] == "second paragraph here"

    def test_cjk_terminal_punctuation(self):
        text = "一二三四五六七八九十一二。 十一二三四五六七八九十二"
        spans = segment(text, min_chars=4)
        assert len(spans) == 2

    def test_fenced_code_block_is_opaque(self):
        code = "```\nx = 1. if x: pass\ny = 2.\n```"
        text = "Look at this example snippet. " + code + " And a trailing remark."
        spans = segment(text, min_chars=5)
        covered = [text[s.char_start:s.char_end] for s in spans]
        assert any(c.strip().startswith("```") and c.strip().endswith("```") for c in covered)
        check_partition(text, spans)

    def test_whitespace_after_punct_stays_with_left_span(self):
        spans = segment("Alpha beta gamma.   Delta epsilon zeta.", min_chars=5)
        assert spans[0].char_end == spans[1].char_start
        assert spans_tuple(spans)[0] == (0, 20)

    def test_trailing_fragment_merges_backward(self):
        text = "A rather long first sentence. B."
        spans = segment(text, min_chars=12)
        assert spans_tuple(spans) == [(0, len(text))]

    def test_pure_function(self):
        text = "One sentence here. Another sentence there! A third? Yes."
        assert segment(text) == segment(text)

    def test_random_texts_always_partition(self):
        rng = np.random.default_rng(1234)
        alphabet = list("abcdef ghij.!?;\n。！？`123. ")
        degenerates = [
            "x",
            "no punctuation whatsoever",
            "...",
            ".!?;.!?;",
            " . . . ",
            "\n\n\n",
            "a\n\nb\n\nc",
            "``` fenced ```",
            "```unclosed fence. with sentences. inside",
            "。。。。",
            "ab. " * 50,
        ]
        texts = list(degenerates)
        for _ in range(1000 - len(degenerates)):
            n = int(rng.integers(1, 400))
            texts.append("".join(rng.choice(alphabet, size=n)))
        for text in texts:
            min_chars = int(rng.integers(1, 30))
            spans = segment(text, min_chars=min_chars)
            check_partition(text, spans)


class TestAssignTokens:
    def test_tokens_at_boundaries_split_there(self):
        text = "Alpha beta gamma. Delta epsilon."
        spans = segment(text, min_chars=5)
        tokens = char_tokens(text)
        ranges = assign_tokens(spans, tokens)
        assert ranges == [(0, spans[0].char_end), (spans[0].char_end, len(text))]

    def test_straddling_token_goes_to_earlier_sentence(self):
        spans = [SentenceSpan(0, 0, 10), SentenceSpan(1, 10, 20)]
        tokens = [
            TokenSpan(text="x" * 8, logprob=-0.1, char_start=0, char_end=8),
            TokenSpan(text="x" * 4, logprob=-0.1, char_start=8, char_end=12),
            TokenSpan(text="x" * 8, logprob=-0.1, char_start=12, char_end=20),
        ]
        ranges = assign_tokens(spans, tokens)
        assert ranges == [(0, 2), (2, 3)]

    def test_dual_tokenizations_both_cover(self):
        rng = np.random.default_rng(7)
        text = "First span of words here. Second span follows! Third one too? Sure."
        spans = segment(text, min_chars=5)
        for tokens in (char_tokens(text), chunk_tokens(text, rng)):
            ranges = assign_tokens(spans, tokens)
            assert len(ranges) == len(spans)
            flat = [i for lo, hi in ranges for i in range(lo, hi)]
            assert flat == list(range(len(tokens)))

    def test_token_beyond_text_is_alignment_error(self):
        spans = [SentenceSpan(0, 0, 5)]
        tokens = [TokenSpan(text="abc", logprob=-0.1, char_start=4, char_end=7)]
        with pytest.raises(AlignmentError):
            assign_tokens(spans, tokens)

    def test_assignment_total_on_random_texts(self):
        rng = np.random.default_rng(99)
        alphabet = list("abc .!?\n")
        for _ in range(200):
            n = int(rng.integers(2, 200))
            text = "".join(rng.choice(alphabet, size=n))
            spans = segment(text, min_chars=int(rng.integers(1, 15)))
            for tokens in (char_tokens(text), chunk_tokens(text, rng)):
                ranges = assign_tokens(spans, tokens)
                flat = [i for lo, hi in ranges for i in range(lo, hi)]
                assert flat == list(range(len(tokens)))
