"""Regenerate tests/fixtures/bleu_reference.json with sacrebleu as the reference scorer.

Run manually; the test suite only reads the frozen JSON (sacrebleu is not a
runtime or test dependency).
"""

import json
from pathlib import Path

import sacrebleu

CORPORA = {
    "identical": (["the cat sat on the mat", "a b c d e"], ["the cat sat on the mat", "a b c d e"]),
    "clipping": (["the the the the the the the"], ["the cat is on the mat"]),
    "clipping_zero_higher": (["the the the the"], ["the cat sat down"]),
    "brevity_penalty": (["the cat sat on"], ["the cat sat on the mat today"]),
    "longer_candidate": (["the cat sat on the mat again and again"], ["the cat sat on the mat"]),
    "zero_unigram": (["x y z w"], ["a b c d"]),
    "zero_fourgram": (["a b c x d e f"], ["a b c y d e f"]),
    "empty_candidate": ([""], ["a b c d"]),
    "mixed_corpus": (
        ["it is a guide to action which ensures that the military always obeys the commands of the party",
         "he read the book because he was interested in world history",
         "the quick brown fox"],
        ["it is a guide to action that ensures that the military will forever heed party commands",
         "he was interested in world history because he read the book",
         "the quick brown fox jumps over the lazy dog"]),
    "case_sensitive": (["The Cat Sat On The Mat"], ["the cat sat on the mat"]),
    "punctuation_tokens": (["hello , world ! how are you ?"], ["hello , world ! how are you doing ?"]),
    "clipped_nonzero": (["the the cat sat on the mat"], ["the cat sat on the mat"]),
    "corpus_level_lengths": (["a b c d e f g h", "p q r"], ["a b c d e f g", "p q r s t u"]),
    "many_lines": (
        [" ".join(str((i + j) % 9) for j in range(6 + i % 5)) for i in range(12)],
        [" ".join(str((i + j) % 9) if j % 5 else "z" for j in range(6 + i % 4)) for i in range(12)]),
}


def main():
    out = {}
    for name, (hyps, refs) in CORPORA.items():
        b = sacrebleu.corpus_bleu(hyps, [refs], tokenize="none", smooth_method="none", force=True,
                                  lowercase=False)
        out[name] = {"candidates": hyps, "references": refs, "bleu": b.score,
                     "sys_len": b.sys_len, "ref_len": b.ref_len,
                     "precisions": [p / 100 for p in b.precisions], "bp": b.bp}
    path = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "bleu_reference.json"
    path.write_text(json.dumps(out, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    for name, rec in out.items():
        print(f"{name:24s} {rec['bleu']:.4f}")


if __name__ == "__main__":
    main()
