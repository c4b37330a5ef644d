"""Scoring pairwise relatedness judgments into semantic-change verdicts.

Thirty judgments per word on a 1-4 relatedness scale become a graded change
score in [0, 1] and a binary changed/unchanged verdict (at least two
"Distinct" judgments). A ranking of words by graded score is then compared
to a gold ranking with Spearman's rho.
"""

from quantitize import (
    PairJudgment,
    rank_eval,
    score_semantic_change,
    semantic_edit_distance,
)

judgments = {
    # a word whose senses drifted: plenty of unrelated pairings
    "plane": [PairJudgment("plane", r)
              for r in [1] * 12 + [2] * 8 + [3] * 6 + [4] * 4],
    # a stable word: overwhelmingly judged the same sense
    "graft": [PairJudgment("graft", r) for r in [4] * 27 + [3] * 2 + [1]],
    # borderline: exactly two unrelated judgments trip the binary threshold
    "record": [PairJudgment("record", r) for r in [4] * 28 + [1] * 2],
}

scores = score_semantic_change(judgments)
for word, s in scores.items():
    verdict = "changed" if s.binary else "stable"
    print(f"{word:>8}: graded={s.graded:.3f} -> {verdict}")

gold = {"plane": 0.88, "graft": 0.10, "record": 0.35}
rho = rank_eval({w: s.graded for w, s in scores.items()}, gold)
print(f"\nrank agreement with gold scores: rho = {rho:.2f}")

# Sentence-level rewrite comparison: classify each aligned sentence pair and
# sum the non-Close classifications into an edit distance.
classes = ["Close"] * 25 + ["Addition"] * 25 + ["Deletion"] * 25 \
    + ["Substitution"] * 25
result = semantic_edit_distance(classes)
print(f"\nedit distance over {sum(result['counts'].values())} sentence "
      f"pairs: {result['distance']}")
