"""
Scoring captions
================
"""
from mvgpt import metrics

corpus = [
    ("the cook adds the salt", ["the cook adds the salt", "salt goes in now"]),
    ("stir the pot", ["keep stirring the pot slowly"]),
    ("the oven is hot", ["preheat the oven"]),
]

for name, value in metrics.report(corpus).items():
    print(f"{name:8s}{value:.4f}")

# Echoing the first reference back scores 1 for BLEU and ROUGE-L. CIDEr stays
# under its ceiling of 10: "preheat the oven" has no 4-grams, so that order adds 0.
perfect = [(refs[0], refs[:1]) for _, refs in corpus]
print(metrics.report(perfect))
print(metrics.report(perfect[:2])["CIDEr"])

# ROUGE-L by hand: LCS("a b c", "a c d") = 2, so P = R = 2/3.
print(metrics.rouge_l_single("a b c".split(), ["a c d".split()]))
