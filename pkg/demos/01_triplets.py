"""
Turning a timed transcript into training triplets
=================================================
"""

# Every utterance except the last seeds one triplet. The present clip grows
# backwards from the seed until it covers five seconds or runs out of room.
from mvgpt import datapipe
from mvgpt.datapipe import TimedUtterance

transcript = [
    TimedUtterance("Crack two eggs into a bowl.", 0.0, 2.0),
    TimedUtterance("Whisk them until smooth.", 2.0, 4.5),
    TimedUtterance("Heat butter in the pan.", 4.5, 9.0),
    TimedUtterance("Pour the eggs in slowly.", 9.0, 10.0),
]

for t in datapipe.extract_triplets(transcript, fps=1.0, tubelet_t=2):
    print(f"{t.span[0]:>4}-{t.span[1]:<4} U={t.U!r}")
    print(f"          W={t.W!r}  frames at {t.frame_times}")

# The first two triplets are short because nothing precedes them.
# Pass drop_short=True to throw such head clips away.
print(len(datapipe.extract_triplets(transcript, drop_short=True)), "triplet(s) kept with drop_short")

# Synthetic clips: one coloured patch per clip, and the future utterance names the colour.
triplets, corpus = datapipe.synth_dataset(seed=0, n_triplets=3)
for t in triplets:
    print(t.id, t.frames.shape, "->", t.W, "|", t.caption)
