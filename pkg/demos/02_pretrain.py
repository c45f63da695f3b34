"""
Bidirectional pretraining on a toy set
======================================

Trains a small model on eight synthetic triplets with the full objective
(forward and backward generation plus decoder-side masked LM), then asks it
to continue and to back-fill the text.  Takes about half a minute.
"""
import numpy as np

from mvgpt import MVGPT, ModelConfig, TrainConfig, datapipe
from mvgpt.tokenizer import BOS1, BOS2, CLS1, CLS2, build_vocab, decode
from mvgpt.trainer import train

triplets, corpus = datapipe.synth_dataset(seed=0, n_triplets=8)
vocab = build_vocab(corpus)
examples = datapipe.to_examples(triplets, vocab)

cfg = ModelConfig(vocab_size=len(vocab), d_model=32, heads=2, text_layers=1, spatial_layers=1,
                  temporal_layers=1, fusion_layers=1, decoder_layers=1, frame_height=16, frame_width=16,
                  tubelet_h=8, tubelet_w=8, tubelet_t=2, max_frames=8, max_text_len=16, max_gen_len=16)
model = MVGPT(cfg)
tc = TrainConfig(total_steps=600, warmup_steps=100, batch_size=8, lr_peak=3e-3)


def show(step, rec):
    if step % 100 == 0:
        print(f"step {step:4d}  lr {rec['lr']:.2e}  fg {rec['fg']:.3f}  bg {rec['bg']:.3f}  "
              f"mlm {rec['mlm_u'] + rec['mlm_w']:.3f}")


train(model, examples, tc, callbacks=[show])

# Forward: present text in, future utterance out.
# Backward: future utterance in, present text out.
for e in examples[:3]:
    fwd = model.generate(e.frames, [CLS1] + e.u, BOS1, greedy=True)
    bwd = model.generate(e.frames, [CLS2] + e.w, BOS2, greedy=True)
    print("U  :", decode(vocab, e.u))
    print(" ->", decode(vocab, fwd))
    print("W  :", decode(vocab, e.w))
    print(" <-", decode(vocab, bwd))

# Beam search with the default width.
e = examples[0]
print("beam 5:", decode(vocab, model.generate(e.frames, [CLS1] + e.u, BOS1, beam=5)))
print("params:", sum(int(np.prod(p.shape)) for p in model.parameters()))
