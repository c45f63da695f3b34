"""
Does the model look at the video?
=================================

The synthetic caption names the colour of a patch that only exists in the
pixels.  Train the same captioner twice, once with real frames and once
with blank ones, and compare caption-word accuracy on held-out clips.
Roughly a minute in total.
"""
from mvgpt import MVGPT, ModelConfig, TrainConfig, datapipe
from mvgpt.tokenizer import BOS2, CLS1, build_vocab, decode
from mvgpt.trainer import train

train_set, c1 = datapipe.synth_dataset(100, 1024)
test_set, c2 = datapipe.synth_dataset(10_000, 128)
vocab = build_vocab(c1 + c2)


def accuracy(use_visual):
    cfg = ModelConfig(vocab_size=len(vocab), d_model=32, heads=2, text_layers=1, spatial_layers=1,
                      temporal_layers=1, fusion_layers=1, decoder_layers=1, frame_height=16, frame_width=16,
                      tubelet_h=8, tubelet_w=8, tubelet_t=2, max_frames=8, max_text_len=16, max_gen_len=16,
                      use_visual=use_visual)
    model = MVGPT(cfg)
    tc = TrainConfig(total_steps=800, warmup_steps=80, batch_size=16, lr_peak=1e-3)
    train(model, datapipe.to_examples(train_set, vocab, target="caption"), tc, "caption")
    hits = 0
    for t in test_set:
        ids = [CLS1] + [vocab.id(w) for w in t.U.split()]
        said = decode(vocab, model.generate(t.frames, ids, BOS2, greedy=True, max_len=8)).split()
        hits += said[-1:] == t.caption.split()[-1:]
    return hits / len(test_set)


print("with frames :", accuracy(True))
print("blank frames:", accuracy(False), "(four words, so chance is 0.25)")
