"""Social posterior collapse on a small merge dataset.

Trains a VAE, a CVAE and a social-CVAE on the same scenes (one seed each)
and compares how much attention the target pays to other agents (AR), how
strongly its prediction depends on them (tau_g, looADE) and how accurate the
best of six samples is. Takes about three minutes on one core. Run:

    python3 demos/collapse_in_miniature.py [seed]
"""

import sys

from socialcvae import world
from socialcvae.evaluation import evaluate_model
from socialcvae.model import VariantConfig
from socialcvae.training import TrainConfig, train

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
scenes = world.generate("merge", 250, 100)
train_set, held_out = scenes[:200], scenes[200:]

print(f"{'variant':12s} {'AR %':>6s} {'tau_g':>7s} {'looADE':>7s} {'minFDE6':>8s}")
for variant in ("vae", "cvae", "social-cvae"):
    cfg = VariantConfig.for_mode("driving", variant=variant)
    result = train(train_set, cfg, TrainConfig(epochs=100, batch_size=10, seed=seed), validation=held_out)
    row, _ = evaluate_model(result.model, held_out, ks=(6,))
    print(f"{variant:12s} {row.ar:6.1f} {row.tau_g:7.4f} {row.loo_ade:7.4f} {row.min_fde[6]:8.3f}")
