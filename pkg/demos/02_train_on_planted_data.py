"""Train on planted-structure data and look at what the attention learned.

The generator knows each item's true aspect quality, so after training we
can compare the per-aspect attention summary for one item with the truth.
"""
import numpy as np

from aph.corpus import split_dataset
from aph.model import HyperParams
from aph.synthetic import planted_dataset
from aph.train_eval import TrainConfig, run_experiment

records, quads, truth = planted_dataset(n_users=200, n_items=60, n_aspects=10, ratings_per_user=10, seed=0)
split = split_dataset(records, 0.2, 0.08, seed=0)
print(len(records), "ratings,", len(quads), "quadruples")

# %% fit
model, report = run_experiment(records, quads, split, HyperParams(), TrainConfig(epochs=8, gamma=0.01))
print("test mse %.4f  ndcg@10 %.4f" % (report.mse, report.ndcg_at_k))
for row in report.history:
    print(row["epoch"], round(row["train_loss"], 4), round(row["val_loss"], 4))

# %% attention summary for the item with most reviews
counts = np.bincount([int(r.item_id[1:]) for r in split.train])
item = f"i{counts.argmax()}"
dump = model.explain(item)
print(item, dump["num_edges"], "edges")
for a in sorted(dump["aspects"], key=lambda a: -a["aspect_weight"]):
    q = truth.quality[int(item[1:]), int(a["aspect"][1:])]
    print(f"  {a['aspect']:>4} weight {a['aspect_weight']:.3f}  "
          f"sentiment {a['performance']:+.2f}  true quality {q:+.2f}")
