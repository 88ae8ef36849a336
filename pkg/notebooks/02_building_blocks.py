# %% [markdown]
# # Building blocks
#
# Small, self-contained looks at the pieces the detector is made of:
# path-component embeddings, out-of-vocabulary inference, the graph-LSTM
# losses, and the natural-breaks score with its threshold.

# %%
import numpy as np

from sigl import autoencoder as ae
from sigl import synth
from sigl.audit import EntityKind
from sigl.detect import classify_and_rank, compute_threshold
from sigl.featurize import Featurizer, tokenize_name
from sigl.graph import build_sig
from sigl.jenks import jenks_all, max_zone_avg, select_k

# %% [markdown]
# ## Tokens
#
# Paths split into components; random-looking names collapse to one sentinel
# token, and sockets become octets plus a port class.

# %%
for name in ("c:/windows/system32/kernel32.dll",
             "c:/users/user/appdata/local/temp/is-4f9a1c2b.tmp"):
    print(name, "->", tokenize_name(name))
print(tokenize_name("185.220.101.4:4444", EntityKind.SOCKET))

# %% [markdown]
# ## Embeddings
#
# Fit on a few graphs, then embed a graph that contains unseen names: those
# components are inferred from their walk contexts.

# %%
template = synth.TEMPLATES["ziplite"]
graphs = [build_sig(synth.gen_benign_trace(template, s).events) for s in range(5)]
featurizer = Featurizer.fit(graphs, dim=16, epochs=5, walks_per_node=5, seed=0)
print(f"{len(featurizer.vocab)} tokens")
odd = synth.gen_malicious_trace(template, 7, "embed", "full")
odd_graph = build_sig(odd.events)
emb = featurizer.embed_graph(odd_graph)
norms = [float(np.linalg.norm(v)) for v in emb.values()]
print(f"{len(emb)} nodes embedded, norms in [{min(norms):.2f}, {max(norms):.2f}]")

# %% [markdown]
# ## Reconstruction losses
#
# A freshly initialized model gives every process some loss; training on the
# benign graphs drives those down, and the odd graph stands out.

# %%
data = [(g, featurizer.embed_graph(g)) for g in graphs]
model = ae.init_model(16, 8, seed=0)
result = ae.train(model, data, epochs=80, batch_size=5, learning_rate=5e-3, seed=0)
print("epoch losses:", [f"{x:.2e}" for x in result.train_loss[::20]])
losses = ae.node_losses(result.model, odd_graph, emb)
top = sorted(losses.items(), key=lambda kv: -kv[1])[:3]
for node, loss in top:
    print(f"  {loss:.3e} {node.name}")

# %% [markdown]
# ## Natural breaks and the threshold
#
# A graph's score is the mean of the top natural-breaks zone of its process
# losses.  The threshold sits three standard deviations above the mean
# validation score.

# %%
values = [1, 2, 3, 10, 11, 12, 40]
for p in jenks_all(values, 4):
    print(f"k={p.k} gvf={p.gvf:.3f} classes={p.classes}")
print("chosen k:", select_k(values), "score:", max_zone_avg(values))

val = [list(ae.node_losses(result.model, g, e).values()) for g, e in data]
threshold = compute_threshold(val)
report = classify_and_rank(losses, threshold, graph_id="odd")
print(report.verdict, f"score {report.score:.3e} vs threshold {threshold.value:.3e}")
