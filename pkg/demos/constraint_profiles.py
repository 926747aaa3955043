"""Walk through constraint profiling on the templated corpora.

Mines domain markers by salience, profiles a few sentences, then shows
how the positive miner groups sentences that share a profile.
"""
import numpy as np

from coopdct import synthetic
from coopdct.constraints import FAMILIES, mine_attribute_markers, profile_corpus
from coopdct.corpus import Domain, encode_corpus, vocabulary_from_sentences
from coopdct.experiment import SKEWED
from coopdct.mining import MiningStats, ProfileIndex, mining_summary, sample_contrastive_batch

src, tgt = synthetic.generate_corpora(SKEWED, seed=0)
print(f"{len(src)} source and {len(tgt)} target sentences")
print("source:", src[0])
print("target:", tgt[0])

# n-grams at least 15x more frequent (smoothed) in one domain become its markers
markers = mine_attribute_markers(src, tgt)
for dom in (Domain.SOURCE, Domain.TARGET):
    unigrams = sorted(" ".join(g) for g in markers.markers[dom] if len(g) == 1)
    print(f"\n{dom.name.lower()} unigram markers: {', '.join(unigrams)}")
    print(f"  ({len(markers.markers[dom])} marker n-grams of order <= {markers.max_n})")

vocab = vocabulary_from_sentences(src + tgt, max_vocab=300)
corpora = {Domain.SOURCE: encode_corpus(src, vocab, Domain.SOURCE),
           Domain.TARGET: encode_corpus(tgt, vocab, Domain.TARGET)}
lex = synthetic.lexicons()
profiles = {d: profile_corpus(corpora[d], lex, markers) for d in corpora}

print("\nprofiles of the first three source sentences:")
print("  " + " ".join(f"{f:>12}" for f in FAMILIES))
for seq, prof in zip(corpora[Domain.SOURCE][:3], profiles[Domain.SOURCE]):
    print("  " + " ".join(f"{getattr(prof, f):>12}" for f in FAMILIES), " <-", seq.raw_text)

for dom in corpora:
    p = profiles[dom]
    print(f"{dom.name.lower()}: long {np.mean([x.length for x in p]):.2f}, "
          f"pronoun {np.mean([x.pronoun for x in p]):.2f}")

index = ProfileIndex(profiles)
stats = MiningStats()
batch = sample_contrastive_batch(index, corpora, 64, 2, np.random.default_rng(0), stats=stats)
a = batch.anchors[0]
text = lambda ref: corpora[ref[0]][ref[1]].raw_text
print("\nanchor:  ", text(batch.refs[a]))
for j in batch.positives[0]:
    print("positive:", text(batch.refs[j]))
print()
print(mining_summary(index, stats))
