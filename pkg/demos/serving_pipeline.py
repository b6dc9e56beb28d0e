"""Walkthrough: the full serve pipeline on the in-process reference model.

Preprocess a tiny corpus offline, then answer a query: the query fans out
across every document path in one batched call, paths are scored with the
Bayesian saliency, the losers are pruned, and the response is decoded from
the surviving caches.
"""

from superprompt import (
    CacheStore,
    ServingPlan,
    TokenSegment,
    encode_text,
    make_backend,
    preprocess,
    serve,
)

backend = make_backend("reference-alibi")

corpus = [
    "The Crossing was filmed in British Columbia, Canada.",
    "Crossing South is a travel show created in San Diego.",
    "Crossing East is a documentary series for public radio.",
]
preamble = TokenSegment("p", encode_text("Answer using the documents.\n"), "preamble")
documents = [
    TokenSegment(f"d{i}", encode_text(text + "\n"), "document")
    for i, text in enumerate(corpus)
]
query = TokenSegment("q", encode_text("Q: where was The Crossing filmed?\n"), "query")
postamble = TokenSegment("t", encode_text("A:"), "postamble")

store = CacheStore("/tmp/superprompt-demo-cache")
prep = preprocess(backend, preamble, documents, store=store)
print(f"preprocess: {prep.backend_calls} backend calls "
      f"(re-run would be 0: caches are content-addressed on disk)")

plan = ServingPlan(saliency="bayesian", top_k=1, max_new_tokens=8)
result = serve(backend, prep, query, postamble, plan)

print("\nper-path scores (nats/token, higher = more salient):")
for s in result.scores:
    print(f"  path {s.path}: query {s.query_term:+.3f}  prior {s.prior_term:+.3f}"
          f"  posterior {s.posterior:.3f}")
print("\nselected paths:", result.selected)
print("response tokens:", result.response_tokens)
print("backend calls  :", result.backend_calls,
      "(1 batched query eval + 1 postamble + 1 per decoded token)")
print("\nonline-stage ledger:")
for entry in result.ledger:
    if entry["stage"] in ("query", "postamble") or entry["stage"] == "decode":
        print(f"  {entry['stage']:10s} new={entry['n_new']:3d} "
              f"branches={entry['branches']} macs={entry['macs']:.3g}")
print(f"cycles (parallel-aware): {result.cycles:.3g}")

# the reference model is random-weight, so the text is noise; the point of
# the demo is the mechanics, which are exact and testable
