"""Walkthrough: serving through the wire protocol instead of in-process.

Starts the bridge server in this process (it normally runs elsewhere,
wrapping a real pretrained model), connects the engine's remote backend to
it, and shows that serving behaves identically to the in-process path.

Requires the companion ``kvbridge`` package (see bridge/ in this repo).
"""

import numpy as np

import superprompt as sp

try:
    from kvbridge import BridgeServer, ReferenceHost
except ImportError:
    raise SystemExit("install the bridge first: pip install -e bridge/")

server = BridgeServer(ReferenceHost("rotary")).start()
print(f"bridge serving on 127.0.0.1:{server.port}")

remote = sp.make_backend(f"remote:127.0.0.1:{server.port}")
local = sp.make_backend("reference-rotary")
print("remote model:", remote.model_id)
print("shape over the wire:", remote.shape)

rng = np.random.default_rng(0)
preamble = sp.TokenSegment("p", tuple(rng.integers(1, 256, 5)), "preamble")
docs = [sp.TokenSegment(f"d{i}", tuple(rng.integers(1, 256, n)), "document")
        for i, n in enumerate((6, 4, 8))]
query = sp.TokenSegment("q", tuple(rng.integers(1, 256, 4)), "query")
post = sp.TokenSegment("t", tuple(rng.integers(1, 256, 2)), "postamble")

plan = sp.ServingPlan(top_k=1, max_new_tokens=6)
res_remote = sp.serve(remote, sp.preprocess(remote, preamble, docs), query, post, plan)
res_local = sp.serve(local, sp.preprocess(local, preamble, docs), query, post, plan)

print("\nresponse over the wire :", res_remote.response_tokens)
print("response in-process    :", res_local.response_tokens)
print("identical              :", res_remote.response_tokens == res_local.response_tokens)
print("max logit deviation    :",
      float(np.abs(res_remote.sample_logits - res_local.sample_logits).max()))
print("\nKV state never crossed the wire: the engine holds only cache ids;")
print("tensors live server-side and are freed when the connection closes.")

remote.close()
server.close()
