"""One far-away server and requests cycling through a cluster.

Without filtering, a discretized algorithm can keep paying on requests it
already serves. The filter forwards only requests the current measure does not
serve, so the total cost stops growing once the servers settle in the cluster.
"""

from kserver import FractionalAlgorithm
from kserver.discretize import Filtered, pipeline
from kserver.harness import generate

k = 2
trace = generate("far-point", {"k": k, "T": 400})
filt = Filtered(pipeline(FractionalAlgorithm(trace.space, k, trace.C0)))
for t, r in enumerate(trace.requests, 1):
    filt.serve(r)
    if t in (10, 50, 100, 200, 400):
        print(f"after {t:>3} requests: cost {float(filt.cost):8.3f}, forwarded {len(filt.forwarded)}")
