"""Drive the interactive editing loop: propose, inspect, confirm or revert.

Uses the checkpoint-free stroke-based stub backend, so this runs instantly.
The same flow is exposed over HTTP by `paintflow serve` and consumed by the
browser client in frontend/.
"""

from pathlib import Path

import numpy as np

from paintflow.image import BinaryMask, RasterImage, write_image_png
from paintflow.service import EditRequest, EditService, StubInference

OUT = Path(__file__).parent / "out"
SESSIONS = OUT / "05_sessions"

service = EditService(StubInference(), root=SESSIONS)

# start from scratch: a blank white canvas
sid = service.create_session(shape=(64, 64))
print(f"session {sid}: blank 64x64 canvas")

# edit 1: paint a sky-ish band across the top
mask = np.zeros((64, 64), dtype=np.uint8)
mask[:28] = 1
req = EditRequest(
    mask=BinaryMask(mask),
    sketch=BinaryMask(np.zeros((64, 64), dtype=np.uint8)),
    prompt="a calm evening sky",
    seed=1,
)
service.submit_edit(sid, req)
print("proposed sky band; current canvas untouched:",
      bool(service.canvas(sid).data.min() == 1.0))
service.confirm(sid)
print("confirmed; edits so far:", service.state(sid)["edit_count"])

# edit 2: try a boulder, dislike it, revert
mask2 = np.zeros((64, 64), dtype=np.uint8)
mask2[36:60, 10:34] = 1
rng = np.random.default_rng(7)
ref = RasterImage(rng.random((16, 16, 3)) * 0.4)
req2 = EditRequest(
    mask=BinaryMask(mask2),
    sketch=BinaryMask(np.zeros((64, 64), dtype=np.uint8)),
    reference=ref,
    prompt="a dark boulder",
    seed=2,
)
before = service.canvas(sid).data.copy()
service.submit_edit(sid, req2)
service.reject(sid)
print("rejected; canvas unchanged:", bool(np.array_equal(service.canvas(sid).data, before)))

# edit 2 again with a different seed, keep it this time
req2.seed = 5
service.submit_edit(sid, req2)
service.confirm(sid)

write_image_png(service.canvas(sid), OUT / "05_final_canvas.png")

# the persisted log rebuilds the canvas bit-for-bit
replayed = service.replay(sid)
print("replay of confirmed log bit-exact:",
      bool(np.array_equal(replayed.data, service.canvas(sid).data)))
print(f"canvas written to {OUT / '05_final_canvas.png'}")
