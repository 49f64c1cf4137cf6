"""Fixed page geometry for the synthetic corpus.

One image centered on a square page with five text boxes: one fully
inside the image and one beyond each side, all separated by margins far
larger than the default dilation so the merge stage leaves them alone
and the association stage picks exactly these five.
"""

PAGE_SIDE = 1000

IMAGE_BOX = (400, 400, 600, 600)

# slot order fixes text id suffixes; names describe the planted relation
SLOT_BOXES = (
    ("overlap", (450, 470, 550, 530)),
    ("left", (100, 450, 350, 550)),
    ("right", (650, 450, 900, 550)),
    ("top", (450, 100, 550, 350)),
    ("bottom", (450, 650, 550, 900)),
)
