"""Shared fixture data: hand-derived expectations recorded before the
corresponding code paths were written."""

from pathlib import Path

DATA_DIR = Path(__file__).parent / "data"

# Hand labels for labeler_fixture.jsonl, derived by applying the keyword +
# negation rules on paper. Order: nodule, opacity, pleural_effusion,
# emphysema, inflammation, calcification.
LABEL_FIXTURE_EXPECTED = {
    "p01": [1, 0, 0, 0, 0, 0],
    "p02": [1, 1, 0, 0, 0, 0],
    "p03": [1, 1, 0, 0, 0, 0],
    "p04": [0, 1, 0, 0, 0, 0],
    "p05": [0, 1, 0, 0, 0, 0],
    "p06": [0, 1, 0, 0, 0, 0],
    "p07": [0, 1, 0, 0, 0, 0],
    "p08": [0, 1, 0, 0, 0, 0],
    "p09": [0, 1, 0, 0, 0, 0],
    "p10": [0, 1, 0, 0, 0, 0],
    "p11": [0, 1, 0, 0, 0, 0],
    "p12": [0, 1, 0, 0, 0, 0],
    "p13": [0, 1, 0, 0, 0, 0],
    "p14": [0, 1, 0, 0, 0, 0],
    "p15": [0, 0, 1, 0, 0, 0],
    "p16": [0, 0, 1, 1, 0, 0],
    "p17": [0, 0, 0, 0, 1, 0],
    "p18": [0, 0, 0, 0, 1, 0],
    "p19": [0, 0, 0, 0, 0, 1],
    "p20": [1, 0, 0, 0, 0, 1],
    "n01": [0, 0, 0, 1, 0, 0],
    "n02": [0, 1, 0, 0, 0, 0],
    "n03": [0, 0, 0, 0, 0, 0],
    "n04": [0, 0, 0, 0, 0, 0],
    "n05": [0, 0, 0, 0, 0, 0],
    "n06": [0, 0, 0, 0, 0, 0],
    "n07": [1, 0, 0, 0, 0, 0],
    "n08": [0, 0, 0, 0, 0, 0],
    "n09": [0, 1, 0, 0, 0, 0],
    "n10": [0, 0, 0, 0, 0, 0],
}

# Ids whose text contains at least one negated keyword occurrence.
NEGATED_FIXTURE_IDS = [f"n{i:02d}" for i in range(1, 11)]

# Batch fixture for positive-set construction: 12 reports with 3 healthy
# (both health phrases represented), 2 byte-identical abnormal reports, and
# a near-duplicate pair differing in one size token.
POSITIVE_SET_BATCH = [
    ("b00", "Both lungs show no obvious abnormality."),
    ("b01", "Nodule in the right upper lobe, 5mm in size."),
    ("b02", "Heart and lungs show no active lesion."),
    ("b03", "Pleural effusion on the left with passive atelectasis."),
    ("b04", "Calcified granuloma in the left lower lobe."),
    ("b05", "Calcified granuloma in the left lower lobe."),
    ("b06", "The scanned lungs show no obvious abnormality throughout."),
    ("b07", "Nodule in the right upper lobe, 6mm in size."),
    ("b08", "Emphysema with scattered bullae."),
    ("b09", "Patchy opacity at the right base."),
    ("b10", "Interstitial pattern consistent with fibrosis."),
    ("b11", "Pneumonia in the lingula."),
]

# Hand-derived positive sets: healthy reports (0, 2, 6) are mutually
# positive; the byte-identical abnormal pair (4, 5) is mutually positive;
# the 5mm/6mm near-duplicates (1, 7) are NOT semantically matched.
POSITIVE_SET_EXPECTED = {
    0: (0, 2, 6),
    1: (1,),
    2: (0, 2, 6),
    3: (3,),
    4: (4, 5),
    5: (4, 5),
    6: (0, 2, 6),
    7: (7,),
    8: (8,),
    9: (9,),
    10: (10,),
    11: (11,),
}
