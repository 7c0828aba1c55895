"""Published reference results for the nursing-handover extraction benchmark.

Word-level confusion counts (tp, fp, fn) per form subclass for the
benchmark test split, the per-class metrics reported alongside them, and
the macro totals. The three FUTURE CARE subclass metric rows in the
published table are internally inconsistent with their own counts (they
repeat the MEDICATION values), so they are kept out of REFERENCE_METRICS.
"""

NA = "N.A."

# label -> (tp, fp, fn); labels carry their main-category prefix.
REFERENCE_COUNTS = {
    "PATIENT INTRODUCTION/Given Names/ Initials": (99, 1, 1),
    "PATIENT INTRODUCTION/Last Name": (100, 0, 1),
    "PATIENT INTRODUCTION/Age in Years": (280, 32, 1),
    "PATIENT INTRODUCTION/Gender": (62, 0, 116),
    "PATIENT INTRODUCTION/Current Room": (100, 0, 0),
    "PATIENT INTRODUCTION/Current Bed": (190, 6, 8),
    "PATIENT INTRODUCTION/Under Dr: Given Names/ Initials": (0, 0, 53),
    "PATIENT INTRODUCTION/Under Dr: Last Name": (128, 59, 0),
    "PATIENT INTRODUCTION/Admission Reason/ Diagnosis": (146, 341, 7),
    "PATIENT INTRODUCTION/Allergy": (18, 1, 20),
    "PATIENT INTRODUCTION/Chronic Condition": (4, 14, 69),
    "PATIENT INTRODUCTION/Disease/ Problem History": (5, 110, 201),
    "PATIENT INTRODUCTION/Care Plan": (2, 15, 0),
    "MY SHIFT/Status": (234, 123, 51),
    "MY SHIFT/Contraption": (7, 172, 36),
    "MY SHIFT/Input/ Diet": (106, 33, 1),
    "MY SHIFT/Output/ Diuresis/ Bowel Movement": (26, 32, 24),
    "MY SHIFT/Wounds/ Skin": (20, 34, 5),
    "MY SHIFT/Activities of Daily Living": (262, 52, 33),
    "MY SHIFT/Risk Management": (0, 4, 40),
    "MY SHIFT/Other Observation": (62, 156, 126),
    "APPOINTMENTS/Status": (19, 147, 60),
    "APPOINTMENTS/Description": (91, 44, 222),
    "APPOINTMENTS/Clinician: Given Names/ Initials": (0, 0, 1),
    "APPOINTMENTS/Clinician: Last name": (0, 1, 1),
    "APPOINTMENTS/Date and Time: Day": (14, 22, 20),
    "APPOINTMENTS/Date and Time: Time": (17, 12, 22),
    "APPOINTMENTS/Date and Time: City": (0, 1, 0),
    "APPOINTMENTS/Date and Time: Ward": (2, 0, 3),
    "MEDICATION/Medicine": (120, 65, 176),
    "MEDICATION/Dosage": (8, 18, 44),
    "MEDICATION/Status": (10, 12, 135),
    "FUTURE CARE/Alert/ Warning/ Abnormal Result": (8, 8, 20),
    "FUTURE CARE/Goal/ Task To Be Completed/ Expected Outcome": (19, 279, 84),
    "FUTURE CARE/Discharge/ Transfer Plan": (61, 32, 60),
    NA: (2090, 370, 562),
}

# label -> (precision, recall, f1) as published; all within 5e-4 of the
# values recomputed from REFERENCE_COUNTS.
REFERENCE_METRICS = {
    "PATIENT INTRODUCTION/Given Names/ Initials": (0.99, 0.99, 0.99),
    "PATIENT INTRODUCTION/Last Name": (1.0, 0.9901, 0.995),
    "PATIENT INTRODUCTION/Age in Years": (0.8974, 0.9964, 0.9444),
    "PATIENT INTRODUCTION/Gender": (1.0, 0.3483, 0.5167),
    "PATIENT INTRODUCTION/Current Room": (1.0, 1.0, 1.0),
    "PATIENT INTRODUCTION/Current Bed": (0.9694, 0.9596, 0.9645),
    "PATIENT INTRODUCTION/Under Dr: Given Names/ Initials": (0.0, 0.0, 0.0),
    "PATIENT INTRODUCTION/Under Dr: Last Name": (0.6845, 1.0, 0.8127),
    "PATIENT INTRODUCTION/Admission Reason/ Diagnosis": (0.2998, 0.9542, 0.4562),
    "PATIENT INTRODUCTION/Allergy": (0.9474, 0.4737, 0.6316),
    "PATIENT INTRODUCTION/Chronic Condition": (0.2222, 0.0548, 0.0879),
    "PATIENT INTRODUCTION/Disease/ Problem History": (0.0435, 0.0243, 0.0312),
    "PATIENT INTRODUCTION/Care Plan": (0.1174, 1.0, 0.2105),
    "MY SHIFT/Status": (0.6555, 0.8211, 0.729),
    "MY SHIFT/Contraption": (0.0391, 0.1628, 0.0631),
    "MY SHIFT/Input/ Diet": (0.7626, 0.9907, 0.8618),
    "MY SHIFT/Output/ Diuresis/ Bowel Movement": (0.4483, 0.52, 0.4815),
    "MY SHIFT/Wounds/ Skin": (0.3704, 0.8, 0.5063),
    "MY SHIFT/Activities of Daily Living": (0.8344, 0.8881, 0.8604),
    "MY SHIFT/Risk Management": (0.0, 0.0, 0.0),
    "MY SHIFT/Other Observation": (0.2844, 0.3298, 0.3054),
    "APPOINTMENTS/Status": (0.1145, 0.2405, 0.1551),
    "APPOINTMENTS/Description": (0.6741, 0.2907, 0.4062),
    "APPOINTMENTS/Clinician: Given Names/ Initials": (0.0, 0.0, 0.0),
    "APPOINTMENTS/Clinician: Last name": (0.0, 0.0, 0.0),
    "APPOINTMENTS/Date and Time: Day": (0.3889, 0.4118, 0.4),
    "APPOINTMENTS/Date and Time: Time": (0.5862, 0.4359, 0.5),
    "APPOINTMENTS/Date and Time: City": (0.0, 0.0, 0.0),
    "APPOINTMENTS/Date and Time: Ward": (1.0, 0.4, 0.5714),
    "MEDICATION/Medicine": (0.6486, 0.4054, 0.499),
    "MEDICATION/Dosage": (0.3077, 0.1538, 0.2051),
    "MEDICATION/Status": (0.4545, 0.06897, 0.1198),
    NA: (0.8496, 0.7881, 0.8177),
}

# main category -> (precision, recall, f1) pooled over its subclasses.
REFERENCE_CATEGORY_METRICS = {
    "PATIENT INTRODUCTION": (0.662, 0.7039, 0.6823),
    "MY SHIFT": (0.542, 0.6941, 0.6087),
    "APPOINTMENTS": (0.3865, 0.303, 0.3397),
    "MEDICATION": (0.5923, 0.2799, 0.3802),
    "FUTURE CARE": (0.2162, 0.3492, 0.2671),
    NA: (0.8496, 0.7881, 0.8177),
}

# benchmark leaderboard macro (precision, recall, f1)
REFERENCE_TOTALS = {
    "fine-tuned-encoder": (0.485, 0.477, 0.438),
    "transfer-crf": (0.498, 0.419, 0.416),
    "crf": (0.435, 0.233, 0.246),
    "random": (0.018, 0.028, 0.019),
    "majority": (0.000, 0.029, 0.001),
}


def reference_scheme_labels() -> tuple[str, ...]:
    return (NA, *(name for name in REFERENCE_COUNTS if name != NA))
