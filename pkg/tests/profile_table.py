"""Certificate profile table, transcribed by hand for the tests."""

from wpki import profiles

# Transcribed by hand from the published profile table; kept separate from the
# library's own table so that drift in either one fails here.
#   field                          generation process
MATRIX = [
    ("version",                      "m", "m"),
    ("serial_number",                "m", "m"),
    ("signature",                    "m", "m"),
    ("issuer",                       "m", "m"),
    ("validity",                     "m", "m"),
    ("subject",                      "m", "m"),
    ("subject_public_key_info",      "m", "m"),
    ("issuer_unique_identifier",     "x", "x"),
    ("subject_unique_identifier",    "x", "x"),
    ("authority_key_id",             "m", "o"),
    ("subject_key_id",               "m", "o"),
    ("key_usage",                    "m", "m"),
    ("private_key_usage_period",     "x", "x"),
    ("certificate_policy",           "m", "m"),
    ("policy_mapping",               "-", "-"),
    ("subject_alt_names",            "m", "m"),
    ("issuer_alt_names",             "o", "m"),
    ("subject_directory_attributes", "x", "x"),
    ("basic_constraints",            "x", "x"),
    ("name_constraints",             "-", "-"),
    ("policy_constraints",           "-", "-"),
    ("extended_key_usage",           "o", "m"),
    ("crl_distribution_points",      "m", "o"),
    ("domain_information",           "o", "o"),
    ("authority_info_access",        "m", "o"),
]

EXPECTED_RULE = {
    # marker -> (violation when absent, violation when present)
    "m": (profiles.MISSING_MANDATORY, None),
    "o": (None, None),
    "x": (None, profiles.FORBIDDEN_PRESENT),
    "-": (None, profiles.UNDEFINED_PRESENT),
}


CHECKERS = {"generation": profiles.check_generation, "process": profiles.check_process}


def mandatory(mode):
    col = 1 if mode == "generation" else 2
    return {row[0] for row in MATRIX if row[col] == "m"}


def check_cell(row, mode, present):
    """Probe one cell: every other field is fine, the row under test decides.

    Returns (ok, detail) so callers can report which cell drifted.
    """
    field, gen, proc = row
    marker = gen if mode == "generation" else proc
    fields = mandatory(mode) - {field}
    if present:
        fields.add(field)
    report = CHECKERS[mode](fields)
    expected = EXPECTED_RULE[marker][1 if present else 0]
    found = {v.rule for v in report.violations if v.field == field}
    ok = found == ({expected} if expected else set()) and bool(report) == (expected is None)
    return ok, f"{field}/{mode}/{'present' if present else 'absent'}: expected {expected}, got {found}"
