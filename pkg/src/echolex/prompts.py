"""Versioned prompt texts for the captioning client.

Initial prompts are keyed by prompt kind (one per notes-bearing source);
retry prompts are keyed by the issue kind that triggered the re-caption.
"""

PROMPT_VERSION = 1

INITIAL_PROMPTS = {
    "inaturalist": (
        "Write one short caption describing only the audible content of a "
        "wildlife recording. The primary species is {species}. Keep behavior "
        "and context that can be heard; drop anything inaudible, especially "
        "place names and coordinates. Recordist notes: {notes}"
    ),
    "watkins": (
        "Summarize these marine mammal recording notes as one short audio "
        "caption. The primary species is {species}. Mention the species and "
        "audible signal characteristics only; never include locations, dates, "
        "tape numbers, or equipment details. Notes: {notes}"
    ),
}

RETRY_PROMPTS = {
    "location_leak": (
        "Rewrite this caption for a recording of {species} so it keeps all "
        "audible content but contains no place names, landmarks, or "
        "coordinates: {caption}"
    ),
    "missing_species": (
        "Rewrite this caption so it explicitly names the species {species} "
        "while keeping the described sounds unchanged: {caption}"
    ),
    "empty_output": (
        "Write one short caption for a recording of {species}, describing "
        "only what can be heard. Recordist notes: {notes}"
    ),
    "client_error": (
        "Write one short caption for a recording of {species}, describing "
        "only what can be heard. Recordist notes: {notes}"
    ),
}

# Specific multi-word place names and landmarks for the rule-based location
# detector. Entries are matched case-insensitively as whole phrases. Bare
# region words (e.g. "California") are deliberately absent: they collide with
# species common names such as California Condor.
GAZETTEER = (
    "Golden Gate Park",
    "Yellowstone National Park",
    "Yosemite National Park",
    "Central Park",
    "Everglades National Park",
    "Great Barrier Reef",
    "Monterey Bay",
    "Cape Cod",
    "Lake Tahoe",
    "Mount Rainier",
    "Amazon Rainforest",
    "Serengeti National Park",
    "Kruger National Park",
    "Galapagos Islands",
    "Point Reyes",
    "Big Sur",
    "Woods Hole",
    "Hudson Bay",
    "Baja California",
    "Gulf of Maine",
)
