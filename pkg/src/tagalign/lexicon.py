"""Built-in topic library for synthetic text-attributed graphs.

Topic names double as zero-shot label strings, so no name may appear in any
lexicon (the alignment text must never leak a label).
"""

from __future__ import annotations

TOPICS: list[tuple[str, list[str]]] = [
    ("automotive", ["cars", "wheels", "engines", "trucks", "tires", "brakes", "fuel", "garage",
                    "motors", "highway", "drivers", "sedans", "pistons", "clutch", "exhaust", "bumpers",
                    "gearbox", "mechanics", "ignition", "radiators", "chassis", "headlights", "axles", "minivans"]),
    ("cooking", ["recipes", "ovens", "flour", "spices", "kitchens", "baking", "sauces", "noodles",
                 "grills", "soups", "knives", "pastry", "skillets", "broth", "dough", "marinades",
                 "chefs", "ladles", "garlic", "roasting", "simmering", "butter", "stews", "whisks"]),
    ("astronomy", ["stars", "planets", "telescopes", "galaxies", "comets", "orbits", "nebulae", "moons",
                   "meteors", "rockets", "eclipses", "quasars", "asteroids", "pulsars", "supernovae", "observatories",
                   "constellations", "cosmos", "satellites", "redshift", "sunspots", "exoplanets", "parallax", "zodiac"]),
    ("gardening", ["seeds", "soil", "roses", "shovels", "compost", "tulips", "hedges", "weeds",
                   "fertilizer", "greenhouses", "ferns", "sprouts", "mulch", "pruning", "trowels", "orchids",
                   "seedlings", "watering", "bulbs", "lawns", "shrubs", "daisies", "rakes", "flowerbeds"]),
    ("music", ["guitars", "melodies", "drums", "pianos", "concerts", "chords", "violins", "lyrics",
               "albums", "rhythms", "singers", "tempo", "harmony", "orchestras", "trumpets", "ballads",
               "choirs", "symphonies", "bassists", "cellos", "octaves", "songwriters", "saxophones", "encores"]),
    ("finance", ["stocks", "bonds", "dividends", "loans", "banks", "budgets", "investors", "markets",
                 "payroll", "savings", "mortgages", "equity", "portfolios", "interest", "credit", "taxes",
                 "accounting", "brokers", "inflation", "auditors", "pensions", "currencies", "ledgers", "hedging"]),
    ("medicine", ["doctors", "vaccines", "surgery", "patients", "clinics", "diagnosis", "nurses", "therapy",
                  "symptoms", "hospitals", "pills", "prescriptions", "antibiotics", "stethoscopes", "infections",
                  "pharmacies", "surgeons", "bandages", "allergies", "dosage", "x-rays", "paramedics", "fevers",
                  "syringes"]),
    ("sports", ["football", "tennis", "athletes", "stadiums", "coaches", "referees", "marathons", "goals",
                "trophies", "racquets", "swimmers", "leagues", "basketball", "sprinters", "tournaments", "jerseys",
                "umpires", "cycling", "hockey", "medals", "playoffs", "gymnasts", "scoreboards", "volleyball"]),
    ("computing", ["software", "compilers", "servers", "databases", "algorithms", "keyboards", "processors",
                   "networks", "kernels", "laptops", "debugging", "bytes", "firmware", "caches", "routers",
                   "programmers", "terminals", "encryption", "browsers", "motherboards", "threads", "scripts",
                   "bandwidth", "pixels"]),
    ("fashion", ["dresses", "jackets", "fabrics", "boutiques", "sneakers", "jewelry", "runway", "scarves",
                 "tailors", "denim", "handbags", "hats", "silk", "designers", "necklaces", "sandals",
                 "blouses", "models", "wardrobes", "cashmere", "earrings", "hemlines", "knitwear", "tuxedos"]),
]

# Connector words used to glue phrases into sentences; all are stop words.
CONNECTORS = ["and", "with", "plus", "also"]

STOP_WORDS = frozenset(
    CONNECTORS
    + ["a", "an", "the", "of", "or", "to", "in", "on", "for", "is", "are", "this",
       "that", "it", "its", "node", "neighbors", "mainly", "about", "common", "themes",
       "none"]
)


def topic_names(num_topics: int) -> list[str]:
    if not 1 <= num_topics <= len(TOPICS):
        raise ValueError(f"num_topics must be in 1..{len(TOPICS)}, got {num_topics}")
    return [name for name, _ in TOPICS[:num_topics]]


def topic_lexicons(num_topics: int) -> list[list[str]]:
    if not 1 <= num_topics <= len(TOPICS):
        raise ValueError(f"num_topics must be in 1..{len(TOPICS)}, got {num_topics}")
    return [list(words) for _, words in TOPICS[:num_topics]]
