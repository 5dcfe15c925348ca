"""
serocontact: age-dependent transmission rates and R0 from serological and social contact data.
"""

__version__ = "0.1.0"
