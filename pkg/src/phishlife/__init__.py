"""Phishing-domain lifecycle toolkit.

Ingests blocklist feeds, classifies domains as maliciously registered vs.
compromised, monitors DNS records across vantage points, and computes
registration/detection/deregistration lifecycle statistics.
"""

__version__ = "0.1.0"
