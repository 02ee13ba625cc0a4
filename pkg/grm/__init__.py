"""GRM desk-scale tracker package"""

__version__ = "0.1.0"
