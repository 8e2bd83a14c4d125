"""relay-shaper: transceiver design and link simulation for multi-hop AF MIMO relays."""

__version__ = "0.1.0"
