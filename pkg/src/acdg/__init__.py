"""Energy-stable IPDG solver for the Allen-Cahn equation."""
